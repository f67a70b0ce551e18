#include "tutor/synthgen.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "tutor/csv.hpp"
#include "tutor/encoding.hpp"
#include "tutor/errors.hpp"
#include "tutor/rng.hpp"

namespace tutor {
namespace {

/// Byte string of a feature row with -0.0 normalized, for exact-equality
/// collision lookups.
std::string row_key(const Eigen::MatrixXd& rows, Eigen::Index r) {
  std::string key(static_cast<std::size_t>(rows.cols()) * sizeof(double), '\0');
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    const double v = rows(r, c) == 0.0 ? 0.0 : rows(r, c);
    std::memcpy(key.data() + static_cast<std::size_t>(c) * sizeof(double), &v,
                sizeof(double));
  }
  return key;
}

struct FilteredRows {
  Eigen::MatrixXd rows;
  std::vector<RejectionTally> tallies;
  long long draws = 0;
  long long collisions = 0;
  bool exhausted = false;
};

/// Shared draw-decode-filter loop. `forbidden` (when present) holds byte keys
/// of real rows that must not appear verbatim.
FilteredRows filtered_generation(
    const DensityModel& model,
    const std::vector<IntegrityClassifier>& classifiers, int count,
    std::uint64_t seed,
    const std::unordered_set<std::string>* forbidden) {
  if (count < 1) throw ConfigError("synthetic count must be >= 1");
  const FeatureSchema& schema = model.context.schema;
  for (const IntegrityClassifier& c : classifiers) {
    const int idx = schema.feature_index(c.target_feature);
    if (schema.features[static_cast<std::size_t>(idx)].kind !=
        FeatureKind::Categorical) {
      throw ConfigError("integrity classifier targets non-categorical feature " +
                        c.target_feature);
    }
  }

  FilteredRows out;
  out.rows.resize(count, schema.n_features());
  for (const IntegrityClassifier& c : classifiers) {
    out.tallies.push_back({c.target_feature, 0});
  }

  const long long budget = 10LL * count;
  int retained = 0;
  long long chunk_index = 0;
  while (retained < count && out.draws < budget) {
    const long long chunk = std::min<long long>(count - retained, budget - out.draws);
    const EncodedMatrix sampled =
        sample(model, static_cast<int>(chunk),
               derive_seed(seed, "generate", static_cast<std::uint64_t>(chunk_index)));
    ++chunk_index;
    out.draws += chunk;
    const Dataset decoded = decode(sampled);

    std::vector<bool> keep(static_cast<std::size_t>(chunk), true);
    for (std::size_t ci = 0; ci < classifiers.size(); ++ci) {
      const IntegrityClassifier& c = classifiers[ci];
      const int idx = schema.feature_index(c.target_feature);
      const Eigen::VectorXi pred =
          predict(c.model, integrity_view(decoded, idx));
      for (Eigen::Index r = 0; r < decoded.rows.rows(); ++r) {
        if (pred[r] != static_cast<int>(decoded.rows(r, idx))) {
          keep[static_cast<std::size_t>(r)] = false;
          ++out.tallies[ci].rejections;
        }
      }
    }
    for (Eigen::Index r = 0; r < decoded.rows.rows(); ++r) {
      if (!keep[static_cast<std::size_t>(r)]) continue;
      if (forbidden != nullptr &&
          forbidden->count(row_key(decoded.rows, r)) > 0) {
        ++out.collisions;
        continue;
      }
      if (retained < count) out.rows.row(retained++) = decoded.rows.row(r);
    }
  }
  out.rows.conservativeResize(retained, Eigen::NoChange);
  out.exhausted = retained < count;
  return out;
}

}  // namespace

std::vector<bool> verify_rows(const Dataset& candidate,
                              const std::vector<IntegrityClassifier>& classifiers) {
  std::vector<bool> ok(static_cast<std::size_t>(candidate.n_rows()), true);
  for (const IntegrityClassifier& c : classifiers) {
    const int idx = candidate.schema.feature_index(c.target_feature);
    const Eigen::VectorXi pred = predict(c.model, integrity_view(candidate, idx));
    for (Eigen::Index r = 0; r < candidate.rows.rows(); ++r) {
      if (pred[r] != static_cast<int>(candidate.rows(r, idx))) {
        ok[static_cast<std::size_t>(r)] = false;
      }
    }
  }
  return ok;
}

SyntheticBatch generate_verified(const DensityModel& model,
                                 const std::vector<IntegrityClassifier>& classifiers,
                                 const Forest& kb, int count,
                                 std::uint64_t seed) {
  if (kb.schema_fingerprint != schema_fingerprint(model.context.schema)) {
    throw ConfigError("knowledge base was trained on a different schema");
  }
  FilteredRows produced =
      filtered_generation(model, classifiers, count, seed, nullptr);

  SyntheticBatch batch;
  batch.method = model.method;
  batch.requested_count = count;
  batch.retained_count = static_cast<int>(produced.rows.rows());
  batch.rejection_log = std::move(produced.tallies);
  batch.total_draws = produced.draws;
  batch.retry_budget_exhausted = produced.exhausted;

  batch.data.schema = model.context.schema;
  batch.data.role = SplitRole::Synthetic;
  batch.data.rows = std::move(produced.rows);
  batch.data.labels = predict(kb, batch.data.rows);
  batch.data.validate();
  return batch;
}

PrivacyExport privacy_export(const DensityModel& model,
                             const std::vector<IntegrityClassifier>& classifiers,
                             const Labeler& labeler, const Dataset& real_train,
                             int count, std::uint64_t seed,
                             const std::string& path) {
  if (!labeler.predict) throw ConfigError("privacy export needs a labeler");
  if (schema_fingerprint(real_train.schema) !=
      schema_fingerprint(model.context.schema)) {
    throw ConfigError("real training data disagrees with the density schema");
  }

  std::unordered_set<std::string> forbidden;
  forbidden.reserve(static_cast<std::size_t>(real_train.n_rows()));
  for (Eigen::Index r = 0; r < real_train.rows.rows(); ++r) {
    forbidden.insert(row_key(real_train.rows, r));
  }

  FilteredRows produced =
      filtered_generation(model, classifiers, count, seed, &forbidden);

  PrivacyExport out;
  out.real_row_collisions = produced.collisions;
  out.batch.method = model.method;
  out.batch.requested_count = count;
  out.batch.retained_count = static_cast<int>(produced.rows.rows());
  out.batch.rejection_log = std::move(produced.tallies);
  out.batch.total_draws = produced.draws;
  out.batch.retry_budget_exhausted = produced.exhausted;

  out.batch.data.schema = model.context.schema;
  out.batch.data.role = SplitRole::Synthetic;
  out.batch.data.rows = std::move(produced.rows);
  out.batch.data.labels = labeler.predict(out.batch.data);
  out.batch.data.validate();

  std::string stem = path;
  const std::string suffix = ".csv";
  if (stem.size() >= suffix.size() &&
      stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0) {
    stem.resize(stem.size() - suffix.size());
  }
  out.csv_path = path;
  out.schema_path = stem + "_schema.json";
  out.sidecar_path = stem + "_meta.json";

  write_csv(out.csv_path, out.batch.data);
  {
    std::ofstream schema_file(out.schema_path);
    if (!schema_file) throw Error("cannot open " + out.schema_path);
    schema_file << schema_to_json(out.batch.data.schema) << "\n";
  }
  nlohmann::json meta;
  meta["method"] = to_string(out.batch.method);
  meta["seed"] = seed;
  meta["labeler"] = labeler.identity;
  meta["requested_count"] = out.batch.requested_count;
  meta["retained_count"] = out.batch.retained_count;
  meta["total_draws"] = out.batch.total_draws;
  meta["retry_budget_exhausted"] = out.batch.retry_budget_exhausted;
  meta["real_row_collisions"] = out.real_row_collisions;
  nlohmann::json log = nlohmann::json::object();
  for (const RejectionTally& tally : out.batch.rejection_log) {
    log[tally.feature] = tally.rejections;
  }
  meta["rejection_log"] = log;
  std::ofstream sidecar(out.sidecar_path);
  if (!sidecar) throw Error("cannot open " + out.sidecar_path);
  sidecar << meta.dump(2) << "\n";
  return out;
}

}  // namespace tutor
