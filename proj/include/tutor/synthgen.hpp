#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tutor/density.hpp"
#include "tutor/forest.hpp"
#include "tutor/schema.hpp"

namespace tutor {

struct RejectionTally {
    std::string feature;
    long long rejections = 0;
};

/// Labeled synthetic dataset plus bookkeeping about how it was produced.
struct SyntheticBatch {
    Dataset data;  // role Synthetic, labels from the knowledge-base forest
    DensityMethod method = DensityMethod::Mnd;
    int requested_count = 0;
    int retained_count = 0;
    std::vector<RejectionTally> rejection_log;  // one tally per classifier
    long long total_draws = 0;
    bool retry_budget_exhausted = false;
};

/// True per row when every integrity classifier agrees with the row's
/// categorical levels. An empty classifier list accepts everything.
std::vector<bool> verify_rows(const Dataset& candidate,
                              const std::vector<IntegrityClassifier>& classifiers);

/// Samples from the density in chunks, decodes, drops rows whose categorical
/// levels contradict the integrity classifiers, and repeats until `count`
/// rows are retained or 10x count rows have been drawn. Retained rows are
/// labeled by the knowledge-base forest. On budget exhaustion the partial
/// batch is returned with retry_budget_exhausted set.
SyntheticBatch generate_verified(const DensityModel& model,
                                 const std::vector<IntegrityClassifier>& classifiers,
                                 const Forest& kb, int count,
                                 std::uint64_t seed);

/// Whatever model labels the privacy export: a network wrapped with its
/// encoding step, or the knowledge-base forest directly.
struct Labeler {
    std::string identity;
    std::function<Eigen::VectorXi(const Dataset&)> predict;
};

struct PrivacyExport {
    SyntheticBatch batch;
    long long real_row_collisions = 0;
    std::string csv_path;
    std::string schema_path;
    std::string sidecar_path;
};

/// generate_verified plus two privacy rules: rows equal to a real training
/// row in every feature column are dropped and resampled (counting toward
/// the draw budget), and the result is written out as CSV + schema copy +
/// sidecar JSON {method, seed, rejection log, labeler identity, counts}.
/// `path` names the CSV; the companions get _schema.json / _meta.json.
PrivacyExport privacy_export(const DensityModel& model,
                             const std::vector<IntegrityClassifier>& classifiers,
                             const Labeler& labeler, const Dataset& real_train,
                             int count, std::uint64_t seed,
                             const std::string& path);

}  // namespace tutor
