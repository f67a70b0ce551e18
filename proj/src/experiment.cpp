#include "tutor/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "tutor/csv.hpp"
#include "tutor/dataset_ops.hpp"
#include "tutor/encoding.hpp"
#include "tutor/errors.hpp"
#include "tutor/pca.hpp"
#include "tutor/rng.hpp"
#include "tutor/serialize.hpp"

namespace fs = std::filesystem;

namespace tutor {
namespace {

using nlohmann::json;

/// Errors inside a stage are re-raised with the stage name attached, so a
/// failed run says where it died. Config errors pass through untouched.
template <typename F>
auto stage(const char* name, F&& body) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e.what());
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

void require_path(const std::string& path, const char* what) {
  require(!path.empty(), std::string(what) + " path missing from the config");
  require(fs::exists(path), std::string(what) + " path does not exist: " + path);
}

std::uint64_t fnv_bytes(std::uint64_t h, const void* p, std::size_t n) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t fnv_matrix(std::uint64_t h, const Eigen::MatrixXd& m) {
  const std::uint64_t dims[2] = {static_cast<std::uint64_t>(m.rows()),
                                 static_cast<std::uint64_t>(m.cols())};
  h = fnv_bytes(h, dims, sizeof(dims));
  return fnv_bytes(h, m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Class predictions with the same tie rule as evaluate: argmax, ties to the
/// lowest index.
Eigen::VectorXi hard_predictions(const MaskedNetwork& net, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd probs = forward(net, x);
  Eigen::VectorXi out(probs.rows());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    int best = 0;
    for (int c = 1; c < static_cast<int>(probs.cols()); ++c) {
      if (probs(r, c) > probs(r, best)) best = c;
    }
    out[r] = best;
  }
  return out;
}

/// Last fifth (at least one row) held out positionally; rows are i.i.d.
/// draws, so the split is unbiased.
TrainOutcome train_with_holdout(const MaskedNetwork& arch, const EncodedMatrix& enc,
                                const Eigen::VectorXi& labels,
                                const TrainConfig& cfg) {
  const int n = enc.n_rows();
  if (n < 2) throw Error("synthetic training set too small to hold out from");
  const int holdout = std::max(1, n / 5);
  const int fit = n - holdout;
  return train(arch, enc.values.topRows(fit), labels.head(fit),
               enc.values.bottomRows(holdout), labels.tail(holdout), cfg);
}

ForestGrid forest_grid_from_json(const json& j) {
  ForestGrid g;
  for (const json& c : j.at("criteria")) {
    g.criteria.push_back(split_criterion_from_string(c.get<std::string>()));
  }
  g.max_depths = j.at("max_depths").get<std::vector<int>>();
  g.tree_counts = j.at("tree_counts").get<std::vector<int>>();
  return g;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig cfg;
  try {
    cfg.seed = j.value("seed", cfg.seed);
    cfg.output_dir = j.value("output_dir", std::string());

    const json& data = j.at("data");
    cfg.schema_path = data.value("schema", std::string());
    cfg.csv_path = data.value("csv", std::string());
    cfg.train_csv = data.value("train_csv", std::string());
    cfg.validation_csv = data.value("validation_csv", std::string());
    cfg.test_csv = data.value("test_csv", std::string());
    if (data.contains("split")) {
      cfg.train_weight = data.at("split").at("train").get<double>();
      cfg.validation_weight = data.at("split").at("validation").get<double>();
      cfg.test_weight = data.at("split").at("test").get<double>();
    }

    if (j.contains("density")) {
      const json& d = j.at("density");
      if (d.contains("gmm_components")) {
        cfg.gmm_components = d.at("gmm_components").get<std::vector<int>>();
      }
      if (d.contains("gmm_shapes")) {
        cfg.gmm_shapes.clear();
        for (const json& s : d.at("gmm_shapes")) {
          cfg.gmm_shapes.push_back(
              covariance_shape_from_string(s.get<std::string>()));
        }
      }
      if (d.contains("kde_bandwidths")) {
        cfg.kde_bandwidths = d.at("kde_bandwidths").get<std::vector<double>>();
      }
    }
    if (j.contains("forest")) cfg.forest_grid = forest_grid_from_json(j.at("forest"));
    if (j.contains("fc_search")) {
      cfg.fc_hidden_layers =
          j.at("fc_search").at("hidden_layers").get<std::vector<std::vector<int>>>();
    }
    if (j.contains("training")) {
      const json& t = j.at("training");
      cfg.training.epochs = t.value("epochs", cfg.training.epochs);
      cfg.training.batch_size = t.value("batch_size", cfg.training.batch_size);
      cfg.training.learning_rate =
          t.value("learning_rate", cfg.training.learning_rate);
      cfg.training.patience = t.value("patience", cfg.training.patience);
    }
    cfg.synthetic_count = j.value("synthetic_count", cfg.synthetic_count);
    if (j.contains("growprune")) {
      const json& g = j.at("growprune");
      cfg.growprune_epochs_per_step =
          g.value("epochs_per_step", cfg.growprune_epochs_per_step);
      cfg.growth_ratio = g.value("growth_ratio", cfg.growth_ratio);
      if (g.contains("keep_ratios")) {
        cfg.prune_keep_ratios = g.at("keep_ratios").get<std::vector<double>>();
      }
      cfg.neuron_growth_noise_scale =
          g.value("noise_scale", cfg.neuron_growth_noise_scale);
      cfg.hidden_cap_multiple =
          g.value("hidden_cap_multiple", cfg.hidden_cap_multiple);
    }
    if (j.contains("compression_ratios")) {
      cfg.compression_ratios = j.at("compression_ratios").get<std::vector<double>>();
    }
    if (j.contains("pca_ratios")) {
      cfg.pca_ratios = j.at("pca_ratios").get<std::vector<double>>();
    }
    cfg.privacy_count = j.value("privacy_count", cfg.privacy_count);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }

  require(!cfg.output_dir.empty(), "output_dir missing from the config");
  require_path(cfg.schema_path, "schema");
  const bool single = !cfg.csv_path.empty();
  const bool triple = !cfg.train_csv.empty() || !cfg.validation_csv.empty() ||
                      !cfg.test_csv.empty();
  require(single != triple,
          "config needs either data.csv or the three split CSVs, not both");
  if (single) {
    require_path(cfg.csv_path, "csv");
    require(cfg.train_weight > 0 && cfg.validation_weight > 0 && cfg.test_weight > 0,
            "split weights must be positive");
  } else {
    require_path(cfg.train_csv, "train_csv");
    require_path(cfg.validation_csv, "validation_csv");
    require_path(cfg.test_csv, "test_csv");
    if (cfg.test_csv == cfg.validation_csv || cfg.test_csv == cfg.train_csv) {
      throw TestLeakage("test split aliases another split: " + cfg.test_csv);
    }
  }

  require(!cfg.gmm_components.empty(), "gmm_components must be nonempty");
  for (int c : cfg.gmm_components) require(c >= 1, "gmm component counts must be >= 1");
  require(!cfg.gmm_shapes.empty(), "gmm_shapes must be nonempty");
  require(!cfg.kde_bandwidths.empty(), "kde_bandwidths must be nonempty");
  for (double h : cfg.kde_bandwidths) require(h > 0, "kde bandwidths must be positive");
  require(!cfg.forest_grid.criteria.empty() && !cfg.forest_grid.max_depths.empty() &&
              !cfg.forest_grid.tree_counts.empty(),
          "forest grid must be nonempty");
  require(!cfg.fc_hidden_layers.empty(), "fc_search.hidden_layers must be nonempty");
  for (const std::vector<int>& stack : cfg.fc_hidden_layers) {
    require(!stack.empty(), "an FC candidate needs at least one hidden layer");
    for (int w : stack) require(w >= 1, "FC hidden widths must be >= 1");
  }
  require(cfg.training.epochs >= 1, "training epochs must be >= 1");
  require(cfg.training.batch_size >= 1, "batch size must be >= 1");
  require(cfg.synthetic_count >= 1, "synthetic_count must be >= 1");
  require(cfg.privacy_count >= 1, "privacy_count must be >= 1");
  require(cfg.growprune_epochs_per_step >= 1, "epochs_per_step must be >= 1");
  require(cfg.growth_ratio > 0 && cfg.growth_ratio <= 1,
          "growth_ratio must be in (0,1]");
  require(!cfg.prune_keep_ratios.empty(), "keep_ratios must be nonempty");
  for (double r : cfg.prune_keep_ratios) {
    require(r > 0 && r <= 1, "keep ratios must be in (0,1]");
  }
  require(!cfg.compression_ratios.empty(), "compression_ratios must be nonempty");
  for (double r : cfg.compression_ratios) {
    require(r >= 1, "compression ratios must be >= 1");
  }
  require(!cfg.pca_ratios.empty(), "pca_ratios must be nonempty");
  for (double r : cfg.pca_ratios) require(r >= 1, "pca ratios must be >= 1");
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  try {
    return config_from_json(load_json(path));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    // An unreadable or unparseable config file is a config error too.
    throw ConfigError(e.what());
  }
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  json data;
  data["schema"] = cfg.schema_path;
  if (!cfg.csv_path.empty()) {
    data["csv"] = cfg.csv_path;
    data["split"] = {{"train", cfg.train_weight},
                     {"validation", cfg.validation_weight},
                     {"test", cfg.test_weight}};
  } else {
    data["train_csv"] = cfg.train_csv;
    data["validation_csv"] = cfg.validation_csv;
    data["test_csv"] = cfg.test_csv;
  }
  j["data"] = std::move(data);

  json shapes = json::array();
  for (CovarianceShape s : cfg.gmm_shapes) shapes.push_back(to_string(s));
  j["density"] = {{"gmm_components", cfg.gmm_components},
                  {"gmm_shapes", std::move(shapes)},
                  {"kde_bandwidths", cfg.kde_bandwidths}};
  json criteria = json::array();
  for (SplitCriterion c : cfg.forest_grid.criteria) criteria.push_back(to_string(c));
  j["forest"] = {{"criteria", std::move(criteria)},
                 {"max_depths", cfg.forest_grid.max_depths},
                 {"tree_counts", cfg.forest_grid.tree_counts}};
  j["fc_search"] = {{"hidden_layers", cfg.fc_hidden_layers}};
  j["training"] = {{"epochs", cfg.training.epochs},
                   {"batch_size", cfg.training.batch_size},
                   {"learning_rate", cfg.training.learning_rate},
                   {"patience", cfg.training.patience}};
  j["synthetic_count"] = cfg.synthetic_count;
  j["growprune"] = {{"epochs_per_step", cfg.growprune_epochs_per_step},
                    {"growth_ratio", cfg.growth_ratio},
                    {"keep_ratios", cfg.prune_keep_ratios},
                    {"noise_scale", cfg.neuron_growth_noise_scale},
                    {"hidden_cap_multiple", cfg.hidden_cap_multiple}};
  j["compression_ratios"] = cfg.compression_ratios;
  j["pca_ratios"] = cfg.pca_ratios;
  j["privacy_count"] = cfg.privacy_count;
  return j;
}

LoadedData load_splits(const ExperimentConfig& cfg) {
  return stage("load", [&] {
    const FeatureSchema schema = load_schema(cfg.schema_path);
    LoadedData data;
    if (!cfg.csv_path.empty()) {
      const Dataset all = load_csv(cfg.csv_path, schema, SplitRole::Train);
      auto parts = split_by_proportions(all, cfg.train_weight, cfg.validation_weight,
                                        cfg.test_weight, cfg.seed);
      data.train = std::move(parts[0]);
      data.validation = std::move(parts[1]);
      data.test = std::move(parts[2]);
    } else {
      data.train = load_csv(cfg.train_csv, schema, SplitRole::Train);
      data.validation = load_csv(cfg.validation_csv, schema, SplitRole::Validation);
      data.test = load_csv(cfg.test_csv, schema, SplitRole::Test);
    }
    data.train.validate();
    data.validation.validate();
    data.test.validate();
    return data;
  });
}

namespace {

struct FittedDensities {
  DensityModel mnd;
  DensityModel gmm;
  DensityModel kde;

  const DensityModel& of(DensityMethod m) const {
    switch (m) {
      case DensityMethod::Mnd: return mnd;
      case DensityMethod::Gmm: return gmm;
      default: return kde;
    }
  }
};

/// Content-addressed cache: the key covers the method, its grid, the seed,
/// the schema, and the exact encoded matrices. A hit loads the stored fit
/// (bit-exact round trip), so sweeps and reruns skip refitting.
template <typename FitFn>
DensityModel cached_density(const std::string& cache_dir, const std::string& tag,
                            std::uint64_t key, FitFn&& fit) {
  const std::string path = cache_dir + "/density-" + tag + "-" + hex64(key) + ".json";
  if (fs::exists(path)) {
    try {
      return density_from_json(load_json(path));
    } catch (const Error&) {
      // Corrupt or stale cache entry: fall through to a fresh fit.
    }
  }
  DensityModel model = fit();
  save_json(density_to_json(model), path);
  return model;
}

FittedDensities fit_densities(const ExperimentConfig& cfg, const EncodedMatrix& enc_train,
                              const EncodedMatrix& enc_val, const std::string& out_dir) {
  const std::string cache_dir = out_dir + "/cache";
  std::uint64_t base = fnv_bytes(1469598103934665603ULL, "density", 7);
  const std::uint64_t fp = schema_fingerprint(enc_train.schema);
  base = fnv_bytes(base, &fp, sizeof(fp));
  base = fnv_matrix(base, enc_train.values);
  base = fnv_matrix(base, enc_val.values);

  FittedDensities out;
  {
    const std::uint64_t key = fnv_bytes(base, "mnd", 3);
    out.mnd = cached_density(cache_dir, "mnd", key, [&] {
      return make_density(fit_mnd(enc_train), enc_train);
    });
  }
  {
    std::uint64_t key = fnv_bytes(base, "gmm", 3);
    key = fnv_bytes(key, cfg.gmm_components.data(),
                    cfg.gmm_components.size() * sizeof(int));
    for (CovarianceShape s : cfg.gmm_shapes) {
      key = fnv_bytes(key, to_string(s), std::string(to_string(s)).size());
    }
    const std::uint64_t seed = derive_seed(cfg.seed, "gmm-fit");
    key = fnv_bytes(key, &seed, sizeof(seed));
    out.gmm = cached_density(cache_dir, "gmm", key, [&] {
      return make_density(
          fit_gmm(enc_train, enc_val, cfg.gmm_components, cfg.gmm_shapes, seed),
          enc_train);
    });
  }
  {
    std::uint64_t key = fnv_bytes(base, "kde", 3);
    key = fnv_bytes(key, cfg.kde_bandwidths.data(),
                    cfg.kde_bandwidths.size() * sizeof(double));
    out.kde = cached_density(cache_dir, "kde", key, [&] {
      return make_density(fit_kde(enc_train, enc_val, cfg.kde_bandwidths), enc_train);
    });
  }
  save_json(density_to_json(out.mnd), out_dir + "/density_mnd.json");
  save_json(density_to_json(out.gmm), out_dir + "/density_gmm.json");
  save_json(density_to_json(out.kde), out_dir + "/density_kde.json");
  return out;
}

struct BaselineOutcome {
  MaskedNetwork model;
  std::vector<int> hidden;
  double validation_accuracy = 0.0;
};

/// DNN 1: plain FC search over the configured hidden stacks, best validation
/// accuracy wins, ties keep the earlier (smaller-first) candidate.
BaselineOutcome fc_baseline(const ExperimentConfig& cfg, const EncodedMatrix& enc_train,
                            const Eigen::VectorXi& y_train, const EncodedMatrix& enc_val,
                            const Eigen::VectorXi& y_val, int n_classes) {
  BaselineOutcome best;
  bool have = false;
  for (std::size_t i = 0; i < cfg.fc_hidden_layers.size(); ++i) {
    std::vector<int> dims;
    dims.push_back(enc_train.width());
    for (int w : cfg.fc_hidden_layers[i]) dims.push_back(w);
    dims.push_back(n_classes);
    const MaskedNetwork net =
        build_fc(dims, derive_seed(cfg.seed, "fc-init", static_cast<std::uint64_t>(i)));
    TrainConfig tc = cfg.training;
    tc.seed = derive_seed(cfg.seed, "fc-train", static_cast<std::uint64_t>(i));
    const TrainOutcome out =
        train(net, enc_train.values, y_train, enc_val.values, y_val, tc);
    if (!have || out.best_val_accuracy > best.validation_accuracy) {
      best.model = out.best;
      best.hidden = cfg.fc_hidden_layers[i];
      best.validation_accuracy = out.best_val_accuracy;
      have = true;
    }
  }
  return best;
}

json batch_bookkeeping(const SyntheticBatch& b) {
  json rej = json::array();
  for (const RejectionTally& t : b.rejection_log) {
    rej.push_back({{"feature", t.feature}, {"rejections", t.rejections}});
  }
  return json{{"method", to_string(b.method)},
              {"requested", b.requested_count},
              {"retained", b.retained_count},
              {"total_draws", b.total_draws},
              {"retry_budget_exhausted", b.retry_budget_exhausted},
              {"rejections", std::move(rej)}};
}

json model_report_to_json(const ModelReport& m, bool with_hidden) {
  json j{{"validation_accuracy", m.validation_accuracy},
         {"test_accuracy", m.metrics.accuracy},
         {"param_count", m.metrics.param_count},
         {"flops_per_inference", m.metrics.flops_per_inference}};
  if (with_hidden) j["hidden"] = m.hidden;
  return j;
}

void write_report_csv(const ExperimentReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "model,validation_accuracy,test_accuracy,param_count,flops_per_inference\n";
  auto row = [&](const char* name, double val, double test, long long params,
                 long long flops) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%lld,%lld\n", name, val, test,
                  params, flops);
    out << buf;
  };
  row("dnn1", r.dnn1.validation_accuracy, r.dnn1.metrics.accuracy,
      r.dnn1.metrics.param_count, r.dnn1.metrics.flops_per_inference);
  row("dnn2", r.dnn2.validation_accuracy, r.dnn2.metrics.accuracy,
      r.dnn2.metrics.param_count, r.dnn2.metrics.flops_per_inference);
  row("dnn3", r.dnn3.validation_accuracy, r.dnn3.metrics.accuracy,
      r.dnn3.metrics.param_count, r.dnn3.metrics.flops_per_inference);
  row("rf", 0.0, r.rf_test_accuracy, 0, 0);
  if (!out) throw Error("failed writing '" + path + "'");
}

}  // namespace

json report_to_json(const ExperimentReport& r) {
  json j;
  j["version"] = kSerializationVersion;
  j["kind"] = "experiment_report";
  j["config"] = r.config_echo;
  j["data"] = {{"train_rows", r.train_rows},
               {"validation_rows", r.validation_rows},
               {"test_rows", r.test_rows}};
  j["rf"] = {{"test_accuracy", r.rf_test_accuracy}};
  j["generation"] = r.generation;
  j["dnn1"] = model_report_to_json(r.dnn1, true);
  j["scheme_a"] = scheme_result_to_json(r.scheme_a);
  j["scheme_b"] = scheme_result_to_json(r.scheme_b);
  j["dnn2"] = scheme_result_to_json(r.dnn2);
  j["dnn3"] = model_report_to_json(r.dnn3, false);
  json trace = json::array();
  for (const TraceRow& row : r.trace) {
    trace.push_back({{"iteration", row.iteration},
                     {"op", row.op},
                     {"active_connections", row.active_connections},
                     {"hidden_neurons", row.hidden_neurons},
                     {"val_accuracy", row.val_accuracy}});
  }
  j["growprune_trace"] = std::move(trace);
  return j;
}

ExperimentReport run_pipeline(const ExperimentConfig& cfg, const LoadedData& data,
                              const std::string& out_dir, PipelineVerb verb) {
  const bool need_densities = verb == PipelineVerb::FitDensity ||
                              verb == PipelineVerb::Generate ||
                              verb >= PipelineVerb::Scheme;
  const bool need_forests = verb == PipelineVerb::TrainForest ||
                            verb == PipelineVerb::Generate ||
                            verb >= PipelineVerb::Scheme;
  const bool need_generate = verb == PipelineVerb::Generate ||
                             verb >= PipelineVerb::Scheme;
  const bool need_baseline = verb >= PipelineVerb::Baseline;
  const bool need_schemes = verb >= PipelineVerb::Scheme;
  const bool need_growprune = verb >= PipelineVerb::GrowPrune;
  const bool need_report = verb == PipelineVerb::Full;

  fs::create_directories(out_dir);
  fs::create_directories(out_dir + "/cache");

  ExperimentReport rep;
  rep.config_echo = config_to_json(cfg);
  rep.train_rows = data.train.n_rows();
  rep.validation_rows = data.validation.n_rows();
  rep.test_rows = data.test.n_rows();
  const int n_classes = static_cast<int>(data.train.schema.n_classes());

  write_csv(out_dir + "/train.csv", data.train);
  write_csv(out_dir + "/validation.csv", data.validation);
  write_csv(out_dir + "/test.csv", data.test);

  const EncodedMatrix enc_train = stage("encode", [&] { return encode(data.train, true); });
  const EncodedMatrix enc_val = stage("encode", [&] {
    return encode(data.validation, true, enc_train.standardizer);
  });

  FittedDensities densities;
  if (need_densities) {
    densities = stage("densities", [&] {
      return fit_densities(cfg, enc_train, enc_val, out_dir);
    });
  }

  Forest kb;
  std::vector<IntegrityClassifier> integrity;
  if (need_forests) {
    stage("forests", [&] {
      kb = train_forest(data.train, data.validation, cfg.forest_grid,
                        derive_seed(cfg.seed, "kb-forest"));
      integrity = train_integrity_classifiers(data.train, data.validation,
                                              cfg.forest_grid,
                                              derive_seed(cfg.seed, "integrity"));
      save_json(forest_to_json(kb), out_dir + "/kb_forest.json");
      dump_rules(kb, data.train.schema, out_dir + "/kb_rules.txt");
      for (const IntegrityClassifier& c : integrity) {
        save_json(forest_to_json(c.model),
                  out_dir + "/integrity_" + c.target_feature + ".json");
      }
      return 0;
    });
  }

  std::vector<SyntheticBatch> batches;
  if (need_generate) {
    stage("generate", [&] {
      rep.generation = json::array();
      for (DensityMethod m : {DensityMethod::Mnd, DensityMethod::Gmm, DensityMethod::Kde}) {
        SyntheticBatch b = generate_verified(
            densities.of(m), integrity, kb, cfg.synthetic_count,
            derive_seed(cfg.seed, std::string("generate-") + to_string(m)));
        write_csv(out_dir + "/synthetic_" + to_string(m) + ".csv", b.data);
        rep.generation.push_back(batch_bookkeeping(b));
        batches.push_back(std::move(b));
      }
      return 0;
    });
  }

  if (!need_baseline) return rep;
  const BaselineOutcome dnn1 = stage("baseline", [&] {
    return fc_baseline(cfg, enc_train, data.train.labels, enc_val,
                       data.validation.labels, n_classes);
  });
  rep.dnn1.hidden = dnn1.hidden;
  rep.dnn1.validation_accuracy = dnn1.validation_accuracy;
  rep.dnn1.metrics = measure(dnn1.model);  // test accuracy filled at the end
  rep.dnn1_model = dnn1.model;
  save_json(network_to_json(dnn1.model), out_dir + "/dnn1.json");

  if (!need_schemes) return rep;
  stage("schemes", [&] {
    std::vector<int> dims;
    dims.push_back(enc_train.width());
    for (int w : dnn1.hidden) dims.push_back(w);
    dims.push_back(n_classes);
    const MaskedNetwork arch = build_fc(dims, derive_seed(cfg.seed, "scheme-template"));
    TrainConfig tc = cfg.training;
    tc.seed = derive_seed(cfg.seed, "schemes");
    const CountedDataset test(data.test);
    rep.scheme_a = scheme_a(arch, data.train, data.validation, test, batches, tc);
    rep.scheme_b = scheme_b(arch, data.train, data.validation, test, batches, tc);
    rep.dnn2 = select_dnn2(rep.scheme_a, rep.scheme_b);
    save_json(scheme_result_to_json(rep.scheme_a), out_dir + "/scheme_a.json");
    save_json(scheme_result_to_json(rep.scheme_b), out_dir + "/scheme_b.json");
    save_json(scheme_result_to_json(rep.dnn2), out_dir + "/dnn2.json");
    save_json(network_to_json(rep.dnn2.model), out_dir + "/dnn2_network.json");
    return 0;
  });

  if (!need_growprune) return rep;
  stage("growprune", [&] {
    const SyntheticBatch* winner = nullptr;
    for (const SyntheticBatch& b : batches) {
      if (b.method == rep.dnn2.method) winner = &b;
    }
    if (winner == nullptr || winner->data.n_rows() == 0) {
      throw Error("no synthetic rows available for grow-prune");
    }
    const EncodedMatrix enc_syn = encode(winner->data, true, enc_train.standardizer);
    Eigen::MatrixXd x(enc_train.values.rows() + enc_syn.values.rows(),
                      enc_train.values.cols());
    x << enc_train.values, enc_syn.values;
    Eigen::VectorXi y(data.train.labels.size() + winner->data.labels.size());
    y << data.train.labels, winner->data.labels;

    GrowPruneConfig gp;
    gp.steps.clear();
    for (std::size_t i = 0; i < cfg.prune_keep_ratios.size(); ++i) {
      GrowPruneStep step;
      step.growth = i == 0 ? GrowthMode::Full : GrowthMode::Gradient;
      step.grow_neuron = i != 0;
      step.prune_keep_ratio = cfg.prune_keep_ratios[i];
      gp.steps.push_back(step);
    }
    gp.epochs_per_step = cfg.growprune_epochs_per_step;
    gp.growth_ratio = cfg.growth_ratio;
    gp.neuron_growth_noise_scale = cfg.neuron_growth_noise_scale;
    gp.hidden_cap_multiple = cfg.hidden_cap_multiple;
    gp.seed = derive_seed(cfg.seed, "growprune");
    gp.trace_path = out_dir + "/growprune_trace.jsonl";

    TrainConfig tc = cfg.training;
    const SynthesisResult syn = synthesize(rep.dnn2.model, x, y, enc_val.values,
                                           data.validation.labels, gp, tc);
    rep.dnn3_model = syn.best;
    rep.dnn3.validation_accuracy = syn.best_val_accuracy;
    rep.dnn3.metrics = measure(syn.best);
    rep.trace = syn.trace;
    save_json(network_to_json(syn.best), out_dir + "/dnn3.json");
    return 0;
  });

  if (!need_report) return rep;
  stage("evaluate", [&] {
    const EncodedMatrix enc_test = encode(data.test, true, enc_train.standardizer);
    rep.dnn1.metrics.accuracy =
        evaluate(rep.dnn1_model, enc_test.values, data.test.labels);
    rep.dnn3.metrics.accuracy =
        evaluate(rep.dnn3_model, enc_test.values, data.test.labels);
    rep.rf_test_accuracy = forest_accuracy(kb, data.test);
    return 0;
  });

  stage("report", [&] {
    save_json(report_to_json(rep), out_dir + "/report.json");
    write_report_csv(rep, out_dir + "/report.csv");
    return 0;
  });
  return rep;
}

ExperimentReport run_full(const ExperimentConfig& cfg) {
  const LoadedData data = load_splits(cfg);
  return run_pipeline(cfg, data, cfg.output_dir);
}

CompressionReport run_compression_sweep(const ExperimentConfig& cfg) {
  const LoadedData data = load_splits(cfg);
  CompressionReport sweep;

  bool have_full_dnn1 = false;
  for (std::size_t i = 0; i < cfg.compression_ratios.size(); ++i) {
    const double ratio = cfg.compression_ratios[i];
    LoadedData point = stage("compress", [&] {
      LoadedData p;
      p.train = ratio == 1.0 ? data.train
                             : subsample(data.train, ratio,
                                         derive_seed(cfg.seed, "compress-train",
                                                     static_cast<std::uint64_t>(i)));
      p.validation =
          ratio == 1.0 ? data.validation
                       : subsample(data.validation, ratio,
                                   derive_seed(cfg.seed, "compress-validation",
                                               static_cast<std::uint64_t>(i)));
      p.test = data.test;  // the test set stays unchanged across ratios
      return p;
    });

    CompressionPoint cp;
    cp.ratio = ratio;
    cp.train_rows = point.train.n_rows();
    cp.validation_rows = point.validation.n_rows();
    cp.report = run_pipeline(cfg, point,
                             cfg.output_dir + "/compression/point" + std::to_string(i));
    if (ratio == 1.0) {
      sweep.full_dnn1_test_accuracy = cp.report.dnn1.metrics.accuracy;
      have_full_dnn1 = true;
    }
    sweep.points.push_back(std::move(cp));
  }

  if (!have_full_dnn1) {
    // Reference value for the matching rule: the plain baseline on the
    // untouched splits.
    stage("baseline", [&] {
      const EncodedMatrix enc_train = encode(data.train, true);
      const EncodedMatrix enc_val = encode(data.validation, true, enc_train.standardizer);
      const BaselineOutcome full =
          fc_baseline(cfg, enc_train, data.train.labels, enc_val,
                      data.validation.labels,
                      static_cast<int>(data.train.schema.n_classes()));
      const EncodedMatrix enc_test = encode(data.test, true, enc_train.standardizer);
      sweep.full_dnn1_test_accuracy =
          evaluate(full.model, enc_test.values, data.test.labels);
      return 0;
    });
  }

  for (const CompressionPoint& p : sweep.points) {
    const bool match =
        p.report.dnn3.metrics.accuracy >= sweep.full_dnn1_test_accuracy - 0.015;
    if (match && (!sweep.matched || p.ratio > sweep.smallest_ratio)) {
      sweep.matched = true;
      sweep.smallest_ratio = p.ratio;
      sweep.smallest_train_rows = p.train_rows;
      sweep.smallest_validation_rows = p.validation_rows;
    }
  }

  stage("report", [&] {
    save_json(compression_report_to_json(sweep),
              cfg.output_dir + "/compression_report.json");
    std::ofstream out(cfg.output_dir + "/compression_curve.csv");
    if (!out) throw Error("cannot open the compression curve CSV for writing");
    out << "ratio,train_rows,validation_rows,model,test_accuracy,param_count,"
           "flops_per_inference\n";
    for (const CompressionPoint& p : sweep.points) {
      auto row = [&](const char* name, const Metrics& m) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%.17g,%d,%d,%s,%.17g,%lld,%lld\n", p.ratio,
                      p.train_rows, p.validation_rows, name, m.accuracy,
                      m.param_count, m.flops_per_inference);
        out << buf;
      };
      row("dnn1", p.report.dnn1.metrics);
      row("dnn2", p.report.dnn2.metrics);
      row("dnn3", p.report.dnn3.metrics);
    }
    if (!out) throw Error("failed writing the compression curve CSV");
    return 0;
  });
  return sweep;
}

json compression_report_to_json(const CompressionReport& r) {
  json j;
  j["version"] = kSerializationVersion;
  j["kind"] = "compression_report";
  j["full_dnn1_test_accuracy"] = r.full_dnn1_test_accuracy;
  if (r.matched) {
    j["smallest_matching"] = {{"ratio", r.smallest_ratio},
                              {"train_rows", r.smallest_train_rows},
                              {"validation_rows", r.smallest_validation_rows}};
  } else {
    j["smallest_matching"] = nullptr;
  }
  json points = json::array();
  for (const CompressionPoint& p : r.points) {
    points.push_back({{"ratio", p.ratio},
                      {"train_rows", p.train_rows},
                      {"validation_rows", p.validation_rows},
                      {"dnn1", model_report_to_json(p.report.dnn1, true)},
                      {"dnn2", scheme_result_to_json(p.report.dnn2)},
                      {"dnn3", model_report_to_json(p.report.dnn3, false)}});
  }
  j["points"] = std::move(points);
  return j;
}

PcaReport run_pca_sweep(const ExperimentConfig& cfg) {
  const LoadedData data = load_splits(cfg);
  PcaReport sweep;
  for (std::size_t i = 0; i < cfg.pca_ratios.size(); ++i) {
    const double ratio = cfg.pca_ratios[i];
    PcaPoint point;
    point.ratio = ratio;
    const LoadedData reduced = stage("pca", [&] {
      const EncodedMatrix enc_train = encode(data.train, true);
      const PcaTransform t = fit_pca(enc_train, ratio);
      point.components = t.k;
      auto project = [&](const Dataset& d) {
        const EncodedMatrix enc = encode(d, true, enc_train.standardizer);
        return decode(apply_pca(enc, t), d.labels, d.role);
      };
      LoadedData r;
      r.train = project(data.train);
      r.validation = project(data.validation);
      r.test = project(data.test);
      return r;
    });
    point.report =
        run_pipeline(cfg, reduced, cfg.output_dir + "/pca/point" + std::to_string(i));
    sweep.points.push_back(std::move(point));
  }

  stage("report", [&] {
    save_json(pca_report_to_json(sweep), cfg.output_dir + "/pca_report.json");
    std::ofstream out(cfg.output_dir + "/pca_curve.csv");
    if (!out) throw Error("cannot open the PCA curve CSV for writing");
    out << "ratio,components,model,test_accuracy,param_count,flops_per_inference\n";
    for (const PcaPoint& p : sweep.points) {
      auto row = [&](const char* name, const Metrics& m) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%.17g,%d,%s,%.17g,%lld,%lld\n", p.ratio,
                      p.components, name, m.accuracy, m.param_count,
                      m.flops_per_inference);
        out << buf;
      };
      row("dnn1", p.report.dnn1.metrics);
      row("dnn2", p.report.dnn2.metrics);
      row("dnn3", p.report.dnn3.metrics);
    }
    if (!out) throw Error("failed writing the PCA curve CSV");
    return 0;
  });
  return sweep;
}

json pca_report_to_json(const PcaReport& r) {
  json j;
  j["version"] = kSerializationVersion;
  j["kind"] = "pca_report";
  json points = json::array();
  for (const PcaPoint& p : r.points) {
    points.push_back({{"ratio", p.ratio},
                      {"components", p.components},
                      {"dnn1", model_report_to_json(p.report.dnn1, true)},
                      {"dnn2", scheme_result_to_json(p.report.dnn2)},
                      {"dnn3", model_report_to_json(p.report.dnn3, false)}});
  }
  j["points"] = std::move(points);
  return j;
}

PrivacyReport run_privacy(const ExperimentConfig& cfg) {
  const LoadedData data = load_splits(cfg);
  const std::string out_dir = cfg.output_dir;
  fs::create_directories(out_dir);
  fs::create_directories(out_dir + "/cache");
  const int n_classes = static_cast<int>(data.train.schema.n_classes());

  const EncodedMatrix enc_train = stage("encode", [&] { return encode(data.train, true); });
  const EncodedMatrix enc_val = stage("encode", [&] {
    return encode(data.validation, true, enc_train.standardizer);
  });

  const FittedDensities densities = stage("densities", [&] {
    return fit_densities(cfg, enc_train, enc_val, out_dir);
  });

  Forest kb;
  std::vector<IntegrityClassifier> integrity;
  stage("forests", [&] {
    kb = train_forest(data.train, data.validation, cfg.forest_grid,
                      derive_seed(cfg.seed, "kb-forest"));
    integrity = train_integrity_classifiers(data.train, data.validation,
                                            cfg.forest_grid,
                                            derive_seed(cfg.seed, "integrity"));
    return 0;
  });

  const BaselineOutcome dnn1 = stage("baseline", [&] {
    return fc_baseline(cfg, enc_train, data.train.labels, enc_val,
                       data.validation.labels, n_classes);
  });

  PrivacyReport rep;
  // Generation method: best summed validation log-probability.
  rep.method = DensityMethod::Mnd;
  double best_score = stage("densities", [&] { return score(densities.mnd, enc_val); });
  for (DensityMethod m : {DensityMethod::Gmm, DensityMethod::Kde}) {
    const double s = stage("densities", [&] { return score(densities.of(m), enc_val); });
    if (s > best_score) {
      best_score = s;
      rep.method = m;
    }
  }

  // Labeler: whichever of the FC baseline and the knowledge base predicts
  // the validation split better; ties keep the network.
  const double kb_val = forest_accuracy(kb, data.validation);
  Labeler labeler;
  if (dnn1.validation_accuracy >= kb_val) {
    labeler.identity = "dnn1";
    const MaskedNetwork net = dnn1.model;
    const Standardizer std_train = *enc_train.standardizer;
    labeler.predict = [net, std_train](const Dataset& d) {
      const EncodedMatrix enc = encode(d, true, std_train);
      return hard_predictions(net, enc.values);
    };
  } else {
    labeler.identity = "kb-forest";
    const Forest forest = kb;
    labeler.predict = [forest](const Dataset& d) { return predict(forest, d); };
  }
  rep.labeler = labeler.identity;

  rep.exported = stage("privacy-export", [&] {
    return privacy_export(densities.of(rep.method), integrity, labeler, data.train,
                          cfg.privacy_count, derive_seed(cfg.seed, "privacy"),
                          out_dir + "/privacy_synthetic.csv");
  });

  stage("syn-only", [&] {
    const Dataset& syn = rep.exported.batch.data;
    if (syn.n_rows() < 2) throw Error("too few synthetic rows survived for training");
    const EncodedMatrix enc_syn = encode(syn, true, enc_train.standardizer);
    const MaskedNetwork net =
        build_fc({enc_syn.width(), 100, 100, n_classes},
                 derive_seed(cfg.seed, "privacy-net"));
    TrainConfig tc = cfg.training;
    tc.seed = derive_seed(cfg.seed, "privacy-train");
    const TrainOutcome out = train_with_holdout(net, enc_syn, syn.labels, tc);
    const EncodedMatrix enc_test = encode(data.test, true, enc_train.standardizer);
    rep.syn_only_test_accuracy =
        evaluate(out.best, enc_test.values, data.test.labels);
    rep.dnn1_test_accuracy = evaluate(dnn1.model, enc_test.values, data.test.labels);

    // Set-disjointness check: the exported rows must share no feature row
    // with the real training data.
    long long hits = 0;
    for (int s = 0; s < syn.n_rows(); ++s) {
      for (int t = 0; t < data.train.n_rows(); ++t) {
        if ((syn.rows.row(s).array() == data.train.rows.row(t).array()).all()) ++hits;
      }
    }
    rep.real_rows_in_training = hits;
    return 0;
  });

  stage("report", [&] {
    save_json(privacy_report_to_json(rep), out_dir + "/privacy_report.json");
    return 0;
  });
  return rep;
}

json privacy_report_to_json(const PrivacyReport& r) {
  json j;
  j["version"] = kSerializationVersion;
  j["kind"] = "privacy_report";
  j["method"] = to_string(r.method);
  j["labeler"] = r.labeler;
  j["requested"] = r.exported.batch.requested_count;
  j["retained"] = r.exported.batch.retained_count;
  j["total_draws"] = r.exported.batch.total_draws;
  j["real_row_collisions"] = r.exported.real_row_collisions;
  j["real_rows_in_training"] = r.real_rows_in_training;
  j["dnn1_test_accuracy"] = r.dnn1_test_accuracy;
  j["syn_only_test_accuracy"] = r.syn_only_test_accuracy;
  return j;
}

}  // namespace tutor
