#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "tutor/errors.hpp"
#include "tutor/experiment.hpp"

namespace {

void print_model(const char* name, double val, double test, long long params) {
  std::printf("%-6s validation %.4f  test %.4f  params %lld\n", name, val, test,
              params);
}

void print_report(const tutor::ExperimentReport& rep) {
  print_model("dnn1", rep.dnn1.validation_accuracy, rep.dnn1.metrics.accuracy,
              rep.dnn1.metrics.param_count);
  print_model("dnn2", rep.dnn2.validation_accuracy, rep.dnn2.test_accuracy,
              rep.dnn2.metrics.param_count);
  print_model("dnn3", rep.dnn3.validation_accuracy, rep.dnn3.metrics.accuracy,
              rep.dnn3.metrics.param_count);
  std::printf("rf     test %.4f\n", rep.rf_test_accuracy);
}

int dispatch(const std::string& verb, const tutor::ExperimentConfig& cfg) {
  using tutor::PipelineVerb;
  if (verb == "run-full") {
    const tutor::ExperimentReport rep = tutor::run_full(cfg);
    print_report(rep);
    std::printf("report written to %s/report.json\n", cfg.output_dir.c_str());
    return 0;
  }
  if (verb == "sweep-compression") {
    const tutor::CompressionReport rep = tutor::run_compression_sweep(cfg);
    std::printf("full-data dnn1 test accuracy %.4f\n", rep.full_dnn1_test_accuracy);
    for (const tutor::CompressionPoint& p : rep.points) {
      std::printf("ratio %.3g  train %d  validation %d  dnn3 test %.4f\n", p.ratio,
                  p.train_rows, p.validation_rows, p.report.dnn3.metrics.accuracy);
    }
    if (rep.matched) {
      std::printf("dnn3 matches full-data dnn1 down to %d train / %d validation "
                  "rows (ratio %.3g)\n",
                  rep.smallest_train_rows, rep.smallest_validation_rows,
                  rep.smallest_ratio);
    } else {
      std::printf("no compression point matched full-data dnn1\n");
    }
    return 0;
  }
  if (verb == "sweep-pca") {
    const tutor::PcaReport rep = tutor::run_pca_sweep(cfg);
    for (const tutor::PcaPoint& p : rep.points) {
      std::printf("ratio %.3g  components %d  dnn3 test %.4f\n", p.ratio,
                  p.components, p.report.dnn3.metrics.accuracy);
    }
    return 0;
  }
  if (verb == "privacy-export") {
    const tutor::PrivacyReport rep = tutor::run_privacy(cfg);
    std::printf("method %s  labeler %s  retained %d rows\n",
                tutor::to_string(rep.method), rep.labeler.c_str(),
                rep.exported.batch.retained_count);
    std::printf("real-trained dnn1 test %.4f  synthetic-only test %.4f\n",
                rep.dnn1_test_accuracy, rep.syn_only_test_accuracy);
    std::printf("real rows in the exported data: %lld\n",
                rep.exported.real_row_collisions);
    return 0;
  }

  PipelineVerb target = PipelineVerb::Full;
  if (verb == "fit-density") target = PipelineVerb::FitDensity;
  else if (verb == "train-forest") target = PipelineVerb::TrainForest;
  else if (verb == "generate") target = PipelineVerb::Generate;
  else if (verb == "baseline") target = PipelineVerb::Baseline;
  else if (verb == "scheme") target = PipelineVerb::Scheme;
  else if (verb == "growprune") target = PipelineVerb::GrowPrune;

  const tutor::LoadedData data = tutor::load_splits(cfg);
  const tutor::ExperimentReport rep =
      tutor::run_pipeline(cfg, data, cfg.output_dir, target);
  switch (target) {
    case PipelineVerb::FitDensity:
      std::printf("densities written to %s\n", cfg.output_dir.c_str());
      break;
    case PipelineVerb::TrainForest:
      std::printf("forests written to %s\n", cfg.output_dir.c_str());
      break;
    case PipelineVerb::Generate:
      std::printf("synthetic batches written to %s\n", cfg.output_dir.c_str());
      break;
    case PipelineVerb::Baseline:
      std::printf("dnn1   validation %.4f  params %lld\n",
                  rep.dnn1.validation_accuracy, rep.dnn1.metrics.param_count);
      break;
    case PipelineVerb::Scheme:
      print_model("dnn2", rep.dnn2.validation_accuracy, rep.dnn2.test_accuracy,
                  rep.dnn2.metrics.param_count);
      break;
    default:
      std::printf("dnn3 validation %.4f\n", rep.dnn3.validation_accuracy);
      break;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic-data-driven network synthesis experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  app.add_option("--config", config_path, "Experiment config JSON")->required();
  app.add_option("--seed", seed, "Override the config seed")
      ->each([&](const std::string&) { seed_set = true; });
  app.add_option("--out", out_dir, "Override the config output directory");

  for (const char* verb :
       {"fit-density", "train-forest", "generate", "baseline", "scheme",
        "growprune", "run-full", "sweep-compression", "sweep-pca",
        "privacy-export"}) {
    app.add_subcommand(verb);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    tutor::ExperimentConfig cfg = tutor::load_config(config_path);
    if (seed_set) cfg.seed = seed;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    return dispatch(app.get_subcommands().front()->get_name(), cfg);
  } catch (const tutor::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const tutor::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 3;
  }
}
