#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "tutor/density.hpp"
#include "tutor/forest.hpp"
#include "tutor/growprune.hpp"
#include "tutor/network.hpp"
#include "tutor/schema.hpp"
#include "tutor/schemes.hpp"
#include "tutor/synthgen.hpp"

namespace tutor {

/// Parsed and validated experiment description. Paths are checked for
/// existence at parse time; a test split aliased to another split is refused
/// with TestLeakage.
struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string output_dir;

    std::string schema_path;
    // Single-file mode: one CSV split by the given proportions.
    std::string csv_path;
    double train_weight = 404.0;
    double validation_weight = 150.0;
    double test_weight = 160.0;
    // Three-file mode: pre-split CSVs. Active when train_csv is nonempty.
    std::string train_csv;
    std::string validation_csv;
    std::string test_csv;

    std::vector<int> gmm_components = {1, 2, 4, 8};
    std::vector<CovarianceShape> gmm_shapes = all_covariance_shapes();
    std::vector<double> kde_bandwidths = default_bandwidth_grid();

    ForestGrid forest_grid = default_forest_grid();

    std::vector<std::vector<int>> fc_hidden_layers = {{50}, {100}, {50, 50}, {100, 100}};

    TrainConfig training;

    int synthetic_count = 1000;

    int growprune_epochs_per_step = 20;
    double growth_ratio = 0.1;
    std::vector<double> prune_keep_ratios = {0.5, 0.3, 0.2, 0.15, 0.1};
    double neuron_growth_noise_scale = 0.1;
    int hidden_cap_multiple = 4;

    std::vector<double> compression_ratios = {1, 2, 4, 8};
    std::vector<double> pca_ratios = {1, 2, 3};
    int privacy_count = 10000;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
/// Canonical echo of the validated config; embedded verbatim in every report.
nlohmann::json config_to_json(const ExperimentConfig& cfg);

struct LoadedData {
    Dataset train;
    Dataset validation;
    Dataset test;
};

/// Loads the schema and CSV(s) and produces the three splits. Single-file
/// mode shuffles deterministically per seed and slices by the configured
/// proportions.
LoadedData load_splits(const ExperimentConfig& cfg);

struct ModelReport {
    std::vector<int> hidden;  // hidden widths (DNN 1 only)
    double validation_accuracy = 0.0;
    Metrics metrics;  // metrics.accuracy is the test accuracy
};

struct ExperimentReport {
    nlohmann::json config_echo;
    int train_rows = 0;
    int validation_rows = 0;
    int test_rows = 0;
    double rf_test_accuracy = 0.0;
    nlohmann::json generation;  // per-method draw/retention bookkeeping
    ModelReport dnn1;
    SchemeResult scheme_a;
    SchemeResult scheme_b;
    SchemeResult dnn2;  // the better of the two schemes
    ModelReport dnn3;
    std::vector<TraceRow> trace;  // grow-prune trace rows

    MaskedNetwork dnn1_model;
    MaskedNetwork dnn3_model;
};

nlohmann::json report_to_json(const ExperimentReport& r);

/// Target stage for a pipeline invocation. Each value runs exactly the
/// stages it needs (the density cache keeps repeated prerequisites cheap)
/// and leaves the later report fields empty.
enum class PipelineVerb {
    FitDensity,   // densities only
    TrainForest,  // knowledge-base and integrity forests only
    Generate,     // densities + forests + verified batches
    Baseline,     // FC search (DNN 1) only
    Scheme,       // everything through scheme selection (DNN 2)
    GrowPrune,    // everything through grow-prune synthesis (DNN 3)
    Full,         // all of the above plus test evaluation and the report
};

/// Pipeline on pre-loaded splits; artifacts land in out_dir. The sweeps call
/// this directly, substituting reduced datasets. Verbs before Scheme never
/// read the test split.
ExperimentReport run_pipeline(const ExperimentConfig& cfg, const LoadedData& data,
                              const std::string& out_dir,
                              PipelineVerb verb = PipelineVerb::Full);

/// Loads data per config and runs the pipeline into cfg.output_dir, writing
/// report.json and report.csv.
ExperimentReport run_full(const ExperimentConfig& cfg);

struct CompressionPoint {
    double ratio = 1.0;
    int train_rows = 0;
    int validation_rows = 0;
    ExperimentReport report;
};

struct CompressionReport {
    std::vector<CompressionPoint> points;
    double full_dnn1_test_accuracy = 0.0;
    bool matched = false;        // some point's DNN 3 matches full-data DNN 1
    double smallest_ratio = 1.0; // largest ratio (fewest rows) that matched
    int smallest_train_rows = 0;
    int smallest_validation_rows = 0;
};

/// Per ratio: subsample train and validation (test untouched), run the
/// pipeline, and record the accuracy-versus-ratio curve plus the fewest rows
/// at which DNN 3 still matches full-data DNN 1 within 1.5%.
CompressionReport run_compression_sweep(const ExperimentConfig& cfg);
nlohmann::json compression_report_to_json(const CompressionReport& r);

struct PcaPoint {
    double ratio = 1.0;
    int components = 0;
    ExperimentReport report;
};

struct PcaReport {
    std::vector<PcaPoint> points;
};

/// Per ratio: project continuous features onto the top principal components
/// fitted on the training split, rebuild all three splits in the reduced
/// space, and run the pipeline.
PcaReport run_pca_sweep(const ExperimentConfig& cfg);
nlohmann::json pca_report_to_json(const PcaReport& r);

struct PrivacyReport {
    DensityMethod method = DensityMethod::Mnd;  // best validation-score density
    std::string labeler;
    PrivacyExport exported;
    double dnn1_test_accuracy = 0.0;
    double syn_only_test_accuracy = 0.0;
    long long real_rows_in_training = 0;  // verbatim collisions, must be 0
};

/// Exports a collision-free synthetic dataset and trains a fixed FC net with
/// two 100-neuron hidden layers on it alone, evaluating on the real test
/// split.
PrivacyReport run_privacy(const ExperimentConfig& cfg);
nlohmann::json privacy_report_to_json(const PrivacyReport& r);

}  // namespace tutor
