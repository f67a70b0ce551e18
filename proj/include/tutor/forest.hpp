#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "tutor/schema.hpp"

namespace tutor {

enum class SplitCriterion { Gini, Entropy };

const char* to_string(SplitCriterion c);
SplitCriterion split_criterion_from_string(const std::string& name);

/// One node of a flat-stored tree. Split nodes route value <= threshold
/// (continuous) or value == level (categorical one-vs-rest) to `left`.
/// Leaves have left == -1 and carry the majority class plus the histogram of
/// training rows routed there.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int level = -1;  // >= 0 marks a categorical split
    int left = -1;
    int right = -1;
    int klass = 0;
    std::vector<int> histogram;
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root
};

struct Forest {
    std::vector<Tree> trees;
    SplitCriterion criterion = SplitCriterion::Gini;
    int max_depth = -1;  // -1 = unlimited
    int n_trees = 0;
    int feature_subsample = 0;
    std::vector<std::uint64_t> bootstrap_seeds;
    int n_features = 0;
    int n_classes = 0;
    std::uint64_t schema_fingerprint = 0;
};

struct ForestGrid {
    std::vector<SplitCriterion> criteria;
    std::vector<int> max_depths;  // -1 = unlimited
    std::vector<int> tree_counts;
};

ForestGrid default_forest_grid();  // {Gini,Entropy} x {4,8,16,inf} x {25,100}

/// Greedy top-down induction on the full dataset (no bootstrap at this
/// level). Candidate splits per node come from `feature_subsample` randomly
/// chosen features; continuous thresholds are midpoints of consecutive
/// distinct sorted values. Only strictly impurity-reducing splits are kept.
Tree train_tree(const Dataset& data, SplitCriterion criterion, int max_depth,
                int feature_subsample, std::uint64_t seed);

/// Trains one forest per grid point on bootstrap resamples and returns the
/// one with the highest validation accuracy; ties prefer fewer trees, then
/// shallower depth, then grid order.
Forest train_forest(const Dataset& train, const Dataset& validation,
                    const ForestGrid& grid, std::uint64_t seed);

Eigen::VectorXi predict(const Forest& forest, const Eigen::MatrixXd& rows);
Eigen::VectorXi predict(const Forest& forest, const Dataset& data);
double forest_accuracy(const Forest& forest, const Dataset& data);

/// Writes every root-to-leaf path of every tree as one line:
/// "tree 3: (radius_mean <= 13.08) AND (texture_se > 1.22) -> malignant".
void dump_rules(const Forest& forest, const FeatureSchema& schema,
                const std::string& path);

/// Predicts one categorical feature from the continuous features; used to
/// reject synthetic rows whose category contradicts the rest of the row.
struct IntegrityClassifier {
    std::string target_feature;
    Forest model;
};

/// The derived problem behind one integrity classifier: continuous features
/// as inputs, the given categorical feature as the label.
Dataset integrity_view(const Dataset& d, int categorical_feature);

/// One classifier per categorical feature (empty when there are none).
/// Hyperparameters are chosen on the validation split exactly as in
/// train_forest.
std::vector<IntegrityClassifier> train_integrity_classifiers(
    const Dataset& train, const Dataset& validation, const ForestGrid& grid,
    std::uint64_t seed);

}  // namespace tutor
