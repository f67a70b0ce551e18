#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace tutor {

enum class FeatureKind { Continuous, Categorical };

struct Feature {
    std::string name;
    FeatureKind kind = FeatureKind::Continuous;
    std::vector<std::string> levels;  // categorical only; size() is the cardinality

    int cardinality() const { return static_cast<int>(levels.size()); }

    bool operator==(const Feature&) const = default;
};

struct LabelInfo {
    std::string name;
    std::vector<std::string> classes;

    bool operator==(const LabelInfo&) const = default;
};

/// Ordered feature description for one tabular problem. Categorical features
/// carry their level names; the label carries its class names.
struct FeatureSchema {
    std::vector<Feature> features;
    LabelInfo label;

    int n_features() const { return static_cast<int>(features.size()); }
    int n_classes() const { return static_cast<int>(label.classes.size()); }
    int n_continuous() const;
    int n_categorical() const;

    /// Width of the one-hot encoded representation:
    /// one column per continuous feature plus one per categorical level.
    int encoded_width() const;

    /// Indices (into features) of continuous / categorical features, in order.
    std::vector<int> continuous_indices() const;
    std::vector<int> categorical_indices() const;

    int feature_index(const std::string& name) const;  // -1 if absent

    /// Throws Error if names collide, any cardinality < 2, or class count < 2.
    void validate() const;

    bool operator==(const FeatureSchema&) const = default;
};

enum class SplitRole { Train, Validation, Test, Synthetic };

const char* to_string(SplitRole role);

/// Raw tabular split: one row per instance, categorical cells hold the level
/// index (stored as double), labels hold class indices.
struct Dataset {
    FeatureSchema schema;
    Eigen::MatrixXd rows;    // n x n_features
    Eigen::VectorXi labels;  // n
    SplitRole role = SplitRole::Train;

    int n_rows() const { return static_cast<int>(rows.rows()); }

    /// Throws Error on out-of-range categorical cells or labels, or if the
    /// label count does not match the row count.
    void validate() const;
};

FeatureSchema load_schema(const std::string& path);
std::string schema_to_json(const FeatureSchema& schema);
FeatureSchema schema_from_json(const std::string& text);

/// Stable fingerprint of the schema content; stored in serialized models so
/// mismatched model/data pairings are detectable.
std::uint64_t schema_fingerprint(const FeatureSchema& schema);

}  // namespace tutor
