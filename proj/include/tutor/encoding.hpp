#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "tutor/schema.hpp"

namespace tutor {

/// Per-continuous-column z-score statistics, computed on the Train split and
/// reused verbatim for every other split. Columns whose stddev fell below
/// 1e-12 pass through unscaled and are listed in zero_variance.
struct Standardizer {
    Eigen::VectorXd mean;    // one entry per continuous feature, schema order
    Eigen::VectorXd stddev;  // entries for zero-variance columns are 1.0
    std::vector<int> zero_variance;  // indices into the continuous sequence

    bool operator==(const Standardizer&) const = default;
};

/// Maps one schema feature to its contiguous block of encoded columns.
struct ColumnRange {
    int feature = 0;  // index into schema.features
    int begin = 0;    // first encoded column
    int width = 1;    // 1 for continuous, cardinality for categorical

    bool operator==(const ColumnRange&) const = default;
};

/// Dense real view of a dataset: continuous columns (optionally z-scored)
/// and one-hot categorical blocks, in schema feature order.
struct EncodedMatrix {
    Eigen::MatrixXd values;
    FeatureSchema schema;
    std::vector<ColumnRange> column_map;
    std::optional<Standardizer> standardizer;

    int n_rows() const { return static_cast<int>(values.rows()); }
    int width() const { return static_cast<int>(values.cols()); }
};

std::vector<ColumnRange> make_column_map(const FeatureSchema& schema);

Standardizer fit_standardizer(const Dataset& train);

/// One-hot encodes categorical features and, when standardize is set,
/// z-scores continuous columns. A non-Train dataset must supply the Train
/// standardizer through `reuse`.
EncodedMatrix encode(const Dataset& d, bool standardize,
                     const std::optional<Standardizer>& reuse = std::nullopt);

/// Inverse of encode for arbitrary real matrices: every categorical block
/// collapses to the argmax level (ties -> lowest index) and continuous
/// columns are unstandardized when a standardizer is present.
Dataset decode(const EncodedMatrix& m, Eigen::VectorXi labels, SplitRole role);

/// Convenience overload: labels all zero, role Synthetic.
Dataset decode(const EncodedMatrix& m);

}  // namespace tutor
