#pragma once

#include <Eigen/Dense>

#include "tutor/encoding.hpp"

namespace tutor {

/// Orthonormal projection of the continuous columns onto the top-k
/// principal components. Categorical blocks are never touched.
struct PcaTransform {
    Eigen::MatrixXd component_matrix;  // n_continuous x k, columns orthonormal
    Eigen::VectorXd means;             // length n_continuous
    int k = 0;
};

/// Fits the transform on an encoded Train matrix with
/// k = round(n_continuous / compression_ratio). Components are ordered by
/// decreasing explained variance; each column's sign is fixed so its
/// largest-magnitude coefficient is positive.
/// Throws InvalidCompression when k would fall below 1.
PcaTransform fit_pca(const EncodedMatrix& m, double compression_ratio);

/// Projects continuous columns through the transform. The result carries a
/// derived schema whose continuous features are named pc_1..pc_k followed by
/// the original categorical features, so it decodes to a reduced Dataset.
EncodedMatrix apply_pca(const EncodedMatrix& m, const PcaTransform& t);

/// Maps a projected matrix back into the original encoded layout,
/// re-centering with the stored means. `original_schema` must be the schema
/// the transform was fitted on.
EncodedMatrix pca_reconstruct(const EncodedMatrix& reduced, const PcaTransform& t,
                              const FeatureSchema& original_schema);

}  // namespace tutor
