#include "tutor/pca.hpp"

#include <cfenv>
#include <cmath>
#include <string>
#include <vector>

#include "tutor/errors.hpp"

namespace tutor {
namespace {

std::vector<int> continuous_columns(const EncodedMatrix& m) {
  std::vector<int> cols;
  for (const ColumnRange& r : m.column_map) {
    if (m.schema.features[static_cast<std::size_t>(r.feature)].kind ==
        FeatureKind::Continuous) {
      cols.push_back(r.begin);
    }
  }
  return cols;
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& values, const std::vector<int>& cols) {
  Eigen::MatrixXd out(values.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    out.col(static_cast<Eigen::Index>(j)) = values.col(cols[j]);
  }
  return out;
}

FeatureSchema reduced_schema(const FeatureSchema& original, int k) {
  FeatureSchema out;
  for (int j = 0; j < k; ++j) {
    out.features.push_back({"pc_" + std::to_string(j + 1), FeatureKind::Continuous, {}});
  }
  for (const Feature& f : original.features) {
    if (f.kind == FeatureKind::Categorical) out.features.push_back(f);
  }
  out.label = original.label;
  return out;
}

}  // namespace

PcaTransform fit_pca(const EncodedMatrix& m, double compression_ratio) {
  if (!(compression_ratio >= 1.0)) {
    throw InvalidCompression("compression ratio must be >= 1, got " +
                             std::to_string(compression_ratio));
  }
  const std::vector<int> cols = continuous_columns(m);
  const int d = static_cast<int>(cols.size());
  // nearbyint under the default rounding mode resolves .5 ties to the even
  // neighbour, e.g. 561 columns at ratio 2 keep 280 components.
  const int k = static_cast<int>(std::nearbyint(d / compression_ratio));
  if (k < 1) {
    throw InvalidCompression("retained dimension " + std::to_string(k) +
                             " of " + std::to_string(d) + " continuous columns");
  }

  const Eigen::MatrixXd x = gather(m.values, cols);
  const double n = static_cast<double>(x.rows());
  PcaTransform t;
  t.k = k;
  t.means = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - t.means.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / n;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw Error("eigendecomposition of the covariance failed");
  }
  // Eigen reports eigenvalues in increasing order; keep the top k, descending.
  t.component_matrix.resize(d, k);
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - j);
    int pivot = 0;
    v.cwiseAbs().maxCoeff(&pivot);
    if (v[pivot] < 0.0) v = -v;
    t.component_matrix.col(j) = v;
  }
  return t;
}

EncodedMatrix apply_pca(const EncodedMatrix& m, const PcaTransform& t) {
  const std::vector<int> cols = continuous_columns(m);
  if (static_cast<int>(cols.size()) != t.component_matrix.rows()) {
    throw DimensionMismatch("transform expects " +
                            std::to_string(t.component_matrix.rows()) +
                            " continuous columns, matrix has " +
                            std::to_string(cols.size()));
  }
  const Eigen::MatrixXd centered =
      gather(m.values, cols).rowwise() - t.means.transpose();
  const Eigen::MatrixXd projected = centered * t.component_matrix;

  EncodedMatrix out;
  out.schema = reduced_schema(m.schema, t.k);
  out.column_map = make_column_map(out.schema);
  out.values.resize(m.values.rows(), out.schema.encoded_width());
  out.values.leftCols(t.k) = projected;
  int dst = t.k;
  for (const ColumnRange& r : m.column_map) {
    if (m.schema.features[static_cast<std::size_t>(r.feature)].kind ==
        FeatureKind::Categorical) {
      out.values.middleCols(dst, r.width) = m.values.middleCols(r.begin, r.width);
      dst += r.width;
    }
  }
  return out;
}

EncodedMatrix pca_reconstruct(const EncodedMatrix& reduced, const PcaTransform& t,
                              const FeatureSchema& original_schema) {
  if (reduced.values.cols() < t.k) {
    throw DimensionMismatch("projected matrix narrower than the transform rank");
  }
  const Eigen::MatrixXd restored =
      (reduced.values.leftCols(t.k) * t.component_matrix.transpose()).rowwise() +
      t.means.transpose();

  EncodedMatrix out;
  out.schema = original_schema;
  out.column_map = make_column_map(original_schema);
  out.values.resize(reduced.values.rows(), original_schema.encoded_width());
  int cont = 0;
  int src = t.k;
  for (const ColumnRange& r : out.column_map) {
    if (original_schema.features[static_cast<std::size_t>(r.feature)].kind ==
        FeatureKind::Continuous) {
      out.values.col(r.begin) = restored.col(cont++);
    } else {
      out.values.middleCols(r.begin, r.width) = reduced.values.middleCols(src, r.width);
      src += r.width;
    }
  }
  return out;
}

}  // namespace tutor
