#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tutor/encoding.hpp"

namespace tutor {

enum class CovarianceShape { Full, Diagonal, Spherical, Tied };
enum class DensityMethod { Mnd, Gmm, Kde };

const char* to_string(CovarianceShape shape);
const char* to_string(DensityMethod method);
CovarianceShape covariance_shape_from_string(const std::string& name);
DensityMethod density_method_from_string(const std::string& name);

/// Multivariate normal with MLE moments (divide by N). `covariance` holds the
/// raw estimate; `cholesky_factor` factors covariance + ridge*I, where ridge
/// is the value that actually succeeded after escalation.
struct MndModel {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
    Eigen::MatrixXd cholesky_factor;
    bool diagonal_constraint = false;
    double ridge = 1e-6;
};

struct GmmComponent {
    double weight = 0.0;
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;        // raw, without ridge
    Eigen::MatrixXd cholesky_factor;   // factors covariance + ridge*I
};

struct GmmModel {
    std::vector<GmmComponent> components;
    CovarianceShape covariance_shape = CovarianceShape::Full;
    std::vector<double> log_likelihood_trace;  // one entry per EM iteration
    double ridge = 1e-6;

    int n_components() const { return static_cast<int>(components.size()); }
};

/// Isotropic Gaussian kernel estimate over the training rows:
/// f(y) = (1/n) sum_i N(y; x_i, h^2 I).
struct KdeModel {
    Eigen::MatrixXd support_points;
    double bandwidth = 1.0;
};

/// Everything needed to turn raw sampled matrices back into datasets.
struct EncodingContext {
    FeatureSchema schema;
    std::vector<ColumnRange> column_map;
    std::optional<Standardizer> standardizer;
};

EncodingContext context_of(const EncodedMatrix& m);

/// Fitted joint density plus the encoding context it was fitted on, so that
/// scoring and sampling behave identically across the three methods.
struct DensityModel {
    DensityMethod method = DensityMethod::Mnd;
    std::variant<MndModel, GmmModel, KdeModel> model;
    int fitted_rows = 0;
    int fitted_cols = 0;
    EncodingContext context;
};

DensityModel make_density(MndModel m, const EncodedMatrix& fitted_on);
DensityModel make_density(GmmModel m, const EncodedMatrix& fitted_on);
DensityModel make_density(KdeModel m, const EncodedMatrix& fitted_on);

/// Lower Cholesky factor of cov + ridge*I. On numerical failure the ridge is
/// escalated tenfold up to 1e-2; `ridge` reports the value that succeeded.
/// Throws CholeskyFailure when even the largest ridge cannot rescue the input.
Eigen::MatrixXd cholesky_with_escalation(const Eigen::MatrixXd& cov, double& ridge);

MndModel fit_mnd(const EncodedMatrix& train, bool diagonal = false,
                 double ridge = 1e-6);

GmmModel fit_gmm(const EncodedMatrix& train, const EncodedMatrix& validation,
                 const std::vector<int>& c_range,
                 const std::vector<CovarianceShape>& shapes, std::uint64_t seed,
                 int max_iter = 200, double tol = 1e-6, double ridge = 1e-6,
                 int n_restarts = 3);

KdeModel fit_kde(const EncodedMatrix& train, const EncodedMatrix& validation,
                 const std::vector<double>& bandwidth_grid);

/// Sum over rows of log f(row). Uses log-sum-exp everywhere; finite for every
/// ridge-stabilized model.
double score(const DensityModel& model, const EncodedMatrix& data);

/// Draws `count` rows; deterministic per seed. The result carries the
/// encoding context of the data the model was fitted on.
EncodedMatrix sample(const DensityModel& model, int count, std::uint64_t seed);

/// 2p - 2 ln L on the training data, with the per-shape independent
/// parameter counts (weights contribute C-1).
double aic(const GmmModel& model, const EncodedMatrix& train);

int gmm_parameter_count(int n_components, int dim, CovarianceShape shape);

std::vector<int> default_c_grid();               // 1..30
std::vector<double> default_bandwidth_grid();    // 15 log-spaced in [0.05, 2]
std::vector<CovarianceShape> all_covariance_shapes();

}  // namespace tutor
