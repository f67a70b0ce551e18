#include "tutor/density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "tutor/errors.hpp"
#include "tutor/rng.hpp"

namespace tutor {
namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

/// Row-wise log N(x; mean, L L^T) for a precomputed lower factor L.
Eigen::VectorXd log_gaussian_rows(const Eigen::MatrixXd& x,
                                  const Eigen::VectorXd& mean,
                                  const Eigen::MatrixXd& chol) {
  const Eigen::Index d = x.cols();
  const Eigen::MatrixXd centered = (x.rowwise() - mean.transpose()).transpose();
  const Eigen::MatrixXd solved =
      chol.triangularView<Eigen::Lower>().solve(centered);
  const double half_log_det = chol.diagonal().array().log().sum();
  return (-0.5 * solved.colwise().squaredNorm().transpose().array() -
          half_log_det - 0.5 * static_cast<double>(d) * kLogTwoPi)
      .matrix();
}

Eigen::VectorXd row_logsumexp(const Eigen::MatrixXd& logp) {
  Eigen::VectorXd out(logp.rows());
  for (Eigen::Index r = 0; r < logp.rows(); ++r) {
    const double m = logp.row(r).maxCoeff();
    out[r] = m + std::log((logp.row(r).array() - m).exp().sum());
  }
  return out;
}

Eigen::MatrixXd mle_covariance(const Eigen::MatrixXd& x,
                               const Eigen::VectorXd& mean) {
  const Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
  Eigen::MatrixXd cov =
      centered.transpose() * centered / static_cast<double>(x.rows());
  cov = 0.5 * (cov + cov.transpose()).eval();
  return cov;
}

Eigen::MatrixXd constrain_shape(const Eigen::MatrixXd& cov, CovarianceShape shape) {
  const Eigen::Index d = cov.rows();
  switch (shape) {
    case CovarianceShape::Full:
    case CovarianceShape::Tied:
      return cov;
    case CovarianceShape::Diagonal:
      return cov.diagonal().asDiagonal();
    case CovarianceShape::Spherical:
      return (cov.trace() / static_cast<double>(d)) *
             Eigen::MatrixXd::Identity(d, d);
  }
  return cov;
}

std::vector<int> kmeanspp_indices(const Eigen::MatrixXd& x, int c,
                                  std::mt19937_64& rng) {
  const int n = static_cast<int>(x.rows());
  std::vector<int> chosen;
  std::uniform_int_distribution<int> any_row(0, n - 1);
  chosen.push_back(any_row(rng));
  Eigen::VectorXd d2 =
      (x.rowwise() - x.row(chosen[0])).rowwise().squaredNorm();
  while (static_cast<int>(chosen.size()) < c) {
    const double total = d2.sum();
    int pick = 0;
    if (total > 0.0 && std::isfinite(total)) {
      std::uniform_real_distribution<double> u(0.0, total);
      const double target = u(rng);
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = any_row(rng);
    }
    chosen.push_back(pick);
    d2 = d2.cwiseMin((x.rowwise() - x.row(pick)).rowwise().squaredNorm());
  }
  return chosen;
}

/// One EM run for a fixed component count, shape, and seed.
GmmModel run_em(const Eigen::MatrixXd& x, int c, CovarianceShape shape,
                std::uint64_t seed, int max_iter, double tol, double ridge) {
  const int n = static_cast<int>(x.rows());
  const Eigen::Index d = x.cols();
  auto rng = make_rng(seed);

  const Eigen::VectorXd global_mean = x.colwise().mean();
  const Eigen::MatrixXd global_cov =
      constrain_shape(mle_covariance(x, global_mean), shape);

  GmmModel model;
  model.covariance_shape = shape;
  model.ridge = ridge;
  model.components.resize(static_cast<std::size_t>(c));
  const std::vector<int> seeds = kmeanspp_indices(x, c, rng);
  for (int k = 0; k < c; ++k) {
    GmmComponent& comp = model.components[static_cast<std::size_t>(k)];
    comp.weight = 1.0 / c;
    comp.mean = x.row(seeds[static_cast<std::size_t>(k)]);
    comp.covariance = global_cov;
  }

  double max_ridge_used = ridge;
  auto refresh = [&](GmmComponent& comp) {
    double r = ridge;
    comp.cholesky_factor = cholesky_with_escalation(comp.covariance, r);
    max_ridge_used = std::max(max_ridge_used, r);
  };
  for (GmmComponent& comp : model.components) refresh(comp);

  Eigen::MatrixXd logp(n, c);
  double previous = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter <= max_iter; ++iter) {
    for (int k = 0; k < c; ++k) {
      const GmmComponent& comp = model.components[static_cast<std::size_t>(k)];
      logp.col(k) = log_gaussian_rows(x, comp.mean, comp.cholesky_factor)
                        .array() +
                    std::log(comp.weight);
    }
    const Eigen::VectorXd row_ll = row_logsumexp(logp);
    const double total = row_ll.sum();
    if (!std::isfinite(total)) {
      throw NonFiniteLoss("EM log-likelihood became non-finite");
    }
    model.log_likelihood_trace.push_back(total);
    if (iter == max_iter || (iter > 0 && total - previous < tol)) break;
    previous = total;

    const Eigen::MatrixXd resp =
        (logp.colwise() - row_ll).array().exp().matrix();
    const Eigen::VectorXd counts = resp.colwise().sum();

    Eigen::MatrixXd tied_scatter = Eigen::MatrixXd::Zero(d, d);
    std::vector<int> starved;
    for (int k = 0; k < c; ++k) {
      GmmComponent& comp = model.components[static_cast<std::size_t>(k)];
      if (!(counts[k] > 1e-10)) {
        starved.push_back(k);
        continue;
      }
      comp.weight = counts[k] / n;
      comp.mean = (resp.col(k).transpose() * x).transpose() / counts[k];
      const Eigen::MatrixXd centered = x.rowwise() - comp.mean.transpose();
      const Eigen::MatrixXd weighted =
          centered.array().colwise() * resp.col(k).array();
      Eigen::MatrixXd scatter = weighted.transpose() * centered;
      scatter = 0.5 * (scatter + scatter.transpose()).eval();
      if (shape == CovarianceShape::Tied) {
        tied_scatter += scatter;
      } else {
        comp.covariance = constrain_shape(scatter / counts[k], shape);
      }
    }
    if (shape == CovarianceShape::Tied) {
      tied_scatter /= static_cast<double>(n);
      for (int k = 0; k < c; ++k) {
        model.components[static_cast<std::size_t>(k)].covariance = tied_scatter;
      }
    }
    // A component that lost every row restarts at the point the mixture
    // currently explains worst.
    for (int k : starved) {
      GmmComponent& comp = model.components[static_cast<std::size_t>(k)];
      int worst = 0;
      row_ll.minCoeff(&worst);
      comp.mean = x.row(worst);
      comp.covariance = global_cov;
      comp.weight = 1.0 / c;
    }
    double wsum = 0.0;
    for (const GmmComponent& comp : model.components) wsum += comp.weight;
    for (GmmComponent& comp : model.components) comp.weight /= wsum;
    for (GmmComponent& comp : model.components) refresh(comp);
  }

  if (max_ridge_used != ridge) {
    model.ridge = max_ridge_used;
    for (GmmComponent& comp : model.components) {
      double r = max_ridge_used;
      comp.cholesky_factor = cholesky_with_escalation(comp.covariance, r);
    }
  }
  return model;
}

Eigen::VectorXd gmm_row_scores(const GmmModel& model, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd logp(x.rows(), model.n_components());
  for (int k = 0; k < model.n_components(); ++k) {
    const GmmComponent& comp = model.components[static_cast<std::size_t>(k)];
    logp.col(k) =
        log_gaussian_rows(x, comp.mean, comp.cholesky_factor).array() +
        std::log(comp.weight);
  }
  return row_logsumexp(logp);
}

Eigen::VectorXd kde_row_scores(const KdeModel& model, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd& s = model.support_points;
  const double h = model.bandwidth;
  const double d = static_cast<double>(s.cols());
  const double n = static_cast<double>(s.rows());
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Eigen::VectorXd d2 =
        (s.rowwise() - x.row(r)).rowwise().squaredNorm();
    const Eigen::ArrayXd expo = -d2.array() / (2.0 * h * h);
    const double m = expo.maxCoeff();
    const double lse = m + std::log((expo - m).exp().sum());
    out[r] = lse - std::log(n) - d * std::log(h) - 0.5 * d * kLogTwoPi;
  }
  return out;
}

void check_width(int expected, const EncodedMatrix& data) {
  if (data.width() != expected) {
    throw DimensionMismatch("density model fitted on " + std::to_string(expected) +
                            " columns, got " + std::to_string(data.width()));
  }
}

}  // namespace

const char* to_string(CovarianceShape shape) {
  switch (shape) {
    case CovarianceShape::Full: return "full";
    case CovarianceShape::Diagonal: return "diagonal";
    case CovarianceShape::Spherical: return "spherical";
    case CovarianceShape::Tied: return "tied";
  }
  return "full";
}

const char* to_string(DensityMethod method) {
  switch (method) {
    case DensityMethod::Mnd: return "mnd";
    case DensityMethod::Gmm: return "gmm";
    case DensityMethod::Kde: return "kde";
  }
  return "mnd";
}

CovarianceShape covariance_shape_from_string(const std::string& name) {
  if (name == "full") return CovarianceShape::Full;
  if (name == "diagonal") return CovarianceShape::Diagonal;
  if (name == "spherical") return CovarianceShape::Spherical;
  if (name == "tied") return CovarianceShape::Tied;
  throw ConfigError("unknown covariance shape: " + name);
}

DensityMethod density_method_from_string(const std::string& name) {
  if (name == "mnd") return DensityMethod::Mnd;
  if (name == "gmm") return DensityMethod::Gmm;
  if (name == "kde") return DensityMethod::Kde;
  throw ConfigError("unknown density method: " + name);
}

EncodingContext context_of(const EncodedMatrix& m) {
  return {m.schema, m.column_map, m.standardizer};
}

Eigen::MatrixXd cholesky_with_escalation(const Eigen::MatrixXd& cov, double& ridge) {
  const Eigen::Index d = cov.rows();
  double r = ridge;
  while (true) {
    const Eigen::MatrixXd stabilized =
        cov + r * Eigen::MatrixXd::Identity(d, d);
    Eigen::LLT<Eigen::MatrixXd> llt(stabilized);
    if (llt.info() == Eigen::Success) {
      ridge = r;
      return llt.matrixL();
    }
    if (r > 1e-2) {
      throw CholeskyFailure(
          "covariance not positive definite even with ridge 1e-2; "
          "input is singular");
    }
    r = (r == 0.0) ? 1e-10 : r * 10.0;
  }
}

MndModel fit_mnd(const EncodedMatrix& train, bool diagonal, double ridge) {
  if (train.n_rows() < 2) {
    throw Error("fitting a normal density needs at least 2 rows");
  }
  MndModel m;
  m.diagonal_constraint = diagonal;
  m.ridge = ridge;
  m.mean = train.values.colwise().mean();
  m.covariance = mle_covariance(train.values, m.mean);
  if (diagonal) {
    m.covariance = m.covariance.diagonal().asDiagonal();
  }
  m.cholesky_factor = cholesky_with_escalation(m.covariance, m.ridge);
  return m;
}

GmmModel fit_gmm(const EncodedMatrix& train, const EncodedMatrix& validation,
                 const std::vector<int>& c_range,
                 const std::vector<CovarianceShape>& shapes, std::uint64_t seed,
                 int max_iter, double tol, double ridge, int n_restarts) {
  if (c_range.empty() || shapes.empty()) {
    throw ConfigError("component and shape grids must be nonempty");
  }
  for (int c : c_range) {
    if (c < 1 || c > train.n_rows()) {
      throw ConfigError("component count " + std::to_string(c) +
                        " outside [1, n_train=" + std::to_string(train.n_rows()) +
                        "]");
    }
  }
  check_width(train.width(), validation);

  GmmModel best;
  double best_score = -std::numeric_limits<double>::infinity();
  bool have_best = false;
  for (int c : c_range) {
    for (std::size_t si = 0; si < shapes.size(); ++si) {
      for (int restart = 0; restart < n_restarts; ++restart) {
        const std::uint64_t sub =
            derive_seed(seed, {static_cast<std::uint64_t>(c), si,
                               static_cast<std::uint64_t>(restart)});
        GmmModel candidate =
            run_em(train.values, c, shapes[si], sub, max_iter, tol, ridge);
        const double s = gmm_row_scores(candidate, validation.values).sum();
        if (!have_best || s > best_score) {
          best = std::move(candidate);
          best_score = s;
          have_best = true;
        }
      }
    }
  }
  return best;
}

KdeModel fit_kde(const EncodedMatrix& train, const EncodedMatrix& validation,
                 const std::vector<double>& bandwidth_grid) {
  if (bandwidth_grid.empty()) {
    throw ConfigError("bandwidth grid must be nonempty");
  }
  for (double h : bandwidth_grid) {
    if (!(h > 0.0)) {
      throw ConfigError("bandwidths must be positive, got " + std::to_string(h));
    }
  }
  if (train.n_rows() < 1) {
    throw Error("kernel density needs at least one support point");
  }
  check_width(train.width(), validation);

  std::vector<double> grid = bandwidth_grid;
  std::sort(grid.begin(), grid.end());
  KdeModel best{train.values, grid[0]};
  double best_score = -std::numeric_limits<double>::infinity();
  for (double h : grid) {
    KdeModel candidate{train.values, h};
    const double s = kde_row_scores(candidate, validation.values).sum();
    if (s > best_score) {
      best = candidate;
      best_score = s;
    }
  }
  return best;
}

DensityModel make_density(MndModel m, const EncodedMatrix& fitted_on) {
  return {DensityMethod::Mnd, std::move(m), fitted_on.n_rows(),
          fitted_on.width(), context_of(fitted_on)};
}

DensityModel make_density(GmmModel m, const EncodedMatrix& fitted_on) {
  return {DensityMethod::Gmm, std::move(m), fitted_on.n_rows(),
          fitted_on.width(), context_of(fitted_on)};
}

DensityModel make_density(KdeModel m, const EncodedMatrix& fitted_on) {
  return {DensityMethod::Kde, std::move(m), fitted_on.n_rows(),
          fitted_on.width(), context_of(fitted_on)};
}

double score(const DensityModel& model, const EncodedMatrix& data) {
  check_width(model.fitted_cols, data);
  if (const auto* mnd = std::get_if<MndModel>(&model.model)) {
    return log_gaussian_rows(data.values, mnd->mean, mnd->cholesky_factor).sum();
  }
  if (const auto* gmm = std::get_if<GmmModel>(&model.model)) {
    return gmm_row_scores(*gmm, data.values).sum();
  }
  return kde_row_scores(std::get<KdeModel>(model.model), data.values).sum();
}

EncodedMatrix sample(const DensityModel& model, int count, std::uint64_t seed) {
  if (count < 1) {
    throw ConfigError("sample count must be >= 1");
  }
  auto rng = make_rng(derive_seed(seed, "density-sample"));
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int d = model.fitted_cols;
  Eigen::MatrixXd out(count, d);
  auto draw_z = [&]() {
    Eigen::VectorXd z(d);
    for (int j = 0; j < d; ++j) z[j] = gauss(rng);
    return z;
  };

  if (const auto* mnd = std::get_if<MndModel>(&model.model)) {
    for (int r = 0; r < count; ++r) {
      out.row(r) = (mnd->mean + mnd->cholesky_factor * draw_z()).transpose();
    }
  } else if (const auto* gmm = std::get_if<GmmModel>(&model.model)) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int r = 0; r < count; ++r) {
      const double u = unit(rng);
      double acc = 0.0;
      const GmmComponent* pick = &gmm->components.back();
      for (const GmmComponent& comp : gmm->components) {
        acc += comp.weight;
        if (u <= acc) {
          pick = &comp;
          break;
        }
      }
      out.row(r) = (pick->mean + pick->cholesky_factor * draw_z()).transpose();
    }
  } else {
    const KdeModel& kde = std::get<KdeModel>(model.model);
    const int n = static_cast<int>(kde.support_points.rows());
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int r = 0; r < count; ++r) {
      out.row(r) = kde.support_points.row(pick(rng)) +
                   kde.bandwidth * draw_z().transpose();
    }
  }

  EncodedMatrix m;
  m.values = std::move(out);
  m.schema = model.context.schema;
  m.column_map = model.context.column_map;
  m.standardizer = model.context.standardizer;
  return m;
}

int gmm_parameter_count(int n_components, int dim, CovarianceShape shape) {
  const int c = n_components;
  const int d = dim;
  switch (shape) {
    case CovarianceShape::Full: return c * (d + d * (d + 1) / 2) + (c - 1);
    case CovarianceShape::Diagonal: return c * 2 * d + (c - 1);
    case CovarianceShape::Spherical: return c * (d + 1) + (c - 1);
    case CovarianceShape::Tied: return c * d + d * (d + 1) / 2 + (c - 1);
  }
  return 0;
}

double aic(const GmmModel& model, const EncodedMatrix& train) {
  const int p = gmm_parameter_count(model.n_components(),
                                    static_cast<int>(train.width()),
                                    model.covariance_shape);
  const double ln_l = gmm_row_scores(model, train.values).sum();
  return 2.0 * p - 2.0 * ln_l;
}

std::vector<int> default_c_grid() {
  std::vector<int> out(30);
  for (int i = 0; i < 30; ++i) out[static_cast<std::size_t>(i)] = i + 1;
  return out;
}

std::vector<double> default_bandwidth_grid() {
  std::vector<double> out(15);
  const double lo = std::log(0.05);
  const double hi = std::log(2.0);
  for (int i = 0; i < 15; ++i) {
    out[static_cast<std::size_t>(i)] = std::exp(lo + (hi - lo) * i / 14.0);
  }
  return out;
}

std::vector<CovarianceShape> all_covariance_shapes() {
  return {CovarianceShape::Full, CovarianceShape::Diagonal,
          CovarianceShape::Spherical, CovarianceShape::Tied};
}

}  // namespace tutor
