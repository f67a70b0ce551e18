#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "tutor/density.hpp"
#include "tutor/encoding.hpp"
#include "tutor/errors.hpp"
#include "tutor/rng.hpp"
#include "tutor/schema.hpp"

using namespace tutor;

namespace {

EncodedMatrix wrap_matrix(const Eigen::MatrixXd& values) {
  FeatureSchema s;
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    s.features.push_back(
        {"x" + std::to_string(j), FeatureKind::Continuous, {}});
  }
  s.label = {"y", {"a", "b"}};
  EncodedMatrix m;
  m.schema = s;
  m.column_map = make_column_map(s);
  m.values = values;
  return m;
}

Eigen::MatrixXd gaussian_matrix(int n, int d, std::uint64_t seed,
                                double spread = 1.0) {
  auto rng = make_rng(seed);
  std::normal_distribution<double> g(0.0, spread);
  Eigen::MatrixXd x(n, d);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < d; ++c) x(r, c) = g(rng);
  }
  return x;
}

/// Three well-separated blobs of equal size in d dimensions.
Eigen::MatrixXd three_blobs(int per_cluster, int d, double sigma,
                            std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  std::vector<Eigen::VectorXd> centers;
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(d);
    c[0] = 8.0 * k;
    c[d - 1] = (k == 2) ? -6.0 : 3.0 * k;
    centers.push_back(c);
  }
  Eigen::MatrixXd x(3 * per_cluster, d);
  for (int k = 0; k < 3; ++k) {
    for (int r = 0; r < per_cluster; ++r) {
      for (int c = 0; c < d; ++c) {
        x(k * per_cluster + r, c) = centers[static_cast<std::size_t>(k)][c] + g(rng);
      }
    }
  }
  return x;
}

/// Naive mixture density without log-sum-exp: direct inverses/determinants.
double naive_gmm_score(const GmmModel& m, const Eigen::MatrixXd& x) {
  const int d = static_cast<int>(x.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double p = 0.0;
    for (const GmmComponent& comp : m.components) {
      const Eigen::MatrixXd sigma =
          comp.covariance + m.ridge * Eigen::MatrixXd::Identity(d, d);
      const Eigen::VectorXd diff = x.row(r).transpose() - comp.mean;
      const double quad = diff.dot(sigma.inverse() * diff);
      const double norm =
          std::pow(2.0 * M_PI, -0.5 * d) / std::sqrt(sigma.determinant());
      p += comp.weight * norm * std::exp(-0.5 * quad);
    }
    total += std::log(p);
  }
  return total;
}

}  // namespace

TEST_CASE("mnd moments match hand computation and a naive oracle") {
  SUBCASE("four point cloud") {
    Eigen::MatrixXd x(4, 2);
    x << 0, 0, 2, 0, 0, 2, 2, 2;
    MndModel m = fit_mnd(wrap_matrix(x));
    CHECK(m.mean[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(m.mean[1] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(m.covariance(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(m.covariance(1, 1) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::abs(m.covariance(0, 1)) < 1e-15);
  }
  SUBCASE("naive double loop covariance on random data") {
    Eigen::MatrixXd x = gaussian_matrix(200, 5, 42, 2.5);
    MndModel m = fit_mnd(wrap_matrix(x));
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(5);
    for (int r = 0; r < 200; ++r) mean += x.row(r).transpose();
    mean /= 200.0;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(5, 5);
    for (int r = 0; r < 200; ++r) {
      const Eigen::VectorXd diff = x.row(r).transpose() - mean;
      cov += diff * diff.transpose();
    }
    cov /= 200.0;  // MLE normalization, not n-1
    CHECK((m.covariance - cov).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((m.mean - mean).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("covariance invariants") {
    Eigen::MatrixXd x = gaussian_matrix(80, 4, 7);
    MndModel m = fit_mnd(wrap_matrix(x));
    CHECK((m.covariance - m.covariance.transpose()).cwiseAbs().maxCoeff() <
          1e-10);
    const Eigen::MatrixXd rebuilt =
        m.cholesky_factor * m.cholesky_factor.transpose();
    const Eigen::MatrixXd target =
        m.covariance + m.ridge * Eigen::MatrixXd::Identity(4, 4);
    CHECK((rebuilt - target).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("repeated single row survives through the ridge") {
    Eigen::MatrixXd x(5, 3);
    for (int r = 0; r < 5; ++r) x.row(r) << 1.0, -2.0, 0.5;
    MndModel m = fit_mnd(wrap_matrix(x), false, 0.0);
    CHECK(m.ridge > 0.0);  // escalation had to kick in
    const Eigen::MatrixXd rebuilt =
        m.cholesky_factor * m.cholesky_factor.transpose();
    const Eigen::MatrixXd target =
        m.covariance + m.ridge * Eigen::MatrixXd::Identity(3, 3);
    CHECK((rebuilt - target).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("fewer than two rows is rejected") {
    Eigen::MatrixXd x(1, 2);
    x << 1.0, 2.0;
    CHECK_THROWS_AS(fit_mnd(wrap_matrix(x)), Error);
  }
}

TEST_CASE("score of a standard normal at its mode") {
  Eigen::MatrixXd one(1, 1);
  one << 0.0;
  MndModel m;
  m.mean = Eigen::VectorXd::Zero(1);
  m.covariance = Eigen::MatrixXd::Identity(1, 1);
  m.cholesky_factor = Eigen::MatrixXd::Identity(1, 1);
  m.ridge = 0.0;
  DensityModel dm = make_density(m, wrap_matrix(one));
  CHECK(score(dm, wrap_matrix(one)) ==
        doctest::Approx(-0.5 * std::log(2.0 * M_PI)).epsilon(1e-12));
}

TEST_CASE("mnd sampling is deterministic and statistically calibrated") {
  Eigen::MatrixXd x = gaussian_matrix(400, 3, 11, 1.7);
  DensityModel dm = make_density(fit_mnd(wrap_matrix(x)), wrap_matrix(x));

  SUBCASE("same seed bit identical") {
    EncodedMatrix a = sample(dm, 50, 99);
    EncodedMatrix b = sample(dm, 50, 99);
    CHECK(a.values == b.values);
    EncodedMatrix c = sample(dm, 50, 100);
    CHECK(a.values != c.values);
  }
  SUBCASE("sample mean obeys the CLT bound per coordinate") {
    const int n = 20000;
    EncodedMatrix s = sample(dm, n, 7);
    const MndModel& m = std::get<MndModel>(dm.model);
    const Eigen::VectorXd mean = s.values.colwise().mean();
    const double max_sd = m.covariance.diagonal().array().sqrt().maxCoeff();
    const double bound = 4.0 * max_sd / std::sqrt(static_cast<double>(n));
    CHECK((mean - m.mean).cwiseAbs().maxCoeff() < bound);
  }
  SUBCASE("near degenerate covariance pins samples to the mean") {
    Eigen::MatrixXd flat(6, 2);
    for (int r = 0; r < 6; ++r) flat.row(r) << 3.0, -1.0;
    MndModel m = fit_mnd(wrap_matrix(flat), false, 1e-12);
    DensityModel d = make_density(m, wrap_matrix(flat));
    EncodedMatrix s = sample(d, 200, 5);
    CHECK((s.values.rowwise() - m.mean.transpose()).cwiseAbs().maxCoeff() <
          1e-3);
  }
}

TEST_CASE("gmm with one full component reproduces the plain normal fit") {
  Eigen::MatrixXd x = gaussian_matrix(250, 4, 21);
  Eigen::MatrixXd v = gaussian_matrix(60, 4, 22);
  EncodedMatrix train = wrap_matrix(x);
  EncodedMatrix val = wrap_matrix(v);

  MndModel mnd = fit_mnd(train, false, 1e-6);
  GmmModel gmm = fit_gmm(train, val, {1}, {CovarianceShape::Full}, 3, 200,
                         1e-8, 1e-6, 1);
  const double s_mnd = score(make_density(mnd, train), val);
  const double s_gmm = score(make_density(gmm, train), val);
  CHECK(s_gmm == doctest::Approx(s_mnd).epsilon(1e-8));
}

TEST_CASE("gmm em traces never decrease") {
  Eigen::MatrixXd x = three_blobs(60, 3, 1.0, 31);
  Eigen::MatrixXd v = three_blobs(20, 3, 1.0, 32);
  EncodedMatrix train = wrap_matrix(x);
  EncodedMatrix val = wrap_matrix(v);
  for (CovarianceShape shape : all_covariance_shapes()) {
    for (int c : {1, 2, 3, 5}) {
      GmmModel m = fit_gmm(train, val, {c}, {shape}, 77, 150, 1e-7, 1e-6, 1);
      REQUIRE(!m.log_likelihood_trace.empty());
      for (std::size_t i = 1; i < m.log_likelihood_trace.size(); ++i) {
        CHECK(m.log_likelihood_trace[i] >=
              m.log_likelihood_trace[i - 1] - 1e-8);
      }
      double wsum = 0.0;
      for (const GmmComponent& comp : m.components) {
        CHECK(comp.weight > 0.0);
        wsum += comp.weight;
      }
      CHECK(wsum == doctest::Approx(1.0).epsilon(1e-10));
    }
  }
}

TEST_CASE("gmm recovers the mean of a single gaussian") {
  const int n = 600;
  auto rng = make_rng(41);
  std::normal_distribution<double> g(0.0, 2.0);
  Eigen::MatrixXd x(n, 2);
  for (int r = 0; r < n; ++r) {
    x(r, 0) = 5.0 + g(rng);
    x(r, 1) = -3.0 + g(rng);
  }
  Eigen::MatrixXd v = x.topRows(100);
  GmmModel m = fit_gmm(wrap_matrix(x), wrap_matrix(v), {1},
                       {CovarianceShape::Full}, 13);
  REQUIRE(m.n_components() == 1);
  const double bound = 3.0 * 2.0 / std::sqrt(static_cast<double>(n));
  CHECK(std::abs(m.components[0].mean[0] - 5.0) < bound);
  CHECK(std::abs(m.components[0].mean[1] + 3.0) < bound);
}

TEST_CASE("gmm selection picks the generating component count") {
  Eigen::MatrixXd x = three_blobs(80, 2, 0.6, 51);
  Eigen::MatrixXd v = three_blobs(30, 2, 0.6, 52);
  GmmModel m = fit_gmm(wrap_matrix(x), wrap_matrix(v), {1, 2, 3, 4},
                       {CovarianceShape::Full}, 5, 150, 1e-7, 1e-6, 2);
  CHECK(m.n_components() == 3);
}

TEST_CASE("gmm score agrees with a naive no-logsumexp oracle") {
  Eigen::MatrixXd x = three_blobs(50, 2, 1.0, 61);
  Eigen::MatrixXd v = three_blobs(15, 2, 1.0, 62);
  EncodedMatrix train = wrap_matrix(x);
  GmmModel m = fit_gmm(train, wrap_matrix(v), {3}, {CovarianceShape::Full}, 9,
                       100, 1e-7, 1e-6, 1);
  const double fast = score(make_density(m, train), wrap_matrix(v));
  const double slow = naive_gmm_score(m, v);
  CHECK(fast == doctest::Approx(slow).epsilon(1e-8));
}

TEST_CASE("forced mixture weights route every draw to component zero") {
  Eigen::MatrixXd x = gaussian_matrix(50, 2, 71);
  GmmModel m;
  m.covariance_shape = CovarianceShape::Full;
  m.ridge = 1e-6;
  GmmComponent near;
  near.weight = 1.0;
  near.mean = Eigen::VectorXd::Zero(2);
  near.covariance = 0.01 * Eigen::MatrixXd::Identity(2, 2);
  GmmComponent far = near;
  far.weight = 0.0;
  far.mean = Eigen::VectorXd::Constant(2, 1000.0);
  double r = m.ridge;
  near.cholesky_factor = cholesky_with_escalation(near.covariance, r);
  far.cholesky_factor = near.cholesky_factor;
  m.components = {near, far};
  DensityModel dm = make_density(m, wrap_matrix(x));
  EncodedMatrix s = sample(dm, 300, 3);
  CHECK(s.values.cwiseAbs().maxCoeff() < 10.0);
}

TEST_CASE("gmm handles components that collapse to empty") {
  // Two tight distant clusters but three components: at least one component
  // has to fight for rows, exercising the reinitialization path.
  Eigen::MatrixXd x(40, 2);
  auto rng = make_rng(81);
  std::normal_distribution<double> g(0.0, 0.05);
  for (int r = 0; r < 40; ++r) {
    const double base = (r < 20) ? 0.0 : 50.0;
    x(r, 0) = base + g(rng);
    x(r, 1) = base + g(rng);
  }
  const GmmModel m = fit_gmm(wrap_matrix(x), wrap_matrix(x), {3},
                             {CovarianceShape::Diagonal}, 17, 80, 1e-7, 1e-6, 2);
  for (std::size_t i = 1; i < m.log_likelihood_trace.size(); ++i) {
    CHECK(m.log_likelihood_trace[i] >= m.log_likelihood_trace[i - 1] - 1e-8);
  }
  double wsum = 0.0;
  for (const GmmComponent& comp : m.components) wsum += comp.weight;
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("kde closed form at a lone support point") {
  for (int d : {1, 3, 6}) {
    Eigen::MatrixXd x = Eigen::MatrixXd::Constant(1, d, 0.7);
    KdeModel m{x, 1.0};
    DensityModel dm = make_density(m, wrap_matrix(x));
    CHECK(score(dm, wrap_matrix(x)) ==
          doctest::Approx(-0.5 * d * std::log(2.0 * M_PI)).epsilon(1e-12));
  }
}

TEST_CASE("kde bandwidth selection") {
  Eigen::MatrixXd x = gaussian_matrix(150, 3, 91);
  Eigen::MatrixXd v = gaussian_matrix(50, 3, 92);
  EncodedMatrix train = wrap_matrix(x);
  EncodedMatrix val = wrap_matrix(v);

  SUBCASE("single candidate grid") {
    KdeModel m = fit_kde(train, val, {0.37});
    CHECK(m.bandwidth == 0.37);
  }
  SUBCASE("matches a brute force rescoring oracle") {
    const std::vector<double> grid = default_bandwidth_grid();
    KdeModel m = fit_kde(train, val, grid);
    double best = -std::numeric_limits<double>::infinity();
    double best_h = 0.0;
    for (double h : grid) {
      const double s = score(make_density(KdeModel{x, h}, train), val);
      if (s > best) {
        best = s;
        best_h = h;
      }
    }
    CHECK(m.bandwidth == best_h);
  }
  SUBCASE("score invariant to support point order") {
    KdeModel m{x, 0.5};
    Eigen::MatrixXd shuffled = x.colwise().reverse();
    KdeModel m2{shuffled, 0.5};
    CHECK(score(make_density(m, train), val) ==
          doctest::Approx(score(make_density(m2, train), val)).epsilon(1e-12));
  }
  SUBCASE("oversmoothing beyond the data diameter hurts the score") {
    const double diameter =
        (x.colwise().maxCoeff() - x.colwise().minCoeff()).norm();
    double prev = score(make_density(KdeModel{x, diameter}, train), val);
    double h = diameter;
    for (int step = 0; step < 3; ++step) {
      h *= 10.0;
      const double s = score(make_density(KdeModel{x, h}, train), val);
      CHECK(s < prev);
      prev = s;
    }
  }
  SUBCASE("kde sampling stays near the support") {
    KdeModel m = fit_kde(train, val, {0.2});
    EncodedMatrix s = sample(make_density(m, train), 500, 8);
    CHECK(s.values.cwiseAbs().maxCoeff() <
          x.cwiseAbs().maxCoeff() + 0.2 * 6.0);
    EncodedMatrix again = sample(make_density(m, train), 500, 8);
    CHECK(s.values == again.values);
  }
}

TEST_CASE("aic parameter counts and model comparison") {
  CHECK(gmm_parameter_count(1, 2, CovarianceShape::Full) == 5);
  CHECK(gmm_parameter_count(3, 4, CovarianceShape::Full) == 3 * (4 + 10) + 2);
  CHECK(gmm_parameter_count(3, 4, CovarianceShape::Diagonal) == 3 * 8 + 2);
  CHECK(gmm_parameter_count(3, 4, CovarianceShape::Spherical) == 3 * 5 + 2);
  CHECK(gmm_parameter_count(3, 4, CovarianceShape::Tied) == 3 * 4 + 10 + 2);

  SUBCASE("same likelihood, more parameters, larger aic") {
    Eigen::MatrixXd x = gaussian_matrix(100, 3, 55);
    EncodedMatrix train = wrap_matrix(x);
    GmmModel diag = fit_gmm(train, train, {1}, {CovarianceShape::Diagonal}, 2,
                            100, 1e-7, 1e-6, 1);
    GmmModel as_full = diag;
    as_full.covariance_shape = CovarianceShape::Full;  // same density, more p
    CHECK(aic(as_full, train) > aic(diag, train));
    CHECK(aic(as_full, train) - aic(diag, train) ==
          doctest::Approx(2.0 * (gmm_parameter_count(1, 3, CovarianceShape::Full) -
                                 gmm_parameter_count(1, 3, CovarianceShape::Diagonal))));
  }
  SUBCASE("aic sweep bottoms out at the generating cluster count") {
    // A firm variance floor (ridge 0.1) keeps components from collapsing
    // onto chance clumps, which would otherwise let AIC overselect.
    Eigen::MatrixXd x = three_blobs(60, 6, 1.0, 65);
    EncodedMatrix train = wrap_matrix(x);
    EncodedMatrix val = wrap_matrix(three_blobs(25, 6, 1.0, 66));
    int best_c = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int c = 1; c <= 6; ++c) {
      GmmModel m =
          fit_gmm(train, val, {c}, {CovarianceShape::Full}, 3, 120, 1e-7, 0.1, 3);
      const double a = aic(m, train);
      if (a < best) {
        best = a;
        best_c = c;
      }
    }
    CHECK(best_c == 3);
  }
}

TEST_CASE("density scores are finite on standardized mixed data") {
  FeatureSchema s;
  s.features = {{"a", FeatureKind::Continuous, {}},
                {"c", FeatureKind::Categorical, {"u", "v", "w"}},
                {"b", FeatureKind::Continuous, {}}};
  s.label = {"y", {"n", "p"}};
  auto rng = make_rng(12);
  std::normal_distribution<double> g(0.0, 2.0);
  std::uniform_int_distribution<int> level(0, 2);
  std::uniform_int_distribution<int> cls(0, 1);
  Dataset d;
  d.schema = s;
  d.rows.resize(120, 3);
  d.labels.resize(120);
  for (int r = 0; r < 120; ++r) {
    d.rows(r, 0) = g(rng);
    d.rows(r, 1) = level(rng);
    d.rows(r, 2) = g(rng);
    d.labels[r] = cls(rng);
  }
  EncodedMatrix train = encode(d, true);

  DensityModel mnd = make_density(fit_mnd(train), train);
  GmmModel g2 = fit_gmm(train, train, {2}, {CovarianceShape::Full}, 4, 60,
                        1e-6, 1e-6, 1);
  DensityModel gmm = make_density(g2, train);
  DensityModel kde =
      make_density(fit_kde(train, train, {0.1, 0.5, 1.0}), train);
  for (const DensityModel* m : {&mnd, &gmm, &kde}) {
    const double v = score(*m, train);
    CHECK(std::isfinite(v));
    EncodedMatrix drawn = sample(*m, 40, 19);
    CHECK(drawn.values.allFinite());
    Dataset back = decode(drawn);
    back.validate();  // every categorical cell decodes to a valid level
  }

  SUBCASE("width mismatches are rejected") {
    Eigen::MatrixXd wrong = gaussian_matrix(10, 2, 1);
    CHECK_THROWS_AS(score(mnd, wrap_matrix(wrong)), DimensionMismatch);
  }
}
