#include "tutor/network.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "doctest.h"
#include "tutor/errors.hpp"
#include "tutor/rng.hpp"

using tutor::Activation;
using tutor::MaskedNetwork;

namespace {

/// Reference forward pass that walks neurons strictly one at a time and sums
/// over every order-legal weight entry, dormant or not. Deliberately shares
/// nothing with the blocked production path, so it also defines the semantics
/// of perturbing a dormant weight during finite differencing.
Eigen::MatrixXd seq_logits(const MaskedNetwork& net, const Eigen::MatrixXd& x) {
    Eigen::MatrixXd logits(x.rows(), net.n_out);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        std::vector<double> val(static_cast<std::size_t>(net.n_sources()));
        for (int i = 0; i < net.n_in; ++i) val[i] = x(r, i);
        for (int h = 0; h < net.n_hidden; ++h) {
            double pre = net.bias[h];
            for (int i = 0; i < net.n_in + h; ++i) pre += val[i] * net.W(i, h);
            const bool relu =
                net.hidden_activation[static_cast<std::size_t>(h)] == Activation::Relu;
            val[net.n_in + h] = relu ? std::max(0.0, pre) : pre;
        }
        for (int o = 0; o < net.n_out; ++o) {
            double z = net.bias[net.n_hidden + o];
            for (int i = 0; i < net.n_sources(); ++i) {
                z += val[i] * net.W(i, net.n_hidden + o);
            }
            logits(r, o) = z;
        }
    }
    return logits;
}

double seq_loss(const MaskedNetwork& net, const Eigen::MatrixXd& x,
                const Eigen::VectorXi& y) {
    const Eigen::MatrixXd logits = seq_logits(net, x);
    double total = 0.0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double m = logits.row(r).maxCoeff();
        double s = 0.0;
        for (int c = 0; c < net.n_out; ++c) s += std::exp(logits(r, c) - m);
        total += m + std::log(s) - logits(r, y[r]);
    }
    return total / static_cast<double>(x.rows());
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1e-5, std::abs(a), std::abs(b)});
}

struct FdResult {
    double max_w = 0.0;
    double max_bias = 0.0;
};

FdResult fd_check(const MaskedNetwork& net, int n_rows, std::uint64_t seed) {
    auto rng = tutor::make_rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::MatrixXd x(n_rows, net.n_in);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (int c = 0; c < net.n_in; ++c) x(r, c) = nd(rng);
    }
    Eigen::VectorXi y(n_rows);
    std::uniform_int_distribution<int> cls(0, net.n_out - 1);
    for (int r = 0; r < n_rows; ++r) y[r] = cls(rng);

    const tutor::ForwardCache cache = tutor::forward_cache(net, x);
    const tutor::Gradients g = tutor::backward(net, cache, x, y);
    REQUIRE(std::abs(g.loss - seq_loss(net, x, y)) < 1e-12);

    const double eps = 1e-5;
    const Eigen::MatrixXd legal = tutor::legal_mask(net);
    FdResult res;
    MaskedNetwork p = net;
    for (int i = 0; i < net.n_sources(); ++i) {
        for (int j = 0; j < net.n_destinations(); ++j) {
            if (legal(i, j) == 0.0) {
                REQUIRE(g.w(i, j) == 0.0);
                continue;
            }
            const double keep = p.W(i, j);
            p.W(i, j) = keep + eps;
            const double up = seq_loss(p, x, y);
            p.W(i, j) = keep - eps;
            const double down = seq_loss(p, x, y);
            p.W(i, j) = keep;
            res.max_w = std::max(res.max_w, rel_err(g.w(i, j), (up - down) / (2 * eps)));
        }
    }
    for (int j = 0; j < net.n_destinations(); ++j) {
        const double keep = p.bias[j];
        p.bias[j] = keep + eps;
        const double up = seq_loss(p, x, y);
        p.bias[j] = keep - eps;
        const double down = seq_loss(p, x, y);
        p.bias[j] = keep;
        res.max_bias = std::max(res.max_bias, rel_err(g.bias[j], (up - down) / (2 * eps)));
    }
    return res;
}

MaskedNetwork random_sparse(int n_in, int n_hidden, int n_out, double density,
                            std::uint64_t seed) {
    MaskedNetwork net;
    net.n_in = n_in;
    net.n_hidden = n_hidden;
    net.n_out = n_out;
    net.W = Eigen::MatrixXd::Zero(net.n_sources(), net.n_destinations());
    net.Mask = Eigen::MatrixXd::Zero(net.n_sources(), net.n_destinations());
    net.bias = Eigen::VectorXd::Zero(net.n_destinations());
    net.hidden_activation.resize(static_cast<std::size_t>(n_hidden));
    for (int h = 0; h < n_hidden; ++h) {
        net.hidden_activation[static_cast<std::size_t>(h)] =
            (h % 3 == 2) ? Activation::Identity : Activation::Relu;
    }
    auto rng = tutor::make_rng(seed);
    std::normal_distribution<double> w(0.0, 0.7);
    std::normal_distribution<double> b(0.0, 0.3);
    std::bernoulli_distribution keep(density);
    for (int j = 0; j < net.n_destinations(); ++j) net.bias[j] = b(rng);
    const Eigen::MatrixXd legal = tutor::legal_mask(net);
    for (int i = 0; i < net.n_sources(); ++i) {
        for (int j = 0; j < net.n_destinations(); ++j) {
            if (legal(i, j) == 1.0 && keep(rng)) {
                net.Mask(i, j) = 1.0;
                net.W(i, j) = w(rng);
            }
        }
    }
    return net;
}

/// Two independent sub-networks feeding a small joint head, the shape the
/// twin-training scheme flattens into one matrix. Sub-network logit neurons
/// carry identity activations.
MaskedNetwork combined_shape(std::uint64_t seed) {
    MaskedNetwork net;
    net.n_in = 3;
    net.n_hidden = 12;
    net.n_out = 2;
    net.W = Eigen::MatrixXd::Zero(net.n_sources(), net.n_destinations());
    net.Mask = Eigen::MatrixXd::Zero(net.n_sources(), net.n_destinations());
    net.bias = Eigen::VectorXd::Zero(net.n_destinations());
    net.hidden_activation.assign(12, Activation::Relu);
    for (int h : {3, 4, 8, 9}) {
        net.hidden_activation[static_cast<std::size_t>(h)] = Activation::Identity;
    }
    auto on = [&](int i, int j) { net.Mask(i, j) = 1.0; };
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) on(i, j);      // inputs -> first hidden group
        for (int j = 5; j < 8; ++j) on(i, j);      // inputs -> second hidden group
    }
    for (int h = 0; h < 3; ++h) {
        for (int j = 3; j < 5; ++j) on(3 + h, j);  // group one -> its logit pair
    }
    for (int h = 5; h < 8; ++h) {
        for (int j = 8; j < 10; ++j) on(3 + h, j);
    }
    for (int h : {3, 4, 8, 9}) {
        for (int j = 10; j < 12; ++j) on(3 + h, j);  // logit pairs -> head
    }
    for (int h = 10; h < 12; ++h) {
        for (int j = 12; j < 14; ++j) on(3 + h, j);  // head -> outputs
    }
    auto rng = tutor::make_rng(seed);
    std::normal_distribution<double> w(0.0, 0.6);
    std::normal_distribution<double> b(0.0, 0.2);
    for (int j = 0; j < net.n_destinations(); ++j) net.bias[j] = b(rng);
    for (int i = 0; i < net.n_sources(); ++i) {
        for (int j = 0; j < net.n_destinations(); ++j) {
            if (net.Mask(i, j) == 1.0) net.W(i, j) = w(rng);
        }
    }
    tutor::check_structure(net);
    return net;
}

Eigen::MatrixXd random_inputs(int n, int d, std::uint64_t seed, double scale = 1.0) {
    auto rng = tutor::make_rng(seed);
    std::normal_distribution<double> nd(0.0, scale);
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (int c = 0; c < d; ++c) x(r, c) = nd(rng);
    }
    return x;
}

Eigen::VectorXi random_labels(int n, int n_classes, std::uint64_t seed) {
    auto rng = tutor::make_rng(seed);
    std::uniform_int_distribution<int> cls(0, n_classes - 1);
    Eigen::VectorXi y(n);
    for (int r = 0; r < n; ++r) y[r] = cls(rng);
    return y;
}

}  // namespace

TEST_CASE("fc construction: mask layout, metrics arithmetic, structure") {
    const MaskedNetwork net = tutor::build_fc({30, 50, 2}, 11);
    tutor::check_structure(net);
    CHECK(net.n_in == 30);
    CHECK(net.n_hidden == 50);
    CHECK(net.n_out == 2);
    const tutor::Metrics m = tutor::measure(net);
    CHECK(m.param_count == 1652);
    CHECK(m.flops_per_inference == 2 * 1600 + 50);

    const MaskedNetwork logreg = tutor::build_fc({7, 4}, 5);
    tutor::check_structure(logreg);
    CHECK(logreg.n_hidden == 0);
    CHECK(static_cast<long long>(logreg.Mask.sum()) == 28);
    CHECK(tutor::measure(logreg).param_count == 32);
    CHECK(tutor::measure(logreg).flops_per_inference == 56);

    // Deep net: consecutive layers only, nothing across or backwards.
    const MaskedNetwork deep = tutor::build_fc({3, 4, 4, 2}, 11);
    tutor::check_structure(deep);
    CHECK(static_cast<long long>(deep.Mask.sum()) == 3 * 4 + 4 * 4 + 4 * 2);
    CHECK(deep.Mask(0, 4) == 0.0);                  // input to second hidden layer
    CHECK(deep.Mask(deep.n_in + 0, 8) == 0.0);      // first hidden layer to output
    CHECK(deep.Mask(deep.n_in + 0, 4) == 1.0);      // first to second hidden layer
    CHECK(deep.Mask(deep.n_in + 4, 8) == 1.0);      // second hidden layer to output
}

TEST_CASE("forward blocks recover layers on mlp masks and split on chains") {
    const MaskedNetwork deep = tutor::build_fc({3, 4, 4, 2}, 1);
    const auto blocks = tutor::forward_blocks(deep);
    REQUIRE(blocks.size() == 2);
    CHECK(blocks[0] == std::pair<int, int>{0, 4});
    CHECK(blocks[1] == std::pair<int, int>{4, 8});

    // A fully dense legal mask forces one block per hidden neuron.
    MaskedNetwork dense = random_sparse(2, 4, 2, 1.0, 3);
    const auto singles = tutor::forward_blocks(dense);
    REQUIRE(singles.size() == 4);
    for (int h = 0; h < 4; ++h) {
        CHECK(singles[static_cast<std::size_t>(h)] == std::pair<int, int>{h, h + 1});
    }

    MaskedNetwork none = tutor::build_fc({5, 3}, 2);
    CHECK(tutor::forward_blocks(none).empty());
}

TEST_CASE("structure validation rejects bad masks and nonzero dormant weights") {
    MaskedNetwork net = tutor::build_fc({3, 4, 2}, 9);
    tutor::check_structure(net);

    MaskedNetwork bad = net;
    bad.Mask(0, 0) = 0.5;
    CHECK_THROWS_AS(tutor::check_structure(bad), tutor::Error);

    bad = net;
    bad.Mask(bad.n_in + 2, 0) = 1.0;  // hidden 2 feeding hidden 0: order violation
    CHECK_THROWS_AS(tutor::check_structure(bad), tutor::Error);

    bad = net;
    bad.W(0, bad.n_hidden + 1) = 0.25;
    bad.Mask(0, bad.n_hidden + 1) = 0.0;
    CHECK_THROWS_AS(tutor::check_structure(bad), tutor::Error);
}

TEST_CASE("masked forward matches a conventional layered mlp oracle") {
    const std::vector<int> sizes = {7, 10, 6, 3};
    const MaskedNetwork net = tutor::build_fc(sizes, 21);
    const Eigen::MatrixXd x = random_inputs(100, 7, 77);
    const Eigen::MatrixXd got = tutor::forward(net, x);

    // Conventional implementation: per-layer dense matrices pulled out of the
    // global parameter matrix, ReLU between layers, softmax at the end.
    Eigen::MatrixXd a = x;
    int row0 = 0;
    int col0 = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const bool last = (l + 2 == sizes.size());
        const int fan_in = sizes[l];
        const int fan_out = sizes[l + 1];
        const int c0 = last ? net.n_hidden : col0;
        const Eigen::MatrixXd wl = net.W.block(row0, c0, fan_in, fan_out);
        const Eigen::VectorXd bl = net.bias.segment(c0, fan_out);
        a = ((a * wl).rowwise() + bl.transpose()).eval();
        if (!last) a = a.cwiseMax(0.0);
        row0 = (l == 0) ? net.n_in : row0 + fan_in;
        col0 += fan_out;
    }
    Eigen::MatrixXd want(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        double m = a.row(r).maxCoeff();
        double s = 0.0;
        for (Eigen::Index c = 0; c < a.cols(); ++c) s += std::exp(a(r, c) - m);
        for (Eigen::Index c = 0; c < a.cols(); ++c) {
            want(r, c) = std::exp(a(r, c) - m) / s;
        }
    }
    CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-12);
    for (Eigen::Index r = 0; r < got.rows(); ++r) {
        CHECK(std::abs(got.row(r).sum() - 1.0) <= 1e-12);
    }
}

TEST_CASE("blocked forward equals sequential reference on sparse nets") {
    const MaskedNetwork net = random_sparse(5, 6, 3, 0.5, 41);
    tutor::check_structure(net);
    const Eigen::MatrixXd x = random_inputs(20, 5, 42);
    const Eigen::MatrixXd got = tutor::forward_cache(net, x).logits;
    CHECK((got - seq_logits(net, x)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("zero weights predict uniformly and fresh nets start near chance") {
    MaskedNetwork net = tutor::build_fc({6, 10, 4}, 15);
    net.W.setZero();
    net.W = net.W.cwiseProduct(net.Mask);
    const Eigen::MatrixXd probs = tutor::forward(net, random_inputs(9, 6, 8));
    CHECK((probs.array() - 0.25).abs().maxCoeff() <= 1e-15);

    // Small input scale keeps a freshly initialized net close to the uniform
    // prediction, so the first-batch loss sits at chance level.
    const MaskedNetwork fresh = tutor::build_fc({12, 30, 5}, 33);
    const Eigen::MatrixXd x = random_inputs(64, 12, 9, 0.15);
    const Eigen::VectorXi y = random_labels(64, 5, 10);
    CHECK(std::abs(tutor::cross_entropy(fresh, x, y) - std::log(5.0)) <= 0.1);
}

TEST_CASE("analytic gradients match central finite differences across shapes") {
    double worst_w = 0.0;
    double worst_b = 0.0;
    auto run = [&](const MaskedNetwork& net, std::uint64_t seed) {
        const FdResult r = fd_check(net, 5, seed);
        worst_w = std::max(worst_w, r.max_w);
        worst_b = std::max(worst_b, r.max_bias);
    };
    run(tutor::build_fc({4, 5, 3}, 101), 1001);           // one hidden layer
    run(tutor::build_fc({3, 4, 4, 2}, 102), 1002);        // two hidden layers
    run(tutor::build_fc({5, 2}, 103), 1003);              // no hidden layer
    run(random_sparse(5, 6, 3, 0.5, 104), 1004);          // sparse with skips
    run(random_sparse(2, 2, 2, 1.0, 105), 1005);          // six neurons, dense legal
    run(combined_shape(106), 1006);                       // two subnets plus head
    CHECK(worst_w < 1e-4);
    CHECK(worst_b < 1e-4);
}

TEST_CASE("input gradients match finite differences") {
    const MaskedNetwork net = random_sparse(4, 5, 3, 0.6, 51);
    const Eigen::MatrixXd x = random_inputs(4, 4, 52);
    const Eigen::VectorXi y = random_labels(4, 3, 53);
    const tutor::Gradients g =
        tutor::backward(net, tutor::forward_cache(net, x), x, y);
    const double eps = 1e-5;
    double worst = 0.0;
    Eigen::MatrixXd p = x;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            p(r, c) = x(r, c) + eps;
            const double up = seq_loss(net, p, y);
            p(r, c) = x(r, c) - eps;
            const double down = seq_loss(net, p, y);
            p(r, c) = x(r, c);
            worst = std::max(worst, rel_err(g.inputs(r, c), (up - down) / (2 * eps)));
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("dormant connections receive gradients but training never moves them") {
    const MaskedNetwork net = random_sparse(5, 6, 3, 0.4, 61);
    const Eigen::MatrixXd x = random_inputs(30, 5, 62);
    const Eigen::VectorXi y = random_labels(30, 3, 63);

    const Eigen::MatrixXd acc = tutor::accumulate_gradients(net, x, y, 8);
    const Eigen::MatrixXd legal = tutor::legal_mask(net);
    double dormant_mass = 0.0;
    for (int i = 0; i < net.n_sources(); ++i) {
        for (int j = 0; j < net.n_destinations(); ++j) {
            if (legal(i, j) == 1.0 && net.Mask(i, j) == 0.0) {
                dormant_mass += std::abs(acc(i, j));
            }
            if (legal(i, j) == 0.0) CHECK(acc(i, j) == 0.0);
        }
    }
    CHECK(dormant_mass > 0.0);

    // One full pass in one batch must agree with backward on the whole set.
    const Eigen::MatrixXd whole = tutor::accumulate_gradients(net, x, y, 30);
    const tutor::Gradients g =
        tutor::backward(net, tutor::forward_cache(net, x), x, y);
    CHECK((whole - g.w).cwiseAbs().maxCoeff() <= 1e-15);

    tutor::TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 8;
    cfg.seed = 64;
    const tutor::TrainOutcome out = tutor::train(net, x, y, x, y, cfg);
    tutor::check_structure(out.best);
    for (int i = 0; i < net.n_sources(); ++i) {
        for (int j = 0; j < net.n_destinations(); ++j) {
            if (net.Mask(i, j) == 0.0) CHECK(out.best.W(i, j) == 0.0);
        }
    }
}

TEST_CASE("xor trains to full accuracy within 2000 epochs") {
    Eigen::MatrixXd x(4, 2);
    x << 0, 0, 0, 1, 1, 0, 1, 1;
    Eigen::VectorXi y(4);
    y << 0, 1, 1, 0;
    const MaskedNetwork net = tutor::build_fc({2, 8, 2}, 71);
    tutor::TrainConfig cfg;
    cfg.epochs = 2000;
    cfg.batch_size = 1;
    cfg.patience = -1;
    cfg.seed = 72;
    const tutor::TrainOutcome out = tutor::train(net, x, y, x, y, cfg);
    CHECK(out.best_val_accuracy == 1.0);
    CHECK(tutor::evaluate(out.best, x, y) == 1.0);
}

TEST_CASE("training on separable blobs improves and early stopping kicks in") {
    auto rng = tutor::make_rng(81);
    std::normal_distribution<double> nd(0.0, 0.4);
    const int n = 120;
    Eigen::MatrixXd x(n, 5);
    Eigen::VectorXi y(n);
    for (int r = 0; r < n; ++r) {
        const int cls = r % 2;
        y[r] = cls;
        for (int c = 0; c < 5; ++c) {
            x(r, c) = nd(rng) + (cls == 0 ? -1.2 : 1.2);
        }
    }
    const MaskedNetwork net = tutor::build_fc({5, 16, 2}, 82);
    tutor::TrainConfig cfg;
    cfg.epochs = 500;
    cfg.batch_size = 16;
    cfg.patience = 5;
    cfg.seed = 83;
    const tutor::TrainOutcome out = tutor::train(net, x, y, x, y, cfg);
    CHECK(out.best_val_accuracy >= 0.95);
    CHECK(out.best_epoch >= 0);
    CHECK(out.epoch_losses.size() < 500);  // patience ended the run early
    CHECK(out.epoch_losses.front() > out.epoch_losses.back());
}

TEST_CASE("training is bitwise deterministic in the seed") {
    const Eigen::MatrixXd x = random_inputs(60, 4, 91);
    Eigen::VectorXi y(60);
    for (int r = 0; r < 60; ++r) y[r] = (x(r, 0) + x(r, 2) > 0.0) ? 1 : 0;
    const MaskedNetwork net = tutor::build_fc({4, 12, 2}, 92);
    tutor::TrainConfig cfg;
    cfg.epochs = 12;
    cfg.batch_size = 8;
    cfg.seed = 93;
    const tutor::TrainOutcome a = tutor::train(net, x, y, x, y, cfg);
    const tutor::TrainOutcome b = tutor::train(net, x, y, x, y, cfg);
    CHECK((a.best.W - b.best.W).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.best.bias - b.best.bias).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.best_val_accuracy == b.best_val_accuracy);
    CHECK(a.epoch_losses == b.epoch_losses);

    tutor::TrainConfig other = cfg;
    other.seed = 94;
    const tutor::TrainOutcome c = tutor::train(net, x, y, x, y, other);
    CHECK((a.best.W - c.best.W).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("divergent learning rate halves once then raises") {
    const Eigen::MatrixXd x = random_inputs(16, 3, 95);
    const Eigen::VectorXi y = random_labels(16, 2, 96);
    const MaskedNetwork net = tutor::build_fc({3, 4, 4, 2}, 97);
    tutor::TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 16;
    cfg.learning_rate = 1e200;
    cfg.seed = 98;
    CHECK_THROWS_AS(tutor::train(net, x, y, x, y, cfg), tutor::NonFiniteLoss);
}

TEST_CASE("evaluation breaks argmax ties toward the lowest class") {
    MaskedNetwork net = tutor::build_fc({3, 2}, 99);
    net.W.setZero();
    Eigen::MatrixXd x = random_inputs(3, 3, 100);
    Eigen::VectorXi y(3);
    y << 0, 1, 0;
    CHECK(tutor::evaluate(net, x, y) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("flops track mask density and params track active connections") {
    MaskedNetwork net = tutor::build_fc({10, 20, 4}, 111);
    const tutor::Metrics full = tutor::measure(net);
    CHECK(full.param_count == 10 * 20 + 20 * 4 + 24);
    CHECK(full.flops_per_inference == 2 * 280 + 20);

    // Deactivate every other active connection, in scan order.
    int toggle = 0;
    for (int i = 0; i < net.n_sources(); ++i) {
        for (int j = 0; j < net.n_destinations(); ++j) {
            if (net.Mask(i, j) == 1.0 && (toggle++ % 2 == 0)) {
                net.Mask(i, j) = 0.0;
                net.W(i, j) = 0.0;
            }
        }
    }
    tutor::check_structure(net);
    const tutor::Metrics half = tutor::measure(net);
    const long long ones = static_cast<long long>(net.Mask.sum());
    CHECK(ones == 140);
    long long live = 0;
    for (int h = 0; h < net.n_hidden; ++h) {
        if (net.Mask.row(net.n_in + h).sum() > 0.0) ++live;
    }
    CHECK(half.param_count == ones + live + net.n_out);
    CHECK(half.flops_per_inference == 2 * ones + live);
    CHECK(std::abs(half.flops_per_inference - full.flops_per_inference / 2) <=
          net.n_hidden);
}
