#include "tutor/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "tutor/errors.hpp"
#include "tutor/rng.hpp"

namespace tutor {
namespace {

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Eigen::ArrayXd shifted =
        logits.row(r).array() - logits.row(r).maxCoeff();
    const Eigen::ArrayXd e = shifted.exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  return out;
}

double mean_cross_entropy(const Eigen::MatrixXd& logits,
                          const Eigen::VectorXi& y) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse =
        m + std::log((logits.row(r).array() - m).exp().sum());
    total += lse - logits(r, y[r]);
  }
  return total / static_cast<double>(logits.rows());
}

int argmax_row(const Eigen::MatrixXd& m, Eigen::Index r) {
  int best = 0;
  for (Eigen::Index c = 1; c < m.cols(); ++c) {
    if (m(r, c) > m(r, best)) best = static_cast<int>(c);
  }
  return best;
}

}  // namespace

Eigen::MatrixXd legal_mask(const MaskedNetwork& net) {
  Eigen::MatrixXd legal =
      Eigen::MatrixXd::Zero(net.n_sources(), net.n_destinations());
  for (int i = 0; i < net.n_sources(); ++i) {
    for (int j = 0; j < net.n_destinations(); ++j) {
      if (j >= net.n_hidden || i < net.n_in + j) legal(i, j) = 1.0;
    }
  }
  return legal;
}

void check_structure(const MaskedNetwork& net) {
  if (net.W.rows() != net.n_sources() || net.W.cols() != net.n_destinations() ||
      net.Mask.rows() != net.W.rows() || net.Mask.cols() != net.W.cols() ||
      net.bias.size() != net.n_destinations() ||
      static_cast<int>(net.hidden_activation.size()) != net.n_hidden) {
    throw Error("network dimensions are inconsistent");
  }
  const Eigen::MatrixXd legal = legal_mask(net);
  for (int i = 0; i < net.n_sources(); ++i) {
    for (int j = 0; j < net.n_destinations(); ++j) {
      const double m = net.Mask(i, j);
      if (m != 0.0 && m != 1.0) {
        throw Error("mask entries must be exactly 0 or 1");
      }
      if (m == 1.0 && legal(i, j) == 0.0) {
        throw Error("mask activates an order-illegal connection");
      }
      if (m == 0.0 && net.W(i, j) != 0.0) {
        throw Error("dormant weight is not stored as zero");
      }
    }
  }
}

MaskedNetwork build_fc(const std::vector<int>& layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2) {
    throw ConfigError("an MLP needs at least input and output layers");
  }
  for (int s : layer_sizes) {
    if (s < 1) throw ConfigError("layer sizes must be positive");
  }
  MaskedNetwork net;
  net.n_in = layer_sizes.front();
  net.n_out = layer_sizes.back();
  net.n_hidden = 0;
  for (std::size_t l = 1; l + 1 < layer_sizes.size(); ++l) {
    net.n_hidden += layer_sizes[l];
  }
  net.W = Eigen::MatrixXd::Zero(net.n_sources(), net.n_destinations());
  net.Mask = Eigen::MatrixXd::Zero(net.n_sources(), net.n_destinations());
  net.bias = Eigen::VectorXd::Zero(net.n_destinations());
  net.hidden_activation.assign(static_cast<std::size_t>(net.n_hidden),
                               Activation::Relu);

  auto rng = make_rng(derive_seed(seed, "he-init"));
  int src_begin = 0;        // row of the first neuron in the source layer
  int hidden_done = 0;      // hidden neurons in layers before the dest layer
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const int fan_in = layer_sizes[l];
    const bool dest_is_output = (l + 2 == layer_sizes.size());
    const int dest_begin = dest_is_output ? net.n_hidden : hidden_done;
    const int dest_count = layer_sizes[l + 1];
    std::normal_distribution<double> he(0.0, std::sqrt(2.0 / fan_in));
    for (int dj = 0; dj < dest_count; ++dj) {
      for (int si = 0; si < fan_in; ++si) {
        net.Mask(src_begin + si, dest_begin + dj) = 1.0;
        net.W(src_begin + si, dest_begin + dj) = he(rng);
      }
    }
    src_begin = (l == 0) ? net.n_in : src_begin + layer_sizes[l];
    if (!dest_is_output) hidden_done += dest_count;
  }
  return net;
}

std::vector<std::pair<int, int>> forward_blocks(const MaskedNetwork& net) {
  std::vector<std::pair<int, int>> blocks;
  int start = 0;
  for (int h = 0; h < net.n_hidden; ++h) {
    const int depth = h - start;  // hidden sources inside the open block
    if (depth > 0 &&
        (net.Mask.col(h).segment(net.n_in + start, depth).array() != 0.0)
            .any()) {
      blocks.push_back({start, h});
      start = h;
    }
  }
  if (net.n_hidden > 0) blocks.push_back({start, net.n_hidden});
  return blocks;
}

ForwardCache forward_cache(const MaskedNetwork& net, const Eigen::MatrixXd& x) {
  if (static_cast<int>(x.cols()) != net.n_in) {
    throw DimensionMismatch("network expects " + std::to_string(net.n_in) +
                            " inputs, got " + std::to_string(x.cols()));
  }
  const Eigen::Index n = x.rows();
  ForwardCache cache;
  cache.activations.resize(n, net.n_sources());
  cache.activations.leftCols(net.n_in) = x;
  cache.pre.resize(n, net.n_hidden);

  for (const auto& [s, e] : forward_blocks(net)) {
    const int w = e - s;
    const int visible = net.n_in + s;
    Eigen::MatrixXd pre =
        cache.activations.leftCols(visible) * net.W.block(0, s, visible, w);
    pre.rowwise() += net.bias.segment(s, w).transpose();
    cache.pre.middleCols(s, w) = pre;
    for (int k = 0; k < w; ++k) {
      const auto col = pre.col(k);
      if (net.hidden_activation[static_cast<std::size_t>(s + k)] ==
          Activation::Relu) {
        cache.activations.col(net.n_in + s + k) = col.cwiseMax(0.0);
      } else {
        cache.activations.col(net.n_in + s + k) = col;
      }
    }
  }

  cache.logits = cache.activations *
                 net.W.block(0, net.n_hidden, net.n_sources(), net.n_out);
  cache.logits.rowwise() += net.bias.tail(net.n_out).transpose();
  return cache;
}

Eigen::MatrixXd forward(const MaskedNetwork& net, const Eigen::MatrixXd& x) {
  return softmax_rows(forward_cache(net, x).logits);
}

Gradients backward(const MaskedNetwork& net, const ForwardCache& cache,
                   const Eigen::MatrixXd& x, const Eigen::VectorXi& y) {
  const Eigen::Index n = x.rows();
  Gradients g;
  g.loss = mean_cross_entropy(cache.logits, y);

  Eigen::MatrixXd d_logits = softmax_rows(cache.logits);
  for (Eigen::Index r = 0; r < n; ++r) d_logits(r, y[r]) -= 1.0;
  d_logits /= static_cast<double>(n);

  // d(post-activation) for every source neuron, seeded by the output layer.
  Eigen::MatrixXd d_act =
      d_logits *
      net.W.block(0, net.n_hidden, net.n_sources(), net.n_out).transpose();

  Eigen::MatrixXd d_pre(n, net.n_destinations());
  d_pre.rightCols(net.n_out) = d_logits;

  const auto blocks = forward_blocks(net);
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
    const auto [s, e] = *it;
    const int w = e - s;
    const int visible = net.n_in + s;
    Eigen::MatrixXd block = d_act.middleCols(visible, w);
    for (int k = 0; k < w; ++k) {
      if (net.hidden_activation[static_cast<std::size_t>(s + k)] ==
          Activation::Relu) {
        block.col(k) = block.col(k).cwiseProduct(
            (cache.pre.col(s + k).array() > 0.0).cast<double>().matrix());
      }
    }
    d_pre.middleCols(s, w) = block;
    d_act.leftCols(visible) +=
        block * net.W.block(0, s, visible, w).transpose();
  }

  g.w = cache.activations.transpose() * d_pre;
  g.w = g.w.cwiseProduct(legal_mask(net));
  g.bias = d_pre.colwise().sum().transpose();
  g.inputs = d_act.leftCols(net.n_in);
  return g;
}

double cross_entropy(const MaskedNetwork& net, const Eigen::MatrixXd& x,
                     const Eigen::VectorXi& y) {
  return mean_cross_entropy(forward_cache(net, x).logits, y);
}

Eigen::MatrixXd accumulate_gradients(const MaskedNetwork& net,
                                     const Eigen::MatrixXd& x,
                                     const Eigen::VectorXi& y, int batch_size) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  Eigen::MatrixXd total =
      Eigen::MatrixXd::Zero(net.n_sources(), net.n_destinations());
  for (Eigen::Index begin = 0; begin < x.rows(); begin += batch_size) {
    const Eigen::Index count = std::min<Eigen::Index>(batch_size, x.rows() - begin);
    const Eigen::MatrixXd xb = x.middleRows(begin, count);
    const Eigen::VectorXi yb = y.segment(begin, count);
    const ForwardCache cache = forward_cache(net, xb);
    total += backward(net, cache, xb, yb).w;
  }
  return total;
}

TrainOutcome train(const MaskedNetwork& net, const Eigen::MatrixXd& x_train,
                   const Eigen::VectorXi& y_train, const Eigen::MatrixXd& x_val,
                   const Eigen::VectorXi& y_val, const TrainConfig& cfg) {
  if (cfg.batch_size < 1 || !(cfg.learning_rate > 0.0)) {
    throw ConfigError("batch size must be >= 1 and learning rate positive");
  }
  const Eigen::Index n = x_train.rows();
  MaskedNetwork cur = net;

  Eigen::MatrixXd m_w = Eigen::MatrixXd::Zero(cur.W.rows(), cur.W.cols());
  Eigen::MatrixXd v_w = m_w;
  Eigen::VectorXd m_b = Eigen::VectorXd::Zero(cur.bias.size());
  Eigen::VectorXd v_b = m_b;
  long long t = 0;

  TrainOutcome out;
  out.best = cur;
  out.best_val_accuracy = evaluate(cur, x_val, y_val);
  out.best_epoch = -1;

  auto rng = make_rng(derive_seed(cfg.seed, "train-shuffle"));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  double lr = cfg.learning_rate;
  bool already_halved = false;
  int epochs_since_best = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const MaskedNetwork snapshot = cur;
    const Eigen::MatrixXd snap_mw = m_w, snap_vw = v_w;
    const Eigen::VectorXd snap_mb = m_b, snap_vb = v_b;
    const long long snap_t = t;

    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    bool aborted = false;

    for (Eigen::Index begin = 0; begin < n; begin += cfg.batch_size) {
      const Eigen::Index count =
          std::min<Eigen::Index>(cfg.batch_size, n - begin);
      Eigen::MatrixXd xb(count, x_train.cols());
      Eigen::VectorXi yb(count);
      for (Eigen::Index k = 0; k < count; ++k) {
        xb.row(k) = x_train.row(order[static_cast<std::size_t>(begin + k)]);
        yb[k] = y_train[order[static_cast<std::size_t>(begin + k)]];
      }
      const ForwardCache cache = forward_cache(cur, xb);
      const Gradients g = backward(cur, cache, xb, yb);
      if (!std::isfinite(g.loss)) {
        cur = snapshot;
        m_w = snap_mw;
        v_w = snap_vw;
        m_b = snap_mb;
        v_b = snap_vb;
        t = snap_t;
        if (already_halved) {
          throw NonFiniteLoss("training loss non-finite twice; giving up");
        }
        lr *= 0.5;
        already_halved = true;
        aborted = true;
        break;
      }
      loss_sum += g.loss;
      ++batches;
      ++t;

      const Eigen::MatrixXd gw = g.w.cwiseProduct(cur.Mask);
      m_w = cfg.beta1 * m_w + (1.0 - cfg.beta1) * gw;
      v_w = cfg.beta2 * v_w + (1.0 - cfg.beta2) * gw.cwiseProduct(gw);
      m_b = cfg.beta1 * m_b + (1.0 - cfg.beta1) * g.bias;
      v_b = cfg.beta2 * v_b + (1.0 - cfg.beta2) * g.bias.cwiseProduct(g.bias);
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
      cur.W -= (lr * (m_w / c1).array() /
                ((v_w / c2).array().sqrt() + cfg.epsilon))
                   .matrix();
      cur.W = cur.W.cwiseProduct(cur.Mask);  // dormant weights stay exact zeros
      cur.bias -= (lr * (m_b / c1).array() /
                   ((v_b / c2).array().sqrt() + cfg.epsilon))
                      .matrix();
    }

    out.epoch_losses.push_back(batches > 0 ? loss_sum / batches : 0.0);
    if (aborted) continue;

    const double val_acc = evaluate(cur, x_val, y_val);
    if (val_acc > out.best_val_accuracy) {
      out.best = cur;
      out.best_val_accuracy = val_acc;
      out.best_epoch = epoch;
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
      if (cfg.patience >= 0 && epochs_since_best > cfg.patience) break;
    }
  }
  out.last = std::move(cur);
  return out;
}

double evaluate(const MaskedNetwork& net, const Eigen::MatrixXd& x,
                const Eigen::VectorXi& y) {
  if (x.rows() == 0) return 0.0;
  const Eigen::MatrixXd logits = forward_cache(net, x).logits;
  Eigen::Index correct = 0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    correct += (argmax_row(logits, r) == y[r]) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(x.rows());
}

Metrics measure(const MaskedNetwork& net) {
  Metrics m;
  const long long mask_ones = static_cast<long long>(net.Mask.sum());
  // A hidden neuron's bias is a live parameter (and its activation costs an
  // op) only while the neuron feeds something downstream.
  long long live_hidden = 0;
  for (int h = 0; h < net.n_hidden; ++h) {
    if (net.Mask.row(net.n_in + h).sum() > 0.0) ++live_hidden;
  }
  m.param_count = mask_ones + live_hidden + net.n_out;
  m.flops_per_inference = 2 * mask_ones + live_hidden;
  return m;
}

}  // namespace tutor
