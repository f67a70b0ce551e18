#include "tutor/growprune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <vector>

#include "json.hpp"
#include "tutor/errors.hpp"
#include "tutor/rng.hpp"

namespace tutor {
namespace {

/// k-th largest of `values` with k = ceil(alpha * values.size()), clamped to
/// the valid range.
double rank_threshold(std::vector<double> values, double alpha) {
  const auto size = static_cast<long long>(values.size());
  long long k = static_cast<long long>(
      std::ceil(alpha * static_cast<double>(size)));
  k = std::max<long long>(1, std::min(k, size));
  std::nth_element(values.begin(), values.begin() + (k - 1), values.end(),
                   std::greater<double>());
  return values[static_cast<std::size_t>(k - 1)];
}

void require_ratio(double alpha, const char* what) {
  if (!(alpha > 0.0) || alpha > 1.0) {
    throw ConfigError(std::string(what) + " must lie in (0, 1]");
  }
}

}  // namespace

MutationOutcome grow_connections(const MaskedNetwork& net,
                                 const Eigen::MatrixXd& x,
                                 const Eigen::VectorXi& y, int batch_size,
                                 double alpha_g, GrowthMode mode) {
  require_ratio(alpha_g, "growth ratio");
  MutationOutcome out;
  out.net = net;

  const Eigen::MatrixXd legal = legal_mask(net);
  long long dormant = 0;
  for (int i = 0; i < net.n_sources(); ++i) {
    for (int j = 0; j < net.n_destinations(); ++j) {
      if (legal(i, j) == 1.0 && net.Mask(i, j) == 0.0) ++dormant;
    }
  }
  if (dormant == 0) {
    out.notice = "NoDormantConnections";
    return out;
  }

  if (mode == GrowthMode::Full) {
    out.net.Mask = legal;
    out.changed = dormant;
    return out;
  }

  const Eigen::MatrixXd acc =
      accumulate_gradients(net, x, y, batch_size).cwiseAbs();
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(net.n_sources()) *
                 static_cast<std::size_t>(net.n_destinations()));
  for (int i = 0; i < net.n_sources(); ++i) {
    for (int j = 0; j < net.n_destinations(); ++j) {
      if (legal(i, j) == 1.0) values.push_back(acc(i, j));
    }
  }
  const double t = rank_threshold(std::move(values), alpha_g);
  for (int i = 0; i < net.n_sources(); ++i) {
    for (int j = 0; j < net.n_destinations(); ++j) {
      if (legal(i, j) == 1.0 && net.Mask(i, j) == 0.0 && acc(i, j) > t) {
        out.net.Mask(i, j) = 1.0;  // weight stays zero until trained
        ++out.changed;
      }
    }
  }
  return out;
}

MutationOutcome prune_connections(const MaskedNetwork& net, double alpha_p) {
  require_ratio(alpha_p, "prune keep ratio");
  MutationOutcome out;
  out.net = net;

  std::vector<double> values;
  for (int i = 0; i < net.n_sources(); ++i) {
    for (int j = 0; j < net.n_destinations(); ++j) {
      if (net.Mask(i, j) == 1.0) values.push_back(std::abs(net.W(i, j)));
    }
  }
  if (values.empty()) {
    throw Error("pruning needs at least one active connection");
  }
  const double t = rank_threshold(std::move(values), alpha_p);
  for (int i = 0; i < net.n_sources(); ++i) {
    for (int j = 0; j < net.n_destinations(); ++j) {
      if (out.net.Mask(i, j) == 1.0 && std::abs(out.net.W(i, j)) < t) {
        out.net.Mask(i, j) = 0.0;
        out.net.W(i, j) = 0.0;
        ++out.changed;
      }
    }
  }
  return out;
}

MutationOutcome grow_neuron(const MaskedNetwork& net, const Eigen::MatrixXd& x,
                            double noise_scale, int max_hidden,
                            std::uint64_t seed) {
  MutationOutcome out;
  out.net = net;
  if (net.n_hidden == 0) {
    out.notice = "NoHiddenNeurons";
    return out;
  }
  if (net.n_hidden + 1 > max_hidden) {
    out.notice = "NeuronBudgetExceeded";
    return out;
  }

  const ForwardCache cache = forward_cache(net, x);
  const Eigen::VectorXd mean_abs = cache.activations
                                       .middleCols(net.n_in, net.n_hidden)
                                       .cwiseAbs()
                                       .colwise()
                                       .mean()
                                       .transpose();
  int chosen = 0;
  for (int h = 1; h < net.n_hidden; ++h) {
    if (mean_abs[h] > mean_abs[chosen]) chosen = h;
  }
  out.neuron_index = chosen;
  out.changed = 1;

  // Sigma from the duplicated neuron's active weights (incoming + outgoing).
  std::vector<double> active;
  for (int j = 0; j < net.n_destinations(); ++j) {
    if (net.Mask(net.n_in + chosen, j) == 1.0) {
      active.push_back(net.W(net.n_in + chosen, j));
    }
  }
  for (int i = 0; i < net.n_sources(); ++i) {
    if (net.Mask(i, chosen) == 1.0) active.push_back(net.W(i, chosen));
  }
  double sigma = 0.0;
  if (!active.empty()) {
    double mean = 0.0;
    for (double w : active) mean += w;
    mean /= static_cast<double>(active.size());
    double var = 0.0;
    for (double w : active) var += (w - mean) * (w - mean);
    sigma = noise_scale * std::sqrt(var / static_cast<double>(active.size()));
  }
  if (sigma == 0.0 && noise_scale > 0.0) {
    sigma = noise_scale;  // still break symmetry when the spread is zero
  }

  MaskedNetwork grown;
  grown.n_in = net.n_in;
  grown.n_hidden = net.n_hidden + 1;
  grown.n_out = net.n_out;
  grown.W = Eigen::MatrixXd::Zero(grown.n_sources(), grown.n_destinations());
  grown.Mask = Eigen::MatrixXd::Zero(grown.n_sources(), grown.n_destinations());
  grown.bias = Eigen::VectorXd::Zero(grown.n_destinations());

  // The copy sits directly after `chosen` in the order: old hidden index h
  // maps to h for h <= chosen and to h + 1 afterwards.
  const int new_hidden = chosen + 1;
  const int new_row = net.n_in + new_hidden;
  auto map_row = [&](int r) { return r < new_row ? r : r + 1; };
  auto map_col = [&](int c) { return c < new_hidden ? c : c + 1; };

  for (int i = 0; i < net.n_sources(); ++i) {
    for (int j = 0; j < net.n_destinations(); ++j) {
      grown.W(map_row(i), map_col(j)) = net.W(i, j);
      grown.Mask(map_row(i), map_col(j)) = net.Mask(i, j);
    }
  }
  for (int j = 0; j < net.n_destinations(); ++j) {
    grown.bias[map_col(j)] = net.bias[j];
  }
  grown.bias[new_hidden] = net.bias[chosen];
  grown.hidden_activation = net.hidden_activation;
  grown.hidden_activation.insert(
      grown.hidden_activation.begin() + new_hidden,
      net.hidden_activation[static_cast<std::size_t>(chosen)]);

  auto rng = make_rng(derive_seed(seed, "grow-neuron"));
  std::normal_distribution<double> noise(0.0, 1.0);
  // Outgoing row: copy of the chosen neuron's row, noise on active entries.
  for (int j = 0; j < net.n_destinations(); ++j) {
    if (net.Mask(net.n_in + chosen, j) == 1.0) {
      const int col = map_col(j);
      grown.Mask(new_row, col) = 1.0;
      grown.W(new_row, col) =
          net.W(net.n_in + chosen, j) + sigma * noise(rng);
    }
  }
  // Incoming column: copy of the chosen neuron's column.
  for (int i = 0; i < net.n_sources(); ++i) {
    if (net.Mask(i, chosen) == 1.0) {
      const int row = map_row(i);
      grown.Mask(row, new_hidden) = 1.0;
      grown.W(row, new_hidden) = net.W(i, chosen) + sigma * noise(rng);
    }
  }
  check_structure(grown);
  out.net = std::move(grown);
  return out;
}

GrowPruneConfig default_growprune_config() {
  GrowPruneConfig cfg;
  const double keep[] = {0.5, 0.3, 0.2, 0.15, 0.1};
  for (int it = 0; it < 5; ++it) {
    GrowPruneStep step;
    step.growth = (it == 0) ? GrowthMode::Full : GrowthMode::Gradient;
    step.grow_neuron = (it > 0);
    step.prune_keep_ratio = keep[it];
    cfg.steps.push_back(step);
  }
  return cfg;
}

SynthesisResult synthesize(const MaskedNetwork& net,
                           const Eigen::MatrixXd& x_train,
                           const Eigen::VectorXi& y_train,
                           const Eigen::MatrixXd& x_val,
                           const Eigen::VectorXi& y_val,
                           const GrowPruneConfig& cfg,
                           const TrainConfig& train_cfg) {
  if (cfg.steps.empty()) throw ConfigError("synthesis needs at least one step");
  if (cfg.epochs_per_step < 1) {
    throw ConfigError("epochs per step must be >= 1");
  }
  require_ratio(cfg.growth_ratio, "growth ratio");
  for (const GrowPruneStep& step : cfg.steps) {
    require_ratio(step.prune_keep_ratio, "prune keep ratio");
  }

  SynthesisResult result;
  MaskedNetwork cur = net;
  result.best = cur;
  result.best_val_accuracy = evaluate(cur, x_val, y_val);
  result.best_iteration = -1;
  long long best_params = measure(cur).param_count;
  const int hidden_cap = cfg.hidden_cap_multiple * net.n_hidden;

  auto record = [&](int iteration, const char* op) {
    TraceRow row;
    row.iteration = iteration;
    row.op = op;
    row.active_connections = static_cast<long long>(cur.Mask.sum());
    row.hidden_neurons = cur.n_hidden;
    row.val_accuracy = evaluate(cur, x_val, y_val);
    result.trace.push_back(std::move(row));
  };

  for (int it = 0; it < static_cast<int>(cfg.steps.size()); ++it) {
    const GrowPruneStep& step = cfg.steps[static_cast<std::size_t>(it)];
    if (step.grow_neuron) {
      cur = grow_neuron(cur, x_train, cfg.neuron_growth_noise_scale,
                        hidden_cap,
                        derive_seed(cfg.seed, "neuron",
                                    static_cast<std::uint64_t>(it)))
                .net;
      record(it, "neuron_growth");
    }
    cur = grow_connections(cur, x_train, y_train, train_cfg.batch_size,
                           cfg.growth_ratio, step.growth)
              .net;
    record(it, "connection_growth");

    // The short training phases carry the final weights forward (otherwise
    // freshly grown zero-weight connections could never come alive); the
    // validation-based selection happens at iteration granularity below.
    TrainConfig tc = train_cfg;
    tc.epochs = cfg.epochs_per_step;
    tc.patience = -1;
    tc.seed =
        derive_seed(cfg.seed, "train-grow", static_cast<std::uint64_t>(it));
    cur = train(cur, x_train, y_train, x_val, y_val, tc).last;
    record(it, "train");

    cur = prune_connections(cur, step.prune_keep_ratio).net;
    record(it, "prune");

    tc.seed =
        derive_seed(cfg.seed, "train-prune", static_cast<std::uint64_t>(it));
    cur = train(cur, x_train, y_train, x_val, y_val, tc).last;
    record(it, "train");

    const double acc = result.trace.back().val_accuracy;
    const long long params = measure(cur).param_count;
    if (acc > result.best_val_accuracy ||
        (acc == result.best_val_accuracy && params < best_params)) {
      result.best = cur;
      result.best_val_accuracy = acc;
      result.best_iteration = it;
      best_params = params;
    }
  }

  if (!cfg.trace_path.empty()) {
    std::ofstream file(cfg.trace_path);
    if (!file) throw Error("cannot open trace file: " + cfg.trace_path);
    for (const TraceRow& row : result.trace) {
      nlohmann::json line;
      line["iteration"] = row.iteration;
      line["op"] = row.op;
      line["active_connections"] = row.active_connections;
      line["hidden_neurons"] = row.hidden_neurons;
      line["val_accuracy"] = row.val_accuracy;
      file << line.dump() << "\n";
    }
  }
  return result;
}

}  // namespace tutor
