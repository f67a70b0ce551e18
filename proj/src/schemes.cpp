#include "tutor/schemes.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <utility>

#include "tutor/encoding.hpp"
#include "tutor/errors.hpp"
#include "tutor/rng.hpp"

namespace tutor {
namespace {

/// Pre-training on a synthetic batch: the last fifth (at least one row) is
/// held out for early stopping, the rest is trained on. Rows are in draw
/// order, which carries no structure, so a positional split is unbiased.
TrainOutcome pretrain_on_synthetic(const MaskedNetwork& arch,
                                   const EncodedMatrix& enc,
                                   const Eigen::VectorXi& labels,
                                   const TrainConfig& cfg, std::uint64_t seed) {
  const int n = enc.n_rows();
  if (n < 2) throw Error("synthetic batch too small to hold out from");
  const int holdout = std::max(1, n / 5);
  const int fit = n - holdout;
  TrainConfig tc = cfg;
  tc.seed = seed;
  return train(arch, enc.values.topRows(fit), labels.head(fit),
               enc.values.bottomRows(holdout), labels.tail(holdout), tc);
}

int pick_winner(const std::vector<MethodOutcome>& outcomes, Scheme scheme) {
  int winner = -1;
  for (int i = 0; i < static_cast<int>(outcomes.size()); ++i) {
    const MethodOutcome& mo = outcomes[static_cast<std::size_t>(i)];
    if (mo.failed) continue;
    if (winner < 0 ||
        mo.validation_accuracy >
            outcomes[static_cast<std::size_t>(winner)].validation_accuracy) {
      winner = i;
    }
  }
  if (winner < 0) {
    throw StageError("scheme",
                     std::string("every synthetic method failed in scheme ") +
                         to_string(scheme));
  }
  return winner;
}

/// Shared tail of both schemes: pick the best method on validation, then
/// evaluate that single model on the test split exactly once.
SchemeResult finish(Scheme scheme, std::vector<MethodOutcome> outcomes,
                    const EncodedMatrix& enc_train,
                    const CountedDataset& test) {
  SchemeResult res;
  res.scheme = scheme;
  const int w = pick_winner(outcomes, scheme);
  const MethodOutcome& mo = outcomes[static_cast<std::size_t>(w)];
  res.model = mo.model;
  res.method = mo.method;
  res.validation_accuracy = mo.validation_accuracy;

  const Dataset& t = test.get();
  const EncodedMatrix enc_test = encode(t, true, enc_train.standardizer);
  res.test_accuracy = evaluate(res.model, enc_test.values, t.labels);
  res.metrics = measure(res.model);
  res.metrics.accuracy = res.test_accuracy;
  res.per_method = std::move(outcomes);
  return res;
}

}  // namespace

const char* to_string(Scheme s) { return s == Scheme::A ? "A" : "B"; }

CombinedNetwork build_combined(const MaskedNetwork& subnet_real,
                               const MaskedNetwork& subnet_syn,
                               const std::vector<int>& head_widths,
                               std::uint64_t seed) {
  if (subnet_real.n_in != subnet_syn.n_in ||
      subnet_real.n_out != subnet_syn.n_out) {
    throw ConfigError("sub-networks must share input and output widths");
  }
  if (head_widths.empty()) {
    throw ConfigError("the head needs at least one hidden layer");
  }
  check_structure(subnet_real);
  check_structure(subnet_syn);

  const int d = subnet_real.n_in;
  const int c = subnet_real.n_out;
  CombinedNetwork combined;
  combined.subnet_in = d;
  combined.subnet_out = c;
  combined.head_widths = head_widths;
  combined.real_logit_col = subnet_real.n_hidden;
  const int syn_hidden_col = combined.real_logit_col + c;
  combined.syn_logit_col = syn_hidden_col + subnet_syn.n_hidden;
  combined.head_col = combined.syn_logit_col + c;
  int head_total = 0;
  for (int w : head_widths) {
    if (w < 1) throw ConfigError("head widths must be positive");
    head_total += w;
  }

  MaskedNetwork& flat = combined.flat;
  flat.n_in = d;
  flat.n_hidden = combined.head_col + head_total;
  flat.n_out = c;
  flat.W = Eigen::MatrixXd::Zero(flat.n_sources(), flat.n_destinations());
  flat.Mask = Eigen::MatrixXd::Zero(flat.n_sources(), flat.n_destinations());
  flat.bias = Eigen::VectorXd::Zero(flat.n_destinations());
  flat.hidden_activation.assign(static_cast<std::size_t>(flat.n_hidden),
                                Activation::Relu);

  auto copy_subnet = [&](const MaskedNetwork& sub, int hidden_col,
                         int logit_col) {
    auto col_of = [&](int j) {
      return j < sub.n_hidden ? hidden_col + j : logit_col + (j - sub.n_hidden);
    };
    auto row_of = [&](int i) { return i < d ? i : d + hidden_col + (i - d); };
    for (int i = 0; i < sub.n_sources(); ++i) {
      for (int j = 0; j < sub.n_destinations(); ++j) {
        flat.W(row_of(i), col_of(j)) = sub.W(i, j);
        flat.Mask(row_of(i), col_of(j)) = sub.Mask(i, j);
      }
    }
    for (int j = 0; j < sub.n_destinations(); ++j) {
      flat.bias[col_of(j)] = sub.bias[j];
    }
    for (int k = 0; k < sub.n_hidden; ++k) {
      flat.hidden_activation[static_cast<std::size_t>(hidden_col + k)] =
          sub.hidden_activation[static_cast<std::size_t>(k)];
    }
    for (int o = 0; o < c; ++o) {
      flat.hidden_activation[static_cast<std::size_t>(logit_col + o)] =
          Activation::Identity;
    }
  };
  copy_subnet(subnet_real, 0, combined.real_logit_col);
  copy_subnet(subnet_syn, syn_hidden_col, combined.syn_logit_col);

  // Head: He-initialized FC stack over the two logit groups.
  auto rng = make_rng(derive_seed(seed, "head-init"));
  std::vector<int> prev_rows;
  for (int o = 0; o < c; ++o) prev_rows.push_back(d + combined.real_logit_col + o);
  for (int o = 0; o < c; ++o) prev_rows.push_back(d + combined.syn_logit_col + o);

  int col = combined.head_col;
  for (std::size_t layer = 0; layer <= head_widths.size(); ++layer) {
    const bool output = layer == head_widths.size();
    const int width = output ? c : head_widths[layer];
    const int col_begin = output ? flat.n_hidden : col;
    std::normal_distribution<double> he(
        0.0, std::sqrt(2.0 / static_cast<double>(prev_rows.size())));
    for (int dj = 0; dj < width; ++dj) {
      for (int src : prev_rows) {
        flat.Mask(src, col_begin + dj) = 1.0;
        flat.W(src, col_begin + dj) = he(rng);
      }
    }
    if (!output) {
      std::vector<int> next;
      for (int k = 0; k < width; ++k) next.push_back(d + col + k);
      prev_rows = std::move(next);
      col += width;
    }
  }
  check_structure(flat);
  return combined;
}

SchemeResult scheme_a(const MaskedNetwork& arch, const Dataset& train_data,
                      const Dataset& validation, const CountedDataset& test,
                      const std::vector<SyntheticBatch>& batches,
                      const TrainConfig& cfg) {
  if (batches.empty()) {
    throw ConfigError("scheme A needs at least one synthetic batch");
  }
  const EncodedMatrix enc_train = encode(train_data, true);
  const EncodedMatrix enc_val = encode(validation, true, enc_train.standardizer);
  if (arch.n_in != enc_train.width()) {
    throw ConfigError("template input width does not match the encoded data");
  }

  std::vector<MethodOutcome> outcomes;
  for (const SyntheticBatch& batch : batches) {
    MethodOutcome mo;
    mo.method = batch.method;
    try {
      const EncodedMatrix enc_syn =
          encode(batch.data, true, enc_train.standardizer);
      const std::string tag = to_string(batch.method);
      const TrainOutcome pre = pretrain_on_synthetic(
          arch, enc_syn, batch.data.labels, cfg,
          derive_seed(cfg.seed, "pretrain-" + tag));
      TrainConfig tc = cfg;
      tc.seed = derive_seed(cfg.seed, "finetune-" + tag);
      const TrainOutcome fin =
          train(pre.best, enc_train.values, train_data.labels, enc_val.values,
                validation.labels, tc);
      mo.model = fin.best;
      mo.validation_accuracy = fin.best_val_accuracy;
    } catch (const Error& e) {
      mo.failed = true;
      mo.failure = e.what();
    }
    outcomes.push_back(std::move(mo));
  }
  return finish(Scheme::A, std::move(outcomes), enc_train, test);
}

SchemeResult scheme_b(const MaskedNetwork& arch, const Dataset& train_data,
                      const Dataset& validation, const CountedDataset& test,
                      const std::vector<SyntheticBatch>& batches,
                      const TrainConfig& cfg) {
  if (batches.empty()) {
    throw ConfigError("scheme B needs at least one synthetic batch");
  }
  const EncodedMatrix enc_train = encode(train_data, true);
  const EncodedMatrix enc_val = encode(validation, true, enc_train.standardizer);
  if (arch.n_in != enc_train.width()) {
    throw ConfigError("template input width does not match the encoded data");
  }

  // The real-data subnet does not depend on the synthetic method.
  TrainConfig tc_real = cfg;
  tc_real.seed = derive_seed(cfg.seed, "model-real");
  const MaskedNetwork model_real =
      train(arch, enc_train.values, train_data.labels, enc_val.values,
            validation.labels, tc_real)
          .best;

  std::vector<MethodOutcome> outcomes;
  for (const SyntheticBatch& batch : batches) {
    MethodOutcome mo;
    mo.method = batch.method;
    try {
      const EncodedMatrix enc_syn =
          encode(batch.data, true, enc_train.standardizer);
      const std::string tag = to_string(batch.method);
      const MaskedNetwork model_syn =
          pretrain_on_synthetic(arch, enc_syn, batch.data.labels, cfg,
                                derive_seed(cfg.seed, "model-syn-" + tag))
              .best;
      const CombinedNetwork combined = build_combined(
          model_real, model_syn, {32, 16}, derive_seed(cfg.seed, "head-" + tag));
      TrainConfig tc = cfg;
      tc.seed = derive_seed(cfg.seed, "joint-" + tag);
      const TrainOutcome fin =
          train(combined.flat, enc_train.values, train_data.labels,
                enc_val.values, validation.labels, tc);
      mo.model = fin.best;
      mo.validation_accuracy = fin.best_val_accuracy;
    } catch (const Error& e) {
      mo.failed = true;
      mo.failure = e.what();
    }
    outcomes.push_back(std::move(mo));
  }
  return finish(Scheme::B, std::move(outcomes), enc_train, test);
}

SchemeResult select_dnn2(const SchemeResult& a, const SchemeResult& b) {
  if (b.validation_accuracy > a.validation_accuracy) return b;
  return a;
}

}  // namespace tutor
