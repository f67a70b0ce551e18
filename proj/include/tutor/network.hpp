#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

namespace tutor {

enum class Activation { Relu, Identity };

/// Feed-forward network over one ordered neuron sequence: inputs first, then
/// hidden neurons in a fixed order, then outputs. A single weight matrix
/// covers every allowed connection; Mask says which are active. A source may
/// feed any neuron that comes after it, so arbitrary skip connections are
/// expressible. Row i is source neuron i (inputs, then hidden); column j is
/// destination j (hidden, then outputs).
///
/// Invariants kept by every operation in this codebase:
///   - Mask entries are exactly 0.0 or 1.0, and only order-legal positions
///     may hold a 1 (see legal_mask).
///   - Dormant weights are stored as exact zeros, so W == W .* Mask always.
struct MaskedNetwork {
    int n_in = 0;
    int n_hidden = 0;
    int n_out = 0;
    Eigen::MatrixXd W;     // (n_in + n_hidden) x (n_hidden + n_out)
    Eigen::MatrixXd Mask;  // same shape
    Eigen::VectorXd bias;  // n_hidden + n_out
    std::vector<Activation> hidden_activation;  // one per hidden neuron

    int n_sources() const { return n_in + n_hidden; }
    int n_destinations() const { return n_hidden + n_out; }
};

/// 1.0 at every order-legal (source, destination) position: inputs reach
/// everything, hidden neuron k reaches hidden neurons after k and all
/// outputs. No backward or self connections.
Eigen::MatrixXd legal_mask(const MaskedNetwork& net);

/// Throws Error if the mask is non-binary, covers an illegal position, or a
/// dormant weight is nonzero.
void check_structure(const MaskedNetwork& net);

/// Standard MLP over consecutive layer sizes, expressed in the global
/// matrix. Active weights are He-initialized; biases start at zero.
MaskedNetwork build_fc(const std::vector<int>& layer_sizes, std::uint64_t seed);

/// Hidden ranges [start, end) with no active intra-range connections; the
/// forward pass computes each range with one matrix product. For an MLP mask
/// the ranges are exactly the layers.
std::vector<std::pair<int, int>> forward_blocks(const MaskedNetwork& net);

struct ForwardCache {
    Eigen::MatrixXd activations;  // n x (n_in + n_hidden), post-activation
    Eigen::MatrixXd pre;          // n x n_hidden, pre-activation
    Eigen::MatrixXd logits;       // n x n_out
};

ForwardCache forward_cache(const MaskedNetwork& net, const Eigen::MatrixXd& x);

/// Class probabilities (softmax over the output logits), rows summing to 1.
Eigen::MatrixXd forward(const MaskedNetwork& net, const Eigen::MatrixXd& x);

struct Gradients {
    Eigen::MatrixXd w;        // full matrix: every order-legal position filled,
                              // dormant connections included (growth needs them)
    Eigen::VectorXd bias;
    Eigen::MatrixXd inputs;   // n x n_in, gradient w.r.t. the input rows
    double loss = 0.0;        // mean cross-entropy of the batch
};

/// Mean cross-entropy loss and its gradients for one batch.
Gradients backward(const MaskedNetwork& net, const ForwardCache& cache,
                   const Eigen::MatrixXd& x, const Eigen::VectorXi& y);

double cross_entropy(const MaskedNetwork& net, const Eigen::MatrixXd& x,
                     const Eigen::VectorXi& y);

/// Signed sum of batch weight-gradients over one pass through the data in
/// batch order; connection growth thresholds its absolute values.
Eigen::MatrixXd accumulate_gradients(const MaskedNetwork& net,
                                     const Eigen::MatrixXd& x,
                                     const Eigen::VectorXi& y, int batch_size);

struct TrainConfig {
    int epochs = 150;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int patience = 20;  // epochs without validation improvement; < 0 disables
    std::uint64_t seed = 0;
};

struct TrainOutcome {
    MaskedNetwork best;          // snapshot with the best validation accuracy
    MaskedNetwork last;          // state when training stopped, no rollback
    double best_val_accuracy = 0.0;
    int best_epoch = -1;         // -1 means the untrained starting point won
    std::vector<double> epoch_losses;
};

/// Mini-batch Adam on the masked cross-entropy objective. Dormant gradients
/// are computed but never applied; dormant weights stay exactly zero.
/// A non-finite batch loss restores the last epoch snapshot and halves the
/// learning rate once; a second occurrence raises NonFiniteLoss.
TrainOutcome train(const MaskedNetwork& net, const Eigen::MatrixXd& x_train,
                   const Eigen::VectorXi& y_train, const Eigen::MatrixXd& x_val,
                   const Eigen::VectorXi& y_val, const TrainConfig& cfg);

double evaluate(const MaskedNetwork& net, const Eigen::MatrixXd& x,
                const Eigen::VectorXi& y);

struct Metrics {
    double accuracy = 0.0;
    long long flops_per_inference = 0;
    long long param_count = 0;
};

/// param_count = active mask entries + biases of outputs and of hidden
/// neurons with at least one active outgoing connection. FLOPs count one
/// multiply-accumulate pair (2 ops) per active connection plus one
/// activation op per hidden neuron that still feeds something.
Metrics measure(const MaskedNetwork& net);

}  // namespace tutor
