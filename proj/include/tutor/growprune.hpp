#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "tutor/network.hpp"

namespace tutor {

enum class GrowthMode { Full, Gradient };

/// Result of one architecture mutation. Ops that cannot act (no dormant
/// connections left, neuron budget reached) return the net unchanged and say
/// why in `notice` instead of throwing.
struct MutationOutcome {
    MaskedNetwork net;
    long long changed = 0;   // connections touched, or 1 when a neuron was added
    int neuron_index = -1;   // hidden neuron that was duplicated, if any
    std::string notice;
};

/// Connection growth. Full mode activates every order-legal position.
/// Gradient mode accumulates |weight gradient| over one epoch of `x`/`y` in
/// batches, takes t as the k-th largest magnitude over order-legal positions
/// with k = ceil(alpha_g * #legal), and activates dormant positions whose
/// magnitude is strictly above t. Newly activated weights start at zero.
MutationOutcome grow_connections(const MaskedNetwork& net,
                                 const Eigen::MatrixXd& x,
                                 const Eigen::VectorXi& y, int batch_size,
                                 double alpha_g, GrowthMode mode);

/// Magnitude pruning: t is the k-th largest |w| over active connections with
/// k = ceil(alpha_p * #active); connections with |w| < t are removed, |w| >= t
/// survive. alpha_p is therefore the fraction kept, up to ties at t.
MutationOutcome prune_connections(const MaskedNetwork& net, double alpha_p);

/// Duplicates the hidden neuron with the highest mean absolute activation
/// over `x`, inserting the copy directly after it in the neuron order with
/// the same mask row/column. Active weights of the copy get Gaussian noise
/// with sigma = noise_scale * stddev of the duplicated neuron's active
/// weights. Refuses (with a notice) once n_hidden would exceed max_hidden.
MutationOutcome grow_neuron(const MaskedNetwork& net, const Eigen::MatrixXd& x,
                            double noise_scale, int max_hidden,
                            std::uint64_t seed);

/// Per-iteration knobs of the synthesis loop.
struct GrowPruneStep {
    GrowthMode growth = GrowthMode::Gradient;
    bool grow_neuron = false;
    double prune_keep_ratio = 0.5;
};

struct GrowPruneConfig {
    std::vector<GrowPruneStep> steps;  // one entry per iteration
    int epochs_per_step = 20;
    double growth_ratio = 0.1;
    double neuron_growth_noise_scale = 0.1;
    int hidden_cap_multiple = 4;  // budget = multiple x initial hidden count
    std::uint64_t seed = 0;
    std::string trace_path;  // JSON lines written here when nonempty
};

/// Five iterations: a full-growth warm start, then gradient growth with one
/// neuron duplication each, pruning toward a decreasing keep schedule.
GrowPruneConfig default_growprune_config();

struct TraceRow {
    int iteration = 0;
    std::string op;
    long long active_connections = 0;
    int hidden_neurons = 0;
    double val_accuracy = 0.0;
};

struct SynthesisResult {
    MaskedNetwork best;
    double best_val_accuracy = 0.0;
    int best_iteration = -1;  // -1 means the starting net was never beaten
    std::vector<TraceRow> trace;
};

/// Grow-and-prune synthesis. Each iteration runs [neuron growth if enabled,
/// connection growth, short training, pruning, short training], scores the
/// result on the validation set, and the best snapshot across all iterations
/// (the starting net included) is returned. Ties prefer fewer parameters,
/// then the earlier snapshot.
SynthesisResult synthesize(const MaskedNetwork& net,
                           const Eigen::MatrixXd& x_train,
                           const Eigen::VectorXi& y_train,
                           const Eigen::MatrixXd& x_val,
                           const Eigen::VectorXi& y_val,
                           const GrowPruneConfig& cfg,
                           const TrainConfig& train_cfg);

}  // namespace tutor
