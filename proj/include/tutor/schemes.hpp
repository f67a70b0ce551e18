#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tutor/network.hpp"
#include "tutor/schema.hpp"
#include "tutor/synthgen.hpp"

namespace tutor {

enum class Scheme { A, B };

const char* to_string(Scheme s);

/// Test-split wrapper that counts every hand-out, so test-set hygiene (one
/// evaluation per scheme, after method selection) is assertable.
class CountedDataset {
  public:
    explicit CountedDataset(Dataset d) : data_(std::move(d)) {}

    const Dataset& get() const {
        ++accesses_;
        return data_;
    }
    long long accesses() const { return accesses_; }

  private:
    Dataset data_;
    mutable long long accesses_ = 0;
};

struct MethodOutcome {
    DensityMethod method = DensityMethod::Mnd;
    MaskedNetwork model;
    double validation_accuracy = 0.0;
    bool failed = false;
    std::string failure;
};

struct SchemeResult {
    MaskedNetwork model;
    Scheme scheme = Scheme::A;
    DensityMethod method = DensityMethod::Mnd;
    double validation_accuracy = 0.0;
    double test_accuracy = 0.0;
    Metrics metrics;
    std::vector<MethodOutcome> per_method;
};

/// Two sub-networks plus a joint head, flattened into one trainable masked
/// network. Each sub-network's output layer becomes a group of
/// identity-activation hidden neurons (its logits); the head stacks FC layers
/// on the concatenated logit groups. Column offsets locate the pieces inside
/// `flat`.
struct CombinedNetwork {
    MaskedNetwork flat;
    int subnet_in = 0;
    int real_logit_col = 0;  // first logit column of the real-data subnet
    int syn_logit_col = 0;   // first logit column of the synthetic subnet
    int head_col = 0;        // first head hidden column
    int subnet_out = 0;      // logit width of each subnet
    std::vector<int> head_widths;
};

/// Flattens subnet_real and subnet_syn (same input/output widths) with a
/// freshly He-initialized head on concat(real logits, syn logits). Subnet
/// parameters are copied; everything stays trainable.
CombinedNetwork build_combined(const MaskedNetwork& subnet_real,
                               const MaskedNetwork& subnet_syn,
                               const std::vector<int>& head_widths,
                               std::uint64_t seed);

/// Scheme A, per synthetic batch: pre-train a copy of the template on the
/// synthetic rows (early stop on a held-out synthetic slice), fine-tune on
/// real training data with validation early stop. The method with the best
/// validation accuracy wins; only the winner touches the test split. A method
/// whose pipeline throws is recorded as failed and skipped.
SchemeResult scheme_a(const MaskedNetwork& arch, const Dataset& train,
                      const Dataset& validation, const CountedDataset& test,
                      const std::vector<SyntheticBatch>& batches,
                      const TrainConfig& cfg);

/// Scheme B, per synthetic batch: one subnet trained on synthetic rows, one
/// on real rows, joined by a two-layer FC head and fine-tuned jointly on real
/// training data. Selection and test hygiene as in scheme_a.
SchemeResult scheme_b(const MaskedNetwork& arch, const Dataset& train,
                      const Dataset& validation, const CountedDataset& test,
                      const std::vector<SyntheticBatch>& batches,
                      const TrainConfig& cfg);

/// Higher validation accuracy wins; an exact tie keeps Scheme A (the smaller
/// model).
SchemeResult select_dnn2(const SchemeResult& a, const SchemeResult& b);

}  // namespace tutor
