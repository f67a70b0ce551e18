#include "tutor/dataset_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tutor/errors.hpp"
#include "tutor/rng.hpp"

namespace tutor {
namespace {

Dataset take_rows(const Dataset& d, const std::vector<int>& idx, SplitRole role) {
  Dataset out;
  out.schema = d.schema;
  out.role = role;
  out.rows.resize(static_cast<Eigen::Index>(idx.size()), d.rows.cols());
  out.labels.resize(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.rows.row(static_cast<Eigen::Index>(r)) = d.rows.row(idx[r]);
    out.labels[static_cast<Eigen::Index>(r)] = d.labels[idx[r]];
  }
  return out;
}

/// Splits `total` into one integer per weight so the parts sum exactly to
/// `total`, assigning leftovers to the largest fractional remainders
/// (ties broken toward the lower index).
std::vector<int> largest_remainder(const std::vector<double>& weights, int total) {
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<int> alloc(weights.size(), 0);
  std::vector<double> frac(weights.size(), 0.0);
  int assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = wsum > 0.0 ? total * weights[i] / wsum : 0.0;
    alloc[i] = static_cast<int>(std::floor(exact));
    frac[i] = exact - alloc[i];
    assigned += alloc[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; assigned < total; ++k) {
    ++alloc[order[k % order.size()]];
    ++assigned;
  }
  return alloc;
}

}  // namespace

Dataset subsample(const Dataset& d, double compression_ratio, std::uint64_t seed) {
  if (!(compression_ratio >= 1.0)) {
    throw InvalidCompression("compression ratio must be >= 1, got " +
                             std::to_string(compression_ratio));
  }
  const int n = static_cast<int>(d.n_rows());
  const int m = static_cast<int>(std::floor(n / compression_ratio));

  const int n_classes = static_cast<int>(d.schema.n_classes());
  std::vector<std::vector<int>> by_class(n_classes);
  for (int r = 0; r < n; ++r) {
    by_class[d.labels[r]].push_back(r);
  }
  std::vector<double> counts(n_classes, 0.0);
  int present = 0;
  for (int c = 0; c < n_classes; ++c) {
    counts[c] = static_cast<double>(by_class[c].size());
    if (!by_class[c].empty()) ++present;
  }
  if (m < present) {
    throw ResultTooSmall("subsample of " + std::to_string(m) +
                         " rows cannot keep all " + std::to_string(present) +
                         " classes represented");
  }

  std::vector<int> quota = largest_remainder(counts, m);
  // Every class that exists in the input must survive with at least one row;
  // steal from the currently largest quota when rounding starved a class.
  for (int c = 0; c < n_classes; ++c) {
    while (quota[c] == 0 && !by_class[c].empty()) {
      const int donor = static_cast<int>(
          std::max_element(quota.begin(), quota.end()) - quota.begin());
      if (quota[donor] < 2) {
        throw ResultTooSmall("cannot keep class '" + d.schema.label.classes[c] +
                             "' represented in a subsample of " + std::to_string(m) +
                             " rows");
      }
      --quota[donor];
      ++quota[c];
    }
    quota[c] = std::min(quota[c], static_cast<int>(by_class[c].size()));
  }

  auto rng = make_rng(derive_seed(seed, "subsample"));
  std::vector<int> chosen;
  chosen.reserve(static_cast<std::size_t>(m));
  for (int c = 0; c < n_classes; ++c) {
    std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
    chosen.insert(chosen.end(), by_class[c].begin(), by_class[c].begin() + quota[c]);
  }
  std::sort(chosen.begin(), chosen.end());
  return take_rows(d, chosen, d.role);
}

std::array<Dataset, 3> split_by_proportions(const Dataset& all, double train_part,
                                            double validation_part, double test_part,
                                            std::uint64_t seed) {
  if (!(train_part > 0.0) || !(validation_part > 0.0) || !(test_part > 0.0)) {
    throw ConfigError("split proportions must all be positive");
  }
  const int n = static_cast<int>(all.n_rows());
  std::vector<int> alloc =
      largest_remainder({train_part, validation_part, test_part}, n);

  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = make_rng(derive_seed(seed, "split"));
  std::shuffle(idx.begin(), idx.end(), rng);

  auto slice = [&](int begin, int count) {
    std::vector<int> part(idx.begin() + begin, idx.begin() + begin + count);
    std::sort(part.begin(), part.end());
    return part;
  };
  std::array<Dataset, 3> out = {
      take_rows(all, slice(0, alloc[0]), SplitRole::Train),
      take_rows(all, slice(alloc[0], alloc[1]), SplitRole::Validation),
      take_rows(all, slice(alloc[0] + alloc[1], alloc[2]), SplitRole::Test)};
  return out;
}

}  // namespace tutor
