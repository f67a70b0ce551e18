#include "tutor/forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "tutor/errors.hpp"
#include "tutor/rng.hpp"

namespace tutor {
namespace {

double impurity(const std::vector<int>& counts, int total, SplitCriterion c) {
  if (total == 0) return 0.0;
  double out = (c == SplitCriterion::Gini) ? 1.0 : 0.0;
  for (int k : counts) {
    if (k == 0) continue;
    const double p = static_cast<double>(k) / total;
    if (c == SplitCriterion::Gini) {
      out -= p * p;
    } else {
      out -= p * std::log2(p);
    }
  }
  return out;
}

int majority(const std::vector<int>& counts) {
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) -
                          counts.begin());  // first max wins ties
}

struct BestSplit {
  double gain = 0.0;  // only strictly positive gains are accepted
  int feature = -1;
  double threshold = 0.0;
  int level = -1;
  bool found = false;
};

class TreeBuilder {
 public:
  TreeBuilder(const Dataset& data, SplitCriterion criterion, int max_depth,
              int feature_subsample, std::uint64_t seed)
      : data_(data),
        criterion_(criterion),
        max_depth_(max_depth),
        feature_subsample_(feature_subsample),
        rng_(make_rng(seed)) {}

  Tree build() {
    std::vector<int> all(static_cast<std::size_t>(data_.n_rows()));
    std::iota(all.begin(), all.end(), 0);
    Tree t;
    grow(t, all, 0);
    return t;
  }

 private:
  std::vector<int> class_counts(const std::vector<int>& idx) const {
    std::vector<int> counts(static_cast<std::size_t>(data_.schema.n_classes()), 0);
    for (int i : idx) ++counts[static_cast<std::size_t>(data_.labels[i])];
    return counts;
  }

  std::vector<int> feature_subset() {
    std::vector<int> features(static_cast<std::size_t>(data_.schema.n_features()));
    std::iota(features.begin(), features.end(), 0);
    std::shuffle(features.begin(), features.end(), rng_);
    features.resize(static_cast<std::size_t>(
        std::min<int>(feature_subsample_, data_.schema.n_features())));
    return features;
  }

  BestSplit find_split(const std::vector<int>& idx,
                       const std::vector<int>& parent_counts) {
    const int n = static_cast<int>(idx.size());
    const int n_classes = data_.schema.n_classes();
    const double parent = impurity(parent_counts, n, criterion_);
    BestSplit best;
    for (int f : feature_subset()) {
      const Feature& feat = data_.schema.features[static_cast<std::size_t>(f)];
      if (feat.kind == FeatureKind::Continuous) {
        std::vector<int> order = idx;
        std::sort(order.begin(), order.end(), [&](int a, int b) {
          return data_.rows(a, f) < data_.rows(b, f);
        });
        std::vector<int> left(static_cast<std::size_t>(n_classes), 0);
        std::vector<int> right = parent_counts;
        for (int i = 0; i + 1 < n; ++i) {
          const int row = order[static_cast<std::size_t>(i)];
          ++left[static_cast<std::size_t>(data_.labels[row])];
          --right[static_cast<std::size_t>(data_.labels[row])];
          const double v = data_.rows(row, f);
          const double next = data_.rows(order[static_cast<std::size_t>(i + 1)], f);
          if (v == next) continue;
          const int nl = i + 1;
          const double gain = parent -
                              (static_cast<double>(nl) / n) *
                                  impurity(left, nl, criterion_) -
                              (static_cast<double>(n - nl) / n) *
                                  impurity(right, n - nl, criterion_);
          if (gain > best.gain) {
            best = {gain, f, 0.5 * (v + next), -1, true};
          }
        }
      } else {
        for (int lvl = 0; lvl < feat.cardinality(); ++lvl) {
          std::vector<int> left(static_cast<std::size_t>(n_classes), 0);
          int nl = 0;
          for (int i : idx) {
            if (data_.rows(i, f) == lvl) {
              ++left[static_cast<std::size_t>(data_.labels[i])];
              ++nl;
            }
          }
          if (nl == 0 || nl == n) continue;
          std::vector<int> right = parent_counts;
          for (int k = 0; k < n_classes; ++k) {
            right[static_cast<std::size_t>(k)] -= left[static_cast<std::size_t>(k)];
          }
          const double gain = parent -
                              (static_cast<double>(nl) / n) *
                                  impurity(left, nl, criterion_) -
                              (static_cast<double>(n - nl) / n) *
                                  impurity(right, n - nl, criterion_);
          if (gain > best.gain) {
            best = {gain, f, 0.0, lvl, true};
          }
        }
      }
    }
    return best;
  }

  int grow(Tree& t, const std::vector<int>& idx, int depth) {
    const int me = static_cast<int>(t.nodes.size());
    t.nodes.emplace_back();
    const std::vector<int> counts = class_counts(idx);
    const bool pure =
        std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; }) <= 1;
    const bool depth_capped = (max_depth_ >= 0 && depth >= max_depth_);

    BestSplit split;
    if (!pure && !depth_capped && idx.size() >= 2) {
      split = find_split(idx, counts);
    }
    if (!split.found) {
      t.nodes[static_cast<std::size_t>(me)].klass = majority(counts);
      t.nodes[static_cast<std::size_t>(me)].histogram = counts;
      return me;
    }

    std::vector<int> left_idx;
    std::vector<int> right_idx;
    for (int i : idx) {
      const double v = data_.rows(i, split.feature);
      const bool goes_left =
          (split.level >= 0) ? (v == split.level) : (v <= split.threshold);
      (goes_left ? left_idx : right_idx).push_back(i);
    }
    t.nodes[static_cast<std::size_t>(me)].feature = split.feature;
    t.nodes[static_cast<std::size_t>(me)].threshold = split.threshold;
    t.nodes[static_cast<std::size_t>(me)].level = split.level;
    const int l = grow(t, left_idx, depth + 1);
    t.nodes[static_cast<std::size_t>(me)].left = l;
    const int r = grow(t, right_idx, depth + 1);
    t.nodes[static_cast<std::size_t>(me)].right = r;
    return me;
  }

  const Dataset& data_;
  SplitCriterion criterion_;
  int max_depth_;
  int feature_subsample_;
  std::mt19937_64 rng_;
};

int tree_predict(const Tree& t, const Eigen::MatrixXd& rows, int r) {
  int idx = 0;
  while (t.nodes[static_cast<std::size_t>(idx)].left != -1) {
    const TreeNode& nd = t.nodes[static_cast<std::size_t>(idx)];
    const double v = rows(r, nd.feature);
    const bool goes_left = (nd.level >= 0) ? (v == nd.level) : (v <= nd.threshold);
    idx = goes_left ? nd.left : nd.right;
  }
  return t.nodes[static_cast<std::size_t>(idx)].klass;
}

Dataset bootstrap_resample(const Dataset& d, std::mt19937_64& rng) {
  const int n = d.n_rows();
  std::uniform_int_distribution<int> pick(0, n - 1);
  Dataset out;
  out.schema = d.schema;
  out.role = d.role;
  out.rows.resize(n, d.rows.cols());
  out.labels.resize(n);
  for (int r = 0; r < n; ++r) {
    const int src = pick(rng);
    out.rows.row(r) = d.rows.row(src);
    out.labels[r] = d.labels[src];
  }
  return out;
}

Forest train_one_forest(const Dataset& train, SplitCriterion criterion,
                        int max_depth, int n_trees, std::uint64_t seed) {
  Forest f;
  f.criterion = criterion;
  f.max_depth = max_depth;
  f.n_trees = n_trees;
  f.feature_subsample = static_cast<int>(
      std::ceil(std::sqrt(static_cast<double>(train.schema.n_features()))));
  f.n_features = train.schema.n_features();
  f.n_classes = train.schema.n_classes();
  f.schema_fingerprint = schema_fingerprint(train.schema);
  for (int t = 0; t < n_trees; ++t) {
    const std::uint64_t tree_seed =
        derive_seed(seed, {static_cast<std::uint64_t>(criterion),
                           static_cast<std::uint64_t>(max_depth + 1),
                           static_cast<std::uint64_t>(n_trees),
                           static_cast<std::uint64_t>(t)});
    auto rng = make_rng(tree_seed);
    const Dataset sample = bootstrap_resample(train, rng);
    f.bootstrap_seeds.push_back(tree_seed);
    f.trees.push_back(train_tree(sample, criterion, max_depth,
                                 f.feature_subsample,
                                 derive_seed(tree_seed, "tree")));
  }
  return f;
}

}  // namespace

const char* to_string(SplitCriterion c) {
  return c == SplitCriterion::Gini ? "gini" : "entropy";
}

SplitCriterion split_criterion_from_string(const std::string& name) {
  if (name == "gini") return SplitCriterion::Gini;
  if (name == "entropy") return SplitCriterion::Entropy;
  throw ConfigError("unknown split criterion: " + name);
}

ForestGrid default_forest_grid() {
  return {{SplitCriterion::Gini, SplitCriterion::Entropy},
          {4, 8, 16, -1},
          {25, 100}};
}

Tree train_tree(const Dataset& data, SplitCriterion criterion, int max_depth,
                int feature_subsample, std::uint64_t seed) {
  if (data.n_rows() < 1) {
    throw Error("tree induction needs at least one row");
  }
  return TreeBuilder(data, criterion, max_depth, feature_subsample, seed).build();
}

Forest train_forest(const Dataset& train, const Dataset& validation,
                    const ForestGrid& grid, std::uint64_t seed) {
  if (grid.criteria.empty() || grid.max_depths.empty() || grid.tree_counts.empty()) {
    throw ConfigError("forest grid must be nonempty in every dimension");
  }
  Forest best;
  double best_acc = -1.0;
  auto depth_key = [](int d) { return d < 0 ? std::numeric_limits<int>::max() : d; };
  for (SplitCriterion criterion : grid.criteria) {
    for (int depth : grid.max_depths) {
      for (int n_trees : grid.tree_counts) {
        Forest f = train_one_forest(train, criterion, depth, n_trees, seed);
        const double acc = forest_accuracy(f, validation);
        const bool better =
            acc > best_acc ||
            (acc == best_acc &&
             (f.n_trees < best.n_trees ||
              (f.n_trees == best.n_trees &&
               depth_key(f.max_depth) < depth_key(best.max_depth))));
        if (better) {
          best = std::move(f);
          best_acc = acc;
        }
      }
    }
  }
  return best;
}

Eigen::VectorXi predict(const Forest& forest, const Eigen::MatrixXd& rows) {
  if (static_cast<int>(rows.cols()) != forest.n_features) {
    throw DimensionMismatch("forest expects " + std::to_string(forest.n_features) +
                            " features, got " + std::to_string(rows.cols()));
  }
  Eigen::VectorXi out(rows.rows());
  std::vector<int> votes(static_cast<std::size_t>(forest.n_classes));
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    std::fill(votes.begin(), votes.end(), 0);
    for (const Tree& t : forest.trees) {
      ++votes[static_cast<std::size_t>(tree_predict(t, rows, static_cast<int>(r)))];
    }
    out[r] = majority(votes);
  }
  return out;
}

Eigen::VectorXi predict(const Forest& forest, const Dataset& data) {
  return predict(forest, data.rows);
}

double forest_accuracy(const Forest& forest, const Dataset& data) {
  if (data.n_rows() == 0) return 0.0;
  const Eigen::VectorXi yhat = predict(forest, data);
  return static_cast<double>((yhat.array() == data.labels.array()).count()) /
         data.n_rows();
}

namespace {

void dump_paths(const Tree& t, int node, const FeatureSchema& schema,
                std::vector<std::string>& clauses, int tree_index,
                std::ofstream& out) {
  const TreeNode& nd = t.nodes[static_cast<std::size_t>(node)];
  if (nd.left == -1) {
    out << "tree " << tree_index << ": ";
    if (clauses.empty()) {
      out << "(always)";
    } else {
      for (std::size_t i = 0; i < clauses.size(); ++i) {
        if (i) out << " AND ";
        out << clauses[i];
      }
    }
    out << " -> " << schema.label.classes[static_cast<std::size_t>(nd.klass)]
        << "\n";
    return;
  }
  const Feature& feat = schema.features[static_cast<std::size_t>(nd.feature)];
  if (nd.level >= 0) {
    clauses.push_back("(" + feat.name + " == " +
                      feat.levels[static_cast<std::size_t>(nd.level)] + ")");
    dump_paths(t, nd.left, schema, clauses, tree_index, out);
    clauses.back() = "(" + feat.name + " != " +
                     feat.levels[static_cast<std::size_t>(nd.level)] + ")";
    dump_paths(t, nd.right, schema, clauses, tree_index, out);
  } else {
    std::string th = std::to_string(nd.threshold);
    clauses.push_back("(" + feat.name + " <= " + th + ")");
    dump_paths(t, nd.left, schema, clauses, tree_index, out);
    clauses.back() = "(" + feat.name + " > " + th + ")";
    dump_paths(t, nd.right, schema, clauses, tree_index, out);
  }
  clauses.pop_back();
}

}  // namespace

void dump_rules(const Forest& forest, const FeatureSchema& schema,
                const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error("cannot open rule dump file: " + path);
  }
  for (std::size_t i = 0; i < forest.trees.size(); ++i) {
    std::vector<std::string> clauses;
    dump_paths(forest.trees[i], 0, schema, clauses, static_cast<int>(i), out);
  }
}

Dataset integrity_view(const Dataset& d, int categorical_feature) {
  const Feature& target =
      d.schema.features[static_cast<std::size_t>(categorical_feature)];
  if (target.kind != FeatureKind::Categorical) {
    throw Error("integrity view target must be categorical: " + target.name);
  }
  const std::vector<int> cont = d.schema.continuous_indices();
  Dataset out;
  for (int f : cont) {
    out.schema.features.push_back(d.schema.features[static_cast<std::size_t>(f)]);
  }
  out.schema.label = {target.name, target.levels};
  out.role = d.role;
  out.rows.resize(d.n_rows(), static_cast<Eigen::Index>(cont.size()));
  out.labels.resize(d.n_rows());
  for (int r = 0; r < d.n_rows(); ++r) {
    for (std::size_t j = 0; j < cont.size(); ++j) {
      out.rows(r, static_cast<Eigen::Index>(j)) = d.rows(r, cont[j]);
    }
    out.labels[r] = static_cast<int>(d.rows(r, categorical_feature));
  }
  return out;
}

std::vector<IntegrityClassifier> train_integrity_classifiers(
    const Dataset& train, const Dataset& validation, const ForestGrid& grid,
    std::uint64_t seed) {
  const std::vector<int> cats = train.schema.categorical_indices();
  if (cats.empty()) {
    return {};
  }
  if (train.schema.n_continuous() < 1) {
    throw ConfigError(
        "integrity classifiers need at least one continuous feature");
  }
  std::vector<IntegrityClassifier> out;
  for (int f : cats) {
    const Dataset tview = integrity_view(train, f);
    const Dataset vview = integrity_view(validation, f);
    const std::string& name =
        train.schema.features[static_cast<std::size_t>(f)].name;
    out.push_back({name, train_forest(tview, vview, grid,
                                      derive_seed(seed, "integrity-" + name))});
  }
  return out;
}

}  // namespace tutor
