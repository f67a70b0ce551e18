#include "tutor/serialize.hpp"

#include <fstream>
#include <utility>
#include <vector>

#include "tutor/errors.hpp"
#include "tutor/schema.hpp"

namespace tutor {
namespace {

using nlohmann::json;

json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vector_from_json(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  Eigen::Index i = 0;
  for (const json& x : a) v[i++] = x.get<double>();
  return v;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& a, Eigen::Index cols_hint = 0) {
  const Eigen::Index rows = static_cast<Eigen::Index>(a.size());
  const Eigen::Index cols =
      rows > 0 ? static_cast<Eigen::Index>(a.front().size()) : cols_hint;
  Eigen::MatrixXd m(rows, cols);
  Eigen::Index r = 0;
  for (const json& row : a) {
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw Error("ragged matrix in serialized document");
    }
    Eigen::Index c = 0;
    for (const json& x : row) m(r, c++) = x.get<double>();
    ++r;
  }
  return m;
}

void check_envelope(const json& j, const std::string& kind) {
  if (!j.is_object() || !j.contains("version")) {
    throw Error("serialized document lacks a version field");
  }
  if (!j.at("version").is_number_integer() ||
      j.at("version").get<int>() != kSerializationVersion) {
    throw Error("unsupported serialization version");
  }
  if (j.value("kind", std::string()) != kind) {
    throw Error("expected a '" + kind + "' document");
  }
}

/// Missing keys and wrong JSON types surface as tutor errors, not as raw
/// library exceptions.
template <typename F>
auto reading(const char* kind, F&& body) {
  try {
    return body();
  } catch (const json::exception& e) {
    throw Error(std::string("malformed ") + kind + " document: " + e.what());
  }
}

json envelope(const std::string& kind) {
  return json{{"version", kSerializationVersion}, {"kind", kind}};
}

json context_to_json(const EncodingContext& ctx) {
  json j;
  j["schema"] = json::parse(schema_to_json(ctx.schema));
  json map = json::array();
  for (const ColumnRange& r : ctx.column_map) {
    map.push_back({{"feature", r.feature}, {"begin", r.begin}, {"width", r.width}});
  }
  j["column_map"] = std::move(map);
  if (ctx.standardizer.has_value()) {
    const Standardizer& s = *ctx.standardizer;
    j["standardizer"] = {{"mean", vector_to_json(s.mean)},
                         {"stddev", vector_to_json(s.stddev)},
                         {"zero_variance", s.zero_variance}};
  } else {
    j["standardizer"] = nullptr;
  }
  return j;
}

EncodingContext context_from_json(const json& j) {
  EncodingContext ctx;
  ctx.schema = schema_from_json(j.at("schema").dump());
  for (const json& r : j.at("column_map")) {
    ColumnRange cr;
    cr.feature = r.at("feature").get<int>();
    cr.begin = r.at("begin").get<int>();
    cr.width = r.at("width").get<int>();
    ctx.column_map.push_back(cr);
  }
  if (!j.at("standardizer").is_null()) {
    Standardizer s;
    s.mean = vector_from_json(j.at("standardizer").at("mean"));
    s.stddev = vector_from_json(j.at("standardizer").at("stddev"));
    s.zero_variance =
        j.at("standardizer").at("zero_variance").get<std::vector<int>>();
    ctx.standardizer = std::move(s);
  }
  return ctx;
}

}  // namespace

json density_to_json(const DensityModel& model) {
  json j = envelope("density");
  j["method"] = to_string(model.method);
  j["fitted_rows"] = model.fitted_rows;
  j["fitted_cols"] = model.fitted_cols;
  j["schema_fingerprint"] = schema_fingerprint(model.context.schema);
  j["context"] = context_to_json(model.context);

  json p;
  switch (model.method) {
    case DensityMethod::Mnd: {
      const MndModel& m = std::get<MndModel>(model.model);
      p["mean"] = vector_to_json(m.mean);
      p["covariance"] = matrix_to_json(m.covariance);
      p["cholesky_factor"] = matrix_to_json(m.cholesky_factor);
      p["diagonal_constraint"] = m.diagonal_constraint;
      p["ridge"] = m.ridge;
      break;
    }
    case DensityMethod::Gmm: {
      const GmmModel& m = std::get<GmmModel>(model.model);
      p["covariance_shape"] = to_string(m.covariance_shape);
      p["ridge"] = m.ridge;
      p["log_likelihood_trace"] = m.log_likelihood_trace;
      json comps = json::array();
      for (const GmmComponent& c : m.components) {
        comps.push_back({{"weight", c.weight},
                         {"mean", vector_to_json(c.mean)},
                         {"covariance", matrix_to_json(c.covariance)},
                         {"cholesky_factor", matrix_to_json(c.cholesky_factor)}});
      }
      p["components"] = std::move(comps);
      break;
    }
    case DensityMethod::Kde: {
      const KdeModel& m = std::get<KdeModel>(model.model);
      p["bandwidth"] = m.bandwidth;
      p["support_points"] = matrix_to_json(m.support_points);
      break;
    }
  }
  j["model"] = std::move(p);
  return j;
}

namespace {
DensityModel density_from_json_impl(const json& j) {
  DensityModel model;
  model.method = density_method_from_string(j.at("method").get<std::string>());
  model.fitted_rows = j.at("fitted_rows").get<int>();
  model.fitted_cols = j.at("fitted_cols").get<int>();
  model.context = context_from_json(j.at("context"));
  if (j.at("schema_fingerprint").get<std::uint64_t>() !=
      schema_fingerprint(model.context.schema)) {
    throw Error("schema fingerprint does not match the embedded schema");
  }

  const json& p = j.at("model");
  switch (model.method) {
    case DensityMethod::Mnd: {
      MndModel m;
      m.mean = vector_from_json(p.at("mean"));
      m.covariance = matrix_from_json(p.at("covariance"));
      m.cholesky_factor = matrix_from_json(p.at("cholesky_factor"));
      m.diagonal_constraint = p.at("diagonal_constraint").get<bool>();
      m.ridge = p.at("ridge").get<double>();
      model.model = std::move(m);
      break;
    }
    case DensityMethod::Gmm: {
      GmmModel m;
      m.covariance_shape =
          covariance_shape_from_string(p.at("covariance_shape").get<std::string>());
      m.ridge = p.at("ridge").get<double>();
      m.log_likelihood_trace =
          p.at("log_likelihood_trace").get<std::vector<double>>();
      for (const json& c : p.at("components")) {
        GmmComponent comp;
        comp.weight = c.at("weight").get<double>();
        comp.mean = vector_from_json(c.at("mean"));
        comp.covariance = matrix_from_json(c.at("covariance"));
        comp.cholesky_factor = matrix_from_json(c.at("cholesky_factor"));
        m.components.push_back(std::move(comp));
      }
      model.model = std::move(m);
      break;
    }
    case DensityMethod::Kde: {
      KdeModel m;
      m.bandwidth = p.at("bandwidth").get<double>();
      m.support_points =
          matrix_from_json(p.at("support_points"), model.fitted_cols);
      model.model = std::move(m);
      break;
    }
  }
  return model;
}
}  // namespace

DensityModel density_from_json(const json& j) {
  check_envelope(j, "density");
  return reading("density", [&] { return density_from_json_impl(j); });
}

namespace {

json node_to_json(const Tree& tree, int index) {
  const TreeNode& n = tree.nodes[static_cast<std::size_t>(index)];
  if (n.left < 0) {
    return json{{"class", n.klass}, {"histogram", n.histogram}};
  }
  json j{{"feature", n.feature},
         {"left", node_to_json(tree, n.left)},
         {"right", node_to_json(tree, n.right)}};
  if (n.level >= 0) {
    j["level"] = n.level;
  } else {
    j["threshold"] = n.threshold;
  }
  return j;
}

int node_from_json(const json& j, Tree& tree) {
  const int index = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  if (!j.contains("feature")) {
    TreeNode& n = tree.nodes[static_cast<std::size_t>(index)];
    n.klass = j.at("class").get<int>();
    n.histogram = j.at("histogram").get<std::vector<int>>();
    return index;
  }
  {
    TreeNode& n = tree.nodes[static_cast<std::size_t>(index)];
    n.feature = j.at("feature").get<int>();
    if (j.contains("level")) {
      n.level = j.at("level").get<int>();
    } else {
      n.threshold = j.at("threshold").get<double>();
    }
  }
  const int left = node_from_json(j.at("left"), tree);
  const int right = node_from_json(j.at("right"), tree);
  TreeNode& n = tree.nodes[static_cast<std::size_t>(index)];
  n.left = left;
  n.right = right;
  return index;
}

}  // namespace

json forest_to_json(const Forest& forest) {
  json j = envelope("forest");
  j["criterion"] = to_string(forest.criterion);
  j["max_depth"] = forest.max_depth;
  j["n_trees"] = forest.n_trees;
  j["feature_subsample"] = forest.feature_subsample;
  j["bootstrap_seeds"] = forest.bootstrap_seeds;
  j["n_features"] = forest.n_features;
  j["n_classes"] = forest.n_classes;
  j["schema_fingerprint"] = forest.schema_fingerprint;
  json trees = json::array();
  for (const Tree& t : forest.trees) {
    trees.push_back(t.nodes.empty() ? json(nullptr) : node_to_json(t, 0));
  }
  j["trees"] = std::move(trees);
  return j;
}

namespace {
Forest forest_from_json_impl(const json& j) {
  Forest f;
  f.criterion = split_criterion_from_string(j.at("criterion").get<std::string>());
  f.max_depth = j.at("max_depth").get<int>();
  f.n_trees = j.at("n_trees").get<int>();
  f.feature_subsample = j.at("feature_subsample").get<int>();
  f.bootstrap_seeds = j.at("bootstrap_seeds").get<std::vector<std::uint64_t>>();
  f.n_features = j.at("n_features").get<int>();
  f.n_classes = j.at("n_classes").get<int>();
  f.schema_fingerprint = j.at("schema_fingerprint").get<std::uint64_t>();
  for (const json& t : j.at("trees")) {
    Tree tree;
    if (!t.is_null()) node_from_json(t, tree);
    f.trees.push_back(std::move(tree));
  }
  return f;
}
}  // namespace

Forest forest_from_json(const json& j) {
  check_envelope(j, "forest");
  return reading("forest", [&] { return forest_from_json_impl(j); });
}

json network_to_json(const MaskedNetwork& net) {
  check_structure(net);
  json j = envelope("network");
  j["dims"] = {{"n_in", net.n_in}, {"n_hidden", net.n_hidden}, {"n_out", net.n_out}};
  json order = json::array();
  for (Activation a : net.hidden_activation) {
    order.push_back(a == Activation::Relu ? "relu" : "identity");
  }
  j["order"] = std::move(order);
  json mask = json::array();
  for (int i = 0; i < net.n_sources(); ++i) {
    std::string bits(static_cast<std::size_t>(net.n_destinations()), '0');
    for (int k = 0; k < net.n_destinations(); ++k) {
      if (net.Mask(i, k) == 1.0) bits[static_cast<std::size_t>(k)] = '1';
    }
    mask.push_back(std::move(bits));
  }
  j["mask"] = std::move(mask);
  j["weights"] = matrix_to_json(net.W);
  j["bias"] = vector_to_json(net.bias);
  return j;
}

namespace {
MaskedNetwork network_from_json_impl(const json& j) {
  MaskedNetwork net;
  net.n_in = j.at("dims").at("n_in").get<int>();
  net.n_hidden = j.at("dims").at("n_hidden").get<int>();
  net.n_out = j.at("dims").at("n_out").get<int>();
  for (const json& a : j.at("order")) {
    const std::string name = a.get<std::string>();
    if (name == "relu") {
      net.hidden_activation.push_back(Activation::Relu);
    } else if (name == "identity") {
      net.hidden_activation.push_back(Activation::Identity);
    } else {
      throw Error("unknown activation '" + name + "'");
    }
  }
  net.W = matrix_from_json(j.at("weights"), net.n_destinations());
  net.bias = vector_from_json(j.at("bias"));
  const json& mask = j.at("mask");
  if (static_cast<int>(mask.size()) != net.n_sources()) {
    throw Error("mask row count does not match the dims");
  }
  net.Mask = Eigen::MatrixXd::Zero(net.n_sources(), net.n_destinations());
  for (int i = 0; i < net.n_sources(); ++i) {
    const std::string bits = mask[static_cast<std::size_t>(i)].get<std::string>();
    if (static_cast<int>(bits.size()) != net.n_destinations()) {
      throw Error("mask bitstring length does not match the dims");
    }
    for (int k = 0; k < net.n_destinations(); ++k) {
      const char b = bits[static_cast<std::size_t>(k)];
      if (b != '0' && b != '1') throw Error("mask bitstring must be 0s and 1s");
      net.Mask(i, k) = b == '1' ? 1.0 : 0.0;
    }
  }
  check_structure(net);
  return net;
}
}  // namespace

MaskedNetwork network_from_json(const json& j) {
  check_envelope(j, "network");
  return reading("network", [&] { return network_from_json_impl(j); });
}

json scheme_result_to_json(const SchemeResult& r) {
  json j = envelope("scheme_result");
  j["scheme"] = to_string(r.scheme);
  j["method"] = to_string(r.method);
  j["validation_accuracy"] = r.validation_accuracy;
  j["test_accuracy"] = r.test_accuracy;
  j["metrics"] = {{"accuracy", r.metrics.accuracy},
                  {"flops_per_inference", r.metrics.flops_per_inference},
                  {"param_count", r.metrics.param_count}};
  json methods = json::array();
  for (const MethodOutcome& mo : r.per_method) {
    methods.push_back({{"method", to_string(mo.method)},
                       {"validation_accuracy", mo.validation_accuracy},
                       {"failed", mo.failed},
                       {"failure", mo.failure}});
  }
  j["per_method"] = std::move(methods);
  return j;
}

void save_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed writing '" + path + "'");
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("invalid JSON in '" + path + "': " + e.what());
  }
  return j;
}

}  // namespace tutor
