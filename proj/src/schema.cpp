#include "tutor/schema.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "tutor/errors.hpp"
#include "tutor/rng.hpp"

namespace tutor {

int FeatureSchema::n_continuous() const {
    int n = 0;
    for (const auto& f : features) n += (f.kind == FeatureKind::Continuous);
    return n;
}

int FeatureSchema::n_categorical() const { return n_features() - n_continuous(); }

int FeatureSchema::encoded_width() const {
    int w = 0;
    for (const auto& f : features) w += (f.kind == FeatureKind::Continuous) ? 1 : f.cardinality();
    return w;
}

std::vector<int> FeatureSchema::continuous_indices() const {
    std::vector<int> out;
    for (int i = 0; i < n_features(); ++i)
        if (features[i].kind == FeatureKind::Continuous) out.push_back(i);
    return out;
}

std::vector<int> FeatureSchema::categorical_indices() const {
    std::vector<int> out;
    for (int i = 0; i < n_features(); ++i)
        if (features[i].kind == FeatureKind::Categorical) out.push_back(i);
    return out;
}

int FeatureSchema::feature_index(const std::string& name) const {
    for (int i = 0; i < n_features(); ++i)
        if (features[i].name == name) return i;
    return -1;
}

void FeatureSchema::validate() const {
    std::set<std::string> seen;
    for (const auto& f : features) {
        if (!seen.insert(f.name).second) throw Error("duplicate feature name: " + f.name);
        if (f.kind == FeatureKind::Categorical && f.cardinality() < 2)
            throw Error("categorical feature '" + f.name + "' needs at least 2 levels");
    }
    if (n_classes() < 2) throw Error("label needs at least 2 classes");
}

const char* to_string(SplitRole role) {
    switch (role) {
        case SplitRole::Train: return "train";
        case SplitRole::Validation: return "validation";
        case SplitRole::Test: return "test";
        case SplitRole::Synthetic: return "synthetic";
    }
    return "?";
}

void Dataset::validate() const {
    schema.validate();
    if (rows.rows() != labels.size())
        throw Error("row count does not match label count");
    if (rows.cols() != schema.n_features())
        throw Error("column count does not match schema");
    for (int i = 0; i < rows.rows(); ++i) {
        for (int j = 0; j < rows.cols(); ++j) {
            const auto& f = schema.features[j];
            if (f.kind == FeatureKind::Categorical) {
                double v = rows(i, j);
                if (v < 0 || v >= f.cardinality() || v != static_cast<int>(v))
                    throw Error("row " + std::to_string(i) + ", feature '" + f.name +
                                "': invalid level index");
            }
        }
        if (labels[i] < 0 || labels[i] >= schema.n_classes())
            throw Error("row " + std::to_string(i) + ": label out of range");
    }
}

namespace {

nlohmann::json schema_json(const FeatureSchema& s) {
    nlohmann::json features = nlohmann::json::array();
    for (const auto& f : s.features) {
        nlohmann::json jf;
        jf["name"] = f.name;
        if (f.kind == FeatureKind::Continuous) {
            jf["kind"] = "continuous";
        } else {
            jf["kind"] = "categorical";
            jf["levels"] = f.levels;
        }
        features.push_back(jf);
    }
    return nlohmann::json{{"features", features},
                          {"label", {{"name", s.label.name}, {"classes", s.label.classes}}}};
}

FeatureSchema schema_from(const nlohmann::json& j) {
    FeatureSchema s;
    for (const auto& jf : j.at("features")) {
        Feature f;
        f.name = jf.at("name").get<std::string>();
        const std::string kind = jf.at("kind").get<std::string>();
        if (kind == "continuous") {
            f.kind = FeatureKind::Continuous;
        } else if (kind == "categorical") {
            f.kind = FeatureKind::Categorical;
            f.levels = jf.at("levels").get<std::vector<std::string>>();
        } else {
            throw Error("unknown feature kind: " + kind);
        }
        s.features.push_back(std::move(f));
    }
    s.label.name = j.at("label").at("name").get<std::string>();
    s.label.classes = j.at("label").at("classes").get<std::vector<std::string>>();
    s.validate();
    return s;
}

}  // namespace

FeatureSchema load_schema(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open schema file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("schema file " + path + ": " + e.what());
    }
    try {
        return schema_from(j);
    } catch (const nlohmann::json::exception& e) {
        throw Error("schema file " + path + ": " + e.what());
    }
}

std::string schema_to_json(const FeatureSchema& schema) { return schema_json(schema).dump(2); }

FeatureSchema schema_from_json(const std::string& text) {
    try {
        return schema_from(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("schema json: ") + e.what());
    }
}

std::uint64_t schema_fingerprint(const FeatureSchema& schema) {
    return fnv1a64(schema_json(schema).dump());
}

}  // namespace tutor
