#include "tutor/encoding.hpp"

#include <cmath>

#include "tutor/errors.hpp"

namespace tutor {

std::vector<ColumnRange> make_column_map(const FeatureSchema& schema) {
    std::vector<ColumnRange> map;
    int col = 0;
    for (int i = 0; i < schema.n_features(); ++i) {
        const Feature& f = schema.features[i];
        const int w = (f.kind == FeatureKind::Continuous) ? 1 : f.cardinality();
        map.push_back({i, col, w});
        col += w;
    }
    return map;
}

Standardizer fit_standardizer(const Dataset& train) {
    const auto cont = train.schema.continuous_indices();
    const int nc = static_cast<int>(cont.size());
    Standardizer s;
    s.mean.resize(nc);
    s.stddev.resize(nc);
    const int n = train.n_rows();
    for (int k = 0; k < nc; ++k) {
        const auto col = train.rows.col(cont[k]);
        const double mean = (n > 0) ? col.mean() : 0.0;
        double var = 0.0;
        if (n > 0) var = (col.array() - mean).square().sum() / n;
        const double sd = std::sqrt(var);
        s.mean[k] = mean;
        if (sd < 1e-12) {
            // Constant column: leave it untouched rather than divide by ~0.
            s.mean[k] = 0.0;
            s.stddev[k] = 1.0;
            s.zero_variance.push_back(k);
        } else {
            s.stddev[k] = sd;
        }
    }
    return s;
}

EncodedMatrix encode(const Dataset& d, bool standardize,
                     const std::optional<Standardizer>& reuse) {
    std::optional<Standardizer> std_opt;
    if (standardize) {
        if (reuse.has_value()) {
            std_opt = *reuse;
        } else if (d.role == SplitRole::Train) {
            std_opt = fit_standardizer(d);
        } else {
            throw Error("encode: standardizing a non-Train split requires the Train standardizer");
        }
        if (std_opt->mean.size() != d.schema.n_continuous())
            throw DimensionMismatch("encode: standardizer width does not match schema");
    }

    EncodedMatrix m;
    m.schema = d.schema;
    m.column_map = make_column_map(d.schema);
    m.standardizer = std_opt;
    m.values = Eigen::MatrixXd::Zero(d.n_rows(), d.schema.encoded_width());

    int cont_k = 0;
    for (const ColumnRange& r : m.column_map) {
        const Feature& f = d.schema.features[r.feature];
        if (f.kind == FeatureKind::Continuous) {
            Eigen::VectorXd col = d.rows.col(r.feature);
            if (std_opt) col = (col.array() - std_opt->mean[cont_k]) / std_opt->stddev[cont_k];
            m.values.col(r.begin) = col;
            ++cont_k;
        } else {
            for (int i = 0; i < d.n_rows(); ++i) {
                const int level = static_cast<int>(d.rows(i, r.feature));
                if (level < 0 || level >= r.width)
                    throw Error("encode: level index out of range for '" + f.name + "'");
                m.values(i, r.begin + level) = 1.0;
            }
        }
    }
    return m;
}

Dataset decode(const EncodedMatrix& m, Eigen::VectorXi labels, SplitRole role) {
    if (m.column_map.empty()) throw Error("decode: encoded matrix has no column map");
    if (labels.size() != m.n_rows())
        throw DimensionMismatch("decode: label count does not match row count");

    Dataset d;
    d.schema = m.schema;
    d.role = role;
    d.labels = std::move(labels);
    d.rows.resize(m.n_rows(), m.schema.n_features());

    int cont_k = 0;
    for (const ColumnRange& r : m.column_map) {
        const Feature& f = m.schema.features[r.feature];
        if (f.kind == FeatureKind::Continuous) {
            Eigen::VectorXd col = m.values.col(r.begin);
            if (m.standardizer)
                col = col.array() * m.standardizer->stddev[cont_k] + m.standardizer->mean[cont_k];
            d.rows.col(r.feature) = col;
            ++cont_k;
        } else {
            for (int i = 0; i < m.n_rows(); ++i) {
                // argmax over the block; ties resolve to the lowest level.
                int best = 0;
                double best_v = m.values(i, r.begin);
                for (int k = 1; k < r.width; ++k) {
                    const double v = m.values(i, r.begin + k);
                    if (v > best_v) {
                        best_v = v;
                        best = k;
                    }
                }
                d.rows(i, r.feature) = best;
            }
        }
    }
    return d;
}

Dataset decode(const EncodedMatrix& m) {
    return decode(m, Eigen::VectorXi::Zero(m.n_rows()), SplitRole::Synthetic);
}

}  // namespace tutor
