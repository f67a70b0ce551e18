#include "tutor/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

#include "tutor/errors.hpp"

namespace tutor {

namespace {

// RFC-4180 field splitter: handles quoted fields, "" escapes, and CRLF.
// Returns one record per call; quoted fields may span lines.
bool read_record(std::istream& in, std::vector<std::string>& fields) {
    fields.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    int c;
    while ((c = in.get()) != EOF) {
        any = true;
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    field.push_back('"');
                    in.get();
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(static_cast<char>(c));
            }
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\r') {
            if (in.peek() == '\n') in.get();
            fields.push_back(std::move(field));
            return true;
        } else if (c == '\n') {
            fields.push_back(std::move(field));
            return true;
        } else {
            field.push_back(static_cast<char>(c));
        }
    }
    if (!any) return false;
    fields.push_back(std::move(field));
    return true;
}

double parse_double(const std::string& s, int row, const std::string& col) {
    double v = 0;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || ptr != end)
        throw ParseError("row " + std::to_string(row) + ", column '" + col +
                         "': cannot parse '" + s + "' as a number");
    return v;
}

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

bool needs_quoting(const std::string& s) {
    return s.find_first_of(",\"\r\n") != std::string::npos;
}

std::string quote(const std::string& s) {
    if (!needs_quoting(s)) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

}  // namespace

Dataset load_csv(const std::string& path, const FeatureSchema& schema, SplitRole role) {
    schema.validate();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open data file: " + path);

    std::vector<std::string> fields;
    if (!read_record(in, fields)) throw ParseError(path + ": empty file, header expected");

    const int nf = schema.n_features();
    if (static_cast<int>(fields.size()) != nf + 1)
        throw MissingColumn(path + ": header has " + std::to_string(fields.size()) +
                            " columns, schema expects " + std::to_string(nf + 1));
    for (int j = 0; j < nf; ++j) {
        if (fields[j] != schema.features[j].name)
            throw MissingColumn(path + ": header column " + std::to_string(j) + " is '" +
                                fields[j] + "', expected '" + schema.features[j].name + "'");
    }
    if (fields[nf] != schema.label.name)
        throw MissingColumn(path + ": label column is '" + fields[nf] + "', expected '" +
                            schema.label.name + "'");

    std::vector<std::vector<double>> values;
    std::vector<int> labels;
    int row = 0;
    while (read_record(in, fields)) {
        ++row;
        if (fields.size() == 1 && fields[0].empty()) continue;  // trailing blank line
        if (static_cast<int>(fields.size()) != nf + 1)
            throw ParseError(path + ": row " + std::to_string(row) + " has " +
                             std::to_string(fields.size()) + " fields, expected " +
                             std::to_string(nf + 1));
        std::vector<double> r(nf);
        for (int j = 0; j < nf; ++j) {
            const Feature& f = schema.features[j];
            if (f.kind == FeatureKind::Continuous) {
                r[j] = parse_double(fields[j], row, f.name);
            } else {
                int level = -1;
                for (int k = 0; k < f.cardinality(); ++k)
                    if (f.levels[k] == fields[j]) { level = k; break; }
                if (level < 0)
                    throw UnknownCategoryLevel("row " + std::to_string(row) + ", column '" +
                                               f.name + "': unknown level '" + fields[j] + "'");
                r[j] = level;
            }
        }
        int klass = -1;
        for (int k = 0; k < schema.n_classes(); ++k)
            if (schema.label.classes[k] == fields[nf]) { klass = k; break; }
        if (klass < 0)
            throw UnknownCategoryLevel("row " + std::to_string(row) + ", column '" +
                                       schema.label.name + "': unknown class '" + fields[nf] + "'");
        values.push_back(std::move(r));
        labels.push_back(klass);
    }

    Dataset d;
    d.schema = schema;
    d.role = role;
    d.rows.resize(static_cast<int>(values.size()), nf);
    d.labels.resize(static_cast<int>(labels.size()));
    for (int i = 0; i < d.n_rows(); ++i) {
        for (int j = 0; j < nf; ++j) d.rows(i, j) = values[i][j];
        d.labels[i] = labels[i];
    }
    return d;
}

void write_csv(const std::string& path, const Dataset& d) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open output file: " + path);
    const auto& s = d.schema;
    for (int j = 0; j < s.n_features(); ++j) out << quote(s.features[j].name) << ',';
    out << quote(s.label.name) << '\n';
    for (int i = 0; i < d.n_rows(); ++i) {
        for (int j = 0; j < s.n_features(); ++j) {
            const Feature& f = s.features[j];
            if (f.kind == FeatureKind::Continuous)
                out << format_double(d.rows(i, j));
            else
                out << quote(f.levels[static_cast<int>(d.rows(i, j))]);
            out << ',';
        }
        out << quote(s.label.classes[d.labels[i]]) << '\n';
    }
}

}  // namespace tutor
