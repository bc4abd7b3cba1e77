#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hypothetica/error.hpp"
#include "hypothetica/trial_data.hpp"

namespace hypothetica {

namespace csv_detail {

inline std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

inline std::optional<int> parse_int_suffix(std::string_view s) {
    if (s.empty()) return std::nullopt;
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || v < 0) return std::nullopt;
    return v;
}

inline double parse_double(std::string_view cell, std::size_t line, std::size_t column) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(v))
        throw ParseError("malformed numeric cell '" + std::string(cell) + "'", line, column);
    return v;
}

inline int parse_indicator(std::string_view cell, std::size_t line, std::size_t column) {
    const double v = parse_double(cell, line, column);
    if (v != 0.0 && v != 1.0)
        throw ParseError("indicator cell must be 0 or 1, got '" + std::string(cell) + "'", line, column);
    return static_cast<int>(v);
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Column roles in file order.
struct Column {
    enum Kind { arm, covariate, ice, outcome } kind;
    int time = 0;
    int component = 0;
};

inline std::vector<Column> columns_for(const TrialSchema& schema) {
    std::vector<Column> cols;
    cols.push_back({Column::arm, 0, 0});
    for (int k = 0; k <= schema.K; ++k) {
        for (int j = 0; j < schema.dim(k); ++j) cols.push_back({Column::covariate, k, j});
        if (k > 0) cols.push_back({Column::ice, k, 0});
    }
    cols.push_back({Column::outcome, 0, 0});
    return cols;
}

inline std::string column_name(const Column& c) {
    switch (c.kind) {
        case Column::arm: return "a0";
        case Column::covariate: return "l" + std::to_string(c.time) + "_" + std::to_string(c.component + 1);
        case Column::ice: return "a" + std::to_string(c.time);
        case Column::outcome: return "y";
    }
    return {};
}

}  // namespace csv_detail

/// Column header for a schema: a0,l0_1..,l1_1..,a1,...,lK_1..,aK,y.
inline std::string csv_header(const TrialSchema& schema) {
    std::string out;
    for (const auto& c : csv_detail::columns_for(schema)) {
        if (!out.empty()) out += ',';
        out += csv_detail::column_name(c);
    }
    return out;
}

/// Recovers the schema implied by a header line; throws SchemaError if the
/// columns are not in canonical order.
inline TrialSchema infer_schema(std::string_view header) {
    const auto names = csv_detail::split(header);
    if (names.empty() || names.front() != "a0") throw SchemaError("first column must be a0 (randomised arm)");
    TrialSchema schema;
    schema.dims.clear();
    std::size_t pos = 1;
    int k = 0;
    for (;;) {
        int dim = 0;
        const std::string prefix = "l" + std::to_string(k) + "_";
        while (pos < names.size() && names[pos].substr(0, prefix.size()) == prefix) {
            const auto idx = csv_detail::parse_int_suffix(names[pos].substr(prefix.size()));
            if (!idx || *idx != dim + 1)
                throw SchemaError("covariate column '" + std::string(names[pos]) + "' out of order");
            ++dim;
            ++pos;
        }
        if (dim == 0) {
            if (k == 0) throw SchemaError("at least one baseline covariate column l0_1 is required");
            throw SchemaError("expected covariate columns " + prefix + "* for visit " + std::to_string(k));
        }
        schema.dims.push_back(dim);
        if (k > 0) {
            if (pos >= names.size() || names[pos] != "a" + std::to_string(k))
                throw SchemaError("expected column a" + std::to_string(k));
            ++pos;
        }
        if (pos < names.size() && names[pos] == "y") {
            ++pos;
            break;
        }
        ++k;
    }
    if (pos != names.size()) throw SchemaError("unexpected column after y: '" + std::string(names[pos]) + "'");
    schema.K = k;
    return schema;
}

/// Parses a wide-format CSV. If `expected` is given the header must match it.
inline TrialDataset read_csv(std::istream& in, const std::optional<TrialSchema>& expected = std::nullopt) {
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("empty CSV: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const TrialSchema schema = infer_schema(line);
    if (expected && !(*expected == schema)) throw SchemaError("CSV header does not match the requested schema");
    const auto cols = csv_detail::columns_for(schema);
    const auto K = static_cast<std::size_t>(schema.K);

    std::vector<SubjectRecord> subjects;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = csv_detail::split(line);
        if (cells.size() != cols.size())
            throw ParseError("expected " + std::to_string(cols.size()) + " cells, found " + std::to_string(cells.size()),
                             line_no, 1);
        SubjectRecord s;
        s.l.assign(K + 1, std::nullopt);
        s.a.assign(K + 1, std::nullopt);
        std::vector<std::vector<std::optional<double>>> parts(K + 1);
        for (std::size_t k = 0; k <= K; ++k) parts[k].resize(static_cast<std::size_t>(schema.dims[k]));
        for (std::size_t c = 0; c < cols.size(); ++c) {
            const auto& col = cols[c];
            const auto cell = cells[c];
            if (cell.empty()) {
                if (col.kind == csv_detail::Column::arm)
                    throw SchemaError("a0 missing on line " + std::to_string(line_no) + "; the randomised arm is required");
                continue;
            }
            switch (col.kind) {
                case csv_detail::Column::arm:
                    s.a[0] = csv_detail::parse_indicator(cell, line_no, c + 1);
                    break;
                case csv_detail::Column::ice:
                    s.a[static_cast<std::size_t>(col.time)] = csv_detail::parse_indicator(cell, line_no, c + 1);
                    break;
                case csv_detail::Column::covariate:
                    parts[static_cast<std::size_t>(col.time)][static_cast<std::size_t>(col.component)] =
                        csv_detail::parse_double(cell, line_no, c + 1);
                    break;
                case csv_detail::Column::outcome:
                    s.y = csv_detail::parse_double(cell, line_no, c + 1);
                    break;
            }
        }
        for (std::size_t k = 0; k <= K; ++k) {
            std::size_t seen = 0;
            for (const auto& v : parts[k]) seen += v.has_value();
            if (seen == 0) continue;
            if (seen != parts[k].size())
                throw ValidationError("subject " + std::to_string(subjects.size() + 1) + " (line " +
                                      std::to_string(line_no) + "): l" + std::to_string(k) +
                                      " is partially observed");
            std::vector<double> v;
            for (const auto& x : parts[k]) v.push_back(*x);
            s.l[k] = std::move(v);
        }
        subjects.push_back(std::move(s));
    }
    return TrialDataset(schema, std::move(subjects));
}

inline TrialDataset read_csv(const std::string& path, const std::optional<TrialSchema>& expected = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    return read_csv(in, expected);
}

inline void write_csv(const TrialDataset& data, std::ostream& out) {
    const auto cols = csv_detail::columns_for(data.schema());
    out << csv_header(data.schema()) << '\n';
    std::string row;
    for (const auto& s : data) {
        row.clear();
        for (std::size_t c = 0; c < cols.size(); ++c) {
            if (c) row += ',';
            const auto& col = cols[c];
            const auto t = static_cast<std::size_t>(col.time);
            switch (col.kind) {
                case csv_detail::Column::arm:
                case csv_detail::Column::ice:
                    if (s.a[t]) row += std::to_string(*s.a[t]);
                    break;
                case csv_detail::Column::covariate:
                    if (s.l[t]) row += csv_detail::format_double((*s.l[t])[static_cast<std::size_t>(col.component)]);
                    break;
                case csv_detail::Column::outcome:
                    if (s.y) row += csv_detail::format_double(*s.y);
                    break;
            }
        }
        out << row << '\n';
    }
}

inline void write_csv(const TrialDataset& data, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    write_csv(data, out);
    if (!out) throw IoError("write to '" + path + "' failed");
}

}  // namespace hypothetica
