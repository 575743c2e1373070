// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef ATTNID_CSV_HPP
#define ATTNID_CSV_HPP

#include "attnid/errors.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace attnid {

using CsvCell = std::variant<std::string, double, long long>;

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<CsvCell>> rows;

    void add(std::vector<CsvCell> row) {
        if (row.size() != header.size()) {
            throw InvalidArgument("csv row has " + std::to_string(row.size()) + " cells, header has " +
                                  std::to_string(header.size()));
        }
        rows.push_back(std::move(row));
    }
};

/// Integers as-is, reals at 17 significant digits, absent values as "".
inline std::string format_number(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string to_csv(const CsvTable& t) {
    std::string out;
    for (std::size_t i = 0; i < t.header.size(); ++i) out += (i ? "," : "") + csv_escape(t.header[i]);
    out += '\n';
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            if (const auto* s = std::get_if<std::string>(&row[i])) out += csv_escape(*s);
            else if (const auto* d = std::get_if<double>(&row[i])) out += format_number(*d);
            else out += std::to_string(std::get<long long>(row[i]));
        }
        out += '\n';
    }
    return out;
}

inline void emit_csv(const CsvTable& t, const std::string& path) {
    const std::string text = to_csv(t);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f << text;
    if (!f) throw IoError("write to '" + path + "' failed");
}

/// Minimal RFC-4180 reader; every cell comes back as a string.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string cell;
    bool quoted = false;
    bool row_open = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
                cell += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell += c;
            }
            continue;
        }
        row_open = true;
        if (c == '"') quoted = true;
        else if (c == ',') {
            row.push_back(std::move(cell));
            cell.clear();
        } else if (c == '\n') {
            row.push_back(std::move(cell));
            cell.clear();
            rows.push_back(std::move(row));
            row.clear();
            row_open = false;
        } else if (c != '\r') {
            cell += c;
        }
    }
    if (row_open) {
        row.push_back(std::move(cell));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<std::vector<std::string>> read_csv_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_csv(ss.str());
}

} // namespace attnid

#endif // ATTNID_CSV_HPP
