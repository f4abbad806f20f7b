#pragma once

// The one CSV schema every PR-carrying output uses. Column order is fixed,
// the header row is always present, and decimals render with six
// significant digits, so a rerun with the same seeds is byte-identical and
// every file re-parses into the same rows.

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace prgen::csv {

struct CsvError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

struct CsvRow {
    std::string run_id;
    std::string method;
    std::string method_params;  // semicolon-separated key=value pairs
    double temperature = 1.0;
    std::optional<double> lambda;  // empty for model sweeps
    double precision = 0.0;
    double recall = 0.0;
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
};

inline const char* kCsvHeader = "run_id,method,method_params,temperature,lambda,precision,recall,n_samples,seed";

inline void check_field(const std::string& s) {
    if (s.find(',') != std::string::npos || s.find('\n') != std::string::npos) {
        throw CsvError("csv field may not contain commas or newlines: " + s);
    }
}

inline std::string to_line(const CsvRow& r) {
    check_field(r.run_id);
    check_field(r.method);
    check_field(r.method_params);
    std::ostringstream os;
    os << r.run_id << ',' << r.method << ',' << r.method_params << ','
       << format_number(r.temperature) << ','
       << (r.lambda.has_value() ? format_number(*r.lambda) : std::string()) << ','
       << format_number(r.precision) << ',' << format_number(r.recall) << ',' << r.n_samples
       << ',' << r.seed;
    return os.str();
}

inline std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

inline CsvRow from_line(const std::string& line) {
    const std::vector<std::string> f = split_fields(line);
    if (f.size() != 9) {
        throw CsvError("csv row has " + std::to_string(f.size()) + " fields, expected 9");
    }
    CsvRow r;
    r.run_id = f[0];
    r.method = f[1];
    r.method_params = f[2];
    r.temperature = std::stod(f[3]);
    if (!f[4].empty()) {
        r.lambda = std::stod(f[4]);
    }
    r.precision = std::stod(f[5]);
    r.recall = std::stod(f[6]);
    r.n_samples = std::stoull(f[7]);
    r.seed = std::stoull(f[8]);
    return r;
}

inline void write_rows(const std::string& path, const std::vector<CsvRow>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw CsvError("cannot open " + path + " for writing");
    }
    os << kCsvHeader << '\n';
    for (const CsvRow& r : rows) {
        os << to_line(r) << '\n';
    }
    if (!os) {
        throw CsvError("write failed for " + path);
    }
}

inline std::vector<CsvRow> read_rows(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw CsvError("cannot open " + path);
    }
    std::string line;
    if (!std::getline(is, line) || line != kCsvHeader) {
        throw CsvError("missing or unexpected header in " + path);
    }
    std::vector<CsvRow> rows;
    while (std::getline(is, line)) {
        if (!line.empty()) {
            rows.push_back(from_line(line));
        }
    }
    return rows;
}

}  // namespace prgen::csv
