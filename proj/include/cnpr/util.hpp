#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "cnpr/errors.hpp"

namespace cnpr {

inline std::string fmt_double(double v, const char* spec = "%.12g") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Linear-interpolated order statistic (the usual "type 7" quantile):
// q(p) = x[(n-1)p] with fractional indices interpolated.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw ValidationError("quantile of empty sample");
    if (sorted.size() == 1) return sorted[0];
    double pos = p * static_cast<double>(sorted.size() - 1);
    auto lo = static_cast<std::size_t>(pos);
    if (lo >= sorted.size() - 1) return sorted.back();
    double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) throw ValidationError("mean of empty sample");
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) throw ValidationError("variance needs >= 2 samples");
    double m = mean_of(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

// Minimal CSV writer. Fields are numeric or simple identifiers; quoting is
// applied only when a field contains a delimiter.
class CsvWriter {
  public:
    explicit CsvWriter(const std::string& path) : out_(path) {
        if (!out_) throw ValidationError("cannot open for writing: " + path);
    }

    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            write_field(fields[i]);
        }
        out_ << '\n';
    }

  private:
    void write_field(const std::string& f) {
        if (f.find_first_of(",\"\n") == std::string::npos) {
            out_ << f;
            return;
        }
        out_ << '"';
        for (char c : f) {
            if (c == '"') out_ << '"';
            out_ << c;
        }
        out_ << '"';
    }

    std::ofstream out_;
};

} // namespace cnpr
