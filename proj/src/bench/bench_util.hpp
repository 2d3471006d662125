#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "util/result.hpp"

namespace bench {

enum class Arm { Native, Sandboxed };

inline const char* arm_name(Arm a) {
    return a == Arm::Native ? "native" : "sandboxed";
}

inline util::Result<Arm, std::string> arm_from_string(const std::string& s) {
    using R = util::Result<Arm, std::string>;
    if (s == "native") return R(Arm::Native);
    if (s == "sandbox" || s == "sandboxed") return R(Arm::Sandboxed);
    return R("unknown arm: " + s);
}

// All harness artifacts go through this wrapper; nothing is written outside
// the configured directory.
class OutDir {
public:
    explicit OutDir(std::string path) : root_(std::move(path)) {
        std::filesystem::create_directories(root_);
    }

    std::string path(const std::string& name) const {
        return (std::filesystem::path(root_) / name).string();
    }

    std::ofstream open(const std::string& name) const {
        return std::ofstream(path(name));
    }

    const std::string& root() const { return root_; }

private:
    std::string root_;
};

template <typename T>
double percentile(std::vector<T> values, double p) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const double idx = p / 100.0 * double(values.size() - 1);
    const size_t lo = size_t(idx);
    const size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = idx - double(lo);
    return double(values[lo]) * (1.0 - frac) + double(values[hi]) * frac;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    return out;
}

util::Result<std::vector<std::vector<std::string>>, std::string>
read_csv(const std::string& path, const std::string& expected_header);

} // namespace bench
