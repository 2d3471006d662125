#include "bench/bench_util.hpp"

namespace bench {

util::Result<std::vector<std::vector<std::string>>, std::string>
read_csv(const std::string& path, const std::string& expected_header) {
    using R = util::Result<std::vector<std::vector<std::string>>, std::string>;
    std::ifstream f(path);
    if (!f) return R("MissingInput: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) return R("MissingInput: empty file " + path);
    if (line != expected_header)
        return R("unexpected header in " + path + ": " + line);
    std::vector<std::vector<std::string>> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        rows.push_back(split_csv_line(line));
    }
    return R(std::move(rows));
}

} // namespace bench
