#include "bench/report.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "bench/bench_util.hpp"
#include "bench/isolation.hpp"

namespace bench {

namespace {

bool exists(const std::string& p) { return std::filesystem::exists(p); }

std::string report_latency(const std::string& dir, bool* any_fail) {
    auto rows = read_csv(dir + "/latency_stages.csv",
                         "arm,repeat,seq,decode_us,process_us,encode_us,transmit_us,"
                         "cumulative_us");
    if (!rows.ok()) return "";
    std::map<std::string, std::vector<uint64_t>> cum;
    std::map<std::string, std::map<std::string, std::vector<uint64_t>>> stages;
    for (const auto& r : rows.value()) {
        if (r.size() != 8) continue;
        cum[r[0]].push_back(std::stoull(r[7]));
        stages[r[0]]["decode"].push_back(std::stoull(r[3]));
        stages[r[0]]["process"].push_back(std::stoull(r[4]));
        stages[r[0]]["encode"].push_back(std::stoull(r[5]));
        stages[r[0]]["transmit"].push_back(std::stoull(r[6]));
    }

    std::ostringstream os;
    std::ofstream dat(dir + "/latency_medians.dat");
    dat << "# arm decode_us process_us encode_us transmit_us cumulative_us\n";
    for (auto& [arm, v] : cum) {
        os << "latency[" << arm << "]: loops=" << v.size();
        os << " median decode=" << percentile(stages[arm]["decode"], 50)
           << "us process=" << percentile(stages[arm]["process"], 50)
           << "us encode=" << percentile(stages[arm]["encode"], 50)
           << "us transmit=" << percentile(stages[arm]["transmit"], 50)
           << "us cumulative=" << percentile(v, 50) << "us (p90=" << percentile(v, 90)
           << ", p99=" << percentile(v, 99) << ")\n";
        dat << arm << ' ' << percentile(stages[arm]["decode"], 50) << ' '
            << percentile(stages[arm]["process"], 50) << ' '
            << percentile(stages[arm]["encode"], 50) << ' '
            << percentile(stages[arm]["transmit"], 50) << ' ' << percentile(v, 50)
            << '\n';
    }
    if (cum.count("sandboxed")) {
        const bool rt = percentile(cum["sandboxed"], 50) < 10000.0;
        os << "latency: real-time bound (<10ms sandboxed median) -> "
           << (rt ? "PASS" : "FAIL") << "\n";
        if (!rt) *any_fail = true;
        if (cum.count("native")) {
            const bool order =
                percentile(cum["native"], 50) <= percentile(cum["sandboxed"], 50);
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.2f",
                          percentile(cum["sandboxed"], 50) / percentile(cum["native"], 50));
            os << "latency: sandbox/native median cumulative ratio = " << buf << "\n";
            os << "latency: ordering (native <= sandboxed) -> "
               << (order ? "PASS" : "FAIL") << "\n";
            if (!order) *any_fail = true;
        }
    }
    return os.str();
}

std::string report_footprint(const std::string& dir, bool* any_fail) {
    auto rows = read_csv(dir + "/footprint.csv", "arm,cpu_time_ms,peak_rss_bytes");
    if (!rows.ok()) return "";
    std::map<std::string, std::vector<double>> cpu, mem;
    std::ostringstream os;
    bool cpu_pos = true;
    for (const auto& r : rows.value()) {
        if (r.size() != 3) continue;
        const double c = std::stod(r[1]);
        const double m = std::stod(r[2]);
        cpu[r[0]].push_back(c);
        mem[r[0]].push_back(m);
        if (c <= 0) cpu_pos = false;
        os << "footprint[" << r[0] << "]: cpu_time_ms=" << c
           << " peak_rss_bytes=" << uint64_t(m) << "\n";
    }
    if (cpu.count("native") && cpu.count("sandboxed")) {
        const double cr = percentile(cpu["sandboxed"], 50) / percentile(cpu["native"], 50);
        const double mr = percentile(mem["sandboxed"], 50) / percentile(mem["native"], 50);
        char buf[128];
        std::snprintf(buf, sizeof buf,
                      "footprint: sandbox/native ratios cpu=%.2f mem=%.2f\n", cr, mr);
        os << buf;
        os << "footprint: cpu_time > 0 for all records -> " << (cpu_pos ? "PASS" : "FAIL")
           << "\n";
        os << "footprint: sandbox memory ratio > 1 -> " << (mr > 1.0 ? "PASS" : "FAIL")
           << "\n";
        if (!cpu_pos || mr <= 1.0) *any_fail = true;
    }
    return os.str();
}

} // namespace

util::Result<std::string, std::string> build_report(const std::string& dir) {
    using R = util::Result<std::string, std::string>;
    std::ostringstream os;
    bool found = false;
    bool any_fail = false;

    if (exists(dir + "/isolation_usage.csv")) {
        found = true;
        auto check = check_isolation(dir);
        if (!check.ok()) return R::make_err(check.error());
        os << isolation_summary(check.value());
        if (!check.value().all_ok()) any_fail = true;
        auto dat = write_shares_dat(dir);
        if (!dat.ok()) return R::make_err(dat.error());
    }
    if (exists(dir + "/latency_stages.csv")) {
        found = true;
        os << report_latency(dir, &any_fail);
    }
    if (exists(dir + "/footprint.csv")) {
        found = true;
        os << report_footprint(dir, &any_fail);
    }
    if (!found)
        return R::make_err("MissingInput: no scenario outputs found in " + dir);

    os << "report: overall -> " << (any_fail ? "FAIL" : "PASS") << "\n";
    std::ofstream f(dir + "/report.txt");
    f << os.str();
    return R::make_ok(os.str());
}

} // namespace bench
