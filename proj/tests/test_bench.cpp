#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "bench/bench_util.hpp"
#include "bench/isolation.hpp"
#include "bench/latency.hpp"
#include "bench/report.hpp"
#include "sandbox/host.hpp"

#ifndef GUESTS_DIR
#define GUESTS_DIR "guests"
#endif

TEST_CASE("percentile interpolates and handles edges") {
    std::vector<uint64_t> v{10, 20, 30, 40};
    CHECK(bench::percentile(v, 0) == 10.0);
    CHECK(bench::percentile(v, 100) == 40.0);
    CHECK(bench::percentile(v, 50) == 25.0);
    CHECK(bench::percentile(std::vector<uint64_t>{}, 50) == 0.0);
}

TEST_CASE("report on an empty directory is MissingInput") {
    const std::string dir = "/tmp/bench-empty-report";
    std::filesystem::create_directories(dir);
    auto r = bench::build_report(dir);
    REQUIRE(!r.ok());
    CHECK(r.error().find("MissingInput") == 0);
}

TEST_CASE("isolation scenario json validates phase ordering") {
    const std::string path = "/tmp/bad_iso.json";
    std::ofstream(path) << R"({"saturation_at_us": 3000000, "metering_on_at_us": 2000000})";
    auto r = bench::isolation_scenario_from_json_file(path);
    REQUIRE(!r.ok());

    std::ofstream(path) << bench::isolation_scenario_to_json(bench::IsolationScenario{});
    auto ok = bench::isolation_scenario_from_json_file(path);
    REQUIRE(ok.ok());
    CHECK(ok.value().regular_budget_pct == 60.0);
    CHECK(ok.value().metering_on_at_us == 3000000);
}

TEST_CASE("manifest json covers all three budget forms") {
    auto unlimited = sandbox::manifest_from_json_text(
        R"({"name":"a","bytecode_path":"x.wasm","budget":"unlimited"})");
    REQUIRE(unlimited.ok());
    CHECK(unlimited.value().budget.resolve(1000) == sandbox::kUnlimitedFuel);

    auto fixed = sandbox::manifest_from_json_text(
        R"({"name":"b","bytecode_path":"x.wasm",
            "allowed_endpoints":[{"host":"agent","port":9300}],
            "budget":{"instructions_per_window":5000,"window_us":10000}})");
    REQUIRE(fixed.ok());
    CHECK(fixed.value().budget.resolve(1000) == 5000);
    REQUIRE(fixed.value().allowed_endpoints.size() == 1);
    CHECK(fixed.value().allowed_endpoints[0].host == "agent");

    auto pct = sandbox::manifest_from_json_text(
        R"({"name":"c","bytecode_path":"x.wasm","budget":{"percent":60.0}})");
    REQUIRE(pct.ok());
    CHECK(pct.value().budget.resolve(5088000) == 3052800); // floor(0.6 * capacity)

    auto bad = sandbox::manifest_from_json_text(R"({"name":"d"})");
    REQUIRE(!bad.ok());
}

TEST_CASE("stage durations are non-negative and sum to the cumulative") {
    bench::LatencyOptions opts;
    opts.arms = {bench::Arm::Native};
    opts.loops = 50;
    opts.period_us = 1000;
    opts.seed = 9;
    opts.guests_dir = GUESTS_DIR;
    opts.out_dir = "/tmp/bench-lat-unit";
    auto run = bench::run_latency(opts);
    REQUIRE(run.ok());

    auto rows = bench::read_csv(opts.out_dir + "/latency_stages.csv",
                                "arm,repeat,seq,decode_us,process_us,encode_us,"
                                "transmit_us,cumulative_us");
    REQUIRE(rows.ok());
    REQUIRE(rows.value().size() >= 50);
    for (const auto& r : rows.value()) {
        const uint64_t sum = std::stoull(r[3]) + std::stoull(r[4]) + std::stoull(r[5]) +
                             std::stoull(r[6]);
        const uint64_t cum = std::stoull(r[7]);
        CHECK(sum <= cum + 1);
        CHECK(cum <= sum + 1);
    }

    // a report built afterwards from the CSVs alone agrees
    auto rep = bench::build_report(opts.out_dir);
    REQUIRE(rep.ok());
    CHECK(rep.value().find("latency[native]") != std::string::npos);
}
