#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <thread>

#include "sandbox/host.hpp"
#include "sandbox/net_errno.hpp"
#include "util/clock.hpp"

using namespace sandbox;

#ifndef GUESTS_DIR
#define GUESTS_DIR "guests"
#endif

namespace {

std::string guest(const char* name) {
    return std::string(GUESTS_DIR) + "/" + name;
}

Manifest manifest(const char* name, const char* wasm,
                  std::vector<Endpoint> endpoints = {}) {
    Manifest m;
    m.name = name;
    m.bytecode_path = guest(wasm);
    m.allowed_endpoints = std::move(endpoints);
    return m;
}

struct HostFixture {
    VirtualHub hub;
    Host host;

    explicit HostFixture(uint64_t window_us = 10000, size_t max_instances = 16)
        : host(Host::Options{TransportMode::VirtualChannel, &hub, max_instances, 1024,
                             window_us, -1}) {}
};

void wait_state(Instance& inst, InstanceState want, uint64_t timeout_us = 5000000) {
    const uint64_t t0 = util::now_us();
    while (inst.state() != want && util::now_us() - t0 < timeout_us)
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    REQUIRE(inst.state() == want);
}

} // namespace

TEST_CASE("loader rejects a zero-byte file as invalid bytecode") {
    HostFixture f;
    const std::string path = "/tmp/empty_module.wasm";
    std::ofstream(path, std::ios::binary).close();
    Manifest m;
    m.name = "empty";
    m.bytecode_path = path;
    auto r = f.host.load_module(m);
    REQUIRE(!r.ok());
    CHECK(r.error().kind == LoadErrorKind::InvalidBytecode);
}

TEST_CASE("loader rejects unreadable path and garbage bytes") {
    HostFixture f;
    Manifest m = manifest("nofile", "does_not_exist.wasm");
    auto r = f.host.load_module(m);
    REQUIRE(!r.ok());
    CHECK(r.error().kind == LoadErrorKind::InvalidBytecode);

    const std::string path = "/tmp/garbage_module.wasm";
    {
        std::ofstream out(path, std::ios::binary);
        std::mt19937_64 rng(3);
        for (int i = 0; i < 512; i++) out.put(char(rng()));
    }
    Manifest g;
    g.name = "garbage";
    g.bytecode_path = path;
    auto r2 = f.host.load_module(g);
    REQUIRE(!r2.ok());
    CHECK(r2.error().kind == LoadErrorKind::InvalidBytecode);
}

TEST_CASE("module parser survives random truncations and bit flips of a real module") {
    std::ifstream in(guest("sensing_dapp.wasm"), std::ios::binary);
    REQUIRE(in.good());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    std::mt19937_64 rng(7);
    for (int i = 0; i < 2000; i++) {
        auto mutated = bytes;
        mutated.resize(rng() % (bytes.size() + 1));
        if (!mutated.empty())
            for (int k = 0; k < 8; k++) mutated[rng() % mutated.size()] ^= uint8_t(1u << (rng() % 8));
        (void)Module::parse(mutated); // must not crash; errors are fine
    }
}

TEST_CASE("forbidden import is reported by name") {
    HostFixture f;
    auto r = f.host.load_module(manifest("forbidden", "forbidden.wasm"));
    REQUIRE(!r.ok());
    CHECK(r.error().kind == LoadErrorKind::ForbiddenImport);
    CHECK(r.error().detail == "env.proc_spawn");
}

TEST_CASE("sensing module loads with every import inside the whitelist") {
    HostFixture f;
    auto r = f.host.load_module(
        manifest("sensing", "sensing_dapp.wasm", {{"agent", 9300}}));
    REQUIRE(r.ok());
    const auto& mod = *r.value().module;
    CHECK(mod.imported_funcs.size() >= 5); // connect/read/write/close + clock
    CHECK(mod.find_export("dapp_main", ExportKind::Func) != nullptr);
    CHECK(mod.find_export("dapp_config_ptr", ExportKind::Func) != nullptr);
    CHECK(mod.find_export("memory", ExportKind::Memory) != nullptr);
}

TEST_CASE("duplicate manifest name is rejected") {
    HostFixture f;
    auto a = f.host.load_module(manifest("dup", "busy_dapp.wasm"));
    REQUIRE(a.ok());
    auto b = f.host.load_module(manifest("dup", "busy_dapp.wasm"));
    REQUIRE(!b.ok());
    CHECK(b.error().kind == LoadErrorKind::InvalidManifest);
}

TEST_CASE("instance limit yields ResourceExhausted") {
    HostFixture f(10000, 4);
    auto h = f.host.load_module(manifest("busy", "busy_dapp.wasm"));
    REQUIRE(h.ok());
    std::vector<std::shared_ptr<Instance>> keep;
    for (int i = 0; i < 4; i++) {
        auto s = f.host.spawn_instance(h.value());
        REQUIRE(s.ok());
        keep.push_back(s.value());
    }
    auto s5 = f.host.spawn_instance(h.value());
    REQUIRE(!s5.ok());
    CHECK(s5.error() == SpawnError::ResourceExhausted);
    keep.clear();
    auto again = f.host.spawn_instance(h.value());
    CHECK(again.ok());
}

TEST_CASE("probe guest runs deterministically and under metering with the same checksum") {
    HostFixture f(5000);
    auto h = f.host.load_module(manifest("busy", "busy_dapp.wasm"));
    REQUIRE(h.ok());
    f.host.scheduler().start();

    auto run_probe = [&](uint64_t budget, uint64_t iters) {
        auto s = f.host.spawn_instance(h.value(), budget);
        REQUIRE(s.ok());
        auto inst = s.value();
        REQUIRE(inst->write_config("mode=probe\niters=" + std::to_string(iters) + "\n"));
        REQUIRE(inst->start());
        inst->join();
        REQUIRE(inst->state() == InstanceState::Exited);
        CHECK(!inst->host_stopped());
        return inst->exit_code();
    };

    const int32_t unmetered = run_probe(kUnlimitedFuel, 2000000);
    const int32_t unmetered2 = run_probe(kUnlimitedFuel, 2000000);
    CHECK(unmetered == unmetered2);

    // suspended-and-resumed run computes the identical checksum
    const int32_t metered = run_probe(2000000, 2000000); // several windows' worth
    CHECK(metered == unmetered);
}

TEST_CASE("zero budget makes zero guest progress") {
    HostFixture f(5000);
    auto h = f.host.load_module(manifest("busy", "busy_dapp.wasm"));
    REQUIRE(h.ok());
    f.host.scheduler().start();
    auto s = f.host.spawn_instance(h.value(), 0);
    REQUIRE(s.ok());
    auto inst = s.value();
    REQUIRE(inst->start()); // flat mode
    wait_state(*inst, InstanceState::Suspended);
    util::sleep_until_us(util::now_us() + 60000);
    const uint64_t first = f.host.scheduler().windows_closed();
    REQUIRE(first > 2);
    for (uint64_t w = 1; w + 1 < first; w++) {
        auto u = f.host.scheduler().usage(inst->id(), w);
        REQUIRE(u.ok());
        CHECK(u.value().instructions_used == 0);
    }
    inst->request_stop();
    inst->join();
}

TEST_CASE("unlimited budget never suspends") {
    HostFixture f(5000);
    auto h = f.host.load_module(manifest("busy", "busy_dapp.wasm"));
    REQUIRE(h.ok());
    f.host.scheduler().start();
    auto s = f.host.spawn_instance(h.value(), kUnlimitedFuel);
    REQUIRE(s.ok());
    auto inst = s.value();
    REQUIRE(inst->start());
    util::sleep_until_us(util::now_us() + 80000);
    inst->request_stop();
    inst->join();
    for (const auto& u : f.host.scheduler().usage_log())
        CHECK(!u.suspended);
}

TEST_CASE("budget bound holds in every closed window of a metered busy run") {
    constexpr uint64_t kBudget = 300000;
    constexpr uint64_t kEps = 10000;
    HostFixture f(10000);
    auto h = f.host.load_module(manifest("busy", "busy_dapp.wasm"));
    REQUIRE(h.ok());
    f.host.scheduler().start();
    auto s = f.host.spawn_instance(h.value(), kBudget);
    REQUIRE(s.ok());
    auto inst = s.value();
    REQUIRE(inst->start());
    util::sleep_until_us(util::now_us() + 300000);
    inst->request_stop();
    inst->join();

    const auto log = f.host.scheduler().usage_log();
    REQUIRE(log.size() > 10);
    size_t full_windows = 0;
    for (size_t i = 2; i + 2 < log.size(); i++) {
        const auto& u = log[i];
        CHECK(u.instructions_used <= kBudget + kEps);
        if (u.instructions_used >= kBudget) {
            full_windows++;
            CHECK(u.suspended);
        }
    }
    CHECK(full_windows > 5); // the busy loop saturates its budget
}

TEST_CASE("usage queries: closed, open, and future windows") {
    HostFixture f(10000);
    auto h = f.host.load_module(manifest("busy", "busy_dapp.wasm"));
    REQUIRE(h.ok());
    f.host.scheduler().start();
    auto s = f.host.spawn_instance(h.value(), kUnlimitedFuel);
    auto inst = s.value();
    REQUIRE(inst->start());
    util::sleep_until_us(util::now_us() + 50000);

    const uint64_t closed = f.host.scheduler().windows_closed();
    REQUIRE(closed >= 2);
    auto past = f.host.scheduler().usage(inst->id(), closed - 1);
    REQUIRE(past.ok());
    CHECK(past.value().instructions_used > 0);

    auto live1 = f.host.scheduler().usage(inst->id(), closed);
    auto future = f.host.scheduler().usage(inst->id(), closed + 50);
    REQUIRE(!future.ok());
    CHECK(future.error() == UsageError::UnknownWindow);
    if (live1.ok() && f.host.scheduler().windows_closed() == closed) {
        auto live2 = f.host.scheduler().usage(inst->id(), closed);
        if (live2.ok())
            CHECK(live2.value().instructions_used >= live1.value().instructions_used);
    }
    auto unknown = f.host.scheduler().usage(9999, 0);
    REQUIRE(!unknown.ok());
    CHECK(unknown.error() == UsageError::UnknownInstance);

    inst->request_stop();
    inst->join();
}

TEST_CASE("guest blocked on sock_read consumes almost nothing") {
    HostFixture f(10000);
    auto pacer_listener = f.hub.listen("pacer", 9500);
    REQUIRE(pacer_listener.ok());
    auto h = f.host.load_module(
        manifest("busy", "busy_dapp.wasm", {{"pacer", 9500}}));
    REQUIRE(h.ok());
    f.host.scheduler().start();
    auto s = f.host.spawn_instance(h.value(), kUnlimitedFuel);
    auto inst = s.value();
    REQUIRE(inst->write_config("mode=paced\niters_per_period=1000\n"));
    REQUIRE(inst->start());
    auto server_end = pacer_listener.value()->accept(1000000);
    REQUIRE(server_end);

    // no pacing bytes: the guest parks in sock_read
    util::sleep_until_us(util::now_us() + 100000);
    const uint64_t closed = f.host.scheduler().windows_closed();
    auto u = f.host.scheduler().usage(inst->id(), closed - 1);
    REQUIRE(u.ok());
    CHECK(u.value().instructions_used < 2000);

    inst->request_stop();
    inst->join();
}

TEST_CASE("trapping guest is contained while another instance keeps running") {
    HostFixture f(10000);
    auto busy_h = f.host.load_module(manifest("busy", "busy_dapp.wasm"));
    auto trap_h = f.host.load_module(manifest("trap", "trap_oob.wasm"));
    REQUIRE(busy_h.ok());
    REQUIRE(trap_h.ok());
    f.host.scheduler().start();

    auto busy = f.host.spawn_instance(busy_h.value(), kUnlimitedFuel).value();
    REQUIRE(busy->start());

    auto trap = f.host.spawn_instance(trap_h.value(), kUnlimitedFuel).value();
    REQUIRE(trap->start());
    trap->join();
    CHECK(trap->state() == InstanceState::Trapped);
    CHECK(trap->trap() == TrapCode::MemoryOutOfBounds);

    // survivor keeps making progress in the windows after the trap
    const uint64_t w0 = f.host.scheduler().windows_closed();
    util::sleep_until_us(util::now_us() + 40000);
    const uint64_t w1 = f.host.scheduler().windows_closed();
    REQUIRE(w1 > w0 + 1);
    for (uint64_t w = w0; w < w1 - 1; w++) {
        auto u = f.host.scheduler().usage(busy->id(), w);
        REQUIRE(u.ok());
        CHECK(u.value().instructions_used > 0);
    }
    CHECK(busy->state() == InstanceState::Running);
    busy->request_stop();
    busy->join();
}

TEST_CASE("memory isolation: writer pattern never appears in a fresh instance") {
    HostFixture f;
    auto h = f.host.load_module(manifest("memprobe", "memprobe.wasm"));
    REQUIRE(h.ok());

    auto writer = f.host.spawn_instance(h.value()).value();
    REQUIRE(writer->write_config("mode=write\n"));
    REQUIRE(writer->start());
    writer->join();
    REQUIRE(writer->state() == InstanceState::Exited);
    CHECK(writer->exit_code() == 0);

    auto reader = f.host.spawn_instance(h.value()).value();
    REQUIRE(reader->write_config("mode=read\n"));
    REQUIRE(reader->start());
    reader->join();
    REQUIRE(reader->state() == InstanceState::Exited);
    CHECK(reader->exit_code() == 0); // zero nonzero bytes observed
}

TEST_CASE("sock host functions: errno surface") {
    HostFixture f;
    auto listener = f.hub.listen("agent", 9300);
    REQUIRE(listener.ok());
    auto h = f.host.load_module(
        manifest("sensing", "sensing_dapp.wasm", {{"agent", 9300}}));
    REQUIRE(h.ok());
    auto inst = f.host.spawn_instance(h.value()).value();

    auto put_str = [&](uint32_t at, std::string_view s) {
        auto span = inst->mem(at, uint32_t(s.size()));
        REQUIRE(!span.empty());
        std::copy(s.begin(), s.end(), span.begin());
    };

    SUBCASE("EFAULT for out-of-range host string, memory untouched") {
        uint64_t args[3] = {uint64_t(inst->mem_size()) + 4096, 5, 9300};
        CHECK(inst->dispatch_host(HostFn::SockConnect, args) == -kErrFault);
    }
    SUBCASE("EACCES for endpoints outside the whitelist") {
        put_str(64, "evil.example");
        uint64_t args[3] = {64, 12, 80};
        CHECK(inst->dispatch_host(HostFn::SockConnect, args) == -kErrAccess);
        // same host, wrong port
        put_str(64, "agent");
        uint64_t args2[3] = {64, 5, 9999};
        CHECK(inst->dispatch_host(HostFn::SockConnect, args2) == -kErrAccess);
    }
    SUBCASE("whitelisted endpoint connects and gets fd 3, EBADF elsewhere") {
        put_str(64, "agent");
        uint64_t args[3] = {64, 5, 9300};
        CHECK(inst->dispatch_host(HostFn::SockConnect, args) == 3);
        uint64_t bad[3] = {99, 0, 16};
        CHECK(inst->dispatch_host(HostFn::SockRead, bad) == -kErrBadFd);
        uint64_t close_args[1] = {3};
        CHECK(inst->dispatch_host(HostFn::SockClose, close_args) == 0);
        // closed descriptors are never reused
        CHECK(inst->dispatch_host(HostFn::SockConnect, args) == 4);
    }
    SUBCASE("EFAULT for read buffer beyond linear memory") {
        put_str(64, "agent");
        uint64_t args[3] = {64, 5, 9300};
        REQUIRE(inst->dispatch_host(HostFn::SockConnect, args) == 3);
        uint64_t rd[3] = {3, uint64_t(inst->mem_size()) - 4, 4096};
        CHECK(inst->dispatch_host(HostFn::SockRead, rd) == -kErrFault);
    }
    SUBCASE("bind requires a 0.0.0.0 grant") {
        uint64_t args[1] = {9700};
        CHECK(inst->dispatch_host(HostFn::SockBind, args) == -kErrAccess);
    }
}

TEST_CASE("capability soundness under random host-call sequences") {
    HostFixture f;
    // listeners on both a whitelisted and a non-whitelisted endpoint
    auto allowed = f.hub.listen("agent", 9300);
    auto outside = f.hub.listen("other", 9301);
    REQUIRE(allowed.ok());
    REQUIRE(outside.ok());

    auto h = f.host.load_module(
        manifest("sensing", "sensing_dapp.wasm", {{"agent", 9300}}));
    REQUIRE(h.ok());
    auto inst = f.host.spawn_instance(h.value()).value();

    const std::vector<std::pair<std::string, uint16_t>> targets = {
        {"agent", 9300}, {"agent", 9301}, {"other", 9301},
        {"other", 9300}, {"evil", 80},    {"agent", 80},
    };
    std::mt19937_64 rng(11);
    int connected_ok = 0;
    for (int i = 0; i < 2000; i++) {
        const auto& [host, port] = targets[rng() % targets.size()];
        auto span = inst->mem(128, uint32_t(host.size()));
        std::copy(host.begin(), host.end(), span.begin());
        switch (rng() % 3) {
        case 0: {
            uint64_t args[3] = {128, host.size(), port};
            const int32_t r = inst->dispatch_host(HostFn::SockConnect, args);
            if (r >= 0) {
                connected_ok++;
                // only the whitelisted endpoint may ever succeed
                CHECK(host == "agent");
                CHECK(port == 9300);
            } else {
                CHECK((r == -kErrAccess || r == -kErrConnRefused));
            }
            break;
        }
        case 1: {
            uint64_t args[1] = {port};
            CHECK(inst->dispatch_host(HostFn::SockBind, args) == -kErrAccess);
            break;
        }
        default: {
            uint64_t args[1] = {rng() % 64};
            const int32_t r = inst->dispatch_host(HostFn::SockClose, args);
            CHECK((r == 0 || r == -kErrBadFd));
            break;
        }
        }
    }
    CHECK(connected_ok > 0);
}

TEST_CASE("echo server guest exercises bind, accept, read, and write") {
    HostFixture f;
    auto h = f.host.load_module(
        manifest("echo", "echo_server.wasm", {{"0.0.0.0", 9600}}));
    REQUIRE(h.ok());
    auto inst = f.host.spawn_instance(h.value()).value();
    REQUIRE(inst->write_config("port=9600\n"));
    REQUIRE(inst->start());

    std::unique_ptr<Conn> client;
    for (int i = 0; i < 200 && !client; i++) {
        auto r = f.hub.connect("echo", 9600);
        if (r.ok()) client = std::move(r.value());
        else std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    REQUIRE(client);

    const std::string msg = "through the sandbox and back";
    REQUIRE(client->write({reinterpret_cast<const uint8_t*>(msg.data()), msg.size()}) ==
            int64_t(msg.size()));
    std::vector<uint8_t> back(msg.size());
    size_t got = 0;
    while (got < back.size()) {
        const int64_t n = client->read({back.data() + got, back.size() - got});
        REQUIRE(n > 0);
        got += size_t(n);
    }
    CHECK(std::string(back.begin(), back.end()) == msg);
    client->close();
    inst->join();
    CHECK(inst->state() == InstanceState::Exited);
    CHECK(inst->exit_code() == int32_t(msg.size()));
}

TEST_CASE("echo server over loopback TCP") {
    Host host(Host::Options{TransportMode::LoopbackTcp, nullptr, 16, 1024, 10000, -1});
    auto h = host.load_module(
        manifest("echo-tcp", "echo_server.wasm", {{"0.0.0.0", 19601}}));
    REQUIRE(h.ok());
    auto inst = host.spawn_instance(h.value()).value();
    REQUIRE(inst->write_config("port=19601\n"));
    REQUIRE(inst->start());

    std::unique_ptr<Conn> client;
    for (int i = 0; i < 200 && !client; i++) {
        auto r = tcp_connect("127.0.0.1", 19601);
        if (r.ok()) client = std::move(r.value());
        else std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    REQUIRE(client);
    const std::string msg = "tcp loopback";
    REQUIRE(client->write({reinterpret_cast<const uint8_t*>(msg.data()), msg.size()}) ==
            int64_t(msg.size()));
    std::vector<uint8_t> back(msg.size());
    size_t got = 0;
    while (got < back.size()) {
        const int64_t n = client->read({back.data() + got, back.size() - got});
        REQUIRE(n > 0);
        got += size_t(n);
    }
    CHECK(std::string(back.begin(), back.end()) == msg);
    client->close();
    inst->join();
    CHECK(inst->state() == InstanceState::Exited);
}

TEST_CASE("calibration repeats within 10 percent and rejects zero duration") {
    HostFixture f(10000);
    auto too_short = calibrate_capacity(f.host, guest("busy_dapp.wasm"), 0);
    REQUIRE(!too_short.ok());
    CHECK(too_short.error().find("CalibrationTooShort") == 0);

    auto c1 = calibrate_capacity(f.host, guest("busy_dapp.wasm"), 300000);
    REQUIRE(c1.ok());
    auto c2 = calibrate_capacity(f.host, guest("busy_dapp.wasm"), 300000);
    REQUIRE(c2.ok());
    const double a = double(c1.value()), b = double(c2.value());
    CHECK(a > 0);
    CHECK(std::abs(a - b) / a < 0.10);
}
