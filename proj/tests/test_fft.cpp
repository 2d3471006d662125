#include "doctest.h"

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "dapp/native_env.hpp"
#include "dft_oracle.hpp"

namespace {

struct Split {
    std::vector<double> re, im;
};

Split to_split(const std::vector<std::complex<double>>& x) {
    Split s;
    s.re.reserve(x.size());
    s.im.reserve(x.size());
    for (const auto& v : x) {
        s.re.push_back(v.real());
        s.im.push_back(v.imag());
    }
    return s;
}

std::vector<std::complex<double>> random_signal(std::mt19937_64& rng, size_t n) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<std::complex<double>> x(n);
    for (auto& v : x) v = {dist(rng), dist(rng)};
    return x;
}

double rel_l2_error(const Split& got, const std::vector<std::complex<double>>& want) {
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < want.size(); i++) {
        const double dr = got.re[i] - want[i].real();
        const double di = got.im[i] - want[i].imag();
        num += dr * dr + di * di;
        den += std::norm(want[i]);
    }
    return std::sqrt(num / den);
}

} // namespace

TEST_CASE("fft of zeros is zeros") {
    std::vector<double> re(256, 0.0), im(256, 0.0);
    REQUIRE(dapp_fft(re.data(), im.data(), 256) == 0);
    for (size_t i = 0; i < 256; i++) {
        CHECK(re[i] == 0.0);
        CHECK(im[i] == 0.0);
    }
}

TEST_CASE("fft of the unit impulse is all ones") {
    std::vector<double> re(64, 0.0), im(64, 0.0);
    re[0] = 1.0;
    REQUIRE(dapp_fft(re.data(), im.data(), 64) == 0);
    for (size_t i = 0; i < 64; i++) {
        CHECK(re[i] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(im[i] == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("fft matches the naive DFT within 1e-9 relative error") {
    std::mt19937_64 rng(2024);
    for (const size_t n : {64, 256, 1024}) {
        for (int trial = 0; trial < 3; trial++) {
            const auto x = random_signal(rng, n);
            const auto want = oracle::naive_dft(x);
            auto s = to_split(x);
            REQUIRE(dapp_fft(s.re.data(), s.im.data(), uint32_t(n)) == 0);
            CHECK(rel_l2_error(s, want) < 1e-9);
        }
    }
}

TEST_CASE("parseval holds within 1e-9 up to n=4096") {
    std::mt19937_64 rng(77);
    for (const size_t n : {64, 512, 4096}) {
        const auto x = random_signal(rng, n);
        double time_energy = 0.0;
        for (const auto& v : x) time_energy += std::norm(v);
        auto s = to_split(x);
        REQUIRE(dapp_fft(s.re.data(), s.im.data(), uint32_t(n)) == 0);
        double freq_energy = 0.0;
        for (size_t i = 0; i < n; i++)
            freq_energy += s.re[i] * s.re[i] + s.im[i] * s.im[i];
        freq_energy /= double(n);
        CHECK(std::abs(freq_energy - time_energy) / time_energy < 1e-9);
    }
}

TEST_CASE("fft rejects non-power-of-two and oversized lengths") {
    std::vector<double> re(100, 0.0), im(100, 0.0);
    CHECK(dapp_fft(re.data(), im.data(), 100) == -1);
    CHECK(dapp_fft(re.data(), im.data(), 0) == -1);
    std::vector<double> big(8192, 0.0);
    CHECK(dapp_fft(big.data(), big.data(), 8192) == -1);
}
