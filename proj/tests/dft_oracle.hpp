#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

// Independent O(n^2) DFT used as the oracle for the dApp's FFT and for
// spectral assertions on generated frames. Deliberately naive; keep it free
// of any code shared with the implementation under test.

namespace oracle {

inline std::vector<std::complex<double>> naive_dft(const std::vector<std::complex<double>>& x) {
    const size_t n = x.size();
    std::vector<std::complex<double>> out(n);
    const double w0 = -2.0 * M_PI / double(n);
    for (size_t k = 0; k < n; k++) {
        std::complex<double> acc(0.0, 0.0);
        for (size_t i = 0; i < n; i++) {
            const double ang = w0 * double(k) * double(i);
            acc += x[i] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    return out;
}

// Mean |X[k]|^2 over each PRB's bin range, straight from the naive DFT.
inline std::vector<double> prb_energies(const std::vector<std::complex<double>>& x,
                                        uint16_t n_prb) {
    const auto X = naive_dft(x);
    const size_t bins = x.size() / n_prb;
    std::vector<double> e(n_prb, 0.0);
    for (uint16_t p = 0; p < n_prb; p++) {
        double acc = 0.0;
        for (size_t k = 0; k < bins; k++) acc += std::norm(X[p * bins + k]);
        e[p] = acc / double(bins);
    }
    return e;
}

} // namespace oracle
