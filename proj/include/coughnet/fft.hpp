#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

namespace coughnet {

namespace detail {

inline bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// iterative radix-2 Cooley-Tukey, in place; n must be a power of two
inline void fft_radix2(std::vector<std::complex<double>>& a) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// naive DFT for non power-of-two sizes
inline std::vector<std::complex<double>> dft_naive(const std::vector<std::complex<double>>& x) {
    const size_t n = x.size();
    std::vector<std::complex<double>> out(n);
    for (size_t k = 0; k < n; ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * 3.14159265358979323846 *
                               static_cast<double>(k) * static_cast<double>(t) /
                               static_cast<double>(n);
            acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    return out;
}

}  // namespace detail

// Forward DFT; radix-2 when the size allows, naive otherwise.
inline std::vector<std::complex<double>> forward_dft(std::vector<std::complex<double>> x) {
    if (detail::is_pow2(x.size())) {
        detail::fft_radix2(x);
        return x;
    }
    return detail::dft_naive(x);
}

// One-sided power spectrum |X(k)|^2, k = 0..n/2, of a real frame.
inline std::vector<double> power_spectrum(const std::vector<double>& frame) {
    std::vector<std::complex<double>> buf(frame.size());
    for (size_t i = 0; i < frame.size(); ++i) buf[i] = std::complex<double>(frame[i], 0.0);
    buf = forward_dft(std::move(buf));
    const size_t half = frame.size() / 2;
    std::vector<double> p(half + 1);
    for (size_t k = 0; k <= half; ++k) p[k] = std::norm(buf[k]);
    return p;
}

}  // namespace coughnet
