#pragma once

// Preprocessing filters, FFT resampling, local Wiener denoising, in-band noise
// synthesis and SNR-controlled mixing. Every filter is length-preserving.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <fftw3.h>

#include "common.hpp"

namespace cci::dsp {

using Signal = std::vector<double>;

/// Second-order section in direct form II transposed, a0 normalized to 1.
struct Biquad {
    double b0, b1, b2, a1, a2;
};

struct SosFilter {
    std::vector<Biquad> sections;
    double gain = 1.0;

    /// |H(e^{jw})| at frequency f.
    double magnitude(double f_hz, double fs_hz) const {
        const std::complex<double> z = std::polar(1.0, -2.0 * std::numbers::pi * f_hz / fs_hz);
        std::complex<double> h = gain;
        for (const auto& s : sections)
            h *= (s.b0 + s.b1 * z + s.b2 * z * z) / (1.0 + s.a1 * z + s.a2 * z * z);
        return std::abs(h);
    }
};

inline void check_band(double fs_hz, double lo_hz, double hi_hz) {
    if (!(fs_hz > 0.0) || !(lo_hz > 0.0) || !(hi_hz > lo_hz) || !(hi_hz < 0.5 * fs_hz))
        throw Error("invalid band: need 0 < lo < hi < fs/2 (lo=" + std::to_string(lo_hz) +
                    ", hi=" + std::to_string(hi_hz) + ", fs=" + std::to_string(fs_hz) + ")");
}

/// Butterworth band-pass from an order-`order` low-pass prototype (2*order poles),
/// bilinear transform with pre-warping, unit gain at the geometric band center.
inline SosFilter design_butter_bandpass(double fs_hz, double lo_hz, double hi_hz, int order = 4) {
    check_band(fs_hz, lo_hz, hi_hz);
    using cd = std::complex<double>;
    const double fs2 = 2.0 * fs_hz;
    const double wl = fs2 * std::tan(std::numbers::pi * lo_hz / fs_hz);
    const double wh = fs2 * std::tan(std::numbers::pi * hi_hz / fs_hz);
    const double bw = wh - wl;
    const double w0 = std::sqrt(wl * wh);

    std::vector<cd> zpoles;
    for (int k = 0; k < order; ++k) {
        const cd p = std::polar(1.0, std::numbers::pi * (2.0 * k + order + 1) / (2.0 * order));
        const cd half = p * bw / 2.0;
        const cd root = std::sqrt(half * half - w0 * w0);
        for (cd s : {half + root, half - root}) zpoles.push_back((fs2 + s) / (fs2 - s));
    }

    SosFilter f;
    for (const auto& p : zpoles) {
        if (p.imag() <= 0.0) continue;  // each conjugate pair once
        f.sections.push_back({1.0, 0.0, -1.0, -2.0 * p.real(), std::norm(p)});
    }
    if (static_cast<int>(f.sections.size()) != order) throw Error("band-pass design produced unpaired poles");
    const double fc = std::atan(w0 / fs2) * fs_hz / std::numbers::pi;
    f.gain = 1.0 / f.magnitude(fc, fs_hz);
    return f;
}

namespace detail {

inline void sos_run(const SosFilter& f, Signal& x, double x0) {
    // Steady-state initial conditions for a constant input of level x0.
    // The overall gain is applied at the input of the first section.
    for (auto& v : x) v *= f.gain;
    double level = x0 * f.gain;
    for (const auto& s : f.sections) {
        const double y_ss = level * (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
        double z1 = y_ss - s.b0 * level;
        double z2 = s.b2 * level - s.a2 * y_ss;
        level = y_ss;
        for (auto& v : x) {
            const double in = v;
            const double y = s.b0 * in + z1;
            z1 = s.b1 * in - s.a1 * y + z2;
            z2 = s.b2 * in - s.a2 * y;
            v = y;
        }
    }
}

} // namespace detail

/// Zero-phase forward-backward application of an SOS filter with odd-reflection
/// padding and steady-state initial conditions.
inline Signal filtfilt(const SosFilter& f, std::span<const double> x) {
    const auto n = x.size();
    if (n == 0) return {};
    const std::size_t pad = std::min<std::size_t>(n - 1, 3 * (2 * f.sections.size() + 1));
    Signal ext(n + 2 * pad);
    for (std::size_t i = 0; i < pad; ++i) ext[i] = 2.0 * x[0] - x[pad - i];
    std::copy(x.begin(), x.end(), ext.begin() + static_cast<std::ptrdiff_t>(pad));
    for (std::size_t i = 0; i < pad; ++i) ext[pad + n + i] = 2.0 * x[n - 1] - x[n - 2 - i];

    detail::sos_run(f, ext, ext.front());
    std::reverse(ext.begin(), ext.end());
    detail::sos_run(f, ext, ext.front());
    std::reverse(ext.begin(), ext.end());
    return Signal(ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n));
}

inline Signal bandpass(std::span<const double> x, double fs_hz, double lo_hz, double hi_hz) {
    return filtfilt(design_butter_bandpass(fs_hz, lo_hz, hi_hz), x);
}

inline Signal zero_center(std::span<const double> x) {
    if (x.empty()) throw Error("zero_center: empty input");
    const double m = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    Signal y(x.begin(), x.end());
    for (auto& v : y) v -= m;
    return y;
}

/// Zero mean, unit population standard deviation; constant input maps to zeros.
inline Signal standardize(std::span<const double> x) {
    if (x.empty()) throw Error("standardize: empty input");
    Signal y = zero_center(x);
    double ss = 0.0;
    for (double v : y) ss += v * v;
    const double sd = std::sqrt(ss / static_cast<double>(y.size()));
    if (sd <= 1e-12 * (1.0 + std::abs(x[0]))) {
        std::fill(y.begin(), y.end(), 0.0);
        return y;
    }
    for (auto& v : y) v /= sd;
    return y;
}

// ---------------------------------------------------------------------------
// FFT helpers (FFTW, estimate-mode plans; plans are not shared across calls)
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::complex<double>> fft(std::vector<std::complex<double>> in, bool inverse) {
    const int n = static_cast<int>(in.size());
    std::vector<std::complex<double>> out(in.size());
    if (n == 0) return out;
    auto* ip = reinterpret_cast<fftw_complex*>(in.data());
    auto* op = reinterpret_cast<fftw_complex*>(out.data());
    fftw_plan plan = fftw_plan_dft_1d(n, ip, op, inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);
    return out;
}

} // namespace detail

inline std::size_t resampled_length(std::size_t n, double fs_in, double fs_out) {
    return static_cast<std::size_t>(std::llround(static_cast<double>(n) * fs_out / fs_in));
}

/// Band-limited (Fourier) resampling. Downsampling discards spectral content
/// above the new Nyquist frequency, which is the anti-alias step.
inline Signal resample(std::span<const double> x, double fs_in, double fs_out) {
    if (!(fs_in > 0.0) || !(fs_out > 0.0)) throw Error("resample: sampling rates must be positive");
    const std::size_t n = x.size();
    const std::size_t m = resampled_length(n, fs_in, fs_out);
    if (m == n) return Signal(x.begin(), x.end());
    if (n == 0 || m == 0) return Signal(m, 0.0);

    std::vector<std::complex<double>> X(x.begin(), x.end());
    X = detail::fft(std::move(X), false);
    std::vector<std::complex<double>> Y(m, 0.0);
    const std::size_t N = std::min(n, m);
    Y[0] = X[0];
    for (std::size_t k = 1; k <= (N - 1) / 2; ++k) {
        Y[k] = X[k];
        Y[m - k] = X[n - k];
    }
    if (N % 2 == 0 && N >= 2) {
        const std::size_t h = N / 2;
        if (m < n) {
            Y[h] = X[h] + X[n - h];
        } else {
            Y[h] = 0.5 * X[h];
            Y[m - h] = 0.5 * X[h];
        }
    }
    auto y = detail::fft(std::move(Y), true);
    Signal out(m);
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < m; ++i) out[i] = y[i].real() * scale;
    return out;
}

/// Classical local Wiener filter with a centered moving window and the noise
/// variance estimated as the mean local variance.
inline Signal wiener_local(std::span<const double> x, int window_samples) {
    if (window_samples < 3 || window_samples % 2 == 0) throw Error("wiener_local: window must be odd and >= 3");
    const auto n = static_cast<std::ptrdiff_t>(x.size());
    if (window_samples > n) throw Error("wiener_local: window larger than signal");
    const std::ptrdiff_t h = window_samples / 2;

    std::vector<double> c1(static_cast<std::size_t>(n) + 1, 0.0), c2(static_cast<std::size_t>(n) + 1, 0.0);
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        c1[static_cast<std::size_t>(i) + 1] = c1[static_cast<std::size_t>(i)] + x[static_cast<std::size_t>(i)];
        c2[static_cast<std::size_t>(i) + 1] = c2[static_cast<std::size_t>(i)] + x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
    }
    Signal mean(static_cast<std::size_t>(n)), var(static_cast<std::size_t>(n));
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, i - h));
        const auto hi = static_cast<std::size_t>(std::min<std::ptrdiff_t>(n, i + h + 1));
        const double cnt = static_cast<double>(hi - lo);
        const double m = (c1[hi] - c1[lo]) / cnt;
        mean[static_cast<std::size_t>(i)] = m;
        var[static_cast<std::size_t>(i)] = std::max(0.0, (c2[hi] - c2[lo]) / cnt - m * m);
    }
    const double noise = std::accumulate(var.begin(), var.end(), 0.0) / static_cast<double>(n);
    Signal y(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double v = var[i];
        const double gain = v > 0.0 ? std::max(v - noise, 0.0) / v : 0.0;
        y[i] = mean[i] + gain * (x[i] - mean[i]);
    }
    return y;
}

/// White Gaussian noise passed through the same band-pass as `bandpass`.
inline Signal make_inband_gaussian(double fs_hz, double band_lo, double band_hi, std::size_t n, std::uint64_t seed) {
    check_band(fs_hz, band_lo, band_hi);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    Signal w(n);
    for (auto& v : w) v = n01(rng);
    return bandpass(w, fs_hz, band_lo, band_hi);
}

inline double mean_power(std::span<const double> x) {
    if (x.empty()) return 0.0;
    double s = 0.0;
    for (double v : x) s += v * v;
    return s / static_cast<double>(x.size());
}

/// Noise amplitude scale c such that signal + c*noise has the target SNR.
inline double snr_scale(double signal_power, double noise_power, double snr_db) {
    return std::sqrt(signal_power / (noise_power * std::pow(10.0, snr_db / 10.0)));
}

/// Tiles (or truncates) `noise` to `n` samples starting at `offset`.
inline Signal tile(std::span<const double> noise, std::size_t n, std::size_t offset = 0) {
    if (noise.empty()) throw Error("tile: empty noise");
    Signal out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = noise[(offset + i) % noise.size()];
    return out;
}

/// signal + c*noise at the requested SNR (mean-square power ratio, dB).
inline Signal mix_at_snr(std::span<const double> signal, std::span<const double> noise, double snr_db) {
    const Signal nz = tile(noise, signal.size());
    const double ps = mean_power(signal);
    const double pn = mean_power(nz);
    if (!(pn > 0.0)) throw Error("zero-power noise");
    if (!(ps > 0.0)) throw Error("zero-power signal");
    const double c = snr_scale(ps, pn, snr_db);
    Signal out(signal.begin(), signal.end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c * nz[i];
    return out;
}

// ---------------------------------------------------------------------------
// Noise specifications for stress testing
// ---------------------------------------------------------------------------

enum class NoiseKind { bw, ma, em, gaussian_inband, lung, custom_record };

inline std::string_view to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::bw: return "bw";
        case NoiseKind::ma: return "ma";
        case NoiseKind::em: return "em";
        case NoiseKind::gaussian_inband: return "gaussian_inband";
        case NoiseKind::lung: return "lung";
        case NoiseKind::custom_record: return "custom_record";
    }
    return "?";
}

inline NoiseKind noise_kind_from_string(std::string_view s) {
    for (auto k : {NoiseKind::bw, NoiseKind::ma, NoiseKind::em, NoiseKind::gaussian_inband, NoiseKind::lung,
                   NoiseKind::custom_record})
        if (to_string(k) == s) return k;
    throw Error("unknown noise kind '" + std::string(s) + "'");
}

inline bool is_recorded(NoiseKind k) { return k != NoiseKind::gaussian_inband; }

struct NoiseSpec {
    NoiseKind kind = NoiseKind::gaussian_inband;
    double snr_db = 0.0;
    std::uint64_t seed = 0;
    std::optional<std::array<double, 2>> band;   // gaussian_inband
    std::optional<std::vector<double>> source;   // recorded kinds, already at the target fs
    double source_fs_hz = 0.0;

    void check() const {
        if (is_recorded(kind) && (!source || source->empty()))
            throw Error("missing noise source for recorded noise kind '" + std::string(to_string(kind)) + "'");
        if (kind == NoiseKind::gaussian_inband && !band) throw Error("gaussian_inband noise requires a band");
    }
};

} // namespace cci::dsp
