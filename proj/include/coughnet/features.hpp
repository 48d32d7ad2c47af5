#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include "coughnet/audio.hpp"
#include "coughnet/csvio.hpp"
#include "coughnet/errors.hpp"
#include "coughnet/fft.hpp"

namespace coughnet {

struct FeatureConfig {
    size_t n_fft = 1024;
    size_t hop = 512;
    size_t n_mels = 32;
    double f_low_hz = 32.0;
    double f_high_hz = 8000.0;
    int sample_rate_hz = 16000;
    double log_floor = 1e-10;

    void validate() const {
        if (sample_rate_hz <= 0) throw InvalidConfig("sample rate must be positive");
        if (n_fft == 0 || hop == 0) throw InvalidConfig("n_fft and hop must be positive");
        if (hop > n_fft) throw InvalidConfig("hop must not exceed n_fft");
        if (n_mels == 0) throw InvalidConfig("need at least one mel band");
        if (f_low_hz < 0.0 || f_low_hz >= f_high_hz) {
            throw InvalidConfig("need 0 <= f_low < f_high");
        }
        if (f_high_hz > sample_rate_hz / 2.0 + 1e-9) {
            throw InvalidConfig("f_high beyond Nyquist");
        }
        if (log_floor <= 0.0) throw InvalidConfig("log floor must be positive");
    }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular mel filters over one-sided FFT bins, each row scaled to peak 1.
struct MelFilterBank {
    size_t bands = 0;
    size_t bins = 0;               // n_fft/2 + 1
    std::vector<double> weights;   // bands x bins, row-major
    std::vector<double> center_freqs_hz;

    double at(size_t m, size_t k) const { return weights[m * bins + k]; }
};

inline MelFilterBank build_filterbank(const FeatureConfig& cfg, bool rescue_empty = true) {
    cfg.validate();
    const size_t bins = cfg.n_fft / 2 + 1;
    const size_t M = cfg.n_mels;

    const double mel_lo = hz_to_mel(cfg.f_low_hz);
    const double mel_hi = hz_to_mel(cfg.f_high_hz);
    std::vector<double> edges_hz(M + 2);
    for (size_t i = 0; i < M + 2; ++i) {
        edges_hz[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (M + 1));
    }

    MelFilterBank fb;
    fb.bands = M;
    fb.bins = bins;
    fb.weights.assign(M * bins, 0.0);
    fb.center_freqs_hz.assign(edges_hz.begin() + 1, edges_hz.end() - 1);
    const double bin_hz = static_cast<double>(cfg.sample_rate_hz) / cfg.n_fft;

    for (size_t m = 0; m < M; ++m) {
        const double left = edges_hz[m], center = edges_hz[m + 1], right = edges_hz[m + 2];
        double peak = 0.0;
        for (size_t k = 0; k < bins; ++k) {
            const double f = k * bin_hz;
            double w = 0.0;
            if (f > left && f < center) {
                w = (f - left) / (center - left);
            } else if (f >= center && f < right) {
                w = (right - f) / (right - center);
            }
            fb.weights[m * bins + k] = w;
            peak = std::max(peak, w);
        }
        if (peak <= 0.0) {
            if (!rescue_empty) throw DegenerateFilter("mel filter covers no FFT bin");
            // band narrower than one bin: single unit weight at the nearest bin
            const size_t k = std::min<size_t>(bins - 1, static_cast<size_t>(std::llround(center / bin_hz)));
            fb.weights[m * bins + k] = 1.0;
        } else {
            for (size_t k = 0; k < bins; ++k) fb.weights[m * bins + k] /= peak;
        }
    }
    return fb;
}

enum class SpectrogramDomain : uint8_t { power = 0, log = 1 };

struct Spectrogram {
    size_t bands = 0;   // rows
    size_t frames = 0;  // columns
    SpectrogramDomain domain = SpectrogramDomain::power;
    FeatureConfig config;
    std::vector<double> values;  // row-major, bands x frames

    double& at(size_t m, size_t t) { return values[m * frames + t]; }
    double at(size_t m, size_t t) const { return values[m * frames + t]; }
};

inline size_t frame_count(size_t samples, size_t n_fft, size_t hop) {
    if (samples < n_fft) return 0;
    return 1 + (samples - n_fft) / hop;
}

// Short-time power spectra: periodic Hann window, no padding, drop the tail.
// frames[t][k] = |X_t(k)|^2 over the one-sided spectrum.
inline std::vector<std::vector<double>> stft_power(const AudioClip& clip, const FeatureConfig& cfg) {
    cfg.validate();
    const size_t n_fft = cfg.n_fft, hop = cfg.hop;
    const size_t K = frame_count(clip.samples.size(), n_fft, hop);
    if (K == 0) throw ClipTooShort("fewer samples than one analysis frame");
    std::vector<double> hann(n_fft);
    for (size_t i = 0; i < n_fft; ++i) {
        hann[i] = 0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 * i / n_fft);
    }
    std::vector<std::vector<double>> frames(K);
    std::vector<double> buf(n_fft);
    for (size_t t = 0; t < K; ++t) {
        for (size_t i = 0; i < n_fft; ++i) buf[i] = clip.samples[t * hop + i] * hann[i];
        frames[t] = power_spectrum(buf);
    }
    return frames;
}

// Mel energies: S(m) = sum_k |X(k)|^2 H_m(k) per frame.
inline Spectrogram mel_spectrum(const std::vector<std::vector<double>>& power_frames,
                                const MelFilterBank& fb) {
    Spectrogram spec;
    spec.bands = fb.bands;
    spec.frames = power_frames.size();
    spec.domain = SpectrogramDomain::power;
    spec.values.assign(spec.bands * spec.frames, 0.0);
    for (size_t t = 0; t < spec.frames; ++t) {
        if (power_frames[t].size() != fb.bins) {
            throw ShapeMismatch("power spectrum bin count does not match filter bank");
        }
        for (size_t m = 0; m < fb.bands; ++m) {
            double acc = 0.0;
            const double* w = &fb.weights[m * fb.bins];
            for (size_t k = 0; k < fb.bins; ++k) acc += w[k] * power_frames[t][k];
            spec.values[m * spec.frames + t] = acc;
        }
    }
    return spec;
}

inline Spectrogram log_compress(const Spectrogram& spec, double log_floor = 1e-10) {
    if (spec.domain == SpectrogramDomain::log) {
        throw InvalidMagnitude("spectrogram is already log-compressed");
    }
    Spectrogram out = spec;
    out.domain = SpectrogramDomain::log;
    for (double& v : out.values) {
        if (v < 0.0) throw InvalidMagnitude("negative power value");
        v = std::log(v + log_floor);
    }
    return out;
}

// Complete audio-to-feature path: STFT power, mel projection, log compression.
inline Spectrogram extract(const AudioClip& clip, const FeatureConfig& cfg) {
    cfg.validate();
    if (clip.sample_rate_hz != cfg.sample_rate_hz) {
        throw InvalidConfig("clip sample rate does not match feature config");
    }
    const MelFilterBank fb = build_filterbank(cfg);
    const auto frames = stft_power(clip, cfg);
    Spectrogram spec = log_compress(mel_spectrum(frames, fb), cfg.log_floor);
    spec.config = cfg;
    return spec;
}

// --- binary spectrogram container ------------------------------------------

namespace detail {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

inline uint32_t get_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline void put_f32(std::vector<uint8_t>& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

inline float get_f32(const uint8_t* p) {
    const uint32_t bits = get_u32(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

inline std::vector<uint8_t> encode_spectrogram(const Spectrogram& spec) {
    std::vector<uint8_t> out;
    out.reserve(17 + 4 * spec.values.size());
    out.push_back('M');
    out.push_back('E');
    out.push_back('L');
    out.push_back('S');
    detail::put_u32(out, 1u);
    detail::put_u32(out, static_cast<uint32_t>(spec.bands));
    detail::put_u32(out, static_cast<uint32_t>(spec.frames));
    out.push_back(static_cast<uint8_t>(spec.domain));
    for (double v : spec.values) detail::put_f32(out, static_cast<float>(v));
    return out;
}

inline Spectrogram decode_spectrogram(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 17) throw TruncatedFile("spectrogram file too small");
    if (std::memcmp(bytes.data(), "MELS", 4) != 0) throw BadMagic("not a spectrogram file");
    const uint32_t version = detail::get_u32(bytes.data() + 4);
    if (version != 1) throw VersionMismatch("unsupported spectrogram version");
    Spectrogram spec;
    spec.bands = detail::get_u32(bytes.data() + 8);
    spec.frames = detail::get_u32(bytes.data() + 12);
    const uint8_t domain = bytes[16];
    if (domain > 1) throw MalformedContainer("unknown spectrogram domain");
    spec.domain = static_cast<SpectrogramDomain>(domain);
    const size_t count = spec.bands * spec.frames;
    const size_t want = 17 + 4 * count;
    if (bytes.size() < want) throw TruncatedFile("spectrogram payload size mismatch");
    if (bytes.size() > want) throw MalformedContainer("trailing bytes after spectrogram payload");
    spec.values.resize(count);
    for (size_t i = 0; i < count; ++i) {
        spec.values[i] = detail::get_f32(bytes.data() + 17 + 4 * i);
    }
    return spec;
}

inline void save_spectrogram(const std::string& path, const Spectrogram& spec) {
    atomic_write_file(path, encode_spectrogram(spec));
}

inline Spectrogram load_spectrogram(const std::string& path) {
    return decode_spectrogram(read_file_bytes(path));
}

// CSV dump, one row per mel band, for plotting.
inline std::string spectrogram_csv(const Spectrogram& spec) {
    std::ostringstream os;
    os.precision(9);
    for (size_t m = 0; m < spec.bands; ++m) {
        for (size_t t = 0; t < spec.frames; ++t) {
            if (t) os << ',';
            os << spec.at(m, t);
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace coughnet
