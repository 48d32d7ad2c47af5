#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "coughnet/csvio.hpp"
#include "coughnet/errors.hpp"

namespace coughnet {

// Mono amplitude sequence, nominal range [-1,1].
struct AudioClip {
    std::vector<double> samples;
    int sample_rate_hz = 0;

    double duration_seconds() const {
        return static_cast<double>(samples.size()) / sample_rate_hz;
    }
};

namespace detail {

inline uint32_t read_u32le(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline uint16_t read_u16le(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

inline void push_u32le(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(static_cast<uint8_t>(x & 0xff));
    v.push_back(static_cast<uint8_t>((x >> 8) & 0xff));
    v.push_back(static_cast<uint8_t>((x >> 16) & 0xff));
    v.push_back(static_cast<uint8_t>((x >> 24) & 0xff));
}

inline void push_u16le(std::vector<uint8_t>& v, uint16_t x) {
    v.push_back(static_cast<uint8_t>(x & 0xff));
    v.push_back(static_cast<uint8_t>((x >> 8) & 0xff));
}

}  // namespace detail

// Decodes a RIFF/WAVE container. PCM 8/16/24/32-bit integer and 32-bit float,
// 1-2 channels. Integer samples are scaled to [-1,1] by full-scale division;
// stereo is averaged to mono.
inline AudioClip decode_wav(std::span<const uint8_t> bytes) {
    using detail::read_u16le;
    using detail::read_u32le;

    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw MalformedContainer("not a RIFF/WAVE file");
    }

    uint16_t format_tag = 0, channels = 0, bits = 0;
    uint32_t sample_rate = 0;
    bool have_fmt = false;
    const uint8_t* data_ptr = nullptr;
    uint32_t data_size = 0;

    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const uint8_t* chunk = bytes.data() + pos;
        const uint32_t chunk_size = read_u32le(chunk + 4);
        if (pos + 8 + chunk_size > bytes.size()) {
            throw MalformedContainer("chunk extends past end of file");
        }
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (chunk_size < 16) throw MalformedContainer("fmt chunk too small");
            format_tag = read_u16le(chunk + 8);
            channels = read_u16le(chunk + 10);
            sample_rate = read_u32le(chunk + 12);
            bits = read_u16le(chunk + 22);
            if (format_tag == 0xFFFE) {
                // WAVE_FORMAT_EXTENSIBLE: first two bytes of the SubFormat GUID
                if (chunk_size < 40) throw MalformedContainer("extensible fmt chunk too small");
                format_tag = read_u16le(chunk + 32);
            }
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data_ptr = chunk + 8;
            data_size = chunk_size;
        }
        pos += 8 + chunk_size + (chunk_size & 1);  // chunks are word-aligned
    }

    if (!have_fmt || data_ptr == nullptr) throw MalformedContainer("missing fmt or data chunk");
    if (sample_rate == 0) throw MalformedContainer("zero sample rate");
    if (channels < 1 || channels > 2) {
        throw UnsupportedEncoding("only mono/stereo supported, got " + std::to_string(channels) + " channels");
    }
    const bool is_float = (format_tag == 3);
    if (format_tag != 1 && format_tag != 3) {
        throw UnsupportedEncoding("format tag " + std::to_string(format_tag) + " (compressed codecs not supported)");
    }
    if (is_float && bits != 32) throw UnsupportedEncoding("only 32-bit float supported");
    if (!is_float && bits != 8 && bits != 16 && bits != 24 && bits != 32) {
        throw UnsupportedEncoding("unsupported PCM bit depth " + std::to_string(bits));
    }

    const uint32_t bytes_per_sample = bits / 8;
    const uint32_t frame_size = bytes_per_sample * channels;
    if (frame_size == 0 || data_size % frame_size != 0) {
        throw MalformedContainer("data chunk size not a multiple of the frame size");
    }
    const size_t n_frames = data_size / frame_size;
    if (n_frames == 0) throw MalformedContainer("empty data chunk");

    AudioClip clip;
    clip.sample_rate_hz = static_cast<int>(sample_rate);
    clip.samples.resize(n_frames);

    auto decode_sample = [&](const uint8_t* p) -> double {
        switch (bits) {
            case 8:
                // 8-bit WAV is unsigned with midpoint 128
                return (static_cast<int>(*p) - 128) / 128.0;
            case 16: {
                int16_t s;
                std::memcpy(&s, p, 2);
                return s / 32768.0;
            }
            case 24: {
                int32_t s = p[0] | (p[1] << 8) | (p[2] << 16);
                if (s & 0x800000) s |= ~0xFFFFFF;  // sign extend
                return s / 8388608.0;
            }
            case 32:
                if (is_float) {
                    float f;
                    std::memcpy(&f, p, 4);
                    return static_cast<double>(f);
                } else {
                    int32_t s;
                    std::memcpy(&s, p, 4);
                    return s / 2147483648.0;
                }
            default:
                return 0.0;
        }
    };

    for (size_t i = 0; i < n_frames; ++i) {
        const uint8_t* frame = data_ptr + i * frame_size;
        double v = decode_sample(frame);
        if (channels == 2) v = 0.5 * (v + decode_sample(frame + bytes_per_sample));
        if (!std::isfinite(v)) throw MalformedContainer("non-finite sample in float data");
        clip.samples[i] = v;
    }
    return clip;
}

// 16-bit PCM mono encoder; decode(encode(x)) agrees with x to within 1 LSB.
inline std::vector<uint8_t> encode_wav16(const AudioClip& clip) {
    using detail::push_u16le;
    using detail::push_u32le;

    const uint32_t n = static_cast<uint32_t>(clip.samples.size());
    const uint32_t data_size = n * 2;
    std::vector<uint8_t> out;
    out.reserve(44 + data_size);

    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    push_u32le(out, 36 + data_size);
    out.insert(out.end(), {'W', 'A', 'V', 'E'});
    out.insert(out.end(), {'f', 'm', 't', ' '});
    push_u32le(out, 16);
    push_u16le(out, 1);  // PCM
    push_u16le(out, 1);  // mono
    push_u32le(out, static_cast<uint32_t>(clip.sample_rate_hz));
    push_u32le(out, static_cast<uint32_t>(clip.sample_rate_hz) * 2);
    push_u16le(out, 2);
    push_u16le(out, 16);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    push_u32le(out, data_size);

    for (double v : clip.samples) {
        double scaled = std::round(v * 32768.0);
        scaled = std::clamp(scaled, -32768.0, 32767.0);
        const int16_t s = static_cast<int16_t>(scaled);
        push_u16le(out, static_cast<uint16_t>(s));
    }
    return out;
}

inline AudioClip load_wav(const std::filesystem::path& path) {
    const std::vector<uint8_t> bytes = read_file_bytes(path);
    return decode_wav(std::span<const uint8_t>(bytes.data(), bytes.size()));
}

inline void save_wav16(const AudioClip& clip, const std::filesystem::path& path) {
    atomic_write_file(path, encode_wav16(clip));
}

namespace detail {

inline double bessel_i0(double x) {
    // series expansion; converges quickly for the beta values used here
    double sum = 1.0, term = 1.0;
    const double half_x = x / 2.0;
    for (int k = 1; k < 64; ++k) {
        term *= (half_x / k) * (half_x / k);
        sum += term;
        if (term < 1e-16 * sum) break;
    }
    return sum;
}

// Kaiser-windowed sinc interpolation kernel, tabulated per fractional phase.
class SincResampler {
public:
    explicit SincResampler(double ratio) {
        const double down = std::min(1.0, ratio);
        // 64 taps at unity ratio; the kernel stretches when decimating
        half_width_ = static_cast<int>(std::ceil(32.0 / down));
        cutoff_ = 0.5 * down * 0.95;
        const double beta = 8.0;
        const double i0_beta = bessel_i0(beta);

        taps_per_phase_ = 2 * half_width_;
        table_.resize(static_cast<size_t>(kPhases + 1) * taps_per_phase_);
        for (int p = 0; p <= kPhases; ++p) {
            const double frac = static_cast<double>(p) / kPhases;
            double sum = 0.0;
            for (int k = 0; k < taps_per_phase_; ++k) {
                const double t = (k - half_width_ + 1) - frac;  // offset from interpolation point
                const double u = t / half_width_;
                double w = 0.0;
                if (u > -1.0 && u < 1.0) {
                    w = bessel_i0(beta * std::sqrt(1.0 - u * u)) / i0_beta;
                }
                const double x = 2.0 * cutoff_ * t;
                const double s = (x == 0.0) ? 1.0 : std::sin(3.14159265358979323846 * x) / (3.14159265358979323846 * x);
                const double h = 2.0 * cutoff_ * s * w;
                table_[static_cast<size_t>(p) * taps_per_phase_ + k] = h;
                sum += h;
            }
            // unit DC gain per phase
            for (int k = 0; k < taps_per_phase_; ++k) {
                table_[static_cast<size_t>(p) * taps_per_phase_ + k] /= sum;
            }
        }
    }

    // value of the band-limited interpolant at input-domain position t
    double interpolate(const std::vector<double>& x, double t) const {
        const double floor_t = std::floor(t);
        const int64_t i0 = static_cast<int64_t>(floor_t);
        const double frac = t - floor_t;

        const double phase_pos = frac * kPhases;
        const int p0 = static_cast<int>(phase_pos);
        const double blend = phase_pos - p0;
        const double* row0 = table_.data() + static_cast<size_t>(p0) * taps_per_phase_;
        const double* row1 = table_.data() + static_cast<size_t>(std::min(p0 + 1, kPhases)) * taps_per_phase_;

        const int64_t n = static_cast<int64_t>(x.size());
        double acc = 0.0;
        for (int k = 0; k < taps_per_phase_; ++k) {
            const int64_t idx = i0 + k - half_width_ + 1;
            if (idx < 0 || idx >= n) continue;  // signal is zero outside its support
            const double h = row0[k] + blend * (row1[k] - row0[k]);
            acc += x[static_cast<size_t>(idx)] * h;
        }
        return acc;
    }

private:
    static constexpr int kPhases = 256;
    int half_width_ = 0;
    int taps_per_phase_ = 0;
    double cutoff_ = 0.0;
    std::vector<double> table_;
};

// Band-limited resampling of a raw sample buffer; ratio = out rate / in rate.
inline std::vector<double> resample_ratio(const std::vector<double>& x, double ratio) {
    const SincResampler kernel(ratio);
    const double step = 1.0 / ratio;
    const size_t out_len = static_cast<size_t>(std::llround(x.size() * ratio));
    std::vector<double> out(out_len);
    for (size_t i = 0; i < out_len; ++i) {
        out[i] = kernel.interpolate(x, static_cast<double>(i) * step);
    }
    return out;
}

}  // namespace detail

// Windowed-sinc polyphase resampling. Identity (bitwise) when rates match;
// output length is round(len * target / source).
inline AudioClip resample(const AudioClip& clip, int target_hz) {
    if (target_hz <= 0) throw ValidationError("target sample rate must be positive");
    if (clip.sample_rate_hz == target_hz) return clip;

    AudioClip out;
    out.sample_rate_hz = target_hz;
    out.samples = detail::resample_ratio(
        clip.samples, static_cast<double>(target_hz) / clip.sample_rate_hz);
    return out;
}

}  // namespace coughnet
