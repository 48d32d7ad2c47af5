#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <vector>

#include "coughnet/audio.hpp"
#include "coughnet/errors.hpp"
#include "coughnet/fft.hpp"

namespace coughnet {

// One activity probability per non-overlapping 100 ms window.
struct ActivityProfile {
    int window_ms = 100;
    std::vector<double> probabilities;
};

enum class VadBackend {
    statistical,  // per-bin Gaussian likelihood-ratio test, minimum-statistics noise floor
    energy,       // percentile-rank of window energy; debugging aid
};

struct VadOptions {
    VadBackend backend = VadBackend::statistical;
    double dd_smoothing = 0.98;       // decision-directed a-priori SNR smoothing
    double min_track_seconds = 1.5;   // minimum-statistics search window (centered)
    double psd_smoothing = 0.9;       // periodogram smoothing before the min tracker
    double min_stat_bias = 1.5;       // bias compensation for the minimum estimate
    double snr_floor = 0.0316;        // a-priori SNR lower bound (-15 dB)
    double silence_power = 1e-9;      // mean frame power below one 16-bit LSB: no signal
};

namespace detail {

inline size_t vad_frame_size(int sample_rate_hz) {
    // ~16 ms frames, power of two for the FFT
    size_t n = 1;
    while (n < static_cast<size_t>(sample_rate_hz * 0.016)) n <<= 1;
    return n;
}

// frame probabilities of desired-sound presence (one per hop)
inline std::vector<double> statistical_frame_probs(const AudioClip& clip, const VadOptions& opt) {
    const size_t frame = vad_frame_size(clip.sample_rate_hz);
    const size_t hop = frame / 2;
    if (clip.samples.size() < frame) return {};
    const size_t n_frames = 1 + (clip.samples.size() - frame) / hop;
    const size_t n_bins = frame / 2 + 1;

    std::vector<double> hann(frame);
    for (size_t i = 0; i < frame; ++i) {
        hann[i] = 0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 * i / frame);
    }

    // periodograms, smoothed for the minimum tracker
    std::vector<std::vector<double>> psd(n_frames), smoothed(n_frames);
    std::vector<double> mean_power(n_frames);
    std::vector<double> buf(frame);
    for (size_t t = 0; t < n_frames; ++t) {
        double acc = 0.0;
        for (size_t i = 0; i < frame; ++i) {
            const double s = clip.samples[t * hop + i];
            acc += s * s;
            buf[i] = s * hann[i];
        }
        mean_power[t] = acc / frame;
        psd[t] = power_spectrum(buf);
        smoothed[t].resize(n_bins);
        for (size_t k = 0; k < n_bins; ++k) {
            const double prev = (t == 0) ? psd[0][k] : smoothed[t - 1][k];
            smoothed[t][k] = opt.psd_smoothing * prev + (1.0 - opt.psd_smoothing) * psd[t][k];
        }
    }

    // noise PSD: bias-compensated minimum of the smoothed periodogram over a
    // centered search window (offline processing, so the window can look ahead)
    const double hop_seconds = static_cast<double>(hop) / clip.sample_rate_hz;
    const size_t d = std::max<size_t>(1, static_cast<size_t>(std::llround(opt.min_track_seconds / hop_seconds)));
    const size_t half_d = d / 2;
    std::vector<std::vector<double>> noise(n_frames, std::vector<double>(n_bins));
    for (size_t k = 0; k < n_bins; ++k) {
        std::deque<size_t> q;  // indices of increasing smoothed values
        size_t right = 0;
        for (size_t t = 0; t < n_frames; ++t) {
            const size_t window_end = std::min(n_frames, t + half_d + 1);
            for (; right < window_end; ++right) {
                while (!q.empty() && smoothed[q.back()][k] >= smoothed[right][k]) q.pop_back();
                q.push_back(right);
            }
            while (!q.empty() && q.front() + half_d < t) q.pop_front();
            noise[t][k] = std::max(opt.min_stat_bias * smoothed[q.front()][k], 1e-12);
        }
    }

    // Gaussian likelihood-ratio test with decision-directed a-priori SNR;
    // frame score is the geometric-mean likelihood ratio mapped through
    // L/(1+L)
    std::vector<double> probs(n_frames);
    std::vector<double> prev_gain2_gamma(n_bins, 1.0);
    for (size_t t = 0; t < n_frames; ++t) {
        double log_lr_sum = 0.0;
        for (size_t k = 0; k < n_bins; ++k) {
            double gamma = psd[t][k] / noise[t][k];
            gamma = std::min(gamma, 1e8);
            double xi = opt.dd_smoothing * prev_gain2_gamma[k] +
                        (1.0 - opt.dd_smoothing) * std::max(gamma - 1.0, 0.0);
            xi = std::max(xi, opt.snr_floor);
            const double lr = gamma * xi / (1.0 + xi) - std::log1p(xi);
            log_lr_sum += lr;
            const double gain = xi / (1.0 + xi);
            prev_gain2_gamma[k] = gain * gain * gamma;
        }
        const double log_lr = std::clamp(log_lr_sum / n_bins, -50.0, 50.0);
        double p = 1.0 / (1.0 + std::exp(-log_lr));
        if (mean_power[t] < opt.silence_power) p = 0.0;
        probs[t] = p;
    }
    return probs;
}

}  // namespace detail

// Probability of desired-sound presence per 100 ms non-overlapping window.
inline ActivityProfile activity_profile(const AudioClip& clip, const VadOptions& opt = {}) {
    const uint64_t n_windows =
        clip.samples.size() * 10ull / static_cast<uint64_t>(clip.sample_rate_hz);
    if (n_windows == 0) throw ClipTooShort("clip shorter than one 100 ms window");

    ActivityProfile profile;
    profile.probabilities.assign(n_windows, 0.0);

    auto window_start = [&](uint64_t w) {
        return static_cast<size_t>(w * static_cast<uint64_t>(clip.sample_rate_hz) / 10ull);
    };

    if (opt.backend == VadBackend::energy) {
        // percentile rank of window energy; silent windows pinned to zero
        std::vector<double> energy(n_windows);
        for (uint64_t w = 0; w < n_windows; ++w) {
            double acc = 0.0;
            const size_t begin = window_start(w), end = window_start(w + 1);
            for (size_t i = begin; i < end; ++i) acc += clip.samples[i] * clip.samples[i];
            energy[w] = acc / (end - begin);
        }
        for (uint64_t w = 0; w < n_windows; ++w) {
            if (energy[w] < opt.silence_power) {
                profile.probabilities[w] = 0.0;
                continue;
            }
            size_t smaller = 0;
            for (uint64_t u = 0; u < n_windows; ++u) {
                if (energy[u] < energy[w]) ++smaller;
            }
            profile.probabilities[w] =
                n_windows > 1 ? static_cast<double>(smaller) / (n_windows - 1) : 1.0;
        }
        return profile;
    }

    const std::vector<double> frame_probs = detail::statistical_frame_probs(clip, opt);
    const size_t frame = detail::vad_frame_size(clip.sample_rate_hz);
    const size_t hop = frame / 2;
    std::vector<double> sums(n_windows, 0.0);
    std::vector<size_t> counts(n_windows, 0);
    for (size_t t = 0; t < frame_probs.size(); ++t) {
        const uint64_t center = t * hop + frame / 2;
        const uint64_t w = center * 10ull / static_cast<uint64_t>(clip.sample_rate_hz);
        if (w >= n_windows) break;
        sums[w] += frame_probs[t];
        ++counts[w];
    }
    for (uint64_t w = 0; w < n_windows; ++w) {
        if (counts[w] > 0) profile.probabilities[w] = sums[w] / counts[w];
    }
    return profile;
}

// Drops everything before the first window whose probability exceeds p_th.
inline AudioClip trim_leading(const AudioClip& clip, const ActivityProfile& profile, double p_th) {
    if (p_th < 0.0 || p_th > 1.0) throw ValidationError("p_th must lie in [0,1]");
    const uint64_t expected =
        clip.samples.size() * 10ull / static_cast<uint64_t>(clip.sample_rate_hz);
    if (profile.probabilities.size() != expected) {
        throw ValidationError("activity profile does not match this clip");
    }
    for (size_t w = 0; w < profile.probabilities.size(); ++w) {
        if (profile.probabilities[w] > p_th) {
            const size_t start =
                static_cast<size_t>(w * static_cast<uint64_t>(clip.sample_rate_hz) / 10ull);
            AudioClip out;
            out.sample_rate_hz = clip.sample_rate_hz;
            out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(start),
                               clip.samples.end());
            return out;
        }
    }
    throw NoActivityFound("no window exceeds the activity threshold");
}

// Fixed-length crop centered on the clip midpoint; shorter inputs are
// zero-padded symmetrically with the extra sample on the trailing side.
inline AudioClip center_crop(const AudioClip& clip, double seconds) {
    if (seconds <= 0.0) throw ValidationError("crop length must be positive");
    const size_t out_len = static_cast<size_t>(std::llround(seconds * clip.sample_rate_hz));
    AudioClip out;
    out.sample_rate_hz = clip.sample_rate_hz;
    const size_t n = clip.samples.size();
    if (n >= out_len) {
        const size_t start = (n - out_len) / 2;
        out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(start),
                           clip.samples.begin() + static_cast<std::ptrdiff_t>(start + out_len));
    } else {
        const size_t pad = out_len - n;
        const size_t lead = pad / 2;
        out.samples.assign(out_len, 0.0);
        std::copy(clip.samples.begin(), clip.samples.end(), out.samples.begin() + static_cast<std::ptrdiff_t>(lead));
    }
    return out;
}

struct PreprocessOptions {
    double vad_threshold = 0.6;
    double clip_seconds = 5.0;
    bool fallback_untrimmed = true;  // on NoActivityFound keep the whole clip
    VadOptions vad;
};

// VAD trim + center crop, the standard path from raw clip to network-ready
// segment. Returns whether trimming succeeded through *trimmed if given.
inline AudioClip preprocess(const AudioClip& clip, const PreprocessOptions& opt, bool* trimmed = nullptr) {
    AudioClip work = clip;
    bool did_trim = false;
    try {
        const ActivityProfile profile = activity_profile(clip, opt.vad);
        work = trim_leading(clip, profile, opt.vad_threshold);
        did_trim = true;
    } catch (const ClipTooShort&) {
        if (!opt.fallback_untrimmed) throw;
    } catch (const NoActivityFound&) {
        if (!opt.fallback_untrimmed) throw;
    }
    if (trimmed) *trimmed = did_trim;
    return center_crop(work, opt.clip_seconds);
}

}  // namespace coughnet
