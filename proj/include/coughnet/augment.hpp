#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "coughnet/audio.hpp"
#include "coughnet/errors.hpp"
#include "coughnet/rng.hpp"

namespace coughnet {

enum class AugmentKind { pitch, speed, time_shift, gain, noise };

inline const char* augment_kind_name(AugmentKind k) {
    switch (k) {
        case AugmentKind::pitch: return "pitch";
        case AugmentKind::speed: return "speed";
        case AugmentKind::time_shift: return "time_shift";
        case AugmentKind::gain: return "gain";
        case AugmentKind::noise: return "noise";
    }
    return "?";
}

// magnitude meaning by kind: semitones / speed ratio / seconds / linear gain / SNR dB
struct AugmentSpec {
    AugmentKind kind = AugmentKind::gain;
    double magnitude = 1.0;
    uint64_t seed = 0;

    void validate() const {
        switch (kind) {
            case AugmentKind::pitch:
                if (magnitude < -2.0 || magnitude > 2.0) {
                    throw InvalidMagnitude("pitch shift limited to +-2 semitones");
                }
                break;
            case AugmentKind::speed:
                if (magnitude < 0.9 || magnitude > 1.1) {
                    throw InvalidMagnitude("speed ratio limited to [0.9, 1.1]");
                }
                break;
            case AugmentKind::time_shift:
                if (magnitude < -1.0 || magnitude > 1.0) {
                    throw InvalidMagnitude("time shift limited to +-1 s");
                }
                break;
            case AugmentKind::gain:
                if (magnitude < 0.5 || magnitude > 1.5) {
                    throw InvalidMagnitude("gain limited to [0.5, 1.5]");
                }
                break;
            case AugmentKind::noise:
                if (magnitude < 15.0 || magnitude > 30.0) {
                    throw InvalidMagnitude("noise SNR limited to [15, 30] dB");
                }
                break;
        }
    }

    // stable identity string, used in cache keys and output file names
    std::string tag() const {
        std::ostringstream os;
        os.precision(17);
        os << augment_kind_name(kind) << '_' << magnitude << '_' << seed;
        return os.str();
    }
};

namespace detail {

// Overlap-add time stretch to an exact output length. Grains of ~50 ms with a
// half-sample-offset Hann window (strictly positive, so the per-sample weight
// normalization is always defined); at stretch 1 this reduces to the identity
// up to floating-point rounding.
inline std::vector<double> ola_stretch(const std::vector<double>& x, size_t out_len, int rate_hz) {
    if (x.empty() || out_len == 0) return std::vector<double>(out_len, 0.0);
    size_t grain = static_cast<size_t>(std::llround(0.05 * rate_hz));
    grain += grain & 1;  // even so hop = grain/2 tiles exactly
    grain = std::max<size_t>(grain, 4);
    const size_t hop = grain / 2;

    std::vector<double> win(grain);
    for (size_t j = 0; j < grain; ++j) {
        win[j] = 0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 * (j + 0.5) / grain);
    }

    std::vector<double> acc(out_len, 0.0), wsum(out_len, 0.0);
    const double in_span = static_cast<double>(x.size() > grain ? x.size() - grain : 0);
    const double out_span = static_cast<double>(out_len > grain ? out_len - grain : 0);
    for (size_t g = 0;; ++g) {
        const size_t p_out = g * hop;
        if (p_out >= out_len) break;
        const double frac = out_span > 0 ? static_cast<double>(p_out) / out_span : 0.0;
        const size_t p_in = static_cast<size_t>(std::llround(std::min(frac, 1.0) * in_span));
        for (size_t j = 0; j < grain; ++j) {
            const size_t oi = p_out + j;
            if (oi >= out_len) break;
            const size_t ii = p_in + j;
            const double s = ii < x.size() ? x[ii] : 0.0;
            acc[oi] += win[j] * s;
            wsum[oi] += win[j];
        }
    }
    for (size_t i = 0; i < out_len; ++i) {
        acc[i] = wsum[i] > 1e-12 ? acc[i] / wsum[i] : 0.0;
    }
    return acc;
}

}  // namespace detail

// Deterministic waveform-domain augmentation; sample rate is never changed.
inline AudioClip apply(const AudioClip& clip, const AugmentSpec& spec) {
    spec.validate();
    AudioClip out;
    out.sample_rate_hz = clip.sample_rate_hz;

    switch (spec.kind) {
        case AugmentKind::pitch: {
            const double factor = std::pow(2.0, spec.magnitude / 12.0);
            if (factor == 1.0) return clip;
            // speed-change by the pitch factor, then stretch back to length
            const std::vector<double> sped = detail::resample_ratio(clip.samples, 1.0 / factor);
            out.samples = detail::ola_stretch(sped, clip.samples.size(), clip.sample_rate_hz);
            return out;
        }
        case AugmentKind::speed: {
            if (spec.magnitude == 1.0) return clip;
            out.samples = detail::resample_ratio(clip.samples, 1.0 / spec.magnitude);
            return out;
        }
        case AugmentKind::time_shift: {
            const int64_t n = static_cast<int64_t>(clip.samples.size());
            int64_t shift = std::llround(spec.magnitude * clip.sample_rate_hz) % n;
            if (shift < 0) shift += n;
            out.samples.resize(clip.samples.size());
            for (int64_t i = 0; i < n; ++i) {
                out.samples[static_cast<size_t>((i + shift) % n)] = clip.samples[static_cast<size_t>(i)];
            }
            return out;
        }
        case AugmentKind::gain: {
            out.samples = clip.samples;
            for (double& v : out.samples) v *= spec.magnitude;
            return out;
        }
        case AugmentKind::noise: {
            double acc = 0.0;
            for (double v : clip.samples) acc += v * v;
            const double rms = std::sqrt(acc / clip.samples.size());
            const double noise_rms = rms * std::pow(10.0, -spec.magnitude / 20.0);
            Rng rng(spec.seed);
            out.samples = clip.samples;
            for (double& v : out.samples) v += noise_rms * rng.gaussian();
            return out;
        }
    }
    return clip;
}

// Expansion plan for the minority class: which source record to augment and
// how, deterministic in (labels, target_ratio, seed). Shared by the in-memory
// expander below and by the training pipeline, which works from file paths.
inline std::vector<std::pair<size_t, AugmentSpec>> plan_minority_expansion(
    const std::vector<int>& labels, double target_ratio, uint64_t seed) {
    std::vector<size_t> pos, neg;
    for (size_t i = 0; i < labels.size(); ++i) {
        (labels[i] ? pos : neg).push_back(i);
    }
    if (pos.empty() || neg.empty()) throw SingleClassInput("both classes required for expansion");
    const std::vector<size_t>& minority = pos.size() <= neg.size() ? pos : neg;
    const size_t majority_count = std::max(pos.size(), neg.size());

    const size_t target = static_cast<size_t>(std::ceil(target_ratio * majority_count));
    std::vector<std::pair<size_t, AugmentSpec>> plan;
    if (minority.size() >= target) return plan;

    Rng rng(seed);
    plan.reserve(target - minority.size());
    for (size_t i = minority.size(); i < target; ++i) {
        const size_t src = minority[rng.below(minority.size())];
        AugmentSpec spec;
        switch (rng.below(5)) {
            case 0:
                spec.kind = AugmentKind::pitch;
                spec.magnitude = rng.uniform(-2.0, 2.0);
                break;
            case 1:
                spec.kind = AugmentKind::speed;
                spec.magnitude = rng.uniform(0.9, 1.1);
                break;
            case 2:
                spec.kind = AugmentKind::time_shift;
                spec.magnitude = rng.uniform(-1.0, 1.0);
                break;
            case 3:
                spec.kind = AugmentKind::gain;
                spec.magnitude = rng.uniform(0.5, 1.5);
                break;
            default:
                spec.kind = AugmentKind::noise;
                spec.magnitude = rng.uniform(15.0, 30.0);
                break;
        }
        spec.seed = rng.next_u64();
        plan.emplace_back(src, spec);
    }
    return plan;
}

struct LabeledClip {
    AudioClip clip;
    int label = 0;  // 1 = covid positive
};

// Appends augmented minority copies until minority/majority >= target_ratio.
inline std::vector<LabeledClip> expand_minority(const std::vector<LabeledClip>& records,
                                                double target_ratio, uint64_t seed) {
    std::vector<int> labels;
    labels.reserve(records.size());
    for (const auto& r : records) labels.push_back(r.label);
    const auto plan = plan_minority_expansion(labels, target_ratio, seed);

    std::vector<LabeledClip> out = records;
    out.reserve(records.size() + plan.size());
    for (const auto& [src, spec] : plan) {
        out.push_back({apply(records[src].clip, spec), records[src].label});
    }
    return out;
}

}  // namespace coughnet
