#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "coughnet/audio.hpp"
#include "coughnet/csvio.hpp"
#include "coughnet/dataset.hpp"
#include "coughnet/rng.hpp"

// Deterministic synthetic clips for tests and the bundled demo corpus. Tone
// clips play the positive class, noise clips the negative one; both start with
// exact digital silence so the trimming stage has work to do.

namespace coughnet {

namespace detail {

// 10 ms raised-cosine fade at both ends of the active span.
inline double ramp_gain(size_t i, size_t n, int rate) {
    const size_t ramp = static_cast<size_t>(rate / 100);
    if (n <= 2 * ramp) return 1.0;
    if (i < ramp) return 0.5 - 0.5 * std::cos(std::numbers::pi * (i + 0.5) / ramp);
    if (i >= n - ramp) return ramp_gain(n - 1 - i, n, rate);
    return 1.0;
}

}  // namespace detail

inline AudioClip make_tone_clip(uint64_t seed, int rate = 16000, double lead_s = 0.3,
                                double active_s = 5.0, double tail_s = 0.0) {
    Rng rng(seed);
    const size_t lead = static_cast<size_t>(std::llround(lead_s * rate));
    const size_t active = static_cast<size_t>(std::llround(active_s * rate));
    const size_t tail = static_cast<size_t>(std::llround(tail_s * rate));

    const size_t n_tones = 2 + rng.below(2);
    std::vector<double> freq(n_tones), phase(n_tones);
    for (size_t t = 0; t < n_tones; ++t) {
        freq[t] = rng.uniform(300.0, 800.0);
        phase[t] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    const double amp = rng.uniform(0.4, 0.6) / static_cast<double>(n_tones);

    AudioClip clip;
    clip.sample_rate_hz = rate;
    clip.samples.assign(lead + active + tail, 0.0);
    for (size_t i = 0; i < active; ++i) {
        double v = 0.0;
        for (size_t t = 0; t < n_tones; ++t) {
            v += amp * std::sin(2.0 * std::numbers::pi * freq[t] * i / rate + phase[t]);
        }
        clip.samples[lead + i] = v * detail::ramp_gain(i, active, rate);
    }
    return clip;
}

inline AudioClip make_noise_clip(uint64_t seed, int rate = 16000, double lead_s = 0.3,
                                 double active_s = 5.0, double tail_s = 0.0) {
    Rng rng(seed);
    const size_t lead = static_cast<size_t>(std::llround(lead_s * rate));
    const size_t active = static_cast<size_t>(std::llround(active_s * rate));
    const size_t tail = static_cast<size_t>(std::llround(tail_s * rate));
    const double amp = rng.uniform(0.15, 0.25);

    AudioClip clip;
    clip.sample_rate_hz = rate;
    clip.samples.assign(lead + active + tail, 0.0);
    for (size_t i = 0; i < active; ++i) {
        clip.samples[lead + i] = amp * rng.gaussian() * detail::ramp_gain(i, active, rate);
    }
    return clip;
}

// Short noise burst with exact-silence padding on both sides; the burst stays
// under the noise tracker's window so its onset is sharply detectable.
inline AudioClip make_burst_clip(uint64_t seed, int rate = 16000, double lead_s = 0.3,
                                 double burst_s = 0.5, double tail_s = 1.0) {
    return make_noise_clip(seed, rate, lead_s, burst_s, tail_s);
}

// Writes n_pos tone clips and n_neg noise clips plus a manifest into dir.
inline std::vector<SampleRecord> build_corpus(const std::string& dir, size_t n_pos, size_t n_neg,
                                              uint64_t seed, int rate = 16000) {
    std::filesystem::create_directories(dir);
    std::vector<SampleRecord> records;
    for (size_t i = 0; i < n_pos + n_neg; ++i) {
        const bool positive = i < n_pos;
        Rng dur_rng(mix_seed(seed, 1000 + i));
        const double active_s = dur_rng.uniform(4.9, 5.5);
        const AudioClip clip = positive ? make_tone_clip(mix_seed(seed, i), rate, 0.3, active_s)
                                        : make_noise_clip(mix_seed(seed, i), rate, 0.3, active_s);
        std::ostringstream name;
        name << "clip_" << std::setw(3) << std::setfill('0') << i << ".wav";
        SampleRecord r;
        r.audio_path = dir + "/" + name.str();
        r.label = positive ? 1 : 0;
        r.source = Source::other;
        save_wav16(clip, r.audio_path);
        records.push_back(std::move(r));
    }
    atomic_write_file(dir + "/manifest.csv", write_manifest_csv(records));
    return records;
}

}  // namespace coughnet
