#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "coughnet/errors.hpp"
#include "coughnet/preprocess.hpp"
#include "coughnet/rng.hpp"
#include "coughnet/synthetic.hpp"

using namespace coughnet;

namespace {

AudioClip silence(double seconds, int rate = 16000) {
    AudioClip c;
    c.sample_rate_hz = rate;
    c.samples.assign(static_cast<size_t>(std::llround(seconds * rate)), 0.0);
    return c;
}

}  // namespace

TEST_CASE("activity profile flags the burst, not the silence") {
    const AudioClip clip = make_burst_clip(42, 16000, 0.3, 0.5, 1.0);
    const ActivityProfile profile = activity_profile(clip);
    REQUIRE(profile.window_ms == 100);
    REQUIRE(profile.probabilities.size() == 18);  // 1.8 s of audio
    REQUIRE(profile.probabilities[0] < 0.1);
    REQUIRE(profile.probabilities[1] < 0.1);
    // one of the onset windows must fire hard
    const double onset = std::max(profile.probabilities[2],
                                  std::max(profile.probabilities[3], profile.probabilities[4]));
    REQUIRE(onset > 0.9);
    for (double p : profile.probabilities) {
        REQUIRE(p >= 0.0);
        REQUIRE(p <= 1.0);
    }
}

TEST_CASE("activity profile on pure silence is all zero") {
    const ActivityProfile profile = activity_profile(silence(1.0));
    for (double p : profile.probabilities) REQUIRE(p == 0.0);
}

TEST_CASE("activity profile rejects clips shorter than one window") {
    REQUIRE_THROWS_AS(activity_profile(silence(0.05)), ClipTooShort);
}

TEST_CASE("later burst windows outscore leading silence windows") {
    // 1 s clip: first half silence, second half noise burst
    AudioClip clip = silence(1.0);
    Rng rng(7);
    for (size_t i = 8000; i < 16000; ++i) clip.samples[i] = 0.5 * rng.gaussian();
    const ActivityProfile profile = activity_profile(clip);
    REQUIRE(profile.probabilities.size() == 10);
    for (size_t w = 0; w < 5; ++w) {
        for (size_t a = 5; a < 10; ++a) {
            REQUIRE(profile.probabilities[a] > profile.probabilities[w]);
        }
    }
}

TEST_CASE("trim_leading removes 300 ms of prepended silence within one window") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(mix_seed(99, seed));
        const double burst_s = rng.uniform(0.4, 0.7);
        const AudioClip clip = make_burst_clip(mix_seed(7, seed), 16000, 0.3, burst_s, 1.0);
        const ActivityProfile profile = activity_profile(clip);
        const AudioClip trimmed = trim_leading(clip, profile, 0.6);
        const size_t removed = clip.samples.size() - trimmed.samples.size();
        // expected cut 0.3 s, one 100 ms window of slack
        REQUIRE(removed >= 3200);
        REQUIRE(removed <= 6400);
    }
}

TEST_CASE("trim_leading is idempotent") {
    const AudioClip clip = make_burst_clip(5, 16000, 0.3, 0.6, 1.0);
    const AudioClip once = trim_leading(clip, activity_profile(clip), 0.6);
    const AudioClip twice = trim_leading(once, activity_profile(once), 0.6);
    REQUIRE(twice.samples == once.samples);
}

TEST_CASE("trim_leading validates inputs and reports missing activity") {
    const AudioClip clip = silence(1.0);
    const ActivityProfile profile = activity_profile(clip);
    REQUIRE_THROWS_AS(trim_leading(clip, profile, 0.6), NoActivityFound);
    REQUIRE_THROWS_AS(trim_leading(clip, profile, -0.1), ValidationError);
    REQUIRE_THROWS_AS(trim_leading(clip, profile, 1.5), ValidationError);
    ActivityProfile wrong = profile;
    wrong.probabilities.pop_back();
    REQUIRE_THROWS_AS(trim_leading(clip, wrong, 0.6), ValidationError);
}

TEST_CASE("center_crop output length is exact regardless of input length") {
    for (double seconds : {0.01, 1.0, 3.0, 5.0, 7.3, 12.0}) {
        AudioClip clip = silence(seconds);
        for (size_t i = 0; i < clip.samples.size(); ++i) clip.samples[i] = 0.01 * (i % 7);
        const AudioClip out = center_crop(clip, 5.0);
        REQUIRE(out.samples.size() == 80000);
        REQUIRE(out.sample_rate_hz == 16000);
    }
}

TEST_CASE("center_crop keeps the centered span of long inputs") {
    AudioClip clip = silence(1.0, 1000);  // 1000 samples at 1 kHz
    for (size_t i = 0; i < 1000; ++i) clip.samples[i] = static_cast<double>(i);
    const AudioClip out = center_crop(clip, 0.5);
    REQUIRE(out.samples.size() == 500);
    REQUIRE(out.samples.front() == 250.0);  // start at (1000-500)/2
    REQUIRE(out.samples.back() == 749.0);
}

TEST_CASE("center_crop zero-pads short inputs symmetrically, extra to the tail") {
    AudioClip clip = silence(0.0, 1000);
    clip.samples = {1.0, 2.0, 3.0};
    const AudioClip out = center_crop(clip, 0.006);  // 6 samples
    REQUIRE((out.samples == std::vector<double>{0.0, 1.0, 2.0, 3.0, 0.0, 0.0}));

    clip.samples = {1.0, 2.0, 3.0, 4.0};
    const AudioClip odd = center_crop(clip, 0.007);  // 7 samples, pad 3: 1 lead, 2 tail
    REQUIRE((odd.samples == std::vector<double>{0.0, 1.0, 2.0, 3.0, 4.0, 0.0, 0.0}));
}

TEST_CASE("preprocess trims then crops to the configured length") {
    const AudioClip clip = make_burst_clip(3, 16000, 0.3, 0.6, 6.0);
    PreprocessOptions opt;
    bool trimmed = false;
    const AudioClip out = preprocess(clip, opt, &trimmed);
    REQUIRE(out.samples.size() == 80000);
    REQUIRE(trimmed);
}

TEST_CASE("preprocess falls back to the untrimmed clip on silence") {
    const AudioClip clip = silence(6.0);
    PreprocessOptions opt;
    bool trimmed = true;
    const AudioClip out = preprocess(clip, opt, &trimmed);
    REQUIRE(out.samples.size() == 80000);
    REQUIRE_FALSE(trimmed);

    opt.fallback_untrimmed = false;
    REQUIRE_THROWS_AS(preprocess(clip, opt), NoActivityFound);
}

TEST_CASE("preprocess is idempotent on its own output") {
    const AudioClip clip = make_tone_clip(17, 16000, 0.3, 5.2);
    PreprocessOptions opt;
    const AudioClip once = preprocess(clip, opt);
    const AudioClip twice = preprocess(once, opt);
    REQUIRE(once.samples.size() == twice.samples.size());
    size_t diff = 0;
    for (size_t i = 0; i < once.samples.size(); ++i) {
        if (once.samples[i] != twice.samples[i]) ++diff;
    }
    // at most one VAD window of drift at the boundary
    REQUIRE(diff <= 1600);
}

TEST_CASE("energy backend ranks silence at zero and bursts high") {
    VadOptions opt;
    opt.backend = VadBackend::energy;
    const AudioClip clip = make_burst_clip(21, 16000, 0.3, 0.5, 1.0);
    const ActivityProfile profile = activity_profile(clip, opt);
    REQUIRE(profile.probabilities[0] == 0.0);
    REQUIRE(profile.probabilities[1] == 0.0);
    const double onset = std::max(profile.probabilities[3], profile.probabilities[4]);
    REQUIRE(onset > 0.8);
}
