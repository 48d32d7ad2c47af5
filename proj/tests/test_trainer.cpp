#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "coughnet/errors.hpp"
#include "coughnet/synthetic.hpp"
#include "coughnet/trainer.hpp"

#include "helpers.hpp"

using namespace coughnet;

namespace {

// short clips and a two-second crop keep these tests quick
PipelineConfig quick_pipe(const std::string& cache_dir = "") {
    PipelineConfig pipe;
    pipe.features.n_mels = 16;
    pipe.preprocess.clip_seconds = 2.0;
    pipe.cache_dir = cache_dir;
    return pipe;
}

TrainConfig quick_train(uint64_t seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.val_fraction = 0.25;
    cfg.width_factor = 0.125;
    cfg.stage_depths = {1, 1, 0, 0};
    return cfg;
}

std::vector<SampleRecord> quick_corpus(testutil::TempDir& tmp, size_t n_pos, size_t n_neg) {
    std::vector<SampleRecord> records;
    for (size_t i = 0; i < n_pos + n_neg; ++i) {
        const bool positive = i < n_pos;
        const AudioClip clip = positive ? make_tone_clip(100 + i, 16000, 0.3, 1.5)
                                        : make_noise_clip(200 + i, 16000, 0.3, 1.5);
        SampleRecord r;
        r.audio_path = tmp.file("clip_" + std::to_string(i) + ".wav");
        r.label = positive ? 1 : 0;
        save_wav16(clip, r.audio_path);
        records.push_back(r);
    }
    return records;
}

size_t mels_files(const std::string& dir) {
    size_t n = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        n += static_cast<size_t>(e.path().extension() == ".mels");
    }
    return n;
}

}  // namespace

TEST_CASE("feature cache is keyed by content and config") {
    testutil::TempDir tmp("cache");
    const std::string cache = tmp.file("cache");
    std::filesystem::create_directory(cache);
    const PipelineConfig pipe = quick_pipe(cache);

    const std::string wav = tmp.file("a.wav");
    save_wav16(make_tone_clip(1, 16000, 0.3, 1.5), wav);

    const Spectrogram cold = compute_features(wav, pipe);
    REQUIRE(mels_files(cache) == 1);
    const Spectrogram warm = compute_features(wav, pipe);
    REQUIRE(mels_files(cache) == 1);
    REQUIRE(warm.values == cold.values);

    // fresh computation without any cache must agree bitwise with the cached run
    const Spectrogram direct = compute_features(wav, quick_pipe());
    REQUIRE(direct.values == cold.values);
    for (double v : direct.values) {
        REQUIRE(v == static_cast<double>(static_cast<float>(v)));
    }

    // same path, new content: a new cache entry, not a stale hit
    save_wav16(make_tone_clip(2, 16000, 0.3, 1.5), wav);
    const Spectrogram changed = compute_features(wav, pipe);
    REQUIRE(mels_files(cache) == 2);
    REQUIRE(changed.values != cold.values);

    // augmentation gets its own entry
    AugmentSpec spec;
    spec.kind = AugmentKind::gain;
    spec.magnitude = 1.3;
    compute_features(wav, pipe, &spec);
    REQUIRE(mels_files(cache) == 3);

    // config changes do too
    PipelineConfig wider = pipe;
    wider.features.n_mels = 8;
    compute_features(wav, wider);
    REQUIRE(mels_files(cache) == 4);
}

TEST_CASE("batch assembly standardizes each spectrogram") {
    testutil::TempDir tmp("batch");
    const PipelineConfig pipe = quick_pipe();
    const std::string wav = tmp.file("a.wav");
    save_wav16(make_tone_clip(3, 16000, 0.3, 1.5), wav);
    const std::string wav2 = tmp.file("b.wav");
    save_wav16(make_noise_clip(4, 16000, 0.3, 1.5), wav2);

    const std::vector<Spectrogram> feats = {compute_features(wav, pipe),
                                            compute_features(wav2, pipe)};
    const Tensor<float> batch = detail::assemble_batch(feats, {0, 1}, true);
    REQUIRE((batch.shape ==
             std::vector<size_t>{2, 1, feats[0].bands, feats[0].frames}));
    const size_t per = feats[0].bands * feats[0].frames;
    for (size_t b = 0; b < 2; ++b) {
        double mean = 0.0, var = 0.0;
        for (size_t i = 0; i < per; ++i) mean += batch.data[b * per + i];
        mean /= per;
        for (size_t i = 0; i < per; ++i) {
            const double d = batch.data[b * per + i] - mean;
            var += d * d;
        }
        var /= per;
        REQUIRE(std::abs(mean) < 1e-5);
        REQUIRE(std::sqrt(var) == Catch::Approx(1.0).margin(1e-4));
    }

    const Tensor<float> raw = detail::assemble_batch(feats, {0, 1}, false);
    for (size_t i = 0; i < per; ++i) {
        REQUIRE(raw.data[i] == static_cast<float>(feats[0].values[i]));
    }
}

TEST_CASE("training is deterministic and reports its split") {
    testutil::TempDir tmp("train");
    const auto records = quick_corpus(tmp, 6, 6);
    const std::string cache = tmp.file("cache");
    std::filesystem::create_directory(cache);
    const PipelineConfig pipe = quick_pipe(cache);
    const TrainConfig cfg = quick_train(5);

    const TrainResult a = train(records, pipe, cfg);
    REQUIRE(a.log.size() == 2);
    REQUIRE(a.log[0].epoch == 1);
    REQUIRE(a.log[1].epoch == 2);
    REQUIRE(a.best_epoch >= 1);
    double best = -1.0;
    for (const auto& e : a.log) best = std::max(best, e.val_auc);
    REQUIRE(a.best_val_auc == best);

    const auto [ti, vi] = train_val_split_for(records, cfg);
    REQUIRE(a.train_indices == ti);
    REQUIRE(a.val_indices == vi);
    std::set<size_t> all(ti.begin(), ti.end());
    for (size_t i : vi) REQUIRE(all.insert(i).second);
    REQUIRE(all.size() == records.size());

    const LoadedCheckpoint fin = decode_checkpoint(a.final_checkpoint);
    REQUIRE(fin.epoch == 2);
    REQUIRE(fin.net.input_mels == 16);
    const LoadedCheckpoint best_ck = decode_checkpoint(a.best_checkpoint);
    REQUIRE(best_ck.epoch == a.best_epoch);

    // identical run, then a multi-worker run: all byte-identical
    const TrainResult b = train(records, pipe, cfg);
    REQUIRE(b.final_checkpoint == a.final_checkpoint);
    REQUIRE(b.best_checkpoint == a.best_checkpoint);
    REQUIRE(epoch_log_csv(b.log) == epoch_log_csv(a.log));

    PipelineConfig threaded = pipe;
    threaded.jobs = 4;
    const TrainResult c = train(records, threaded, cfg);
    REQUIRE(c.final_checkpoint == a.final_checkpoint);

    TrainConfig other = cfg;
    other.seed = 6;
    const TrainResult d = train(records, pipe, other);
    REQUIRE(d.final_checkpoint != a.final_checkpoint);
}

TEST_CASE("non-finite losses abort with the epoch and batch") {
    const PipelineConfig pipe = quick_pipe();
    Spectrogram good;
    good.bands = 16;
    good.frames = 4;
    good.domain = SpectrogramDomain::log;
    good.config = pipe.features;
    good.values.assign(16 * 4, 0.5);
    Spectrogram poisoned = good;
    poisoned.values[7] = std::numeric_limits<double>::quiet_NaN();

    detail::PreparedSet train_set;
    train_set.features = {poisoned, good};
    train_set.labels = {1, 0};
    detail::PreparedSet val_set;
    val_set.features = {good, good};
    val_set.labels = {1, 0};

    TrainConfig cfg = quick_train(1);
    cfg.batch_size = 2;
    PipelineConfig p16 = pipe;
    p16.features.n_mels = 16;
    try {
        detail::train_loop(train_set, val_set, p16, cfg);
        FAIL("expected NonFiniteLoss");
    } catch (const NonFiniteLoss& e) {
        REQUIRE(std::string(e.what()).find("epoch 1") != std::string::npos);
        REQUIRE(std::string(e.what()).find("batch 0") != std::string::npos);
    }
}

TEST_CASE("prepare_set appends augmented minority copies") {
    testutil::TempDir tmp("prep");
    const auto records = quick_corpus(tmp, 1, 3);
    const PipelineConfig pipe = quick_pipe();

    const std::vector<size_t> indices = {0, 1, 2, 3};
    std::vector<int> labels;
    for (const auto& r : records) labels.push_back(r.label);
    const auto plan = plan_minority_expansion(labels, 1.0, 7);
    REQUIRE(plan.size() == 2);  // ceil(1.0*3) - 1

    const detail::PreparedSet set = detail::prepare_set(records, indices, plan, pipe);
    REQUIRE(set.features.size() == 6);
    REQUIRE(set.labels.size() == 6);
    REQUIRE(set.labels[4] == 1);
    REQUIRE(set.labels[5] == 1);
    // augmented features differ from the source
    REQUIRE(set.features[4].values != set.features[0].values);
}

TEST_CASE("training with augmentation and class weights runs end to end") {
    testutil::TempDir tmp("aug_train");
    const auto records = quick_corpus(tmp, 3, 6);
    TrainConfig cfg = quick_train(9);
    cfg.epochs = 1;
    cfg.val_fraction = 0.34;
    cfg.augment_ratio = 1.0;
    cfg.class_weighted_loss = true;
    const TrainResult r = train(records, quick_pipe(), cfg);
    REQUIRE(r.log.size() == 1);
    REQUIRE(std::isfinite(r.log[0].train_loss));
}

TEST_CASE("evaluate scores records against a checkpoint") {
    testutil::TempDir tmp("eval");
    const auto records = quick_corpus(tmp, 4, 4);
    const PipelineConfig pipe = quick_pipe();
    TrainConfig cfg = quick_train(11);
    const TrainResult tr = train(records, pipe, cfg);

    const LoadedCheckpoint ckpt = decode_checkpoint(tr.final_checkpoint);
    const EvalResult ev = evaluate(ckpt, records, pipe);
    REQUIRE(ev.scores.size() == records.size());
    for (double s : ev.scores) {
        REQUIRE(s >= 0.0);
        REQUIRE(s <= 1.0);
    }
    REQUIRE(ev.labels.size() == records.size());
    REQUIRE(ev.cm.total() == static_cast<double>(records.size()));
    REQUIRE(ev.auc_value >= 0.0);
    REQUIRE(ev.auc_value <= 1.0);
    REQUIRE(ev.curve.fpr.front() == 0.0);
    REQUIRE(ev.curve.tpr.back() == 1.0);

    PipelineConfig other = pipe;
    other.features.hop = 256;
    REQUIRE_THROWS_AS(evaluate(ckpt, records, other), ConfigMismatch);
}

TEST_CASE("cross validation holds external records out of every fold") {
    testutil::TempDir tmp("cv");
    const auto primary = quick_corpus(tmp, 4, 4);

    std::vector<SampleRecord> external;
    for (size_t i = 0; i < 2; ++i) {
        SampleRecord r;
        r.audio_path = tmp.file("ext_" + std::to_string(i) + ".wav");
        r.label = 1;
        r.cough_probability = 0.9;
        r.covid_status_confirmed = true;
        r.source = Source::coughvid;
        save_wav16(make_tone_clip(300 + i, 16000, 0.3, 1.5), r.audio_path);
        external.push_back(r);
    }

    const FoldPlan plan = make_folds(primary, 2, 13);
    TrainConfig cfg = quick_train(13);
    cfg.epochs = 1;
    const PipelineConfig pipe = quick_pipe();
    const CrossvalResult cv = crossvalidate(primary, external, plan, pipe, cfg);

    REQUIRE(cv.folds.size() == 2);
    double auc_sum = 0.0;
    std::vector<ConfusionMatrix> cms;
    for (size_t fold = 0; fold < 2; ++fold) {
        const FoldResult& fr = cv.folds[fold];
        REQUIRE(fr.fold == fold);
        const auto val_idx = plan.fold_indices(fold);
        REQUIRE(fr.scores.size() == val_idx.size());
        for (size_t j = 0; j < val_idx.size(); ++j) {
            REQUIRE(fr.labels[j] == primary[val_idx[j]].label);
        }
        REQUIRE(decode_checkpoint(fr.checkpoint).epoch >= 1);
        REQUIRE(fr.log.size() == 1);
        auc_sum += fr.auc_value;
        cms.push_back(fr.cm);
    }
    REQUIRE(cv.mean_auc == Catch::Approx(auc_sum / 2.0).epsilon(1e-12));
    const ConfusionMatrix mean = mean_folds(cms);
    REQUIRE(cv.mean_cm.tp == mean.tp);
    REQUIRE(cv.mean_cm.fn == mean.fn);

    FoldPlan short_plan = plan;
    short_plan.assignments.pop_back();
    REQUIRE_THROWS_AS(crossvalidate(primary, external, short_plan, pipe, cfg), ValidationError);
}

TEST_CASE("mel sweep re-runs cross validation per resolution") {
    testutil::TempDir tmp("sweep");
    const auto primary = quick_corpus(tmp, 3, 3);
    const FoldPlan plan = make_folds(primary, 2, 17);
    TrainConfig cfg = quick_train(17);
    cfg.epochs = 1;

    const SweepResult sw = sweep_mels(primary, {}, {8, 16}, plan, quick_pipe(), cfg);
    REQUIRE(sw.rows.size() == 2);
    REQUIRE(sw.rows[0].m == 8);
    REQUIRE(sw.rows[1].m == 16);
    REQUIRE(sw.pooled_curves.size() == 2);
    for (const RocCurve& c : sw.pooled_curves) {
        REQUIRE(c.fpr.front() == 0.0);
        REQUIRE(c.tpr.back() == 1.0);
    }

    const auto parsed = parse_sweep_csv(sweep_csv(sw.rows));
    REQUIRE(parsed.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        REQUIRE(parsed[i].m == sw.rows[i].m);
        REQUIRE(parsed[i].mean_auc == Catch::Approx(sw.rows[i].mean_auc).margin(1e-9));
        REQUIRE(parsed[i].mean_acc == Catch::Approx(sw.rows[i].mean_acc).margin(1e-9));
    }
    REQUIRE_THROWS_AS(parse_sweep_csv("m,mean_auc,mean_acc\n8,0.5\n"), BadRow);
    REQUIRE_THROWS_AS(parse_sweep_csv(""), EmptyInput);
}

TEST_CASE("train config validation") {
    TrainConfig cfg = quick_train(1);
    REQUIRE_NOTHROW(cfg.validate());
    auto broken = [&](auto mutate) {
        TrainConfig c = cfg;
        mutate(c);
        return c;
    };
    REQUIRE_THROWS_AS(broken([](TrainConfig& c) { c.lr = 0.0; }).validate(), InvalidConfig);
    REQUIRE_THROWS_AS(broken([](TrainConfig& c) { c.batch_size = 0; }).validate(), InvalidConfig);
    REQUIRE_THROWS_AS(broken([](TrainConfig& c) { c.epochs = 0; }).validate(), InvalidConfig);
    REQUIRE_THROWS_AS(broken([](TrainConfig& c) { c.val_fraction = 0.0; }).validate(), InvalidConfig);
    REQUIRE_THROWS_AS(broken([](TrainConfig& c) { c.val_fraction = 1.0; }).validate(), InvalidConfig);
    REQUIRE_THROWS_AS(broken([](TrainConfig& c) { c.augment_ratio = 1.5; }).validate(), InvalidConfig);
    REQUIRE_THROWS_AS(broken([](TrainConfig& c) { c.augment_ratio = -0.1; }).validate(), InvalidConfig);
}

TEST_CASE("report csv formats") {
    std::vector<EpochLog> log(2);
    log[0] = {1, 0.5, 0.6, 0.75};
    log[1] = {2, 0.25, 0.5, 0.875};
    const std::string csv = epoch_log_csv(log);
    REQUIRE(csv.find("epoch,train_loss,val_loss,val_auc\n") == 0);
    REQUIRE(csv.find("\n1,0.5,0.6,0.75\n") != std::string::npos);
    REQUIRE(csv.find("\n2,0.25,0.5,0.875\n") != std::string::npos);

    const std::string sweep = sweep_csv({{32, 0.9, 0.8}, {64, 0.95, 0.85}});
    REQUIRE(sweep.find("m,mean_auc,mean_acc\n") == 0);
    REQUIRE(sweep.find("\n32,0.9,0.8\n") != std::string::npos);

    FoldResult fr;
    fr.fold = 0;
    fr.cm = {3, 5, 1, 1};
    fr.metrics = summary(fr.cm);
    fr.auc_value = 0.875;
    CrossvalResult cv;
    cv.mean_cm = fr.cm;
    cv.mean_metrics = fr.metrics;
    cv.mean_auc = 0.875;
    const std::string mc = metrics_csv({fr}, cv);
    REQUIRE(mc.find("fold,tp,tn,fp,fn,acc,se,sp,pr,f1,auc\n") == 0);
    REQUIRE(mc.find("\n0,3,5,1,1,0.8,0.75,") != std::string::npos);
    REQUIRE(mc.find("\nmean,3,5,1,1,") != std::string::npos);
}
