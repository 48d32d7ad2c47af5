#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "coughnet/audio.hpp"
#include "coughnet/augment.hpp"
#include "coughnet/csvio.hpp"
#include "coughnet/dataset.hpp"
#include "coughnet/errors.hpp"
#include "coughnet/features.hpp"
#include "coughnet/metrics.hpp"
#include "coughnet/nn.hpp"
#include "coughnet/preprocess.hpp"
#include "coughnet/resnet.hpp"
#include "coughnet/rng.hpp"

namespace coughnet {

struct PipelineConfig {
    FeatureConfig features;
    PreprocessOptions preprocess;
    std::string cache_dir;  // empty disables the feature cache
    size_t jobs = 1;
    std::function<void(const std::string&)> warn;  // optional, e.g. VAD fallback notices
};

struct TrainConfig {
    double lr = 1e-4;
    size_t batch_size = 20;
    size_t epochs = 25;
    uint64_t seed = 0;
    double val_fraction = 0.10;
    bool normalize = true;  // per-spectrogram standardization
    double width_factor = 1.0;
    std::array<size_t, 4> stage_depths = {3, 4, 6, 3};
    double augment_ratio = 0.0;  // 0 disables minority expansion
    bool class_weighted_loss = false;

    void validate() const {
        if (lr <= 0.0) throw InvalidConfig("learning rate must be positive");
        if (batch_size == 0) throw InvalidConfig("batch size must be positive");
        if (epochs < 1) throw InvalidConfig("need at least one epoch");
        if (val_fraction <= 0.0 || val_fraction >= 1.0) {
            throw InvalidConfig("val fraction must lie in (0,1)");
        }
        if (augment_ratio < 0.0 || augment_ratio > 1.0) {
            throw InvalidConfig("augment ratio must lie in [0,1]");
        }
    }
};

struct EpochLog {
    size_t epoch = 0;
    double train_loss = 0, val_loss = 0, val_auc = 0;
};

struct TrainResult {
    std::vector<uint8_t> final_checkpoint;
    std::vector<uint8_t> best_checkpoint;
    size_t best_epoch = 0;
    double best_val_auc = 0;
    std::vector<EpochLog> log;
    std::vector<size_t> train_indices, val_indices;  // into the input record list
};

namespace detail {

inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 14695981039346656037ULL) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline uint64_t fnv1a_str(const std::string& s, uint64_t h) { return fnv1a(s.data(), s.size(), h); }

inline std::string feature_cache_key(const std::vector<uint8_t>& file_bytes,
                                     const PipelineConfig& pipe, const std::string& augment_tag) {
    uint64_t h = fnv1a(file_bytes.data(), file_bytes.size());
    std::ostringstream cfg;
    cfg.precision(17);
    const FeatureConfig& f = pipe.features;
    cfg << f.n_fft << '|' << f.hop << '|' << f.n_mels << '|' << f.f_low_hz << '|' << f.f_high_hz
        << '|' << f.sample_rate_hz << '|' << f.log_floor << '|' << pipe.preprocess.vad_threshold
        << '|' << pipe.preprocess.clip_seconds << '|' << pipe.preprocess.fallback_untrimmed << '|'
        << augment_tag;
    h = fnv1a_str(cfg.str(), h);
    std::ostringstream hex;
    hex << std::hex << h;
    return hex.str();
}

}  // namespace detail

// Path to network-ready features for one record: decode, resample, optional
// waveform augmentation, VAD trim, center crop, log-mel extraction. Cached by
// content hash when a cache directory is configured.
inline Spectrogram compute_features(const std::string& audio_path, const PipelineConfig& pipe,
                                    const AugmentSpec* augment = nullptr) {
    const std::vector<uint8_t> bytes = read_file_bytes(audio_path);

    std::string cache_path;
    if (!pipe.cache_dir.empty()) {
        const std::string key =
            detail::feature_cache_key(bytes, pipe, augment ? augment->tag() : "");
        cache_path = pipe.cache_dir + "/" + key + ".mels";
        if (std::filesystem::exists(cache_path)) {
            Spectrogram cached = load_spectrogram(cache_path);
            cached.config = pipe.features;
            return cached;
        }
    }

    AudioClip clip = decode_wav(std::span<const uint8_t>(bytes.data(), bytes.size()));
    clip = resample(clip, pipe.features.sample_rate_hz);
    if (augment) clip = apply(clip, *augment);

    bool trimmed = false;
    clip = preprocess(clip, pipe.preprocess, &trimmed);
    if (!trimmed && pipe.warn) {
        pipe.warn("no activity found in " + audio_path + ", using the untrimmed clip");
    }

    Spectrogram spec = extract(clip, pipe.features);
    // The cache stores 32-bit floats; round here too so cached and freshly
    // computed features are bit-identical.
    for (double& v : spec.values) v = static_cast<float>(v);
    if (!cache_path.empty()) save_spectrogram(cache_path, spec);
    return spec;
}

namespace detail {

struct FeatureJob {
    std::string path;
    std::optional<AugmentSpec> augment;
    int label = 0;
};

// Extraction fans out across jobs; every job is a pure function of its file,
// so the results are identical at any worker count.
inline std::vector<Spectrogram> run_feature_jobs(const std::vector<FeatureJob>& jobs,
                                                 const PipelineConfig& pipe) {
    std::vector<Spectrogram> out(jobs.size());
    const size_t workers = std::max<size_t>(1, pipe.jobs);
    if (workers == 1) {
        for (size_t i = 0; i < jobs.size(); ++i) {
            out[i] = compute_features(jobs[i].path, pipe,
                                      jobs[i].augment ? &*jobs[i].augment : nullptr);
        }
        return out;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (;;) {
                    const size_t i = next.fetch_add(1);
                    if (i >= jobs.size()) break;
                    out[i] = compute_features(jobs[i].path, pipe,
                                              jobs[i].augment ? &*jobs[i].augment : nullptr);
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

// B x 1 x M x K batch tensor with optional per-spectrogram standardization.
inline Tensor<float> assemble_batch(const std::vector<Spectrogram>& feats,
                                    const std::vector<size_t>& indices, bool normalize) {
    const size_t M = feats[indices[0]].bands, K = feats[indices[0]].frames;
    Tensor<float> batch({indices.size(), 1, M, K});
    for (size_t b = 0; b < indices.size(); ++b) {
        const Spectrogram& s = feats[indices[b]];
        if (s.bands != M || s.frames != K) throw ShapeMismatch("spectrogram sizes differ in batch");
        double mean = 0.0, var = 0.0;
        if (normalize) {
            for (double v : s.values) mean += v;
            mean /= s.values.size();
            for (double v : s.values) var += (v - mean) * (v - mean);
            var /= s.values.size();
        }
        const double inv = normalize ? 1.0 / std::max(std::sqrt(var), 1e-6) : 1.0;
        const double off = normalize ? mean : 0.0;
        float* dst = batch.data.data() + b * M * K;
        for (size_t i = 0; i < s.values.size(); ++i) {
            dst[i] = static_cast<float>((s.values[i] - off) * inv);
        }
    }
    return batch;
}

struct PreparedSet {
    std::vector<Spectrogram> features;
    std::vector<int> labels;
};

inline std::vector<double> positive_scores(ResNet<float>& model, const PreparedSet& set,
                                           size_t batch_size, bool normalize,
                                           double* mean_loss = nullptr) {
    std::vector<double> scores;
    scores.reserve(set.labels.size());
    double loss_sum = 0.0;
    for (size_t start = 0; start < set.labels.size(); start += batch_size) {
        const size_t end = std::min(set.labels.size(), start + batch_size);
        std::vector<size_t> idx;
        for (size_t i = start; i < end; ++i) idx.push_back(i);
        const Tensor<float> batch = assemble_batch(set.features, idx, normalize);
        const Tensor<float> probs = model.forward(batch, false);
        std::vector<int> batch_labels(set.labels.begin() + static_cast<std::ptrdiff_t>(start),
                                      set.labels.begin() + static_cast<std::ptrdiff_t>(end));
        if (mean_loss) {
            loss_sum += static_cast<double>(cross_entropy(probs, batch_labels)) * idx.size();
        }
        for (size_t b = 0; b < idx.size(); ++b) {
            scores.push_back(static_cast<double>(probs.at2(b, 1)));
        }
    }
    if (mean_loss) *mean_loss = loss_sum / set.labels.size();
    return scores;
}

// Core loop shared by train() and crossvalidate(): the data split is already
// decided by the caller.
inline TrainResult train_loop(const PreparedSet& train_set, const PreparedSet& val_set,
                              const PipelineConfig& pipe, const TrainConfig& cfg) {
    const size_t M = pipe.features.n_mels;
    const size_t K = train_set.features.front().frames;

    ResNetConfig net;
    net.input_mels = M;
    net.input_frames = K;
    net.width_factor = cfg.width_factor;
    net.stage_depths = cfg.stage_depths;
    ResNet<float> model(net, mix_seed(cfg.seed, 2));

    std::vector<float> class_weights;
    if (cfg.class_weighted_loss) {
        double pos = 0;
        for (int l : train_set.labels) pos += l;
        const double neg = static_cast<double>(train_set.labels.size()) - pos;
        if (pos > 0 && neg > 0) {
            class_weights = {static_cast<float>(train_set.labels.size() / (2.0 * neg)),
                             static_cast<float>(train_set.labels.size() / (2.0 * pos))};
        }
    }

    Adam<float> opt(model.parameters(), static_cast<float>(cfg.lr));
    const uint64_t batch_seed = mix_seed(cfg.seed, 3);

    TrainResult result;
    result.best_val_auc = -1.0;
    for (size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        size_t batch_id = 0;
        for (const auto& batch_idx :
             batches(train_set.labels.size(), cfg.batch_size, epoch - 1, batch_seed)) {
            const Tensor<float> batch = assemble_batch(train_set.features, batch_idx, cfg.normalize);
            std::vector<int> labels;
            for (size_t i : batch_idx) labels.push_back(train_set.labels[i]);

            opt.zero_grad();
            const Tensor<float> probs = model.forward(batch, true);
            const auto [loss, gprobs] = cross_entropy_with_grad(probs, labels, class_weights);
            if (!std::isfinite(static_cast<double>(loss))) {
                throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batch_id));
            }
            model.backward(gprobs);
            opt.step();
            loss_sum += static_cast<double>(loss) * batch_idx.size();
            ++batch_id;
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / train_set.labels.size();
        const std::vector<double> val_scores =
            positive_scores(model, val_set, cfg.batch_size, cfg.normalize, &log.val_loss);
        log.val_auc = auc(val_scores, val_set.labels);
        result.log.push_back(log);

        if (log.val_auc > result.best_val_auc) {
            result.best_val_auc = log.val_auc;
            result.best_epoch = epoch;
            result.best_checkpoint = encode_checkpoint(model, pipe.features,
                                                       static_cast<uint32_t>(epoch), cfg.seed);
        }
    }
    result.final_checkpoint =
        encode_checkpoint(model, pipe.features, static_cast<uint32_t>(cfg.epochs), cfg.seed);
    return result;
}

inline PreparedSet prepare_set(const std::vector<SampleRecord>& records,
                               const std::vector<size_t>& indices,
                               const std::vector<std::pair<size_t, AugmentSpec>>& augment_plan,
                               const PipelineConfig& pipe) {
    std::vector<FeatureJob> jobs;
    jobs.reserve(indices.size() + augment_plan.size());
    for (size_t i : indices) {
        jobs.push_back({records[i].audio_path, std::nullopt, records[i].label});
    }
    for (const auto& [local, spec] : augment_plan) {
        const SampleRecord& src = records[indices[local]];
        jobs.push_back({src.audio_path, spec, src.label});
    }
    PreparedSet set;
    set.features = run_feature_jobs(jobs, pipe);
    for (const auto& j : jobs) set.labels.push_back(j.label);
    return set;
}

}  // namespace detail

// The split train() will use for a given record list and config; exposed so
// reports and tests can reconstruct it exactly.
inline std::pair<std::vector<size_t>, std::vector<size_t>> train_val_split_for(
    const std::vector<SampleRecord>& records, const TrainConfig& cfg) {
    std::vector<int> labels;
    labels.reserve(records.size());
    for (const auto& r : records) labels.push_back(r.label);
    return split_train_val_indices(labels, cfg.val_fraction, mix_seed(cfg.seed, 1));
}

// Stratified split, minority expansion on the training side only, then the
// shared epoch loop.
inline TrainResult train(const std::vector<SampleRecord>& records, const PipelineConfig& pipe,
                         const TrainConfig& cfg) {
    cfg.validate();
    pipe.features.validate();
    auto [train_idx, val_idx] = train_val_split_for(records, cfg);

    std::vector<int> train_labels;
    for (size_t i : train_idx) train_labels.push_back(records[i].label);
    std::vector<std::pair<size_t, AugmentSpec>> plan;
    if (cfg.augment_ratio > 0.0) {
        plan = plan_minority_expansion(train_labels, cfg.augment_ratio, mix_seed(cfg.seed, 4));
    }

    const detail::PreparedSet train_set = detail::prepare_set(records, train_idx, plan, pipe);
    const detail::PreparedSet val_set = detail::prepare_set(records, val_idx, {}, pipe);

    TrainResult result = detail::train_loop(train_set, val_set, pipe, cfg);
    result.train_indices = train_idx;
    result.val_indices = val_idx;
    return result;
}

struct EvalResult {
    ConfusionMatrix cm;
    MetricSummary metrics;
    RocCurve curve;
    double auc_value = 0;
    std::vector<double> scores;
    std::vector<int> labels;
};

// Eval-mode inference over records; scores are positive-class probabilities.
inline EvalResult evaluate(const LoadedCheckpoint& ckpt, const std::vector<SampleRecord>& records,
                           const PipelineConfig& pipe, double threshold = 0.5) {
    const FeatureConfig& a = ckpt.features;
    const FeatureConfig& b = pipe.features;
    if (a.n_fft != b.n_fft || a.hop != b.hop || a.n_mels != b.n_mels ||
        a.f_low_hz != b.f_low_hz || a.f_high_hz != b.f_high_hz ||
        a.sample_rate_hz != b.sample_rate_hz || a.log_floor != b.log_floor) {
        throw ConfigMismatch("checkpoint feature config does not match extraction config");
    }
    ResNet<float> model = restore_model(ckpt);

    std::vector<size_t> all(records.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    const detail::PreparedSet set = detail::prepare_set(records, all, {}, pipe);

    EvalResult out;
    out.scores = detail::positive_scores(model, set, 20, true);
    out.labels = set.labels;
    out.cm = confusion(out.scores, out.labels, threshold);
    out.metrics = summary_allow_nan(out.cm);
    out.curve = roc(out.scores, out.labels);
    out.auc_value = auc(out.curve);
    return out;
}

struct FoldResult {
    size_t fold = 0;
    ConfusionMatrix cm;
    MetricSummary metrics;
    double auc_value = 0;
    std::vector<uint8_t> checkpoint;
    std::vector<EpochLog> log;
    std::vector<double> scores;
    std::vector<int> labels;
};

struct CrossvalResult {
    std::vector<FoldResult> folds;
    ConfusionMatrix mean_cm;
    MetricSummary mean_metrics;
    double mean_auc = 0;
};

// One model per fold: training set = out-of-fold primary records plus every
// filtered external record, validation = the held-out fold. External records
// never enter validation.
inline CrossvalResult crossvalidate(const std::vector<SampleRecord>& primary,
                                    const std::vector<SampleRecord>& external,
                                    const FoldPlan& plan, const PipelineConfig& pipe,
                                    const TrainConfig& cfg) {
    cfg.validate();
    if (plan.assignments.size() != primary.size()) {
        throw ValidationError("fold plan does not cover the record set");
    }

    CrossvalResult result;
    std::vector<ConfusionMatrix> cms;
    for (size_t fold = 0; fold < plan.num_folds; ++fold) {
        const std::vector<size_t> val_idx = plan.fold_indices(fold);
        std::vector<size_t> train_idx = plan.out_of_fold_indices(fold);

        std::vector<SampleRecord> pool;
        pool.reserve(train_idx.size() + external.size());
        for (size_t i : train_idx) pool.push_back(primary[i]);
        pool.insert(pool.end(), external.begin(), external.end());

        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = mix_seed(cfg.seed, fold);

        std::vector<int> pool_labels;
        for (const auto& r : pool) pool_labels.push_back(r.label);
        std::vector<std::pair<size_t, AugmentSpec>> aug_plan;
        if (cfg.augment_ratio > 0.0) {
            aug_plan = plan_minority_expansion(pool_labels, cfg.augment_ratio,
                                               mix_seed(fold_cfg.seed, 4));
        }

        std::vector<size_t> pool_all(pool.size());
        for (size_t i = 0; i < pool.size(); ++i) pool_all[i] = i;
        const detail::PreparedSet train_set = detail::prepare_set(pool, pool_all, aug_plan, pipe);
        const detail::PreparedSet val_set = detail::prepare_set(primary, val_idx, {}, pipe);

        TrainResult tr = detail::train_loop(train_set, val_set, pipe, fold_cfg);

        const LoadedCheckpoint best = decode_checkpoint(tr.best_checkpoint);
        ResNet<float> model = restore_model(best);
        FoldResult fr;
        fr.fold = fold;
        fr.scores = detail::positive_scores(model, val_set, cfg.batch_size, cfg.normalize);
        fr.labels = val_set.labels;
        fr.cm = confusion(fr.scores, fr.labels, 0.5);
        fr.metrics = summary_allow_nan(fr.cm);
        fr.auc_value = auc(fr.scores, fr.labels);
        fr.checkpoint = std::move(tr.best_checkpoint);
        fr.log = std::move(tr.log);
        cms.push_back(fr.cm);
        result.mean_auc += fr.auc_value;
        result.folds.push_back(std::move(fr));
    }
    result.mean_cm = mean_folds(cms);
    result.mean_metrics = summary_allow_nan(result.mean_cm);
    result.mean_auc /= static_cast<double>(plan.num_folds);
    return result;
}

struct SweepRow {
    size_t m = 0;
    double mean_auc = 0, mean_acc = 0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<RocCurve> pooled_curves;  // one per M, scores pooled over folds
};

// Re-runs cross-validation for each mel resolution.
inline SweepResult sweep_mels(const std::vector<SampleRecord>& primary,
                              const std::vector<SampleRecord>& external,
                              const std::vector<size_t>& m_values, const FoldPlan& plan,
                              const PipelineConfig& base_pipe, const TrainConfig& cfg) {
    SweepResult out;
    for (size_t m : m_values) {
        PipelineConfig pipe = base_pipe;
        pipe.features.n_mels = m;
        const CrossvalResult cv = crossvalidate(primary, external, plan, pipe, cfg);

        SweepRow row;
        row.m = m;
        row.mean_auc = cv.mean_auc;
        row.mean_acc = cv.mean_metrics.acc;
        out.rows.push_back(row);

        std::vector<double> pooled_scores;
        std::vector<int> pooled_labels;
        for (const auto& fr : cv.folds) {
            pooled_scores.insert(pooled_scores.end(), fr.scores.begin(), fr.scores.end());
            pooled_labels.insert(pooled_labels.end(), fr.labels.begin(), fr.labels.end());
        }
        out.pooled_curves.push_back(roc(pooled_scores, pooled_labels));
    }
    return out;
}

// --- CSV report writers -------------------------------------------------------

inline std::string epoch_log_csv(const std::vector<EpochLog>& log) {
    std::ostringstream os;
    os << "epoch,train_loss,val_loss,val_auc\n";
    os.precision(9);
    for (const auto& e : log) {
        os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_auc << '\n';
    }
    return os.str();
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "m,mean_auc,mean_acc\n";
    os.precision(9);
    for (const auto& r : rows) {
        os << r.m << ',' << r.mean_auc << ',' << r.mean_acc << '\n';
    }
    return os.str();
}

inline std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw EmptyInput("sweep table has no header");
    std::vector<SweepRow> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (f.size() != 3) throw BadRow("sweep table row with " + std::to_string(f.size()) + " fields");
        SweepRow r;
        r.m = static_cast<size_t>(std::stoull(f[0]));
        r.mean_auc = std::stod(f[1]);
        r.mean_acc = std::stod(f[2]);
        rows.push_back(r);
    }
    return rows;
}

inline std::string metrics_csv(const std::vector<FoldResult>& folds, const CrossvalResult& cv) {
    std::ostringstream os;
    os << "fold,tp,tn,fp,fn,acc,se,sp,pr,f1,auc\n";
    os.precision(9);
    for (const auto& f : folds) {
        os << f.fold << ',' << f.cm.tp << ',' << f.cm.tn << ',' << f.cm.fp << ',' << f.cm.fn << ','
           << f.metrics.acc << ',' << f.metrics.se << ',' << f.metrics.sp << ',' << f.metrics.pr
           << ',' << f.metrics.f1 << ',' << f.auc_value << '\n';
    }
    os << "mean," << cv.mean_cm.tp << ',' << cv.mean_cm.tn << ',' << cv.mean_cm.fp << ','
       << cv.mean_cm.fn << ',' << cv.mean_metrics.acc << ',' << cv.mean_metrics.se << ','
       << cv.mean_metrics.sp << ',' << cv.mean_metrics.pr << ',' << cv.mean_metrics.f1 << ','
       << cv.mean_auc << '\n';
    return os.str();
}

}  // namespace coughnet
