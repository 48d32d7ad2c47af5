#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "coughnet/audio.hpp"
#include "coughnet/augment.hpp"
#include "coughnet/csvio.hpp"
#include "coughnet/dataset.hpp"
#include "coughnet/errors.hpp"
#include "coughnet/features.hpp"
#include "coughnet/metrics.hpp"
#include "coughnet/resnet.hpp"
#include "coughnet/trainer.hpp"

namespace {

struct FeatureFlags {
    size_t mel_bands = 32;
    int sample_rate = 16000;
    double clip_seconds = 5.0;
    size_t fft = 1024;
    size_t hop = 512;
    double vad_threshold = 0.6;
    double f_low = 32.0;
    double f_high = 8000.0;
    std::string cache;
    size_t jobs = 1;

    void attach(CLI::App* cmd) {
        cmd->add_option("--mel-bands", mel_bands, "mel band count M")->capture_default_str();
        cmd->add_option("--sample-rate", sample_rate, "working sample rate in Hz")
            ->capture_default_str();
        cmd->add_option("--clip-seconds", clip_seconds, "fixed clip length in seconds")
            ->capture_default_str();
        cmd->add_option("--fft", fft, "FFT window size in samples")->capture_default_str();
        cmd->add_option("--hop", hop, "hop length in samples")->capture_default_str();
        cmd->add_option("--vad-threshold", vad_threshold, "activity probability threshold")
            ->capture_default_str();
        cmd->add_option("--f-low", f_low, "filterbank low edge in Hz")->capture_default_str();
        cmd->add_option("--f-high", f_high, "filterbank high edge in Hz")->capture_default_str();
        cmd->add_option("--cache", cache, "feature cache directory");
        cmd->add_option("--jobs", jobs, "worker threads for feature extraction, 1 is bitwise deterministic")
            ->capture_default_str();
    }

    coughnet::PipelineConfig pipeline() const {
        coughnet::PipelineConfig p;
        p.features.n_mels = mel_bands;
        p.features.sample_rate_hz = sample_rate;
        p.features.n_fft = fft;
        p.features.hop = hop;
        p.features.f_low_hz = f_low;
        p.features.f_high_hz = f_high;
        p.preprocess.clip_seconds = clip_seconds;
        p.preprocess.vad_threshold = vad_threshold;
        p.cache_dir = cache;
        p.jobs = jobs;
        p.warn = [](const std::string& m) { std::cerr << "warning: " << m << "\n"; };
        return p;
    }
};

struct TrainFlags {
    double lr = 0.0001;
    size_t batch = 20;
    size_t epochs = 25;
    double val_fraction = 0.1;
    bool tiny = false;
    double augment_ratio = 0.0;
    bool class_weights = false;
    uint64_t seed = 0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
        cmd->add_option("--batch", batch, "minibatch size")->capture_default_str();
        cmd->add_option("--epochs", epochs, "training epochs")->capture_default_str();
        cmd->add_option("--val-fraction", val_fraction, "held-out validation fraction")
            ->capture_default_str();
        cmd->add_flag("--tiny", tiny, "1/8 width, one block per stage, for fast runs");
        cmd->add_option("--augment-ratio", augment_ratio,
                        "minority expansion target ratio, 0 disables")
            ->capture_default_str();
        cmd->add_flag("--class-weights", class_weights, "inverse-frequency loss weighting");
        cmd->add_option("--seed", seed, "RNG seed")->required();
    }

    coughnet::TrainConfig config() const {
        coughnet::TrainConfig t;
        t.lr = lr;
        t.batch_size = batch;
        t.epochs = epochs;
        t.val_fraction = val_fraction;
        t.seed = seed;
        t.augment_ratio = augment_ratio;
        t.class_weighted_loss = class_weights;
        if (tiny) {
            t.width_factor = 1.0 / 8.0;
            t.stage_depths = {1, 1, 1, 1};
        }
        return t;
    }
};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(9);
    os << v;
    return os.str();
}

void write_crossval_outputs(const coughnet::CrossvalResult& cv, const std::string& out_dir) {
    for (const auto& fr : cv.folds) {
        coughnet::atomic_write_file(out_dir + "/fold" + std::to_string(fr.fold) + ".cghn",
                                    fr.checkpoint);
        coughnet::atomic_write_file(out_dir + "/fold" + std::to_string(fr.fold) + "_epochs.csv",
                                    coughnet::epoch_log_csv(fr.log));
    }
    coughnet::atomic_write_file(out_dir + "/metrics.csv", coughnet::metrics_csv(cv.folds, cv));
}

int run(int argc, char** argv) {
    CLI::App app{"cough sound screening toolkit"};
    app.require_subcommand(1);

    // features
    auto* c_feat = app.add_subcommand("features", "extract log-mel spectrograms for a manifest");
    std::string feat_manifest, feat_out;
    bool feat_csv = false;
    FeatureFlags feat_flags;
    c_feat->add_option("--manifest", feat_manifest, "manifest CSV")->required();
    c_feat->add_option("--out", feat_out, "output directory")->required();
    c_feat->add_flag("--csv", feat_csv, "also write plain CSV next to each binary file");
    feat_flags.attach(c_feat);
    c_feat->callback([&] {
        const auto records = coughnet::parse_manifest(feat_manifest);
        const coughnet::PipelineConfig pipe = feat_flags.pipeline();
        std::filesystem::create_directories(feat_out);
        for (const auto& r : records) {
            const coughnet::Spectrogram spec = coughnet::compute_features(r.audio_path, pipe);
            const std::string stem = std::filesystem::path(r.audio_path).stem().string();
            coughnet::save_spectrogram(feat_out + "/" + stem + ".mels", spec);
            if (feat_csv) {
                coughnet::atomic_write_file(feat_out + "/" + stem + ".csv",
                                            coughnet::spectrogram_csv(spec));
            }
        }
        std::cout << "wrote," << records.size() << "\n";
    });

    // augment
    auto* c_aug = app.add_subcommand("augment", "expand the minority class with augmented copies");
    std::string aug_manifest, aug_out;
    double aug_ratio = 0.5;
    uint64_t aug_seed = 0;
    int aug_rate = 16000;
    c_aug->add_option("--manifest", aug_manifest, "manifest CSV")->required();
    c_aug->add_option("--out", aug_out, "output directory")->required();
    c_aug->add_option("--ratio", aug_ratio, "target minority/majority ratio")
        ->capture_default_str();
    c_aug->add_option("--sample-rate", aug_rate, "working sample rate in Hz")
        ->capture_default_str();
    c_aug->add_option("--seed", aug_seed, "RNG seed")->required();
    c_aug->callback([&] {
        if (aug_ratio <= 0.0 || aug_ratio > 1.0) {
            throw coughnet::InvalidConfig("ratio must lie in (0,1]");
        }
        auto records = coughnet::parse_manifest(aug_manifest);
        std::vector<int> labels;
        for (const auto& r : records) labels.push_back(r.label);
        const auto plan = coughnet::plan_minority_expansion(labels, aug_ratio, aug_seed);
        std::filesystem::create_directories(aug_out);
        size_t idx = 0;
        for (const auto& [src, spec] : plan) {
            coughnet::AudioClip clip = coughnet::load_wav(records[src].audio_path);
            clip = coughnet::resample(clip, aug_rate);
            clip = coughnet::apply(clip, spec);
            coughnet::SampleRecord r = records[src];
            r.audio_path = aug_out + "/aug_" + std::to_string(idx) + "_" +
                           coughnet::augment_kind_name(spec.kind) + ".wav";
            coughnet::save_wav16(clip, r.audio_path);
            records.push_back(std::move(r));
            ++idx;
        }
        coughnet::atomic_write_file(aug_out + "/manifest.csv",
                                    coughnet::write_manifest_csv(records));
        std::cout << "augmented," << plan.size() << "\n";
    });

    // folds
    auto* c_folds = app.add_subcommand("folds", "write a stratified fold plan");
    std::string folds_manifest, folds_out;
    size_t folds_k = 5;
    uint64_t folds_seed = 0;
    c_folds->add_option("--manifest", folds_manifest, "manifest CSV")->required();
    c_folds->add_option("--out", folds_out, "fold plan CSV path")->required();
    c_folds->add_option("--folds", folds_k, "fold count")->capture_default_str();
    c_folds->add_option("--seed", folds_seed, "RNG seed")->required();
    c_folds->callback([&] {
        const auto records = coughnet::parse_manifest(folds_manifest);
        const coughnet::FoldPlan plan = coughnet::make_folds(records, folds_k, folds_seed);
        coughnet::atomic_write_file(folds_out, coughnet::write_fold_plan_csv(plan));
        for (size_t f = 0; f < plan.num_folds; ++f) {
            std::cout << "fold" << f << "," << plan.fold_indices(f).size() << "\n";
        }
    });

    // train
    auto* c_train = app.add_subcommand("train", "train one model with a held-out validation split");
    std::string train_manifest, train_out;
    FeatureFlags train_feat;
    TrainFlags train_flags;
    c_train->add_option("--manifest", train_manifest, "manifest CSV")->required();
    c_train->add_option("--out", train_out, "output directory")->required();
    train_feat.attach(c_train);
    train_flags.attach(c_train);
    c_train->callback([&] {
        const auto records = coughnet::parse_manifest(train_manifest);
        const coughnet::TrainResult result =
            coughnet::train(records, train_feat.pipeline(), train_flags.config());
        std::filesystem::create_directories(train_out);
        coughnet::atomic_write_file(train_out + "/final.cghn", result.final_checkpoint);
        coughnet::atomic_write_file(train_out + "/best.cghn", result.best_checkpoint);
        coughnet::atomic_write_file(train_out + "/epochs.csv", coughnet::epoch_log_csv(result.log));
        std::cout << "best_epoch," << result.best_epoch << "\n";
        std::cout << "best_val_auc," << fmt(result.best_val_auc) << "\n";
    });

    // crossval
    auto* c_cv = app.add_subcommand("crossval", "k-fold cross-validation");
    std::string cv_manifest, cv_external, cv_out;
    size_t cv_k = 5;
    FeatureFlags cv_feat;
    TrainFlags cv_flags;
    c_cv->add_option("--manifest", cv_manifest, "primary manifest CSV")->required();
    c_cv->add_option("--external", cv_external,
                     "external manifest CSV, filtered and used for training only");
    c_cv->add_option("--out", cv_out, "output directory")->required();
    c_cv->add_option("--folds", cv_k, "fold count")->capture_default_str();
    cv_feat.attach(c_cv);
    cv_flags.attach(c_cv);
    c_cv->callback([&] {
        const auto records = coughnet::parse_manifest(cv_manifest);
        std::vector<coughnet::SampleRecord> external;
        if (!cv_external.empty()) {
            external = coughnet::filter_external(coughnet::parse_manifest(cv_external));
        }
        const coughnet::FoldPlan plan = coughnet::make_folds(records, cv_k, cv_flags.seed);
        const coughnet::CrossvalResult cv = coughnet::crossvalidate(
            records, external, plan, cv_feat.pipeline(), cv_flags.config());
        std::filesystem::create_directories(cv_out);
        coughnet::atomic_write_file(cv_out + "/plan.csv", coughnet::write_fold_plan_csv(plan));
        write_crossval_outputs(cv, cv_out);
        std::cout << "mean_auc," << fmt(cv.mean_auc) << "\n";
        std::cout << "mean_acc," << fmt(cv.mean_metrics.acc) << "\n";
    });

    // sweep
    auto* c_sweep = app.add_subcommand("sweep", "cross-validate across mel resolutions");
    std::string sweep_manifest, sweep_external, sweep_out;
    std::vector<size_t> sweep_mels_values = {32, 64, 128, 256, 512};
    size_t sweep_k = 5;
    FeatureFlags sweep_feat;
    TrainFlags sweep_flags;
    c_sweep->add_option("--manifest", sweep_manifest, "primary manifest CSV")->required();
    c_sweep->add_option("--external", sweep_external,
                        "external manifest CSV, filtered and used for training only");
    c_sweep->add_option("--out", sweep_out, "output directory")->required();
    c_sweep->add_option("--mels", sweep_mels_values, "mel band counts to sweep")
        ->delimiter(',')
        ->capture_default_str();
    c_sweep->add_option("--folds", sweep_k, "fold count")->capture_default_str();
    sweep_feat.attach(c_sweep);
    sweep_flags.attach(c_sweep);
    c_sweep->callback([&] {
        const auto records = coughnet::parse_manifest(sweep_manifest);
        std::vector<coughnet::SampleRecord> external;
        if (!sweep_external.empty()) {
            external = coughnet::filter_external(coughnet::parse_manifest(sweep_external));
        }
        const coughnet::FoldPlan plan = coughnet::make_folds(records, sweep_k, sweep_flags.seed);
        const coughnet::SweepResult res = coughnet::sweep_mels(
            records, external, sweep_mels_values, plan, sweep_feat.pipeline(),
            sweep_flags.config());
        std::filesystem::create_directories(sweep_out);
        const std::string table = coughnet::sweep_csv(res.rows);
        coughnet::atomic_write_file(sweep_out + "/sweep.csv", table);
        for (size_t i = 0; i < res.rows.size(); ++i) {
            coughnet::atomic_write_file(
                sweep_out + "/roc_m" + std::to_string(res.rows[i].m) + ".csv",
                coughnet::roc_csv(res.pooled_curves[i]));
        }
        std::cout << table;
    });

    // eval
    auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint against a labeled manifest");
    std::string eval_model, eval_manifest, eval_out, eval_cache;
    double eval_threshold = 0.5, eval_vad = 0.6, eval_clip = 5.0;
    size_t eval_jobs = 1;
    c_eval->add_option("--model", eval_model, "checkpoint path")->required();
    c_eval->add_option("--manifest", eval_manifest, "manifest CSV")->required();
    c_eval->add_option("--out", eval_out, "optional output directory for reports");
    c_eval->add_option("--threshold", eval_threshold, "decision threshold")
        ->capture_default_str();
    c_eval->add_option("--vad-threshold", eval_vad, "activity probability threshold")
        ->capture_default_str();
    c_eval->add_option("--clip-seconds", eval_clip, "fixed clip length in seconds")
        ->capture_default_str();
    c_eval->add_option("--cache", eval_cache, "feature cache directory");
    c_eval->add_option("--jobs", eval_jobs, "worker threads for feature extraction")
        ->capture_default_str();
    c_eval->callback([&] {
        const coughnet::LoadedCheckpoint ckpt = coughnet::load_checkpoint(eval_model);
        const auto records = coughnet::parse_manifest(eval_manifest);
        coughnet::PipelineConfig pipe;
        pipe.features = ckpt.features;
        pipe.preprocess.vad_threshold = eval_vad;
        pipe.preprocess.clip_seconds = eval_clip;
        pipe.cache_dir = eval_cache;
        pipe.jobs = eval_jobs;
        pipe.warn = [](const std::string& m) { std::cerr << "warning: " << m << "\n"; };
        const coughnet::EvalResult ev = coughnet::evaluate(ckpt, records, pipe, eval_threshold);
        std::cout << "tp," << fmt(ev.cm.tp) << "\ntn," << fmt(ev.cm.tn) << "\nfp," << fmt(ev.cm.fp)
                  << "\nfn," << fmt(ev.cm.fn) << "\n";
        std::cout << "acc," << fmt(ev.metrics.acc) << "\nse," << fmt(ev.metrics.se) << "\nsp,"
                  << fmt(ev.metrics.sp) << "\npr," << fmt(ev.metrics.pr) << "\nf1,"
                  << fmt(ev.metrics.f1) << "\n";
        std::cout << "auc," << fmt(ev.auc_value) << "\n";
        if (!eval_out.empty()) {
            std::filesystem::create_directories(eval_out);
            coughnet::atomic_write_file(eval_out + "/roc.csv", coughnet::roc_csv(ev.curve));
            std::ostringstream scores;
            scores.precision(9);
            scores << "path,score,label\n";
            for (size_t i = 0; i < ev.scores.size(); ++i) {
                scores << coughnet::csv_escape(records[i].audio_path) << ',' << ev.scores[i] << ','
                       << ev.labels[i] << '\n';
            }
            coughnet::atomic_write_file(eval_out + "/scores.csv", scores.str());
        }
    });

    // predict
    auto* c_pred = app.add_subcommand("predict", "score WAV files with a trained checkpoint");
    std::string pred_model;
    std::vector<std::string> pred_wavs;
    double pred_threshold = 0.5, pred_vad = 0.6, pred_clip = 5.0;
    c_pred->add_option("--model", pred_model, "checkpoint path")->required();
    c_pred->add_option("--wav", pred_wavs, "WAV file, repeatable")->required();
    c_pred->add_option("--threshold", pred_threshold, "decision threshold")
        ->capture_default_str();
    c_pred->add_option("--vad-threshold", pred_vad, "activity probability threshold")
        ->capture_default_str();
    c_pred->add_option("--clip-seconds", pred_clip, "fixed clip length in seconds")
        ->capture_default_str();
    c_pred->callback([&] {
        const coughnet::LoadedCheckpoint ckpt = coughnet::load_checkpoint(pred_model);
        coughnet::ResNet<float> model = coughnet::restore_model(ckpt);
        coughnet::PipelineConfig pipe;
        pipe.features = ckpt.features;
        pipe.preprocess.vad_threshold = pred_vad;
        pipe.preprocess.clip_seconds = pred_clip;
        pipe.warn = [](const std::string& m) { std::cerr << "warning: " << m << "\n"; };
        std::cout << "path,probability,predicted\n";
        for (const auto& wav : pred_wavs) {
            const coughnet::Spectrogram spec = coughnet::compute_features(wav, pipe);
            const coughnet::Tensor<float> batch =
                coughnet::detail::assemble_batch({spec}, {0}, true);
            const coughnet::Tensor<float> probs = model.forward(batch, false);
            const double p = probs.at2(0, 1);
            std::cout << coughnet::csv_escape(wav) << ',' << fmt(p) << ','
                      << (p >= pred_threshold ? 1 : 0) << "\n";
        }
    });

    // roc
    auto* c_roc = app.add_subcommand("roc", "export ROC points from a score CSV");
    std::string roc_scores, roc_out;
    c_roc->add_option("--scores", roc_scores, "CSV with score,label columns")->required();
    c_roc->add_option("--out", roc_out, "ROC CSV output path")->required();
    c_roc->callback([&] {
        const std::string text = coughnet::read_file_text(roc_scores);
        std::istringstream in(text);
        std::string line;
        if (!std::getline(in, line)) throw coughnet::EmptyInput("score file has no header");
        const auto header = coughnet::split_csv_line(line);
        size_t score_col = 0, label_col = 1;
        for (size_t i = 0; i < header.size(); ++i) {
            if (header[i] == "score") score_col = i;
            if (header[i] == "label") label_col = i;
        }
        std::vector<double> scores;
        std::vector<int> labels;
        while (std::getline(in, line)) {
            if (line.empty() || line == "\r") continue;
            const auto f = coughnet::split_csv_line(line);
            if (f.size() <= std::max(score_col, label_col)) {
                throw coughnet::BadRow("score row with " + std::to_string(f.size()) + " fields");
            }
            scores.push_back(std::stod(f[score_col]));
            labels.push_back(std::stoi(f[label_col]));
        }
        const coughnet::RocCurve curve = coughnet::roc(scores, labels);
        coughnet::atomic_write_file(roc_out, coughnet::roc_csv(curve));
        std::cout << "auc," << fmt(coughnet::auc(curve)) << "\n";
    });

    // config
    auto* c_cfg = app.add_subcommand("config", "dump the pipeline defaults as CSV");
    c_cfg->callback([&] {
        std::cout << "key,value\n"
                  << "lr,0.0001\n"
                  << "batch,20\n"
                  << "epochs,25\n"
                  << "mel-bands,32\n"
                  << "sample-rate,16000\n"
                  << "clip-seconds,5\n"
                  << "fft,1024\n"
                  << "hop,512\n"
                  << "vad-threshold,0.6\n"
                  << "folds,5\n"
                  << "val-fraction,0.1\n"
                  << "threshold,0.5\n"
                  << "f-low,32\n"
                  << "f-high,8000\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const coughnet::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const coughnet::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
