#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "coughnet/csvio.hpp"
#include "coughnet/errors.hpp"
#include "coughnet/rng.hpp"

namespace coughnet {

enum class Source { dicova, coughvid, other };

struct SampleRecord {
    std::string audio_path;
    int label = 0;  // 1 = covid positive, 0 = negative
    std::string gender;       // "m", "f", or empty
    std::string nationality;  // "I", "O", or empty
    std::optional<double> cough_probability;
    std::optional<bool> covid_status_confirmed;
    Source source = Source::other;
};

namespace detail {

inline std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace detail

// CSV manifest with header. Required columns: audio_path, label (p/n).
// Recognized optional columns: gender, nationality, cough_probability,
// covid_status (1/0/true/false), source (dicova/coughvid/other). Unknown
// columns are ignored.
inline std::vector<SampleRecord> parse_manifest(const std::string& path) {
    const std::string text = read_file_text(path);
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw EmptyManifest("manifest has no header: " + path);

    const std::vector<std::string> header = split_csv_line(line);
    auto col = [&](const std::string& name) -> int {
        for (size_t i = 0; i < header.size(); ++i) {
            if (detail::lower(header[i]) == name) return static_cast<int>(i);
        }
        return -1;
    };
    const int c_path = col("audio_path");
    const int c_label = col("label");
    if (c_path < 0) throw MissingColumn("manifest lacks audio_path column");
    if (c_label < 0) throw MissingColumn("manifest lacks label column");
    const int c_gender = col("gender");
    const int c_nat = col("nationality");
    const int c_prob = col("cough_probability");
    const int c_status = col("covid_status");
    const int c_source = col("source");

    std::vector<SampleRecord> records;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const std::vector<std::string> f = split_csv_line(line);
        auto field = [&](int c) -> std::string {
            return (c >= 0 && static_cast<size_t>(c) < f.size()) ? f[static_cast<size_t>(c)] : "";
        };
        auto bad = [&](const std::string& why) -> BadRow {
            return BadRow("manifest line " + std::to_string(line_no) + ": " + why);
        };

        SampleRecord rec;
        rec.audio_path = field(c_path);
        if (rec.audio_path.empty()) throw bad("empty audio_path");

        const std::string label = detail::lower(field(c_label));
        if (label == "p") rec.label = 1;
        else if (label == "n") rec.label = 0;
        else throw bad("label must be p or n, got '" + field(c_label) + "'");

        rec.gender = field(c_gender);
        rec.nationality = field(c_nat);

        const std::string prob = field(c_prob);
        if (!prob.empty()) {
            try {
                size_t used = 0;
                const double v = std::stod(prob, &used);
                if (used != prob.size()) throw bad("trailing junk in cough_probability");
                if (v < 0.0 || v > 1.0) throw bad("cough_probability outside [0,1]");
                rec.cough_probability = v;
            } catch (const std::invalid_argument&) {
                throw bad("unparsable cough_probability '" + prob + "'");
            } catch (const std::out_of_range&) {
                throw bad("cough_probability out of range");
            }
        }

        const std::string status = detail::lower(field(c_status));
        if (!status.empty()) {
            if (status == "1" || status == "true" || status == "confirmed") {
                rec.covid_status_confirmed = true;
            } else if (status == "0" || status == "false" || status == "unconfirmed") {
                rec.covid_status_confirmed = false;
            } else {
                throw bad("unrecognized covid_status '" + status + "'");
            }
        }

        const std::string source = detail::lower(field(c_source));
        if (source.empty() || source == "other") rec.source = Source::other;
        else if (source == "dicova") rec.source = Source::dicova;
        else if (source == "coughvid") rec.source = Source::coughvid;
        else throw bad("unrecognized source '" + source + "'");

        records.push_back(std::move(rec));
    }
    if (records.empty()) throw EmptyManifest("manifest has no data rows: " + path);
    return records;
}

inline std::string write_manifest_csv(const std::vector<SampleRecord>& records) {
    std::ostringstream os;
    os << "audio_path,label,gender,nationality,cough_probability,covid_status,source\n";
    os.precision(9);
    for (const auto& r : records) {
        os << csv_escape(r.audio_path) << ',' << (r.label ? 'p' : 'n') << ',' << r.gender << ','
           << r.nationality << ',';
        if (r.cough_probability) os << *r.cough_probability;
        os << ',';
        if (r.covid_status_confirmed) os << (*r.covid_status_confirmed ? '1' : '0');
        os << ',';
        switch (r.source) {
            case Source::dicova: os << "dicova"; break;
            case Source::coughvid: os << "coughvid"; break;
            case Source::other: os << "other"; break;
        }
        os << '\n';
    }
    return os.str();
}

// External-corpus admission rule: confident cough, confirmed status, positive.
inline std::vector<SampleRecord> filter_external(const std::vector<SampleRecord>& records) {
    std::vector<SampleRecord> kept;
    for (const auto& r : records) {
        if (r.label == 1 && r.cough_probability && *r.cough_probability > 0.6 &&
            r.covid_status_confirmed && *r.covid_status_confirmed) {
            kept.push_back(r);
        }
    }
    return kept;
}

struct FoldPlan {
    size_t num_folds = 5;
    std::vector<size_t> assignments;  // record index -> fold id
    uint64_t seed = 0;

    std::vector<size_t> fold_indices(size_t fold) const {
        std::vector<size_t> out;
        for (size_t i = 0; i < assignments.size(); ++i) {
            if (assignments[i] == fold) out.push_back(i);
        }
        return out;
    }

    std::vector<size_t> out_of_fold_indices(size_t fold) const {
        std::vector<size_t> out;
        for (size_t i = 0; i < assignments.size(); ++i) {
            if (assignments[i] != fold) out.push_back(i);
        }
        return out;
    }
};

// Stratified k-fold: each class is shuffled and dealt round-robin, with the
// dealing cursor continuing across classes so fold sizes differ by at most 1.
inline FoldPlan make_folds(const std::vector<SampleRecord>& records, size_t k, uint64_t seed) {
    if (records.empty()) throw EmptyManifest("cannot fold an empty record set");
    if (k == 0) throw ValidationError("fold count must be positive");

    FoldPlan plan;
    plan.num_folds = k;
    plan.seed = seed;
    plan.assignments.assign(records.size(), 0);

    Rng rng(seed);
    size_t cursor = 0;
    for (int label : {1, 0}) {
        std::vector<size_t> idx;
        for (size_t i = 0; i < records.size(); ++i) {
            if (records[i].label == label) idx.push_back(i);
        }
        rng.shuffle(idx);
        for (size_t i : idx) {
            plan.assignments[i] = cursor % k;
            ++cursor;
        }
    }
    return plan;
}

inline std::string write_fold_plan_csv(const FoldPlan& plan) {
    std::ostringstream os;
    os << "index,fold\n";
    for (size_t i = 0; i < plan.assignments.size(); ++i) {
        os << i << ',' << plan.assignments[i] << '\n';
    }
    return os.str();
}

inline FoldPlan parse_fold_plan_csv(const std::string& text, uint64_t seed = 0) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw EmptyManifest("fold plan has no header");
    FoldPlan plan;
    plan.seed = seed;
    size_t line_no = 1;
    size_t max_fold = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (f.size() != 2) throw BadRow("fold plan line " + std::to_string(line_no));
        const size_t index = static_cast<size_t>(std::stoull(f[0]));
        const size_t fold = static_cast<size_t>(std::stoull(f[1]));
        if (index != plan.assignments.size()) {
            throw BadRow("fold plan line " + std::to_string(line_no) + ": indices must be dense");
        }
        plan.assignments.push_back(fold);
        max_fold = std::max(max_fold, fold);
    }
    if (plan.assignments.empty()) throw EmptyManifest("fold plan has no rows");
    plan.num_folds = max_fold + 1;
    return plan;
}

// Stratified train/validation indices; val gets round(fraction * n) per class.
inline std::pair<std::vector<size_t>, std::vector<size_t>> split_train_val_indices(
    const std::vector<int>& labels, double val_fraction, uint64_t seed) {
    if (val_fraction <= 0.0 || val_fraction >= 1.0) {
        throw ValidationError("val fraction must lie in (0,1)");
    }
    std::vector<size_t> pos, neg;
    for (size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
    if (pos.size() < 2 || neg.size() < 2) {
        throw TooFewSamples("need at least 2 records per class to split");
    }

    std::vector<size_t> train, val;
    Rng rng(seed);
    for (std::vector<size_t>* cls : {&pos, &neg}) {
        rng.shuffle(*cls);
        size_t nv = static_cast<size_t>(std::llround(val_fraction * cls->size()));
        nv = std::min(nv, cls->size() - 1);
        for (size_t i = 0; i < cls->size(); ++i) {
            (i < nv ? val : train).push_back((*cls)[i]);
        }
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {train, val};
}

inline std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> split_train_val(
    const std::vector<SampleRecord>& records, double val_fraction, uint64_t seed) {
    std::vector<int> labels;
    labels.reserve(records.size());
    for (const auto& r : records) labels.push_back(r.label);
    const auto [ti, vi] = split_train_val_indices(labels, val_fraction, seed);
    std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> out;
    for (size_t i : ti) out.first.push_back(records[i]);
    for (size_t i : vi) out.second.push_back(records[i]);
    return out;
}

// Per-epoch batches: a fresh seeded permutation each epoch, last batch short.
inline std::vector<std::vector<size_t>> batches(size_t n, size_t batch_size, uint64_t epoch,
                                                uint64_t seed) {
    if (batch_size == 0) throw ValidationError("batch size must be positive");
    std::vector<size_t> perm(n);
    for (size_t i = 0; i < n; ++i) perm[i] = i;
    Rng rng(mix_seed(seed, epoch));
    rng.shuffle(perm);

    std::vector<std::vector<size_t>> out;
    for (size_t start = 0; start < n; start += batch_size) {
        const size_t end = std::min(n, start + batch_size);
        out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

}  // namespace coughnet
