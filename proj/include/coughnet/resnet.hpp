#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "coughnet/csvio.hpp"
#include "coughnet/errors.hpp"
#include "coughnet/features.hpp"
#include "coughnet/nn.hpp"
#include "coughnet/rng.hpp"
#include "coughnet/tensor.hpp"

namespace coughnet {

struct ResNetConfig {
    size_t input_mels = 32;
    size_t input_frames = 155;
    std::array<size_t, 4> stage_depths = {3, 4, 6, 3};
    size_t base_width = 64;
    double width_factor = 1.0;  // test builds use 1/8
    size_t num_classes = 2;

    void validate() const {
        if (input_mels == 0 || input_frames == 0) throw InvalidConfig("input dims must be positive");
        if (base_width == 0) throw InvalidConfig("base width must be positive");
        if (width_factor <= 0.0 || width_factor > 1.0) {
            throw InvalidConfig("width factor must be in (0, 1]");
        }
        if (num_classes < 2) throw InvalidConfig("need at least two classes");
        bool any = false;
        for (size_t d : stage_depths) any = any || d > 0;
        if (!any) throw InvalidConfig("at least one stage must have a block");
    }

    size_t channels(size_t base) const {
        return std::max<size_t>(1, static_cast<size_t>(std::llround(base * width_factor)));
    }

    size_t stage_inner(size_t i) const { return channels(base_width << i); }
    size_t stage_out(size_t i) const { return channels(4 * (base_width << i)); }

    // main-path convolutions plus the classifier; projections do not count
    size_t weighted_layer_count() const {
        size_t n = 2;  // stem conv + fc
        for (size_t d : stage_depths) n += 3 * d;
        return n;
    }
};

struct StageShapes {
    std::array<size_t, 2> stem, pool;
    std::array<std::array<size_t, 2>, 4> stages;
    size_t head = 0;
};

inline StageShapes compute_stage_shapes(const ResNetConfig& cfg) {
    cfg.validate();
    auto conv = [](size_t in, size_t k, size_t s, size_t p) { return (in + 2 * p - k) / s + 1; };
    StageShapes out;
    size_t h = conv(cfg.input_mels, 7, 2, 3), w = conv(cfg.input_frames, 7, 2, 3);
    out.stem = {h, w};
    h = conv(h, 3, 2, 1);
    w = conv(w, 3, 2, 1);
    out.pool = {h, w};
    size_t last_stage_with_blocks = 0;
    for (size_t i = 0; i < 4; ++i) {
        if (i > 0 && cfg.stage_depths[i] > 0) {
            h = conv(h, 3, 2, 1);
            w = conv(w, 3, 2, 1);
        }
        out.stages[i] = {h, w};
        if (cfg.stage_depths[i] > 0) last_stage_with_blocks = i;
    }
    out.head = cfg.stage_out(last_stage_with_blocks);
    return out;
}

inline size_t parameter_count(const ResNetConfig& cfg) {
    cfg.validate();
    size_t total = 0;
    const size_t stem = cfg.channels(cfg.base_width);
    total += stem * 1 * 7 * 7;  // stem conv, single input channel
    total += 2 * stem;          // stem bn
    size_t prev = stem;
    for (size_t i = 0; i < 4; ++i) {
        const size_t inner = cfg.stage_inner(i);
        const size_t out = cfg.stage_out(i);
        for (size_t b = 0; b < cfg.stage_depths[i]; ++b) {
            const size_t in_ch = (b == 0) ? prev : out;
            total += inner * in_ch;        // conv1 1x1
            total += 2 * inner;            // bn1
            total += inner * inner * 9;    // conv2 3x3
            total += 2 * inner;            // bn2
            total += out * inner;          // conv3 1x1
            total += 2 * out;              // bn3
            if (b == 0) {
                total += out * in_ch;      // projection 1x1
                total += 2 * out;          // projection bn
            }
        }
        if (cfg.stage_depths[i] > 0) prev = out;
    }
    total += cfg.num_classes * prev + cfg.num_classes;  // fc
    return total;
}

namespace detail {

template <typename T>
struct Bottleneck {
    Conv2d<T> conv1, conv2, conv3;
    BatchNorm2d<T> bn1, bn2, bn3;
    Relu<T> relu1, relu2;
    std::optional<Conv2d<T>> proj;
    std::optional<BatchNorm2d<T>> proj_bn;

    Bottleneck(size_t in_ch, size_t inner, size_t out_ch, size_t stride, Rng& rng)
        : conv1(in_ch, inner, 1, 1, 0, rng),
          conv2(inner, inner, 3, stride, 1, rng),
          conv3(inner, out_ch, 1, 1, 0, rng),
          bn1(inner),
          bn2(inner),
          bn3(out_ch) {
        if (stride != 1 || in_ch != out_ch) {
            proj.emplace(in_ch, out_ch, 1, stride, 0, rng);
            proj_bn.emplace(out_ch);
        }
    }

    Tensor<T> forward(const Tensor<T>& x, bool train) {
        Tensor<T> main = relu1.forward(bn1.forward(conv1.forward(x), train));
        main = relu2.forward(bn2.forward(conv2.forward(main), train));
        main = bn3.forward(conv3.forward(main), train);
        Tensor<T> shortcut = proj ? proj_bn->forward(proj->forward(x), train) : x;
        if (!main.same_shape(shortcut)) throw ShapeMismatch("bottleneck: branch shapes differ");
        out_ = Tensor<T>(main.shape);
        for (size_t i = 0; i < main.data.size(); ++i) {
            out_.data[i] = std::max(main.data[i] + shortcut.data[i], T(0));
        }
        has_input_ = true;
        return out_;
    }

    Tensor<T> backward(const Tensor<T>& gout) {
        if (!has_input_) throw GraphNotBuilt("bottleneck backward before forward");
        Tensor<T> g(gout.shape);
        for (size_t i = 0; i < g.data.size(); ++i) {
            g.data[i] = out_.data[i] > T(0) ? gout.data[i] : T(0);
        }
        Tensor<T> gm = conv3.backward(bn3.backward(g));
        gm = conv2.backward(bn2.backward(relu2.backward(gm)));
        gm = conv1.backward(bn1.backward(relu1.backward(gm)));
        if (proj) {
            const Tensor<T> gs = proj->backward(proj_bn->backward(g));
            for (size_t i = 0; i < gm.data.size(); ++i) gm.data[i] += gs.data[i];
        } else {
            for (size_t i = 0; i < gm.data.size(); ++i) gm.data[i] += g.data[i];
        }
        return gm;
    }

    void collect(const std::string& prefix, bool trainable_only,
                 std::vector<std::pair<std::string, Tensor<T>*>>& out) {
        auto bn_tensors = [&](const std::string& name, BatchNorm2d<T>& bn) {
            out.emplace_back(name + ".gamma", &bn.gamma);
            out.emplace_back(name + ".beta", &bn.beta);
            if (!trainable_only) {
                out.emplace_back(name + ".rm", &bn.running_mean);
                out.emplace_back(name + ".rv", &bn.running_var);
            }
        };
        out.emplace_back(prefix + ".conv1.w", &conv1.weight);
        bn_tensors(prefix + ".bn1", bn1);
        out.emplace_back(prefix + ".conv2.w", &conv2.weight);
        bn_tensors(prefix + ".bn2", bn2);
        out.emplace_back(prefix + ".conv3.w", &conv3.weight);
        bn_tensors(prefix + ".bn3", bn3);
        if (proj) {
            out.emplace_back(prefix + ".proj.w", &proj->weight);
            bn_tensors(prefix + ".proj_bn", *proj_bn);
        }
    }

private:
    Tensor<T> out_;
    bool has_input_ = false;
};

}  // namespace detail

// Bottleneck residual network over single-channel M x K inputs with a
// two-way softmax head.
template <typename T>
class ResNet {
public:
    ResNet(const ResNetConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        Rng rng(seed);
        const size_t stem = cfg.channels(cfg.base_width);
        stem_conv_ = std::make_unique<Conv2d<T>>(1, stem, 7, 2, 3, rng);
        stem_bn_ = std::make_unique<BatchNorm2d<T>>(stem);
        pool_ = std::make_unique<MaxPool2d<T>>(3, 2, 1);

        size_t prev = stem;
        for (size_t i = 0; i < 4; ++i) {
            const size_t inner = cfg.stage_inner(i);
            const size_t out = cfg.stage_out(i);
            for (size_t b = 0; b < cfg.stage_depths[i]; ++b) {
                const size_t stride = (b == 0 && i > 0) ? 2 : 1;
                const size_t in_ch = (b == 0) ? prev : out;
                stages_[i].push_back(
                    std::make_unique<detail::Bottleneck<T>>(in_ch, inner, out, stride, rng));
            }
            if (cfg.stage_depths[i] > 0) prev = out;
        }
        fc_ = std::make_unique<Dense<T>>(prev, cfg.num_classes, rng);
        // Small head init keeps the initial softmax near uniform; Adam's
        // normalized steps are insensitive to the gradient scale.
        for (auto& w : fc_->weight.data) w = static_cast<T>(1e-3 * rng.gaussian());
    }

    // probabilities, one row per batch element
    Tensor<T> forward(const Tensor<T>& x, bool train) {
        require_rank(x, 4, "network input");
        if (x.dim(1) != 1 || x.dim(2) != cfg_.input_mels || x.dim(3) != cfg_.input_frames) {
            throw ShapeMismatch("network input " + shape_string(x.shape) + ", expected (B,1," +
                                std::to_string(cfg_.input_mels) + "," +
                                std::to_string(cfg_.input_frames) + ")");
        }
        observed_shapes_.clear();
        Tensor<T> h = stem_relu_.forward(stem_bn_->forward(stem_conv_->forward(x), train));
        observed_shapes_.push_back({h.dim(2), h.dim(3)});
        h = pool_->forward(h);
        observed_shapes_.push_back({h.dim(2), h.dim(3)});
        for (auto& stage : stages_) {
            for (auto& block : stage) h = block->forward(h, train);
            observed_shapes_.push_back({h.dim(2), h.dim(3)});
        }
        h = gap_.forward(h);
        head_width_ = h.dim(1);
        h = fc_->forward(h);
        return softmax_.forward(h);
    }

    // gradient of the loss with respect to the output probabilities
    void backward(const Tensor<T>& gprobs) {
        Tensor<T> g = softmax_.backward(gprobs);
        g = fc_->backward(g);
        g = gap_.backward(g);
        for (size_t i = 4; i-- > 0;) {
            auto& stage = stages_[i];
            for (size_t b = stage.size(); b-- > 0;) g = stage[b]->backward(g);
        }
        g = pool_->backward(g);
        g = stem_conv_->backward(stem_bn_->backward(stem_relu_.backward(g)));
    }

    std::vector<Tensor<T>*> parameters() {
        std::vector<Tensor<T>*> out;
        for (auto& [name, t] : named_tensors(true)) out.push_back(t);
        return out;
    }

    // trainable parameters, plus batch-norm running stats unless trainable_only
    std::vector<std::pair<std::string, Tensor<T>*>> named_tensors(bool trainable_only = false) {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        out.emplace_back("stem.conv.w", &stem_conv_->weight);
        out.emplace_back("stem.bn.gamma", &stem_bn_->gamma);
        out.emplace_back("stem.bn.beta", &stem_bn_->beta);
        if (!trainable_only) {
            out.emplace_back("stem.bn.rm", &stem_bn_->running_mean);
            out.emplace_back("stem.bn.rv", &stem_bn_->running_var);
        }
        for (size_t i = 0; i < 4; ++i) {
            for (size_t b = 0; b < stages_[i].size(); ++b) {
                stages_[i][b]->collect("s" + std::to_string(i + 1) + ".b" + std::to_string(b),
                                       trainable_only, out);
            }
        }
        out.emplace_back("fc.w", &fc_->weight);
        out.emplace_back("fc.b", &fc_->bias);
        return out;
    }

    const ResNetConfig& config() const { return cfg_; }
    size_t weighted_layer_count() const { return cfg_.weighted_layer_count(); }

    // spatial (H,W) after stem, pool, and each stage of the last forward pass
    const std::vector<std::array<size_t, 2>>& observed_shapes() const { return observed_shapes_; }
    size_t head_width() const { return head_width_; }

private:
    ResNetConfig cfg_;
    std::unique_ptr<Conv2d<T>> stem_conv_;
    std::unique_ptr<BatchNorm2d<T>> stem_bn_;
    Relu<T> stem_relu_;
    std::unique_ptr<MaxPool2d<T>> pool_;
    std::array<std::vector<std::unique_ptr<detail::Bottleneck<T>>>, 4> stages_;
    GlobalAvgPool<T> gap_;
    std::unique_ptr<Dense<T>> fc_;
    Softmax<T> softmax_;
    std::vector<std::array<size_t, 2>> observed_shapes_;
    size_t head_width_ = 0;
};

// --- checkpoint serialization ------------------------------------------------

namespace detail {

inline void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

inline uint64_t get_u64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

inline void put_f64(std::vector<uint8_t>& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

inline double get_f64(const uint8_t* p) {
    const uint64_t bits = get_u64(p);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

class ByteReader {
public:
    explicit ByteReader(const std::vector<uint8_t>& bytes) : bytes_(bytes) {}

    const uint8_t* take(size_t n) {
        if (pos_ + n > bytes_.size()) throw TruncatedFile("checkpoint ends early");
        const uint8_t* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    uint32_t u32() { return get_u32(take(4)); }
    uint64_t u64() { return get_u64(take(8)); }
    double f64() { return get_f64(take(8)); }
    float f32() { return get_f32(take(4)); }
    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::vector<uint8_t>& bytes_;
    size_t pos_ = 0;
};

}  // namespace detail

struct LoadedCheckpoint {
    ResNetConfig net;
    FeatureConfig features;
    uint32_t epoch = 0;
    uint64_t seed = 0;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

inline std::vector<uint8_t> encode_checkpoint(ResNet<float>& model, const FeatureConfig& feat,
                                              uint32_t epoch, uint64_t seed) {
    std::vector<uint8_t> out;
    out.insert(out.end(), {'C', 'G', 'H', 'N'});
    detail::put_u32(out, 1u);

    const ResNetConfig& cfg = model.config();
    detail::put_u32(out, static_cast<uint32_t>(cfg.input_mels));
    detail::put_u32(out, static_cast<uint32_t>(cfg.input_frames));
    for (size_t d : cfg.stage_depths) detail::put_u32(out, static_cast<uint32_t>(d));
    detail::put_u32(out, static_cast<uint32_t>(cfg.base_width));
    detail::put_f64(out, cfg.width_factor);
    detail::put_u32(out, static_cast<uint32_t>(cfg.num_classes));

    detail::put_u32(out, static_cast<uint32_t>(feat.n_fft));
    detail::put_u32(out, static_cast<uint32_t>(feat.hop));
    detail::put_u32(out, static_cast<uint32_t>(feat.n_mels));
    detail::put_f64(out, feat.f_low_hz);
    detail::put_f64(out, feat.f_high_hz);
    detail::put_u32(out, static_cast<uint32_t>(feat.sample_rate_hz));
    detail::put_f64(out, feat.log_floor);

    detail::put_u32(out, epoch);
    detail::put_u64(out, seed);

    const auto tensors = model.named_tensors(false);
    detail::put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::put_u32(out, static_cast<uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        detail::put_u32(out, static_cast<uint32_t>(t->shape.size()));
        for (size_t d : t->shape) detail::put_u32(out, static_cast<uint32_t>(d));
        for (float v : t->data) detail::put_f32(out, v);
    }
    return out;
}

inline LoadedCheckpoint decode_checkpoint(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 8) throw TruncatedFile("checkpoint too small");
    if (std::memcmp(bytes.data(), "CGHN", 4) != 0) throw BadMagic("not a checkpoint file");
    detail::ByteReader r(bytes);
    r.take(4);
    const uint32_t version = r.u32();
    if (version != 1) throw VersionMismatch("unsupported checkpoint version");

    LoadedCheckpoint ckpt;
    ckpt.net.input_mels = r.u32();
    ckpt.net.input_frames = r.u32();
    for (size_t i = 0; i < 4; ++i) ckpt.net.stage_depths[i] = r.u32();
    ckpt.net.base_width = r.u32();
    ckpt.net.width_factor = r.f64();
    ckpt.net.num_classes = r.u32();

    ckpt.features.n_fft = r.u32();
    ckpt.features.hop = r.u32();
    ckpt.features.n_mels = r.u32();
    ckpt.features.f_low_hz = r.f64();
    ckpt.features.f_high_hz = r.f64();
    ckpt.features.sample_rate_hz = static_cast<int>(r.u32());
    ckpt.features.log_floor = r.f64();

    ckpt.epoch = r.u32();
    ckpt.seed = r.u64();

    const uint32_t count = r.u32();
    ckpt.tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = r.u32();
        const uint8_t* name_ptr = r.take(name_len);
        std::string name(reinterpret_cast<const char*>(name_ptr), name_len);
        const uint32_t rank = r.u32();
        std::vector<size_t> shape(rank);
        for (uint32_t d = 0; d < rank; ++d) shape[d] = r.u32();
        Tensor<float> t(shape);
        for (float& v : t.data) v = r.f32();
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (!r.done()) throw MalformedContainer("trailing bytes after checkpoint payload");
    return ckpt;
}

// Rebuilds the model and overwrites every stored tensor, running stats included.
inline ResNet<float> restore_model(const LoadedCheckpoint& ckpt) {
    ResNet<float> model(ckpt.net, ckpt.seed);
    auto live = model.named_tensors(false);
    if (live.size() != ckpt.tensors.size()) {
        throw ShapeMismatchOnLoad("checkpoint tensor count does not match architecture");
    }
    for (size_t i = 0; i < live.size(); ++i) {
        const auto& [stored_name, stored] = ckpt.tensors[i];
        auto& [name, t] = live[i];
        if (stored_name != name || stored.shape != t->shape) {
            throw ShapeMismatchOnLoad("checkpoint tensor " + stored_name +
                                      " does not match model tensor " + name);
        }
        t->data = stored.data;
    }
    return model;
}

inline void save_checkpoint(const std::string& path, ResNet<float>& model,
                            const FeatureConfig& feat, uint32_t epoch, uint64_t seed) {
    atomic_write_file(path, encode_checkpoint(model, feat, epoch, seed));
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    return decode_checkpoint(read_file_bytes(path));
}

// Load for inference against a known extraction config; rejects mismatches.
inline ResNet<float> load_model(const std::string& path, const FeatureConfig* expected = nullptr) {
    const LoadedCheckpoint ckpt = load_checkpoint(path);
    if (expected != nullptr && ckpt.net.input_mels != expected->n_mels) {
        throw ShapeMismatchOnLoad("checkpoint expects " + std::to_string(ckpt.net.input_mels) +
                                  " mel bands, extraction config has " +
                                  std::to_string(expected->n_mels));
    }
    return restore_model(ckpt);
}

}  // namespace coughnet
