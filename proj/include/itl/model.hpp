#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "itl/data.hpp"
#include "itl/nn.hpp"
#include "itl/rng.hpp"
#include "itl/tensor.hpp"

namespace itl {

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

struct EncoderSpec {
    std::string kind = "tiny_cnn";  // tiny_cnn | res18 | res34 | res50 | vit_hybrid
    bool pretrained = false;
    std::string weights_path;

    // tiny_cnn: four stride-2 conv stages
    std::vector<int> tiny_widths = {6, 12, 18, 24};
    // vit_hybrid: conv stem to 1/16 tokens, then transformer blocks
    int vit_embed_dim = 96;
    int vit_depth = 4;
    int vit_heads = 4;
    double vit_mlp_ratio = 2.0;

    void validate() const {
        static const std::set<std::string> kinds{"tiny_cnn", "res18", "res34", "res50",
                                                 "vit_hybrid"};
        require(kinds.count(kind) == 1, "unknown encoder kind: " + kind);
        require(!pretrained || !weights_path.empty(),
                "pretrained encoder requires weights_path");
        require(!(kind == "tiny_cnn" && pretrained), "tiny_cnn is never pretrained");
        require(tiny_widths.size() == 4, "tiny_widths must have 4 entries");
        for (int w : tiny_widths) require(w >= 1, "tiny_widths must be positive");
        require(vit_embed_dim >= 1 && vit_depth >= 1 && vit_heads >= 1 &&
                    vit_embed_dim % vit_heads == 0,
                "invalid vit_hybrid configuration");
    }
};

struct DecoderSpec {
    // channel width after each of the 4 upsample/residual stages
    std::vector<int> widths = {18, 12, 8, 6};

    void validate() const {
        require(widths.size() == 4, "decoder needs exactly 4 stages");
        for (int w : widths) require(w >= 1, "decoder widths must be positive");
    }
};

inline void to_json(nlohmann::json& j, const EncoderSpec& s) {
    j = {{"kind", s.kind},
         {"pretrained", s.pretrained},
         {"weights_path", s.weights_path},
         {"tiny_widths", s.tiny_widths},
         {"vit_embed_dim", s.vit_embed_dim},
         {"vit_depth", s.vit_depth},
         {"vit_heads", s.vit_heads},
         {"vit_mlp_ratio", s.vit_mlp_ratio}};
}
inline void from_json(const nlohmann::json& j, EncoderSpec& s) {
    s.kind = j.value("kind", s.kind);
    s.pretrained = j.value("pretrained", s.pretrained);
    s.weights_path = j.value("weights_path", s.weights_path);
    s.tiny_widths = j.value("tiny_widths", s.tiny_widths);
    s.vit_embed_dim = j.value("vit_embed_dim", s.vit_embed_dim);
    s.vit_depth = j.value("vit_depth", s.vit_depth);
    s.vit_heads = j.value("vit_heads", s.vit_heads);
    s.vit_mlp_ratio = j.value("vit_mlp_ratio", s.vit_mlp_ratio);
}
inline void to_json(nlohmann::json& j, const DecoderSpec& s) { j = {{"widths", s.widths}}; }
inline void from_json(const nlohmann::json& j, DecoderSpec& s) {
    s.widths = j.value("widths", s.widths);
}

// ---------------------------------------------------------------------------
// Encoders (all reduce spatial dims by exactly 16x)
// ---------------------------------------------------------------------------

class Encoder {
public:
    virtual ~Encoder() = default;
    virtual Tensor forward(const Tensor& x, bool train) = 0;
    virtual Tensor backward(const Tensor& gy, bool accum_params) = 0;
    virtual void visit_params(const ParamVisitor& v) = 0;
    virtual int out_channels() const = 0;
};

class TinyCnnEncoder : public Encoder {
public:
    explicit TinyCnnEncoder(const std::vector<int>& widths) {
        int prev = 3;
        for (int w : widths) {
            convs_.emplace_back(prev, w, 3, 2, 1);
            prev = w;
        }
        relus_.resize(convs_.size());
        out_ = prev;
    }

    void init(Rng& rng) {
        for (auto& c : convs_) c.init(rng);
    }

    Tensor forward(const Tensor& x, bool train) override {
        Tensor h = x;
        for (std::size_t i = 0; i < convs_.size(); ++i)
            h = relus_[i].forward(convs_[i].forward(h, train), train);
        return h;
    }

    Tensor backward(const Tensor& gy, bool accum_params) override {
        Tensor g = gy;
        for (std::size_t i = convs_.size(); i-- > 0;)
            g = convs_[i].backward(relus_[i].backward(std::move(g)), accum_params);
        return g;
    }

    void visit_params(const ParamVisitor& v) override {
        for (std::size_t i = 0; i < convs_.size(); ++i)
            convs_[i].visit_params("stage" + std::to_string(i), v);
    }

    int out_channels() const override { return out_; }

private:
    std::vector<Conv2d> convs_;
    std::vector<ReLU> relus_;
    int out_ = 0;
};

// Residual encoder: 7x7/2 stem, then 4 block stages with strides 1,2,2,2.
template <typename Block, int Expansion>
class ResNetEncoderT : public Encoder {
public:
    ResNetEncoderT(const std::array<int, 4>& layers, const std::array<int, 4>& widths)
        : stem_(3, 64, 7, 2, 3) {
        int prev = 64;
        for (int s = 0; s < 4; ++s) {
            const int stride = s == 0 ? 1 : 2;
            for (int b = 0; b < layers[s]; ++b) {
                blocks_.emplace_back(prev, widths[s], b == 0 ? stride : 1);
                prev = widths[s] * Expansion;
            }
        }
        out_ = prev;
    }

    void init(Rng& rng) {
        stem_.init(rng);
        for (auto& b : blocks_) b.init(rng);
    }

    Tensor forward(const Tensor& x, bool train) override {
        Tensor h = stem_relu_.forward(stem_.forward(x, train), train);
        for (auto& b : blocks_) h = b.forward(h, train);
        return h;
    }

    Tensor backward(const Tensor& gy, bool accum_params) override {
        Tensor g = gy;
        for (std::size_t i = blocks_.size(); i-- > 0;)
            g = blocks_[i].backward(g, accum_params);
        return stem_.backward(stem_relu_.backward(std::move(g)), accum_params);
    }

    void visit_params(const ParamVisitor& v) override {
        stem_.visit_params("stem", v);
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].visit_params("block" + std::to_string(i), v);
    }

    int out_channels() const override { return out_; }

private:
    Conv2d stem_;
    ReLU stem_relu_;
    std::vector<Block> blocks_;
    int out_ = 0;
};

using ResNetBasicEncoder = ResNetEncoderT<ResidualBlock, 1>;
using ResNetBottleneckEncoder = ResNetEncoderT<BottleneckBlock, 4>;

// Convolutional stem to the 1/16 grid, learned position embedding, then
// transformer blocks on the token sequence. Token grid is fixed at build
// time by the configured input size.
class VitHybridEncoder : public Encoder {
public:
    VitHybridEncoder(const EncoderSpec& spec, int input_h, int input_w)
        : embed_(spec.vit_embed_dim), th_(input_h / 16), tw_(input_w / 16) {
        const std::array<int, 4> widths{16, 32, 64, embed_};
        int prev = 3;
        for (int w : widths) {
            stem_.emplace_back(prev, w, 3, 2, 1);
            prev = w;
        }
        stem_relu_.resize(stem_.size());
        pos_.assign(static_cast<std::size_t>(th_) * tw_ * embed_, 0.0);
        gpos_.assign(pos_.size(), 0.0);
        const int hidden = static_cast<int>(embed_ * spec.vit_mlp_ratio);
        for (int d = 0; d < spec.vit_depth; ++d)
            blocks_.emplace_back(embed_, spec.vit_heads, hidden);
        final_ln_ = LayerNorm(embed_);
    }

    void init(Rng& rng) {
        for (auto& c : stem_) c.init(rng);
        for (auto& b : blocks_) b.init(rng);
        // position embedding starts at zero and is learned
    }

    Tensor forward(const Tensor& x, bool train) override {
        Tensor h = x;
        for (std::size_t i = 0; i < stem_.size(); ++i)
            h = stem_relu_[i].forward(stem_[i].forward(h, train), train);
        require(h.h == th_ && h.w == tw_,
                "vit_hybrid: input size does not match the configured token grid");
        const int T = th_ * tw_;
        Tensor tok(1, T, embed_);
        for (int c = 0; c < embed_; ++c)
            for (int t = 0; t < T; ++t)
                tok.v[static_cast<std::size_t>(t) * embed_ + c] = h.channel(c)[t];
        for (std::size_t i = 0; i < tok.v.size(); ++i) tok.v[i] += pos_[i];
        for (auto& b : blocks_) tok = b.forward(tok, train);
        tok = final_ln_.forward(tok, train);
        Tensor out(embed_, th_, tw_);
        for (int c = 0; c < embed_; ++c)
            for (int t = 0; t < T; ++t)
                out.channel(c)[t] = tok.v[static_cast<std::size_t>(t) * embed_ + c];
        return out;
    }

    Tensor backward(const Tensor& gy, bool accum_params) override {
        const int T = th_ * tw_;
        Tensor gtok(1, T, embed_);
        for (int c = 0; c < embed_; ++c)
            for (int t = 0; t < T; ++t)
                gtok.v[static_cast<std::size_t>(t) * embed_ + c] = gy.channel(c)[t];
        gtok = final_ln_.backward(gtok, accum_params);
        for (std::size_t i = blocks_.size(); i-- > 0;)
            gtok = blocks_[i].backward(gtok, accum_params);
        if (accum_params)
            for (std::size_t i = 0; i < gtok.v.size(); ++i) gpos_[i] += gtok.v[i];
        Tensor gh(embed_, th_, tw_);
        for (int c = 0; c < embed_; ++c)
            for (int t = 0; t < T; ++t)
                gh.channel(c)[t] = gtok.v[static_cast<std::size_t>(t) * embed_ + c];
        Tensor g = std::move(gh);
        for (std::size_t i = stem_.size(); i-- > 0;)
            g = stem_[i].backward(stem_relu_[i].backward(std::move(g)), accum_params);
        return g;
    }

    void visit_params(const ParamVisitor& v) override {
        for (std::size_t i = 0; i < stem_.size(); ++i)
            stem_[i].visit_params("stem" + std::to_string(i), v);
        v("pos_embed", pos_, gpos_);
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].visit_params("block" + std::to_string(i), v);
        final_ln_.visit_params("final_ln", v);
    }

    int out_channels() const override { return embed_; }

private:
    std::vector<Conv2d> stem_;
    std::vector<ReLU> stem_relu_;
    std::vector<double> pos_, gpos_;
    std::vector<TransformerBlock> blocks_;
    LayerNorm final_ln_;
    int embed_, th_, tw_;
};

inline std::unique_ptr<Encoder> make_encoder(const EncoderSpec& spec, int input_h,
                                             int input_w, Rng rng) {
    spec.validate();
    if (spec.kind == "tiny_cnn") {
        auto e = std::make_unique<TinyCnnEncoder>(spec.tiny_widths);
        e->init(rng);
        return e;
    }
    if (spec.kind == "res18" || spec.kind == "res34") {
        const std::array<int, 4> layers =
            spec.kind == "res18" ? std::array<int, 4>{2, 2, 2, 2} : std::array<int, 4>{3, 4, 6, 3};
        auto e = std::make_unique<ResNetBasicEncoder>(layers, std::array<int, 4>{64, 128, 256, 512});
        e->init(rng);
        return e;
    }
    if (spec.kind == "res50") {
        auto e = std::make_unique<ResNetBottleneckEncoder>(std::array<int, 4>{3, 4, 6, 3},
                                                           std::array<int, 4>{64, 128, 256, 512});
        e->init(rng);
        return e;
    }
    auto e = std::make_unique<VitHybridEncoder>(spec, input_h, input_w);
    e->init(rng);
    return e;
}

// ---------------------------------------------------------------------------
// Decoder head: 4 x (upsample x2, residual block), 1x1 conv, sigmoid.
// Spatial trajectory is x16 up, mirroring the encoder.
// ---------------------------------------------------------------------------

class Decoder {
public:
    Decoder() = default;
    Decoder(int in_channels, const DecoderSpec& spec) {
        spec.validate();
        int prev = in_channels;
        for (int w : spec.widths) {
            blocks_.emplace_back(prev, w, 1);
            prev = w;
        }
        head_ = Conv2d(prev, 1, 1, 1, 0);
    }

    void init(Rng& rng) {
        for (auto& b : blocks_) b.init(rng);
        head_.init(rng);
    }

    // (C, H/16, W/16) -> (1, H, W) probabilities
    Tensor forward(const Tensor& z, bool train) {
        Tensor h = z;
        for (auto& b : blocks_) h = b.forward(up_.forward(h), train);
        return sig_.forward(head_.forward(h, train), train);
    }

    Tensor backward(const Tensor& gprob, bool accum_params = true) {
        Tensor g = head_.backward(sig_.backward(gprob), accum_params);
        for (std::size_t i = blocks_.size(); i-- > 0;)
            g = up_.backward(blocks_[i].backward(g, accum_params));
        return g;
    }

    void visit_params(const ParamVisitor& v) {
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].visit_params("stage" + std::to_string(i), v);
        head_.visit_params("head", v);
    }

private:
    Upsample2x up_;
    std::vector<ResidualBlock> blocks_;
    Conv2d head_;
    Sigmoid sig_;
};

// ---------------------------------------------------------------------------
// Expert bundle
// ---------------------------------------------------------------------------

enum class Branch { target, source };

struct ParamCounts {
    std::size_t total = 0;
    std::size_t trainable = 0;
};

struct ModelBundle {
    EncoderSpec encoder_spec;
    DecoderSpec decoder_spec;
    int input_h = 0, input_w = 0;
    int phase_index = 1;
    std::unique_ptr<Encoder> encoder;
    Decoder target_decoder;
    std::optional<Decoder> source_decoder;  // present iff phase_index >= 2; frozen

    void visit_params(const std::string& component, const ParamVisitor& v) {
        auto prefixed = [&](const std::string& p) {
            return [&v, p](const std::string& n, std::vector<double>& val,
                           std::vector<double>& grad) { v(p + "." + n, val, grad); };
        };
        if (component == "encoder") encoder->visit_params(prefixed("encoder"));
        else if (component == "target") target_decoder.visit_params(prefixed("target_decoder"));
        else if (component == "source" && source_decoder)
            source_decoder->visit_params(prefixed("source_decoder"));
    }

    void zero_grad() {
        auto z = [](const std::string&, std::vector<double>&, std::vector<double>& g) {
            std::fill(g.begin(), g.end(), 0.0);
        };
        visit_params("encoder", z);
        visit_params("target", z);
        visit_params("source", z);
    }
};

// Weight files for pretrained encoders use the checkpoint container with
// only encoder tensors; see save_encoder_weights below.
inline void load_encoder_weights(ModelBundle& bundle, const std::string& path);

inline ModelBundle build_model(const EncoderSpec& enc, const DecoderSpec& dec,
                               int input_h, int input_w, int phase,
                               std::uint64_t seed) {
    enc.validate();
    dec.validate();
    require(phase >= 1, "phase must be >= 1");
    require(input_h >= 16 && input_w >= 16 && input_h % 16 == 0 && input_w % 16 == 0,
            "input size must be a positive multiple of 16");
    ModelBundle b;
    b.encoder_spec = enc;
    b.decoder_spec = dec;
    b.input_h = input_h;
    b.input_w = input_w;
    b.phase_index = phase;
    Rng rng(seed);
    b.encoder = make_encoder(enc, input_h, input_w, rng.split("encoder"));
    b.target_decoder = Decoder(b.encoder->out_channels(), dec);
    {
        Rng r = rng.split("target_decoder");
        b.target_decoder.init(r);
    }
    if (phase >= 2) {
        b.source_decoder = Decoder(b.encoder->out_channels(), dec);
        Rng r = rng.split("source_decoder");
        b.source_decoder->init(r);
    }
    if (enc.pretrained) load_encoder_weights(b, enc.weights_path);
    return b;
}

inline Image tensor_to_image(const Tensor& t) {
    require(t.c == 1, "expected single-channel tensor");
    Image img(t.h, t.w);
    img.v = t.v;
    return img;
}

inline Image forward(ModelBundle& bundle, const AugmentedInput& input, Branch branch) {
    const Tensor& x = input.channels;
    require(x.c == 3, "forward: expected 3-channel input");
    require(x.h % 16 == 0 && x.w % 16 == 0, "forward: input dims must be multiples of 16");
    if (branch == Branch::source)
        require(bundle.source_decoder.has_value(),
                "source branch requested but no source decoder (phase 1)");
    Tensor z = bundle.encoder->forward(x, false);
    Tensor p = branch == Branch::target ? bundle.target_decoder.forward(z, false)
                                        : bundle.source_decoder->forward(z, false);
    return tensor_to_image(p);
}

// End of phase i: the trained target decoder becomes the frozen source
// decoder for phase i+1; encoder and target decoder carry forward unchanged.
inline void handoff(ModelBundle& bundle) {
    bundle.source_decoder = bundle.target_decoder;
    bundle.phase_index += 1;
}

inline ParamCounts count_parameters(const ModelBundle& bundle) {
    ParamCounts c;
    auto& b = const_cast<ModelBundle&>(bundle);
    auto count = [](std::size_t& acc) {
        return [&acc](const std::string&, std::vector<double>& v, std::vector<double>&) {
            acc += v.size();
        };
    };
    std::size_t enc = 0, tgt = 0, src = 0;
    b.visit_params("encoder", count(enc));
    b.visit_params("target", count(tgt));
    b.visit_params("source", count(src));
    c.trainable = enc + tgt;
    c.total = enc + tgt + src;
    return c;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
//
// Versioned container: magic, little-endian u32 header length, JSON header
// (specs, phase, input size, ordered tensor list), then float64 LE blobs in
// header order.

namespace detail {

constexpr char kCkptMagic[8] = {'I', 'T', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr char kEncMagic[8] = {'I', 'T', 'L', 'E', 'N', 'C', 'W', '1'};

struct NamedTensorRef {
    std::string name;
    std::vector<double>* values;
};

inline std::vector<NamedTensorRef> collect_tensors(ModelBundle& b, bool encoder_only) {
    std::vector<NamedTensorRef> out;
    auto grab = [&out](const std::string& n, std::vector<double>& v, std::vector<double>&) {
        out.push_back({n, &v});
    };
    b.visit_params("encoder", grab);
    if (!encoder_only) {
        b.visit_params("target", grab);
        b.visit_params("source", grab);
    }
    return out;
}

inline void write_container(const std::string& path, const char magic[8],
                            const nlohmann::json& header,
                            const std::vector<NamedTensorRef>& tensors) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot open for writing: " + path);
    f.write(magic, 8);
    const std::string h = header.dump();
    const std::uint32_t len = static_cast<std::uint32_t>(h.size());
    f.write(reinterpret_cast<const char*>(&len), 4);
    f.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& t : tensors)
        f.write(reinterpret_cast<const char*>(t.values->data()),
                static_cast<std::streamsize>(t.values->size() * sizeof(double)));
    require(f.good(), "write failed: " + path);
}

inline nlohmann::json read_container_header(std::ifstream& f, const char magic[8],
                                            const std::string& path) {
    char m[8];
    f.read(m, 8);
    require(f.good() && std::memcmp(m, magic, 8) == 0, "bad container magic: " + path);
    std::uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 4);
    std::string h(len, '\0');
    f.read(h.data(), len);
    require(f.good(), "truncated container header: " + path);
    return nlohmann::json::parse(h);
}

inline nlohmann::json tensor_manifest(const std::vector<NamedTensorRef>& tensors) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : tensors)
        arr.push_back({{"name", t.name}, {"count", t.values->size()}});
    return arr;
}

inline void read_tensors(std::ifstream& f, const nlohmann::json& manifest,
                         const std::vector<NamedTensorRef>& dst, const std::string& path) {
    require(manifest.size() == dst.size(), "tensor list mismatch in " + path);
    for (std::size_t i = 0; i < dst.size(); ++i) {
        require(manifest[i].at("name").get<std::string>() == dst[i].name,
                "tensor name mismatch in " + path + ": expected " + dst[i].name);
        require(manifest[i].at("count").get<std::size_t>() == dst[i].values->size(),
                "tensor size mismatch in " + path + " for " + dst[i].name);
        f.read(reinterpret_cast<char*>(dst[i].values->data()),
               static_cast<std::streamsize>(dst[i].values->size() * sizeof(double)));
    }
    require(f.good(), "truncated tensor data: " + path);
}

}  // namespace detail

inline void save_checkpoint(const ModelBundle& bundle, const std::string& path) {
    auto& b = const_cast<ModelBundle&>(bundle);
    auto tensors = detail::collect_tensors(b, false);
    nlohmann::json header{
        {"version", 1},
        {"phase_index", b.phase_index},
        {"input_h", b.input_h},
        {"input_w", b.input_w},
        {"has_source", b.source_decoder.has_value()},
        {"encoder_spec", b.encoder_spec},
        {"decoder_spec", b.decoder_spec},
        {"tensors", detail::tensor_manifest(tensors)},
    };
    detail::write_container(path, detail::kCkptMagic, header, tensors);
}

inline ModelBundle load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot open checkpoint: " + path);
    const auto header = detail::read_container_header(f, detail::kCkptMagic, path);
    require(header.at("version").get<int>() == 1, "unsupported checkpoint version in " + path);
    EncoderSpec enc = header.at("encoder_spec").get<EncoderSpec>();
    enc.pretrained = false;  // weights come from this file
    enc.weights_path.clear();
    const DecoderSpec dec = header.at("decoder_spec").get<DecoderSpec>();
    ModelBundle b = build_model(enc, dec, header.at("input_h").get<int>(),
                                header.at("input_w").get<int>(),
                                header.at("has_source").get<bool>() ? 2 : 1, /*seed=*/0);
    b.phase_index = header.at("phase_index").get<int>();
    auto tensors = detail::collect_tensors(b, false);
    detail::read_tensors(f, header.at("tensors"), tensors, path);
    return b;
}

inline void save_encoder_weights(const ModelBundle& bundle, const std::string& path) {
    auto& b = const_cast<ModelBundle&>(bundle);
    auto tensors = detail::collect_tensors(b, true);
    nlohmann::json header{
        {"version", 1},
        {"encoder_spec", b.encoder_spec},
        {"input_h", b.input_h},
        {"input_w", b.input_w},
        {"tensors", detail::tensor_manifest(tensors)},
    };
    detail::write_container(path, detail::kEncMagic, header, tensors);
}

inline void load_encoder_weights(ModelBundle& bundle, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot open encoder weights: " + path);
    const auto header = detail::read_container_header(f, detail::kEncMagic, path);
    require(header.at("version").get<int>() == 1, "unsupported weights version in " + path);
    const EncoderSpec file_spec = header.at("encoder_spec").get<EncoderSpec>();
    require(file_spec.kind == bundle.encoder_spec.kind,
            "encoder kind mismatch: weights are for " + file_spec.kind);
    auto tensors = detail::collect_tensors(bundle, true);
    detail::read_tensors(f, header.at("tensors"), tensors, path);
}

}  // namespace itl
