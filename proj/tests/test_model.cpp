#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "itl/engine.hpp"  // param_digest
#include "itl/model.hpp"
#include "oracles.hpp"

using namespace itl;
namespace fs = std::filesystem;

namespace {

EncoderSpec tiny_spec() {
    EncoderSpec e;
    e.tiny_widths = {3, 4, 5, 6};
    return e;
}

DecoderSpec small_decoder() {
    DecoderSpec d;
    d.widths = {5, 4, 3, 2};
    return d;
}

AugmentedInput random_input(Rng& rng, int hw) {
    Tensor t(3, hw, hw);
    for (double& d : t.v) d = rng.normal();
    return AugmentedInput{std::move(t)};
}

std::vector<double> all_params(const ModelBundle& b, const std::string& comp) {
    std::vector<double> out;
    const_cast<ModelBundle&>(b).visit_params(
        comp, [&](const std::string&, std::vector<double>& v, std::vector<double>&) {
            out.insert(out.end(), v.begin(), v.end());
        });
    return out;
}

}  // namespace

TEST_CASE("phase-1 build has no source decoder", "[model]") {
    auto b = build_model(tiny_spec(), small_decoder(), 32, 32, 1, 9);
    REQUIRE_FALSE(b.source_decoder.has_value());
    auto b2 = build_model(tiny_spec(), small_decoder(), 32, 32, 2, 9);
    REQUIRE(b2.source_decoder.has_value());
}

TEST_CASE("same seed builds identical parameters; different seeds differ", "[model]") {
    auto a = build_model(tiny_spec(), small_decoder(), 32, 32, 1, 5);
    auto b = build_model(tiny_spec(), small_decoder(), 32, 32, 1, 5);
    auto c = build_model(tiny_spec(), small_decoder(), 32, 32, 1, 6);
    REQUIRE(all_params(a, "encoder") == all_params(b, "encoder"));
    REQUIRE(all_params(a, "target") == all_params(b, "target"));
    REQUIRE(all_params(a, "encoder") != all_params(c, "encoder"));
}

TEST_CASE("pretrained build with a missing weights file errors", "[model]") {
    EncoderSpec e;
    e.kind = "res18";
    e.pretrained = true;
    e.weights_path = "/nonexistent/weights.bin";
    REQUIRE_THROWS(build_model(e, small_decoder(), 32, 32, 1, 1));

    EncoderSpec bad = tiny_spec();
    bad.pretrained = true;
    bad.weights_path = "x";
    REQUIRE_THROWS(build_model(bad, small_decoder(), 32, 32, 1, 1));  // tiny never pretrained
}

TEST_CASE("forward emits probabilities at the input resolution", "[model]") {
    Rng rng(11);
    auto b = build_model(tiny_spec(), small_decoder(), 96, 96, 1, 4);
    auto in96 = random_input(rng, 96);
    Image p = forward(b, in96, Branch::target);
    REQUIRE(p.h == 96);
    REQUIRE(p.w == 96);
    for (double d : p.v) {
        REQUIRE(d >= 0.0);
        REQUIRE(d <= 1.0);
    }
    // the same fully-convolutional bundle handles any multiple of 16
    auto in384 = random_input(rng, 384);
    Image p384 = forward(b, in384, Branch::target);
    REQUIRE(p384.h == 384);
    REQUIRE(p384.w == 384);
}

TEST_CASE("forward output range holds across 1000 random inputs", "[model]") {
    Rng rng(12);
    auto b = build_model(tiny_spec(), small_decoder(), 16, 16, 1, 4);
    for (int i = 0; i < 1000; ++i) {
        Image p = forward(b, random_input(rng, 16), Branch::target);
        for (double d : p.v) {
            REQUIRE(d >= 0.0);
            REQUIRE(d <= 1.0);
        }
    }
}

TEST_CASE("evaluation-mode forward is deterministic", "[model]") {
    Rng rng(13);
    auto b = build_model(tiny_spec(), small_decoder(), 32, 32, 1, 4);
    auto in = random_input(rng, 32);
    Image p1 = forward(b, in, Branch::target);
    Image p2 = forward(b, in, Branch::target);
    REQUIRE(p1.v == p2.v);
}

TEST_CASE("source branch in phase 1 errors", "[model]") {
    Rng rng(14);
    auto b = build_model(tiny_spec(), small_decoder(), 32, 32, 1, 4);
    REQUIRE_THROWS(forward(b, random_input(rng, 32), Branch::source));
}

TEST_CASE("handoff copies target into source and keeps the encoder", "[model]") {
    auto b = build_model(tiny_spec(), small_decoder(), 32, 32, 1, 4);
    const auto enc_before = all_params(b, "encoder");
    const auto tgt_before = all_params(b, "target");
    handoff(b);
    REQUIRE(b.phase_index == 2);
    REQUIRE(all_params(b, "source") == tgt_before);
    REQUIRE(all_params(b, "encoder") == enc_before);
    REQUIRE(all_params(b, "target") == tgt_before);
}

TEST_CASE("successive handoffs track only the previous phase", "[model]") {
    auto b = build_model(tiny_spec(), small_decoder(), 32, 32, 1, 4);
    handoff(b);
    // perturb the target decoder as phase-2 training would
    b.visit_params("target", [](const std::string&, std::vector<double>& v,
                                std::vector<double>&) {
        for (double& d : v) d += 0.25;
    });
    const auto tgt_phase2 = all_params(b, "target");
    handoff(b);
    REQUIRE(b.phase_index == 3);
    REQUIRE(all_params(b, "source") == tgt_phase2);
}

TEST_CASE("parameter counts are constant across phases >= 2", "[model]") {
    auto b = build_model(tiny_spec(), small_decoder(), 32, 32, 1, 4);
    const auto c1 = count_parameters(b);
    handoff(b);
    const auto c2 = count_parameters(b);
    handoff(b);
    const auto c3 = count_parameters(b);
    REQUIRE(c2.total == c3.total);
    REQUIRE(c2.trainable == c3.trainable);
    REQUIRE(c2.trainable == c1.trainable);  // frozen copy adds no trainables
    // freezing reduces trainable (not total) count by exactly the decoder size
    const std::size_t decoder_size = all_params(b, "target").size();
    REQUIRE(c2.total - c2.trainable == decoder_size);
}

TEST_CASE("tiny_cnn bundle is smaller than res18", "[model]") {
    auto tiny = build_model(tiny_spec(), small_decoder(), 32, 32, 1, 4);
    EncoderSpec res;
    res.kind = "res18";
    auto big = build_model(res, small_decoder(), 32, 32, 1, 4);
    REQUIRE(count_parameters(tiny).total < count_parameters(big).total);
}

TEST_CASE("res and vit encoders forward at 1/16 scale", "[model]") {
    Rng rng(15);
    for (const char* kind : {"res18", "res34", "res50", "vit_hybrid"}) {
        EncoderSpec e;
        e.kind = kind;
        e.vit_embed_dim = 8;
        e.vit_depth = 1;
        e.vit_heads = 2;
        auto enc = make_encoder(e, 32, 32, Rng(3));
        Tensor x(3, 32, 32);
        for (double& d : x.v) d = rng.normal();
        Tensor z = enc->forward(x, false);
        REQUIRE(z.h == 2);
        REQUIRE(z.w == 2);
        REQUIRE(z.c == enc->out_channels());
    }
}

TEST_CASE("vit hybrid encoder backward matches finite differences", "[model]") {
    EncoderSpec e;
    e.kind = "vit_hybrid";
    e.vit_embed_dim = 6;
    e.vit_depth = 1;
    e.vit_heads = 2;
    auto enc = make_encoder(e, 16, 16, Rng(8));
    Rng rng(9);
    Tensor x(3, 16, 16);
    for (double& d : x.v) d = 0.5 * rng.normal();
    Tensor y = enc->forward(x, true);
    Tensor cot = y;
    for (double& d : cot.v) d = rng.normal();
    Tensor gx = enc->backward(cot, true);

    auto f = [&](const std::vector<double>& flat) {
        Tensor xi = x;
        xi.v = flat;
        Tensor yo = enc->forward(xi, false);
        double s = 0.0;
        for (std::size_t i = 0; i < yo.v.size(); ++i) s += cot.v[i] * yo.v[i];
        return s;
    };
    const auto fd = oracles::finite_difference(f, x.v);
    REQUIRE(oracles::max_error_vs_scale(gx.v, fd) < 1e-6);
}

TEST_CASE("checkpoints round-trip exactly", "[model]") {
    const auto dir = fs::temp_directory_path() / "itl_test_ckpt";
    fs::create_directories(dir);
    auto b = build_model(tiny_spec(), small_decoder(), 32, 32, 1, 21);
    handoff(b);
    const auto path = (dir / "m.ckpt").string();
    save_checkpoint(b, path);
    auto loaded = load_checkpoint(path);
    REQUIRE(loaded.phase_index == b.phase_index);
    REQUIRE(loaded.input_h == 32);
    REQUIRE(loaded.source_decoder.has_value());
    REQUIRE(all_params(loaded, "encoder") == all_params(b, "encoder"));
    REQUIRE(all_params(loaded, "target") == all_params(b, "target"));
    REQUIRE(all_params(loaded, "source") == all_params(b, "source"));
    REQUIRE(param_digest(loaded, "target") == param_digest(b, "target"));

    Rng rng(22);
    auto in = random_input(rng, 32);
    REQUIRE(forward(loaded, in, Branch::target).v == forward(b, in, Branch::target).v);
}

TEST_CASE("encoder weight files load into matching builds only", "[model]") {
    const auto dir = fs::temp_directory_path() / "itl_test_encw";
    fs::create_directories(dir);
    auto b = build_model(tiny_spec(), small_decoder(), 32, 32, 1, 23);
    const auto path = (dir / "enc.bin").string();
    save_encoder_weights(b, path);

    EncoderSpec pre = tiny_spec();
    auto fresh = build_model(pre, small_decoder(), 32, 32, 1, 99);
    REQUIRE(all_params(fresh, "encoder") != all_params(b, "encoder"));
    load_encoder_weights(fresh, path);
    REQUIRE(all_params(fresh, "encoder") == all_params(b, "encoder"));

    EncoderSpec other;
    other.kind = "res18";
    auto res = build_model(other, small_decoder(), 32, 32, 1, 1);
    REQUIRE_THROWS(load_encoder_weights(res, path));  // kind mismatch
}

TEST_CASE("corrupt checkpoint files are rejected", "[model]") {
    const auto dir = fs::temp_directory_path() / "itl_test_corrupt";
    fs::create_directories(dir);
    const auto path = (dir / "bad.ckpt").string();
    std::ofstream(path) << "not a checkpoint";
    REQUIRE_THROWS(load_checkpoint(path));
}
