#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "itl/data.hpp"
#include "itl/engine.hpp"
#include "itl/model.hpp"

namespace itl {

inline void to_json(nlohmann::json& j, const SynthSiteSpec& s) {
    j = {{"site_id", s.site_id},
         {"num_cases", s.num_cases},
         {"slices_per_case", s.slices_per_case},
         {"shape_family", s.shape_family},
         {"intensity_mean", s.intensity_mean},
         {"intensity_std", s.intensity_std},
         {"contrast", s.contrast},
         {"noise_std", s.noise_std},
         {"size_range", std::vector<double>{s.size_range.first, s.size_range.second}},
         {"rng_seed", s.rng_seed}};
}
inline void from_json(const nlohmann::json& j, SynthSiteSpec& s) {
    s.site_id = j.value("site_id", s.site_id);
    s.num_cases = j.value("num_cases", s.num_cases);
    s.slices_per_case = j.value("slices_per_case", s.slices_per_case);
    s.shape_family = j.value("shape_family", s.shape_family);
    s.intensity_mean = j.value("intensity_mean", s.intensity_mean);
    s.intensity_std = j.value("intensity_std", s.intensity_std);
    s.contrast = j.value("contrast", s.contrast);
    s.noise_std = j.value("noise_std", s.noise_std);
    if (j.contains("size_range")) {
        const auto r = j.at("size_range").get<std::vector<double>>();
        require(r.size() == 2, "size_range must be [lo, hi]");
        s.size_range = {r[0], r[1]};
    }
    s.rng_seed = j.value("rng_seed", s.rng_seed);
}

// One declarative document drives every command. Unknown keys anywhere are
// rejected so a typo cannot silently fall back to a default.
struct ExperimentConfig {
    int image_h = 96, image_w = 96;
    EncoderSpec encoder;
    DecoderSpec decoder;
    TrainConfig train;  // holds LossConfig and AugmentConfig
    std::vector<std::string> manifests;
    std::vector<SynthSiteSpec> synth_specs;
    std::vector<std::string> site_order;  // optional explicit phase order
    std::string out_dir;                  // optional default output directory

    void validate() const {
        require(image_h >= 16 && image_w >= 16 && image_h % 16 == 0 && image_w % 16 == 0,
                "image_size must be positive multiples of 16");
        encoder.validate();
        decoder.validate();
        train.validate();
        require(!manifests.empty() || !synth_specs.empty(),
                "config needs data.manifests or data.synth_specs");
        require(manifests.empty() || synth_specs.empty(),
                "config must use either manifests or synth_specs, not both");
        std::set<std::string> ids;
        for (const auto& s : synth_specs) {
            s.validate();
            require(ids.insert(s.site_id).second, "duplicate synth site_id: " + s.site_id);
        }
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& context) {
    require(j.is_object(), "config section '" + context + "' must be an object");
    for (const auto& [key, _] : j.items())
        require(allowed.count(key) == 1,
                "unknown config key '" + key + "' in " + context);
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    detail::check_keys(j, {"image_size", "encoder", "decoder", "loss", "train",
                           "augment", "data", "site_order", "out_dir"},
                       "config root");
    ExperimentConfig c;
    if (j.contains("image_size")) {
        const auto v = j.at("image_size").get<std::vector<int>>();
        require(v.size() == 2, "image_size must be [H, W]");
        c.image_h = v[0];
        c.image_w = v[1];
    }
    if (j.contains("encoder")) {
        detail::check_keys(j.at("encoder"),
                           {"kind", "pretrained", "weights_path", "tiny_widths",
                            "vit_embed_dim", "vit_depth", "vit_heads", "vit_mlp_ratio"},
                           "encoder");
        c.encoder = j.at("encoder").get<EncoderSpec>();
    }
    if (j.contains("decoder")) {
        detail::check_keys(j.at("decoder"), {"widths"}, "decoder");
        c.decoder = j.at("decoder").get<DecoderSpec>();
    }
    if (j.contains("loss")) {
        const auto& jl = j.at("loss");
        detail::check_keys(jl, {"alpha", "delta", "smoothing_eps"}, "loss");
        c.train.loss.alpha = jl.value("alpha", c.train.loss.alpha);
        c.train.loss.delta = jl.value("delta", c.train.loss.delta);
        c.train.loss.smoothing_eps = jl.value("smoothing_eps", c.train.loss.smoothing_eps);
    }
    if (j.contains("train")) {
        const auto& jt = j.at("train");
        detail::check_keys(jt,
                           {"epochs", "batch_size", "beta1", "beta2", "lr_init", "lr_decay",
                            "lr_milestones", "gamma_percent", "seed", "scheme", "ablation",
                            "validation_fraction", "eval_threshold"},
                           "train");
        c.train.epochs = jt.value("epochs", c.train.epochs);
        c.train.batch_size = jt.value("batch_size", c.train.batch_size);
        c.train.beta1 = jt.value("beta1", c.train.beta1);
        c.train.beta2 = jt.value("beta2", c.train.beta2);
        c.train.lr_init = jt.value("lr_init", c.train.lr_init);
        c.train.lr_decay = jt.value("lr_decay", c.train.lr_decay);
        c.train.lr_milestones = jt.value("lr_milestones", c.train.lr_milestones);
        c.train.gamma_percent = jt.value("gamma_percent", c.train.gamma_percent);
        c.train.seed = jt.value("seed", c.train.seed);
        c.train.scheme = jt.value("scheme", c.train.scheme);
        c.train.ablation = jt.value("ablation", c.train.ablation);
        c.train.validation_fraction =
            jt.value("validation_fraction", c.train.validation_fraction);
        c.train.eval_threshold = jt.value("eval_threshold", c.train.eval_threshold);
    }
    if (j.contains("augment")) {
        const auto& ja = j.at("augment");
        detail::check_keys(ja, {"flip_prob", "max_rotation_deg", "max_shift_frac"},
                           "augment");
        c.train.augment.flip_prob = ja.value("flip_prob", c.train.augment.flip_prob);
        c.train.augment.max_rotation_deg =
            ja.value("max_rotation_deg", c.train.augment.max_rotation_deg);
        c.train.augment.max_shift_frac =
            ja.value("max_shift_frac", c.train.augment.max_shift_frac);
    }
    require(j.contains("data"), "config missing 'data' section");
    detail::check_keys(j.at("data"), {"manifests", "synth_specs"}, "data");
    if (j.at("data").contains("manifests"))
        c.manifests = j.at("data").at("manifests").get<std::vector<std::string>>();
    if (j.at("data").contains("synth_specs"))
        c.synth_specs = j.at("data").at("synth_specs").get<std::vector<SynthSiteSpec>>();
    if (j.contains("site_order"))
        c.site_order = j.at("site_order").get<std::vector<std::string>>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    c.validate();
    return c;
}

// Effective config (defaults applied); parsing it back reproduces the run.
inline nlohmann::json experiment_config_json(const ExperimentConfig& c) {
    nlohmann::json j{
        {"image_size", std::vector<int>{c.image_h, c.image_w}},
        {"encoder", c.encoder},
        {"decoder", c.decoder},
        {"loss",
         {{"alpha", c.train.loss.alpha},
          {"delta", c.train.loss.delta},
          {"smoothing_eps", c.train.loss.smoothing_eps}}},
        {"train",
         {{"epochs", c.train.epochs},
          {"batch_size", c.train.batch_size},
          {"beta1", c.train.beta1},
          {"beta2", c.train.beta2},
          {"lr_init", c.train.lr_init},
          {"lr_decay", c.train.lr_decay},
          {"lr_milestones", c.train.lr_milestones},
          {"gamma_percent", c.train.gamma_percent},
          {"seed", c.train.seed},
          {"scheme", c.train.scheme},
          {"ablation", c.train.ablation},
          {"validation_fraction", c.train.validation_fraction},
          {"eval_threshold", c.train.eval_threshold}}},
        {"augment",
         {{"flip_prob", c.train.augment.flip_prob},
          {"max_rotation_deg", c.train.augment.max_rotation_deg},
          {"max_shift_frac", c.train.augment.max_shift_frac}}},
        {"data", nlohmann::json::object()},
    };
    if (!c.manifests.empty()) j["data"]["manifests"] = c.manifests;
    if (!c.synth_specs.empty()) j["data"]["synth_specs"] = c.synth_specs;
    if (!c.site_order.empty()) j["site_order"] = c.site_order;
    if (!c.out_dir.empty()) j["out_dir"] = c.out_dir;
    return j;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "cannot open config: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw std::runtime_error("config parse error in " + path + ": " + e.what());
    }
    return parse_experiment_config(j);
}

}  // namespace itl
