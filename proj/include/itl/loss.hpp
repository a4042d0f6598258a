#pragma once

#include <cmath>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "itl/data.hpp"
#include "itl/model.hpp"
#include "itl/tensor.hpp"

namespace itl {

struct LossConfig {
    double alpha = 0.5;          // target-branch memory weight
    double delta = 0.5;          // source-branch memory weight
    double smoothing_eps = 1e-5;

    void validate() const {
        require(alpha >= 0.0 && delta >= 0.0, "loss weights must be >= 0");
        require(smoothing_eps > 0.0, "smoothing_eps must be > 0");
    }
};

struct LossBreakdown {
    double l_site = 0.0;
    double l_target = 0.0;
    double l_source = 0.0;
    double l_model = 0.0;  // l_target + l_source
    double l_all = 0.0;    // l_model + l_site
};

inline LossBreakdown compose_loss(double l_site, double l_target, double l_source) {
    LossBreakdown b;
    b.l_site = l_site;
    b.l_target = l_target;
    b.l_source = l_source;
    b.l_model = l_target + l_source;
    b.l_all = b.l_model + b.l_site;
    return b;
}

inline void to_json(nlohmann::json& j, const LossBreakdown& b) {
    j = {{"l_site", b.l_site}, {"l_target", b.l_target}, {"l_source", b.l_source},
         {"l_model", b.l_model}, {"l_all", b.l_all}};
}
inline void from_json(const nlohmann::json& j, LossBreakdown& b) {
    b.l_site = j.value("l_site", 0.0);
    b.l_target = j.value("l_target", 0.0);
    b.l_source = j.value("l_source", 0.0);
    b.l_model = j.value("l_model", 0.0);
    b.l_all = j.value("l_all", 0.0);
}

// ---------------------------------------------------------------------------
// Dice loss: 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps)
// ---------------------------------------------------------------------------

inline void check_dice_inputs(const Image& pred, const Mask& gt) {
    require(pred.h == gt.h && pred.w == gt.w, "dice_loss: shape mismatch");
    for (double p : pred.v)
        require(p >= 0.0 && p <= 1.0, "dice_loss: prediction outside [0,1]");
}

inline double dice_loss(const Image& pred, const Mask& gt, double eps = 1e-5) {
    check_dice_inputs(pred, gt);
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        inter += pred.v[i] * gt.v[i];
        sp += pred.v[i];
        sg += gt.v[i];
    }
    return 1.0 - (2.0 * inter + eps) / (sp + sg + eps);
}

// Loss plus dL/dpred. The gradient exists everywhere: the denominator is
// bounded away from zero by eps.
inline std::pair<double, Image> dice_loss_grad(const Image& pred, const Mask& gt,
                                               double eps = 1e-5) {
    check_dice_inputs(pred, gt);
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        inter += pred.v[i] * gt.v[i];
        sp += pred.v[i];
        sg += gt.v[i];
    }
    const double num = 2.0 * inter + eps;
    const double den = sp + sg + eps;
    Image grad(pred.h, pred.w);
    for (std::size_t i = 0; i < pred.v.size(); ++i)
        grad.v[i] = -(2.0 * gt.v[i] * den - num) / (den * den);
    return {1.0 - num / den, grad};
}

// ---------------------------------------------------------------------------
// Loss composition over batches (measurement path; gradients are accumulated
// by the training loop, which shares dice_loss_grad with these definitions)
// ---------------------------------------------------------------------------

struct LabeledInput {
    AugmentedInput input;
    Mask mask;
};

using SiteBatches = std::map<std::string, std::vector<LabeledInput>>;

// Mean target-branch Dice loss over a batch from the current site.
inline double site_loss(ModelBundle& model, const std::vector<LabeledInput>& batch,
                        double eps = 1e-5) {
    require(!batch.empty(), "site_loss: empty batch");
    double sum = 0.0;
    for (const auto& s : batch)
        sum += dice_loss(forward(model, s.input, Branch::target), s.mask, eps);
    return sum / static_cast<double>(batch.size());
}

// Weighted sum over past sites of the mean target-branch Dice loss on that
// site's exemplars. Zero in phase 1 by definition.
inline double target_memory_loss(ModelBundle& model, const SiteBatches& memory_batches,
                                 double alpha, double eps = 1e-5) {
    if (model.phase_index <= 1) return 0.0;
    if (memory_batches.empty()) {
        std::cerr << "[itl] warning: empty memory in phase >= 2; target memory loss is 0\n";
        return 0.0;
    }
    double total = 0.0;
    for (const auto& [site, batch] : memory_batches) {
        require(!batch.empty(), "target_memory_loss: empty batch for site " + site);
        double sum = 0.0;
        for (const auto& s : batch)
            sum += dice_loss(forward(model, s.input, Branch::target), s.mask, eps);
        total += alpha * sum / static_cast<double>(batch.size());
    }
    return total;
}

// Same composition through the frozen source decoder. The training loop
// only routes these gradients into the encoder.
inline double source_memory_loss(ModelBundle& model, const SiteBatches& memory_batches,
                                 double delta, double eps = 1e-5) {
    if (model.phase_index <= 1) return 0.0;
    require(model.source_decoder.has_value(),
            "source_memory_loss: source decoder absent in phase >= 2");
    if (memory_batches.empty()) {
        std::cerr << "[itl] warning: empty memory in phase >= 2; source memory loss is 0\n";
        return 0.0;
    }
    double total = 0.0;
    for (const auto& [site, batch] : memory_batches) {
        require(!batch.empty(), "source_memory_loss: empty batch for site " + site);
        double sum = 0.0;
        for (const auto& s : batch)
            sum += dice_loss(forward(model, s.input, Branch::source), s.mask, eps);
        total += delta * sum / static_cast<double>(batch.size());
    }
    return total;
}

inline double source_memory_loss_or_zero(ModelBundle& model, const SiteBatches& memory_batches,
                                         const LossConfig& cfg) {
    if (model.phase_index <= 1) return 0.0;
    return source_memory_loss(model, memory_batches, cfg.delta, cfg.smoothing_eps);
}

inline LossBreakdown total_loss(ModelBundle& model, const std::vector<LabeledInput>& site_batch,
                                const SiteBatches& memory_batches, const LossConfig& cfg) {
    cfg.validate();
    const double ls = site_loss(model, site_batch, cfg.smoothing_eps);
    const double lt = target_memory_loss(model, memory_batches, cfg.alpha, cfg.smoothing_eps);
    const double lsrc = source_memory_loss_or_zero(model, memory_batches, cfg);
    return compose_loss(ls, lt, lsrc);
}

}  // namespace itl
