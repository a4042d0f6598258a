#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "itl/data.hpp"
#include "itl/loss.hpp"
#include "itl/memory.hpp"
#include "itl/metrics.hpp"
#include "itl/model.hpp"
#include "itl/optimizer.hpp"

namespace itl {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
    int epochs = 100;
    int batch_size = 5;
    double beta1 = 0.9, beta2 = 0.999;
    double lr_init = 0.001;
    double lr_decay = 0.95;
    std::vector<int> lr_milestones = {60, 80};
    double gamma_percent = 5.0;
    LossConfig loss;
    std::uint64_t seed = 1;
    std::string scheme = "itl";      // itl | isolated | mixed | multi
    std::string ablation = "none";   // none | pretrain_only | model_loss_only
    double validation_fraction = 0.10;
    double eval_threshold = 0.5;
    AugmentConfig augment;

    void validate() const {
        require(epochs >= 1, "epochs must be >= 1");
        require(batch_size >= 1, "batch_size must be >= 1");
        require(lr_init > 0.0, "lr_init must be > 0");
        require(lr_decay > 0.0, "lr_decay must be > 0");
        require(gamma_percent >= 0.0, "gamma_percent must be >= 0");
        require(validation_fraction >= 0.0 && validation_fraction < 1.0,
                "validation_fraction must be in [0, 1)");
        static const std::set<std::string> schemes{"itl", "isolated", "mixed", "multi"};
        require(schemes.count(scheme) == 1, "unknown scheme: " + scheme);
        static const std::set<std::string> ablations{"none", "pretrain_only",
                                                     "model_loss_only"};
        require(ablations.count(ablation) == 1, "unknown ablation: " + ablation);
        loss.validate();
    }
};

inline double lr_at(int epoch, const TrainConfig& cfg) {
    return lr_at(epoch, cfg.lr_init, cfg.lr_decay, cfg.lr_milestones);
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct StepRecord {
    int phase = 1;
    int epoch = 0;
    int step = 0;  // within the epoch
    double lr = 0.0;
    LossBreakdown loss;
    std::map<std::string, int> batch_sites;  // batch composition, site -> count
};

struct PhaseResult {
    int phase_index = 1;
    std::string trained_site;
    std::map<std::string, SiteMetrics> site_metrics;  // every site seen so far
    std::vector<StepRecord> steps;
    std::vector<LossBreakdown> train_epoch_loss;  // per-epoch mean over steps
    std::vector<LossBreakdown> val_epoch_loss;
    ParamCounts params;
    std::size_t train_split_size = 0;    // site's full training split
    std::size_t trained_per_epoch = 0;   // samples iterated per epoch (after holdout)
    std::size_t memory_before = 0;
    std::size_t memory_after = 0;
    std::map<std::string, std::size_t> memory_per_site_after;
    std::uint64_t source_digest_start = 0, source_digest_end = 0;  // 0 when absent
    nlohmann::json memory_manifest_json;  // (case, slice) ids for resumption

    PhaseMetrics as_phase_metrics() const {
        return PhaseMetrics{phase_index, trained_site, site_metrics};
    }
};

inline std::vector<PhaseMetrics> to_phase_metrics(const std::vector<PhaseResult>& rs) {
    std::vector<PhaseMetrics> out;
    out.reserve(rs.size());
    for (const auto& r : rs) out.push_back(r.as_phase_metrics());
    return out;
}

// Byte digest (FNV-1a) of a component's parameters; frozen-branch checks
// compare these across a phase.
inline std::uint64_t param_digest(const ModelBundle& bundle, const std::string& component) {
    auto& b = const_cast<ModelBundle&>(bundle);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    bool any = false;
    b.visit_params(component, [&](const std::string&, std::vector<double>& v,
                                  std::vector<double>&) {
        any = true;
        const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
        for (std::size_t i = 0; i < v.size() * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    });
    return any ? h : 0;
}

struct PhaseObserver {
    std::function<void(const ModelBundle&)> on_phase_start;
    std::function<void(const ModelBundle&)> on_phase_end;  // before memory update/handoff
};

// ---------------------------------------------------------------------------
// Training internals
// ---------------------------------------------------------------------------

namespace detail {

struct SampleRef {
    int case_idx = 0;
    int pos = 0;  // slice position within the case view
};

struct SiteRuntime {
    const SiteDataset* site = nullptr;
    std::vector<CaseView> train_cases;
    std::vector<SampleRef> train_refs;  // iterated by the optimizer
    std::vector<SampleRef> val_refs;    // deterministic holdout for loss curves
};

inline SiteRuntime build_site_runtime(const SiteDataset& site, double validation_fraction,
                                      std::uint64_t seed) {
    SiteRuntime rt;
    rt.site = &site;
    rt.train_cases = group_cases(site.train);
    const int n_cases = static_cast<int>(rt.train_cases.size());
    int n_val = static_cast<int>(std::lround(validation_fraction * n_cases));
    n_val = std::clamp(n_val, 0, n_cases - 1);
    std::vector<int> order(n_cases);
    for (int i = 0; i < n_cases; ++i) order[i] = i;
    Rng rng(mix_seed(seed, hash_tag("val-holdout:" + site.meta.site_id)));
    rng.shuffle(order);
    std::set<int> val_cases(order.begin(), order.begin() + n_val);
    for (int c = 0; c < n_cases; ++c)
        for (int p = 0; p < static_cast<int>(rt.train_cases[c].slices.size()); ++p) {
            if (val_cases.count(c)) rt.val_refs.push_back({c, p});
            else rt.train_refs.push_back({c, p});
        }
    return rt;
}

inline Tensor image_grad_to_tensor(const Image& g) {
    Tensor t(1, g.h, g.w);
    t.v = g.v;
    return t;
}

// One exemplar's network input: the stored slice replicated into the three
// context channels (the single-slice rule).
inline AugmentedInput exemplar_input(const SliceSample& s) {
    return make_augmented_input({s.image}, 0);
}

// Trains one optimizer step. Returns the loss breakdown; gradients of the
// encoder and target decoder are accumulated and applied by the caller's
// optimizer. The source decoder receives no parameter gradients.
struct StepContext {
    ModelBundle* bundle;
    const TrainConfig* cfg;
    bool use_model_loss;
    Rng* aug_rng;
    bool augment_train;
};

inline LossBreakdown train_step(StepContext& ctx,
                                const std::vector<const CaseView*>& cases,
                                const std::vector<SampleRef>& batch,
                                const std::map<std::string, std::vector<const SliceSample*>>&
                                    rehearsal,
                                std::map<std::string, int>* batch_sites) {
    ModelBundle& bundle = *ctx.bundle;
    const LossConfig& lc = ctx.cfg->loss;
    bundle.zero_grad();

    // site-level term on the current batch
    double l_site = 0.0;
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (const auto& ref : batch) {
        const CaseView& cv = *cases[ref.case_idx];
        AugmentedInput input = augmented_input_at(cv, ref.pos);
        Mask mask = cv.slices[ref.pos]->mask;
        if (ctx.augment_train) {
            const AugmentParams p = draw_augment_params(ctx.cfg->augment, *ctx.aug_rng);
            auto [ai, am] = augment(input, mask, p);
            input = std::move(ai);
            mask = std::move(am);
        }
        if (batch_sites) ++(*batch_sites)[cv.slices[ref.pos]->site_id];
        Tensor z = bundle.encoder->forward(input.channels, true);
        Tensor p = bundle.target_decoder.forward(z, true);
        auto [loss_i, grad] = dice_loss_grad(tensor_to_image(p), mask, lc.smoothing_eps);
        l_site += loss_i * inv_n;
        for (double& g : grad.v) g *= inv_n;
        Tensor gz = bundle.target_decoder.backward(image_grad_to_tensor(grad), true);
        bundle.encoder->backward(gz, true);
    }

    // model-level terms on rehearsal exemplars
    double l_target = 0.0, l_source = 0.0;
    if (ctx.use_model_loss && bundle.phase_index >= 2 && !rehearsal.empty()) {
        for (const auto& [site_id, exemplars] : rehearsal) {
            const double inv_m = 1.0 / static_cast<double>(exemplars.size());
            double lt_site = 0.0, ls_site = 0.0;
            for (const SliceSample* ex : exemplars) {
                AugmentedInput input = exemplar_input(*ex);
                Mask mask = ex->mask;
                if (ctx.augment_train) {
                    const AugmentParams p = draw_augment_params(ctx.cfg->augment, *ctx.aug_rng);
                    auto [ai, am] = augment(input, mask, p);
                    input = std::move(ai);
                    mask = std::move(am);
                }
                Tensor z = bundle.encoder->forward(input.channels, true);

                Tensor pt = bundle.target_decoder.forward(z, true);
                auto [lt_i, gt] = dice_loss_grad(tensor_to_image(pt), mask, lc.smoothing_eps);
                lt_site += lt_i * inv_m;
                for (double& g : gt.v) g *= lc.alpha * inv_m;
                Tensor gz = bundle.target_decoder.backward(image_grad_to_tensor(gt), true);

                Tensor ps = bundle.source_decoder->forward(z, true);
                auto [ls_i, gs] = dice_loss_grad(tensor_to_image(ps), mask, lc.smoothing_eps);
                ls_site += ls_i * inv_m;
                for (double& g : gs.v) g *= lc.delta * inv_m;
                // frozen branch: input gradient only, no parameter gradients
                Tensor gzs = bundle.source_decoder->backward(image_grad_to_tensor(gs), false);
                for (std::size_t i = 0; i < gz.v.size(); ++i) gz.v[i] += gzs.v[i];

                bundle.encoder->backward(gz, true);
            }
            l_target += lc.alpha * lt_site;
            l_source += lc.delta * ls_site;
        }
    }
    return compose_loss(l_site, l_target, l_source);
}

// Loss measurement without gradients (validation curves).
inline LossBreakdown measure_loss(ModelBundle& bundle, const TrainConfig& cfg,
                                  bool use_model_loss, const SiteRuntime& rt,
                                  const std::vector<SampleRef>& refs,
                                  const MemoryStore& store) {
    const LossConfig& lc = cfg.loss;
    double l_site = 0.0;
    if (!refs.empty()) {
        for (const auto& ref : refs) {
            const CaseView& cv = rt.train_cases[ref.case_idx];
            AugmentedInput input = augmented_input_at(cv, ref.pos);
            l_site += dice_loss(forward(bundle, input, Branch::target),
                                cv.slices[ref.pos]->mask, lc.smoothing_eps);
        }
        l_site /= static_cast<double>(refs.size());
    }
    double l_target = 0.0, l_source = 0.0;
    if (use_model_loss && bundle.phase_index >= 2 && !store.all_empty()) {
        for (const auto& e : store.per_site) {
            if (e.exemplars.empty()) continue;
            double lt = 0.0, ls = 0.0;
            for (const auto& ex : e.exemplars) {
                AugmentedInput input = exemplar_input(ex);
                lt += dice_loss(forward(bundle, input, Branch::target), ex.mask,
                                lc.smoothing_eps);
                ls += dice_loss(forward(bundle, input, Branch::source), ex.mask,
                                lc.smoothing_eps);
            }
            const double inv_m = 1.0 / static_cast<double>(e.exemplars.size());
            l_target += lc.alpha * lt * inv_m;
            l_source += lc.delta * ls * inv_m;
        }
    }
    return compose_loss(l_site, l_target, l_source);
}

inline PredictFn target_predictor(ModelBundle& bundle) {
    return [&bundle](const AugmentedInput& in) {
        return forward(bundle, in, Branch::target);
    };
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Phase runner (Algorithm: per step one current-site batch plus one
// rehearsal batch; encoder + target decoder updated; then evaluate seen
// sites, update memory, hand off)
// ---------------------------------------------------------------------------

inline PhaseResult run_phase(ModelBundle& bundle, const SiteDataset& site,
                             MemoryStore& store, const TrainConfig& cfg,
                             const std::vector<const SiteDataset*>& seen_sites,
                             const PhaseObserver* observer = nullptr) {
    cfg.validate();
    require(!site.train.empty(), "run_phase: site has no training data");
    require(store.per_site.size() + 1 == static_cast<std::size_t>(bundle.phase_index),
            "run_phase: memory store does not reflect all previous phases");

    PhaseResult pr;
    pr.phase_index = bundle.phase_index;
    pr.trained_site = site.meta.site_id;
    pr.train_split_size = site.train.size();
    pr.memory_before = store.total_size();
    pr.source_digest_start = param_digest(bundle, "source");
    if (observer && observer->on_phase_start) observer->on_phase_start(bundle);

    const bool use_model_loss = cfg.ablation != "pretrain_only";
    if (use_model_loss && bundle.phase_index >= 2 && store.all_empty() &&
        cfg.gamma_percent > 0.0)
        std::cerr << "[itl] warning: empty memory at phase " << bundle.phase_index
                  << "; model-level loss will be 0\n";

    detail::SiteRuntime rt = detail::build_site_runtime(site, cfg.validation_fraction,
                                                        cfg.seed);
    require(!rt.train_refs.empty(), "run_phase: no trainable samples after holdout");
    pr.trained_per_epoch = rt.train_refs.size();

    std::vector<const CaseView*> case_ptrs;
    for (const auto& cv : rt.train_cases) case_ptrs.push_back(&cv);

    Rng phase_rng = Rng(cfg.seed).split("phase").split(
        static_cast<std::uint64_t>(bundle.phase_index));
    Rng shuffle_rng = phase_rng.split("shuffle");
    Rng aug_rng = phase_rng.split("augment");
    Rng rehearsal_rng = phase_rng.split("rehearsal");
    // Exemplar selection is a property of the dataset, like the train/test
    // split: the stored subset of a site is the same in every run, and a
    // smaller quota selects a prefix of a larger one.
    Rng memory_rng = Rng(hash_tag("memory-selection")).split(site.meta.site_id);

    AdamOptimizer opt(bundle, cfg.beta1, cfg.beta2);
    const bool augment_train = cfg.augment.flip_prob > 0.0 ||
                               cfg.augment.max_rotation_deg > 0.0 ||
                               cfg.augment.max_shift_frac > 0.0;
    detail::StepContext ctx{&bundle, &cfg, use_model_loss, &aug_rng, augment_train};

    const int steps_per_epoch = static_cast<int>(
        (rt.train_refs.size() + cfg.batch_size - 1) / cfg.batch_size);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        std::vector<detail::SampleRef> order = rt.train_refs;
        shuffle_rng.shuffle(order);
        LossBreakdown epoch_sum;
        for (int s = 0; s < steps_per_epoch; ++s) {
            const std::size_t lo = static_cast<std::size_t>(s) * cfg.batch_size;
            const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
            std::vector<detail::SampleRef> batch(order.begin() + lo, order.begin() + hi);

            std::map<std::string, std::vector<const SliceSample*>> rehearsal;
            if (use_model_loss && bundle.phase_index >= 2 && !store.all_empty())
                rehearsal = sample_rehearsal_batch(
                    store, static_cast<std::size_t>(cfg.batch_size), rehearsal_rng);

            StepRecord rec;
            rec.phase = bundle.phase_index;
            rec.epoch = epoch;
            rec.step = s;
            rec.lr = lr;
            rec.loss = detail::train_step(ctx, case_ptrs, batch, rehearsal,
                                          &rec.batch_sites);
            opt.step(lr);

            epoch_sum.l_site += rec.loss.l_site;
            epoch_sum.l_target += rec.loss.l_target;
            epoch_sum.l_source += rec.loss.l_source;
            pr.steps.push_back(std::move(rec));
        }
        const double inv = 1.0 / steps_per_epoch;
        pr.train_epoch_loss.push_back(compose_loss(epoch_sum.l_site * inv,
                                                   epoch_sum.l_target * inv,
                                                   epoch_sum.l_source * inv));
        const auto& val_refs = rt.val_refs.empty() ? rt.train_refs : rt.val_refs;
        pr.val_epoch_loss.push_back(
            detail::measure_loss(bundle, cfg, use_model_loss, rt, val_refs, store));
    }

    pr.source_digest_end = param_digest(bundle, "source");
    if (observer && observer->on_phase_end) observer->on_phase_end(bundle);

    auto predict = detail::target_predictor(bundle);
    for (const SiteDataset* seen : seen_sites)
        if (!seen->test.empty())
            pr.site_metrics[seen->meta.site_id] =
                evaluate_site(predict, *seen, cfg.eval_threshold);

    pr.params = count_parameters(bundle);
    update_memory(store, site, memory_rng);
    pr.memory_after = store.total_size();
    for (const auto& e : store.per_site)
        pr.memory_per_site_after[e.site_id] = e.exemplars.size();
    pr.memory_manifest_json = memory_manifest(store);

    handoff(bundle);
    return pr;
}

// ---------------------------------------------------------------------------
// Scheme runners
// ---------------------------------------------------------------------------

inline std::pair<int, int> input_size_of(const SiteDataset& site) {
    int h = 0, w = 0;
    for (const auto* split : {&site.train, &site.test})
        for (const auto& sample : *split) {
            if (h == 0) { h = sample.image.h; w = sample.image.w; }
            require(sample.image.h == h && sample.image.w == w,
                    "sites must share one input size");
        }
    require(h > 0, "site has no samples");
    return {h, w};
}

inline std::pair<int, int> input_size_of(const std::vector<SiteDataset>& sites) {
    require(!sites.empty(), "no sites");
    std::pair<int, int> hw{0, 0};
    for (const auto& s : sites) {
        const auto shw = input_size_of(s);
        if (hw.first == 0) hw = shw;
        require(shw == hw, "sites must share one input size");
    }
    return hw;
}

// Full sequential ITL stream over the given site order.
inline std::vector<PhaseResult> run_itl(const std::vector<SiteDataset>& sites,
                                        EncoderSpec enc, const DecoderSpec& dec,
                                        const TrainConfig& cfg,
                                        const PhaseObserver* observer = nullptr) {
    cfg.validate();
    require(!sites.empty(), "run_itl: need at least one site");
    if (cfg.ablation == "model_loss_only") {
        enc.pretrained = false;  // from-scratch arm of the component ablation
        enc.weights_path.clear();
    }
    auto [h, w] = input_size_of(sites);
    ModelBundle bundle = build_model(enc, dec, h, w, 1,
                                     mix_seed(cfg.seed, hash_tag("model-init")));
    MemoryStore store;
    store.gamma_percent = cfg.gamma_percent;
    store.selection_seed = cfg.seed;

    std::vector<PhaseResult> results;
    std::vector<const SiteDataset*> seen;
    for (const auto& site : sites) {
        seen.push_back(&site);
        results.push_back(run_phase(bundle, site, store, cfg, seen, observer));
    }
    return results;
}

// Upper bound: one fresh model per site, trained and evaluated in isolation.
// Seeds derive from site ids, so results do not depend on processing order.
inline std::vector<PhaseResult> run_isolated(const std::vector<SiteDataset>& sites,
                                             const EncoderSpec& enc, const DecoderSpec& dec,
                                             const TrainConfig& cfg,
                                             const PhaseObserver* observer = nullptr) {
    cfg.validate();
    require(!sites.empty(), "run_isolated: need at least one site");
    std::vector<PhaseResult> results;
    for (const auto& site : sites) {
        auto [h, w] = input_size_of(site);
        TrainConfig site_cfg = cfg;
        site_cfg.seed = mix_seed(cfg.seed, hash_tag("isolated:" + site.meta.site_id));
        site_cfg.gamma_percent = 0.0;
        site_cfg.ablation = "pretrain_only";  // plain Dice training, no model-level loss
        ModelBundle bundle = build_model(enc, dec, h, w, 1,
                                         mix_seed(site_cfg.seed, hash_tag("model-init")));
        MemoryStore store;
        store.gamma_percent = 0.0;
        results.push_back(run_phase(bundle, site, store, site_cfg, {&site}, observer));
    }
    return results;
}

// Upper bound: one model on the pooled, shuffled multi-site data.
inline std::vector<PhaseResult> run_mixed(const std::vector<SiteDataset>& sites,
                                          const EncoderSpec& enc, const DecoderSpec& dec,
                                          const TrainConfig& cfg,
                                          const PhaseObserver* observer = nullptr) {
    cfg.validate();
    require(!sites.empty(), "run_mixed: need at least one site");
    SiteDataset pooled;
    pooled.meta.site_id = "mixed";
    pooled.meta.modality = sites.front().meta.modality;
    std::size_t cases = 0;
    for (const auto& s : sites) {
        for (const auto& x : s.train) pooled.train.push_back(x);
        cases += static_cast<std::size_t>(s.meta.num_cases);
    }
    pooled.meta.num_cases = static_cast<int>(cases);

    auto [h, w] = input_size_of(sites);
    TrainConfig mcfg = cfg;
    mcfg.ablation = "pretrain_only";  // single site-level objective
    mcfg.gamma_percent = 0.0;
    ModelBundle bundle = build_model(enc, dec, h, w, 1,
                                     mix_seed(cfg.seed, hash_tag("model-init")));
    MemoryStore store;
    store.gamma_percent = 0.0;

    std::vector<const SiteDataset*> seen;
    for (const auto& s : sites) seen.push_back(&s);
    std::vector<PhaseResult> results;
    results.push_back(run_phase(bundle, pooled, store, mcfg, seen, observer));
    results.front().trained_site = "mixed";
    return results;
}

// Lower bound: naive sequential fine-tuning. Identical to ITL with an empty
// memory and the model-level loss disabled.
inline std::vector<PhaseResult> run_multi_lower_bound(
    const std::vector<SiteDataset>& sites, const EncoderSpec& enc, const DecoderSpec& dec,
    const TrainConfig& cfg, const PhaseObserver* observer = nullptr) {
    TrainConfig lcfg = cfg;
    lcfg.gamma_percent = 0.0;
    lcfg.ablation = "pretrain_only";
    return run_itl(sites, enc, dec, lcfg, observer);
}

// Component ablation: pretrain_only drops the model-level loss,
// model_loss_only trains from scratch with the full ITL objective, both is
// the full method.
inline std::vector<PhaseResult> run_ablation(const std::string& mode,
                                             const std::vector<SiteDataset>& sites,
                                             const EncoderSpec& enc, const DecoderSpec& dec,
                                             const TrainConfig& cfg,
                                             const PhaseObserver* observer = nullptr) {
    TrainConfig acfg = cfg;
    if (mode == "pretrain_only") {
        acfg.ablation = "pretrain_only";
        acfg.gamma_percent = 0.0;
    } else if (mode == "model_loss_only") {
        acfg.ablation = "model_loss_only";
    } else if (mode == "both") {
        acfg.ablation = "none";
    } else {
        throw std::runtime_error("run_ablation: invalid mode " + mode);
    }
    return run_itl(sites, enc, dec, acfg, observer);
}

// ---------------------------------------------------------------------------
// Shuffle audit (mixed-site batches must interleave sites)
// ---------------------------------------------------------------------------

// Mean normalized entropy of the per-segment site distribution across
// `n_segments` contiguous segments of one epoch's steps. Near 1 for a good
// shuffle; near 0 for site-blocked ordering.
inline double site_mixing_entropy(const std::vector<StepRecord>& epoch_steps,
                                  int n_segments) {
    require(n_segments >= 1 && !epoch_steps.empty(), "site_mixing_entropy: bad inputs");
    std::set<std::string> site_set;
    for (const auto& s : epoch_steps)
        for (const auto& [site, n] : s.batch_sites) site_set.insert(site);
    if (site_set.size() <= 1) return 0.0;
    const double hmax = std::log(static_cast<double>(site_set.size()));
    double total = 0.0;
    int used = 0;
    for (int seg = 0; seg < n_segments; ++seg) {
        const std::size_t lo = epoch_steps.size() * seg / n_segments;
        const std::size_t hi = epoch_steps.size() * (seg + 1) / n_segments;
        std::map<std::string, double> counts;
        double n = 0;
        for (std::size_t i = lo; i < hi; ++i)
            for (const auto& [site, c] : epoch_steps[i].batch_sites) {
                counts[site] += c;
                n += c;
            }
        if (n == 0) continue;
        double hh = 0.0;
        for (const auto& [site, c] : counts) {
            const double p = c / n;
            hh -= p * std::log(p);
        }
        total += hh / hmax;
        ++used;
    }
    return used ? total / used : 0.0;
}

// ---------------------------------------------------------------------------
// Cost accounting (stored parameters and per-phase data volumes)
// ---------------------------------------------------------------------------

struct CostRow {
    std::string scheme;
    std::size_t stored_parameters = 0;      // deployable model(s)
    std::size_t max_per_phase_data = 0;     // train samples incl. memory
    bool params_grow_with_sites = false;
};

inline CostRow report_costs(const std::string& scheme,
                            const std::vector<PhaseResult>& results) {
    require(!results.empty(), "report_costs: no results");
    CostRow row;
    row.scheme = scheme;
    // deployable model = encoder + target decoder (the frozen source copy is
    // a training-time aid and is not deployed)
    const std::size_t single = results.front().params.trainable;
    if (scheme == "isolated") {
        row.stored_parameters = single * results.size();
        row.params_grow_with_sites = true;
    } else {
        row.stored_parameters = single;
    }
    for (const auto& r : results)
        row.max_per_phase_data =
            std::max(row.max_per_phase_data, r.train_split_size + r.memory_before);
    return row;
}

inline std::string cost_table_csv(const std::vector<CostRow>& rows) {
    std::string out = "scheme,stored_parameters,max_per_phase_train_samples,"
                      "params_grow_with_sites\n";
    for (const auto& r : rows)
        out += r.scheme + "," + std::to_string(r.stored_parameters) + "," +
               std::to_string(r.max_per_phase_data) + "," +
               (r.params_grow_with_sites ? "yes" : "no") + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// JSON serialization of results
// ---------------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const StepRecord& s) {
    j = {{"phase", s.phase}, {"epoch", s.epoch}, {"step", s.step}, {"lr", s.lr},
         {"loss", s.loss}, {"batch_sites", s.batch_sites}};
}

inline void to_json(nlohmann::json& j, const CaseMetrics& c) {
    j = {{"case_id", c.case_id}, {"dsc", c.dsc}, {"hd95_mm", c.hd95_mm}};
}
inline void from_json(const nlohmann::json& j, CaseMetrics& c) {
    c.case_id = j.value("case_id", std::string());
    c.dsc = j.value("dsc", 0.0);
    c.hd95_mm = j.value("hd95_mm", 0.0);
}

inline void to_json(nlohmann::json& j, const SiteMetrics& m) {
    j = {{"site_id", m.site_id}, {"dsc_percent", m.dsc_percent},
         {"hd95_mm", m.hd95_mm}, {"per_case", m.per_case}};
}
inline void from_json(const nlohmann::json& j, SiteMetrics& m) {
    m.site_id = j.value("site_id", std::string());
    m.dsc_percent = j.value("dsc_percent", 0.0);
    m.hd95_mm = j.value("hd95_mm", 0.0);
    if (j.contains("per_case")) m.per_case = j.at("per_case").get<std::vector<CaseMetrics>>();
}

inline void to_json(nlohmann::json& j, const PhaseResult& r) {
    j = {{"phase_index", r.phase_index},
         {"trained_site", r.trained_site},
         {"site_metrics", r.site_metrics},
         {"train_epoch_loss", r.train_epoch_loss},
         {"val_epoch_loss", r.val_epoch_loss},
         {"params_total", r.params.total},
         {"params_trainable", r.params.trainable},
         {"train_split_size", r.train_split_size},
         {"trained_per_epoch", r.trained_per_epoch},
         {"memory_before", r.memory_before},
         {"memory_after", r.memory_after},
         {"memory_per_site_after", r.memory_per_site_after},
         {"source_digest_start", r.source_digest_start},
         {"source_digest_end", r.source_digest_end},
         {"memory_manifest", r.memory_manifest_json}};
}

// Step records live in the JSON-lines training log, not here.
inline void from_json(const nlohmann::json& j, PhaseResult& r) {
    r.phase_index = j.value("phase_index", 1);
    r.trained_site = j.value("trained_site", std::string());
    if (j.contains("site_metrics"))
        r.site_metrics = j.at("site_metrics").get<std::map<std::string, SiteMetrics>>();
    if (j.contains("train_epoch_loss"))
        r.train_epoch_loss = j.at("train_epoch_loss").get<std::vector<LossBreakdown>>();
    if (j.contains("val_epoch_loss"))
        r.val_epoch_loss = j.at("val_epoch_loss").get<std::vector<LossBreakdown>>();
    r.params.total = j.value("params_total", std::size_t{0});
    r.params.trainable = j.value("params_trainable", std::size_t{0});
    r.train_split_size = j.value("train_split_size", std::size_t{0});
    r.trained_per_epoch = j.value("trained_per_epoch", std::size_t{0});
    r.memory_before = j.value("memory_before", std::size_t{0});
    r.memory_after = j.value("memory_after", std::size_t{0});
    if (j.contains("memory_per_site_after"))
        r.memory_per_site_after =
            j.at("memory_per_site_after").get<std::map<std::string, std::size_t>>();
    r.source_digest_start = j.value("source_digest_start", std::uint64_t{0});
    r.source_digest_end = j.value("source_digest_end", std::uint64_t{0});
    if (j.contains("memory_manifest")) r.memory_manifest_json = j.at("memory_manifest");
}

}  // namespace itl
