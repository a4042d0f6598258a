#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "itl/engine.hpp"

using namespace itl;

namespace {

// Small, fast site fixtures: 32x32, few slices.
SynthSiteSpec spec32(const std::string& id, std::uint64_t seed, double contrast) {
    SynthSiteSpec s;
    s.site_id = id;
    s.num_cases = 4;
    s.slices_per_case = 3;
    s.intensity_mean = 100.0;
    s.intensity_std = 2.0;
    s.contrast = contrast;
    s.noise_std = 5.0;
    s.rng_seed = seed;
    s.size_range = {0.2, 0.35};
    return s;
}

std::vector<SiteDataset> two_sites() {
    return synthesize_sites({spec32("a", 11, 35.0), spec32("b", 22, 18.0)}, 32, 32);
}

EncoderSpec tiny_enc() {
    EncoderSpec e;
    e.tiny_widths = {3, 4, 5, 6};
    return e;
}

DecoderSpec tiny_dec() {
    DecoderSpec d;
    d.widths = {5, 4, 3, 2};
    return d;
}

TrainConfig fast_cfg(int epochs = 2) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 3;
    c.gamma_percent = 20.0;  // a few exemplars even from tiny sites
    c.seed = 7;
    return c;
}

nlohmann::json trace_json(const std::vector<PhaseResult>& rs) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rs)
        for (const auto& s : r.steps) j.push_back(s);
    return j;
}

std::vector<double> component_params(const ModelBundle& b, const std::string& comp) {
    std::vector<double> p;
    const_cast<ModelBundle&>(b).visit_params(
        comp, [&](const std::string&, std::vector<double>& v, std::vector<double>&) {
            p.insert(p.end(), v.begin(), v.end());
        });
    return p;
}

}  // namespace

TEST_CASE("lr schedule decays multiplicatively at the milestones", "[engine]") {
    TrainConfig cfg;
    REQUIRE(lr_at(0, cfg) == 0.001);
    REQUIRE_THAT(lr_at(60, cfg), Catch::Matchers::WithinAbs(0.00095, 1e-12));
    REQUIRE_THAT(lr_at(80, cfg), Catch::Matchers::WithinAbs(0.0009025, 1e-12));
    REQUIRE_THAT(lr_at(85, cfg), Catch::Matchers::WithinAbs(0.0009025, 1e-12));
    REQUIRE(lr_at(59, cfg) == 0.001);
}

TEST_CASE("phase 1 logs zero model-level loss at every step", "[engine]") {
    auto sites = two_sites();
    auto results = run_itl(sites, tiny_enc(), tiny_dec(), fast_cfg());
    REQUIRE(results.size() == 2);
    for (const auto& s : results[0].steps) {
        REQUIRE(s.loss.l_target == 0.0);
        REQUIRE(s.loss.l_source == 0.0);
        REQUIRE(s.loss.l_all == s.loss.l_site);
    }
    // later phases do rehearse
    bool any_model_loss = false;
    for (const auto& s : results[1].steps) any_model_loss |= s.loss.l_model > 0.0;
    REQUIRE(any_model_loss);
}

TEST_CASE("each phase runs exactly epochs x ceil(n/batch) steps", "[engine]") {
    auto sites = two_sites();
    const auto cfg = fast_cfg(3);
    auto results = run_itl(sites, tiny_enc(), tiny_dec(), cfg);
    for (const auto& r : results) {
        const auto per_epoch = (r.trained_per_epoch + cfg.batch_size - 1) / cfg.batch_size;
        REQUIRE(r.steps.size() == static_cast<std::size_t>(cfg.epochs) * per_epoch);
        REQUIRE(r.train_epoch_loss.size() == static_cast<std::size_t>(cfg.epochs));
        REQUIRE(r.val_epoch_loss.size() == static_cast<std::size_t>(cfg.epochs));
    }
}

TEST_CASE("memory grows by the quota after each phase", "[engine]") {
    auto sites = two_sites();
    const auto cfg = fast_cfg();
    auto results = run_itl(sites, tiny_enc(), tiny_dec(), cfg);
    const std::size_t q0 = quota(cfg.gamma_percent, results[0].train_split_size);
    REQUIRE(results[0].memory_before == 0);
    REQUIRE(results[0].memory_after == q0);
    REQUIRE(results[1].memory_before == q0);
    REQUIRE(results[1].memory_after ==
            q0 + quota(cfg.gamma_percent, results[1].train_split_size));
    REQUIRE(results[1].memory_per_site_after.at("a") == q0);
}

TEST_CASE("source decoder parameters never move within a phase", "[engine]") {
    auto sites = two_sites();
    std::vector<std::vector<double>> starts, ends;
    double source_grad_magnitude = -1.0;
    PhaseObserver obs;
    obs.on_phase_start = [&](const ModelBundle& b) {
        starts.push_back(component_params(b, "source"));
    };
    obs.on_phase_end = [&](const ModelBundle& b) {
        ends.push_back(component_params(b, "source"));
        // the grad buffers still hold the last step's accumulation
        double mag = 0.0;
        const_cast<ModelBundle&>(b).visit_params(
            "source", [&](const std::string&, std::vector<double>&, std::vector<double>& g) {
                for (double d : g) mag += std::abs(d);
            });
        source_grad_magnitude = std::max(source_grad_magnitude, mag);
    };
    auto results = run_itl(sites, tiny_enc(), tiny_dec(), fast_cfg(), &obs);
    REQUIRE(starts.size() == 2);
    REQUIRE(starts[0].empty());      // phase 1 has no source decoder
    REQUIRE_FALSE(starts[1].empty());
    REQUIRE(starts[1] == ends[1]);   // bit-identical across phase 2
    REQUIRE(source_grad_magnitude == 0.0);  // frozen branch accumulates nothing
    for (const auto& r : results)
        REQUIRE(r.source_digest_start == r.source_digest_end);
}

TEST_CASE("pretrained encoder weights flow into phase 1", "[engine]") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "itl_engine_pretrained";
    fs::create_directories(dir);
    auto donor = build_model(tiny_enc(), tiny_dec(), 32, 32, 1, 4242);
    const auto wpath = (dir / "enc.bin").string();
    save_encoder_weights(donor, wpath);
    const auto donor_enc = component_params(donor, "encoder");

    EncoderSpec pre = tiny_enc();
    pre.pretrained = true;
    pre.weights_path = wpath;

    auto sites = synthesize_sites({spec32("solo", 31, 30.0)}, 32, 32);
    std::vector<double> initial_enc;
    PhaseObserver obs;
    obs.on_phase_start = [&](const ModelBundle& b) {
        initial_enc = component_params(b, "encoder");
    };
    TrainConfig cfg = fast_cfg(1);
    run_itl(sites, pre, tiny_dec(), cfg, &obs);
    REQUIRE(initial_enc == donor_enc);

    // the from-scratch ablation arm ignores the pretrained weights
    obs.on_phase_start = [&](const ModelBundle& b) {
        initial_enc = component_params(b, "encoder");
        REQUIRE_FALSE(b.encoder_spec.pretrained);
    };
    run_ablation("model_loss_only", sites, pre, tiny_dec(), cfg, &obs);
    REQUIRE(initial_enc != donor_enc);
}

TEST_CASE("identical config and seed reproduce traces bit for bit", "[engine]") {
    auto sites = two_sites();
    auto r1 = run_itl(sites, tiny_enc(), tiny_dec(), fast_cfg());
    auto r2 = run_itl(sites, tiny_enc(), tiny_dec(), fast_cfg());
    REQUIRE(trace_json(r1) == trace_json(r2));
    REQUIRE(nlohmann::json(r1) == nlohmann::json(r2));

    TrainConfig other = fast_cfg();
    other.seed = 8;
    auto r3 = run_itl(sites, tiny_enc(), tiny_dec(), other);
    REQUIRE(trace_json(r1) != trace_json(r3));
}

TEST_CASE("the lower bound equals ITL with gamma 0 and no model loss", "[engine]") {
    auto sites = two_sites();
    auto lb = run_multi_lower_bound(sites, tiny_enc(), tiny_dec(), fast_cfg());
    TrainConfig cfg = fast_cfg();
    cfg.gamma_percent = 0.0;
    cfg.ablation = "pretrain_only";
    auto itl = run_itl(sites, tiny_enc(), tiny_dec(), cfg);
    REQUIRE(trace_json(lb) == trace_json(itl));
    REQUIRE(nlohmann::json(lb) == nlohmann::json(itl));
    for (const auto& r : lb)
        for (const auto& s : r.steps) REQUIRE(s.loss.l_model == 0.0);
}

TEST_CASE("a one-site stream degenerates to a single phase", "[engine]") {
    auto sites = synthesize_sites({spec32("solo", 31, 30.0)}, 32, 32);
    auto results = run_itl(sites, tiny_enc(), tiny_dec(), fast_cfg());
    REQUIRE(results.size() == 1);
    REQUIRE(results[0].phase_index == 1);
    for (const auto& s : results[0].steps) REQUIRE(s.loss.l_model == 0.0);
}

TEST_CASE("isolated training is order invariant with linear parameter cost", "[engine]") {
    auto sites = two_sites();
    auto fwd = run_isolated(sites, tiny_enc(), tiny_dec(), fast_cfg());
    std::vector<SiteDataset> reversed{sites[1], sites[0]};
    auto bwd = run_isolated(reversed, tiny_enc(), tiny_dec(), fast_cfg());
    REQUIRE(fwd.size() == 2);
    REQUIRE(fwd[0].site_metrics.at("a").dsc_percent ==
            bwd[1].site_metrics.at("a").dsc_percent);
    REQUIRE(fwd[1].site_metrics.at("b").dsc_percent ==
            bwd[0].site_metrics.at("b").dsc_percent);
    // N independent checkpoints
    const auto cost = report_costs("isolated", fwd);
    REQUIRE(cost.stored_parameters == 2 * fwd[0].params.trainable);
    REQUIRE(cost.params_grow_with_sites);
}

TEST_CASE("mixed training pools all sites and interleaves batches", "[engine]") {
    // sites big enough that the per-epoch shuffle audit is statistically stable
    SynthSiteSpec sa = spec32("a", 11, 35.0), sb = spec32("b", 22, 18.0);
    sa.num_cases = sb.num_cases = 8;
    auto sites = synthesize_sites({sa, sb}, 32, 32);
    TrainConfig cfg = fast_cfg(2);
    cfg.batch_size = 5;
    auto results = run_mixed(sites, tiny_enc(), tiny_dec(), cfg);
    REQUIRE(results.size() == 1);
    const auto& r = results[0];
    REQUIRE(r.train_split_size == sites[0].train.size() + sites[1].train.size());
    REQUIRE(r.site_metrics.count("a") == 1);
    REQUIRE(r.site_metrics.count("b") == 1);
    for (const auto& s : r.steps) REQUIRE(s.loss.l_model == 0.0);

    // shuffle audit over the first epoch's steps
    const auto per_epoch = r.steps.size() / 2;
    std::vector<StepRecord> epoch0(r.steps.begin(),
                                   r.steps.begin() + static_cast<long>(per_epoch));
    REQUIRE(site_mixing_entropy(epoch0, 2) > 0.9);
}

TEST_CASE("site mixing entropy separates shuffled from blocked orders", "[engine]") {
    auto step = [](const std::string& site, int n) {
        StepRecord s;
        s.batch_sites[site] = n;
        return s;
    };
    std::vector<StepRecord> blocked, mixed;
    for (int i = 0; i < 10; ++i) blocked.push_back(step("a", 5));
    for (int i = 0; i < 10; ++i) blocked.push_back(step("b", 5));
    for (int i = 0; i < 20; ++i) {
        StepRecord s;
        s.batch_sites["a"] = 3;
        s.batch_sites["b"] = 2;
        mixed.push_back(s);
    }
    REQUIRE(site_mixing_entropy(blocked, 2) < 0.1);
    REQUIRE(site_mixing_entropy(mixed, 2) > 0.95);
}

TEST_CASE("ablation modes dispatch to the right configurations", "[engine]") {
    auto sites = two_sites();
    const auto cfg = fast_cfg();
    auto both = run_ablation("both", sites, tiny_enc(), tiny_dec(), cfg);
    auto full = run_itl(sites, tiny_enc(), tiny_dec(), cfg);
    REQUIRE(trace_json(both) == trace_json(full));

    auto pre = run_ablation("pretrain_only", sites, tiny_enc(), tiny_dec(), cfg);
    for (const auto& r : pre)
        for (const auto& s : r.steps) REQUIRE(s.loss.l_model == 0.0);

    // model_loss_only trains from scratch but keeps the ITL objective
    auto scratch = run_ablation("model_loss_only", sites, tiny_enc(), tiny_dec(), cfg);
    bool any_model_loss = false;
    for (const auto& s : scratch[1].steps) any_model_loss |= s.loss.l_model > 0.0;
    REQUIRE(any_model_loss);

    REQUIRE_THROWS(run_ablation("bogus", sites, tiny_enc(), tiny_dec(), cfg));
}

TEST_CASE("parameter counts stay constant across incremental phases", "[engine]") {
    auto sites3 = synthesize_sites(
        {spec32("a", 11, 35.0), spec32("b", 22, 18.0), spec32("c", 33, 25.0)}, 32, 32);
    auto results = run_itl(sites3, tiny_enc(), tiny_dec(), fast_cfg(1));
    REQUIRE(results.size() == 3);
    REQUIRE(results[1].params.total == results[2].params.total);
    REQUIRE(results[1].params.trainable == results[2].params.trainable);
    // ITL deploys one model regardless of stream length
    const auto cost = report_costs("itl", results);
    REQUIRE(cost.stored_parameters == results[0].params.trainable);
    REQUIRE_FALSE(cost.params_grow_with_sites);
    REQUIRE(cost.max_per_phase_data ==
            results[2].train_split_size + results[2].memory_before);
}

TEST_CASE("validation loss is logged every epoch", "[engine]") {
    auto sites = two_sites();
    auto results = run_itl(sites, tiny_enc(), tiny_dec(), fast_cfg(3));
    for (const auto& r : results)
        for (const auto& v : r.val_epoch_loss) {
            REQUIRE(std::isfinite(v.l_all));
            REQUIRE(v.l_all >= 0.0);
        }
}

TEST_CASE("metrics CSV is byte-identical across reruns", "[engine]") {
    auto sites = two_sites();
    const auto cfg = fast_cfg();
    auto r1 = run_itl(sites, tiny_enc(), tiny_dec(), cfg);
    auto r2 = run_itl(sites, tiny_enc(), tiny_dec(), cfg);
    REQUIRE(metrics_csv("itl", "tiny_cnn", cfg.gamma_percent, to_phase_metrics(r1)) ==
            metrics_csv("itl", "tiny_cnn", cfg.gamma_percent, to_phase_metrics(r2)));
}
