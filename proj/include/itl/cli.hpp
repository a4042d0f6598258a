#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "itl/config.hpp"
#include "itl/engine.hpp"
#include "itl/report.hpp"

namespace itl {

namespace fs = std::filesystem;

// --out flag beats config.out_dir beats $ITL_OUT_ROOT/<name> beats ./itl_out/<name>.
inline std::string resolve_out_dir(const std::string& flag_out, const std::string& cfg_out,
                                   const std::string& auto_name) {
    if (!flag_out.empty()) return flag_out;
    if (!cfg_out.empty()) return cfg_out;
    const char* root = std::getenv("ITL_OUT_ROOT");
    const fs::path base = root && *root ? fs::path(root) : fs::path("itl_out");
    return (base / auto_name).string();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot write " + path);
    f << content;
    require(f.good(), "write failed: " + path);
}

// ---------------------------------------------------------------------------
// Data loading shared by train/evaluate
// ---------------------------------------------------------------------------

inline std::vector<SiteDataset> load_config_sites(const ExperimentConfig& cfg,
                                                  int target_h, int target_w) {
    std::vector<SiteDataset> sites;
    if (!cfg.synth_specs.empty()) {
        sites = synthesize_sites(cfg.synth_specs, target_h, target_w);
    } else {
        for (const auto& m : cfg.manifests)
            // the split is a property of the dataset: seeded by site_id
            sites.push_back(load_site(m, target_h, target_w, 0));
    }
    if (!cfg.site_order.empty()) {
        require(cfg.site_order.size() == sites.size(),
                "site_order must list every site exactly once");
        std::vector<SiteDataset> ordered;
        for (const auto& id : cfg.site_order) {
            auto it = std::find_if(sites.begin(), sites.end(), [&](const SiteDataset& s) {
                return s.meta.site_id == id;
            });
            require(it != sites.end(), "site_order names unknown site: " + id);
            ordered.push_back(std::move(*it));
            sites.erase(it);
        }
        sites = std::move(ordered);
    }
    return sites;
}

// ---------------------------------------------------------------------------
// synth-data: write manifests + slice files for the configured specs
// ---------------------------------------------------------------------------

inline std::string cmd_synth_data(const ExperimentConfig& cfg, const std::string& out_dir) {
    require(!cfg.synth_specs.empty(), "synth-data requires data.synth_specs");
    fs::create_directories(out_dir);
    std::vector<std::string> manifests;
    for (const auto& spec : cfg.synth_specs)
        manifests.push_back(write_synthetic_site(spec, cfg.image_h, cfg.image_w, out_dir));
    nlohmann::json index{{"manifests", manifests}};
    write_text_file((fs::path(out_dir) / "dataset_index.json").string(),
                    index.dump(2) + "\n");
    std::cout << "wrote " << manifests.size() << " site(s) to " << out_dir << "\n";
    return out_dir;
}

// ---------------------------------------------------------------------------
// train: dispatch on scheme/ablation, persist the full run
// ---------------------------------------------------------------------------

inline std::vector<PhaseResult> dispatch_training(const ExperimentConfig& cfg,
                                                  const std::vector<SiteDataset>& sites,
                                                  const PhaseObserver* observer) {
    const auto& t = cfg.train;
    if (t.scheme == "isolated") return run_isolated(sites, cfg.encoder, cfg.decoder, t, observer);
    if (t.scheme == "mixed") return run_mixed(sites, cfg.encoder, cfg.decoder, t, observer);
    if (t.scheme == "multi")
        return run_multi_lower_bound(sites, cfg.encoder, cfg.decoder, t, observer);
    if (t.ablation != "none")
        return run_ablation(t.ablation, sites, cfg.encoder, cfg.decoder, t, observer);
    return run_itl(sites, cfg.encoder, cfg.decoder, t, observer);
}

inline std::string cmd_train(ExperimentConfig cfg, const std::string& out_dir,
                             std::optional<std::uint64_t> seed_override = std::nullopt) {
    if (seed_override) cfg.train.seed = *seed_override;
    cfg.validate();

    require(!fs::exists(out_dir) || fs::is_empty(out_dir),
            "refusing to overwrite existing run directory: " + out_dir);
    fs::create_directories(fs::path(out_dir) / "checkpoints");

    write_text_file((fs::path(out_dir) / "config.json").string(),
                    experiment_config_json(cfg).dump(2) + "\n");

    auto sites = load_config_sites(cfg, cfg.image_h, cfg.image_w);

    // checkpoints are numbered by completion order: for the itl/multi
    // schemes that is the phase index; for isolated it is the site index
    int completed = 0;
    PhaseObserver observer;
    observer.on_phase_end = [&](const ModelBundle& bundle) {
        const auto path = fs::path(out_dir) / "checkpoints" /
                          ("phase_" + std::to_string(++completed) + ".ckpt");
        save_checkpoint(bundle, path.string());
    };

    auto results = dispatch_training(cfg, sites, &observer);

    // training log: one JSON object per optimizer step
    {
        std::ofstream log((fs::path(out_dir) / "train_log.jsonl").string());
        require(log.good(), "cannot write train log");
        for (const auto& r : results)
            for (const auto& s : r.steps) log << nlohmann::json(s).dump() << "\n";
    }
    write_text_file((fs::path(out_dir) / "phase_results.json").string(),
                    nlohmann::json(results).dump(2) + "\n");
    write_text_file((fs::path(out_dir) / "metrics.csv").string(),
                    metrics_csv(cfg.train.scheme, cfg.encoder.kind,
                                cfg.train.gamma_percent, to_phase_metrics(results)));
    for (const auto& r : results)
        if (!r.memory_manifest_json.is_null())
            write_text_file((fs::path(out_dir) /
                             ("memory_phase_" + std::to_string(r.phase_index) + ".json"))
                                .string(),
                            r.memory_manifest_json.dump(2) + "\n");
    std::cout << "run complete: " << results.size() << " phase(s), outputs in "
              << out_dir << "\n";
    return out_dir;
}

// ---------------------------------------------------------------------------
// evaluate: checkpoint + datasets -> per-site metrics CSV
// ---------------------------------------------------------------------------

inline std::string cmd_evaluate(const std::string& checkpoint_path,
                                const ExperimentConfig& cfg, const std::string& out_dir) {
    ModelBundle bundle = load_checkpoint(checkpoint_path);

    std::vector<SiteDataset> sites;
    if (!cfg.synth_specs.empty()) {
        sites = synthesize_sites(cfg.synth_specs, bundle.input_h, bundle.input_w);
    } else {
        for (const auto& m : cfg.manifests) {
            SiteDataset s = load_site(m, 0, 0, 0);  // native resolution
            const auto [h, w] = input_size_of(s);
            require(h == bundle.input_h && w == bundle.input_w,
                    "checkpoint built for " + std::to_string(bundle.input_h) + "x" +
                        std::to_string(bundle.input_w) + " cannot evaluate " +
                        std::to_string(h) + "x" + std::to_string(w) + " data (" + m + ")");
            sites.push_back(std::move(s));
        }
    }

    auto predict = [&bundle](const AugmentedInput& in) {
        return forward(bundle, in, Branch::target);
    };
    PhaseMetrics pm;
    pm.phase_index = bundle.phase_index;
    pm.trained_site = "checkpoint";
    for (const auto& s : sites) {
        require(!s.test.empty(), "site has no test cases: " + s.meta.site_id);
        pm.site_metrics[s.meta.site_id] = evaluate_site(predict, s, cfg.train.eval_threshold);
    }

    fs::create_directories(out_dir);
    const auto csv_path = (fs::path(out_dir) / "metrics.csv").string();
    write_text_file(csv_path, metrics_csv("evaluate", bundle.encoder_spec.kind,
                                          /*gamma=*/0.0, {pm}));
    std::cout << "wrote " << csv_path << "\n";
    return csv_path;
}

// ---------------------------------------------------------------------------
// report: forgetting matrix, scheme comparison, loss curves, cost table
// ---------------------------------------------------------------------------

struct LoadedRun {
    std::string name;
    std::string scheme;
    std::string backbone;
    double gamma = 0.0;
    std::vector<PhaseResult> results;
};

inline LoadedRun load_run_dir(const std::string& dir) {
    LoadedRun run;
    run.name = fs::path(dir).filename().string();
    if (run.name.empty()) run.name = fs::path(dir).parent_path().filename().string();

    std::ifstream cf((fs::path(dir) / "config.json").string());
    require(cf.good(), "run directory missing config.json: " + dir);
    nlohmann::json jc;
    cf >> jc;
    run.scheme = jc.at("train").value("scheme", std::string("itl"));
    run.backbone = jc.at("encoder").value("kind", std::string("tiny_cnn"));
    run.gamma = jc.at("train").value("gamma_percent", 0.0);

    std::ifstream rf((fs::path(dir) / "phase_results.json").string());
    require(rf.good(), "run directory missing phase_results.json: " + dir);
    nlohmann::json jr;
    rf >> jr;
    run.results = jr.get<std::vector<PhaseResult>>();
    return run;
}

inline std::string cmd_report(const std::vector<std::string>& run_dirs,
                              const std::string& out_dir) {
    require(!run_dirs.empty(), "report needs at least one run directory");
    fs::create_directories(out_dir);

    std::vector<LoadedRun> runs;
    for (const auto& d : run_dirs) runs.push_back(load_run_dir(d));

    std::string comparison = "scheme,backbone,gamma,phase,site,dsc_percent,hd95_mm\n";
    std::vector<CostRow> costs;
    std::vector<LossCurve> overlay;

    for (const auto& run : runs) {
        const auto fm = forgetting_matrix(to_phase_metrics(run.results));
        write_text_file((fs::path(out_dir) / (run.name + "_forgetting_matrix.csv")).string(),
                        forgetting_matrix_csv(fm));
        write_text_file((fs::path(out_dir) / (run.name + "_forgetting_deltas.csv")).string(),
                        forgetting_deltas_csv(fm));

        // scheme comparison uses each run's final phase
        if (!run.results.empty()) {
            const auto final_pm = run.results.back().as_phase_metrics();
            const std::string rows =
                metrics_csv(run.scheme, run.backbone, run.gamma, {final_pm});
            comparison += rows.substr(rows.find('\n') + 1);
        }

        LossCurve curve = loss_curve_of(run.name, run.results);
        write_text_file((fs::path(out_dir) / ("loss_curves_" + run.name + ".svg")).string(),
                        svg_loss_curves({curve}, run.name + " loss"));
        overlay.push_back(std::move(curve));

        costs.push_back(report_costs(run.scheme, run.results));
    }

    write_text_file((fs::path(out_dir) / "scheme_comparison.csv").string(), comparison);
    write_text_file((fs::path(out_dir) / "cost_table.csv").string(), cost_table_csv(costs));
    if (overlay.size() > 1)
        write_text_file((fs::path(out_dir) / "loss_curves_overlay.svg").string(),
                        svg_loss_curves(overlay, "loss comparison"));
    std::cout << "report written to " << out_dir << "\n";
    return out_dir;
}

}  // namespace itl
