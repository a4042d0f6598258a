#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "itl/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Incremental-transfer learning for multi-site binary segmentation"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint_path;
    std::int64_t seed = -1;
    std::vector<std::string> run_dirs;

    auto* synth = app.add_subcommand("synth-data", "generate synthetic site datasets");
    synth->add_option("--config", config_path, "experiment config")->required();
    synth->add_option("--out", out_dir, "output directory");

    auto* train = app.add_subcommand("train", "train per the configured scheme");
    train->add_option("--config", config_path, "experiment config")->required();
    train->add_option("--out", out_dir, "run directory");
    train->add_option("--seed", seed, "override the config seed");

    auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on datasets");
    evaluate->add_option("--config", config_path, "experiment config (data section)")
        ->required();
    evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    evaluate->add_option("--out", out_dir, "output directory");

    auto* report = app.add_subcommand("report", "build reports from run directories");
    report->add_option("runs", run_dirs, "run directories")->required();
    report->add_option("--out", out_dir, "report directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            auto cfg = itl::load_experiment_config(config_path);
            itl::cmd_synth_data(cfg, itl::resolve_out_dir(out_dir, cfg.out_dir, "dataset"));
        } else if (train->parsed()) {
            auto cfg = itl::load_experiment_config(config_path);
            std::optional<std::uint64_t> seed_override;
            if (seed >= 0) seed_override = static_cast<std::uint64_t>(seed);
            const std::uint64_t eff_seed = seed_override.value_or(cfg.train.seed);
            const std::string auto_name =
                cfg.train.scheme + "-seed" + std::to_string(eff_seed);
            itl::cmd_train(cfg, itl::resolve_out_dir(out_dir, cfg.out_dir, auto_name),
                           seed_override);
        } else if (evaluate->parsed()) {
            auto cfg = itl::load_experiment_config(config_path);
            itl::cmd_evaluate(checkpoint_path, cfg,
                              itl::resolve_out_dir(out_dir, cfg.out_dir, "evaluation"));
        } else if (report->parsed()) {
            itl::cmd_report(run_dirs, itl::resolve_out_dir(out_dir, "", "report"));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
