#pragma once

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fbts/harness.hpp"

namespace fbts::cli {

namespace fs = std::filesystem;

inline fs::path default_out_root() {
    const char* env = std::getenv("FBTS_OUT_DIR");
    return env && *env ? fs::path(env) : fs::path("runs");
}

inline Config load_config(const std::string& path, const std::vector<std::string>& overrides,
                          std::optional<long> seed, std::optional<long> workers) {
    Config cfg = Config::load(path);
    for (const std::string& spec : overrides) cfg.override_from(spec);
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (workers) cfg.set("workers", std::to_string(*workers));
    return cfg;
}

inline std::vector<long> parse_seed_list(const std::string& spec) {
    std::vector<long> seeds;
    const auto colon = spec.find(':');
    try {
        if (colon != std::string::npos) {
            const long lo = std::stol(spec.substr(0, colon));
            const long hi = std::stol(spec.substr(colon + 1));
            if (hi < lo) throw ConfigError("seed range is empty: " + spec);
            for (long s = lo; s <= hi; ++s) seeds.push_back(s);
        } else {
            std::size_t pos = 0;
            while (pos < spec.size()) {
                const auto comma = spec.find(',', pos);
                const std::string token =
                    spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
                seeds.push_back(std::stol(token));
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("bad --seeds specification '" + spec + "' (use a:b or a,b,c)");
    }
    if (seeds.empty()) throw ConfigError("no seeds in '" + spec + "'");
    return seeds;
}

inline int dispatch(int argc, char** argv) {
    CLI::App app{"batch tree-search reinforcement learning experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::string algorithm = "fbts";
    std::string out_dir;
    std::string seeds_spec;
    std::string run_dir;
    std::string mdp_path;
    std::vector<std::string> overrides;
    std::optional<long> seed;
    std::optional<long> workers;
    bool resume = false;

    CLI::App* train = app.add_subcommand("train", "run feedback-based tree search training");
    train->add_option("--config", config_path, "key = value config file")->required();
    train->add_option("--seed", seed, "master seed (overrides the config)");
    train->add_option("--workers", workers, "worker pool width");
    train->add_option("--out-dir", out_dir, "output directory");
    train->add_option("--override", overrides, "config override key=value (repeatable)");
    train->add_option("--algorithm", algorithm, "training algorithm (fbts)");
    train->add_flag("--resume", resume, "continue an interrupted run in --out-dir");

    CLI::App* baseline = app.add_subcommand("baseline", "run a DPI or AVI comparison agent");
    std::string baseline_algorithm;
    baseline->add_option("--algorithm", baseline_algorithm, "dpi or avi")->required();
    baseline->add_option("--config", config_path, "key = value config file")->required();
    baseline->add_option("--seed", seed, "master seed (overrides the config)");
    baseline->add_option("--workers", workers, "worker pool width");
    baseline->add_option("--out-dir", out_dir, "output directory");
    baseline->add_option("--override", overrides, "config override key=value (repeatable)");

    CLI::App* diagnose = app.add_subcommand("diagnose", "exact bound checks on a finished run");
    diagnose->add_option("--run-dir", run_dir, "directory of a finished run")->required();
    diagnose->add_option("--mdp", mdp_path, "finite MDP file (defaults to the run snapshot)");

    CLI::App* sweep = app.add_subcommand("sweep", "repeat a training config across seeds");
    sweep->add_option("--config", config_path, "key = value config file")->required();
    sweep->add_option("--seeds", seeds_spec, "seed range a:b or list a,b,c")->required();
    sweep->add_option("--workers", workers, "worker pool width");
    sweep->add_option("--out-dir", out_dir, "output directory")->required();
    sweep->add_option("--override", overrides, "config override key=value (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train->parsed()) {
            if (algorithm != "fbts")
                throw ConfigError("train runs algorithm=fbts; '" + algorithm +
                                  "' belongs to the baseline command");
            Config cfg = load_config(config_path, overrides, seed, workers);
            cfg.set("algorithm", "fbts");
            const fs::path dir =
                out_dir.empty()
                    ? default_out_root() / ("fbts_seed" + std::to_string(cfg.get_long("seed", 0)))
                    : fs::path(out_dir);
            const auto outcome = harness::train_run(cfg, dir, resume);
            std::cout << "train: " << outcome.manifest.iterations_completed << " iterations, "
                      << outcome.manifest.transitions_used << " transitions, outputs in " << dir
                      << "\n";
            return 0;
        }
        if (baseline->parsed()) {
            if (baseline_algorithm != "dpi" && baseline_algorithm != "avi")
                throw ConfigError("unknown baseline algorithm '" + baseline_algorithm + "'");
            Config cfg = load_config(config_path, overrides, seed, workers);
            cfg.set("algorithm", baseline_algorithm);
            const fs::path dir = out_dir.empty()
                                     ? default_out_root() / (baseline_algorithm + "_seed" +
                                                             std::to_string(cfg.get_long("seed", 0)))
                                     : fs::path(out_dir);
            const auto outcome = harness::baseline_run(cfg, baseline_algorithm, dir);
            std::cout << "baseline " << baseline_algorithm << ": "
                      << outcome.manifest.iterations_completed << " iterations, outputs in " << dir
                      << "\n";
            return 0;
        }
        if (diagnose->parsed()) {
            const std::optional<fs::path> mdp =
                mdp_path.empty() ? std::nullopt : std::optional<fs::path>(mdp_path);
            const BoundReport report = harness::diagnose_run(run_dir, mdp);
            std::cout << "diagnose: lemma1 " << (report.satisfied ? "satisfied" : "VIOLATED")
                      << " (lhs " << io::fmt(report.lhs) << ", rhs " << io::fmt(report.rhs_total)
                      << "); report in " << run_dir << "\n";
            return 0;
        }
        if (sweep->parsed()) {
            const std::vector<long> seeds = parse_seed_list(seeds_spec);
            const fs::path root(out_dir);
            std::ostringstream summary;
            summary << "seed," << harness::kMetricsHeader << "\n";
            for (const long s : seeds) {
                Config cfg = load_config(config_path, overrides, s, workers);
                cfg.set("algorithm", "fbts");
                const fs::path dir = root / ("seed_" + std::to_string(s));
                const auto outcome = harness::train_run(cfg, dir, false);
                if (!outcome.rows.empty())
                    summary << s << "," << outcome.rows.back().csv() << "\n";
            }
            io::write_file(root / "sweep_summary.csv", summary.str());
            std::cout << "sweep: " << seeds.size() << " runs, summary in "
                      << (root / "sweep_summary.csv") << "\n";
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const UnsupportedEnvironmentError& e) {
        std::cerr << "unsupported environment: " << e.what() << "\n";
        return 3;
    } catch (const IntegrityError& e) {
        std::cerr << "integrity error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

} // namespace fbts::cli
