#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fbts/baselines.hpp"
#include "fbts/diagnostics.hpp"
#include "fbts/driver.hpp"
#include "fbts/mdp.hpp"
#include "fbts/serialize.hpp"

namespace fbts::harness {

namespace fs = std::filesystem;

/// The environment as the harness sees it: the generative model plus the
/// tabular ground truth when one exists.
struct Environment {
    std::string name;
    MdpModel model;
    std::shared_ptr<const FiniteMdp> finite; // null for continuous environments
};

/// Counting wrapper: every sampled transition increments the shared counter.
/// Order-independent, so parallel scheduling cannot affect budget decisions
/// taken at iteration barriers.
inline MdpModel with_transition_counter(const MdpModel& model,
                                        std::shared_ptr<std::atomic<long long>> counter) {
    MdpModel wrapped = model;
    auto inner = model.sample_next;
    wrapped.sample_next = [inner, counter](const StateVec& s, ActionId a, RngStream& rng) {
        counter->fetch_add(1, std::memory_order_relaxed);
        return inner(s, a, rng);
    };
    return wrapped;
}

inline Environment make_environment(const Config& cfg) {
    const std::string name = cfg.require_string("environment");
    Environment env;
    env.name = name;
    const double gamma = cfg.get_double("gamma", 0.9);
    if (name == "chain") {
        const int n = static_cast<int>(cfg.get_long("n_states", 5));
        env.finite = std::make_shared<const FiniteMdp>(chain_mdp(n, gamma));
        env.model = to_model(*env.finite);
    } else if (name == "random") {
        const int n = static_cast<int>(cfg.get_long("n_states", 4));
        const int actions = static_cast<int>(cfg.get_long("actions", 2));
        const std::uint64_t env_seed = static_cast<std::uint64_t>(cfg.get_long("env_seed", 0));
        const double r_max = cfg.get_double("r_max", 1.0);
        env.finite = std::make_shared<const FiniteMdp>(
            random_finite_mdp(n, actions, gamma, env_seed, r_max));
        env.model = to_model(*env.finite);
    } else if (name == "puddle") {
        env.model = puddle_nav_mdp(cfg.get_double("noise_sd", 0.0), gamma,
                                   cfg.get_double("r_max", 1.0));
    } else if (name.rfind("file:", 0) == 0) {
        const fs::path path = name.substr(5);
        env.finite = std::make_shared<const FiniteMdp>(
            parse_finite_mdp(io::read_file(path), path.string()));
        env.model = to_model(*env.finite);
        env.name = "file";
    } else {
        throw ConfigError("unknown environment '" + name + "'");
    }
    try {
        if (gamma < 0.0 || gamma >= 1.0) throw ConfigError("gamma must lie in [0,1)");
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return env;
}

inline FeatureMap make_feature_map(const Config& cfg, int dimension) {
    const std::string spec = cfg.get_string("features", "identity");
    if (spec == "identity") return FeatureMap::identity(dimension);
    if (spec == "identity_bias") return FeatureMap::identity_with_bias(dimension);
    if (spec == "constant") return FeatureMap::constant(dimension);
    if (spec.rfind("one_hot_noise:", 0) == 0) {
        const auto rest = spec.substr(14);
        const auto colon = rest.find(':');
        if (colon == std::string::npos)
            throw ConfigError("features one_hot_noise needs the form one_hot_noise:<sd>:<seed>");
        try {
            const double sd = std::stod(rest.substr(0, colon));
            const std::uint64_t seed = std::stoull(rest.substr(colon + 1));
            return FeatureMap::one_hot_plus_noise(dimension, sd, seed);
        } catch (const std::exception&) {
            throw ConfigError("bad one_hot_noise parameters in '" + spec + "'");
        }
    }
    if (spec.rfind("rbf:", 0) == 0) {
        const auto rest = spec.substr(4);
        const auto colon = rest.find(':');
        if (colon == std::string::npos)
            throw ConfigError("features rbf needs the form rbf:<grid>:<bandwidth>");
        try {
            const int grid_n = std::stoi(rest.substr(0, colon));
            const double bandwidth = std::stod(rest.substr(colon + 1));
            return FeatureMap::rbf(dimension, grid_n, bandwidth);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("bad rbf parameters in '" + spec + "'");
        }
    }
    throw ConfigError("unknown feature map '" + spec + "'");
}

inline StateDistribution make_distribution(const Config& cfg, const Environment& env) {
    if (env.finite) {
        const std::string mode = cfg.get_string("draw_mode", "systematic");
        StateDistribution::DrawMode draw;
        if (mode == "systematic")
            draw = StateDistribution::DrawMode::systematic;
        else if (mode == "iid")
            draw = StateDistribution::DrawMode::iid;
        else
            throw ConfigError("unknown draw_mode '" + mode + "'");
        return StateDistribution::finite_uniform(*env.finite, draw);
    }
    return StateDistribution::box(env.model.dimension);
}

inline VfaFamilySpec make_vfa_family(const Config& cfg, const Environment& env) {
    const std::string family = cfg.get_string("vfa_family", "tabular");
    VfaFamilySpec spec;
    spec.v_max = env.model.v_max();
    if (family == "tabular") {
        if (!env.finite) throw ConfigError("tabular vfa_family needs a finite environment");
        spec.family = VfaFamily::tabular;
        spec.n_states = env.finite->n_states;
    } else if (family == "linear") {
        spec.family = VfaFamily::linear;
        spec.features = make_feature_map(cfg, env.model.dimension);
    } else {
        throw ConfigError("unknown vfa_family '" + family + "'");
    }
    return spec;
}

inline PolicyFamilySpec make_policy_family(const Config& cfg, const Environment& env) {
    const std::string family = cfg.get_string("policy_family", "tabular");
    PolicyFamilySpec spec;
    spec.action_count = env.model.action_count;
    if (family == "tabular") {
        if (!env.finite) throw ConfigError("tabular policy_family needs a finite environment");
        spec.family = PolicyFamily::tabular;
        spec.n_states = env.finite->n_states;
    } else if (family == "linear") {
        spec.family = PolicyFamily::linear;
        spec.features = make_feature_map(cfg, env.model.dimension);
    } else {
        throw ConfigError("unknown policy_family '" + family + "'");
    }
    return spec;
}

inline RolloutConfig make_rollout_config(const Config& cfg) {
    RolloutConfig rollout;
    rollout.m0 = static_cast<int>(cfg.get_long("m0", 16));
    rollout.h = static_cast<int>(cfg.get_long("h", 0));
    rollout.l1 = static_cast<int>(cfg.get_long("l1", 8));
    rollout.t_max = static_cast<int>(cfg.get_long("t_max", 0));
    const std::string horizon = cfg.get_string("horizon", "truncate");
    if (horizon == "truncate")
        rollout.mode = HorizonMode::truncate;
    else if (horizon == "absorb")
        rollout.mode = HorizonMode::absorb;
    else
        throw ConfigError("unknown horizon mode '" + horizon + "'");
    return rollout;
}

inline MctsConfig make_mcts_config(const Config& cfg) {
    MctsConfig mcts;
    mcts.m1 = static_cast<int>(cfg.get_long("m1", 400));
    mcts.d = static_cast<int>(cfg.get_long("d", 1));
    mcts.c_ucb = cfg.get_double("c_ucb", 1.0);
    mcts.softmax_temp = cfg.get_double("softmax_temp", 0.0);
    mcts.dpw_alpha = cfg.get_double("dpw_alpha", 0.5);
    mcts.dpw_c = cfg.get_double("dpw_c", 1.0);
    mcts.min_visits = static_cast<int>(cfg.get_long("min_visits", 0));
    const std::string rule = cfg.get_string("root_rule", "max_q_guarded");
    if (rule == "max_q_guarded")
        mcts.root_rule = RootEstimateRule::max_q_guarded;
    else if (rule == "visit_weighted_mean")
        mcts.root_rule = RootEstimateRule::visit_weighted_mean;
    else
        throw ConfigError("unknown root_rule '" + rule + "'");
    return mcts;
}

inline FbtsConfig make_fbts_config(const Config& cfg, const Environment& env,
                                   std::uint64_t master_seed, int workers) {
    FbtsConfig out;
    out.iterations = static_cast<int>(cfg.get_long("K", 1));
    out.n0 = static_cast<int>(cfg.get_long("n0", 4));
    out.n1 = static_cast<int>(cfg.get_long("n1", 4));
    out.rollout = make_rollout_config(cfg);
    out.mcts = make_mcts_config(cfg);
    out.distributions.rho0 = make_distribution(cfg, env);
    out.distributions.rho1 = out.distributions.rho0;
    out.distributions.nu = out.distributions.rho0;
    out.vfa_family = make_vfa_family(cfg, env);
    out.policy_family = make_policy_family(cfg, env);
    out.trajectory.enabled = cfg.get_bool("rho0_trajectory", false);
    out.trajectory.burn_in_max = static_cast<int>(cfg.get_long("traj_burn_in", 10));
    out.trajectory.keep_prob = cfg.get_double("traj_keep_prob", 1.0 / 3.0);
    out.master_seed = master_seed;
    out.workers = workers;
    if (out.trajectory.enabled && env.finite)
        throw ConfigError("rho0_trajectory is a continuous-environment option");
    try {
        out.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return out;
}

inline BaselineConfig make_baseline_config(const Config& cfg, const Environment& env,
                                           BaselineAlgorithm algorithm, std::uint64_t master_seed,
                                           int workers) {
    BaselineConfig out;
    out.algorithm = algorithm;
    out.iterations = static_cast<int>(cfg.get_long("K", 1));
    out.n0 = static_cast<int>(cfg.get_long("n0", 4));
    out.n1 = static_cast<int>(cfg.get_long("n1", 4));
    out.rollout = make_rollout_config(cfg);
    out.distributions.rho0 = make_distribution(cfg, env);
    out.distributions.rho1 = out.distributions.rho0;
    out.distributions.nu = out.distributions.rho0;
    out.vfa_family = make_vfa_family(cfg, env);
    out.policy_family = make_policy_family(cfg, env);
    out.exact_expectations = cfg.get_bool("exact_expectations", false);
    out.finite = env.finite;
    out.master_seed = master_seed;
    out.workers = workers;
    try {
        out.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return out;
}

/// Fixed, documented metrics schema. Suboptimality is empty when the
/// environment has no tabular oracle.
inline constexpr const char* kMetricsHeader =
    "k,regression_loss,classification_loss,suboptimality,mean_u_hat";
inline constexpr const char* kTimingsHeader = "k,phase,seconds";
inline constexpr const char* kDiagnosticsHeader = "k,true_loss,suboptimality";

struct MetricsRow {
    int k = 0;
    std::optional<double> regression_loss;
    std::optional<double> classification_loss;
    std::optional<double> suboptimality;
    std::optional<double> mean_u_hat;

    std::string csv() const {
        const auto cell = [](const std::optional<double>& v) {
            return v ? io::fmt(*v) : std::string();
        };
        return std::to_string(k) + "," + cell(regression_loss) + "," + cell(classification_loss) +
               "," + cell(suboptimality) + "," + cell(mean_u_hat);
    }
};

/// Everything needed to reproduce and resume a run.
struct RunManifest {
    std::string algorithm;
    std::string environment;
    std::uint64_t master_seed = 0;
    int workers = 1;
    int iterations_planned = 0;
    int iterations_completed = 0;
    long long transitions_used = 0;
    double wall_seconds = 0.0;
    std::string config_snapshot;

    std::string serialize() const {
        std::ostringstream out;
        out << "run_manifest v1\n";
        out << "algorithm " << algorithm << "\n";
        out << "environment " << environment << "\n";
        out << "master_seed " << master_seed << "\n";
        out << "workers " << workers << "\n";
        out << "iterations_planned " << iterations_planned << "\n";
        out << "iterations_completed " << iterations_completed << "\n";
        out << "transitions_used " << transitions_used << "\n";
        out << "wall_seconds " << io::fmt(wall_seconds) << "\n";
        out << "config_begin\n" << config_snapshot << "config_end\n";
        return out.str();
    }

    static RunManifest parse(const std::string& text, const std::string& origin = "manifest") {
        std::istringstream in(text);
        std::string line;
        RunManifest m;
        const auto fail = [&](const std::string& why) { throw IntegrityError(origin + ": " + why); };
        if (!std::getline(in, line) || line != "run_manifest v1") fail("bad header");
        const auto read_kv = [&](const char* key) {
            if (!std::getline(in, line)) fail("truncated");
            const std::string prefix = std::string(key) + " ";
            if (line.rfind(prefix, 0) != 0) fail(std::string("expected ") + key);
            return line.substr(prefix.size());
        };
        m.algorithm = read_kv("algorithm");
        m.environment = read_kv("environment");
        m.master_seed = std::stoull(read_kv("master_seed"));
        m.workers = std::stoi(read_kv("workers"));
        m.iterations_planned = std::stoi(read_kv("iterations_planned"));
        m.iterations_completed = std::stoi(read_kv("iterations_completed"));
        m.transitions_used = std::stoll(read_kv("transitions_used"));
        m.wall_seconds = std::stod(read_kv("wall_seconds"));
        if (!std::getline(in, line) || line != "config_begin") fail("expected config_begin");
        std::ostringstream snapshot;
        bool closed = false;
        while (std::getline(in, line)) {
            if (line == "config_end") {
                closed = true;
                break;
            }
            snapshot << line << "\n";
        }
        if (!closed) fail("missing config_end");
        m.config_snapshot = snapshot.str();
        return m;
    }
};

struct RunPaths {
    fs::path out_dir;
    fs::path manifest() const { return out_dir / "manifest.txt"; }
    fs::path metrics() const { return out_dir / "metrics.csv"; }
    fs::path timings() const { return out_dir / "timings.csv"; }
    fs::path mdp_file() const { return out_dir / "mdp.txt"; }
    fs::path policy(int k) const {
        return out_dir / "checkpoints" / ("policy_" + std::to_string(k) + ".txt");
    }
    fs::path vfa(int k) const {
        return out_dir / "checkpoints" / ("vfa_" + std::to_string(k) + ".txt");
    }
    fs::path regression_set(int k) const {
        return out_dir / "checkpoints" / ("regression_set_" + std::to_string(k) + ".txt");
    }
    fs::path search_set(int k) const {
        return out_dir / "checkpoints" / ("search_set_" + std::to_string(k) + ".txt");
    }
    fs::path bound_report() const { return out_dir / "bound_report.txt"; }
    fs::path diagnostics() const { return out_dir / "diagnostics.csv"; }
};

namespace detail {

inline double policy_suboptimality(const Environment& env, const PolicyModel& pi) {
    const Vector uniform = Vector::Constant(env.finite->n_states, 1.0 / env.finite->n_states);
    return suboptimality(*env.finite, policy_vector(pi, *env.finite), uniform);
}

class PhaseClock {
public:
    void start() { begin_ = std::chrono::steady_clock::now(); }
    double stop() {
        const auto end = std::chrono::steady_clock::now();
        return std::chrono::duration<double>(end - begin_).count();
    }

private:
    std::chrono::steady_clock::time_point begin_;
};

} // namespace detail

struct TrainOutcome {
    RunManifest manifest;
    std::vector<MetricsRow> rows;
    PolicyModel final_policy;
};

/// Runs (or resumes) FBTS training with full persistence: config snapshot,
/// manifest, metrics/timings CSVs, per-iteration checkpoints and sample
/// sets, and the environment snapshot for finite MDPs.
inline TrainOutcome train_run(const Config& cfg, const fs::path& out_dir, bool resume = false) {
    const Environment env = make_environment(cfg);
    const std::uint64_t master_seed = static_cast<std::uint64_t>(cfg.get_long("seed", 0));
    const int workers = static_cast<int>(cfg.get_long("workers", 1));
    if (workers < 1) throw ConfigError("workers must be >= 1");
    const long long budget = cfg.get_long("budget_transitions", 0);

    const std::string algorithm = cfg.get_string("algorithm", "fbts");
    if (algorithm != "fbts")
        throw ConfigError("train handles algorithm=fbts; use the baseline command for '" +
                          algorithm + "'");

    RunPaths paths{out_dir};
    FbtsConfig fbts_cfg = make_fbts_config(cfg, env, master_seed, workers);

    auto counter = std::make_shared<std::atomic<long long>>(0);
    const MdpModel model = with_transition_counter(env.model, counter);

    RunManifest manifest;
    manifest.algorithm = "fbts";
    manifest.environment = env.name;
    manifest.master_seed = master_seed;
    manifest.workers = workers;
    manifest.iterations_planned = fbts_cfg.iterations;
    manifest.config_snapshot = cfg.snapshot();

    std::optional<ResumePoint> resume_point;
    std::vector<MetricsRow> rows;
    std::ostringstream metrics;
    std::ostringstream timings;
    if (resume) {
        const RunManifest previous =
            RunManifest::parse(io::read_file(paths.manifest()), paths.manifest().string());
        if (previous.algorithm != manifest.algorithm ||
            previous.master_seed != manifest.master_seed)
            throw IntegrityError("resume: run directory was produced by a different setup");
        ResumePoint point;
        point.next_k = previous.iterations_completed;
        point.policy = parse_policy(io::read_file(paths.policy(previous.iterations_completed)),
                                    paths.policy(previous.iterations_completed).string());
        resume_point = std::move(point);
        manifest.transitions_used = previous.transitions_used;
        counter->store(previous.transitions_used);
        // Keep the already-written metrics prefix byte for byte.
        const std::string old_metrics = io::read_file(paths.metrics());
        metrics << old_metrics;
        timings << io::read_file(paths.timings());
    } else {
        std::filesystem::create_directories(out_dir);
        metrics << kMetricsHeader << "\n";
        timings << kTimingsHeader << "\n";
        io::write_file(paths.policy(0),
                       serialize_policy(initial_policy(fbts_cfg.policy_family, master_seed)));
        if (env.finite) io::write_file(paths.mdp_file(), serialize_finite_mdp(*env.finite));
    }

    detail::PhaseClock total_clock;
    total_clock.start();
    const auto persist_iteration = [&](const IterationArtifacts& art, double seconds) {
        io::write_file(paths.policy(art.k + 1), serialize_policy(art.policy));
        io::write_file(paths.vfa(art.k), serialize_vfa(art.vfa));
        io::write_file(paths.regression_set(art.k), serialize_regression_set(art.regression_set));
        io::write_file(paths.search_set(art.k), serialize_search_set(art.search_set));

        MetricsRow row;
        row.k = art.k;
        row.regression_loss = art.regression_loss;
        row.classification_loss = art.classification_loss;
        if (env.finite) row.suboptimality = detail::policy_suboptimality(env, art.policy);
        row.mean_u_hat = art.mean_u_hat;
        rows.push_back(row);
        metrics << row.csv() << "\n";
        timings << art.k << ",iteration," << io::fmt(seconds) << "\n";

        manifest.iterations_completed = art.k + 1;
        manifest.transitions_used = counter->load();
        manifest.wall_seconds = total_clock.stop();
        io::write_file(paths.metrics(), metrics.str());
        io::write_file(paths.timings(), timings.str());
        io::write_file(paths.manifest(), manifest.serialize());
    };

    detail::PhaseClock iter_clock;
    iter_clock.start();
    TrainOutcome outcome;
    const TrainingResult result = run_training(
        model, fbts_cfg,
        [&](const IterationArtifacts& art) {
            const double seconds = iter_clock.stop();
            persist_iteration(art, seconds);
            iter_clock.start();
            return budget <= 0 || counter->load() < budget;
        },
        resume_point);

    if (manifest.iterations_completed == 0) {
        // K = 0 run: still record the manifest and empty metrics.
        manifest.wall_seconds = total_clock.stop();
        io::write_file(paths.metrics(), metrics.str());
        io::write_file(paths.timings(), timings.str());
        io::write_file(paths.manifest(), manifest.serialize());
    }

    outcome.manifest = manifest;
    outcome.rows = rows;
    outcome.final_policy =
        result.iterations.empty() ? result.pi0 : result.iterations.back().policy;
    return outcome;
}

/// Runs a DPI or AVI baseline with the same persistence layout. The metrics
/// schema is shared: DPI leaves regression_loss empty, AVI leaves
/// classification_loss empty until the final greedy extraction.
inline TrainOutcome baseline_run(const Config& cfg, const std::string& algorithm_name,
                                 const fs::path& out_dir) {
    BaselineAlgorithm algorithm;
    if (algorithm_name == "dpi")
        algorithm = BaselineAlgorithm::dpi;
    else if (algorithm_name == "avi")
        algorithm = BaselineAlgorithm::avi;
    else
        throw ConfigError("unknown baseline algorithm '" + algorithm_name + "'");

    const Environment env = make_environment(cfg);
    const std::uint64_t master_seed = static_cast<std::uint64_t>(cfg.get_long("seed", 0));
    const int workers = static_cast<int>(cfg.get_long("workers", 1));
    const long long budget = cfg.get_long("budget_transitions", 0);
    const BaselineConfig bcfg = make_baseline_config(cfg, env, algorithm, master_seed, workers);

    auto counter = std::make_shared<std::atomic<long long>>(0);
    const MdpModel model = with_transition_counter(env.model, counter);

    RunPaths paths{out_dir};
    std::filesystem::create_directories(out_dir);
    if (env.finite) io::write_file(paths.mdp_file(), serialize_finite_mdp(*env.finite));

    RunManifest manifest;
    manifest.algorithm = algorithm_name;
    manifest.environment = env.name;
    manifest.master_seed = master_seed;
    manifest.workers = workers;
    manifest.iterations_planned = bcfg.iterations;
    manifest.config_snapshot = cfg.snapshot();

    std::ostringstream metrics;
    std::ostringstream timings;
    metrics << kMetricsHeader << "\n";
    timings << kTimingsHeader << "\n";
    io::write_file(paths.policy(0),
                   serialize_policy(initial_policy(bcfg.policy_family, master_seed)));

    detail::PhaseClock total_clock;
    total_clock.start();
    detail::PhaseClock iter_clock;
    iter_clock.start();
    std::vector<MetricsRow> rows;
    const auto on_iteration = [&](const BaselineIteration& it) {
        MetricsRow row;
        row.k = it.k;
        if (algorithm == BaselineAlgorithm::dpi) {
            row.classification_loss = it.loss;
            io::write_file(paths.policy(it.k + 1), serialize_policy(it.policy));
            if (env.finite) row.suboptimality = detail::policy_suboptimality(env, it.policy);
        } else {
            row.regression_loss = it.loss;
            io::write_file(paths.vfa(it.k), serialize_vfa(it.vfa));
        }
        row.mean_u_hat = it.mean_target;
        rows.push_back(row);
        metrics << row.csv() << "\n";
        timings << it.k << ",iteration," << io::fmt(iter_clock.stop()) << "\n";
        iter_clock.start();
        manifest.iterations_completed = it.k + 1;
        manifest.transitions_used = counter->load();
        manifest.wall_seconds = total_clock.stop();
        io::write_file(paths.metrics(), metrics.str());
        io::write_file(paths.timings(), timings.str());
        io::write_file(paths.manifest(), manifest.serialize());
        return budget <= 0 || counter->load() < budget;
    };

    const BaselineResult result = algorithm == BaselineAlgorithm::dpi
                                      ? dpi_train(model, bcfg, on_iteration)
                                      : avi_train(model, bcfg, on_iteration);

    io::write_file(paths.out_dir / "checkpoints" / "final_policy.txt",
                   serialize_policy(result.final_policy));
    manifest.transitions_used = counter->load();
    manifest.wall_seconds = total_clock.stop();
    io::write_file(paths.metrics(), metrics.str());
    io::write_file(paths.timings(), timings.str());
    io::write_file(paths.manifest(), manifest.serialize());

    TrainOutcome outcome;
    outcome.manifest = manifest;
    outcome.rows = rows;
    outcome.final_policy = result.final_policy;
    return outcome;
}

/// Diagnoses a finished finite-environment run: exact per-iteration true
/// loss and suboptimality, the Lemma 1 bound over the checkpointed policy
/// sequence, and the Theorem 1 assembly. Refuses continuous environments.
inline BoundReport diagnose_run(const fs::path& run_dir,
                                const std::optional<fs::path>& mdp_override = std::nullopt) {
    RunPaths paths{run_dir};
    const RunManifest manifest =
        RunManifest::parse(io::read_file(paths.manifest()), paths.manifest().string());
    const Config cfg = Config::parse(manifest.config_snapshot);

    const fs::path mdp_path = mdp_override ? *mdp_override : paths.mdp_file();
    if (!fs::exists(mdp_path))
        throw UnsupportedEnvironmentError(
            "diagnose needs a finite environment; this run has no tabular snapshot (" +
            mdp_path.string() + ")");
    const FiniteMdp mdp = parse_finite_mdp(io::read_file(mdp_path), mdp_path.string());

    std::vector<PolicyVec> policies;
    for (int k = 0; k <= manifest.iterations_completed; ++k) {
        const PolicyModel pi =
            parse_policy(io::read_file(paths.policy(k)), paths.policy(k).string());
        policies.push_back(policy_vector(pi, mdp));
    }

    const Vector uniform = Vector::Constant(mdp.n_states, 1.0 / mdp.n_states);
    const int d = static_cast<int>(cfg.get_long("d", 1));
    const int h = static_cast<int>(cfg.get_long("h", 0));

    std::ostringstream csv;
    csv << kDiagnosticsHeader << "\n";
    for (std::size_t k = 0; k + 1 < policies.size(); ++k) {
        csv << k << "," << io::fmt(true_loss(mdp, policies[k], policies[k + 1], d, uniform)) << ","
            << io::fmt(suboptimality(mdp, policies[k + 1], uniform)) << "\n";
    }
    io::write_file(paths.diagnostics(), csv.str());

    const BoundReport lemma1 = lemma1_check(mdp, policies, uniform, d);

    std::ostringstream report;
    report << "bound_report v1\n";
    report << "lemma1_lhs " << io::fmt(lemma1.lhs) << "\n";
    for (const auto& [name, value] : lemma1.rhs_terms)
        report << "lemma1_term " << name << " " << io::fmt(value) << "\n";
    report << "lemma1_rhs_total " << io::fmt(lemma1.rhs_total) << "\n";
    report << "lemma1_satisfied " << (lemma1.satisfied ? "true" : "false") << "\n";

    const std::string vfa_family = cfg.get_string("vfa_family", "tabular");
    const std::string policy_family = cfg.get_string("policy_family", "tabular");
    if (vfa_family == "tabular" && policy_family == "tabular") {
        const VfaFamilySpec vspec{VfaFamily::tabular, mdp.v_max(), mdp.n_states, {}};
        const PolicyFamilySpec pspec{PolicyFamily::tabular, mdp.action_count, mdp.n_states, {}};
        const BoundReport theorem =
            theorem1_report(mdp, policies, vspec, pspec, d, h, uniform, uniform, uniform);
        report << "theorem1_lhs " << io::fmt(theorem.lhs) << "\n";
        for (const auto& [name, value] : theorem.rhs_terms)
            report << "theorem1_term " << name << " " << io::fmt(value) << "\n";
        report << "theorem1_rhs_total " << io::fmt(theorem.rhs_total) << "\n";
        report << "theorem1_satisfied " << (theorem.satisfied ? "true" : "false") << "\n";
        report << "theorem1_exact " << (theorem.exact ? "true" : "false") << "\n";
    }

    // Sample-size guidance, reported as symbolic forms: the leading
    // constants and the search-accuracy function are not derivable, so the
    // budgets themselves are configuration. Capacity measures are exact for
    // the tabular/linear families and user-overridable.
    const long vcdim = cfg.get_long(
        "vcdim_policy", policy_family == "tabular" ? mdp.n_states
                                                   : cfg.get_long("n_states", mdp.n_states));
    const long pdim = cfg.get_long(
        "pdim_vfa", vfa_family == "tabular" ? mdp.n_states : cfg.get_long("n_states", mdp.n_states));
    report << "capacity vcdim_policy " << vcdim << "\n";
    report << "capacity pdim_vfa " << pdim << "\n";
    report << "sample_size_form n0 (v_max*B'_gamma)^2 * eps^-2 * [log(1/delta) + pdim_vfa*log(v_max*B'_gamma/eps)]\n";
    report << "sample_size_form m0 (v_max*B'_gamma)^2 * eps^-2 * log(n0/delta)\n";
    report << "sample_size_form n1 C1*v_max^2 * eps^-2 * [log(C2/delta) + vcdim_policy*log(e*n1/vcdim_policy)]\n";
    report << "sample_size_form l1 C1*v_max^2 * eps^-2 * [log(C2*n1/delta) + vcdim_policy*log(e*l1/vcdim_policy)]\n";
    report << "sample_size_form m1 m(C3*eps, C4*delta/n1) -- measured empirically, not derived\n";
    io::write_file(paths.bound_report(), report.str());
    return lemma1;
}

} // namespace fbts::harness
