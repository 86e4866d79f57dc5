#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbts/approx.hpp"
#include "fbts/mcts.hpp"
#include "fbts/mdp.hpp"
#include "fbts/pool.hpp"
#include "fbts/rollout.hpp"

namespace fbts {

/// Optional trajectory-style sampler for the regression states on
/// continuous environments: random burn-in, then on-policy steps with
/// subsampling to cut correlation. Off by default; the faithful i.i.d.
/// draw from rho0 is the standard path.
struct TrajectorySamplerConfig {
    bool enabled = false;
    int burn_in_max = 10;    // uniform number of random warmup actions
    double keep_prob = 1.0 / 3.0;
    int max_steps = 10000;   // safety cap per draw
};

/// All knobs of one training run: iteration count K, sample sizes (n0
/// regression states, n1 search roots), rollout and tree-search parameters,
/// sampling distributions, and the approximation families.
struct FbtsConfig {
    int iterations = 0; // K
    int n0 = 1;
    int n1 = 1;
    RolloutConfig rollout; // m0, horizon mode, h, l1
    MctsConfig mcts;       // m1, d, selection and widening constants
    SamplingDistributions distributions;
    VfaFamilySpec vfa_family;
    PolicyFamilySpec policy_family;
    TrajectorySamplerConfig trajectory;
    std::uint64_t master_seed = 0;
    int workers = 1;

    void validate() const {
        if (iterations < 0) throw std::invalid_argument("FbtsConfig: K must be >= 0");
        if (n0 < 1 || n1 < 1) throw std::invalid_argument("FbtsConfig: n0 and n1 must be >= 1");
        if (workers < 1) throw std::invalid_argument("FbtsConfig: workers must be >= 1");
        rollout.validate();
        mcts.validate();
    }
};

/// Everything one iteration produced: the fitted value function V_k, the
/// next policy pi_{k+1}, empirical losses, and both labeled sample sets.
struct IterationArtifacts {
    int k = 0;
    Vfa vfa;            // V_k
    PolicyModel policy; // pi_{k+1}
    double regression_loss = 0.0;
    double classification_loss = 0.0;
    double mean_u_hat = 0.0;
    std::vector<LabeledValueSample> regression_set;  // S_{0,k} with targets
    std::vector<ClassificationSample> search_set;    // S_{1,k} with u_hat, q_hat
};

struct TrainingResult {
    PolicyModel pi0;
    std::vector<IterationArtifacts> iterations;
};

/// Seed-determined starting policy: uniform random actions for the tabular
/// family, zero score weights (action 0 everywhere by the tie rule) for the
/// linear family.
inline PolicyModel initial_policy(const PolicyFamilySpec& spec, std::uint64_t master_seed) {
    PolicyModel pi;
    pi.family = spec.family;
    pi.action_count = spec.action_count;
    if (spec.family == PolicyFamily::tabular) {
        pi.n_states = spec.n_states;
        pi.actions.resize(spec.n_states);
        RngStream rng = derive_stream(master_seed, 0, RngPhase::init_policy, 0);
        for (auto& a : pi.actions)
            a = static_cast<ActionId>(rng.uniform_below(static_cast<std::uint64_t>(spec.action_count)));
    } else {
        pi.features = spec.features;
        pi.score_weights = Matrix::Zero(spec.action_count, spec.features.dimension_out);
    }
    return pi;
}

namespace detail {

inline std::vector<StateVec> draw_trajectory_states(const MdpModel& mdp, const PolicyModel& pi,
                                                    const TrajectorySamplerConfig& traj, int n,
                                                    RngStream& rng) {
    std::vector<StateVec> out;
    out.reserve(n);
    std::uint64_t episode = 0;
    while (static_cast<int>(out.size()) < n) {
        RngStream ep = rng.substream(episode++);
        StateVec s(mdp.dimension);
        for (int i = 0; i < mdp.dimension; ++i) s[i] = ep.uniform01();
        const int burn = static_cast<int>(ep.uniform_below(traj.burn_in_max + 1));
        for (int t = 0; t < burn; ++t)
            s = mdp.sample_next(s, static_cast<ActionId>(ep.uniform_below(mdp.action_count)), ep);
        for (int t = 0; t < traj.max_steps && static_cast<int>(out.size()) < n; ++t) {
            if (ep.uniform01() < traj.keep_prob) out.push_back(s);
            s = mdp.sample_next(s, pi.act(s), ep);
        }
    }
    return out;
}

} // namespace detail

/// One full iteration of the feedback loop:
///   1. draw n0 regression states from rho0 and n1 root states from rho1;
///   2. rollout targets Y_k for every regression state;
///   3. V_k by least-absolute-deviation regression;
///   4. tree search from every root state with LeafEvaluator(pi_k, V_k, h);
///   5. one-step action-value estimates Q_k(s, a) for every root and action;
///   6. pi_{k+1} by cost-sensitive classification.
/// Rollouts, searches, and Q estimates fan out over the worker pool; every
/// unit of work derives its stream from (master_seed, k, phase, index), so
/// results do not depend on the pool width.
inline IterationArtifacts run_iteration(const MdpModel& mdp, const FbtsConfig& cfg,
                                        const PolicyModel& pi_k, int k) {
    cfg.validate();
    try {
        IterationArtifacts art;
        art.k = k;
        const std::uint64_t seed = cfg.master_seed;
        const std::uint64_t uk = static_cast<std::uint64_t>(k);

        // Step 1: sample the two state sets.
        std::vector<StateVec> s0;
        if (cfg.trajectory.enabled) {
            RngStream rng = derive_stream(seed, uk, RngPhase::rho0_draw, 0);
            s0 = detail::draw_trajectory_states(mdp, pi_k, cfg.trajectory, cfg.n0, rng);
        } else {
            RngStream rng = derive_stream(seed, uk, RngPhase::rho0_draw, 0);
            s0 = cfg.distributions.rho0.draw(cfg.n0, rng);
        }
        RngStream rho1_rng = derive_stream(seed, uk, RngPhase::rho1_draw, 0);
        const std::vector<StateVec> s1 = cfg.distributions.rho1.draw(cfg.n1, rho1_rng);

        // Step 2: rollout targets.
        const std::vector<double> targets = worker_pool_execute<double>(
            s0.size(), cfg.workers, [&](std::size_t i) {
                RngStream rng = derive_stream(seed, uk, RngPhase::rollout_targets, i);
                return estimate_policy_value(mdp, pi_k, s0[i], cfg.rollout, rng);
            });
        art.regression_set.reserve(s0.size());
        for (std::size_t i = 0; i < s0.size(); ++i)
            art.regression_set.push_back({s0[i], targets[i]});

        // Step 3: value regression.
        const VfaFitResult vfit = fit_vfa_lad(art.regression_set, cfg.vfa_family);
        art.vfa = vfit.vfa;
        art.regression_loss = vfit.empirical_loss;

        // Step 4: batch tree search.
        const LeafEvaluator evaluator{pi_k, art.vfa, cfg.rollout.h};
        const std::vector<double> u_hats = worker_pool_execute<double>(
            s1.size(), cfg.workers, [&](std::size_t i) {
                RngStream rng = derive_stream(seed, uk, RngPhase::tree_search, i);
                return run_mcts(mdp, evaluator, s1[i], cfg.mcts, rng).u_hat;
            });

        // Step 5: one-step action-value estimates.
        const int action_count = mdp.action_count;
        const std::vector<Vector> q_rows = worker_pool_execute<Vector>(
            s1.size(), cfg.workers, [&](std::size_t i) {
                Vector q(action_count);
                for (int a = 0; a < action_count; ++a) {
                    RngStream rng = derive_stream(
                        seed, uk, RngPhase::q_estimates,
                        i * static_cast<std::size_t>(action_count) + static_cast<std::size_t>(a));
                    q[a] = estimate_q(mdp, art.vfa, s1[i], a, cfg.rollout.l1, rng);
                }
                return q;
            });
        art.search_set.reserve(s1.size());
        double u_total = 0.0;
        for (std::size_t i = 0; i < s1.size(); ++i) {
            art.search_set.push_back({s1[i], u_hats[i], q_rows[i]});
            u_total += u_hats[i];
        }
        art.mean_u_hat = u_total / static_cast<double>(s1.size());

        // Step 6: cost-sensitive classification.
        const PolicyFitResult pfit = fit_policy_classifier(art.search_set, cfg.policy_family);
        art.policy = pfit.policy;
        art.classification_loss = pfit.empirical_loss;
        return art;
    } catch (const std::invalid_argument&) {
        throw;
    } catch (const std::exception& e) {
        throw std::runtime_error("run_iteration k=" + std::to_string(k) + ": " + e.what());
    }
}

/// Continuation point for resumed runs: the policy in force and the next
/// iteration index.
struct ResumePoint {
    PolicyModel policy;
    int next_k = 0;
};

/// K successive iterations threading pi_k. The optional callback sees every
/// finished iteration (for persistence); returning false stops the run early
/// (budget exhaustion), keeping completed artifacts. A resume point replays
/// nothing: streams are keyed by (master_seed, k, phase, index), so the
/// continuation is identical to an uninterrupted run.
inline TrainingResult run_training(
    const MdpModel& mdp, const FbtsConfig& cfg,
    const std::function<bool(const IterationArtifacts&)>& on_iteration = nullptr,
    const std::optional<ResumePoint>& resume = std::nullopt) {
    cfg.validate();
    TrainingResult result;
    result.pi0 = resume ? resume->policy : initial_policy(cfg.policy_family, cfg.master_seed);
    PolicyModel pi = result.pi0;
    for (int k = resume ? resume->next_k : 0; k < cfg.iterations; ++k) {
        IterationArtifacts art = run_iteration(mdp, cfg, pi, k);
        pi = art.policy;
        const bool keep_going = on_iteration ? on_iteration(art) : true;
        result.iterations.push_back(std::move(art));
        if (!keep_going) break;
    }
    return result;
}

} // namespace fbts
