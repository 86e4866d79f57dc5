#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "fbts/approx.hpp"
#include "fbts/driver.hpp"
#include "fbts/mdp.hpp"
#include "fbts/oracle.hpp"
#include "fbts/pool.hpp"
#include "fbts/rollout.hpp"

namespace fbts {

enum class BaselineAlgorithm { dpi, avi };

/// Comparison agents sharing the FBTS approximators and environments.
/// `exact_expectations` substitutes finite-MDP oracle operators for the
/// Monte-Carlo estimates (requires `finite`).
struct BaselineConfig {
    BaselineAlgorithm algorithm = BaselineAlgorithm::dpi;
    int iterations = 0; // K
    int n0 = 1;         // AVI regression states per iteration
    int n1 = 1;         // DPI classification states / AVI greedy extraction states
    RolloutConfig rollout;
    SamplingDistributions distributions;
    VfaFamilySpec vfa_family;
    PolicyFamilySpec policy_family;
    bool exact_expectations = false;
    std::shared_ptr<const FiniteMdp> finite; // required for exact mode
    std::uint64_t master_seed = 0;
    int workers = 1;

    void validate() const {
        if (iterations < 0) throw std::invalid_argument("BaselineConfig: K must be >= 0");
        if (n0 < 1 || n1 < 1)
            throw std::invalid_argument("BaselineConfig: n0 and n1 must be >= 1");
        if (workers < 1) throw std::invalid_argument("BaselineConfig: workers must be >= 1");
        if (exact_expectations && !finite)
            throw std::invalid_argument("BaselineConfig: exact mode needs a finite MDP");
        rollout.validate();
    }
};

struct BaselineIteration {
    int k = 0;
    double loss = 0.0;        // fit loss of the iteration
    double mean_target = 0.0; // mean classification target (DPI) / regression target (AVI)
    PolicyModel policy;       // DPI: pi_{k+1}; AVI: empty until extraction
    Vfa vfa;                  // AVI: V_{k+1}
};

struct BaselineResult {
    PolicyModel pi0;
    std::vector<BaselineIteration> iterations;
    PolicyModel final_policy; // DPI: last pi; AVI: greedy extraction
};

namespace detail {

/// Full-rollout action value for DPI: take `a` once, then follow pi.
inline double q_rollout(const MdpModel& mdp, const PolicyModel& pi, const StateVec& s, ActionId a,
                        const RolloutConfig& cfg, RngStream& rng) {
    const int t_max = cfg.t_max > 0 ? cfg.t_max : default_t_max(mdp);
    double total = 0.0;
    for (int j = 0; j < cfg.m0; ++j) {
        RngStream sub = rng.substream(static_cast<std::uint64_t>(j));
        const double r0 = mdp.reward(s, a);
        if (cfg.mode == HorizonMode::truncate) {
            StateVec next = mdp.sample_next(s, a, sub);
            total += r0 + mdp.gamma *
                              detail::rollout_return(mdp, pi, std::move(next), cfg.mode,
                                                     t_max - 1, sub);
        } else {
            // Absorption: survive the first step with probability gamma.
            total += r0;
            if (sub.uniform01() < mdp.gamma) {
                StateVec next = mdp.sample_next(s, a, sub);
                total += detail::rollout_return(mdp, pi, std::move(next), cfg.mode, t_max, sub);
            }
        }
    }
    return total / cfg.m0;
}

inline std::vector<ClassificationSample> q_samples_from_matrix(const FiniteMdp& mdp,
                                                               const std::vector<StateVec>& states,
                                                               const Matrix& q) {
    std::vector<ClassificationSample> samples;
    samples.reserve(states.size());
    for (const auto& s : states) {
        const int idx = mdp.decode(s);
        Vector row = q.row(idx).transpose();
        samples.push_back({s, row.maxCoeff(), std::move(row)});
    }
    return samples;
}

} // namespace detail

/// Direct policy iteration: no value function, no tree search. Each
/// iteration samples states from rho1, estimates Q^{pi_k}(s, a) by full
/// rollouts (exact mode: the tabular oracle), and classifies the greedy
/// improvement with the shared cost-sensitive classifier.
inline BaselineResult dpi_train(
    const MdpModel& mdp, const BaselineConfig& cfg,
    const std::function<bool(const BaselineIteration&)>& on_iteration = nullptr) {
    cfg.validate();
    BaselineResult result;
    result.pi0 = initial_policy(cfg.policy_family, cfg.master_seed);
    PolicyModel pi = result.pi0;
    for (int k = 0; k < cfg.iterations; ++k) {
        const std::uint64_t uk = static_cast<std::uint64_t>(k);
        RngStream draw_rng = derive_stream(cfg.master_seed, uk, RngPhase::rho1_draw, 1);
        const std::vector<StateVec> states = cfg.distributions.rho1.draw(cfg.n1, draw_rng);

        std::vector<ClassificationSample> samples;
        if (cfg.exact_expectations) {
            const Matrix q = action_values(*cfg.finite, policy_value(*cfg.finite,
                                                                     policy_vector(pi, *cfg.finite)));
            samples = detail::q_samples_from_matrix(*cfg.finite, states, q);
        } else {
            const int action_count = mdp.action_count;
            const std::vector<Vector> rows = worker_pool_execute<Vector>(
                states.size(), cfg.workers, [&](std::size_t i) {
                    Vector q(action_count);
                    for (int a = 0; a < action_count; ++a) {
                        RngStream rng = derive_stream(
                            cfg.master_seed, uk, RngPhase::baseline_rollouts,
                            i * static_cast<std::size_t>(action_count) + static_cast<std::size_t>(a));
                        q[a] = detail::q_rollout(mdp, pi, states[i], a, cfg.rollout, rng);
                    }
                    return q;
                });
            samples.reserve(states.size());
            for (std::size_t i = 0; i < states.size(); ++i)
                samples.push_back({states[i], rows[i].maxCoeff(), rows[i]});
        }

        const PolicyFitResult fit = fit_policy_classifier(samples, cfg.policy_family);
        BaselineIteration it;
        it.k = k;
        it.loss = fit.empirical_loss;
        double total = 0.0;
        for (const auto& sample : samples) total += sample.u_hat;
        it.mean_target = total / static_cast<double>(samples.size());
        it.policy = fit.policy;
        pi = fit.policy;
        const bool keep_going = on_iteration ? on_iteration(it) : true;
        result.iterations.push_back(std::move(it));
        if (!keep_going) break;
    }
    result.final_policy = pi;
    return result;
}

/// Approximate value iteration: each iteration samples states from rho0,
/// forms one-step Bellman targets max_a [r + gamma * mean V_k(successors)]
/// (exact mode: a true Bellman sweep), and refits by LAD. The final greedy
/// policy is extracted with the shared classifier on estimate_q samples.
inline BaselineResult avi_train(
    const MdpModel& mdp, const BaselineConfig& cfg,
    const std::function<bool(const BaselineIteration&)>& on_iteration = nullptr) {
    cfg.validate();
    BaselineResult result;
    result.pi0 = initial_policy(cfg.policy_family, cfg.master_seed);
    Vfa vfa;
    if (cfg.vfa_family.family == VfaFamily::tabular) {
        vfa = Vfa::zero_tabular(cfg.vfa_family.n_states, cfg.vfa_family.v_max);
    } else {
        vfa.family = VfaFamily::linear;
        vfa.v_max = cfg.vfa_family.v_max;
        vfa.features = cfg.vfa_family.features;
        vfa.weights = Vector::Zero(cfg.vfa_family.features.dimension_out);
    }

    bool stopped = false;
    for (int k = 0; k < cfg.iterations && !stopped; ++k) {
        const std::uint64_t uk = static_cast<std::uint64_t>(k);
        RngStream draw_rng = derive_stream(cfg.master_seed, uk, RngPhase::rho0_draw, 1);
        const std::vector<StateVec> states = cfg.distributions.rho0.draw(cfg.n0, draw_rng);

        std::vector<LabeledValueSample> samples;
        samples.reserve(states.size());
        if (cfg.exact_expectations) {
            Vector v(cfg.finite->n_states);
            for (int s = 0; s < cfg.finite->n_states; ++s) v[s] = vfa.predict(cfg.finite->embed(s));
            const Vector swept = bellman_sweep(*cfg.finite, v);
            for (const auto& s : states) samples.push_back({s, swept[cfg.finite->decode(s)]});
        } else {
            const int action_count = mdp.action_count;
            const std::vector<double> targets = worker_pool_execute<double>(
                states.size(), cfg.workers, [&](std::size_t i) {
                    double best = 0.0;
                    for (int a = 0; a < action_count; ++a) {
                        RngStream rng = derive_stream(
                            cfg.master_seed, uk, RngPhase::baseline_rollouts,
                            i * static_cast<std::size_t>(action_count) + static_cast<std::size_t>(a));
                        const double q = estimate_q(mdp, vfa, states[i], a, cfg.rollout.l1, rng);
                        best = a == 0 ? q : std::max(best, q);
                    }
                    return best;
                });
            for (std::size_t i = 0; i < states.size(); ++i)
                samples.push_back({states[i], targets[i]});
        }

        const VfaFitResult fit = fit_vfa_lad(samples, cfg.vfa_family);
        vfa = fit.vfa;
        BaselineIteration it;
        it.k = k;
        it.loss = fit.empirical_loss;
        double total = 0.0;
        for (const auto& sample : samples) total += sample.target;
        it.mean_target = total / static_cast<double>(samples.size());
        it.vfa = vfa;
        if (on_iteration && !on_iteration(it)) stopped = true;
        result.iterations.push_back(std::move(it));
    }

    // Greedy extraction through the shared classifier machinery.
    RngStream draw_rng = derive_stream(cfg.master_seed, 0, RngPhase::rho1_draw, 2);
    const std::vector<StateVec> states = cfg.distributions.rho1.draw(cfg.n1, draw_rng);
    std::vector<ClassificationSample> samples;
    if (cfg.exact_expectations) {
        Vector v(cfg.finite->n_states);
        for (int s = 0; s < cfg.finite->n_states; ++s) v[s] = vfa.predict(cfg.finite->embed(s));
        samples = detail::q_samples_from_matrix(*cfg.finite, states, action_values(*cfg.finite, v));
    } else {
        samples.reserve(states.size());
        for (std::size_t i = 0; i < states.size(); ++i) {
            Vector q(mdp.action_count);
            for (int a = 0; a < mdp.action_count; ++a) {
                RngStream rng = derive_stream(cfg.master_seed, cfg.iterations,
                                              RngPhase::q_estimates,
                                              i * static_cast<std::size_t>(mdp.action_count) +
                                                  static_cast<std::size_t>(a));
                q[a] = estimate_q(mdp, vfa, states[i], a, cfg.rollout.l1, rng);
            }
            samples.push_back({states[i], q.maxCoeff(), std::move(q)});
        }
    }
    result.final_policy = fit_policy_classifier(samples, cfg.policy_family).policy;
    return result;
}

} // namespace fbts
