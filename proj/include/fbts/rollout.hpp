#pragma once

#include <cmath>
#include <stdexcept>

#include "fbts/approx.hpp"
#include "fbts/mdp.hpp"

namespace fbts {

enum class HorizonMode { truncate, absorb };

/// Monte-Carlo estimator knobs: m0 rollouts per regression target, leaf
/// rollout length h, l1 one-step samples per (s, a).
struct RolloutConfig {
    int m0 = 1;
    HorizonMode mode = HorizonMode::truncate;
    int t_max = 0; // 0 = derive from eps_tr at use time
    int h = 0;
    int l1 = 1;

    void validate() const {
        if (m0 < 1) throw std::invalid_argument("RolloutConfig: m0 must be >= 1");
        if (l1 < 1) throw std::invalid_argument("RolloutConfig: l1 must be >= 1");
        if (h < 0) throw std::invalid_argument("RolloutConfig: h must be >= 0");
        if (t_max < 0) throw std::invalid_argument("RolloutConfig: t_max must be >= 0");
    }
};

/// Smallest horizon with truncation bias gamma^t * v_max <= eps_tr.
inline int default_t_max(const MdpModel& mdp, double eps_tr = 1e-3) {
    if (mdp.gamma == 0.0) return 1;
    const double ratio = eps_tr * (1.0 - mdp.gamma) / mdp.r_max;
    return std::max(1, static_cast<int>(std::ceil(std::log(ratio) / std::log(mdp.gamma))));
}

namespace detail {

/// One discounted-return sample of pi from s. Truncation stops after t_max
/// steps (bias at most gamma^t_max * v_max); absorption collects undiscounted
/// rewards and stops with probability 1-gamma per step, which is unbiased.
inline double rollout_return(const MdpModel& mdp, const PolicyModel& pi, StateVec s,
                             HorizonMode mode, int t_max, RngStream& rng) {
    double total = 0.0;
    if (mode == HorizonMode::truncate) {
        double discount = 1.0;
        for (int t = 0; t < t_max; ++t) {
            const ActionId a = pi.act(s);
            total += discount * mdp.reward(s, a);
            discount *= mdp.gamma;
            if (discount == 0.0) break;
            s = mdp.sample_next(s, a, rng);
        }
        return total;
    }
    constexpr long kStepLimit = 10000000;
    for (long t = 0;; ++t) {
        if (t >= kStepLimit)
            throw std::runtime_error(
                "rollout_return: absorption rollout exceeded 1e7 steps (rng fault?)");
        const ActionId a = pi.act(s);
        total += mdp.reward(s, a);
        if (rng.uniform01() >= mdp.gamma) break;
        s = mdp.sample_next(s, a, rng);
    }
    return total;
}

} // namespace detail

/// Regression target: sample average of m0 independent rollouts of pi from
/// s. Each rollout draws from its own substream so batch scheduling cannot
/// reorder the estimate.
inline double estimate_policy_value(const MdpModel& mdp, const PolicyModel& pi, const StateVec& s,
                                    const RolloutConfig& cfg, RngStream& rng) {
    cfg.validate();
    const int t_max = cfg.t_max > 0 ? cfg.t_max : default_t_max(mdp);
    double total = 0.0;
    for (int j = 0; j < cfg.m0; ++j) {
        RngStream sub = rng.substream(static_cast<std::uint64_t>(j));
        total += detail::rollout_return(mdp, pi, s, cfg.mode, t_max, sub);
    }
    return total / cfg.m0;
}

/// Leaf evaluator: h on-policy steps of pi_k then a gamma^h-discounted
/// evaluation of V_k at the state reached.
struct LeafEvaluator {
    PolicyModel policy;
    Vfa vfa;
    int h = 0;
};

/// One unbiased sample of J(s) = E[sum_{t<h} gamma^t r(s_t, pi(s_t)) +
/// gamma^h V(s_h)]. h = 0 returns V(s) exactly.
inline double leaf_eval(const MdpModel& mdp, const LeafEvaluator& ev, StateVec s, RngStream& rng) {
    double total = 0.0;
    double discount = 1.0;
    for (int t = 0; t < ev.h; ++t) {
        const ActionId a = ev.policy.act(s);
        total += discount * mdp.reward(s, a);
        discount *= mdp.gamma;
        s = mdp.sample_next(s, a, rng);
    }
    return total + discount * ev.vfa.predict(s);
}

/// One-step action-value estimate: r(s,a) + gamma * mean of V at l1 i.i.d.
/// successor draws.
inline double estimate_q(const MdpModel& mdp, const Vfa& vfa, const StateVec& s, ActionId a,
                         int l1, RngStream& rng) {
    if (l1 < 1) throw std::invalid_argument("estimate_q: l1 must be >= 1");
    double mean_v = 0.0;
    for (int j = 0; j < l1; ++j) {
        RngStream sub = rng.substream(static_cast<std::uint64_t>(j));
        mean_v += vfa.predict(mdp.sample_next(s, a, sub));
    }
    return mdp.reward(s, a) + mdp.gamma * mean_v / l1;
}

} // namespace fbts
