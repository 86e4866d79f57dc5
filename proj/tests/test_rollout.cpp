#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fbts/mdp.hpp"
#include "fbts/oracle.hpp"
#include "fbts/rollout.hpp"

using namespace fbts;
using Catch::Matchers::WithinAbs;

namespace {

PolicyModel tabular_policy(const std::vector<ActionId>& actions) {
    PolicyModel pi;
    pi.family = PolicyFamily::tabular;
    pi.action_count = 2;
    pi.n_states = static_cast<int>(actions.size());
    pi.actions = actions;
    return pi;
}

Vfa tabular_vfa(const Vector& values, double v_max) {
    Vfa v = Vfa::zero_tabular(static_cast<int>(values.size()), v_max);
    v.values = values;
    return v;
}

struct MeanWithError {
    double mean = 0.0;
    double se = 0.0;
};

template <typename Fn>
MeanWithError sample_mean(int n, Fn&& draw) {
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = draw(i);
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = std::max(0.0, sq / n - mean * mean);
    return {mean, std::sqrt(var / n)};
}

} // namespace

TEST_CASE("truncated rollout matches the geometric series on the chain", "[rollout]") {
    const FiniteMdp mdp = chain_mdp(3, 0.9);
    const MdpModel model = to_model(mdp);
    const PolicyModel advance = tabular_policy({0, 0, 0});
    RolloutConfig cfg;
    cfg.m0 = 4;
    cfg.t_max = 50;
    RngStream rng = RngStream::from_key({1});
    const double estimate = estimate_policy_value(model, advance, mdp.embed(2), cfg, rng);
    double series = 0.0;
    for (int t = 0; t < 50; ++t) series += std::pow(0.9, t);
    REQUIRE_THAT(estimate, WithinAbs(series, 1e-12));
    REQUIRE_THAT(series, WithinAbs(9.948461757, 1e-6));
}

TEST_CASE("gamma = 0 rollout returns the one-step reward in both modes", "[rollout]") {
    const FiniteMdp mdp = chain_mdp(3, 0.0);
    const MdpModel model = to_model(mdp);
    const PolicyModel advance = tabular_policy({0, 0, 0});
    for (HorizonMode mode : {HorizonMode::truncate, HorizonMode::absorb}) {
        RolloutConfig cfg;
        cfg.m0 = 3;
        cfg.mode = mode;
        RngStream rng = RngStream::from_key({2});
        for (int s = 0; s < 3; ++s) {
            const double estimate = estimate_policy_value(model, advance, mdp.embed(s), cfg, rng);
            REQUIRE_THAT(estimate, WithinAbs(mdp.reward_matrix(s, 0), 1e-12));
        }
    }
}

TEST_CASE("absorption rollouts are unbiased", "[rollout][statistical]") {
    const FiniteMdp mdp = chain_mdp(3, 0.9);
    const MdpModel model = to_model(mdp);
    const PolicyModel advance = tabular_policy({0, 0, 0});
    RolloutConfig cfg;
    cfg.m0 = 1;
    cfg.mode = HorizonMode::absorb;
    RngStream rng = RngStream::from_key({3});
    const auto stats = sample_mean(10000, [&](int i) {
        RngStream sub = rng.substream(i);
        return estimate_policy_value(model, advance, mdp.embed(2), cfg, sub);
    });
    REQUIRE(std::abs(stats.mean - 10.0) <= 3.0 * stats.se);
}

TEST_CASE("truncation bias is bounded by gamma^t_max * v_max", "[rollout]") {
    const FiniteMdp mdp = chain_mdp(4, 0.9);
    const MdpModel model = to_model(mdp);
    const PolicyModel advance = tabular_policy({0, 0, 0, 0});
    const Vector vpi = policy_value(mdp, {0, 0, 0, 0});
    for (int t_max : {5, 10, 20}) {
        RolloutConfig cfg;
        cfg.m0 = 1; // deterministic environment: a single rollout is exact
        cfg.t_max = t_max;
        RngStream rng = RngStream::from_key({4});
        for (int s = 0; s < 4; ++s) {
            const double estimate = estimate_policy_value(model, advance, mdp.embed(s), cfg, rng);
            REQUIRE(std::abs(estimate - vpi[s]) <= std::pow(0.9, t_max) * mdp.v_max() + 1e-12);
        }
    }
}

TEST_CASE("default_t_max honors the documented bias target", "[rollout]") {
    const MdpModel model = to_model(chain_mdp(3, 0.9));
    const int t = default_t_max(model, 1e-3);
    REQUIRE(std::pow(0.9, t) * model.v_max() <= 1e-3);
    REQUIRE(std::pow(0.9, t - 1) * model.v_max() > 1e-3);
}

TEST_CASE("rollout estimates are deterministic given the stream", "[rollout]") {
    const FiniteMdp mdp = random_finite_mdp(4, 2, 0.9, 42);
    const MdpModel model = to_model(mdp);
    const PolicyModel pi = tabular_policy({0, 1, 0, 1});
    RolloutConfig cfg;
    cfg.m0 = 32;
    cfg.mode = HorizonMode::absorb;
    RngStream a = RngStream::from_key({9, 1});
    RngStream b = RngStream::from_key({9, 1});
    const double first = estimate_policy_value(model, pi, mdp.embed(1), cfg, a);
    const double second = estimate_policy_value(model, pi, mdp.embed(1), cfg, b);
    REQUIRE(first == second);
}

TEST_CASE("absorption rollouts that never terminate raise an error", "[rollout]") {
    MdpModel model;
    model.dimension = 1;
    model.action_count = 1;
    model.gamma = 1.0 - 1e-12; // expected absorption time far beyond the step limit
    model.r_max = 1.0;
    model.reward = [](const StateVec&, ActionId) { return 0.0; };
    model.sample_next = [](const StateVec& s, ActionId, RngStream&) { return s; };
    PolicyModel pi;
    pi.family = PolicyFamily::tabular;
    pi.action_count = 1;
    pi.n_states = 1;
    pi.actions = {0};
    RolloutConfig cfg;
    cfg.m0 = 1;
    cfg.mode = HorizonMode::absorb;
    RngStream rng = RngStream::from_key({10});
    StateVec s(1);
    s << 1.0;
    REQUIRE_THROWS_AS(estimate_policy_value(model, pi, s, cfg, rng), std::runtime_error);
}

TEST_CASE("leaf_eval with h = 0 returns the value estimate exactly", "[rollout]") {
    const FiniteMdp mdp = chain_mdp(3, 0.9);
    const MdpModel model = to_model(mdp);
    Vector values(3);
    values << 1.0, 2.0, 3.0;
    const LeafEvaluator ev{tabular_policy({0, 0, 0}), tabular_vfa(values, 10.0), 0};
    RngStream rng = RngStream::from_key({11});
    for (int s = 0; s < 3; ++s)
        REQUIRE_THAT(leaf_eval(model, ev, mdp.embed(s), rng), WithinAbs(values[s], 1e-15));
}

TEST_CASE("leaf_eval with h = 1 on a deterministic step", "[rollout]") {
    const FiniteMdp mdp = chain_mdp(3, 0.9);
    const MdpModel model = to_model(mdp);
    Vector values(3);
    values << 1.0, 2.0, 3.0;
    const LeafEvaluator ev{tabular_policy({0, 0, 0}), tabular_vfa(values, 10.0), 1};
    RngStream rng = RngStream::from_key({12});
    // From state 1: r(1, advance) = 0, lands in state 2.
    REQUIRE_THAT(leaf_eval(model, ev, mdp.embed(1), rng), WithinAbs(0.0 + 0.9 * 3.0, 1e-12));
    // From state 2: r = 1, stays.
    REQUIRE_THAT(leaf_eval(model, ev, mdp.embed(2), rng), WithinAbs(1.0 + 0.9 * 3.0, 1e-12));
}

TEST_CASE("leaf_eval sampling is unbiased for T_pi^h V", "[rollout][statistical]") {
    const FiniteMdp mdp = random_finite_mdp(3, 2, 0.9, 202);
    const MdpModel model = to_model(mdp);
    Vector values(3);
    values << 2.0, 5.0, 7.0;
    const std::vector<ActionId> pi_vec{0, 1, 0};
    const LeafEvaluator ev{tabular_policy(pi_vec), tabular_vfa(values, 10.0), 2};
    const Vector oracle = apply_policy_op(mdp, pi_vec, values, 2);
    RngStream rng = RngStream::from_key({13});
    for (int s = 0; s < 3; ++s) {
        const auto stats = sample_mean(10000, [&](int i) {
            RngStream sub = rng.substream(1000 * s + i);
            return leaf_eval(model, ev, mdp.embed(s), sub);
        });
        REQUIRE(std::abs(stats.mean - oracle[s]) <= 3.0 * stats.se + 1e-9);
    }
}

TEST_CASE("estimate_q is exact on deterministic transitions", "[rollout]") {
    const FiniteMdp mdp = chain_mdp(3, 0.9);
    const MdpModel model = to_model(mdp);
    Vector values(3);
    values << 1.0, 2.0, 3.0;
    const Vfa vfa = tabular_vfa(values, 10.0);
    const Matrix q_oracle = action_values(mdp, values);
    for (int l1 : {1, 7}) {
        RngStream rng = RngStream::from_key({14});
        for (int s = 0; s < 3; ++s)
            for (ActionId a = 0; a < 2; ++a)
                REQUIRE_THAT(estimate_q(model, vfa, mdp.embed(s), a, l1, rng),
                             WithinAbs(q_oracle(s, a), 1e-12));
    }
}

TEST_CASE("estimate_q with gamma = 0 returns the reward", "[rollout]") {
    const FiniteMdp mdp = chain_mdp(3, 0.0);
    const MdpModel model = to_model(mdp);
    const Vfa vfa = tabular_vfa(Vector::Ones(3), 1.0);
    RngStream rng = RngStream::from_key({15});
    for (int s = 0; s < 3; ++s)
        for (ActionId a = 0; a < 2; ++a)
            REQUIRE_THAT(estimate_q(model, vfa, mdp.embed(s), a, 4, rng),
                         WithinAbs(mdp.reward_matrix(s, a), 1e-12));
}

TEST_CASE("estimate_q sampling is unbiased for T_a V", "[rollout][statistical]") {
    const FiniteMdp mdp = random_finite_mdp(3, 2, 0.9, 203);
    const MdpModel model = to_model(mdp);
    Vector values(3);
    values << 1.0, 4.0, 8.0;
    const Vfa vfa = tabular_vfa(values, 10.0);
    const Matrix q_oracle = action_values(mdp, values);
    RngStream rng = RngStream::from_key({16});
    const auto stats = sample_mean(10000, [&](int i) {
        RngStream sub = rng.substream(i);
        return estimate_q(model, vfa, mdp.embed(1), 0, 1, sub);
    });
    REQUIRE(std::abs(stats.mean - q_oracle(1, 0)) <= 3.0 * stats.se + 1e-9);
}

TEST_CASE("estimates stay within range", "[rollout][property]") {
    const FiniteMdp mdp = random_finite_mdp(4, 2, 0.8, 204);
    const MdpModel model = to_model(mdp);
    const PolicyModel pi = tabular_policy({0, 1, 1, 0});
    const Vfa vfa = tabular_vfa(Vector::Constant(4, 2.0), mdp.v_max());
    RngStream rng = RngStream::from_key({17});
    RolloutConfig cfg;
    cfg.m0 = 8;
    for (int trial = 0; trial < 20; ++trial) {
        RngStream sub = rng.substream(trial);
        const int s = trial % 4;
        const double y = estimate_policy_value(model, pi, mdp.embed(s), cfg, sub);
        REQUIRE(y >= -1e-12);
        REQUIRE(y <= model.v_max() + 1e-12);
        const double j = leaf_eval(model, LeafEvaluator{pi, vfa, 3}, mdp.embed(s), sub);
        REQUIRE(j >= -1e-12);
        REQUIRE(j <= model.v_max() + 1e-12);
        const double q = estimate_q(model, vfa, mdp.embed(s), trial % 2, 5, sub);
        REQUIRE(q >= -1e-12);
        REQUIRE(q <= model.v_max() + 1e-12);
    }
}
