#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "fbts/mcts.hpp"

using namespace fbts;
using Catch::Matchers::WithinAbs;

namespace {

PolicyModel tabular_policy(const std::vector<ActionId>& actions, int action_count = 2) {
    PolicyModel pi;
    pi.family = PolicyFamily::tabular;
    pi.action_count = action_count;
    pi.n_states = static_cast<int>(actions.size());
    pi.actions = actions;
    return pi;
}

Vfa tabular_vfa(const Vector& values, double v_max) {
    Vfa v = Vfa::zero_tabular(static_cast<int>(values.size()), v_max);
    v.values = values;
    return v;
}

// Two-armed bandit: action 1 pays 1 and action 0 pays 0, both jump to an
// absorbing zero-reward state.
FiniteMdp dominant_arm_mdp(double gamma) {
    FiniteMdp mdp;
    mdp.n_states = 2;
    mdp.action_count = 2;
    mdp.gamma = gamma;
    mdp.r_max = 1.0;
    mdp.transition.assign(2, Matrix::Zero(2, 2));
    for (int a = 0; a < 2; ++a) {
        mdp.transition[a](0, 1) = 1.0;
        mdp.transition[a](1, 1) = 1.0;
    }
    mdp.reward_matrix = Matrix::Zero(2, 2);
    mdp.reward_matrix(0, 1) = 1.0;
    mdp.validate();
    return mdp;
}

LeafEvaluator zero_evaluator(const FiniteMdp& mdp, int h = 0) {
    return {tabular_policy(std::vector<ActionId>(mdp.n_states, 0), mdp.action_count),
            Vfa::zero_tabular(mdp.n_states, mdp.v_max()), h};
}

} // namespace

TEST_CASE("dominant arm is found exactly", "[mcts]") {
    const FiniteMdp mdp = dominant_arm_mdp(0.5);
    const MdpModel model = to_model(mdp);
    MctsConfig cfg;
    cfg.m1 = 200;
    cfg.d = 1;
    RngStream rng = RngStream::from_key({21});
    const RootResult res = run_mcts(model, zero_evaluator(mdp), mdp.embed(0), cfg, rng);
    REQUIRE_THAT(res.u_hat, WithinAbs(1.0, 1e-12));
    REQUIRE(res.visit_counts[1] > res.visit_counts[0]);
    REQUIRE(res.visit_counts.sum() == 200);
}

TEST_CASE("d = 1 search against the exact V* leaf is exact on the chain", "[mcts]") {
    const FiniteMdp mdp = chain_mdp(3, 0.9);
    const MdpModel model = to_model(mdp);
    const OracleSolution sol = value_iteration(mdp, 1e-13);
    const LeafEvaluator ev{tabular_policy({0, 0, 0}), tabular_vfa(sol.v_star, mdp.v_max()), 0};
    MctsConfig cfg;
    cfg.m1 = 2000;
    cfg.d = 1;
    int hits = 0;
    for (int run = 0; run < 100; ++run) {
        RngStream rng = RngStream::from_key({22, static_cast<std::uint64_t>(run)});
        const RootResult res = run_mcts(model, ev, mdp.embed(1), cfg, rng);
        if (std::abs(res.u_hat - 9.0) <= 0.1) ++hits;
    }
    REQUIRE(hits >= 95);
}

TEST_CASE("median error shrinks with simulation budget", "[mcts][statistical]") {
    const FiniteMdp mdp = random_finite_mdp(3, 2, 0.9, 314);
    const MdpModel model = to_model(mdp);
    Vector values(3);
    values << 2.0, 4.0, 6.0;
    const LeafEvaluator ev{tabular_policy({0, 1, 0}), tabular_vfa(values, mdp.v_max()), 1};

    Vector v(3);
    for (int i = 0; i < 3; ++i) v[i] = ev.vfa.predict(mdp.embed(i));
    const Vector j = apply_policy_op(mdp, {0, 1, 0}, v, 1);
    const double oracle = apply_bellman(mdp, j, 2)[0];

    std::vector<double> medians;
    for (int m1 : {100, 400, 1600}) {
        MctsConfig cfg;
        cfg.m1 = m1;
        cfg.d = 2;
        std::vector<double> errs;
        for (int run = 0; run < 31; ++run) {
            RngStream rng = RngStream::from_key({23, static_cast<std::uint64_t>(m1),
                                                 static_cast<std::uint64_t>(run)});
            const RootResult res = run_mcts(model, ev, mdp.embed(0), cfg, rng);
            errs.push_back(std::abs(res.u_hat - oracle));
        }
        std::nth_element(errs.begin(), errs.begin() + 15, errs.end());
        medians.push_back(errs[15]);
    }
    REQUIRE(medians[1] <= medians[0] + 1e-12);
    REQUIRE(medians[2] <= medians[1] + 1e-12);
}

TEST_CASE("visit conservation and depth bound", "[mcts][property]") {
    const FiniteMdp mdp = random_finite_mdp(4, 3, 0.8, 400);
    const MdpModel model = to_model(mdp);
    for (int trial = 0; trial < 5; ++trial) {
        MctsConfig cfg;
        cfg.m1 = 150 + 50 * trial;
        cfg.d = 1 + trial % 3;
        cfg.collect_debug = true;
        RngStream rng = RngStream::from_key({24, static_cast<std::uint64_t>(trial)});
        const RootResult res = run_mcts(model, zero_evaluator(mdp), mdp.embed(trial % 4), cfg, rng);
        REQUIRE(res.visit_counts.sum() == cfg.m1);
        for (const auto& stat : res.node_stats) REQUIRE(stat.depth <= cfg.d);
        bool deep_nodes_have_children = false;
        for (const auto& stat : res.node_stats)
            if (stat.depth == cfg.d && stat.n > 0) deep_nodes_have_children = true;
        REQUIRE_FALSE(deep_nodes_have_children); // depth-d nodes are frontier only
    }
}

TEST_CASE("backed-up q values are the means of the traced returns", "[mcts]") {
    const FiniteMdp mdp = random_finite_mdp(3, 2, 0.9, 500);
    const MdpModel model = to_model(mdp);
    MctsConfig cfg;
    cfg.m1 = 120;
    cfg.d = 2;
    cfg.collect_debug = true;
    RngStream rng = RngStream::from_key({25});
    const RootResult res = run_mcts(model, zero_evaluator(mdp, 1), mdp.embed(0), cfg, rng);

    std::map<std::pair<long, int>, std::pair<long long, double>> grouped;
    for (const auto& rec : res.trace) {
        auto& [count, total] = grouped[{rec.node_id, rec.action}];
        count += 1;
        total += rec.value;
    }
    for (const auto& stat : res.node_stats) {
        const auto it = grouped.find({stat.node_id, stat.action});
        if (it == grouped.end()) {
            REQUIRE(stat.n == 0);
            continue;
        }
        REQUIRE(stat.n == it->second.first);
        REQUIRE_THAT(stat.q, WithinAbs(it->second.second / stat.n, 1e-9));
    }
    REQUIRE_FALSE(res.tree_dump.empty());
}

TEST_CASE("values stay within [0, v_max]", "[mcts][property]") {
    const FiniteMdp mdp = random_finite_mdp(4, 2, 0.9, 600);
    const MdpModel model = to_model(mdp);
    Vector values(4);
    values << 1.0, 3.0, 9.0, 5.0;
    const LeafEvaluator ev{tabular_policy({0, 1, 1, 0}), tabular_vfa(values, mdp.v_max()), 2};
    for (int trial = 0; trial < 5; ++trial) {
        MctsConfig cfg;
        cfg.m1 = 300;
        cfg.d = 2;
        RngStream rng = RngStream::from_key({26, static_cast<std::uint64_t>(trial)});
        const RootResult res = run_mcts(model, ev, mdp.embed(trial % 4), cfg, rng);
        REQUIRE(res.u_hat >= 0.0);
        REQUIRE(res.u_hat <= mdp.v_max() + 1e-9);
        for (int a = 0; a < 2; ++a) {
            REQUIRE(res.action_values[a] >= 0.0);
            REQUIRE(res.action_values[a] <= mdp.v_max() + 1e-9);
        }
    }
}

TEST_CASE("progressive widening throttles children on continuous states", "[mcts]") {
    const MdpModel model = puddle_nav_mdp(0.1, 0.9);
    PolicyModel pi;
    pi.family = PolicyFamily::linear;
    pi.action_count = 5;
    pi.features = FeatureMap::identity_with_bias(2);
    pi.score_weights = Matrix::Zero(5, 3);
    Vfa vfa;
    vfa.family = VfaFamily::linear;
    vfa.v_max = model.v_max();
    vfa.features = FeatureMap::identity_with_bias(2);
    vfa.weights = Vector::Zero(3);
    const LeafEvaluator ev{pi, vfa, 1};
    MctsConfig cfg;
    cfg.m1 = 600;
    cfg.d = 2;
    cfg.collect_debug = true;
    StateVec root(2);
    root << 0.4, 0.4;
    RngStream rng = RngStream::from_key({777});
    const RootResult res = run_mcts(model, ev, root, cfg, rng);
    bool saw_multiple_children = false;
    for (const auto& stat : res.node_stats) {
        REQUIRE(stat.children <= stat.n); // every child creation consumed a visit
        REQUIRE(static_cast<double>(stat.children) <=
                cfg.dpw_c * std::pow(static_cast<double>(std::max(1LL, stat.n)), cfg.dpw_alpha) +
                    1.0);
        if (stat.children > 1) saw_multiple_children = true;
    }
    REQUIRE(saw_multiple_children); // noise actually widened the tree
}

TEST_CASE("seeded runs are bit-identical", "[mcts]") {
    const FiniteMdp mdp = random_finite_mdp(3, 2, 0.9, 700);
    const MdpModel model = to_model(mdp);
    MctsConfig cfg;
    cfg.m1 = 500;
    cfg.d = 2;
    RngStream a = RngStream::from_key({27});
    RngStream b = RngStream::from_key({27});
    const RootResult ra = run_mcts(model, zero_evaluator(mdp, 1), mdp.embed(1), cfg, a);
    const RootResult rb = run_mcts(model, zero_evaluator(mdp, 1), mdp.embed(1), cfg, b);
    REQUIRE(ra.u_hat == rb.u_hat);
    REQUIRE(ra.action_values == rb.action_values);
    REQUIRE(ra.visit_counts == rb.visit_counts);
}

TEST_CASE("root estimate rules", "[mcts]") {
    const FiniteMdp mdp = dominant_arm_mdp(0.5);
    const MdpModel model = to_model(mdp);
    MctsConfig cfg;
    cfg.m1 = 400;
    cfg.d = 1;
    cfg.root_rule = RootEstimateRule::visit_weighted_mean;
    RngStream rng = RngStream::from_key({28});
    const RootResult weighted = run_mcts(model, zero_evaluator(mdp), mdp.embed(0), cfg, rng);
    // The weighted mean mixes the zero arm in, so it sits strictly below 1.
    REQUIRE(weighted.u_hat < 1.0);
    REQUIRE(weighted.u_hat > 0.0);

    cfg.root_rule = RootEstimateRule::max_q_guarded;
    cfg.min_visits = 1;
    RngStream rng2 = RngStream::from_key({28});
    const RootResult guarded = run_mcts(model, zero_evaluator(mdp), mdp.embed(0), cfg, rng2);
    REQUIRE_THAT(guarded.u_hat, WithinAbs(1.0, 1e-12));
}

TEST_CASE("invalid configurations are rejected", "[mcts]") {
    const FiniteMdp mdp = dominant_arm_mdp(0.5);
    const MdpModel model = to_model(mdp);
    RngStream rng = RngStream::from_key({29});
    MctsConfig cfg;
    cfg.m1 = 0;
    REQUIRE_THROWS_AS(run_mcts(model, zero_evaluator(mdp), mdp.embed(0), cfg, rng),
                      std::invalid_argument);
    cfg.m1 = 10;
    cfg.d = 0;
    REQUIRE_THROWS_AS(run_mcts(model, zero_evaluator(mdp), mdp.embed(0), cfg, rng),
                      std::invalid_argument);
    cfg.d = 1;
    cfg.dpw_alpha = 1.5;
    REQUIRE_THROWS_AS(run_mcts(model, zero_evaluator(mdp), mdp.embed(0), cfg, rng),
                      std::invalid_argument);
}

TEST_CASE("accuracy curve sanity", "[mcts][statistical]") {
    SECTION("vacuous epsilon succeeds everywhere") {
        const FiniteMdp mdp = random_finite_mdp(3, 2, 0.9, 800);
        RngStream rng = RngStream::from_key({30});
        const auto curve = empirical_accuracy_curve(mdp, zero_evaluator(mdp), mdp.embed(0), 2,
                                                    {50, 100}, 30, mdp.v_max(), rng);
        for (const auto& [m, frac] : curve) REQUIRE_THAT(frac, WithinAbs(1.0, 1e-12));
    }
    SECTION("dominant arm converges immediately") {
        const FiniteMdp mdp = dominant_arm_mdp(0.5);
        RngStream rng = RngStream::from_key({31});
        const auto curve = empirical_accuracy_curve(mdp, zero_evaluator(mdp), mdp.embed(0), 1,
                                                    {2, 8, 32}, 40, 0.01, rng);
        for (const auto& [m, frac] : curve) REQUIRE_THAT(frac, WithinAbs(1.0, 1e-12));
    }
    SECTION("chain fractions are monotone up to one small inversion") {
        const FiniteMdp mdp = chain_mdp(3, 0.9);
        const OracleSolution sol = value_iteration(mdp, 1e-13);
        const LeafEvaluator ev{tabular_policy({0, 0, 0}), tabular_vfa(sol.v_star, mdp.v_max()), 0};
        RngStream rng = RngStream::from_key({32});
        const auto curve =
            empirical_accuracy_curve(mdp, ev, mdp.embed(0), 2, {50, 200, 800, 3200}, 40, 0.5, rng);
        int inversions = 0;
        for (std::size_t i = 1; i < curve.size(); ++i)
            if (curve[i].second < curve[i - 1].second - 0.05) ++inversions;
        REQUIRE(inversions <= 1);
    }
    SECTION("too few trials are rejected") {
        const FiniteMdp mdp = chain_mdp(3, 0.9);
        RngStream rng = RngStream::from_key({33});
        REQUIRE_THROWS_AS(empirical_accuracy_curve(mdp, zero_evaluator(mdp), mdp.embed(0), 1, {10},
                                                   5, 0.5, rng),
                          std::invalid_argument);
    }
}
