#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fbts/driver.hpp"
#include "fbts/harness.hpp"
#include "fbts/oracle.hpp"

using namespace fbts;
using Catch::Matchers::WithinAbs;

namespace {

FbtsConfig chain_config(const FiniteMdp& mdp, int K, std::uint64_t seed) {
    FbtsConfig cfg;
    cfg.iterations = K;
    cfg.n0 = mdp.n_states;
    cfg.n1 = mdp.n_states;
    cfg.rollout.m0 = 64;
    cfg.rollout.h = 2;
    cfg.rollout.l1 = 32;
    cfg.mcts.m1 = 2000;
    cfg.mcts.d = 2;
    cfg.distributions.rho0 =
        StateDistribution::finite_uniform(mdp, StateDistribution::DrawMode::systematic);
    cfg.distributions.rho1 = cfg.distributions.rho0;
    cfg.distributions.nu = StateDistribution::finite_uniform(mdp);
    cfg.vfa_family = {VfaFamily::tabular, mdp.v_max(), mdp.n_states, {}};
    cfg.policy_family = {PolicyFamily::tabular, mdp.action_count, mdp.n_states, {}};
    cfg.master_seed = seed;
    return cfg;
}

double mean_suboptimality(const FiniteMdp& mdp, const PolicyModel& pi) {
    const OracleSolution sol = value_iteration(mdp, 1e-12);
    const Vector vpi = policy_value(mdp, policy_vector(pi, mdp));
    return (sol.v_star - vpi).sum() / mdp.n_states;
}

} // namespace

TEST_CASE("initial_policy is deterministic and family-correct", "[driver]") {
    SECTION("tabular: reproducible random actions") {
        PolicyFamilySpec spec{PolicyFamily::tabular, 3, 6, {}};
        const PolicyModel a = initial_policy(spec, 0);
        const PolicyModel b = initial_policy(spec, 0);
        REQUIRE(a.actions == b.actions);
        for (ActionId act : a.actions) {
            REQUIRE(act >= 0);
            REQUIRE(act < 3);
        }
        const PolicyModel c = initial_policy(spec, 1);
        REQUIRE(a.actions != c.actions); // overwhelmingly likely for 6 states, 3 actions
    }
    SECTION("linear: zero weights act as action 0") {
        PolicyFamilySpec spec{PolicyFamily::linear, 4, 0, FeatureMap::identity(3)};
        const PolicyModel pi = initial_policy(spec, 9);
        StateVec s(3);
        s << 0.3, -2.0, 5.0;
        REQUIRE(pi.act(s) == 0);
    }
}

TEST_CASE("one iteration turns the retreat policy around on the chain", "[driver]") {
    const FiniteMdp mdp = chain_mdp(3, 0.9);
    const MdpModel model = to_model(mdp);
    int successes = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        FbtsConfig cfg = chain_config(mdp, 1, seed);
        PolicyModel retreat;
        retreat.family = PolicyFamily::tabular;
        retreat.action_count = 2;
        retreat.n_states = 3;
        retreat.actions = {1, 1, 1};
        const IterationArtifacts art = run_iteration(model, cfg, retreat, 0);
        if (policy_vector(art.policy, mdp) == PolicyVec{0, 0, 0}) ++successes;
    }
    REQUIRE(successes >= 9);
}

TEST_CASE("sample counts match the configuration", "[driver]") {
    const FiniteMdp mdp = chain_mdp(4, 0.9);
    const MdpModel model = to_model(mdp);
    FbtsConfig cfg = chain_config(mdp, 1, 7);
    cfg.n0 = 7;
    cfg.n1 = 5;
    cfg.rollout.m0 = 3;
    cfg.mcts.m1 = 50;
    const IterationArtifacts art =
        run_iteration(model, cfg, initial_policy(cfg.policy_family, 7), 0);
    REQUIRE(art.regression_set.size() == 7);
    REQUIRE(art.search_set.size() == 5);
    for (const auto& sample : art.search_set) REQUIRE(sample.q_hat.size() == 2);
}

TEST_CASE("K = 0 returns only the initial policy", "[driver]") {
    const FiniteMdp mdp = chain_mdp(3, 0.9);
    const MdpModel model = to_model(mdp);
    const FbtsConfig cfg = chain_config(mdp, 0, 3);
    const TrainingResult result = run_training(model, cfg);
    REQUIRE(result.iterations.empty());
    REQUIRE(result.pi0.actions == initial_policy(cfg.policy_family, 3).actions);
}

TEST_CASE("training is reproducible from the master seed", "[driver]") {
    const FiniteMdp mdp = chain_mdp(3, 0.9);
    const MdpModel model = to_model(mdp);
    FbtsConfig cfg = chain_config(mdp, 2, 11);
    cfg.rollout.m0 = 8;
    cfg.mcts.m1 = 200;
    const TrainingResult a = run_training(model, cfg);
    const TrainingResult b = run_training(model, cfg);
    REQUIRE(a.iterations.size() == b.iterations.size());
    for (std::size_t k = 0; k < a.iterations.size(); ++k) {
        REQUIRE(a.iterations[k].regression_loss == b.iterations[k].regression_loss);
        REQUIRE(a.iterations[k].classification_loss == b.iterations[k].classification_loss);
        REQUIRE(a.iterations[k].policy.actions == b.iterations[k].policy.actions);
        REQUIRE(a.iterations[k].vfa.values == b.iterations[k].vfa.values);
    }
}

TEST_CASE("worker width does not change the artifacts", "[driver]") {
    const FiniteMdp mdp = chain_mdp(4, 0.9);
    const MdpModel model = to_model(mdp);
    FbtsConfig cfg = chain_config(mdp, 2, 13);
    cfg.rollout.m0 = 16;
    cfg.mcts.m1 = 400;
    cfg.workers = 1;
    const TrainingResult serial = run_training(model, cfg);
    cfg.workers = 8;
    const TrainingResult parallel = run_training(model, cfg);
    for (std::size_t k = 0; k < serial.iterations.size(); ++k) {
        REQUIRE(serial.iterations[k].vfa.values == parallel.iterations[k].vfa.values);
        REQUIRE(serial.iterations[k].policy.actions == parallel.iterations[k].policy.actions);
        REQUIRE(serial.iterations[k].mean_u_hat == parallel.iterations[k].mean_u_hat);
        for (std::size_t i = 0; i < serial.iterations[k].search_set.size(); ++i)
            REQUIRE(serial.iterations[k].search_set[i].u_hat ==
                    parallel.iterations[k].search_set[i].u_hat);
    }
}

TEST_CASE("replaying persisted samples reproduces the fits", "[driver]") {
    const FiniteMdp mdp = chain_mdp(4, 0.9);
    const MdpModel model = to_model(mdp);
    FbtsConfig cfg = chain_config(mdp, 1, 17);
    cfg.rollout.m0 = 16;
    cfg.mcts.m1 = 300;
    const IterationArtifacts art =
        run_iteration(model, cfg, initial_policy(cfg.policy_family, 17), 0);
    // pi_{k+1} and V_k depend only on the recorded sample sets.
    const VfaFitResult refit_v = fit_vfa_lad(art.regression_set, cfg.vfa_family);
    REQUIRE(refit_v.vfa.values == art.vfa.values);
    const PolicyFitResult refit_pi = fit_policy_classifier(art.search_set, cfg.policy_family);
    REQUIRE(refit_pi.policy.actions == art.policy.actions);
}

TEST_CASE("the no-rollout variant uses the value function directly", "[driver]") {
    const FiniteMdp mdp = chain_mdp(3, 0.9);
    const MdpModel model = to_model(mdp);
    FbtsConfig cfg = chain_config(mdp, 1, 19);
    cfg.rollout.h = 0; // NR
    cfg.rollout.m0 = 16;
    cfg.mcts.m1 = 500;
    const IterationArtifacts art =
        run_iteration(model, cfg, initial_policy(cfg.policy_family, 19), 0);
    REQUIRE(art.k == 0);
    // h = 0 leaf evaluation is V_k(s) exactly; with V_0 fitted from rollouts
    // of the initial policy the pipeline still runs end to end.
    const LeafEvaluator ev{initial_policy(cfg.policy_family, 19), art.vfa, 0};
    RngStream rng = RngStream::from_key({19});
    for (int s = 0; s < 3; ++s)
        REQUIRE(leaf_eval(model, ev, mdp.embed(s), rng) == art.vfa.predict(mdp.embed(s)));
}

TEST_CASE("three iterations reach optimality on the five-chain", "[driver][statistical]") {
    const FiniteMdp mdp = chain_mdp(5, 0.9);
    const MdpModel model = to_model(mdp);
    const OracleSolution sol = value_iteration(mdp, 1e-12);
    for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
        FbtsConfig cfg = chain_config(mdp, 3, seed);
        const TrainingResult result = run_training(model, cfg);
        const PolicyModel& final_pi = result.iterations.back().policy;
        REQUIRE(policy_vector(final_pi, mdp) == sol.pi_star);
        REQUIRE(mean_suboptimality(mdp, final_pi) <= 0.05 * mdp.v_max());
    }
}

TEST_CASE("iteration errors carry context", "[driver]") {
    const FiniteMdp mdp = chain_mdp(3, 0.9);
    const MdpModel model = to_model(mdp);
    FbtsConfig cfg = chain_config(mdp, 1, 23);
    cfg.vfa_family.n_states = 0; // invalid family spec surfaces from the fit
    REQUIRE_THROWS_AS(run_iteration(model, cfg, initial_policy(cfg.policy_family, 23), 0),
                      std::invalid_argument);
}

TEST_CASE("early stop via callback keeps completed iterations", "[driver]") {
    const FiniteMdp mdp = chain_mdp(3, 0.9);
    const MdpModel model = to_model(mdp);
    FbtsConfig cfg = chain_config(mdp, 5, 29);
    cfg.rollout.m0 = 4;
    cfg.mcts.m1 = 100;
    int seen = 0;
    const TrainingResult result = run_training(model, cfg, [&](const IterationArtifacts&) {
        ++seen;
        return seen < 2;
    });
    REQUIRE(seen == 2);
    REQUIRE(result.iterations.size() == 2);
}

TEST_CASE("trajectory sampling draws regression states from on-policy runs", "[driver]") {
    const MdpModel model = puddle_nav_mdp(0.05, 0.9);
    FbtsConfig cfg;
    cfg.iterations = 1;
    cfg.n0 = 6;
    cfg.n1 = 4;
    cfg.rollout.m0 = 2;
    cfg.rollout.h = 1;
    cfg.rollout.l1 = 2;
    cfg.rollout.t_max = 30;
    cfg.mcts.m1 = 60;
    cfg.mcts.d = 1;
    cfg.distributions.rho0 = StateDistribution::box(2);
    cfg.distributions.rho1 = cfg.distributions.rho0;
    cfg.distributions.nu = cfg.distributions.rho0;
    cfg.vfa_family = {VfaFamily::linear, model.v_max(), 0, FeatureMap::identity_with_bias(2)};
    cfg.policy_family = {PolicyFamily::linear, model.action_count, 0,
                         FeatureMap::identity_with_bias(2)};
    cfg.trajectory.enabled = true;
    cfg.trajectory.burn_in_max = 3;
    cfg.master_seed = 31;
    const IterationArtifacts art =
        run_iteration(model, cfg, initial_policy(cfg.policy_family, 31), 0);
    REQUIRE(art.regression_set.size() == 6);
    for (const auto& sample : art.regression_set) {
        REQUIRE(sample.state.size() == 2);
        REQUIRE(sample.state.minCoeff() >= 0.0);
        REQUIRE(sample.state.maxCoeff() <= 1.0);
    }
    // Same seed draws the same trajectory states.
    const IterationArtifacts again =
        run_iteration(model, cfg, initial_policy(cfg.policy_family, 31), 0);
    for (std::size_t i = 0; i < art.regression_set.size(); ++i)
        REQUIRE(art.regression_set[i].state == again.regression_set[i].state);
}

TEST_CASE("mean suboptimality trends down across iterations", "[driver][statistical]") {
    const FiniteMdp mdp = chain_mdp(5, 0.9);
    const MdpModel model = to_model(mdp);
    std::vector<double> per_k(3, 0.0);
    const int seeds = 10;
    for (std::uint64_t seed = 100; seed < 100 + seeds; ++seed) {
        const TrainingResult result = run_training(model, chain_config(mdp, 3, seed));
        for (std::size_t k = 0; k < result.iterations.size(); ++k)
            per_k[k] += mean_suboptimality(mdp, result.iterations[k].policy) / seeds;
    }
    int inversions = 0;
    for (std::size_t k = 1; k < per_k.size(); ++k) {
        if (per_k[k] > per_k[k - 1]) {
            ++inversions;
            REQUIRE(per_k[k] - per_k[k - 1] <= 0.05 * mdp.v_max());
        }
    }
    REQUIRE(inversions <= 1);
}

TEST_CASE("sample budgets are consumed exactly", "[driver]") {
    const FiniteMdp mdp = chain_mdp(4, 0.9);
    auto counted_run = [&](int m0, int l1) {
        auto counter = std::make_shared<std::atomic<long long>>(0);
        const MdpModel model = harness::with_transition_counter(to_model(mdp), counter);
        FbtsConfig cfg = chain_config(mdp, 1, 77);
        cfg.rollout.m0 = m0;
        cfg.rollout.l1 = l1;
        cfg.rollout.t_max = 20;
        cfg.mcts.m1 = 100;
        (void)run_iteration(model, cfg, initial_policy(cfg.policy_family, 77), 0);
        return counter->load();
    };
    // Doubling l1 adds exactly n1 * |A| * l1 extra one-step draws.
    const long long base = counted_run(16, 8);
    REQUIRE(counted_run(16, 16) - base == 4LL * 2 * 8);
    // Doubling m0 adds exactly n0 * m0 * t_max extra rollout steps.
    REQUIRE(counted_run(32, 8) - base == 4LL * 16 * 20);
}

TEST_CASE("training improves the policy on the continuous benchmark",
          "[driver][statistical]") {
    const MdpModel model = puddle_nav_mdp(0.05, 0.9);
    const FeatureMap rbf = FeatureMap::rbf(2, 4, 0.3);
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        FbtsConfig cfg;
        cfg.iterations = 3;
        cfg.n0 = 64;
        cfg.n1 = 48;
        cfg.rollout.m0 = 8;
        cfg.rollout.h = 1;
        cfg.rollout.l1 = 4;
        cfg.rollout.t_max = 40;
        cfg.mcts.m1 = 400;
        cfg.mcts.d = 1;
        cfg.distributions.rho0 = StateDistribution::box(2);
        cfg.distributions.rho1 = cfg.distributions.rho0;
        cfg.distributions.nu = cfg.distributions.rho0;
        cfg.vfa_family = {VfaFamily::linear, model.v_max(), 0, rbf};
        cfg.policy_family = {PolicyFamily::linear, 5, 0, rbf};
        cfg.master_seed = seed;
        const TrainingResult r = run_training(model, cfg);

        RolloutConfig eval;
        eval.m0 = 300;
        eval.t_max = 60;
        StateVec probe(2);
        probe << 0.2, 0.2;
        RngStream rng_a = RngStream::from_key({555, seed});
        RngStream rng_b = RngStream::from_key({555, seed});
        const double before = estimate_policy_value(model, r.pi0, probe, eval, rng_a);
        const double after =
            estimate_policy_value(model, r.iterations.back().policy, probe, eval, rng_b);
        REQUIRE(after - before >= 0.5);
        total += after - before;
    }
    REQUIRE(total / 3.0 >= 1.0);
}
