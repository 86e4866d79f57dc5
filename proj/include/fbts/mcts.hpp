#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fbts/mdp.hpp"
#include "fbts/oracle.hpp"
#include "fbts/rollout.hpp"

namespace fbts {

enum class RootEstimateRule { max_q_guarded, visit_weighted_mean };

/// Depth-limited tree search configuration. Zeros for softmax_temp and
/// min_visits select the documented defaults (0.02 * v_max and
/// max(1, m1 / (10 |A|)) respectively). The temperature must stay small
/// relative to the action-value gaps: softmax selection at a fixed
/// temperature keeps the inferior-arm probability near sigmoid(-gap/temp)
/// forever, and the mean backups inherit that mixing as a bias floor that
/// no simulation budget removes. temperature -> 0 recovers argmax UCT.
struct MctsConfig {
    int m1 = 100;
    int d = 1;
    double c_ucb = 1.0;
    double softmax_temp = 0.0;
    double dpw_alpha = 0.5;
    double dpw_c = 1.0;
    RootEstimateRule root_rule = RootEstimateRule::max_q_guarded;
    int min_visits = 0;
    bool collect_debug = false;

    void validate() const {
        if (m1 < 1) throw std::invalid_argument("MctsConfig: m1 must be >= 1");
        if (d < 1) throw std::invalid_argument("MctsConfig: d must be >= 1");
        if (c_ucb <= 0.0) throw std::invalid_argument("MctsConfig: c_ucb must be positive");
        if (softmax_temp < 0.0)
            throw std::invalid_argument("MctsConfig: softmax_temp must be >= 0");
        if (dpw_alpha <= 0.0 || dpw_alpha > 1.0)
            throw std::invalid_argument("MctsConfig: dpw_alpha must lie in (0,1]");
        if (dpw_c <= 0.0) throw std::invalid_argument("MctsConfig: dpw_c must be positive");
        if (min_visits < 0) throw std::invalid_argument("MctsConfig: min_visits must be >= 0");
    }
};

struct BackupRecord {
    long node_id = 0;
    int action = 0;
    double value = 0.0; // discounted return from the node under that action
};

struct NodeActionStat {
    long node_id = 0;
    int depth = 0;
    int action = 0;
    long long n = 0;
    double q = 0.0;
    long long children = 0;
};

/// Root summary of one tree search run.
struct RootResult {
    double u_hat = 0.0;
    Vector action_values; // q(root, a)
    Eigen::VectorX<long long> visit_counts;
    // Populated only when MctsConfig::collect_debug is set.
    std::vector<BackupRecord> trace;
    std::vector<NodeActionStat> node_stats;
    std::string tree_dump;
};

namespace detail {

struct TreeNode {
    long id = 0;
    StateVec state;
    int depth = 0;
    long long visits = 0;

    struct ActionStats {
        long long n = 0;
        double q = 0.0;
        std::vector<std::unique_ptr<TreeNode>> children;
        std::map<std::uint64_t, std::size_t> child_by_key;
    };
    std::vector<ActionStats> actions;

    TreeNode(long id_, StateVec state_, int depth_, int action_count)
        : id(id_), state(std::move(state_)), depth(depth_), actions(action_count) {}
};

inline std::uint64_t coord_hash(const StateVec& s) {
    std::uint64_t h = 1469598103934665603ULL; // FNV-1a over the raw coordinates
    for (int i = 0; i < s.size(); ++i) {
        std::uint64_t bits = 0;
        static_assert(sizeof(double) == sizeof(std::uint64_t));
        std::memcpy(&bits, &s[i], sizeof(bits));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffULL;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

inline std::uint64_t child_key(const MdpModel& mdp, const StateVec& s) {
    if (mdp.state_key) return static_cast<std::uint64_t>(mdp.state_key(s));
    return coord_hash(s);
}

/// Softmax over UCB scores; untried actions are forced first in index order.
inline int select_action(const TreeNode& node, const MctsConfig& cfg, double v_max, double temp,
                         RngStream& rng) {
    const int action_count = static_cast<int>(node.actions.size());
    long long total = 0;
    for (int a = 0; a < action_count; ++a) {
        if (node.actions[a].n == 0) return a;
        total += node.actions[a].n;
    }
    const double log_total = std::log(static_cast<double>(total));
    std::vector<double> score(action_count);
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < action_count; ++a) {
        score[a] = node.actions[a].q +
                   cfg.c_ucb * v_max * std::sqrt(log_total / node.actions[a].n);
        best = std::max(best, score[a]);
    }
    std::vector<double> probs(action_count);
    double norm = 0.0;
    for (int a = 0; a < action_count; ++a) {
        probs[a] = std::exp((score[a] - best) / temp);
        norm += probs[a];
    }
    for (double& p : probs) p /= norm;
    return rng.categorical(probs);
}

/// Existing child drawn proportional to visit counts (lowest ordinal on the
/// CDF walk breaks ties deterministically).
inline TreeNode* pick_existing_child(TreeNode::ActionStats& stats, RngStream& rng) {
    double total = 0.0;
    for (const auto& child : stats.children) total += static_cast<double>(child->visits);
    const double u = rng.uniform01() * total;
    double acc = 0.0;
    for (auto& child : stats.children) {
        acc += static_cast<double>(child->visits);
        if (u < acc) return child.get();
    }
    return stats.children.back().get();
}

inline void dump_tree(const TreeNode& node, std::ostringstream& out) {
    out << "node " << node.id << " depth " << node.depth << " visits " << node.visits;
    for (std::size_t a = 0; a < node.actions.size(); ++a)
        out << " | a" << a << " n=" << node.actions[a].n << " q=" << node.actions[a].q;
    out << '\n';
    for (const auto& stats : node.actions)
        for (const auto& child : stats.children) dump_tree(*child, out);
}

inline void collect_stats(const TreeNode& node, std::vector<NodeActionStat>& out) {
    for (std::size_t a = 0; a < node.actions.size(); ++a) {
        out.push_back({node.id, node.depth, static_cast<int>(a), node.actions[a].n,
                       node.actions[a].q,
                       static_cast<long long>(node.actions[a].children.size())});
        for (const auto& child : node.actions[a].children) collect_stats(*child, out);
    }
}

} // namespace detail

/// Depth-limited Monte-Carlo tree search from a root state: runs exactly
/// cfg.m1 simulations of select (softmax over UCB scores), expand (double
/// progressive widening; a new successor is sampled while the child count is
/// below dpw_c * n(a)^dpw_alpha, merged by state key), evaluate (leaf_eval
/// at the depth-d frontier or at a newly expanded node), and incremental-
/// mean backup. Rewards inside the tree are discounted by gamma^depth and
/// the leaf contribution by gamma^(depth reached).
inline RootResult run_mcts(const MdpModel& mdp, const LeafEvaluator& ev, const StateVec& root_state,
                           const MctsConfig& cfg, RngStream& rng) {
    cfg.validate();
    if (ev.h < 0) throw std::invalid_argument("run_mcts: leaf evaluator h must be >= 0");
    const double v_max = mdp.v_max();
    const double temp = cfg.softmax_temp > 0.0 ? cfg.softmax_temp : 0.02 * v_max;
    const int min_visits =
        cfg.min_visits > 0 ? cfg.min_visits
                           : std::max(1, cfg.m1 / (10 * std::max(1, mdp.action_count)));

    long next_id = 0;
    detail::TreeNode root(next_id++, root_state, 0, mdp.action_count);
    root.visits = 1;

    RootResult result;

    struct PathEntry {
        detail::TreeNode* node;
        int action;
        double reward;
    };
    std::vector<PathEntry> path;

    for (int sim = 0; sim < cfg.m1; ++sim) {
        path.clear();
        detail::TreeNode* node = &root;
        double leaf_value = 0.0;
        for (;;) {
            if (node->depth == cfg.d) {
                leaf_value = leaf_eval(mdp, ev, node->state, rng);
                break;
            }
            const int a = detail::select_action(*node, cfg, v_max, temp, rng);
            auto& stats = node->actions[a];
            const double r = mdp.reward(node->state, a);
            path.push_back({node, a, r});

            const double allowed =
                cfg.dpw_c * std::pow(static_cast<double>(stats.n) + 1.0, cfg.dpw_alpha);
            if (static_cast<double>(stats.children.size()) < allowed) {
                StateVec next = mdp.sample_next(node->state, a, rng);
                const std::uint64_t key = detail::child_key(mdp, next);
                const auto found = stats.child_by_key.find(key);
                if (found != stats.child_by_key.end()) {
                    node = stats.children[found->second].get();
                    node->visits += 1;
                    continue;
                }
                auto child = std::make_unique<detail::TreeNode>(next_id++, std::move(next),
                                                                node->depth + 1, mdp.action_count);
                child->visits = 1;
                detail::TreeNode* leaf = child.get();
                stats.child_by_key.emplace(key, stats.children.size());
                stats.children.push_back(std::move(child));
                leaf_value = leaf_eval(mdp, ev, leaf->state, rng);
                break;
            }
            node = detail::pick_existing_child(stats, rng);
            node->visits += 1;
        }

        double value = leaf_value;
        for (auto it = path.rbegin(); it != path.rend(); ++it) {
            value = it->reward + mdp.gamma * value;
            auto& stats = it->node->actions[it->action];
            stats.n += 1;
            stats.q += (value - stats.q) / static_cast<double>(stats.n);
            if (cfg.collect_debug) result.trace.push_back({it->node->id, it->action, value});
        }
    }

    result.action_values = Vector::Zero(mdp.action_count);
    result.visit_counts = Eigen::VectorX<long long>::Zero(mdp.action_count);
    for (int a = 0; a < mdp.action_count; ++a) {
        result.action_values[a] = root.actions[a].q;
        result.visit_counts[a] = root.actions[a].n;
    }

    if (cfg.root_rule == RootEstimateRule::visit_weighted_mean) {
        double weighted = 0.0;
        long long total = 0;
        for (int a = 0; a < mdp.action_count; ++a) {
            weighted += static_cast<double>(root.actions[a].n) * root.actions[a].q;
            total += root.actions[a].n;
        }
        result.u_hat = total > 0 ? weighted / static_cast<double>(total) : 0.0;
    } else {
        double best = -std::numeric_limits<double>::infinity();
        bool qualified = false;
        for (int a = 0; a < mdp.action_count; ++a)
            if (root.actions[a].n >= min_visits) {
                qualified = true;
                best = std::max(best, root.actions[a].q);
            }
        if (!qualified) {
            // Too few simulations for the guard: fall back to visited actions.
            for (int a = 0; a < mdp.action_count; ++a)
                if (root.actions[a].n > 0) best = std::max(best, root.actions[a].q);
        }
        result.u_hat = best;
    }

    if (cfg.collect_debug) {
        detail::collect_stats(root, result.node_stats);
        std::ostringstream out;
        detail::dump_tree(root, out);
        result.tree_dump = out.str();
    }
    return result;
}

/// Empirical check of the tree-search accuracy contract: for each m in
/// m_grid, the fraction of seeded runs with |u_hat - (T^d J)(s)| <= eps,
/// where J = T_pi^h V is computed exactly from the tabular oracle.
inline std::vector<std::pair<int, double>> empirical_accuracy_curve(
    const FiniteMdp& mdp, const LeafEvaluator& ev, const StateVec& s, int d,
    const std::vector<int>& m_grid, int trials, double eps, RngStream& rng) {
    if (trials < 30) throw std::invalid_argument("empirical_accuracy_curve: trials must be >= 30");
    const MdpModel model = to_model(mdp);
    Vector v(mdp.n_states);
    for (int i = 0; i < mdp.n_states; ++i) v[i] = ev.vfa.predict(mdp.embed(i));
    const Vector j = apply_policy_op(mdp, policy_vector(ev.policy, mdp), v, ev.h);
    const double oracle = apply_bellman(mdp, j, d)[mdp.decode(s)];

    std::vector<std::pair<int, double>> curve;
    for (std::size_t mi = 0; mi < m_grid.size(); ++mi) {
        MctsConfig cfg;
        cfg.m1 = m_grid[mi];
        cfg.d = d;
        int successes = 0;
        for (int t = 0; t < trials; ++t) {
            RngStream sub = rng.substream(1000003ULL * mi + static_cast<std::uint64_t>(t));
            const RootResult res = run_mcts(model, ev, s, cfg, sub);
            if (std::abs(res.u_hat - oracle) <= eps) ++successes;
        }
        curve.emplace_back(m_grid[mi], static_cast<double>(successes) / trials);
    }
    return curve;
}

} // namespace fbts
