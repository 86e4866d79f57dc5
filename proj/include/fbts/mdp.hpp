#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "fbts/rng.hpp"

namespace fbts {

/// State vector in the environment's coordinate space.
using StateVec = Eigen::VectorXd;

/// Action index in [0, action_count).
using ActionId = int;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Generative MDP: bounded rewards in [0, r_max], sampler for p(.|s,a),
/// discount gamma in [0,1). All members are immutable after construction and
/// safe to share across workers; randomness comes only from the caller's
/// stream.
struct MdpModel {
    int dimension = 0;
    int action_count = 0;
    double gamma = 0.0;
    double r_max = 1.0;
    std::function<double(const StateVec&, ActionId)> reward;
    std::function<StateVec(const StateVec&, ActionId, RngStream&)> sample_next;
    /// Merge key for tree-search children (finite environments return the
    /// state index). Unset means every sampled successor is distinct.
    std::function<std::int64_t(const StateVec&)> state_key;

    double v_max() const { return r_max / (1.0 - gamma); }
};

/// Tabular MDP with explicit transition tensor P[a](s, s') and reward matrix
/// R(s, a). States embed into StateVec one-hot so the same approximators and
/// search code run on finite and continuous environments.
struct FiniteMdp {
    int n_states = 0;
    int action_count = 0;
    double gamma = 0.0;
    double r_max = 1.0;
    std::vector<Matrix> transition; // transition[a](s, s') row-stochastic
    Matrix reward_matrix;           // (s, a), entries in [0, r_max]

    StateVec embed(int state) const {
        StateVec v = StateVec::Zero(n_states);
        v[state] = 1.0;
        return v;
    }

    /// Nearest-embedding decoding: index of the largest coordinate.
    int decode(const StateVec& s) const {
        Eigen::Index idx = 0;
        s.maxCoeff(&idx);
        return static_cast<int>(idx);
    }

    void validate(double tol = 1e-12) const {
        if (n_states < 1 || action_count < 1)
            throw std::invalid_argument("FiniteMdp: needs at least one state and action");
        if (gamma < 0.0 || gamma >= 1.0)
            throw std::invalid_argument("FiniteMdp: gamma must lie in [0,1)");
        if (static_cast<int>(transition.size()) != action_count)
            throw std::invalid_argument("FiniteMdp: one transition matrix per action required");
        if (reward_matrix.rows() != n_states || reward_matrix.cols() != action_count)
            throw std::invalid_argument("FiniteMdp: reward matrix shape mismatch");
        for (const Matrix& p : transition) {
            if (p.rows() != n_states || p.cols() != n_states)
                throw std::invalid_argument("FiniteMdp: transition matrix shape mismatch");
            if (p.minCoeff() < 0.0)
                throw std::invalid_argument("FiniteMdp: negative transition probability");
            for (int s = 0; s < n_states; ++s) {
                if (std::abs(p.row(s).sum() - 1.0) > tol)
                    throw std::invalid_argument("FiniteMdp: transition row does not sum to 1");
            }
        }
        if (reward_matrix.minCoeff() < 0.0 || reward_matrix.maxCoeff() > r_max + tol)
            throw std::invalid_argument("FiniteMdp: rewards outside [0, r_max]");
    }

    double v_max() const { return r_max / (1.0 - gamma); }
};

/// Generative view of a tabular MDP (shared, immutable).
inline MdpModel to_model(const FiniteMdp& mdp) {
    auto shared = std::make_shared<const FiniteMdp>(mdp);
    MdpModel model;
    model.dimension = shared->n_states;
    model.action_count = shared->action_count;
    model.gamma = shared->gamma;
    model.r_max = shared->r_max;
    model.reward = [shared](const StateVec& s, ActionId a) {
        return shared->reward_matrix(shared->decode(s), a);
    };
    model.sample_next = [shared](const StateVec& s, ActionId a, RngStream& rng) {
        const int from = shared->decode(s);
        const auto& row = shared->transition[a];
        const double u = rng.uniform01();
        double acc = 0.0;
        int next = shared->n_states - 1;
        for (int j = 0; j < shared->n_states; ++j) {
            acc += row(from, j);
            if (u < acc) {
                next = j;
                break;
            }
        }
        return shared->embed(next);
    };
    model.state_key = [shared](const StateVec& s) {
        return static_cast<std::int64_t>(shared->decode(s));
    };
    return model;
}

/// Deterministic line MDP over n states. Action 0 steps toward the last
/// state and action 1 steps away (endpoints self-loop); taking action 0 at
/// the last state collects reward 1 and stays. The optimal policy is
/// "always advance".
inline FiniteMdp chain_mdp(int n_states, double gamma) {
    if (n_states < 2) throw std::invalid_argument("chain_mdp: n_states must be >= 2");
    if (gamma < 0.0 || gamma >= 1.0)
        throw std::invalid_argument("chain_mdp: gamma must lie in [0,1)");
    FiniteMdp mdp;
    mdp.n_states = n_states;
    mdp.action_count = 2;
    mdp.gamma = gamma;
    mdp.r_max = 1.0;
    mdp.transition.assign(2, Matrix::Zero(n_states, n_states));
    mdp.reward_matrix = Matrix::Zero(n_states, 2);
    for (int s = 0; s < n_states; ++s) {
        mdp.transition[0](s, std::min(s + 1, n_states - 1)) = 1.0;
        mdp.transition[1](s, std::max(s - 1, 0)) = 1.0;
    }
    mdp.transition[0](n_states - 1, n_states - 1) = 1.0; // advance at the end stays
    mdp.reward_matrix(n_states - 1, 0) = 1.0;
    mdp.validate();
    return mdp;
}

/// Names for the chain actions, for tests and docs.
inline constexpr ActionId kChainAdvance = 0; // "R": toward the rewarding end
inline constexpr ActionId kChainRetreat = 1; // "L": away from it

/// Random dense finite MDP: Dirichlet(1) transition rows, uniform rewards in
/// [0, r_max]. Used by the randomized verification suites.
inline FiniteMdp random_finite_mdp(int n_states, int action_count, double gamma,
                                   std::uint64_t seed, double r_max = 1.0) {
    FiniteMdp mdp;
    mdp.n_states = n_states;
    mdp.action_count = action_count;
    mdp.gamma = gamma;
    mdp.r_max = r_max;
    mdp.transition.assign(action_count, Matrix::Zero(n_states, n_states));
    mdp.reward_matrix = Matrix::Zero(n_states, action_count);
    RngStream rng = RngStream::from_key({seed, 0xfdb97531ULL});
    for (int a = 0; a < action_count; ++a) {
        for (int s = 0; s < n_states; ++s) {
            double total = 0.0;
            for (int j = 0; j < n_states; ++j) {
                const double e = -std::log(1.0 - rng.uniform01());
                mdp.transition[a](s, j) = e;
                total += e;
            }
            mdp.transition[a].row(s) /= total;
            mdp.reward_matrix(s, a) = r_max * rng.uniform01();
        }
    }
    mdp.validate();
    return mdp;
}

namespace puddle {
inline constexpr double kStep = 0.1;
inline constexpr double kGoalX = 0.75;
inline constexpr double kGoalY = 0.75;
inline constexpr double kMaxDist = 1.4142135623730951; // unit-square diagonal
} // namespace puddle

/// Continuous-state benchmark on the unit square: four unit-step moves plus
/// stay, optional Gaussian transition noise, reward r_max * (1 - d/dmax)
/// where d is the distance to the goal (so the reward is r_max exactly at
/// the goal and decays to a clipped floor of 0).
inline MdpModel puddle_nav_mdp(double noise_sd, double gamma, double r_max = 1.0) {
    if (noise_sd < 0.0) throw std::invalid_argument("puddle_nav_mdp: noise_sd must be >= 0");
    if (gamma < 0.0 || gamma >= 1.0)
        throw std::invalid_argument("puddle_nav_mdp: gamma must lie in [0,1)");
    MdpModel model;
    model.dimension = 2;
    model.action_count = 5; // +x, -x, +y, -y, stay
    model.gamma = gamma;
    model.r_max = r_max;
    model.reward = [r_max](const StateVec& s, ActionId) {
        const double dx = s[0] - puddle::kGoalX;
        const double dy = s[1] - puddle::kGoalY;
        const double d = std::sqrt(dx * dx + dy * dy);
        return r_max * std::max(0.0, 1.0 - d / puddle::kMaxDist);
    };
    model.sample_next = [noise_sd](const StateVec& s, ActionId a, RngStream& rng) {
        static const double dir[5][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {0, 0}};
        StateVec next(2);
        next[0] = s[0] + puddle::kStep * dir[a][0];
        next[1] = s[1] + puddle::kStep * dir[a][1];
        if (noise_sd > 0.0) {
            next[0] += rng.normal(0.0, noise_sd);
            next[1] += rng.normal(0.0, noise_sd);
        }
        next[0] = std::clamp(next[0], 0.0, 1.0);
        next[1] = std::clamp(next[1], 0.0, 1.0);
        return next;
    };
    return model;
}

/// A distribution over states (rho0, rho1, nu). Finite kinds carry an
/// explicit probability vector over state indices; draw mode `systematic`
/// realizes the same measure with equal representation (index j maps through
/// the cumulative distribution), `iid` samples independently.
struct StateDistribution {
    enum class Kind { finite, box_uniform };
    enum class DrawMode { iid, systematic };

    Kind kind = Kind::finite;
    DrawMode mode = DrawMode::iid;
    Vector probs;                              // finite: sums to 1
    std::shared_ptr<const FiniteMdp> space;    // finite: embedding provider
    int dimension = 0;                         // box_uniform

    static StateDistribution finite_uniform(const FiniteMdp& mdp,
                                            DrawMode mode = DrawMode::iid) {
        StateDistribution d;
        d.kind = Kind::finite;
        d.mode = mode;
        d.space = std::make_shared<const FiniteMdp>(mdp);
        d.probs = Vector::Constant(mdp.n_states, 1.0 / mdp.n_states);
        return d;
    }

    static StateDistribution finite_explicit(const FiniteMdp& mdp, Vector probs,
                                             DrawMode mode = DrawMode::iid) {
        if (std::abs(probs.sum() - 1.0) > 1e-9)
            throw std::invalid_argument("StateDistribution: probabilities must sum to 1");
        if (probs.minCoeff() < 0.0)
            throw std::invalid_argument("StateDistribution: negative probability");
        StateDistribution d;
        d.kind = Kind::finite;
        d.mode = mode;
        d.space = std::make_shared<const FiniteMdp>(mdp);
        d.probs = std::move(probs);
        return d;
    }

    static StateDistribution box(int dimension) {
        StateDistribution d;
        d.kind = Kind::box_uniform;
        d.dimension = dimension;
        return d;
    }

    StateVec sample(RngStream& rng) const {
        if (kind == Kind::box_uniform) {
            StateVec s(dimension);
            for (int i = 0; i < dimension; ++i) s[i] = rng.uniform01();
            return s;
        }
        const int idx = rng.categorical({probs.data(), static_cast<std::size_t>(probs.size())});
        return space->embed(idx);
    }

    /// Draws n states. In systematic mode, draw j targets the quantile
    /// (j + 1/2)/n of the finite measure, so n = n_states under the uniform
    /// vector enumerates every state exactly once.
    std::vector<StateVec> draw(int n, RngStream& rng) const {
        std::vector<StateVec> out;
        out.reserve(n);
        if (kind == Kind::finite && mode == DrawMode::systematic) {
            for (int j = 0; j < n; ++j) {
                const double target = (j + 0.5) / n;
                double acc = 0.0;
                int idx = static_cast<int>(probs.size()) - 1;
                for (int i = 0; i < probs.size(); ++i) {
                    acc += probs[i];
                    if (target < acc) {
                        idx = i;
                        break;
                    }
                }
                out.push_back(space->embed(idx));
            }
            return out;
        }
        for (int j = 0; j < n; ++j) {
            RngStream sub = rng.substream(static_cast<std::uint64_t>(j));
            out.push_back(sample(sub));
        }
        return out;
    }
};

/// The three sampling distributions of the algorithm: regression states
/// (rho0), tree-search root states (rho1), and the evaluation measure (nu).
struct SamplingDistributions {
    StateDistribution rho0;
    StateDistribution rho1;
    StateDistribution nu;
};

} // namespace fbts
