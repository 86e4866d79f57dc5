#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <vector>

#include "fbts/mdp.hpp"

namespace fbts {

/// Deterministic tabular policy as an action index per state.
using PolicyVec = std::vector<ActionId>;

/// Exact optimal solution of a finite MDP.
struct OracleSolution {
    Vector v_star;
    PolicyVec pi_star;
    double residual = 0.0; // sup-norm Bellman residual of v_star
};

/// One-step action values (T_a V)(s) for all (s, a).
inline Matrix action_values(const FiniteMdp& mdp, const Vector& v) {
    Matrix q(mdp.n_states, mdp.action_count);
    for (int a = 0; a < mdp.action_count; ++a)
        q.col(a) = mdp.reward_matrix.col(a) + mdp.gamma * (mdp.transition[a] * v);
    return q;
}

/// Greedy policy w.r.t. v; ties broken by lowest action index.
inline PolicyVec greedy_policy(const FiniteMdp& mdp, const Vector& v) {
    const Matrix q = action_values(mdp, v);
    PolicyVec pi(mdp.n_states, 0);
    for (int s = 0; s < mdp.n_states; ++s) {
        int best = 0;
        for (int a = 1; a < mdp.action_count; ++a)
            if (q(s, a) > q(s, best)) best = a;
        pi[s] = best;
    }
    return pi;
}

/// One Bellman sweep (T v).
inline Vector bellman_sweep(const FiniteMdp& mdp, const Vector& v) {
    return action_values(mdp, v).rowwise().maxCoeff();
}

/// Exact T^d v via d max-over-action sweeps.
inline Vector apply_bellman(const FiniteMdp& mdp, Vector v, int d) {
    if (d < 1) throw std::invalid_argument("apply_bellman: d must be >= 1");
    for (int i = 0; i < d; ++i) v = bellman_sweep(mdp, v);
    return v;
}

/// Exact h-fold application of the policy operator T_pi (h = 0 is identity).
inline Vector apply_policy_op(const FiniteMdp& mdp, const PolicyVec& pi, Vector v, int h) {
    if (h < 0) throw std::invalid_argument("apply_policy_op: h must be >= 0");
    for (int i = 0; i < h; ++i) {
        Vector next(mdp.n_states);
        for (int s = 0; s < mdp.n_states; ++s)
            next[s] = mdp.reward_matrix(s, pi[s]) + mdp.gamma * mdp.transition[pi[s]].row(s).dot(v);
        v = std::move(next);
    }
    return v;
}

/// Row-stochastic transition matrix of a fixed policy.
inline Matrix policy_transition(const FiniteMdp& mdp, const PolicyVec& pi) {
    Matrix p(mdp.n_states, mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s) p.row(s) = mdp.transition[pi[s]].row(s);
    return p;
}

/// V^pi by direct linear solve of (I - gamma P_pi) V = r_pi.
inline Vector policy_value(const FiniteMdp& mdp, const PolicyVec& pi) {
    if (static_cast<int>(pi.size()) != mdp.n_states)
        throw std::invalid_argument("policy_value: policy length mismatch");
    for (ActionId a : pi)
        if (a < 0 || a >= mdp.action_count)
            throw std::invalid_argument("policy_value: invalid action index");
    const Matrix p_pi = policy_transition(mdp, pi);
    Vector r_pi(mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s) r_pi[s] = mdp.reward_matrix(s, pi[s]);
    const Matrix system = Matrix::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * p_pi;
    return system.partialPivLu().solve(r_pi);
}

/// Value iteration to sup-norm Bellman residual <= tol. The contraction
/// guarantees termination; the returned policy is greedy w.r.t. v_star with
/// ties to the lowest action index.
inline OracleSolution value_iteration(const FiniteMdp& mdp, double tol = 1e-10) {
    if (tol <= 0.0) throw std::invalid_argument("value_iteration: tol must be positive");
    Vector v = Vector::Zero(mdp.n_states);
    double residual = 0.0;
    for (;;) {
        Vector next = bellman_sweep(mdp, v);
        residual = (next - v).lpNorm<Eigen::Infinity>();
        v = std::move(next);
        if (residual <= tol) break;
    }
    OracleSolution sol;
    sol.v_star = v;
    sol.pi_star = greedy_policy(mdp, v);
    sol.residual = (bellman_sweep(mdp, v) - v).lpNorm<Eigen::Infinity>();
    return sol;
}

/// The weighting measure nu (P_pi*)^steps [I - gamma P_pik]^{-1} as a row
/// vector. Non-negative with total mass 1/(1-gamma); not normalized.
inline Eigen::RowVectorXd occupancy_measure(const FiniteMdp& mdp, const Vector& nu,
                                            const PolicyVec& pi_star, const PolicyVec& pi_k,
                                            int steps) {
    if (steps < 0) throw std::invalid_argument("occupancy_measure: steps must be >= 0");
    Eigen::RowVectorXd w = nu.transpose();
    const Matrix p_star = policy_transition(mdp, pi_star);
    for (int i = 0; i < steps; ++i) w = w * p_star;
    // Solve w_out (I - gamma P_pik) = w, i.e. the transposed linear system.
    const Matrix system =
        (Matrix::Identity(mdp.n_states, mdp.n_states) - mdp.gamma * policy_transition(mdp, pi_k))
            .transpose();
    Vector solved = system.partialPivLu().solve(w.transpose());
    return solved.transpose();
}

/// nu-weighted L1 norm sum_s nu(s) |x(s)| for a (possibly non-normalized)
/// non-negative weight vector.
inline double weighted_l1(const Vector& weights, const Vector& x) {
    return weights.dot(x.cwiseAbs());
}

} // namespace fbts
