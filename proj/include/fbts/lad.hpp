#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace fbts {

/// Least-absolute-deviation fit: minimizes sum_i |x_i . w - y_i|.
struct LadSolution {
    Eigen::VectorXd weights;
    double loss = 0.0;        // mean absolute residual
    bool degenerate = false;  // design matrix is rank-deficient
};

namespace detail {

/// Primal simplex with Bland's rule on the LAD linear program
///
///   min 1'u + 1'v   s.t.  X w+ - X w- + u - v = y,   w+, w-, u, v >= 0.
///
/// The initial basis picks u_i or v_i per row depending on sign(y_i), which
/// is feasible with a diagonal +-1 basis matrix. Bland's rule guarantees
/// termination; the objective is bounded below by zero so the program is
/// never unbounded.
inline Eigen::VectorXd lad_simplex(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    using Eigen::MatrixXd;
    using Eigen::VectorXd;
    const int n = static_cast<int>(x.rows());
    const int p = static_cast<int>(x.cols());
    const int m = 2 * p + 2 * n;
    constexpr double kRcEps = 1e-9;
    constexpr double kPivotEps = 1e-11;

    MatrixXd a(n, m);
    a.block(0, 0, n, p) = x;
    a.block(0, p, n, p) = -x;
    a.block(0, 2 * p, n, n) = MatrixXd::Identity(n, n);
    a.block(0, 2 * p + n, n, n) = -MatrixXd::Identity(n, n);
    VectorXd cost = VectorXd::Zero(m);
    cost.segment(2 * p, 2 * n).setOnes();

    std::vector<int> basis(n);
    MatrixXd b_inv = MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        if (y[i] >= 0.0) {
            basis[i] = 2 * p + i;
            b_inv(i, i) = 1.0;
        } else {
            basis[i] = 2 * p + n + i;
            b_inv(i, i) = -1.0;
        }
    }

    std::vector<char> in_basis(m, 0);
    for (int i = 0; i < n; ++i) in_basis[basis[i]] = 1;

    VectorXd xb = b_inv * y;
    // Bland's rule terminates finitely; the cap only guards against numeric
    // stalls, and hitting it is an error rather than a silent suboptimum.
    const long max_pivots = 400L * (n + m) + 20000;
    bool optimal = false;
    for (long pivot = 0; pivot < max_pivots; ++pivot) {
        Eigen::RowVectorXd dual = Eigen::RowVectorXd::Zero(n);
        for (int i = 0; i < n; ++i)
            if (cost[basis[i]] != 0.0) dual += cost[basis[i]] * b_inv.row(i);

        int entering = -1;
        for (int j = 0; j < m; ++j) {
            if (in_basis[j]) continue;
            const double rc = cost[j] - dual * a.col(j);
            if (rc < -kRcEps) {
                entering = j;
                break; // Bland: lowest index
            }
        }
        if (entering < 0) {
            optimal = true;
            break;
        }

        const VectorXd direction = b_inv * a.col(entering);
        int leave_pos = -1;
        double best_ratio = 0.0;
        for (int i = 0; i < n; ++i) {
            if (direction[i] > kPivotEps) {
                const double ratio = xb[i] / direction[i];
                if (leave_pos < 0 || ratio < best_ratio - kPivotEps ||
                    (std::abs(ratio - best_ratio) <= kPivotEps && basis[i] < basis[leave_pos])) {
                    leave_pos = i;
                    best_ratio = ratio;
                }
            }
        }
        if (leave_pos < 0)
            throw std::runtime_error("lad_simplex: unbounded pivot (should be impossible)");

        in_basis[basis[leave_pos]] = 0;
        in_basis[entering] = 1;
        basis[leave_pos] = entering;
        const double pivot_value = direction[leave_pos];
        b_inv.row(leave_pos) /= pivot_value;
        for (int i = 0; i < n; ++i) {
            if (i == leave_pos) continue;
            if (std::abs(direction[i]) > 0.0) b_inv.row(i) -= direction[i] * b_inv.row(leave_pos);
        }
        xb = b_inv * y; // refresh to limit drift
    }
    if (!optimal) throw std::runtime_error("lad_simplex: pivot limit reached without optimality");

    VectorXd w = VectorXd::Zero(p);
    for (int i = 0; i < n; ++i) {
        if (basis[i] < p)
            w[basis[i]] += xb[i];
        else if (basis[i] < 2 * p)
            w[basis[i] - p] -= xb[i];
    }
    return w;
}

/// Subgradient fallback for wide designs: 1e4 iterations with step
/// s0/sqrt(t+1), tracking the best iterate.
inline Eigen::VectorXd lad_subgradient(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    const int n = static_cast<int>(x.rows());
    const int p = static_cast<int>(x.cols());
    const double scale = x.cwiseAbs().rowwise().sum().mean() + 1e-12;
    const double s0 = (y.cwiseAbs().maxCoeff() + 1.0) / scale;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd best = w;
    double best_loss = (x * w - y).cwiseAbs().sum();
    for (int t = 0; t < 10000; ++t) {
        const Eigen::VectorXd r = x * w - y;
        Eigen::VectorXd g = Eigen::VectorXd::Zero(p);
        for (int i = 0; i < n; ++i) {
            if (r[i] > 0)
                g += x.row(i);
            else if (r[i] < 0)
                g -= x.row(i);
        }
        w -= (s0 / std::sqrt(t + 1.0)) * g;
        const double loss = (x * w - y).cwiseAbs().sum();
        if (loss < best_loss) {
            best_loss = loss;
            best = w;
        }
    }
    return best;
}

} // namespace detail

/// L1 regression. Exact (linear programming) for designs up to 64 columns,
/// subgradient descent beyond that. Rank deficiency is reported, not fatal:
/// a minimizer is still returned.
inline LadSolution lad_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    if (x.rows() == 0) throw std::invalid_argument("lad_fit: needs at least one sample");
    if (x.rows() != y.size()) throw std::invalid_argument("lad_fit: sample count mismatch");
    LadSolution sol;
    sol.weights = x.cols() <= 64 ? detail::lad_simplex(x, y) : detail::lad_subgradient(x, y);
    sol.loss = (x * sol.weights - y).cwiseAbs().mean();
    sol.degenerate =
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(x).rank() < std::min(x.rows(), x.cols());
    return sol;
}

} // namespace fbts
