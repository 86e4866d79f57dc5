#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "fbts/lad.hpp"
#include "fbts/mdp.hpp"

namespace fbts {

/// Feature transform: either affine phi(s) = W s + b, or a Gaussian bump
/// grid over the unit box plus a constant feature (the workhorse for
/// low-dimensional continuous control).
struct FeatureMap {
    enum class Kind { affine, rbf_grid };

    Kind kind = Kind::affine;
    int dimension_in = 0;
    int dimension_out = 0;
    Matrix weight; // affine: dimension_out x dimension_in
    Vector offset; // affine: dimension_out
    int grid_n = 0;        // rbf_grid: bumps per input dimension
    double bandwidth = 0.0; // rbf_grid: Gaussian width

    Vector apply(const StateVec& s) const {
        if (kind == Kind::affine) return weight * s + offset;
        Vector phi(dimension_out);
        const double denom = 2.0 * bandwidth * bandwidth;
        std::vector<int> index(dimension_in, 0);
        for (int j = 0; j + 1 < dimension_out; ++j) {
            double dist2 = 0.0;
            for (int i = 0; i < dimension_in; ++i) {
                const double center = (index[i] + 0.5) / grid_n;
                dist2 += (s[i] - center) * (s[i] - center);
            }
            phi[j] = std::exp(-dist2 / denom);
            for (int i = 0; i < dimension_in; ++i) {
                if (++index[i] < grid_n) break;
                index[i] = 0;
            }
        }
        phi[dimension_out - 1] = 1.0;
        return phi;
    }

    static FeatureMap identity(int dim) {
        FeatureMap f;
        f.dimension_in = f.dimension_out = dim;
        f.weight = Matrix::Identity(dim, dim);
        f.offset = Vector::Zero(dim);
        return f;
    }

    /// Coordinates plus a constant-1 feature.
    static FeatureMap identity_with_bias(int dim) {
        FeatureMap f;
        f.dimension_in = dim;
        f.dimension_out = dim + 1;
        f.weight = Matrix::Zero(dim + 1, dim);
        f.weight.topRows(dim) = Matrix::Identity(dim, dim);
        f.offset = Vector::Zero(dim + 1);
        f.offset[dim] = 1.0;
        return f;
    }

    /// The constant family: a single always-1 feature.
    static FeatureMap constant(int dim) {
        FeatureMap f;
        f.dimension_in = dim;
        f.dimension_out = 1;
        f.weight = Matrix::Zero(1, dim);
        f.offset = Vector::Ones(1);
        return f;
    }

    /// Identity perturbed by a fixed seeded Gaussian matrix; exercises
    /// genuinely linear (non-tabular) fits on one-hot embedded states.
    static FeatureMap one_hot_plus_noise(int dim, double noise_scale, std::uint64_t seed) {
        FeatureMap f = identity(dim);
        RngStream rng = RngStream::from_key({seed, 0xfea7ULL});
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j) f.weight(i, j) += noise_scale * rng.normal();
        return f;
    }

    /// Gaussian bumps on the cell centers of a grid_n^dim lattice over
    /// [0,1]^dim, plus a constant feature.
    static FeatureMap rbf(int dim, int grid_n, double bandwidth) {
        if (grid_n < 1 || bandwidth <= 0.0)
            throw std::invalid_argument("FeatureMap::rbf: needs grid_n >= 1 and bandwidth > 0");
        FeatureMap f;
        f.kind = Kind::rbf_grid;
        f.dimension_in = dim;
        f.dimension_out = 1;
        for (int i = 0; i < dim; ++i) f.dimension_out *= grid_n;
        f.dimension_out += 1;
        f.grid_n = grid_n;
        f.bandwidth = bandwidth;
        return f;
    }
};

enum class VfaFamily { tabular, linear };
enum class PolicyFamily { tabular, linear };

/// Value function approximation with outputs clipped to [0, v_max] at
/// prediction time (the fit itself is unconstrained).
struct Vfa {
    VfaFamily family = VfaFamily::tabular;
    double v_max = 1.0;
    int n_states = 0;    // tabular
    Vector values;       // tabular: one entry per state index
    FeatureMap features; // linear
    Vector weights;      // linear

    double predict(const StateVec& s) const {
        double raw = 0.0;
        if (family == VfaFamily::tabular) {
            Eigen::Index idx = 0;
            s.maxCoeff(&idx);
            raw = values[idx];
        } else {
            raw = features.apply(s).dot(weights);
        }
        return std::clamp(raw, 0.0, v_max);
    }

    static Vfa zero_tabular(int n_states, double v_max) {
        Vfa v;
        v.family = VfaFamily::tabular;
        v.v_max = v_max;
        v.n_states = n_states;
        v.values = Vector::Zero(n_states);
        return v;
    }
};

/// Deterministic policy; score ties resolve to the lowest action index.
struct PolicyModel {
    PolicyFamily family = PolicyFamily::tabular;
    int action_count = 0;
    int n_states = 0;               // tabular
    std::vector<ActionId> actions;  // tabular: one action per state index
    FeatureMap features;            // linear
    Matrix score_weights;           // linear: action_count x dimension_out

    ActionId act(const StateVec& s) const {
        if (family == PolicyFamily::tabular) {
            Eigen::Index idx = 0;
            s.maxCoeff(&idx);
            return actions[idx];
        }
        const Vector scores = score_weights * features.apply(s);
        int best = 0;
        for (int a = 1; a < action_count; ++a)
            if (scores[a] > scores[best]) best = a;
        return best;
    }
};

/// Tabular policy as a plain vector, for the finite-MDP oracles.
inline std::vector<ActionId> policy_vector(const PolicyModel& pi, const FiniteMdp& mdp) {
    std::vector<ActionId> out(mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s) out[s] = pi.act(mdp.embed(s));
    return out;
}

struct LabeledValueSample {
    StateVec state;
    double target = 0.0; // rollout estimate of the policy value at state
};

struct ClassificationSample {
    StateVec state;
    double u_hat = 0.0; // tree-search root value
    Vector q_hat;       // one-step action-value estimates, one per action
};

struct VfaFamilySpec {
    VfaFamily family = VfaFamily::tabular;
    double v_max = 1.0;
    int n_states = 0;    // tabular
    FeatureMap features; // linear
};

struct PolicyFamilySpec {
    PolicyFamily family = PolicyFamily::tabular;
    int action_count = 0;
    int n_states = 0;    // tabular
    FeatureMap features; // linear
};

struct VfaFitResult {
    Vfa vfa;
    double empirical_loss = 0.0; // mean |predict(s) - target|
    bool degenerate_design = false;
};

struct PolicyFitResult {
    PolicyModel policy;
    double empirical_loss = 0.0; // mean |u_hat - q_hat[policy(s)]|
};

/// Call-level instrumentation: lets tests verify that every training path
/// goes through the shared fitting subroutines.
struct FitCounters {
    inline static std::atomic<long> vfa_fits{0};
    inline static std::atomic<long> policy_fits{0};
    static void reset() {
        vfa_fits = 0;
        policy_fits = 0;
    }
};

namespace detail {

inline int decode_index(const StateVec& s) {
    Eigen::Index idx = 0;
    s.maxCoeff(&idx);
    return static_cast<int>(idx);
}

/// Midpoint-of-middles median; the L1 minimizer (any point between the two
/// middle order statistics minimizes, the midpoint keeps the fit shift-
/// equivariant).
inline double median(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    if (n % 2 == 1) return xs[n / 2];
    return 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

} // namespace detail

/// Least-absolute-deviation value regression (the Regress subroutine).
/// Tabular: per-state medians, exact. Linear: LP for designs up to 64
/// features, subgradient descent beyond. States a tabular fit never saw
/// keep the data-independent default of zero.
inline VfaFitResult fit_vfa_lad(const std::vector<LabeledValueSample>& samples,
                                const VfaFamilySpec& spec) {
    if (samples.empty()) throw std::invalid_argument("fit_vfa_lad: needs at least one sample");
    FitCounters::vfa_fits.fetch_add(1, std::memory_order_relaxed);
    VfaFitResult result;
    result.vfa.family = spec.family;
    result.vfa.v_max = spec.v_max;
    if (spec.family == VfaFamily::tabular) {
        if (spec.n_states < 1)
            throw std::invalid_argument("fit_vfa_lad: tabular family needs n_states");
        std::map<int, std::vector<double>> groups;
        for (const auto& sample : samples) {
            const int idx = detail::decode_index(sample.state);
            if (idx < 0 || idx >= spec.n_states)
                throw std::invalid_argument("fit_vfa_lad: state outside tabular family");
            groups[idx].push_back(sample.target);
        }
        result.vfa.n_states = spec.n_states;
        result.vfa.values = Vector::Zero(spec.n_states);
        for (auto& [idx, targets] : groups)
            result.vfa.values[idx] = detail::median(std::move(targets));
    } else {
        const int n = static_cast<int>(samples.size());
        const int p = spec.features.dimension_out;
        Matrix x(n, p);
        Vector y(n);
        for (int i = 0; i < n; ++i) {
            if (samples[i].state.size() != spec.features.dimension_in)
                throw std::invalid_argument("fit_vfa_lad: feature dimension mismatch");
            x.row(i) = spec.features.apply(samples[i].state).transpose();
            y[i] = samples[i].target;
        }
        const LadSolution sol = lad_fit(x, y);
        result.vfa.features = spec.features;
        result.vfa.weights = sol.weights;
        result.degenerate_design = sol.degenerate;
    }
    double loss = 0.0;
    for (const auto& sample : samples)
        loss += std::abs(result.vfa.predict(sample.state) - sample.target);
    result.empirical_loss = loss / static_cast<double>(samples.size());
    return result;
}

namespace detail {

inline double classification_loss(const std::vector<ClassificationSample>& samples,
                                  const PolicyModel& pi) {
    double loss = 0.0;
    for (const auto& sample : samples) loss += std::abs(sample.u_hat - sample.q_hat[pi.act(sample.state)]);
    return loss / static_cast<double>(samples.size());
}

/// Coordinate search over the score weights: per coordinate, a geometric
/// step grid both ways, three shrinking rounds, first-improvement accept.
inline void coordinate_refine(const std::vector<ClassificationSample>& samples, PolicyModel& pi,
                              double& loss, double scale) {
    const int rows = static_cast<int>(pi.score_weights.rows());
    const int cols = static_cast<int>(pi.score_weights.cols());
    double step = scale;
    for (int round = 0; round < 3; ++round) {
        for (int a = 0; a < rows; ++a) {
            for (int j = 0; j < cols; ++j) {
                const double base = pi.score_weights(a, j);
                double best_value = base;
                for (double mult : {4.0, 2.0, 1.0, 0.5, 0.25}) {
                    for (double sign : {1.0, -1.0}) {
                        pi.score_weights(a, j) = base + sign * mult * step;
                        const double candidate = classification_loss(samples, pi);
                        if (candidate < loss - 1e-12) {
                            loss = candidate;
                            best_value = pi.score_weights(a, j);
                        }
                    }
                }
                pi.score_weights(a, j) = best_value;
            }
        }
        step *= 0.5;
    }
}

} // namespace detail

/// Cost-sensitive policy classification (the Classify subroutine): selects a
/// family member minimizing mean |u_hat - q_hat[pi(s)]|.
///
/// Tabular: exact per-state argmin (unseen states fall to action 0, the
/// global tie rule). Linear: per-action LAD score regression onto the q_hat
/// targets seeds a deterministic coordinate search over the score weights.
inline PolicyFitResult fit_policy_classifier(const std::vector<ClassificationSample>& samples,
                                             const PolicyFamilySpec& spec) {
    if (samples.empty())
        throw std::invalid_argument("fit_policy_classifier: needs at least one sample");
    FitCounters::policy_fits.fetch_add(1, std::memory_order_relaxed);
    if (spec.action_count < 1)
        throw std::invalid_argument("fit_policy_classifier: action_count must be positive");
    for (const auto& sample : samples)
        if (sample.q_hat.size() != spec.action_count)
            throw std::invalid_argument("fit_policy_classifier: q_hat length mismatch");

    PolicyFitResult result;
    result.policy.family = spec.family;
    result.policy.action_count = spec.action_count;

    if (spec.family == PolicyFamily::tabular) {
        if (spec.n_states < 1)
            throw std::invalid_argument("fit_policy_classifier: tabular family needs n_states");
        Matrix costs = Matrix::Zero(spec.n_states, spec.action_count);
        for (const auto& sample : samples) {
            const int idx = detail::decode_index(sample.state);
            if (idx < 0 || idx >= spec.n_states)
                throw std::invalid_argument("fit_policy_classifier: state outside tabular family");
            for (int a = 0; a < spec.action_count; ++a)
                costs(idx, a) += std::abs(sample.u_hat - sample.q_hat[a]);
        }
        result.policy.n_states = spec.n_states;
        result.policy.actions.assign(spec.n_states, 0);
        for (int s = 0; s < spec.n_states; ++s) {
            int best = 0;
            for (int a = 1; a < spec.action_count; ++a)
                if (costs(s, a) < costs(s, best)) best = a;
            result.policy.actions[s] = best;
        }
        result.empirical_loss = detail::classification_loss(samples, result.policy);
        return result;
    }

    const int n = static_cast<int>(samples.size());
    const int p = spec.features.dimension_out;
    Matrix x(n, p);
    for (int i = 0; i < n; ++i) x.row(i) = spec.features.apply(samples[i].state).transpose();

    result.policy.features = spec.features;
    result.policy.score_weights = Matrix::Zero(spec.action_count, p);
    double best_loss = detail::classification_loss(samples, result.policy);

    // Score-regression candidate: scores track the q_hat estimates.
    PolicyModel candidate = result.policy;
    for (int a = 0; a < spec.action_count; ++a) {
        Vector y(n);
        for (int i = 0; i < n; ++i) y[i] = samples[i].q_hat[a];
        candidate.score_weights.row(a) = lad_fit(x, y).weights.transpose();
    }
    const double candidate_loss = detail::classification_loss(samples, candidate);
    if (candidate_loss < best_loss) {
        best_loss = candidate_loss;
        result.policy = candidate;
    }

    double q_scale = 0.0;
    for (const auto& sample : samples) q_scale = std::max(q_scale, sample.q_hat.cwiseAbs().maxCoeff());
    const double feat_scale = x.cwiseAbs().mean() + 1e-12;
    detail::coordinate_refine(samples, result.policy, best_loss, (q_scale + 1.0) / feat_scale);
    result.empirical_loss = best_loss;
    return result;
}

/// Codomain-checked value prediction.
inline double predict_value(const Vfa& vfa, const StateVec& s) { return vfa.predict(s); }

} // namespace fbts
