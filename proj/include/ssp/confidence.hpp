#pragma once

#include "ssp/planning.hpp"

#include <cmath>

namespace ssp {

/**
 * Visit counters split into epoch-start totals (N, N3) and in-epoch
 * increments (n, n3). An epoch ends when some pair doubles its count or the
 * episode ends; `start_epoch` folds the increments into the totals.
 */
class VisitCounts {
public:
    VisitCounts() = default;
    VisitCounts(std::size_t num_states, std::size_t num_actions)
        : num_states_(num_states), num_actions_(num_actions),
          total_(num_states * num_actions, 0), total3_(num_states * num_actions * (num_states + 1), 0),
          epoch_(num_states * num_actions, 0), epoch3_(num_states * num_actions * (num_states + 1), 0) {}

    std::size_t num_states() const { return num_states_; }
    std::size_t num_actions() const { return num_actions_; }
    std::size_t epoch_index() const { return epoch_index_; }

    /// N^e(s,a): visits before the current epoch.
    std::uint64_t epoch_start_count(std::size_t s, std::size_t a) const { return total_[s * num_actions_ + a]; }
    std::uint64_t epoch_start_count(std::size_t s, std::size_t a, std::size_t next) const {
        return total3_[(s * num_actions_ + a) * (num_states_ + 1) + next];
    }
    /// n^e(s,a): visits within the current epoch.
    std::uint64_t in_epoch_count(std::size_t s, std::size_t a) const { return epoch_[s * num_actions_ + a]; }
    std::uint64_t in_epoch_count(std::size_t s, std::size_t a, std::size_t next) const {
        return epoch3_[(s * num_actions_ + a) * (num_states_ + 1) + next];
    }
    std::uint64_t lifetime_count(std::size_t s, std::size_t a) const {
        return epoch_start_count(s, a) + in_epoch_count(s, a);
    }

    /// Records one transition; returns true when n^e(s,a) >= N^e(s,a) (the doubling rule).
    bool record_transition(std::size_t s, std::size_t a, std::size_t next) {
        if (s >= num_states_ || a >= num_actions_ || next > num_states_)
            throw ShapeMismatch("record_transition: index out of range");
        const std::size_t sa = s * num_actions_ + a;
        ++epoch_[sa];
        ++epoch3_[sa * (num_states_ + 1) + next];
        return epoch_[sa] >= total_[sa];
    }

    void start_epoch() {
        for (std::size_t i = 0; i < total_.size(); ++i) {
            total_[i] += epoch_[i];
            epoch_[i] = 0;
        }
        for (std::size_t i = 0; i < total3_.size(); ++i) {
            total3_[i] += epoch3_[i];
            epoch3_[i] = 0;
        }
        ++epoch_index_;
    }

    const std::vector<std::uint64_t>& epoch_start_counts() const { return total_; }
    const std::vector<std::uint64_t>& epoch_start_counts3() const { return total3_; }

private:
    std::size_t num_states_ = 0;
    std::size_t num_actions_ = 0;
    std::vector<std::uint64_t> total_, total3_;
    std::vector<std::uint64_t> epoch_, epoch3_;
    std::size_t epoch_index_ = 0;
};

/// Empirical kernel with elementwise radii: the set of kernels P with
/// |P(s'|s,a) - p_bar(s'|s,a)| <= radius(s'|s,a).
class ConfidenceSet {
public:
    ConfidenceSet() = default;

    ConfidenceSet(std::size_t num_states, std::size_t num_actions, std::size_t initial_state,
                  std::vector<double> p_bar, std::vector<double> radius, double delta = 0.0,
                  std::size_t epoch = 0)
        : num_states_(num_states), num_actions_(num_actions), initial_state_(initial_state),
          p_bar_(std::move(p_bar)), radius_(std::move(radius)), delta_(delta), epoch_(epoch) {
        const std::size_t n = num_states_ * num_actions_ * (num_states_ + 1);
        if (p_bar_.size() != n || radius_.size() != n) throw ShapeMismatch("ConfidenceSet: wrong array size");
        if (initial_state_ >= num_states_) throw ShapeMismatch("ConfidenceSet: initial_state out of range");
        for (double r : radius_)
            if (!(r >= 0.0)) throw Error("ConfidenceSet: radius must be nonnegative");
    }

    /// Degenerate set {P} with zero radius.
    static ConfidenceSet singleton(const Mdp& mdp) {
        return uniform_radius(mdp, 0.0);
    }

    /// Set centred at the true kernel with the same radius everywhere.
    static ConfidenceSet uniform_radius(const Mdp& mdp, double eps) {
        return {mdp.num_states(), mdp.num_actions(), mdp.initial_state(), mdp.transitions(),
                std::vector<double>(mdp.transitions().size(), eps)};
    }

    std::size_t num_states() const { return num_states_; }
    std::size_t num_actions() const { return num_actions_; }
    std::size_t num_successors() const { return num_states_ + 1; }
    std::size_t initial_state() const { return initial_state_; }
    std::size_t goal() const { return num_states_; }
    double delta() const { return delta_; }
    std::size_t epoch() const { return epoch_; }

    std::size_t index(std::size_t s, std::size_t a, std::size_t next) const {
        return (s * num_actions_ + a) * (num_states_ + 1) + next;
    }
    double p_bar(std::size_t s, std::size_t a, std::size_t next) const { return p_bar_[index(s, a, next)]; }
    double radius(std::size_t s, std::size_t a, std::size_t next) const { return radius_[index(s, a, next)]; }
    double lower(std::size_t s, std::size_t a, std::size_t next) const {
        return std::max(0.0, p_bar(s, a, next) - radius(s, a, next));
    }
    double upper(std::size_t s, std::size_t a, std::size_t next) const {
        return std::min(1.0, p_bar(s, a, next) + radius(s, a, next));
    }

    const std::vector<double>& p_bar() const { return p_bar_; }
    const std::vector<double>& radius() const { return radius_; }

    /// True iff |P - p_bar| <= radius elementwise (with `slack`).
    bool contains(const Mdp& mdp, double slack = 0.0) const {
        for (std::size_t i = 0; i < p_bar_.size(); ++i)
            if (std::abs(mdp.transitions()[i] - p_bar_[i]) > radius_[i] + slack) return false;
        return true;
    }

private:
    std::size_t num_states_ = 0;
    std::size_t num_actions_ = 0;
    std::size_t initial_state_ = 0;
    std::vector<double> p_bar_;
    std::vector<double> radius_;
    double delta_ = 0.0;
    std::size_t epoch_ = 0;
};

/// A^e(s,a) = log(|S||A| N+ / delta) / N+ with N+ = max(N, 1).
inline double bernstein_coefficient(std::size_t num_states, std::size_t num_actions, std::uint64_t n, double delta) {
    const double n_plus = static_cast<double>(std::max<std::uint64_t>(n, 1));
    return std::log(static_cast<double>(num_states * num_actions) * n_plus / delta) / n_plus;
}

/// eps = 4 sqrt(p_bar A) + 28 A.
inline double bernstein_radius(double p_bar, double coefficient) {
    return 4.0 * std::sqrt(p_bar * coefficient) + 28.0 * coefficient;
}

/**
 * Bernstein confidence set from epoch-start counts.
 *
 * Rows with no visits put all empirical mass on the goal; their radius uses
 * N+ = 1 and is therefore large enough to contain every kernel.
 */
inline ConfidenceSet build_confidence_set(const VisitCounts& counts, double delta, std::size_t initial_state) {
    if (!(delta > 0.0 && delta < 1.0)) throw Error("build_confidence_set: delta must lie in (0, 1)");
    const std::size_t S = counts.num_states(), A = counts.num_actions();
    std::vector<double> p_bar(S * A * (S + 1), 0.0), radius(p_bar.size(), 0.0);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            const std::uint64_t n = counts.epoch_start_count(s, a);
            const double n_plus = static_cast<double>(std::max<std::uint64_t>(n, 1));
            const double coef = bernstein_coefficient(S, A, n, delta);
            const std::size_t base = (s * A + a) * (S + 1);
            for (std::size_t next = 0; next <= S; ++next) {
                double pb;
                if (n == 0)
                    pb = next == S ? 1.0 : 0.0;
                else
                    pb = static_cast<double>(counts.epoch_start_count(s, a, next)) / n_plus;
                p_bar[base + next] = pb;
                radius[base + next] = bernstein_radius(pb, coef);
            }
        }
    return {S, A, initial_state, std::move(p_bar), std::move(radius), delta, counts.epoch_index()};
}

struct OptimisticFast {
    StochasticPolicy policy;
    Mdp kernel;          ///< the optimistic kernel, goal-favouring
    HittingTimes times;  ///< hitting times of `policy` under `kernel`
};

/// Kernel with max(0, p_bar - radius) on every non-goal successor and the rest on the goal.
inline Mdp optimistic_kernel(const ConfidenceSet& conf) {
    const std::size_t S = conf.num_states(), A = conf.num_actions();
    std::vector<double> p(S * A * (S + 1), 0.0);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            double kept = 0.0;
            for (std::size_t next = 0; next < S; ++next) {
                const double x = std::max(0.0, conf.p_bar(s, a, next) - conf.radius(s, a, next));
                p[conf.index(s, a, next)] = x;
                kept += x;
            }
            p[conf.index(s, a, S)] = std::max(0.0, 1.0 - kept);
        }
    return {S, A, conf.initial_state(), std::move(p)};
}

/// Optimistic fast policy: the fast policy of the optimistic kernel.
inline OptimisticFast optimistic_fast(const ConfidenceSet& conf, ValueIterationOptions opts = {}) {
    auto kernel = optimistic_kernel(conf);
    auto plan = value_iteration(kernel, CostFunction::constant(conf.num_states(), conf.num_actions(), 1.0), opts);
    auto times = hitting_times(kernel, plan.policy);
    return {std::move(plan.policy), std::move(kernel), std::move(times)};
}

/**
 * Minimal expected time to the goal from each state over all policies and
 * all kernels in the set (extended value iteration). The inner minimization
 * over a box-constrained simplex fills the lower bounds first and hands the
 * remaining mass to successors in increasing order of value.
 */
inline std::vector<double> min_expected_time(const ConfidenceSet& conf, double tol = 1e-10,
                                             std::size_t max_iters = 1'000'000) {
    const std::size_t S = conf.num_states(), A = conf.num_actions();
    std::vector<double> v(S, 0.0), next(S);
    std::vector<std::size_t> order(S + 1);
    for (std::size_t it = 0; it < max_iters; ++it) {
        std::iota(order.begin(), order.end(), 0);
        std::vector<double> ext(v);
        ext.push_back(0.0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return ext[x] < ext[y]; });
        double diff = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < A; ++a) {
                double budget = 1.0, value = 0.0;
                for (std::size_t n = 0; n <= S; ++n) {
                    const double lo = conf.lower(s, a, n);
                    budget -= lo;
                    value += lo * ext[n];
                }
                for (std::size_t n : order) {
                    if (budget <= 0.0) break;
                    const double extra = std::min(budget, conf.upper(s, a, n) - conf.lower(s, a, n));
                    budget -= extra;
                    value += extra * ext[n];
                }
                best = std::min(best, 1.0 + value);
            }
            next[s] = best;
            diff = std::max(diff, std::abs(best - v[s]));
        }
        v.swap(next);
        if (diff < tol) return v;
    }
    throw NoConvergence("min_expected_time did not converge", max_iters);
}

/// Known-state bookkeeping: a state is known once every action has been played at least phi times.
class KnownStateTracker {
public:
    KnownStateTracker() = default;
    KnownStateTracker(std::size_t num_states, std::size_t num_actions, std::uint64_t phi)
        : num_actions_(num_actions), phi_(phi), counts_(num_states * num_actions, 0) {
        if (phi_ == 0) throw Error("KnownStateTracker: threshold must be positive");
    }

    std::uint64_t threshold() const { return phi_; }
    std::uint64_t count(std::size_t s, std::size_t a) const { return counts_[s * num_actions_ + a]; }
    void record(std::size_t s, std::size_t a) { ++counts_[s * num_actions_ + a]; }

    bool is_known(std::size_t s) const {
        for (std::size_t a = 0; a < num_actions_; ++a)
            if (count(s, a) < phi_) return false;
        return true;
    }

    /// argmin_a count(s, a); ties go to the lowest index.
    std::size_t least_played_action(std::size_t s) const {
        std::size_t best = 0;
        for (std::size_t a = 1; a < num_actions_; ++a)
            if (count(s, a) < count(s, best)) best = a;
        return best;
    }

private:
    std::size_t num_actions_ = 0;
    std::uint64_t phi_ = 1;
    std::vector<std::uint64_t> counts_;
};

/// Phi = alpha (D |S| / c_min^2) log(D |S| |A| / (delta c_min)), rounded up.
inline std::uint64_t known_state_threshold(double alpha, double diameter, std::size_t num_states,
                                           std::size_t num_actions, double c_min, double delta) {
    const double S = static_cast<double>(num_states), A = static_cast<double>(num_actions);
    const double phi = alpha * diameter * S / (c_min * c_min) * std::log(diameter * S * A / (delta * c_min));
    return static_cast<std::uint64_t>(std::max(1.0, std::ceil(phi)));
}

}  // namespace ssp
