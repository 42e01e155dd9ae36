#pragma once

#include "ssp/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace ssp {

/// Tolerance on row sums of stochastic vectors.
inline constexpr double kStochasticTol = 1e-9;

/**
 * Finite stochastic shortest path instance.
 *
 * States are 0..num_states-1; the goal is the sentinel index `goal() == num_states`
 * and is not a state. The kernel is stored densely as [s][a][s'] with
 * s' ranging over num_states + 1 entries (the last one is the goal).
 *
 * The constructor only checks shapes; use `validate_mdp` for the stochasticity
 * and goal-reachability invariants.
 */
class Mdp {
public:
    Mdp() = default;

    Mdp(std::size_t num_states, std::size_t num_actions, std::size_t initial_state,
        std::vector<double> transitions)
        : num_states_(num_states), num_actions_(num_actions), initial_state_(initial_state),
          transitions_(std::move(transitions)) {
        if (num_states_ == 0 || num_actions_ == 0)
            throw ShapeMismatch("Mdp: num_states and num_actions must be positive");
        if (initial_state_ >= num_states_) throw ShapeMismatch("Mdp: initial_state out of range");
        if (transitions_.size() != num_states_ * num_actions_ * (num_states_ + 1))
            throw ShapeMismatch("Mdp: transition array has wrong size");
        for (double p : transitions_)
            if (!std::isfinite(p)) throw ShapeMismatch("Mdp: non-finite transition probability");
    }

    std::size_t num_states() const { return num_states_; }
    std::size_t num_actions() const { return num_actions_; }
    std::size_t initial_state() const { return initial_state_; }
    std::size_t goal() const { return num_states_; }
    std::size_t num_successors() const { return num_states_ + 1; }

    double p(std::size_t s, std::size_t a, std::size_t next) const {
        return transitions_[(s * num_actions_ + a) * (num_states_ + 1) + next];
    }

    /// P(. | s, a) over S and the goal (goal last).
    std::span<const double> row(std::size_t s, std::size_t a) const {
        return {transitions_.data() + (s * num_actions_ + a) * (num_states_ + 1), num_states_ + 1};
    }

    const std::vector<double>& transitions() const { return transitions_; }

    friend bool operator==(const Mdp&, const Mdp&) = default;

private:
    std::size_t num_states_ = 0;
    std::size_t num_actions_ = 0;
    std::size_t initial_state_ = 0;
    std::vector<double> transitions_;
};

/// Per-(s,a) cost with entries in [0, 1].
class CostFunction {
public:
    CostFunction() = default;

    CostFunction(std::size_t num_states, std::size_t num_actions, std::vector<double> values)
        : num_states_(num_states), num_actions_(num_actions), values_(std::move(values)) {
        if (values_.size() != num_states_ * num_actions_)
            throw ShapeMismatch("CostFunction: value array has wrong size");
        for (double c : values_)
            if (!(c >= 0.0 && c <= 1.0)) throw Error("CostFunction: costs must lie in [0, 1]");
    }

    static CostFunction constant(std::size_t num_states, std::size_t num_actions, double c) {
        return {num_states, num_actions, std::vector<double>(num_states * num_actions, c)};
    }

    std::size_t num_states() const { return num_states_; }
    std::size_t num_actions() const { return num_actions_; }
    double operator()(std::size_t s, std::size_t a) const { return values_[s * num_actions_ + a]; }
    const std::vector<double>& values() const { return values_; }

    double min() const { return *std::min_element(values_.begin(), values_.end()); }

    /// Throws unless every entry is at least `c_min`.
    void require_min(double c_min) const {
        if (min() < c_min) throw Error("CostFunction: entry below declared c_min");
    }

    friend bool operator==(const CostFunction&, const CostFunction&) = default;

private:
    std::size_t num_states_ = 0;
    std::size_t num_actions_ = 0;
    std::vector<double> values_;
};

/// Stationary stochastic policy pi(a | s); rows are distributions.
class StochasticPolicy {
public:
    StochasticPolicy() = default;

    StochasticPolicy(std::size_t num_states, std::size_t num_actions, std::vector<double> probs)
        : num_states_(num_states), num_actions_(num_actions), probs_(std::move(probs)) {
        if (probs_.size() != num_states_ * num_actions_)
            throw ShapeMismatch("StochasticPolicy: probability array has wrong size");
        for (std::size_t s = 0; s < num_states_; ++s) {
            double sum = 0.0;
            for (std::size_t a = 0; a < num_actions_; ++a) {
                const double p = (*this)(s, a);
                if (!(p >= 0.0)) throw Error("StochasticPolicy: negative probability");
                sum += p;
            }
            if (std::abs(sum - 1.0) > kStochasticTol)
                throw Error("StochasticPolicy: row " + std::to_string(s) + " does not sum to 1");
        }
    }

    static StochasticPolicy uniform(std::size_t num_states, std::size_t num_actions) {
        return {num_states, num_actions,
                std::vector<double>(num_states * num_actions, 1.0 / static_cast<double>(num_actions))};
    }

    static StochasticPolicy deterministic(std::size_t num_actions, std::span<const std::size_t> actions) {
        std::vector<double> probs(actions.size() * num_actions, 0.0);
        for (std::size_t s = 0; s < actions.size(); ++s) {
            if (actions[s] >= num_actions) throw ShapeMismatch("deterministic policy: action out of range");
            probs[s * num_actions + actions[s]] = 1.0;
        }
        return {actions.size(), num_actions, std::move(probs)};
    }

    std::size_t num_states() const { return num_states_; }
    std::size_t num_actions() const { return num_actions_; }
    double operator()(std::size_t s, std::size_t a) const { return probs_[s * num_actions_ + a]; }
    std::span<const double> row(std::size_t s) const {
        return {probs_.data() + s * num_actions_, num_actions_};
    }
    const std::vector<double>& probs() const { return probs_; }

    bool is_deterministic() const {
        return std::all_of(probs_.begin(), probs_.end(), [](double p) { return p == 0.0 || p == 1.0; });
    }

    /// Action with the largest probability in `s` (lowest index on ties).
    std::size_t mode(std::size_t s) const {
        auto r = row(s);
        return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    }

    friend bool operator==(const StochasticPolicy&, const StochasticPolicy&) = default;

private:
    std::size_t num_states_ = 0;
    std::size_t num_actions_ = 0;
    std::vector<double> probs_;
};

/// Per-state values with an explicit finiteness flag; used for both
/// cost-to-go J and hitting times T.
struct StateValues {
    std::vector<double> values;
    std::vector<bool> finite;

    std::size_t size() const { return values.size(); }

    /// Value at `s`; throws SingularSystem if the state is not proper.
    double at(std::size_t s) const {
        if (!finite.at(s)) throw SingularSystem("value requested on improper state " + std::to_string(s));
        return values[s];
    }
    bool all_finite() const { return std::all_of(finite.begin(), finite.end(), [](bool f) { return f; }); }
    double max_finite() const {
        double m = 0.0;
        for (std::size_t s = 0; s < values.size(); ++s)
            if (finite[s]) m = std::max(m, values[s]);
        return m;
    }
};

using CostToGo = StateValues;
using HittingTimes = StateValues;

/// Expected visit counts q(s, a).
class OccupancyMeasure {
public:
    OccupancyMeasure() = default;

    OccupancyMeasure(std::size_t num_states, std::size_t num_actions, std::vector<double> q)
        : num_states_(num_states), num_actions_(num_actions), q_(std::move(q)) {
        if (q_.size() != num_states_ * num_actions_) throw ShapeMismatch("OccupancyMeasure: wrong size");
        for (double x : q_)
            if (!(x >= 0.0) || !std::isfinite(x)) throw Error("OccupancyMeasure: entries must be finite and >= 0");
    }

    static OccupancyMeasure filled(std::size_t num_states, std::size_t num_actions, double value) {
        return {num_states, num_actions, std::vector<double>(num_states * num_actions, value)};
    }

    std::size_t num_states() const { return num_states_; }
    std::size_t num_actions() const { return num_actions_; }
    double operator()(std::size_t s, std::size_t a) const { return q_[s * num_actions_ + a]; }
    const std::vector<double>& values() const { return q_; }

    double state_mass(std::size_t s) const {
        double m = 0.0;
        for (std::size_t a = 0; a < num_actions_; ++a) m += (*this)(s, a);
        return m;
    }
    double total() const { return std::accumulate(q_.begin(), q_.end(), 0.0); }

private:
    std::size_t num_states_ = 0;
    std::size_t num_actions_ = 0;
    std::vector<double> q_;
};

namespace detail {

/// States that reach `goal` with positive probability along edges allowed by `edge(s, next)`.
template <class EdgeFn>
std::vector<bool> can_reach_goal(std::size_t num_states, EdgeFn edge) {
    // Reverse BFS from the goal over positive-probability edges.
    std::vector<std::vector<std::size_t>> preds(num_states + 1);
    for (std::size_t s = 0; s < num_states; ++s)
        for (std::size_t n = 0; n <= num_states; ++n)
            if (n != s && edge(s, n)) preds[n].push_back(s);
    std::vector<bool> seen(num_states + 1, false);
    std::deque<std::size_t> frontier{num_states};
    seen[num_states] = true;
    while (!frontier.empty()) {
        const std::size_t n = frontier.front();
        frontier.pop_front();
        for (std::size_t s : preds[n])
            if (!seen[s]) {
                seen[s] = true;
                frontier.push_back(s);
            }
    }
    seen.pop_back();
    return seen;
}

}  // namespace detail

/// Lists every violated MDP invariant (empty when valid).
inline std::vector<MdpIssue> check_mdp(const Mdp& mdp) {
    std::vector<MdpIssue> issues;
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            auto r = mdp.row(s, a);
            const double sum = std::accumulate(r.begin(), r.end(), 0.0);
            const bool in_range = std::all_of(r.begin(), r.end(), [](double p) { return p >= 0.0 && p <= 1.0; });
            if (!in_range || std::abs(sum - 1.0) > kStochasticTol)
                issues.push_back({MdpIssue::Kind::RowNotStochastic, s, a, sum});
        }
    auto reach = detail::can_reach_goal(S, [&](std::size_t s, std::size_t n) {
        for (std::size_t a = 0; a < A; ++a)
            if (mdp.p(s, a, n) > 0.0) return true;
        return false;
    });
    for (std::size_t s = 0; s < S; ++s)
        if (!reach[s]) issues.push_back({MdpIssue::Kind::GoalUnreachableFrom, s, 0, 0.0});
    return issues;
}

/// Returns `mdp` unchanged if valid, otherwise throws InvalidMdp listing every issue.
inline const Mdp& validate_mdp(const Mdp& mdp) {
    auto issues = check_mdp(mdp);
    if (!issues.empty()) throw InvalidMdp(std::move(issues));
    return mdp;
}

}  // namespace ssp
