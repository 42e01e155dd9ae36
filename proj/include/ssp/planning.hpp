#pragma once

#include "ssp/evaluation.hpp"

namespace ssp {

struct ValueIterationOptions {
    double tol = 1e-10;
    std::size_t max_iters = 1'000'000;
};

struct PlanningResult {
    StochasticPolicy policy;  ///< deterministic
    CostToGo values;          ///< exact cost-to-go of `policy`
    std::size_t iterations = 0;
};

namespace detail {

/// Greedy action per state; ties within a relative 1e-12 go to the lowest index.
inline std::vector<std::size_t> greedy_actions(const Mdp& mdp, const CostFunction& cost, std::span<const double> v) {
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    std::vector<std::size_t> best(S, 0);
    std::vector<double> q(A);
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t a = 0; a < A; ++a) {
            auto r = mdp.row(s, a);
            double x = cost(s, a);
            for (std::size_t n = 0; n < S; ++n) x += r[n] * v[n];
            q[a] = x;
        }
        const double m = *std::min_element(q.begin(), q.end());
        const double slack = 1e-12 * std::max(1.0, std::abs(m));
        for (std::size_t a = 0; a < A; ++a)
            if (q[a] <= m + slack) {
                best[s] = a;
                break;
            }
    }
    return best;
}

}  // namespace detail

/**
 * Value iteration for the SSP Bellman optimality operator.
 *
 * Iterates V <- min_a [c(s,a) + sum_s' P(s'|s,a) V(s')] from V = 0 until the
 * sup-norm change drops below `tol`, then extracts the greedy policy and
 * polishes it with exact policy-evaluation/improvement steps so that the
 * returned values are those of the returned policy. Every 256 sweeps the
 * greedy policy is handed to policy iteration early; if that reaches a fixed
 * point the optimum is exact and the sweeps stop. This keeps slowly mixing
 * instances (exit probabilities around 1e-5) tractable.
 *
 * Requires strictly positive costs so that improper policies have infinite cost.
 */
inline PlanningResult value_iteration(const Mdp& mdp, const CostFunction& cost, ValueIterationOptions opts = {}) {
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    if (cost.num_states() != S || cost.num_actions() != A) throw ShapeMismatch("value_iteration: cost shape");
    if (!(cost.min() > 0.0)) throw Error("value_iteration: costs must be strictly positive");

    // Policy iteration from `actions`; returns true at a fixed point with finite values.
    auto polish = [&](std::vector<std::size_t>& actions, StochasticPolicy& policy, CostToGo& values) {
        policy = StochasticPolicy::deterministic(A, actions);
        values = evaluate_policy(mdp, policy, cost);
        for (int round = 0; round < 100 && values.all_finite(); ++round) {
            auto improved = detail::greedy_actions(mdp, cost, values.values);
            if (improved == actions) return true;
            auto candidate = StochasticPolicy::deterministic(A, improved);
            auto candidate_values = evaluate_policy(mdp, candidate, cost);
            if (!candidate_values.all_finite()) return false;
            actions = std::move(improved);
            policy = std::move(candidate);
            values = std::move(candidate_values);
        }
        return false;
    };

    std::vector<double> v(S, 0.0), next(S);
    std::vector<std::size_t> actions;
    StochasticPolicy policy;
    CostToGo values;
    std::size_t it = 0;
    for (;;) {
        if (it >= opts.max_iters) throw NoConvergence("value_iteration did not converge", it);
        ++it;
        double diff = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < A; ++a) {
                auto r = mdp.row(s, a);
                double x = cost(s, a);
                for (std::size_t n = 0; n < S; ++n) x += r[n] * v[n];
                best = std::min(best, x);
            }
            next[s] = best;
            diff = std::max(diff, std::abs(best - v[s]));
        }
        v.swap(next);
        if (diff < opts.tol) break;
        if (it % 256 == 0) {
            actions = detail::greedy_actions(mdp, cost, v);
            if (polish(actions, policy, values)) return {std::move(policy), std::move(values), it};
        }
    }

    actions = detail::greedy_actions(mdp, cost, v);
    polish(actions, policy, values);
    if (!values.all_finite()) values = StateValues{v, std::vector<bool>(S, true)};
    return {std::move(policy), std::move(values), it};
}

struct FastPolicy {
    StochasticPolicy policy;
    HittingTimes times;
    double diameter = 0.0;  ///< max_s T^{pi_f}(s)
};

/// Fast policy (optimal for unit costs), its hitting times, and the SSP-diameter.
inline FastPolicy fast_policy_and_diameter(const Mdp& mdp, ValueIterationOptions opts = {}) {
    auto plan = value_iteration(mdp, CostFunction::constant(mdp.num_states(), mdp.num_actions(), 1.0), opts);
    auto times = hitting_times(mdp, plan.policy);
    if (!times.all_finite()) throw SingularSystem("fast policy is improper; is the goal reachable?");
    const double d = times.max_finite();
    return {std::move(plan.policy), std::move(times), d};
}

}  // namespace ssp
