#pragma once

#include "ssp/mdp.hpp"

#include <Eigen/Dense>

#include <deque>
#include <optional>

namespace ssp {

/**
 * Absorbing Markov chain over states 0..n-1 plus a goal (column n of `kernel`),
 * with an expected one-step cost per state. Policy evaluation, hitting times,
 * and the two-phase switching strategies all reduce to this.
 */
struct MarkovChain {
    std::size_t num_states = 0;
    std::vector<double> kernel;     ///< [s][s'] with s' in 0..num_states (goal last)
    std::vector<double> step_cost;  ///< expected cost of one step from s

    double p(std::size_t s, std::size_t next) const { return kernel[s * (num_states + 1) + next]; }
};

/// Chain induced by running `policy` on `mdp`, charging `cost`.
inline MarkovChain induced_chain(const Mdp& mdp, const StochasticPolicy& policy, const CostFunction& cost) {
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    if (policy.num_states() != S || policy.num_actions() != A || cost.num_states() != S || cost.num_actions() != A)
        throw ShapeMismatch("induced_chain: shapes of mdp, policy and cost differ");
    MarkovChain chain{S, std::vector<double>(S * (S + 1), 0.0), std::vector<double>(S, 0.0)};
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            const double pa = policy(s, a);
            if (pa == 0.0) continue;
            chain.step_cost[s] += pa * cost(s, a);
            auto r = mdp.row(s, a);
            for (std::size_t n = 0; n <= S; ++n) chain.kernel[s * (S + 1) + n] += pa * r[n];
        }
    return chain;
}

/**
 * States from which the chain reaches the goal with probability one.
 *
 * A state qualifies iff every state reachable from it can still reach the goal:
 * first mark states with no path to the goal, then remove everything that can
 * reach one of them.
 */
inline std::vector<bool> proper_states(const MarkovChain& chain) {
    const std::size_t S = chain.num_states;
    auto reach_goal = detail::can_reach_goal(S, [&](std::size_t s, std::size_t n) { return chain.p(s, n) > 0.0; });
    std::vector<std::vector<std::size_t>> preds(S);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t n = 0; n < S; ++n)
            if (n != s && chain.p(s, n) > 0.0) preds[n].push_back(s);
    std::vector<bool> improper(S, false);
    std::deque<std::size_t> frontier;
    for (std::size_t s = 0; s < S; ++s)
        if (!reach_goal[s]) {
            improper[s] = true;
            frontier.push_back(s);
        }
    while (!frontier.empty()) {
        const std::size_t n = frontier.front();
        frontier.pop_front();
        for (std::size_t s : preds[n])
            if (!improper[s]) {
                improper[s] = true;
                frontier.push_back(s);
            }
    }
    std::vector<bool> proper(S);
    for (std::size_t s = 0; s < S; ++s) proper[s] = !improper[s];
    return proper;
}

/// LU-factorized (I - K) restricted to the proper states of a chain; solves
/// V = r + K V for any per-state reward vector r.
class ChainSolver {
public:
    explicit ChainSolver(const MarkovChain& chain) : num_states_(chain.num_states), proper_(proper_states(chain)) {
        index_.assign(num_states_, npos);
        for (std::size_t s = 0; s < num_states_; ++s)
            if (proper_[s]) {
                index_[s] = members_.size();
                members_.push_back(s);
            }
        const auto n = static_cast<Eigen::Index>(members_.size());
        Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
        for (std::size_t i = 0; i < members_.size(); ++i)
            for (std::size_t j = 0; j < members_.size(); ++j)
                m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) -= chain.p(members_[i], members_[j]);
        if (n > 0) lu_.compute(m);
    }

    StateValues solve(std::span<const double> reward) const {
        if (reward.size() != num_states_) throw ShapeMismatch("ChainSolver::solve: reward has wrong size");
        StateValues out{std::vector<double>(num_states_, std::numeric_limits<double>::infinity()), proper_};
        if (members_.empty()) return out;
        Eigen::VectorXd b(static_cast<Eigen::Index>(members_.size()));
        for (std::size_t i = 0; i < members_.size(); ++i) b(static_cast<Eigen::Index>(i)) = reward[members_[i]];
        Eigen::VectorXd x = lu_.solve(b);
        for (std::size_t i = 0; i < members_.size(); ++i) out.values[members_[i]] = x(static_cast<Eigen::Index>(i));
        return out;
    }

    const std::vector<bool>& proper() const { return proper_; }

private:
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::size_t num_states_;
    std::vector<bool> proper_;
    std::vector<std::size_t> index_;
    std::vector<std::size_t> members_;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

inline StateValues solve_chain(const MarkovChain& chain) { return ChainSolver(chain).solve(chain.step_cost); }

/// Cost-to-go J^pi; states from which pi is improper are flagged infinite.
inline CostToGo evaluate_policy(const Mdp& mdp, const StochasticPolicy& policy, const CostFunction& cost) {
    return solve_chain(induced_chain(mdp, policy, cost));
}

/// Expected number of steps to the goal; same solve path as evaluate_policy with unit costs.
inline HittingTimes hitting_times(const Mdp& mdp, const StochasticPolicy& policy) {
    return evaluate_policy(mdp, policy, CostFunction::constant(mdp.num_states(), mdp.num_actions(), 1.0));
}

/// Factorizes the chain of a fixed policy once and evaluates it against many costs.
class PolicyEvaluator {
public:
    PolicyEvaluator(const Mdp& mdp, const StochasticPolicy& policy)
        : policy_(policy),
          solver_(induced_chain(mdp, policy, CostFunction::constant(mdp.num_states(), mdp.num_actions(), 0.0))) {}

    CostToGo evaluate(const CostFunction& cost) const {
        const std::size_t S = policy_.num_states(), A = policy_.num_actions();
        std::vector<double> r(S, 0.0);
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t a = 0; a < A; ++a) r[s] += policy_(s, a) * cost(s, a);
        return solver_.solve(r);
    }

private:
    StochasticPolicy policy_;
    ChainSolver solver_;
};

/**
 * Occupancy measure q^pi(s, a) from the initial state.
 *
 * Solves the flow equations x(s) = 1{s = s0} + sum_{s'} x(s') M(s', s) over
 * the states reachable from s0. Throws SingularSystem if pi is improper on
 * any reachable state.
 */
inline OccupancyMeasure occupancy_of_policy(const Mdp& mdp, const StochasticPolicy& policy) {
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    auto chain = induced_chain(mdp, policy, CostFunction::constant(S, A, 0.0));
    auto proper = proper_states(chain);

    std::vector<bool> reached(S, false);
    std::deque<std::size_t> frontier{mdp.initial_state()};
    reached[mdp.initial_state()] = true;
    while (!frontier.empty()) {
        const std::size_t s = frontier.front();
        frontier.pop_front();
        for (std::size_t n = 0; n < S; ++n)
            if (!reached[n] && chain.p(s, n) > 0.0) {
                reached[n] = true;
                frontier.push_back(n);
            }
    }
    std::vector<std::size_t> members;
    for (std::size_t s = 0; s < S; ++s)
        if (reached[s]) {
            if (!proper[s]) throw SingularSystem("occupancy_of_policy: policy is improper on reachable state " + std::to_string(s));
            members.push_back(s);
        }
    const auto n = static_cast<Eigen::Index>(members.size());
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (members[static_cast<std::size_t>(i)] == mdp.initial_state()) b(i) = 1.0;
        for (Eigen::Index j = 0; j < n; ++j)
            m(i, j) -= chain.p(members[static_cast<std::size_t>(j)], members[static_cast<std::size_t>(i)]);
    }
    Eigen::VectorXd x = m.partialPivLu().solve(b);
    std::vector<double> q(S * A, 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
        const std::size_t s = members[static_cast<std::size_t>(i)];
        const double visits = std::max(0.0, x(i));
        for (std::size_t a = 0; a < A; ++a) q[s * A + a] = visits * policy(s, a);
    }
    return {S, A, std::move(q)};
}

/// pi(a|s) = q(s,a) / q(s); states with no mass get the uniform distribution.
inline StochasticPolicy policy_of_occupancy(const OccupancyMeasure& q) {
    const std::size_t S = q.num_states(), A = q.num_actions();
    std::vector<double> probs(S * A);
    for (std::size_t s = 0; s < S; ++s) {
        const double mass = q.state_mass(s);
        for (std::size_t a = 0; a < A; ++a)
            probs[s * A + a] = mass > 0.0 ? q(s, a) / mass : 1.0 / static_cast<double>(A);
        // renormalize to absorb rounding
        double sum = 0.0;
        for (std::size_t a = 0; a < A; ++a) sum += probs[s * A + a];
        for (std::size_t a = 0; a < A; ++a) probs[s * A + a] /= sum;
    }
    return {S, A, std::move(probs)};
}

inline double inner_product(const OccupancyMeasure& q, const CostFunction& c) {
    if (q.num_states() != c.num_states() || q.num_actions() != c.num_actions())
        throw ShapeMismatch("inner_product: occupancy and cost shapes differ");
    double sum = 0.0;
    for (std::size_t i = 0; i < q.values().size(); ++i) sum += q.values()[i] * c.values()[i];
    return sum;
}

/// sum_a q(s,a) - sum_{s',a'} q(s',a') P(s|s',a') - 1{s = s0}, per state.
inline std::vector<double> flow_residual(const Mdp& mdp, const OccupancyMeasure& q) {
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    std::vector<double> r(S, 0.0);
    r[mdp.initial_state()] = -1.0;
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            const double x = q(s, a);
            r[s] += x;
            for (std::size_t n = 0; n < S; ++n) r[n] -= x * mdp.p(s, a, n);
        }
    return r;
}

inline double sup_norm(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

}  // namespace ssp
