#pragma once

#include "ssp/planning.hpp"
#include "ssp/rng.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <utility>

namespace ssp {

/**
 * Oblivious cost sequence c_1, c_2, ...: c_k depends only on the scheduler
 * parameters, its seed and k, never on the learner.
 *
 *  - constant:            costs[0] every episode
 *  - alternating:         costs[0] on odd k, costs[1] on even k
 *  - seeded_random:       entries uniform in [c_min, 1], drawn from a stream keyed by (seed, k)
 *  - replay:              costs[k-1]; k past the end is an error
 *  - piecewise_adversary: costs[i] for segments[i] consecutive episodes, cycling
 */
class CostScheduler {
public:
    enum class Kind { Constant, Alternating, SeededRandom, Replay, PiecewiseAdversary };

    CostScheduler() = default;

    static CostScheduler constant(CostFunction c) { return CostScheduler(Kind::Constant, {std::move(c)}); }

    static CostScheduler alternating(CostFunction odd, CostFunction even) {
        return CostScheduler(Kind::Alternating, {std::move(odd), std::move(even)});
    }

    static CostScheduler seeded_random(std::size_t num_states, std::size_t num_actions, double c_min, std::uint64_t seed) {
        if (!(c_min >= 0.0 && c_min <= 1.0)) throw Error("seeded_random scheduler: c_min must lie in [0, 1]");
        CostScheduler s(Kind::SeededRandom, {});
        s.num_states_ = num_states;
        s.num_actions_ = num_actions;
        s.c_min_ = c_min;
        s.seed_ = seed;
        return s;
    }

    static CostScheduler replay(std::vector<CostFunction> sequence) {
        if (sequence.empty()) throw Error("replay scheduler: empty sequence");
        return CostScheduler(Kind::Replay, std::move(sequence));
    }

    static CostScheduler piecewise(std::vector<CostFunction> pieces, std::vector<std::size_t> segments) {
        if (pieces.empty() || pieces.size() != segments.size()) throw Error("piecewise scheduler: need one segment length per piece");
        for (auto n : segments)
            if (n == 0) throw Error("piecewise scheduler: segment lengths must be positive");
        CostScheduler s(Kind::PiecewiseAdversary, std::move(pieces));
        s.segments_ = std::move(segments);
        return s;
    }

    Kind kind() const { return kind_; }
    std::size_t num_states() const { return costs_.empty() ? num_states_ : costs_.front().num_states(); }
    std::size_t num_actions() const { return costs_.empty() ? num_actions_ : costs_.front().num_actions(); }
    const std::vector<CostFunction>& costs() const { return costs_; }
    const std::vector<std::size_t>& segments() const { return segments_; }
    double c_min() const { return c_min_; }
    std::uint64_t seed() const { return seed_; }

    /// Copy with a different seed (only affects seeded_random).
    CostScheduler reseeded(std::uint64_t seed) const {
        CostScheduler s = *this;
        s.seed_ = seed;
        return s;
    }

    /// Number of episodes the scheduler can serve (replay only).
    std::optional<std::size_t> length() const {
        if (kind_ == Kind::Replay) return costs_.size();
        return std::nullopt;
    }

    /// c_k for k >= 1.
    CostFunction next(std::size_t k) const {
        if (k == 0) throw Error("CostScheduler: episodes are numbered from 1");
        switch (kind_) {
            case Kind::Constant: return costs_[0];
            case Kind::Alternating: return costs_[k % 2 == 1 ? 0 : 1];
            case Kind::SeededRandom: {
                Rng rng = Rng(seed_).derive(k);
                std::vector<double> v(num_states_ * num_actions_);
                for (double& x : v) x = rng.uniform(c_min_, 1.0);
                return {num_states_, num_actions_, std::move(v)};
            }
            case Kind::Replay:
                if (k > costs_.size())
                    throw Error("replay scheduler: episode " + std::to_string(k) + " beyond the stored sequence of " +
                                std::to_string(costs_.size()));
                return costs_[k - 1];
            case Kind::PiecewiseAdversary: {
                std::size_t period = 0;
                for (auto n : segments_) period += n;
                std::size_t r = (k - 1) % period;
                for (std::size_t i = 0; i < segments_.size(); ++i) {
                    if (r < segments_[i]) return costs_[i];
                    r -= segments_[i];
                }
                return costs_.back();
            }
        }
        throw Error("CostScheduler: unknown kind");
    }

    /// Smallest entry any episode can emit.
    double min_cost() const {
        if (kind_ == Kind::SeededRandom) return c_min_;
        double m = 1.0;
        for (const auto& c : costs_) m = std::min(m, c.min());
        return m;
    }

private:
    CostScheduler(Kind kind, std::vector<CostFunction> costs) : kind_(kind), costs_(std::move(costs)) {
        for (const auto& c : costs_)
            if (c.num_states() != costs_.front().num_states() || c.num_actions() != costs_.front().num_actions())
                throw ShapeMismatch("CostScheduler: cost functions differ in shape");
    }

    Kind kind_ = Kind::Constant;
    std::vector<CostFunction> costs_;
    std::vector<std::size_t> segments_;
    std::size_t num_states_ = 0;
    std::size_t num_actions_ = 0;
    double c_min_ = 0.0;
    std::uint64_t seed_ = 0;
};

inline std::string_view to_string(CostScheduler::Kind k) {
    switch (k) {
        case CostScheduler::Kind::Constant: return "constant";
        case CostScheduler::Kind::Alternating: return "alternating";
        case CostScheduler::Kind::SeededRandom: return "seeded_random";
        case CostScheduler::Kind::Replay: return "replay";
        case CostScheduler::Kind::PiecewiseAdversary: return "piecewise_adversary";
    }
    return "?";
}

struct EnvInstance {
    std::string name;
    Mdp mdp;
    CostScheduler scheduler;
    std::optional<double> diameter;                 ///< true SSP-diameter when known
    std::optional<StochasticPolicy> fast_policy;    ///< true fast policy when known
    std::vector<std::pair<std::string, CostScheduler>> alternatives;  ///< other named cost settings
};

namespace detail {

inline EnvInstance finish_instance(std::string name, Mdp mdp, std::optional<CostScheduler> scheduler = std::nullopt) {
    validate_mdp(mdp);
    auto fast = fast_policy_and_diameter(mdp);
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    CostScheduler sched = scheduler ? std::move(*scheduler) : CostScheduler::constant(CostFunction::constant(S, A, 1.0));
    return {std::move(name), std::move(mdp), std::move(sched), fast.diameter, std::move(fast.policy), {}};
}

inline void require_close(double actual, double expected, const std::string& what) {
    if (std::abs(actual - expected) > 1e-9 * std::max(1.0, std::abs(expected)))
        throw Error(what + ": expected " + std::to_string(expected) + ", got " + std::to_string(actual));
}

}  // namespace detail

/// Deterministic chain s_0 -> s_1 -> ... -> s_{n-1} -> goal with one action.
inline EnvInstance make_chain(std::size_t n) {
    if (n == 0) throw Error("make_chain: need at least one state");
    std::vector<double> p(n * (n + 1), 0.0);
    for (std::size_t s = 0; s < n; ++s) p[s * (n + 1) + s + 1] = 1.0;
    return detail::finish_instance("chain:" + std::to_string(n), Mdp(n, 1, 0, std::move(p)));
}

/**
 * w x h grid, start at cell (0,0), goal at cell (w-1,h-1). Cells are numbered
 * row-major so the goal cell is the last one and becomes the sentinel.
 * Actions: 0 up, 1 right, 2 down, 3 left. The intended move happens with
 * probability 1 - slip, otherwise one of the other three directions uniformly.
 * Moves into a wall leave the agent in place.
 */
inline EnvInstance make_gridworld(std::size_t w, std::size_t h, double slip) {
    if (w == 0 || h == 0 || w * h < 2) throw Error("make_gridworld: grid needs at least two cells");
    if (!(slip >= 0.0 && slip <= 0.5)) throw Error("make_gridworld: slip must lie in [0, 0.5]");
    const std::size_t S = w * h - 1, A = 4;
    constexpr int dx[4] = {0, 1, 0, -1};
    constexpr int dy[4] = {-1, 0, 1, 0};
    auto move = [&](std::size_t cell, std::size_t dir) {
        const auto x = static_cast<long>(cell % w) + dx[dir];
        const auto y = static_cast<long>(cell / w) + dy[dir];
        if (x < 0 || y < 0 || x >= static_cast<long>(w) || y >= static_cast<long>(h)) return cell;
        return static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
    };
    std::vector<double> p(S * A * (S + 1), 0.0);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a)
            for (std::size_t d = 0; d < A; ++d) {
                const double pr = d == a ? 1.0 - slip : slip / 3.0;
                if (pr == 0.0) continue;
                p[(s * A + a) * (S + 1) + move(s, d)] += pr;  // the goal cell index equals S
            }
    return detail::finish_instance("gridworld:" + std::to_string(w) + "x" + std::to_string(h) + ":" + std::to_string(slip),
                                   Mdp(S, A, 0, std::move(p)));
}

/// Two cost maps for a gridworld: cells in the left half cost `cheap` in the
/// first map and `dear` in the second, and the other way round on the right.
inline std::pair<CostFunction, CostFunction> gridworld_split_costs(std::size_t w, std::size_t h, double cheap, double dear) {
    const std::size_t S = w * h - 1, A = 4;
    std::vector<double> first(S * A), second(S * A);
    for (std::size_t s = 0; s < S; ++s) {
        const bool left = 2 * (s % w) < w;
        for (std::size_t a = 0; a < A; ++a) {
            first[s * A + a] = left ? cheap : dear;
            second[s * A + a] = left ? dear : cheap;
        }
    }
    return {CostFunction(S, A, std::move(first)), CostFunction(S, A, std::move(second))};
}

/**
 * Random instance with guaranteed goal reachability: states are arranged along
 * a random permutation ending at the goal, and one random action per state
 * puts at least `goal_reach_prob` on the next element of that path. All other
 * mass is spread with Dirichlet(1) weights over S and the goal.
 */
inline EnvInstance make_random_ssp(std::size_t num_states, std::size_t num_actions, std::uint64_t seed, double goal_reach_prob) {
    if (num_states == 0 || num_actions == 0) throw Error("make_random_ssp: sizes must be positive");
    if (!(goal_reach_prob > 0.0 && goal_reach_prob <= 1.0)) throw Error("make_random_ssp: goal_reach_prob must lie in (0, 1]");
    const std::size_t S = num_states, A = num_actions;
    Rng rng(seed);
    std::vector<std::size_t> order(S);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = S; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    std::vector<std::size_t> successor(S);
    for (std::size_t i = 0; i < S; ++i) successor[order[i]] = i + 1 < S ? order[i + 1] : S;

    std::vector<double> p(S * A * (S + 1), 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        const std::size_t designated = rng.index(A);
        for (std::size_t a = 0; a < A; ++a) {
            double* row = &p[(s * A + a) * (S + 1)];
            std::vector<double> w(S + 1);
            double total = 0.0;
            for (double& x : w) {
                x = -std::log(1.0 - rng.uniform());
                total += x;
            }
            const double free_mass = a == designated ? 1.0 - goal_reach_prob : 1.0;
            for (std::size_t n = 0; n <= S; ++n) row[n] = free_mass * w[n] / total;
            if (a == designated) row[successor[s]] += goal_reach_prob;
        }
    }
    return detail::finish_instance("random:" + std::to_string(S) + ":" + std::to_string(A) + ":" + std::to_string(seed),
                                   Mdp(S, A, 0, std::move(p)));
}

/// Closed form |A| (|A|^|S| - 1) / (|A| - 1) of the uniform policy's cost on fixture_a1.
inline double fixture_a1_uniform_cost(std::size_t num_states, std::size_t num_actions) {
    const double A = static_cast<double>(num_actions);
    if (num_actions == 1) return static_cast<double>(num_states);
    return A * (std::pow(A, static_cast<double>(num_states)) - 1.0) / (A - 1.0);
}

/**
 * Combination-lock chain: in state i one secret action a(i) advances to i+1
 * (the last state advances to the goal) and every other action resets to s0.
 * The uniform policy needs exponentially many steps.
 */
inline EnvInstance fixture_a1(std::size_t num_states, std::size_t num_actions, std::uint64_t seed) {
    if (num_states == 0 || num_actions == 0) throw Error("fixture_a1: sizes must be positive");
    const std::size_t S = num_states, A = num_actions;
    Rng rng(seed);
    std::vector<double> p(S * A * (S + 1), 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        const std::size_t secret = rng.index(A);
        for (std::size_t a = 0; a < A; ++a) p[(s * A + a) * (S + 1) + (a == secret ? s + 1 : 0)] = 1.0;
    }
    auto env = detail::finish_instance("a1:" + std::to_string(S) + ":" + std::to_string(A) + ":" + std::to_string(seed),
                                       Mdp(S, A, 0, std::move(p)));
    const auto j = evaluate_policy(env.mdp, StochasticPolicy::uniform(S, A), CostFunction::constant(S, A, 1.0));
    detail::require_close(j.at(0), fixture_a1_uniform_cost(S, A), "fixture_a1 uniform cost");
    return env;
}

/**
 * One state, two actions: a1 reaches the goal w.p. 1/D, a2 w.p. 2 c_min / D.
 * The default scheduler charges (1, c_min); the alternative "a1_better"
 * charges (1, 3 c_min).
 */
inline EnvInstance fixture_a2(double d_param, double c_min) {
    if (!(d_param >= 1.0)) throw Error("fixture_a2: D must be at least 1");
    if (!(c_min > 0.0 && 2.0 * c_min <= d_param && 3.0 * c_min <= 1.0)) throw Error("fixture_a2: need 0 < c_min <= 1/3 and 2 c_min <= D");
    std::vector<double> p = {1.0 - 1.0 / d_param, 1.0 / d_param, 1.0 - 2.0 * c_min / d_param, 2.0 * c_min / d_param};
    const CostFunction a2_better(1, 2, {1.0, c_min});
    const CostFunction a1_better(1, 2, {1.0, 3.0 * c_min});
    auto env = detail::finish_instance("a2:" + std::to_string(d_param) + ":" + std::to_string(c_min), Mdp(1, 2, 0, std::move(p)),
                                       CostScheduler::constant(a2_better));
    env.alternatives = {{"a2_better", CostScheduler::replay({a2_better})}, {"a1_better", CostScheduler::replay({a1_better})}};
    const std::size_t a1[] = {0}, a2[] = {1};
    detail::require_close(hitting_times(env.mdp, StochasticPolicy::deterministic(2, a1)).at(0), d_param, "fixture_a2 time of a1");
    detail::require_close(hitting_times(env.mdp, StochasticPolicy::deterministic(2, a2)).at(0), d_param / (2.0 * c_min),
                          "fixture_a2 time of a2");
    return env;
}

/**
 * Two states: in s0, a1 goes to the goal and a2 goes to the goal w.p.
 * p = 1 - (1 - c_min)/(10K), else to s1; s1 leaves w.p. 1/(10K) under both actions.
 * Costs: 1 everywhere except c(s0, a2) = c_min.
 */
inline EnvInstance fixture_a3(std::size_t episodes, double c_min) {
    if (episodes == 0) throw Error("fixture_a3: K must be positive");
    if (!(c_min > 0.0 && c_min <= 1.0)) throw Error("fixture_a3: c_min must lie in (0, 1]");
    const double tenk = 10.0 * static_cast<double>(episodes);
    const double p = 1.0 - (1.0 - c_min) / tenk;
    const double leave = 1.0 / tenk;
    // layout [s][a][s0, s1, g]
    std::vector<double> kernel = {
        0.0, 0.0, 1.0,                 // s0, a1
        0.0, 1.0 - p, p,               // s0, a2
        0.0, 1.0 - leave, leave,       // s1, a1
        0.0, 1.0 - leave, leave,       // s1, a2
    };
    const CostFunction cost(2, 2, {1.0, c_min, 1.0, 1.0});
    auto env = detail::finish_instance("a3:" + std::to_string(episodes) + ":" + std::to_string(c_min), Mdp(2, 2, 0, std::move(kernel)),
                                       CostScheduler::constant(cost));
    const std::size_t pi1[] = {0, 0}, pi2[] = {1, 1};
    const auto p1 = StochasticPolicy::deterministic(2, pi1), p2 = StochasticPolicy::deterministic(2, pi2);
    detail::require_close(evaluate_policy(env.mdp, p1, cost).at(0), 1.0, "fixture_a3 cost of pi_1");
    detail::require_close(evaluate_policy(env.mdp, p2, cost).at(0), 1.0, "fixture_a3 cost of pi_2");
    detail::require_close(hitting_times(env.mdp, p2).at(0), 2.0 - c_min, "fixture_a3 time of pi_2");
    return env;
}

}  // namespace ssp
