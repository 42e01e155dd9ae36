#pragma once

#include "ssp/ssp.hpp"

namespace ssp::test {

inline StochasticPolicy random_policy(std::size_t S, std::size_t A, Rng& rng) {
    std::vector<double> p(S * A);
    for (std::size_t s = 0; s < S; ++s) {
        double total = 0.0;
        for (std::size_t a = 0; a < A; ++a) total += p[s * A + a] = rng.uniform() + 0.05;
        for (std::size_t a = 0; a < A; ++a) p[s * A + a] /= total;
    }
    return {S, A, std::move(p)};
}

/// Random policy that is proper: mixes with a proper deterministic one.
inline StochasticPolicy random_proper_policy(const Mdp& mdp, Rng& rng) {
    const auto fast = fast_policy_and_diameter(mdp).policy;
    for (;;) {
        auto pi = random_policy(mdp.num_states(), mdp.num_actions(), rng);
        if (hitting_times(mdp, pi).all_finite()) return pi;
        std::vector<double> mixed(pi.probs());
        for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] = 0.5 * mixed[i] + 0.5 * fast.probs()[i];
        StochasticPolicy m(mdp.num_states(), mdp.num_actions(), std::move(mixed));
        if (hitting_times(mdp, m).all_finite()) return m;
    }
}

inline CostFunction random_cost(std::size_t S, std::size_t A, double lo, Rng& rng) {
    std::vector<double> c(S * A);
    for (double& x : c) x = rng.uniform(lo, 1.0);
    return {S, A, std::move(c)};
}

inline OccupancyMeasure random_positive_occupancy(std::size_t S, std::size_t A, Rng& rng) {
    std::vector<double> q(S * A);
    for (double& x : q) x = rng.uniform(0.05, 3.0);
    return {S, A, std::move(q)};
}

/// Residuals of the optimality conditions of the known-kernel KL projection.
struct KnownKkt {
    double flow = 0.0;
    double budget_excess = 0.0;  ///< max(0, sum q - tau)
    double slackness = 0.0;      ///< |lambda (sum q - tau)|
    double stationarity = 0.0;   ///< sup |log q - log q' + lambda - v(s) + P v|
    double lambda_negativity = 0.0;
};

inline KnownKkt known_kkt(const Mdp& mdp, const OccupancyMeasure& q_prime, const Projection<OccupancyMeasure>& r,
                          double tau) {
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    KnownKkt k;
    k.flow = sup_norm(flow_residual(mdp, r.q));
    k.budget_excess = std::max(0.0, r.q.total() - tau);
    k.slackness = std::abs(r.duals.lambda * (r.q.total() - tau));
    k.lambda_negativity = std::max(0.0, -r.duals.lambda);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            double pv = 0.0;
            for (std::size_t n = 0; n < S; ++n) pv += mdp.p(s, a, n) * r.duals.v[n];
            const double g = std::log(r.q(s, a)) - std::log(q_prime(s, a)) + r.duals.lambda - r.duals.v[s] + pv;
            k.stationarity = std::max(k.stationarity, std::abs(g));
        }
    return k;
}

/// Occupancy measures of random proper policies whose expected time fits in tau.
inline std::vector<OccupancyMeasure> feasible_points(const Mdp& mdp, double tau, std::size_t count, Rng& rng) {
    std::vector<OccupancyMeasure> out;
    const auto fast = fast_policy_and_diameter(mdp).policy;
    while (out.size() < count) {
        auto pi = random_proper_policy(mdp, rng);
        for (int attempt = 0; attempt < 20; ++attempt) {
            auto q = occupancy_of_policy(mdp, pi);
            if (q.total() <= tau) {
                out.push_back(std::move(q));
                break;
            }
            std::vector<double> mixed(pi.probs());
            for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] = 0.5 * mixed[i] + 0.5 * fast.probs()[i];
            pi = StochasticPolicy(mdp.num_states(), mdp.num_actions(), std::move(mixed));
        }
    }
    return out;
}

}  // namespace ssp::test
