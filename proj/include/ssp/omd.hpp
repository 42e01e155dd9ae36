#pragma once

#include "ssp/confidence.hpp"

#include <Eigen/Cholesky>

#include <optional>

namespace ssp {

/// Learning rate and the time budget tau of the feasible set, plus dual-solver knobs.
struct OmdParams {
    double eta = 1.0;
    double tau = 1.0;
    double dual_tol = 1e-8;
    std::size_t dual_max_iters = 50'000;
    /// Reject tau below the smallest achievable expected time before solving.
    bool check_feasibility = true;

    void check() const {
        if (!(eta > 0.0)) throw Error("OmdParams: eta must be positive");
        if (!(tau >= 1.0)) throw Error("OmdParams: tau must be at least 1");
        if (!(dual_tol > 0.0) || dual_max_iters == 0) throw Error("OmdParams: invalid dual solver settings");
    }
};

/// Entries below this are treated as zero inside logarithms.
inline constexpr double kOccupancyFloor = 1e-300;
/// Exponents of the closed-form primal recovery are clamped to +-kExponentClamp.
inline constexpr double kExponentClamp = 50.0;

/// Expected visit counts q(s, a, s') over S x A x (S + goal).
class ExtendedOccupancyMeasure {
public:
    ExtendedOccupancyMeasure() = default;

    ExtendedOccupancyMeasure(std::size_t num_states, std::size_t num_actions, std::vector<double> q)
        : num_states_(num_states), num_actions_(num_actions), q_(std::move(q)) {
        if (q_.size() != num_states_ * num_actions_ * (num_states_ + 1))
            throw ShapeMismatch("ExtendedOccupancyMeasure: wrong size");
        for (double x : q_)
            if (!(x >= 0.0) || !std::isfinite(x)) throw Error("ExtendedOccupancyMeasure: entries must be finite and >= 0");
    }

    static ExtendedOccupancyMeasure filled(std::size_t num_states, std::size_t num_actions, double value) {
        return {num_states, num_actions, std::vector<double>(num_states * num_actions * (num_states + 1), value)};
    }

    /// q(s,a,s') = q(s,a) P(s'|s,a).
    static ExtendedOccupancyMeasure from_kernel(const OccupancyMeasure& q, const Mdp& mdp) {
        const std::size_t S = mdp.num_states(), A = mdp.num_actions();
        std::vector<double> out(S * A * (S + 1));
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t a = 0; a < A; ++a)
                for (std::size_t n = 0; n <= S; ++n) out[(s * A + a) * (S + 1) + n] = q(s, a) * mdp.p(s, a, n);
        return {S, A, std::move(out)};
    }

    std::size_t num_states() const { return num_states_; }
    std::size_t num_actions() const { return num_actions_; }
    double operator()(std::size_t s, std::size_t a, std::size_t n) const {
        return q_[(s * num_actions_ + a) * (num_states_ + 1) + n];
    }
    const std::vector<double>& values() const { return q_; }

    double pair_mass(std::size_t s, std::size_t a) const {
        double m = 0.0;
        for (std::size_t n = 0; n <= num_states_; ++n) m += (*this)(s, a, n);
        return m;
    }
    double state_mass(std::size_t s) const {
        double m = 0.0;
        for (std::size_t a = 0; a < num_actions_; ++a) m += pair_mass(s, a);
        return m;
    }
    double total() const { return std::accumulate(q_.begin(), q_.end(), 0.0); }

    /// q(s, a) = sum_s' q(s, a, s').
    OccupancyMeasure marginal() const {
        std::vector<double> out(num_states_ * num_actions_);
        for (std::size_t s = 0; s < num_states_; ++s)
            for (std::size_t a = 0; a < num_actions_; ++a) out[s * num_actions_ + a] = pair_mass(s, a);
        return {num_states_, num_actions_, std::move(out)};
    }

    /// P^q(s'|s,a) = q(s,a,s') / q(s,a); uniform over S + goal where q(s,a) = 0.
    Mdp induced_kernel(std::size_t initial_state) const {
        const std::size_t S = num_states_, A = num_actions_;
        std::vector<double> p(q_.size());
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t a = 0; a < A; ++a) {
                const double m = pair_mass(s, a);
                for (std::size_t n = 0; n <= S; ++n)
                    p[(s * A + a) * (S + 1) + n] = m > 0.0 ? (*this)(s, a, n) / m : 1.0 / static_cast<double>(S + 1);
            }
        return {S, A, initial_state, std::move(p)};
    }

private:
    std::size_t num_states_ = 0;
    std::size_t num_actions_ = 0;
    std::vector<double> q_;
};

/// Extended flow: sum_{a,s'} q(s,a,s') - sum_{s'',a''} q(s'',a'',s) - 1{s = s0}.
inline std::vector<double> flow_residual(const ExtendedOccupancyMeasure& q, std::size_t initial_state) {
    const std::size_t S = q.num_states(), A = q.num_actions();
    std::vector<double> r(S, 0.0);
    r[initial_state] = -1.0;
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a)
            for (std::size_t n = 0; n <= S; ++n) {
                const double x = q(s, a, n);
                r[s] += x;
                if (n < S) r[n] -= x;
            }
    return r;
}

/// Unnormalized KL divergence sum q log(q/q') + q' - q.
inline double kl_divergence(std::span<const double> q, std::span<const double> q_ref) {
    if (q.size() != q_ref.size()) throw ShapeMismatch("kl_divergence: size mismatch");
    double d = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double x = std::max(q[i], kOccupancyFloor), y = std::max(q_ref[i], kOccupancyFloor);
        d += x * std::log(x / y) + y - x;
    }
    return d;
}
inline double kl_divergence(const OccupancyMeasure& q, const OccupancyMeasure& q_ref) {
    return kl_divergence(q.values(), q_ref.values());
}
inline double kl_divergence(const ExtendedOccupancyMeasure& q, const ExtendedOccupancyMeasure& q_ref) {
    return kl_divergence(q.values(), q_ref.values());
}

/// q'(s,a) = q(s,a) exp(-eta c(s,a)).
inline OccupancyMeasure unconstrained_step(const OccupancyMeasure& q, const CostFunction& c, double eta) {
    if (q.num_states() != c.num_states() || q.num_actions() != c.num_actions())
        throw ShapeMismatch("unconstrained_step: shape mismatch");
    std::vector<double> out(q.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= std::exp(-eta * c.values()[i]);
    return {q.num_states(), q.num_actions(), std::move(out)};
}

/// q'(s,a,s') = q(s,a,s') exp(-eta c(s,a)).
inline ExtendedOccupancyMeasure unconstrained_step(const ExtendedOccupancyMeasure& q, const CostFunction& c, double eta) {
    if (q.num_states() != c.num_states() || q.num_actions() != c.num_actions())
        throw ShapeMismatch("unconstrained_step: shape mismatch");
    const std::size_t S = q.num_states(), A = q.num_actions();
    std::vector<double> out(q.values());
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            const double f = std::exp(-eta * c(s, a));
            for (std::size_t n = 0; n <= S; ++n) out[(s * A + a) * (S + 1) + n] *= f;
        }
    return {S, A, std::move(out)};
}

/// Lagrange multipliers of the projection: lambda for the time budget, v for the
/// flow constraints (v(goal) = 0 implicitly), mu_plus / mu_minus for the upper and
/// lower confidence constraints (extended case only, laid out like the extended
/// occupancy measure). Also used as the container for dual gradients.
struct DualVariables {
    double lambda = 0.0;
    std::vector<double> v;
    std::vector<double> mu_plus;
    std::vector<double> mu_minus;

    static DualVariables zeros_known(std::size_t num_states) { return {0.0, std::vector<double>(num_states, 0.0), {}, {}}; }
    static DualVariables zeros_extended(std::size_t num_states, std::size_t num_actions) {
        const std::size_t n = num_states * num_actions * (num_states + 1);
        return {0.0, std::vector<double>(num_states, 0.0), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    }
};

struct DualTelemetry {
    std::size_t iterations = 0;
    double residual = 0.0;  ///< sup-norm of the projected dual gradient at the final iterate
    std::size_t clamp_events = 0;  ///< exponent clamps active at the final iterate
    double slack = 0.0;            ///< tau - total mass
    bool converged = false;
};

template <class Occupancy>
struct Projection {
    Occupancy q;
    DualVariables duals;
    DualTelemetry telemetry;
};

class DualDidNotConverge : public Error {
public:
    explicit DualDidNotConverge(DualTelemetry t)
        : Error("dual solver did not converge (residual " + std::to_string(t.residual) + " after " +
                std::to_string(t.iterations) + " iterations)"),
          telemetry_(t) {}
    const DualTelemetry& telemetry() const { return telemetry_; }

private:
    DualTelemetry telemetry_;
};

class EmptyFeasibleSet : public Error {
public:
    EmptyFeasibleSet(double min_time, double tau)
        : Error("no occupancy measure with total mass <= tau: minimal expected time " + std::to_string(min_time) +
                " exceeds tau " + std::to_string(tau)),
          min_time_(min_time), tau_(tau) {}
    double min_time() const { return min_time_; }
    double tau() const { return tau_; }

private:
    double min_time_;
    double tau_;
};

struct DualValue {
    double value = 0.0;
    DualVariables gradient;
    std::size_t clamp_events = 0;
};

namespace detail {

inline double clamp_exponent(double e, std::size_t& clamps) {
    if (e > kExponentClamp) {
        ++clamps;
        return kExponentClamp;
    }
    if (e < -kExponentClamp) {
        ++clamps;
        return -kExponentClamp;
    }
    return e;
}

inline double safe_log(double x) { return std::log(std::max(x, kOccupancyFloor)); }

/// Value, gradient and (optionally) Hessian of a dual objective in x = (lambda, v).
struct DualEval {
    double value = 0.0;
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
    std::size_t clamps = 0;
    bool finite = true;
};

/**
 * Per-(s,a) blocks of the known-kernel dual
 *   f(lambda, v) = sum_{s,a} q'(s,a) exp(-lambda + v(s) - sum_s' P(s'|s,a) v(s')) + lambda tau - v(s0).
 */
class KnownBlocks {
public:
    KnownBlocks(const Mdp& mdp, const OccupancyMeasure& q_prime, double tau)
        : mdp_(mdp), tau_(tau), log_q_(q_prime.values().size()) {
        for (std::size_t i = 0; i < log_q_.size(); ++i) log_q_[i] = safe_log(q_prime.values()[i]);
    }

    std::size_t num_states() const { return mdp_.num_states(); }
    std::size_t initial_state() const { return mdp_.initial_state(); }
    double tau() const { return tau_; }

    /// Adds the block terms; returns the per-(s,a) occupancies through `out_q` when non-null.
    void accumulate(const Eigen::VectorXd& x, DualEval& ev, bool hessian, std::vector<double>* out_q = nullptr) const {
        const std::size_t S = mdp_.num_states(), A = mdp_.num_actions();
        Eigen::VectorXd d(static_cast<Eigen::Index>(S + 1));
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t a = 0; a < A; ++a) {
                auto row = mdp_.row(s, a);
                double e = -x(0) + x(static_cast<Eigen::Index>(1 + s));
                for (std::size_t n = 0; n < S; ++n) e -= row[n] * x(static_cast<Eigen::Index>(1 + n));
                const double q = std::exp(log_q_[s * A + a] + clamp_exponent(e, ev.clamps));
                if (out_q) (*out_q)[s * A + a] = q;
                ev.value += q;
                d.setZero();
                d(0) = -1.0;
                d(static_cast<Eigen::Index>(1 + s)) += 1.0;
                for (std::size_t n = 0; n < S; ++n) d(static_cast<Eigen::Index>(1 + n)) -= row[n];
                ev.grad.noalias() += q * d;
                if (hessian) ev.hess.selfadjointView<Eigen::Lower>().rankUpdate(d, q);
            }
    }

private:
    const Mdp& mdp_;
    double tau_;
    std::vector<double> log_q_;
};

/// Result of projecting onto {p in simplex : lo <= p <= hi} in KL geometry.
struct BoxSimplexSolution {
    std::vector<double> p;
    std::vector<bool> free;  ///< strictly between its bounds
    double theta = 0.0;      ///< p_i = exp(log_r_i + theta) on free entries
    double rho = 0.0;        ///< total mass of free entries
    double h = 0.0;          ///< sum p (log p - log_r)
};

inline double log_sum_exp(std::span<const double> xs) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : xs) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

/**
 * argmin_p sum_i p_i (log p_i - log_r_i) over the simplex intersected with [lo, hi].
 *
 * The minimizer is p_i = clip(r_i e^theta, lo_i, hi_i) with theta chosen so the
 * entries sum to one. theta is located exactly by sweeping the sorted clip
 * breakpoints.
 */
inline BoxSimplexSolution box_simplex_projection(std::span<const double> log_r, std::span<const double> lo,
                                                 std::span<const double> hi) {
    const std::size_t m = log_r.size();
    constexpr double inf = std::numeric_limits<double>::infinity();
    BoxSimplexSolution out{std::vector<double>(m, 0.0), std::vector<bool>(m, false), 0.0, 0.0, 0.0};

    std::vector<double> a(m, -inf), b(m, inf);
    std::vector<bool> pinned(m, false);
    std::vector<double> breaks;
    for (std::size_t i = 0; i < m; ++i) {
        if (hi[i] - lo[i] <= 0.0) {
            pinned[i] = true;
            continue;
        }
        if (lo[i] > 0.0) a[i] = std::log(lo[i]) - log_r[i];
        b[i] = hi[i] >= 1.0 ? inf : std::log(hi[i]) - log_r[i];
        if (std::isfinite(a[i])) breaks.push_back(a[i]);
        if (std::isfinite(b[i])) breaks.push_back(b[i]);
    }
    std::sort(breaks.begin(), breaks.end());

    auto clipped = [&](std::size_t i, double theta) {
        if (pinned[i]) return lo[i];
        return std::clamp(std::exp(log_r[i] + theta), lo[i], hi[i]);
    };
    auto total = [&](double theta) {
        double t = 0.0;
        for (std::size_t i = 0; i < m; ++i) t += clipped(i, theta);
        return t;
    };

    // Locate the interval (left, right) of theta containing the root.
    std::size_t k = 0;
    while (k < breaks.size() && total(breaks[k]) < 1.0) ++k;
    const double left = k == 0 ? -inf : breaks[k - 1];
    const double right = k == breaks.size() ? inf : breaks[k];

    double fixed_mass = 0.0;
    std::vector<double> free_logs;
    for (std::size_t i = 0; i < m; ++i) {
        if (pinned[i]) {
            fixed_mass += lo[i];
        } else if (a[i] <= left && b[i] >= right) {
            free_logs.push_back(log_r[i]);
        } else if (b[i] <= left) {
            fixed_mass += hi[i];
        } else {
            fixed_mass += lo[i];
        }
    }
    double theta;
    if (free_logs.empty() || fixed_mass >= 1.0) {
        theta = std::isfinite(right) ? right : (std::isfinite(left) ? left : 0.0);
    } else {
        theta = std::log(1.0 - fixed_mass) - log_sum_exp(free_logs);
        theta = std::clamp(theta, left, right);
    }
    out.theta = theta;
    for (std::size_t i = 0; i < m; ++i) {
        out.p[i] = clipped(i, theta);
        out.free[i] = !pinned[i] && a[i] < theta && theta < b[i];
        if (out.free[i]) out.rho += out.p[i];
        if (out.p[i] > 0.0) out.h += out.p[i] * (std::log(out.p[i]) - log_r[i]);
    }
    return out;
}

/**
 * Per-(s,a) blocks of the confidence-set dual with the confidence multipliers
 * minimized out in closed form. For fixed (lambda, v) each block reduces to a
 * KL projection onto a box-constrained simplex; its value is exp(-h) and its
 * gradient and generalized Hessian follow from the envelope theorem.
 */
class ConfidenceBlocks {
public:
    ConfidenceBlocks(const ConfidenceSet& conf, const ExtendedOccupancyMeasure& q_prime, double tau)
        : conf_(conf), tau_(tau), log_q_(q_prime.values().size()) {
        for (std::size_t i = 0; i < log_q_.size(); ++i) log_q_[i] = safe_log(q_prime.values()[i]);
        lo_.resize(log_q_.size());
        hi_.resize(log_q_.size());
        const std::size_t S = conf.num_states(), A = conf.num_actions();
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t a = 0; a < A; ++a)
                for (std::size_t n = 0; n <= S; ++n) {
                    lo_[conf.index(s, a, n)] = conf.lower(s, a, n);
                    hi_[conf.index(s, a, n)] = conf.upper(s, a, n);
                }
    }

    std::size_t num_states() const { return conf_.num_states(); }
    std::size_t initial_state() const { return conf_.initial_state(); }
    double tau() const { return tau_; }

    BoxSimplexSolution solve_block(const Eigen::VectorXd& x, std::size_t s, std::size_t a) const {
        const std::size_t S = conf_.num_states();
        const std::size_t base = conf_.index(s, a, 0);
        std::vector<double> log_r(S + 1);
        for (std::size_t n = 0; n <= S; ++n) {
            const double w = x(0) + (n < S ? x(static_cast<Eigen::Index>(1 + n)) : 0.0) - x(static_cast<Eigen::Index>(1 + s));
            log_r[n] = log_q_[base + n] - w;
        }
        return box_simplex_projection(log_r, std::span<const double>(lo_).subspan(base, S + 1),
                                      std::span<const double>(hi_).subspan(base, S + 1));
    }

    void accumulate(const Eigen::VectorXd& x, DualEval& ev, bool hessian, std::vector<double>* out_q = nullptr) const {
        const std::size_t S = conf_.num_states(), A = conf_.num_actions();
        const auto dim = static_cast<Eigen::Index>(S + 1);
        Eigen::VectorXd dp(dim), dpf(dim);
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t a = 0; a < A; ++a) {
                auto sol = solve_block(x, s, a);
                const double log_m = -sol.h;
                if (log_m > 700.0) {
                    ev.finite = false;
                    ev.value = std::numeric_limits<double>::infinity();
                    return;
                }
                const double mass = std::exp(log_m);
                ev.value += mass;
                const auto vs = static_cast<Eigen::Index>(1 + s);
                // dw(n)/dx: +1 on lambda, +1 on v(n) for n in S, -1 on v(s).
                dp.setZero();
                dpf.setZero();
                for (std::size_t n = 0; n <= S; ++n) {
                    const double p = sol.p[n];
                    const double q = mass * p;
                    if (out_q) (*out_q)[conf_.index(s, a, n)] = q;
                    ev.grad(0) -= q;
                    ev.grad(vs) += q;
                    if (n < S) ev.grad(static_cast<Eigen::Index>(1 + n)) -= q;
                    if (!hessian) continue;
                    dp(0) += p;
                    dp(vs) -= p;
                    if (n < S) dp(static_cast<Eigen::Index>(1 + n)) += p;
                    if (sol.free[n]) {
                        dpf(0) += p;
                        dpf(vs) -= p;
                        if (n < S) dpf(static_cast<Eigen::Index>(1 + n)) += p;
                        // diagonal term p_n D_n D_n^T
                        if (n < S && n != s) {
                            const auto vn = static_cast<Eigen::Index>(1 + n);
                            ev.hess(0, 0) += mass * p;
                            ev.hess(vn, vn) += mass * p;
                            ev.hess(vs, vs) += mass * p;
                            ev.hess(vn, 0) += mass * p;
                            ev.hess(vs, 0) -= mass * p;
                            if (vn > vs)
                                ev.hess(vn, vs) -= mass * p;
                            else
                                ev.hess(vs, vn) -= mass * p;
                        } else if (n == S) {
                            ev.hess(0, 0) += mass * p;
                            ev.hess(vs, vs) += mass * p;
                            ev.hess(vs, 0) -= mass * p;
                        } else {
                            ev.hess(0, 0) += mass * p;
                        }
                    }
                }
                if (hessian) {
                    ev.hess.selfadjointView<Eigen::Lower>().rankUpdate(dp, mass);
                    if (sol.rho > 0.0) ev.hess.selfadjointView<Eigen::Lower>().rankUpdate(dpf, -mass / sol.rho);
                }
            }
    }

private:
    const ConfidenceSet& conf_;
    double tau_;
    std::vector<double> log_q_;
    std::vector<double> lo_, hi_;
};

template <class Blocks>
DualEval evaluate_dual(const Blocks& blocks, const Eigen::VectorXd& x, bool hessian) {
    const auto dim = x.size();
    DualEval ev;
    ev.grad = Eigen::VectorXd::Zero(dim);
    if (hessian) ev.hess = Eigen::MatrixXd::Zero(dim, dim);
    blocks.accumulate(x, ev, hessian);
    if (!ev.finite) return ev;
    const auto s0 = static_cast<Eigen::Index>(1 + blocks.initial_state());
    ev.value += x(0) * blocks.tau() - x(s0);
    ev.grad(0) += blocks.tau();
    ev.grad(s0) -= 1.0;
    if (hessian) ev.hess = ev.hess.selfadjointView<Eigen::Lower>();
    return ev;
}

inline double projected_residual(const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
    double r = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        double gi = g(i);
        if (i == 0 && x(0) <= 0.0) gi = std::min(gi, 0.0);
        r = std::max(r, std::abs(gi));
    }
    return r;
}

/**
 * Minimizes a dual objective over lambda >= 0 and free v.
 *
 * Projected Newton with Armijo backtracking along the projection arc; the
 * lambda coordinate is held at zero while its gradient pushes it outward.
 * Falls back to a projected gradient step whenever the Newton direction is
 * unusable.
 */
template <class Blocks>
std::pair<Eigen::VectorXd, DualTelemetry> minimize_dual(const Blocks& blocks, Eigen::VectorXd x, const OmdParams& params) {
    constexpr double armijo = 1e-4;
    x(0) = std::max(0.0, x(0));
    DualTelemetry tel;
    DualEval ev = evaluate_dual(blocks, x, true);
    if (!ev.finite) {
        x.setZero();
        ev = evaluate_dual(blocks, x, true);
    }
    const auto dim = x.size();
    for (std::size_t it = 0;; ++it) {
        tel.iterations = it;
        tel.residual = projected_residual(x, ev.grad);
        if (tel.residual <= params.dual_tol) {
            tel.converged = true;
            break;
        }
        if (it >= params.dual_max_iters) break;

        const bool lambda_fixed = x(0) <= 0.0 && ev.grad(0) > 0.0;
        const Eigen::Index off = lambda_fixed ? 1 : 0;
        const Eigen::Index n = dim - off;

        auto try_direction = [&](const Eigen::VectorXd& dir, bool newton) -> bool {
            double step = 1.0;
            for (int ls = 0; ls < 80; ++ls, step *= 0.5) {
                Eigen::VectorXd trial = x;
                trial.tail(n) += step * dir;
                trial(0) = std::max(0.0, trial(0));
                DualEval te = evaluate_dual(blocks, trial, false);
                if (!te.finite) continue;
                const double decrease = ev.grad.dot(trial - x);
                const bool accept_armijo = te.value <= ev.value + armijo * decrease;
                // Near the optimum the objective change drowns in rounding; accept a full
                // Newton step that halves the stationarity residual.
                const bool accept_residual =
                    newton && ls == 0 && projected_residual(trial, te.grad) <= 0.5 * tel.residual;
                if (accept_armijo || accept_residual) {
                    x = trial;
                    ev = evaluate_dual(blocks, x, true);
                    return true;
                }
            }
            return false;
        };

        Eigen::MatrixXd h = ev.hess.bottomRightCorner(n, n);
        const double scale = std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
        h.diagonal().array() += 1e-12 * scale;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
        Eigen::VectorXd g = ev.grad.tail(n);
        bool moved = false;
        if (ldlt.info() == Eigen::Success) {
            Eigen::VectorXd dir = ldlt.solve(-g);
            if (dir.allFinite() && dir.dot(g) < 0.0) moved = try_direction(dir, true);
        }
        if (!moved) {
            Eigen::VectorXd dir = -g / scale;
            moved = try_direction(dir, false);
        }
        if (!moved) break;
    }
    tel.clamp_events = ev.clamps;
    if (ev.clamps > 0) tel.converged = false;
    return {x, tel};
}

inline Eigen::VectorXd pack(const DualVariables& d, std::size_t num_states) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_states + 1));
    x(0) = d.lambda;
    if (d.v.size() == num_states)
        for (std::size_t s = 0; s < num_states; ++s) x(static_cast<Eigen::Index>(1 + s)) = d.v[s];
    return x;
}

}  // namespace detail

/**
 * Negated dual of the known-kernel projection and its gradient in (lambda, v):
 *   sum_{s,a} q_prev(s,a) exp(-lambda + B(s,a)) + lambda tau - v(s0),
 *   B(s,a) = v(s) - eta c_prev(s,a) - sum_{s'} P(s'|s,a) v(s').
 */
inline DualValue dual_objective_and_gradient(const DualVariables& duals, const OccupancyMeasure& q_prev,
                                             const CostFunction& c_prev, double eta, double tau, const Mdp& mdp) {
    if (duals.v.size() != mdp.num_states()) throw ShapeMismatch("dual_objective_and_gradient: v has wrong size");
    const auto q_prime = unconstrained_step(q_prev, c_prev, eta);
    detail::KnownBlocks blocks(mdp, q_prime, tau);
    auto ev = detail::evaluate_dual(blocks, detail::pack(duals, mdp.num_states()), false);
    DualValue out{ev.value, DualVariables::zeros_known(mdp.num_states()), ev.clamps};
    out.gradient.lambda = ev.grad(0);
    for (std::size_t s = 0; s < mdp.num_states(); ++s) out.gradient.v[s] = ev.grad(static_cast<Eigen::Index>(1 + s));
    return out;
}

/**
 * Negated dual of the confidence-set projection with all multipliers explicit:
 *   sum_{s,a,s'} q_prev(s,a,s') exp(-lambda + B(s,a,s')) + lambda tau - v(s0),
 *   B(s,a,s') = v(s) - v(s') + mu-(s,a,s') - mu+(s,a,s') - eta c_prev(s,a)
 *             + sum_s'' p_bar(s''|s,a) (mu+ - mu-)(s,a,s'') + sum_s'' eps(s''|s,a) (mu+ + mu-)(s,a,s'').
 * Exponents are clamped to +-50; the number of clamps is reported.
 */
inline DualValue dual_objective_and_gradient(const DualVariables& duals, const ExtendedOccupancyMeasure& q_prev,
                                             const CostFunction& c_prev, double eta, double tau,
                                             const ConfidenceSet& conf) {
    const std::size_t S = conf.num_states(), A = conf.num_actions();
    const std::size_t n3 = S * A * (S + 1);
    if (duals.v.size() != S || duals.mu_plus.size() != n3 || duals.mu_minus.size() != n3)
        throw ShapeMismatch("dual_objective_and_gradient: dual variables have wrong size");
    DualValue out{0.0, DualVariables::zeros_extended(S, A), 0};
    auto& g = out.gradient;
    auto v = [&](std::size_t n) { return n < S ? duals.v[n] : 0.0; };
    std::vector<double> q(S + 1);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            const std::size_t base = conf.index(s, a, 0);
            double common = -eta * c_prev(s, a);
            for (std::size_t n = 0; n <= S; ++n) {
                const double mp = duals.mu_plus[base + n], mm = duals.mu_minus[base + n];
                common += conf.p_bar(s, a, n) * (mp - mm) + conf.radius(s, a, n) * (mp + mm);
            }
            double pair_mass = 0.0;
            for (std::size_t n = 0; n <= S; ++n) {
                const double b = v(s) - v(n) + duals.mu_minus[base + n] - duals.mu_plus[base + n] + common;
                const double e = detail::clamp_exponent(-duals.lambda + b, out.clamp_events);
                q[n] = std::max(q_prev(s, a, n), 0.0) * std::exp(e);
                pair_mass += q[n];
                out.value += q[n];
                g.lambda -= q[n];
                g.v[s] += q[n];
                if (n < S) g.v[n] -= q[n];
            }
            for (std::size_t n = 0; n <= S; ++n) {
                g.mu_plus[base + n] = -q[n] + (conf.p_bar(s, a, n) + conf.radius(s, a, n)) * pair_mass;
                g.mu_minus[base + n] = q[n] - (conf.p_bar(s, a, n) - conf.radius(s, a, n)) * pair_mass;
            }
        }
    out.value += duals.lambda * tau - duals.v[conf.initial_state()];
    g.lambda += tau;
    g.v[conf.initial_state()] -= 1.0;
    return out;
}

/// Projection onto {q : flow constraints, sum q <= tau} in KL geometry; never throws on
/// non-convergence, the telemetry says whether the result can be trusted.
inline Projection<OccupancyMeasure> try_project_known(const OccupancyMeasure& q_prime, const Mdp& mdp,
                                                      const OmdParams& params,
                                                      const DualVariables* warm_start = nullptr) {
    params.check();
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    if (q_prime.num_states() != S || q_prime.num_actions() != A) throw ShapeMismatch("project_known: shape mismatch");
    if (params.check_feasibility) {
        const double min_time = fast_policy_and_diameter(mdp).times.at(mdp.initial_state());
        if (min_time > params.tau * (1.0 + 1e-12)) throw EmptyFeasibleSet(min_time, params.tau);
    }
    detail::KnownBlocks blocks(mdp, q_prime, params.tau);
    auto x0 = warm_start ? detail::pack(*warm_start, S) : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(S + 1));
    auto [x, tel] = detail::minimize_dual(blocks, x0, params);

    detail::DualEval ev;
    ev.grad = Eigen::VectorXd::Zero(x.size());
    std::vector<double> q(S * A);
    blocks.accumulate(x, ev, false, &q);
    DualVariables duals = DualVariables::zeros_known(S);
    duals.lambda = x(0);
    for (std::size_t s = 0; s < S; ++s) duals.v[s] = x(static_cast<Eigen::Index>(1 + s));
    OccupancyMeasure out(S, A, std::move(q));
    tel.slack = params.tau - out.total();
    return {std::move(out), std::move(duals), tel};
}

/// As try_project_known, but throws DualDidNotConverge when stationarity is not reached.
inline Projection<OccupancyMeasure> project_known(const OccupancyMeasure& q_prime, const Mdp& mdp,
                                                  const OmdParams& params, const DualVariables* warm_start = nullptr) {
    auto result = try_project_known(q_prime, mdp, params, warm_start);
    if (!result.telemetry.converged) throw DualDidNotConverge(result.telemetry);
    return result;
}

namespace detail {

/// Recovers mu+ / mu- of one block from its box-simplex solution (see dual_objective_and_gradient).
inline void recover_confidence_multipliers(const BoxSimplexSolution& sol, std::span<const double> log_r,
                                           std::span<const double> p_bar, std::span<const double> radius,
                                           std::span<double> mu_plus, std::span<double> mu_minus) {
    const std::size_t m = sol.p.size();
    // Without free entries any theta is consistent; use the solution's.
    const double theta = sol.theta;
    for (std::size_t i = 0; i < m; ++i) {
        mu_plus[i] = 0.0;
        mu_minus[i] = 0.0;
        if (sol.free[i]) continue;
        const double p = sol.p[i];
        const double upper = p_bar[i] + radius[i];
        const double lower = p_bar[i] - radius[i];
        if (p <= 0.0) {
            if (upper <= 0.0) mu_plus[i] = std::numeric_limits<double>::infinity();
            continue;
        }
        const double gap = log_r[i] + theta - std::log(p);  // > 0: pushed down by the upper bound
        if (gap > 0.0 && upper < 1.0 + 1e-15 && std::abs(p - upper) <= 1e-12 * std::max(1.0, upper))
            mu_plus[i] = gap;
        else if (gap < 0.0 && lower > 0.0 && std::abs(p - lower) <= 1e-12 * std::max(1.0, lower))
            mu_minus[i] = -gap;
    }
}

}  // namespace detail

/// Projection onto the confidence-set polytope (extended flow, confidence
/// constraints, total mass <= tau); non-throwing on dual non-convergence.
inline Projection<ExtendedOccupancyMeasure> try_project_extended(const ExtendedOccupancyMeasure& q_prime,
                                                                 const ConfidenceSet& conf, const OmdParams& params,
                                                                 const DualVariables* warm_start = nullptr) {
    params.check();
    const std::size_t S = conf.num_states(), A = conf.num_actions();
    if (q_prime.num_states() != S || q_prime.num_actions() != A) throw ShapeMismatch("project_extended: shape mismatch");
    if (params.check_feasibility) {
        const double min_time = min_expected_time(conf)[conf.initial_state()];
        if (min_time > params.tau * (1.0 + 1e-12)) throw EmptyFeasibleSet(min_time, params.tau);
    }
    detail::ConfidenceBlocks blocks(conf, q_prime, params.tau);
    auto x0 = warm_start ? detail::pack(*warm_start, S) : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(S + 1));
    auto [x, tel] = detail::minimize_dual(blocks, x0, params);

    detail::DualEval ev;
    ev.grad = Eigen::VectorXd::Zero(x.size());
    std::vector<double> q(S * A * (S + 1));
    blocks.accumulate(x, ev, false, &q);

    DualVariables duals = DualVariables::zeros_extended(S, A);
    duals.lambda = x(0);
    for (std::size_t s = 0; s < S; ++s) duals.v[s] = x(static_cast<Eigen::Index>(1 + s));
    std::vector<double> log_r(S + 1);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            auto sol = blocks.solve_block(x, s, a);
            const std::size_t base = conf.index(s, a, 0);
            for (std::size_t n = 0; n <= S; ++n) {
                const double w = x(0) + (n < S ? x(static_cast<Eigen::Index>(1 + n)) : 0.0) - x(static_cast<Eigen::Index>(1 + s));
                log_r[n] = detail::safe_log(q_prime(s, a, n)) - w;
            }
            detail::recover_confidence_multipliers(
                sol, log_r, std::span<const double>(conf.p_bar()).subspan(base, S + 1),
                std::span<const double>(conf.radius()).subspan(base, S + 1),
                std::span<double>(duals.mu_plus).subspan(base, S + 1), std::span<double>(duals.mu_minus).subspan(base, S + 1));
        }
    ExtendedOccupancyMeasure out(S, A, std::move(q));
    tel.slack = params.tau - out.total();
    return {std::move(out), std::move(duals), tel};
}

inline Projection<ExtendedOccupancyMeasure> project_extended(const ExtendedOccupancyMeasure& q_prime,
                                                             const ConfidenceSet& conf, const OmdParams& params,
                                                             const DualVariables* warm_start = nullptr) {
    auto result = try_project_extended(q_prime, conf, params, warm_start);
    if (!result.telemetry.converged) {
        if (result.telemetry.residual > 1e-3) throw EmptyFeasibleSet(std::numeric_limits<double>::quiet_NaN(), params.tau);
        throw DualDidNotConverge(result.telemetry);
    }
    return result;
}

}  // namespace ssp
