#pragma once

#include "ssp/omd.hpp"
#include "ssp/rng.hpp"

#include <memory>
#include <optional>
#include <string>
#include <string_view>

namespace ssp {

enum class AgentKind { Oreps, Oreps2, Oreps3 };

inline std::string_view to_string(AgentKind k) {
    switch (k) {
        case AgentKind::Oreps: return "oreps";
        case AgentKind::Oreps2: return "oreps2";
        case AgentKind::Oreps3: return "oreps3";
    }
    return "?";
}

inline AgentKind parse_agent_kind(std::string_view name) {
    if (name == "oreps") return AgentKind::Oreps;
    if (name == "oreps2") return AgentKind::Oreps2;
    if (name == "oreps3") return AgentKind::Oreps3;
    throw Error("unknown agent '" + std::string(name) + "' (expected oreps, oreps2 or oreps3)");
}

/// What the learner is doing at the current step.
enum class Mode { Omd, Fast, Explore };

inline std::string_view to_string(Mode m) {
    switch (m) {
        case Mode::Omd: return "omd";
        case Mode::Fast: return "fast";
        case Mode::Explore: return "explore";
    }
    return "?";
}

struct AgentConfig {
    AgentKind kind = AgentKind::Oreps;
    std::optional<double> eta;  ///< learning rate; unset selects the default schedule
    double c_min = 0.1;
    double delta = 0.1;
    double alpha = 1.0;                ///< multiplier of the known-state threshold
    std::optional<std::uint64_t> phi;  ///< known-state threshold override
    bool estimate_diameter = false;
    std::optional<std::uint64_t> estimation_episodes;  ///< L; unset selects the default formula
    double epsilon_perturb = 0.0;                      ///< 0 disables the cost perturbation
    double dual_tol = 1e-8;
    std::size_t dual_max_iters = 50'000;
    std::uint64_t step_cap = 10'000'000;

    void validate() const {
        if (!(c_min > 0.0 && c_min <= 1.0)) throw Error("AgentConfig: c_min must lie in (0, 1]");
        if (!(delta > 0.0 && delta < 1.0)) throw Error("AgentConfig: delta must lie in (0, 1)");
        if (!(epsilon_perturb >= 0.0 && epsilon_perturb <= 1.0)) throw Error("AgentConfig: epsilon_perturb must lie in [0, 1]");
        if (!(alpha > 0.0)) throw Error("AgentConfig: alpha must be positive");
        if (eta && !(*eta > 0.0)) throw Error("AgentConfig: eta must be positive");
        if (phi && *phi == 0) throw Error("AgentConfig: phi must be positive");
        if (estimation_episodes && *estimation_episodes == 0) throw Error("AgentConfig: estimation episodes must be positive");
        if (step_cap == 0) throw Error("AgentConfig: step_cap must be positive");
        if (estimate_diameter && kind != AgentKind::Oreps3)
            throw Error("AgentConfig: diameter estimation is only available for oreps3");
    }

    /// Lower bound on the costs the inner learner sees.
    double effective_c_min() const { return epsilon_perturb > 0.0 ? epsilon_perturb : c_min; }
};

/// eta = sqrt(factor log(D |S| |A| / c_min) / K).
inline double default_eta(double diameter, std::size_t num_states, std::size_t num_actions, double c_min,
                          std::size_t episodes, double factor = 3.0) {
    const double arg = diameter * static_cast<double>(num_states * num_actions) / c_min;
    return std::sqrt(factor * std::log(std::max(arg, std::exp(1.0))) / static_cast<double>(std::max<std::size_t>(episodes, 1)));
}

/// epsilon = K^(-1/4).
inline double default_perturbation(std::size_t episodes) {
    return std::pow(static_cast<double>(std::max<std::size_t>(episodes, 1)), -0.25);
}

/// c~(s,a) = max(c(s,a), epsilon).
inline CostFunction perturb_costs(const CostFunction& c, double epsilon) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw Error("perturb_costs: epsilon must lie in [0, 1]");
    std::vector<double> v(c.values());
    for (double& x : v) x = std::max(x, epsilon);
    return {c.num_states(), c.num_actions(), std::move(v)};
}

/// L = 2400 max{ |S|^2 |A| log^2(x), sqrt(K) / (c_min sqrt|A|) log(x) }, x = K |S| |A| / (delta c_min).
inline std::uint64_t default_estimation_episodes(std::size_t episodes, std::size_t num_states, std::size_t num_actions,
                                                 double delta, double c_min) {
    const double S = static_cast<double>(num_states), A = static_cast<double>(num_actions);
    const double K = static_cast<double>(episodes);
    const double lg = std::log(K * S * A / (delta * c_min));
    const double l = 2400.0 * std::max(S * S * A * lg * lg, std::sqrt(K) / (c_min * std::sqrt(A)) * lg);
    return static_cast<std::uint64_t>(std::ceil(l));
}

/// D~ = 10 * mean of the observed episode lengths.
inline double diameter_statistic(std::span<const std::uint64_t> lengths) {
    if (lengths.empty()) throw Error("diameter_statistic: no lengths");
    double sum = 0.0;
    for (auto l : lengths) sum += static_cast<double>(l);
    return 10.0 * sum / static_cast<double>(lengths.size());
}

struct AgentEvent {
    enum class Kind { ModeChange, EpochStart, Projection, ProjectionFailed, EstimationDone };
    Kind kind;
    std::size_t step = 0;
    std::size_t state = 0;
    Mode from = Mode::Omd;
    Mode to = Mode::Omd;
    double value = 0.0;
    std::string detail;
};

inline std::string_view to_string(AgentEvent::Kind k) {
    switch (k) {
        case AgentEvent::Kind::ModeChange: return "mode_change";
        case AgentEvent::Kind::EpochStart: return "epoch_start";
        case AgentEvent::Kind::Projection: return "projection";
        case AgentEvent::Kind::ProjectionFailed: return "projection_failed";
        case AgentEvent::Kind::EstimationDone: return "estimation_done";
    }
    return "?";
}

/// Per-episode bookkeeping reported to the harness.
struct EpisodeStats {
    std::optional<std::size_t> switch_step;  ///< first step not played by the OMD policy
    std::size_t explore_steps = 0;
    std::size_t epochs = 0;  ///< total epochs started so far (cumulative)
    DualTelemetry dual;
    bool projected = false;  ///< an OMD projection was computed for this episode
    bool estimation = false;  ///< the episode belonged to the diameter-estimation phase
    std::vector<AgentEvent> events;
};

/**
 * Online learner driven by the episode loop: begin_episode, then act/observe
 * until the goal, then end_episode with the revealed cost function.
 */
class Learner {
public:
    virtual ~Learner() = default;
    virtual void begin_episode(std::size_t k) = 0;
    virtual std::size_t act(std::size_t s, Rng& rng) = 0;
    virtual void observe(std::size_t s, std::size_t a, std::size_t next) = 0;
    virtual void end_episode(const CostFunction& c) = 0;
    /// Mode used for the most recent action.
    virtual Mode mode() const = 0;
    virtual const EpisodeStats& stats() const = 0;
    virtual std::string_view name() const = 0;
};

namespace detail {

inline std::size_t sample_action(const StochasticPolicy& pi, std::size_t s, Rng& rng) {
    return rng.categorical(pi.row(s));
}

/// State mass at or below this counts as zero; matches the flow tolerance of the projections.
inline constexpr double kNegligibleMass = 1e-6;

/// Per-state expected times with the threshold substituted on states that
/// carry no occupancy or from which the policy is improper.
inline std::vector<double> times_with_default(const HittingTimes& t, const std::vector<double>& state_mass, double fallback) {
    std::vector<double> out(t.size());
    for (std::size_t s = 0; s < t.size(); ++s)
        out[s] = (state_mass[s] <= kNegligibleMass || !t.finite[s]) ? fallback : t.values[s];
    return out;
}

}  // namespace detail

/**
 * Known-transition OMD learner. With `switching` set, the episode switches to
 * the fast policy once it reaches a state whose expected time under pi_k is
 * at least D / c_min.
 */
class OrepsLearner : public Learner {
public:
    OrepsLearner(const Mdp& mdp, const AgentConfig& cfg, std::size_t episodes, bool switching)
        : mdp_(mdp), cfg_(cfg), switching_(switching), fast_(fast_policy_and_diameter(mdp)) {
        cfg_.validate();
        const std::size_t S = mdp.num_states(), A = mdp.num_actions();
        const double c_min = cfg_.effective_c_min();
        threshold_ = fast_.diameter / c_min;
        params_.tau = std::max(1.0, threshold_);
        params_.eta = cfg_.eta ? *cfg_.eta : default_eta(fast_.diameter, S, A, c_min, episodes);
        params_.dual_tol = cfg_.dual_tol;
        params_.dual_max_iters = cfg_.dual_max_iters;
        params_.check_feasibility = false;  // tau >= D >= T^f(s0) always holds
        q_prev_ = OccupancyMeasure::filled(S, A, 1.0);
        c_prev_ = CostFunction::constant(S, A, 0.0);
        warm_ = DualVariables::zeros_known(S);
    }

    void begin_episode(std::size_t) override {
        stats_ = {};
        mode_ = Mode::Omd;
        step_ = 0;
        const auto q_prime = unconstrained_step(q_prev_, c_prev_, params_.eta);
        auto proj = try_project_known(q_prime, mdp_, params_, &warm_);
        stats_.dual = proj.telemetry;
        stats_.projected = true;
        stats_.events.push_back({AgentEvent::Kind::Projection, 0, 0, Mode::Omd, Mode::Omd, proj.telemetry.residual, ""});
        warm_ = proj.duals;
        q_ = std::move(proj.q);
        policy_ = policy_of_occupancy(q_);
        if (switching_) {
            std::vector<double> mass(mdp_.num_states());
            for (std::size_t s = 0; s < mass.size(); ++s) mass[s] = q_.state_mass(s);
            times_ = detail::times_with_default(hitting_times(mdp_, policy_), mass, threshold_);
        }
    }

    std::size_t act(std::size_t s, Rng& rng) override {
        if (mode_ == Mode::Omd && switching_ && times_[s] >= threshold_) {
            mode_ = Mode::Fast;
            stats_.switch_step = step_;
            stats_.events.push_back({AgentEvent::Kind::ModeChange, step_, s, Mode::Omd, Mode::Fast, times_[s], ""});
        }
        ++step_;
        return detail::sample_action(mode_ == Mode::Omd ? policy_ : fast_.policy, s, rng);
    }

    void observe(std::size_t, std::size_t, std::size_t) override {}

    void end_episode(const CostFunction& c) override {
        q_prev_ = q_;
        c_prev_ = c;
    }

    Mode mode() const override { return mode_; }
    const EpisodeStats& stats() const override { return stats_; }
    std::string_view name() const override { return switching_ ? "oreps2" : "oreps"; }

    const OmdParams& params() const { return params_; }
    const OccupancyMeasure& occupancy() const { return q_; }
    const StochasticPolicy& policy() const { return policy_; }
    const FastPolicy& fast() const { return fast_; }
    const std::vector<double>& times() const { return times_; }
    double threshold() const { return threshold_; }

private:
    const Mdp& mdp_;
    AgentConfig cfg_;
    bool switching_;
    FastPolicy fast_;
    OmdParams params_;
    double threshold_ = 0.0;
    OccupancyMeasure q_prev_, q_;
    CostFunction c_prev_;
    DualVariables warm_;
    StochasticPolicy policy_;
    std::vector<double> times_;
    Mode mode_ = Mode::Omd;
    std::size_t step_ = 0;
    EpisodeStats stats_;
};

/**
 * Unknown-transition learner: extended OMD over a Bernstein confidence set,
 * switching to the optimistic fast policy on slow or unknown states and
 * forcing exploration of under-sampled actions.
 *
 * With diameter estimation the first L episodes run the optimistic fast
 * policy under unit costs; D~(s0) = 10 * mean length then replaces D in tau
 * and eta, the known-state threshold becomes L, and each state's own D~(s)
 * is estimated from the remaining time to the goal over its first L visits
 * made by the estimation learner or outside OMD mode.
 */
class Oreps3Learner : public Learner {
public:
    /// `diameter` is the true (or supplied) D; ignored when estimating.
    Oreps3Learner(const Mdp& mdp, const AgentConfig& cfg, std::size_t episodes, double diameter)
        : mdp_(mdp), cfg_(cfg), episodes_(episodes), counts_(mdp.num_states(), mdp.num_actions()) {
        cfg_.validate();
        const std::size_t S = mdp.num_states(), A = mdp.num_actions();
        c_min_ = cfg_.effective_c_min();
        params_.dual_tol = cfg_.dual_tol;
        params_.dual_max_iters = cfg_.dual_max_iters;
        q_prev_ = ExtendedOccupancyMeasure::filled(S, A, 1.0);
        c_prev_ = CostFunction::constant(S, A, 0.0);
        warm_ = DualVariables::zeros_known(S);
        state_estimates_.assign(S, {});
        if (cfg_.estimate_diameter) {
            estimation_left_ = cfg_.estimation_episodes ? *cfg_.estimation_episodes
                                                        : default_estimation_episodes(episodes, S, A, cfg_.delta, c_min_);
            tracker_ = KnownStateTracker(S, A, estimation_left_);
        } else {
            configure(diameter);
        }
    }

    void begin_episode(std::size_t) override {
        stats_ = {};
        step_ = 0;
        pending_.clear();
        start_epoch();
        if (estimating()) {
            mode_ = Mode::Fast;
            stats_.estimation = true;
            return;
        }
        mode_ = Mode::Omd;
        const auto q_prime = unconstrained_step(q_prev_, c_prev_, params_.eta);
        try {
            auto proj = try_project_extended(q_prime, conf_, params_, &warm_);
            stats_.dual = proj.telemetry;
            stats_.projected = true;
            stats_.events.push_back({AgentEvent::Kind::Projection, 0, 0, Mode::Omd, Mode::Omd, proj.telemetry.residual, ""});
            warm_ = proj.duals;
            q_ = std::move(proj.q);
            have_q_ = true;
            const auto marginal = q_.marginal();
            policy_ = policy_of_occupancy(marginal);
            std::vector<double> mass(mdp_.num_states());
            for (std::size_t s = 0; s < mass.size(); ++s) mass[s] = marginal.state_mass(s);
            const auto kernel = q_.induced_kernel(mdp_.initial_state());
            times_ = detail::times_with_default(hitting_times(kernel, policy_), mass, threshold_s0_);
        } catch (const EmptyFeasibleSet& e) {
            have_q_ = false;
            mode_ = Mode::Fast;
            stats_.switch_step = 0;
            stats_.events.push_back({AgentEvent::Kind::ProjectionFailed, 0, 0, Mode::Omd, Mode::Fast, 0.0, e.what()});
        }
    }

    std::size_t act(std::size_t s, Rng& rng) override {
        if (mode_ == Mode::Omd) {
            if (!tracker_.is_known(s) || times_[s] >= switch_threshold(s)) leave_omd(s, tracker_.is_known(s) ? Mode::Fast : Mode::Explore);
        }
        if (mode_ != Mode::Omd) {
            const Mode next = tracker_.is_known(s) ? Mode::Fast : Mode::Explore;
            if (next != mode_ && !estimating()) {
                stats_.events.push_back({AgentEvent::Kind::ModeChange, step_, s, mode_, next, 0.0, ""});
            }
            mode_ = estimating() ? Mode::Fast : next;
        }
        if (cfg_.estimate_diameter && mode_ != Mode::Omd) note_visit(s);
        ++step_;
        if (mode_ == Mode::Omd) return detail::sample_action(policy_, s, rng);
        if (mode_ == Mode::Explore) {
            ++stats_.explore_steps;
            return tracker_.least_played_action(s);
        }
        return detail::sample_action(fast_.policy, s, rng);
    }

    void observe(std::size_t s, std::size_t a, std::size_t next) override {
        tracker_.record(s, a);
        if (counts_.record_transition(s, a, next)) {
            start_epoch();
            if (mode_ == Mode::Omd) leave_omd(next, Mode::Fast, /*doubling=*/true);
        }
    }

    void end_episode(const CostFunction& c) override {
        const std::uint64_t length = step_;
        for (auto [s, start] : pending_)
            if (state_estimates_[s].size() < tracker_.threshold()) state_estimates_[s].push_back(length - start);
        if (estimating()) {
            estimation_lengths_.push_back(length);
            if (--estimation_left_ == 0) {
                const double d0 = diameter_statistic(estimation_lengths_);
                configure(d0);
                stats_.events.push_back({AgentEvent::Kind::EstimationDone, step_, mdp_.initial_state(), Mode::Fast, Mode::Fast, d0, ""});
            }
            return;
        }
        if (have_q_) q_prev_ = q_;
        c_prev_ = c;
    }

    Mode mode() const override { return mode_; }
    const EpisodeStats& stats() const override { return stats_; }
    std::string_view name() const override { return "oreps3"; }

    bool estimating() const { return cfg_.estimate_diameter && estimation_left_ > 0; }
    double diameter() const { return diameter_; }
    const OmdParams& params() const { return params_; }
    const VisitCounts& counts() const { return counts_; }
    const ConfidenceSet& confidence() const { return conf_; }
    const KnownStateTracker& tracker() const { return tracker_; }
    const ExtendedOccupancyMeasure& occupancy() const { return q_; }
    const StochasticPolicy& policy() const { return policy_; }
    const OptimisticFast& fast() const { return fast_; }
    const std::vector<double>& times() const { return times_; }
    double threshold() const { return threshold_s0_; }
    std::optional<double> state_diameter(std::size_t s) const {
        if (state_estimates_[s].size() < tracker_.threshold() || state_estimates_[s].empty()) return std::nullopt;
        return diameter_statistic(state_estimates_[s]);
    }

private:
    void configure(double diameter) {
        const std::size_t S = mdp_.num_states(), A = mdp_.num_actions();
        diameter_ = diameter;
        threshold_s0_ = diameter / c_min_;
        params_.tau = std::max(1.0, threshold_s0_);
        const double factor = cfg_.estimate_diameter ? 3.0 : 6.0;
        params_.eta = cfg_.eta ? *cfg_.eta : default_eta(diameter, S, A, c_min_, episodes_, factor);
        if (!cfg_.estimate_diameter) {
            const std::uint64_t phi =
                cfg_.phi ? *cfg_.phi : known_state_threshold(cfg_.alpha, diameter, S, A, c_min_, cfg_.delta);
            tracker_ = KnownStateTracker(S, A, phi);
        }
    }

    double switch_threshold(std::size_t s) const {
        if (cfg_.estimate_diameter)
            if (auto d = state_diameter(s)) return *d / c_min_;
        return threshold_s0_;
    }

    void start_epoch() {
        counts_.start_epoch();
        ++total_epochs_;
        conf_ = build_confidence_set(counts_, cfg_.delta, mdp_.initial_state());
        fast_ = optimistic_fast(conf_);
        stats_.epochs = total_epochs_;
        stats_.events.push_back({AgentEvent::Kind::EpochStart, step_, 0, mode_, mode_, static_cast<double>(counts_.epoch_index()), ""});
    }

    void leave_omd(std::size_t s, Mode to, bool doubling = false) {
        mode_ = to;
        if (!stats_.switch_step) stats_.switch_step = step_;
        stats_.events.push_back({AgentEvent::Kind::ModeChange, step_, s, Mode::Omd, to, times_.empty() ? 0.0 : times_[s],
                                 doubling ? "doubling" : ""});
    }

    void note_visit(std::size_t s) {
        if (state_estimates_[s].size() + pending_count(s) < tracker_.threshold()) pending_.emplace_back(s, step_);
    }
    std::size_t pending_count(std::size_t s) const {
        std::size_t n = 0;
        for (auto& p : pending_) n += p.first == s;
        return n;
    }

    const Mdp& mdp_;
    AgentConfig cfg_;
    std::size_t episodes_;
    double c_min_ = 0.1;
    double diameter_ = 0.0;
    double threshold_s0_ = 0.0;
    OmdParams params_;
    VisitCounts counts_;
    ConfidenceSet conf_;
    OptimisticFast fast_;
    KnownStateTracker tracker_;
    ExtendedOccupancyMeasure q_prev_, q_;
    bool have_q_ = false;
    CostFunction c_prev_;
    DualVariables warm_;
    StochasticPolicy policy_;
    std::vector<double> times_;
    Mode mode_ = Mode::Omd;
    std::size_t step_ = 0;
    std::size_t total_epochs_ = 0;
    std::uint64_t estimation_left_ = 0;
    std::vector<std::uint64_t> estimation_lengths_;
    std::vector<std::vector<std::uint64_t>> state_estimates_;
    std::vector<std::pair<std::size_t, std::uint64_t>> pending_;
    EpisodeStats stats_;
};

/// Feeds max(c, epsilon) to the wrapped learner in place of c.
class PerturbedLearner : public Learner {
public:
    PerturbedLearner(std::unique_ptr<Learner> inner, double epsilon) : inner_(std::move(inner)), epsilon_(epsilon) {
        if (!(epsilon > 0.0 && epsilon <= 1.0)) throw Error("PerturbedLearner: epsilon must lie in (0, 1]");
    }
    void begin_episode(std::size_t k) override { inner_->begin_episode(k); }
    std::size_t act(std::size_t s, Rng& rng) override { return inner_->act(s, rng); }
    void observe(std::size_t s, std::size_t a, std::size_t n) override { inner_->observe(s, a, n); }
    void end_episode(const CostFunction& c) override { inner_->end_episode(perturb_costs(c, epsilon_)); }
    Mode mode() const override { return inner_->mode(); }
    const EpisodeStats& stats() const override { return inner_->stats(); }
    std::string_view name() const override { return inner_->name(); }
    double epsilon() const { return epsilon_; }
    Learner& inner() { return *inner_; }

private:
    std::unique_ptr<Learner> inner_;
    double epsilon_;
};

/// Builds the configured learner; `diameter` is the known D used by oreps3.
inline std::unique_ptr<Learner> make_learner(const Mdp& mdp, const AgentConfig& cfg, std::size_t episodes,
                                             double diameter) {
    cfg.validate();
    std::unique_ptr<Learner> l;
    switch (cfg.kind) {
        case AgentKind::Oreps: l = std::make_unique<OrepsLearner>(mdp, cfg, episodes, false); break;
        case AgentKind::Oreps2: l = std::make_unique<OrepsLearner>(mdp, cfg, episodes, true); break;
        case AgentKind::Oreps3: l = std::make_unique<Oreps3Learner>(mdp, cfg, episodes, diameter); break;
    }
    if (cfg.epsilon_perturb > 0.0) l = std::make_unique<PerturbedLearner>(std::move(l), cfg.epsilon_perturb);
    return l;
}

/**
 * D~(start) from L episodes of the unit-cost optimistic learner started at
 * `start` (episodes restart there instead of at the initial state).
 */
inline double estimate_diameter(const Mdp& mdp, std::uint64_t episodes, std::size_t start, Rng& rng, double delta = 0.1,
                                std::uint64_t step_cap = 10'000'000) {
    if (episodes == 0) throw Error("estimate_diameter: need at least one episode");
    if (start >= mdp.num_states()) throw ShapeMismatch("estimate_diameter: start state out of range");
    VisitCounts counts(mdp.num_states(), mdp.num_actions());
    std::vector<std::uint64_t> lengths;
    auto plan = [&] {
        counts.start_epoch();
        return optimistic_fast(build_confidence_set(counts, delta, mdp.initial_state())).policy;
    };
    for (std::uint64_t k = 0; k < episodes; ++k) {
        auto policy = plan();
        std::size_t s = start;
        std::uint64_t steps = 0;
        while (s != mdp.goal()) {
            if (steps >= step_cap)
                throw EstimationAborted("estimate_diameter: episode " + std::to_string(k + 1) + " exceeded the step cap");
            const std::size_t a = rng.categorical(policy.row(s));
            const std::size_t n = rng.categorical(mdp.row(s, a));
            if (counts.record_transition(s, a, n)) policy = plan();
            s = n;
            ++steps;
        }
        lengths.push_back(steps);
    }
    return diameter_statistic(lengths);
}

struct SwitchingValues {
    CostToGo cost;      ///< J^sigma(s) starting in phase one at s
    HittingTimes time;  ///< T^sigma(s)
};

/**
 * Exact values of the two-phase strategy sigma: play `policy` until the first
 * state in `bad`, then `fast` until the goal. Evaluated on the product chain
 * (state, phase).
 */
inline SwitchingValues switching_strategy_values(const Mdp& mdp, const StochasticPolicy& policy,
                                                 const StochasticPolicy& fast, const std::vector<bool>& bad,
                                                 const CostFunction& cost) {
    const std::size_t S = mdp.num_states();
    if (bad.size() != S) throw ShapeMismatch("switching_strategy_values: bad set has wrong size");
    const auto first = induced_chain(mdp, policy, cost);
    const auto second = induced_chain(mdp, fast, cost);
    // product states: s in [0,S) is phase one, S + s is phase two
    MarkovChain chain{2 * S, std::vector<double>(2 * S * (2 * S + 1), 0.0), std::vector<double>(2 * S, 0.0)};
    auto at = [&](std::size_t from, std::size_t to) -> double& { return chain.kernel[from * (2 * S + 1) + to]; };
    for (std::size_t s = 0; s < S; ++s) {
        chain.step_cost[S + s] = second.step_cost[s];
        for (std::size_t n = 0; n < S; ++n) at(S + s, S + n) = second.p(s, n);
        at(S + s, 2 * S) = second.p(s, S);
        if (bad[s]) {
            // the switch happens on arrival, so phase one at s behaves as phase two
            chain.step_cost[s] = second.step_cost[s];
            for (std::size_t n = 0; n < S; ++n) at(s, S + n) = second.p(s, n);
            at(s, 2 * S) = second.p(s, S);
        } else {
            chain.step_cost[s] = first.step_cost[s];
            for (std::size_t n = 0; n < S; ++n) at(s, bad[n] ? S + n : n) += first.p(s, n);
            at(s, 2 * S) = first.p(s, S);
        }
    }
    ChainSolver solver(chain);
    const auto j = solver.solve(chain.step_cost);
    const auto t = solver.solve(std::vector<double>(2 * S, 1.0));
    SwitchingValues out{{std::vector<double>(j.values.begin(), j.values.begin() + static_cast<std::ptrdiff_t>(S)),
                         std::vector<bool>(j.finite.begin(), j.finite.begin() + static_cast<std::ptrdiff_t>(S))},
                        {std::vector<double>(t.values.begin(), t.values.begin() + static_cast<std::ptrdiff_t>(S)),
                         std::vector<bool>(t.finite.begin(), t.finite.begin() + static_cast<std::ptrdiff_t>(S))}};
    return out;
}

}  // namespace ssp
