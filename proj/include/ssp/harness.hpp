#pragma once

#include "ssp/io.hpp"

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <thread>

namespace ssp {

struct EpisodeRecord {
    std::size_t k = 0;
    std::uint64_t length = 0;
    double realized_cost = 0.0;
    double perceived_cost = 0.0;  ///< cost as seen by the learner (after perturbation)
    double jstar_k = 0.0;
    double cum_regret = 0.0;
    std::optional<std::size_t> switch_step;
    std::size_t explore_steps = 0;
    std::size_t epochs = 0;
    std::size_t dual_iters = 0;
    double dual_residual = 0.0;
    bool dual_converged = true;
    bool projected = false;
};

struct Step {
    std::size_t state;
    std::size_t action;
    std::size_t next;
    Mode mode;
};

struct RegretReport {
    double learner_total = 0.0;
    double jstar_total = 0.0;
    double regret = 0.0;  ///< learner_total - jstar_total
    StochasticPolicy comparator;
    double comparator_time = 0.0;  ///< T^{pi*}(s0)
    double comparator_check = 0.0;  ///< <q^{pi*}, sum_k c_k>, should equal jstar_total
};

struct RunOptions {
    bool record_trajectory = false;
    bool record_events = true;
};

struct RunResult {
    std::vector<EpisodeRecord> episodes;
    RegretReport report;
    std::vector<std::vector<Step>> trajectories;  ///< per episode, when requested
    std::vector<std::pair<std::size_t, AgentEvent>> events;
    std::vector<CostFunction> costs;  ///< c_1..c_K as revealed
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
    double diameter = 0.0;
};

struct ComparatorResult {
    StochasticPolicy policy;
    std::vector<double> per_episode;  ///< J^{pi*}_k(s0)
    double total = 0.0;
    double time = 0.0;           ///< T^{pi*}(s0)
    double occupancy_total = 0.0;  ///< <q^{pi*}, sum_k c_k>
};

/**
 * Best stationary proper policy in hindsight. By linearity of the total cost
 * in the occupancy measure it is the optimal policy for the summed cost;
 * value iteration runs on the mean. `plan_costs` (same length) replaces the
 * costs used for planning, e.g. by their perturbed versions, while evaluation
 * always uses `costs`.
 */
inline ComparatorResult best_in_hindsight(const Mdp& mdp, const std::vector<CostFunction>& costs,
                                          const std::vector<CostFunction>* plan_costs = nullptr) {
    if (costs.empty()) throw Error("best_in_hindsight: empty cost sequence");
    const auto& planning = plan_costs ? *plan_costs : costs;
    if (planning.size() != costs.size()) throw ShapeMismatch("best_in_hindsight: planning sequence length differs");
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    std::vector<double> mean(S * A, 0.0), sum(S * A, 0.0);
    for (std::size_t k = 0; k < costs.size(); ++k)
        for (std::size_t i = 0; i < S * A; ++i) {
            mean[i] += planning[k].values()[i];
            sum[i] += costs[k].values()[i];
        }
    for (double& x : mean) x = std::min(1.0, x / static_cast<double>(costs.size()));
    auto plan = value_iteration(mdp, CostFunction(S, A, mean));

    ComparatorResult out;
    out.policy = plan.policy;
    PolicyEvaluator evaluator(mdp, plan.policy);
    out.per_episode.reserve(costs.size());
    for (const auto& c : costs) {
        const double j = evaluator.evaluate(c).at(mdp.initial_state());
        out.per_episode.push_back(j);
        out.total += j;
    }
    out.time = hitting_times(mdp, plan.policy).at(mdp.initial_state());
    const auto q = occupancy_of_policy(mdp, plan.policy);
    for (std::size_t i = 0; i < S * A; ++i) out.occupancy_total += q.values()[i] * sum[i];
    return out;
}

struct MonteCarloEstimate {
    double mean = 0.0;
    std::optional<double> stderr_;  ///< undefined for a single rollout
    std::size_t rollouts = 0;
};

inline MonteCarloEstimate monte_carlo_eval(const Mdp& mdp, const StochasticPolicy& policy, const CostFunction& cost,
                                           std::size_t n_rollouts, std::uint64_t seed, std::uint64_t step_cap = 10'000'000) {
    if (n_rollouts == 0) throw Error("monte_carlo_eval: need at least one rollout");
    Rng rng(seed);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t r = 0; r < n_rollouts; ++r) {
        std::size_t s = mdp.initial_state();
        std::uint64_t steps = 0;
        double total = 0.0;
        while (s != mdp.goal()) {
            if (steps++ >= step_cap) throw StepCapExceeded(r + 1, step_cap);
            const std::size_t a = rng.categorical(policy.row(s));
            total += cost(s, a);
            s = rng.categorical(mdp.row(s, a));
        }
        sum += total;
        sum_sq += total * total;
    }
    const double n = static_cast<double>(n_rollouts);
    MonteCarloEstimate est{sum / n, std::nullopt, n_rollouts};
    if (n_rollouts > 1) {
        const double var = std::max(0.0, (sum_sq - n * est.mean * est.mean) / (n - 1.0));
        est.stderr_ = std::sqrt(var / n);
    }
    return est;
}

/**
 * Runs K episodes of `cfg` on `env` and computes the regret against the best
 * policy in hindsight. Fully determined by `seed`: the environment, the
 * learner's sampling and the scheduler use separate derived streams.
 */
inline RunResult run_experiment(const EnvInstance& env, const AgentConfig& cfg, std::size_t episodes, std::uint64_t seed,
                                RunOptions opts = {}) {
    if (episodes == 0) throw Error("run_experiment: need at least one episode");
    cfg.validate();
    const auto started = std::chrono::steady_clock::now();
    const Mdp& mdp = env.mdp;
    const double diameter = env.diameter ? *env.diameter : fast_policy_and_diameter(mdp).diameter;
    auto learner = make_learner(mdp, cfg, episodes, diameter);
    const CostScheduler scheduler = env.scheduler.kind() == CostScheduler::Kind::SeededRandom
                                        ? env.scheduler.reseeded(Rng(seed).derive(3)())
                                        : env.scheduler;
    if (auto len = scheduler.length(); len && *len < episodes)
        throw Error("run_experiment: replay scheduler holds " + std::to_string(*len) + " episodes, " +
                    std::to_string(episodes) + " requested");

    const Rng root(seed);
    Rng env_rng = root.derive(1);
    Rng agent_rng = root.derive(2);

    RunResult out;
    out.seed = seed;
    out.diameter = diameter;
    out.episodes.reserve(episodes);
    out.costs.reserve(episodes);
    std::vector<std::pair<std::size_t, std::size_t>> visits;
    const double eps = cfg.epsilon_perturb;
    double learner_total = 0.0;

    for (std::size_t k = 1; k <= episodes; ++k) {
        learner->begin_episode(k);
        visits.clear();
        std::vector<Step> traj;
        std::size_t s = mdp.initial_state();
        std::uint64_t steps = 0;
        while (s != mdp.goal()) {
            if (steps >= cfg.step_cap) throw StepCapExceeded(k, cfg.step_cap);
            const std::size_t a = learner->act(s, agent_rng);
            const std::size_t next = env_rng.categorical(mdp.row(s, a));
            learner->observe(s, a, next);
            visits.emplace_back(s, a);
            if (opts.record_trajectory) traj.push_back({s, a, next, learner->mode()});
            s = next;
            ++steps;
        }
        const CostFunction c = scheduler.next(k);
        EpisodeRecord rec;
        rec.k = k;
        rec.length = steps;
        for (auto [vs, va] : visits) {
            rec.realized_cost += c(vs, va);
            rec.perceived_cost += eps > 0.0 ? std::max(c(vs, va), eps) : c(vs, va);
        }
        learner->end_episode(c);
        const auto& st = learner->stats();
        rec.switch_step = st.switch_step;
        rec.explore_steps = st.explore_steps;
        rec.epochs = st.epochs;
        rec.dual_iters = st.dual.iterations;
        rec.dual_residual = st.dual.residual;
        rec.dual_converged = !st.projected || st.dual.converged;
        rec.projected = st.projected;
        if (opts.record_events)
            for (const auto& e : st.events) out.events.emplace_back(k, e);
        learner_total += rec.realized_cost;
        out.episodes.push_back(rec);
        out.costs.push_back(c);
        if (opts.record_trajectory) out.trajectories.push_back(std::move(traj));
    }

    std::vector<CostFunction> perturbed;
    if (eps > 0.0)
        for (const auto& c : out.costs) perturbed.push_back(perturb_costs(c, eps));
    auto comp = best_in_hindsight(mdp, out.costs, eps > 0.0 ? &perturbed : nullptr);
    double cum_learner = 0.0, cum_star = 0.0;
    for (std::size_t i = 0; i < episodes; ++i) {
        auto& rec = out.episodes[i];
        rec.jstar_k = comp.per_episode[i];
        cum_learner += rec.realized_cost;
        cum_star += rec.jstar_k;
        rec.cum_regret = cum_learner - cum_star;
    }
    out.report.learner_total = cum_learner;
    out.report.jstar_total = cum_star;
    out.report.regret = cum_learner - cum_star;
    out.report.comparator = comp.policy;
    out.report.comparator_time = comp.time;
    out.report.comparator_check = comp.occupancy_total;
    out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return out;
}

// ---- output files ------------------------------------------------------------

inline constexpr std::string_view kEpisodeCsvHeader =
    "k,length,realized_cost,jstar_k,cum_regret,switch_step,explore_steps,epochs,dual_iters,dual_residual";

inline std::string episodes_csv(const std::vector<EpisodeRecord>& rows) {
    std::string out(kEpisodeCsvHeader);
    out += '\n';
    for (const auto& r : rows) {
        out += std::to_string(r.k) + ',' + std::to_string(r.length) + ',' + format_double(r.realized_cost) + ',' +
               format_double(r.jstar_k) + ',' + format_double(r.cum_regret) + ',' +
               (r.switch_step ? std::to_string(*r.switch_step) : std::string()) + ',' + std::to_string(r.explore_steps) + ',' +
               std::to_string(r.epochs) + ',' + std::to_string(r.dual_iters) + ',' + format_double(r.dual_residual) + '\n';
    }
    return out;
}

/// Everything needed to reproduce a run.
struct RunConfig {
    json env = {{"builtin", "chain:3"}};
    AgentConfig agent;
    std::size_t episodes = 100;
    std::uint64_t seed = 0;
    std::string out = "run";

    json to_json() const {
        json j = ssp::to_json(agent);
        j["env"] = env;
        j["episodes"] = episodes;
        j["seed"] = seed;
        j["out"] = out;
        return j;
    }

    /// Applies the fields present in `j` on top of the current values.
    void apply(const json& j) {
        try {
            if (j.contains("env")) env = j.at("env").is_string() ? env_descriptor(j.at("env").get<std::string>()) : j.at("env");
            if (j.contains("scheduler")) env["scheduler"] = j.at("scheduler");
            if (j.contains("episodes")) episodes = j.at("episodes").get<std::size_t>();
            if (j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
            if (j.contains("out")) out = j.at("out").get<std::string>();
        } catch (const json::exception& e) {
            throw Error(std::string("malformed run configuration: ") + e.what());
        }
        apply_agent_json(agent, j, episodes);
    }
};

inline json summary_json(const RunConfig& cfg, const EnvInstance& env, const RunResult& r) {
    std::size_t non_converged = 0, projections = 0;
    for (const auto& e : r.episodes) {
        projections += e.projected;
        non_converged += e.projected && !e.dual_converged;
    }
    json comparator = json::array();
    for (std::size_t s = 0; s < r.report.comparator.num_states(); ++s)
        comparator.push_back(std::vector<double>(r.report.comparator.row(s).begin(), r.report.comparator.row(s).end()));
    json env_full = to_json(env);
    return {{"config", cfg.to_json()},
            {"env_resolved", env_full},
            {"learner_total", r.report.learner_total},
            {"jstar_total", r.report.jstar_total},
            {"regret", r.report.regret},
            {"comparator_policy", comparator},
            {"comparator_time", r.report.comparator_time},
            {"comparator_occupancy_total", r.report.comparator_check},
            {"diameter", r.diameter},
            {"episodes", r.episodes.size()},
            {"projections", projections},
            {"projections_not_converged", non_converged},
            {"seed", r.seed},
            {"wall_seconds", r.wall_seconds}};
}

inline std::string events_jsonl(const RunResult& r) {
    std::string out;
    for (const auto& [k, e] : r.events) {
        json j{{"k", k}, {"event", std::string(to_string(e.kind))}, {"step", e.step}};
        if (e.kind == AgentEvent::Kind::ModeChange) {
            j["state"] = e.state;
            j["from"] = std::string(to_string(e.from));
            j["to"] = std::string(to_string(e.to));
        }
        if (e.kind == AgentEvent::Kind::Projection) j["residual"] = e.value;
        if (e.kind == AgentEvent::Kind::EpochStart) j["epoch"] = e.value;
        if (e.kind == AgentEvent::Kind::EstimationDone) j["diameter_estimate"] = e.value;
        if (!e.detail.empty()) j["detail"] = e.detail;
        out += j.dump() + '\n';
    }
    return out;
}

/// Runs the configuration and writes episodes.csv, summary.json and events.jsonl into cfg.out.
inline RunResult run_to_directory(const RunConfig& cfg) {
    const EnvInstance env = env_from_json(cfg.env, cfg.seed);
    auto result = run_experiment(env, cfg.agent, cfg.episodes, cfg.seed);
    std::filesystem::create_directories(cfg.out);
    const std::filesystem::path dir(cfg.out);
    write_text_file((dir / "episodes.csv").string(), episodes_csv(result.episodes));
    write_text_file((dir / "summary.json").string(), summary_json(cfg, env, result).dump(2) + '\n');
    write_text_file((dir / "events.jsonl").string(), events_jsonl(result));
    return result;
}

struct SweepCellResult {
    std::size_t index = 0;
    json overrides;
    std::string dir;
    bool ok = false;
    std::string error;
    double regret = 0.0;
};

/**
 * Cartesian product of `grid` (key -> list of values) applied on top of `base`;
 * keys are expanded in lexicographic order.
 */
inline std::vector<json> expand_grid(const json& grid) {
    std::vector<json> cells{json::object()};
    if (grid.is_null()) return cells;
    if (!grid.is_object()) throw Error("sweep grid must be an object of value lists");
    for (auto it = grid.begin(); it != grid.end(); ++it) {
        if (!it.value().is_array() || it.value().empty()) throw Error("sweep grid entry '" + it.key() + "' must be a nonempty list");
        std::vector<json> next;
        for (const auto& cell : cells)
            for (const auto& v : it.value()) {
                json c = cell;
                c[it.key()] = v;
                next.push_back(std::move(c));
            }
        cells = std::move(next);
    }
    return cells;
}

/**
 * Runs every cell in its own directory `<out>/cell_NNNN` on up to `threads`
 * workers. A failing cell is recorded and does not stop the others. Writes
 * `<out>/manifest.json`.
 */
inline std::vector<SweepCellResult> run_sweep(const RunConfig& base, const std::vector<json>& cells, const std::string& out,
                                              std::size_t threads = 0) {
    if (cells.empty()) throw Error("run_sweep: empty grid");
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, cells.size());
    std::vector<SweepCellResult> results(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) {
            auto& r = results[i];
            r.index = i;
            r.overrides = cells[i];
            char name[32];
            std::snprintf(name, sizeof name, "cell_%04zu", i);
            r.dir = (std::filesystem::path(out) / name).string();
            try {
                RunConfig cfg = base;
                cfg.apply(cells[i]);
                cfg.out = r.dir;
                r.regret = run_to_directory(cfg).report.regret;
                r.ok = true;
            } catch (const std::exception& e) {
                r.ok = false;
                r.error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    json manifest{{"base", base.to_json()}, {"cells", json::array()}};
    for (const auto& r : results) {
        json c{{"index", r.index}, {"overrides", r.overrides}, {"dir", r.dir}, {"status", r.ok ? "ok" : "failed"}};
        if (r.ok) {
            c["regret"] = r.regret;
            c["files"] = {"episodes.csv", "summary.json", "events.jsonl"};
        } else {
            c["error"] = r.error;
        }
        manifest["cells"].push_back(std::move(c));
    }
    std::filesystem::create_directories(out);
    write_text_file((std::filesystem::path(out) / "manifest.json").string(), manifest.dump(2) + '\n');
    return results;
}

}  // namespace ssp
