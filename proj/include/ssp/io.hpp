#pragma once

#include "ssp/agents.hpp"
#include "ssp/envlab.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <fstream>
#include <sstream>

namespace ssp {

using json = nlohmann::json;

/// Shortest decimal text that parses back to exactly `x`.
inline std::string format_double(double x) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
    if (ec != std::errc()) throw Error("format_double failed");
    return {buf, end};
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error("malformed JSON in '" + path + "': " + e.what());
    }
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << text;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---- Mdp ----------------------------------------------------------------

inline json to_json(const Mdp& mdp) {
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    json t = json::array();
    for (std::size_t s = 0; s < S; ++s) {
        json rows = json::array();
        for (std::size_t a = 0; a < A; ++a) {
            auto r = mdp.row(s, a);
            rows.push_back(std::vector<double>(r.begin(), r.end()));
        }
        t.push_back(std::move(rows));
    }
    return {{"num_states", S}, {"num_actions", A}, {"initial_state", mdp.initial_state()}, {"transitions", std::move(t)}};
}

inline Mdp mdp_from_json(const json& j) {
    try {
        const auto S = j.at("num_states").get<std::size_t>();
        const auto A = j.at("num_actions").get<std::size_t>();
        const auto s0 = j.value("initial_state", std::size_t{0});
        const auto& t = j.at("transitions");
        if (t.size() != S) throw ShapeMismatch("transitions: expected " + std::to_string(S) + " states");
        std::vector<double> p;
        p.reserve(S * A * (S + 1));
        for (const auto& rows : t) {
            if (rows.size() != A) throw ShapeMismatch("transitions: expected " + std::to_string(A) + " actions per state");
            for (const auto& row : rows) {
                if (row.size() != S + 1) throw ShapeMismatch("transitions: expected " + std::to_string(S + 1) + " successors");
                for (const auto& x : row) p.push_back(x.get<double>());
            }
        }
        return {S, A, s0, std::move(p)};
    } catch (const json::exception& e) {
        throw Error(std::string("malformed MDP: ") + e.what());
    }
}

// ---- costs and schedulers -------------------------------------------------

inline json to_json(const CostFunction& c) {
    json rows = json::array();
    for (std::size_t s = 0; s < c.num_states(); ++s) {
        std::vector<double> r(c.num_actions());
        for (std::size_t a = 0; a < c.num_actions(); ++a) r[a] = c(s, a);
        rows.push_back(std::move(r));
    }
    return rows;
}

inline CostFunction cost_from_json(const json& j, std::size_t num_states, std::size_t num_actions) {
    if (j.is_number()) return CostFunction::constant(num_states, num_actions, j.get<double>());
    if (!j.is_array() || j.size() != num_states) throw ShapeMismatch("cost function: expected one row per state");
    std::vector<double> v;
    v.reserve(num_states * num_actions);
    for (const auto& row : j) {
        if (!row.is_array() || row.size() != num_actions) throw ShapeMismatch("cost function: expected one entry per action");
        for (const auto& x : row) v.push_back(x.get<double>());
    }
    return {num_states, num_actions, std::move(v)};
}

inline json to_json(const CostScheduler& s) {
    json j{{"kind", std::string(to_string(s.kind()))}};
    switch (s.kind()) {
        case CostScheduler::Kind::SeededRandom:
            j["c_min"] = s.c_min();
            j["seed"] = s.seed();
            j["num_states"] = s.num_states();
            j["num_actions"] = s.num_actions();
            break;
        case CostScheduler::Kind::PiecewiseAdversary:
            j["segments"] = s.segments();
            [[fallthrough]];
        default: {
            json costs = json::array();
            for (const auto& c : s.costs()) costs.push_back(to_json(c));
            j["costs"] = std::move(costs);
        }
    }
    return j;
}

/// Also accepts the shorthand kinds "unit" (constant 1) and "gridworld_split"
/// (alternating halves; needs grid width/height).
inline CostScheduler scheduler_from_json(const json& j, std::size_t S, std::size_t A, std::uint64_t default_seed = 0,
                                         std::optional<std::pair<std::size_t, std::size_t>> grid = std::nullopt) {
    try {
        const auto kind = j.at("kind").get<std::string>();
        auto costs = [&] {
            std::vector<CostFunction> out;
            for (const auto& c : j.at("costs")) out.push_back(cost_from_json(c, S, A));
            return out;
        };
        if (kind == "unit") return CostScheduler::constant(CostFunction::constant(S, A, 1.0));
        if (kind == "constant") {
            if (j.contains("cost")) return CostScheduler::constant(cost_from_json(j.at("cost"), S, A));
            return CostScheduler::constant(costs().at(0));
        }
        if (kind == "alternating") {
            auto c = costs();
            if (c.size() != 2) throw Error("alternating scheduler needs exactly two cost functions");
            return CostScheduler::alternating(c[0], c[1]);
        }
        if (kind == "seeded_random")
            return CostScheduler::seeded_random(S, A, j.value("c_min", 0.0), j.value("seed", default_seed));
        if (kind == "replay") return CostScheduler::replay(costs());
        if (kind == "piecewise_adversary")
            return CostScheduler::piecewise(costs(), j.at("segments").get<std::vector<std::size_t>>());
        if (kind == "gridworld_split") {
            std::size_t w = j.value("width", grid ? grid->first : 0), h = j.value("height", grid ? grid->second : 0);
            if (w * h != S + 1) throw Error("gridworld_split scheduler: width*height must equal num_states + 1");
            auto [first, second] = gridworld_split_costs(w, h, j.value("cheap", 0.1), j.value("dear", 1.0));
            return CostScheduler::alternating(first, second);
        }
        throw Error("unknown scheduler kind '" + kind + "'");
    } catch (const json::exception& e) {
        throw Error(std::string("malformed scheduler: ") + e.what());
    }
}

// ---- environments -----------------------------------------------------------

namespace detail {

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i)
        if (i == s.size() || s[i] == sep) {
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    return out;
}

template <class T>
T parse_number(const std::string& text, const std::string& what) {
    T value{};
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) throw Error("invalid " + what + " '" + text + "'");
    return value;
}

}  // namespace detail

/**
 * Built-in instances by name:
 *   chain:N, gridworld:W:H:SLIP, random:N:A:SEED:P, a1:S:A:SEED, a2:D:CMIN, a3:K:CMIN
 */
inline EnvInstance make_builtin(std::string_view spec) {
    auto parts = detail::split(spec, ':');
    const std::string& kind = parts[0];
    auto arg = [&](std::size_t i) -> const std::string& {
        if (i >= parts.size()) throw Error("builtin '" + std::string(spec) + "': missing argument " + std::to_string(i));
        return parts[i];
    };
    auto count = [&](std::size_t expected) {
        if (parts.size() != expected + 1)
            throw Error("builtin '" + std::string(spec) + "': expected " + std::to_string(expected) + " arguments");
    };
    using detail::parse_number;
    if (kind == "chain") {
        count(1);
        return make_chain(parse_number<std::size_t>(arg(1), "size"));
    }
    if (kind == "gridworld") {
        count(3);
        return make_gridworld(parse_number<std::size_t>(arg(1), "width"), parse_number<std::size_t>(arg(2), "height"),
                              parse_number<double>(arg(3), "slip"));
    }
    if (kind == "random") {
        count(4);
        return make_random_ssp(parse_number<std::size_t>(arg(1), "states"), parse_number<std::size_t>(arg(2), "actions"),
                               parse_number<std::uint64_t>(arg(3), "seed"), parse_number<double>(arg(4), "probability"));
    }
    if (kind == "a1") {
        count(3);
        return fixture_a1(parse_number<std::size_t>(arg(1), "states"), parse_number<std::size_t>(arg(2), "actions"),
                          parse_number<std::uint64_t>(arg(3), "seed"));
    }
    if (kind == "a2") {
        count(2);
        return fixture_a2(parse_number<double>(arg(1), "D"), parse_number<double>(arg(2), "c_min"));
    }
    if (kind == "a3") {
        count(2);
        return fixture_a3(parse_number<std::size_t>(arg(1), "K"), parse_number<double>(arg(2), "c_min"));
    }
    throw Error("unknown builtin environment '" + std::string(spec) + "'");
}

inline json to_json(const EnvInstance& env) {
    return {{"name", env.name}, {"mdp", to_json(env.mdp)}, {"scheduler", to_json(env.scheduler)}};
}

/**
 * Environment from a JSON descriptor: either {"builtin": "gridworld:4:4:0.1"} or
 * {"mdp": {...}}, each optionally with a "scheduler" block.
 */
inline EnvInstance env_from_json(const json& j, std::uint64_t default_seed = 0) {
    EnvInstance env;
    std::optional<std::pair<std::size_t, std::size_t>> grid;
    if (j.contains("builtin")) {
        const auto spec = j.at("builtin").get<std::string>();
        env = make_builtin(spec);
        auto parts = detail::split(spec, ':');
        if (parts[0] == "gridworld" && parts.size() == 4)
            grid = std::make_pair(detail::parse_number<std::size_t>(parts[1], "width"),
                                  detail::parse_number<std::size_t>(parts[2], "height"));
    } else if (j.contains("mdp")) {
        env = detail::finish_instance(j.value("name", std::string("custom")), mdp_from_json(j.at("mdp")));
    } else {
        throw Error("environment descriptor needs a 'builtin' or an 'mdp' entry");
    }
    if (j.contains("name")) env.name = j.at("name").get<std::string>();
    if (j.contains("scheduler"))
        env.scheduler = scheduler_from_json(j.at("scheduler"), env.mdp.num_states(), env.mdp.num_actions(), default_seed, grid);
    return env;
}

/// "builtin:<name>" or a path to a JSON environment (or bare MDP) file.
inline json env_descriptor(const std::string& arg) {
    if (arg.rfind("builtin:", 0) == 0) return {{"builtin", arg.substr(8)}};
    json j = read_json_file(arg);
    if (j.contains("num_states")) return {{"mdp", j}};
    return j;
}

// ---- agent configuration --------------------------------------------------

inline json to_json(const AgentConfig& c) {
    json j{{"agent", std::string(to_string(c.kind))},
           {"cmin", c.c_min},
           {"delta", c.delta},
           {"alpha", c.alpha},
           {"estimate_diameter", c.estimate_diameter},
           {"epsilon_perturb", c.epsilon_perturb},
           {"dual_tol", c.dual_tol},
           {"dual_max_iters", c.dual_max_iters},
           {"step_cap", c.step_cap}};
    j["eta"] = c.eta ? json(*c.eta) : json(nullptr);
    j["phi"] = c.phi ? json(*c.phi) : json(nullptr);
    j["estimation_episodes"] = c.estimation_episodes ? json(*c.estimation_episodes) : json(nullptr);
    return j;
}

/// Applies the agent fields present in `j` on top of `c`. "epsilon_perturb": "auto"
/// resolves to K^(-1/4) with K = `episodes`.
inline void apply_agent_json(AgentConfig& c, const json& j, std::size_t episodes) {
    try {
        if (j.contains("agent")) c.kind = parse_agent_kind(j.at("agent").get<std::string>());
        auto opt_double = [&](const char* key, std::optional<double>& dst) {
            if (j.contains(key)) dst = j.at(key).is_null() ? std::nullopt : std::optional<double>(j.at(key).get<double>());
        };
        auto opt_uint = [&](const char* key, std::optional<std::uint64_t>& dst) {
            if (j.contains(key)) dst = j.at(key).is_null() ? std::nullopt : std::optional<std::uint64_t>(j.at(key).get<std::uint64_t>());
        };
        opt_double("eta", c.eta);
        opt_uint("phi", c.phi);
        opt_uint("estimation_episodes", c.estimation_episodes);
        if (j.contains("cmin")) c.c_min = j.at("cmin").get<double>();
        if (j.contains("delta")) c.delta = j.at("delta").get<double>();
        if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
        if (j.contains("estimate_diameter")) c.estimate_diameter = j.at("estimate_diameter").get<bool>();
        if (j.contains("epsilon_perturb")) {
            const auto& e = j.at("epsilon_perturb");
            c.epsilon_perturb = e.is_string() && e.get<std::string>() == "auto" ? default_perturbation(episodes) : e.get<double>();
        }
        if (j.contains("dual_tol")) c.dual_tol = j.at("dual_tol").get<double>();
        if (j.contains("dual_max_iters")) c.dual_max_iters = j.at("dual_max_iters").get<std::size_t>();
        if (j.contains("step_cap")) c.step_cap = j.at("step_cap").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw Error(std::string("malformed agent configuration: ") + e.what());
    }
}

// ---- counts and confidence snapshots ---------------------------------------

inline json to_json(const VisitCounts& counts) {
    return {{"epoch", counts.epoch_index()},
            {"num_states", counts.num_states()},
            {"num_actions", counts.num_actions()},
            {"N", counts.epoch_start_counts()},
            {"N3", counts.epoch_start_counts3()}};
}

inline json to_json(const ConfidenceSet& conf) {
    return {{"epoch", conf.epoch()},     {"delta", conf.delta()},   {"num_states", conf.num_states()},
            {"num_actions", conf.num_actions()}, {"p_bar", conf.p_bar()}, {"radius", conf.radius()}};
}

}  // namespace ssp
