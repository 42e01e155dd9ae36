// Command-line front end: run, sweep, validate, replay.

#include "ssp/ssp.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace {

struct CommonFlags {
    std::string config;
    std::string env;
    std::string agent;
    std::size_t episodes = 0;
    std::uint64_t seed = 0;
    double eta = 0.0;
    double cmin = 0.0;
    double delta = 0.0;
    double alpha = 0.0;
    std::uint64_t phi = 0;
    std::string epsilon_perturb;
    bool estimate_diameter = false;
    std::uint64_t estimation_episodes = 0;
    std::string scheduler;
    std::string out;
    std::vector<CLI::Option*> options;

    void attach(CLI::App* app) {
        auto add = [&](CLI::Option* o) { options.push_back(o); };
        add(app->add_option("--config", config, "JSON configuration file; flags override its values"));
        add(app->add_option("--env", env, "environment: JSON file or builtin:<name>"));
        add(app->add_option("--agent", agent, "oreps, oreps2 or oreps3"));
        add(app->add_option("--episodes", episodes, "number of episodes K"));
        add(app->add_option("--seed", seed, "experiment seed"));
        add(app->add_option("--eta", eta, "learning rate (default: theory-driven schedule)"));
        add(app->add_option("--cmin", cmin, "lower bound on costs"));
        add(app->add_option("--delta", delta, "confidence parameter"));
        add(app->add_option("--alpha", alpha, "known-state threshold multiplier"));
        add(app->add_option("--phi", phi, "known-state threshold override"));
        add(app->add_option("--epsilon-perturb", epsilon_perturb, "cost perturbation: a value in [0,1] or 'auto' for K^-1/4"));
        add(app->add_flag("--estimate-diameter", estimate_diameter, "estimate the diameter instead of computing it"));
        add(app->add_option("--estimation-episodes", estimation_episodes, "episodes used for diameter estimation"));
        add(app->add_option("--scheduler", scheduler, "JSON file with a cost scheduler block"));
        add(app->add_option("--out", out, "output directory"));
    }

    bool given(const char* name) const {
        for (auto* o : options)
            if (o->check_lname(name) && o->count() > 0) return true;
        return false;
    }

    /// File values first, then every flag that was given.
    ssp::json overrides() const {
        ssp::json j = ssp::json::object();
        if (given("config")) {
            j = ssp::read_json_file(config);
            if (j.contains("base")) j = j.at("base");
        }
        if (given("env")) j["env"] = env;
        if (given("agent")) j["agent"] = agent;
        if (given("episodes")) j["episodes"] = episodes;
        if (given("seed")) j["seed"] = seed;
        if (given("eta")) j["eta"] = eta;
        if (given("cmin")) j["cmin"] = cmin;
        if (given("delta")) j["delta"] = delta;
        if (given("alpha")) j["alpha"] = alpha;
        if (given("phi")) j["phi"] = phi;
        if (given("epsilon-perturb")) {
            if (epsilon_perturb == "auto")
                j["epsilon_perturb"] = "auto";
            else
                j["epsilon_perturb"] = std::stod(epsilon_perturb);
        }
        if (given("estimate-diameter")) j["estimate_diameter"] = estimate_diameter;
        if (given("estimation-episodes")) j["estimation_episodes"] = estimation_episodes;
        if (given("scheduler")) j["scheduler"] = ssp::read_json_file(scheduler);
        if (given("out")) j["out"] = out;
        return j;
    }
};

ssp::RunConfig resolve(const ssp::json& j) {
    ssp::RunConfig cfg;
    // episodes first so that "auto" perturbation sees the final K
    if (j.contains("episodes")) cfg.episodes = j.at("episodes").get<std::size_t>();
    cfg.apply(j);
    cfg.agent.validate();
    return cfg;
}

void print_summary(const ssp::RunConfig& cfg, const ssp::RunResult& r) {
    std::cout << "episodes " << r.episodes.size() << "  learner " << r.report.learner_total << "  comparator "
              << r.report.jstar_total << "  regret " << r.report.regret << "  (" << r.wall_seconds << " s)\n"
              << "wrote " << cfg.out << "/episodes.csv, summary.json, events.jsonl\n";
}

int cmd_run(const CommonFlags& f) {
    auto cfg = resolve(f.overrides());
    auto result = ssp::run_to_directory(cfg);
    print_summary(cfg, result);
    return 0;
}

int cmd_sweep(const CommonFlags& f, std::size_t threads) {
    if (!f.given("config")) throw ssp::Error("sweep needs --config with 'base' and 'grid' entries");
    const auto file = ssp::read_json_file(f.config);
    auto base_json = f.overrides();
    auto base = resolve(base_json);
    auto cells = ssp::expand_grid(file.value("grid", ssp::json(nullptr)));
    if (file.contains("grid") && file.at("grid").empty()) throw ssp::Error("sweep grid is empty");
    if (threads == 0) threads = file.value("threads", std::size_t{0});
    // cells re-resolve "auto" perturbation against their own K
    if (base_json.contains("epsilon_perturb") && base_json.at("epsilon_perturb").is_string())
        for (auto& c : cells)
            if (!c.contains("epsilon_perturb")) c["epsilon_perturb"] = "auto";
    auto results = ssp::run_sweep(base, cells, base.out, threads);
    std::size_t ok = 0;
    for (const auto& r : results) {
        ok += r.ok;
        std::cout << r.dir << ": " << (r.ok ? "ok  regret " + ssp::format_double(r.regret) : "FAILED  " + r.error) << '\n';
    }
    std::cout << ok << "/" << results.size() << " cells succeeded; manifest at " << base.out << "/manifest.json\n";
    return ok == results.size() ? 0 : 1;
}

int cmd_validate(const CommonFlags& f) {
    auto j = f.overrides();
    if (!j.contains("env")) throw ssp::Error("validate needs --env or a config with an env entry");
    const auto desc = j.at("env").is_string() ? ssp::env_descriptor(j.at("env").get<std::string>()) : j.at("env");
    ssp::Mdp mdp;
    if (desc.contains("mdp")) {
        mdp = ssp::mdp_from_json(desc.at("mdp"));
    } else {
        mdp = ssp::make_builtin(desc.at("builtin").get<std::string>()).mdp;
    }
    const auto issues = ssp::check_mdp(mdp);
    if (!issues.empty()) {
        std::cout << "invalid: " << issues.size() << " issue(s)\n";
        for (const auto& i : issues) std::cout << "  " << i.describe() << '\n';
        return 1;
    }
    const auto fast = ssp::fast_policy_and_diameter(mdp);
    std::cout << "valid: " << mdp.num_states() << " states, " << mdp.num_actions() << " actions, diameter "
              << fast.diameter << '\n';
    return 0;
}

int cmd_replay(const std::string& from, const std::string& out) {
    const std::filesystem::path dir(from);
    const auto summary = ssp::read_json_file((dir / "summary.json").string());
    ssp::json cfg_json = summary.at("config");
    cfg_json["env"] = summary.at("env_resolved");
    auto cfg = resolve(cfg_json);
    cfg.env = summary.at("env_resolved");
    cfg.out = out.empty() ? (dir / "replay").string() : out;
    auto result = ssp::run_to_directory(cfg);
    const auto original = ssp::read_text_file((dir / "episodes.csv").string());
    const auto replayed = ssp::read_text_file((std::filesystem::path(cfg.out) / "episodes.csv").string());
    print_summary(cfg, result);
    if (original == replayed) {
        std::cout << "replay identical: episodes.csv matches byte for byte\n";
        return 0;
    }
    std::cout << "replay MISMATCH: episodes.csv differs from " << (dir / "episodes.csv").string() << '\n';
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Online mirror descent learners for adversarial stochastic shortest path"};
    app.require_subcommand(1);

    CommonFlags run_flags, sweep_flags, validate_flags;
    auto* run = app.add_subcommand("run", "run one experiment");
    run_flags.attach(run);

    auto* sweep = app.add_subcommand("sweep", "run a grid of experiments");
    sweep_flags.attach(sweep);
    std::size_t threads = 0;
    sweep->add_option("--threads", threads, "worker threads (default: hardware concurrency)");

    auto* validate = app.add_subcommand("validate", "check an environment");
    validate_flags.attach(validate);

    auto* replay = app.add_subcommand("replay", "re-run a finished run and compare its episode log");
    std::string replay_from, replay_out;
    replay->add_option("run_dir", replay_from, "directory holding summary.json and episodes.csv")->required();
    replay->add_option("--out", replay_out, "where to write the replay (default: <run_dir>/replay)");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run) return cmd_run(run_flags);
        if (*sweep) return cmd_sweep(sweep_flags, threads);
        if (*validate) return cmd_validate(validate_flags);
        if (*replay) return cmd_replay(replay_from, replay_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
