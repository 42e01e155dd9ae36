#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace ssp {
namespace {

using test::known_kkt;
using test::random_cost;

Mdp random_mdp(std::size_t S, std::size_t A, std::uint64_t seed) { return make_random_ssp(S, A, seed, 0.3).mdp; }

AgentConfig config(AgentKind kind, double c_min = 0.1) {
    AgentConfig c;
    c.kind = kind;
    c.c_min = c_min;
    return c;
}

/// Plays one episode to the goal and returns the number of steps.
std::size_t play(Learner& l, const Mdp& mdp, std::size_t k, const CostFunction& c, Rng& env, Rng& agent) {
    l.begin_episode(k);
    std::size_t s = mdp.initial_state(), steps = 0;
    while (s != mdp.goal()) {
        const std::size_t a = l.act(s, agent);
        const std::size_t n = env.categorical(mdp.row(s, a));
        l.observe(s, a, n);
        s = n;
        ++steps;
    }
    l.end_episode(c);
    return steps;
}

// ---------------------------------------------------------------- helpers and formulas

TEST(AgentFormulas, DiameterStatistic) {
    const std::uint64_t lengths[] = {3, 5, 4, 4};
    EXPECT_DOUBLE_EQ(diameter_statistic(lengths), 40.0);
    EXPECT_THROW(diameter_statistic({}), Error);
}

TEST(AgentFormulas, DefaultEstimationEpisodes) {
    const double x = 100.0 * 2 * 2 / (0.1 * 0.5), lg = std::log(x);
    const double expected = 2400.0 * std::max(2.0 * 2.0 * 2.0 * lg * lg, std::sqrt(100.0) / (0.5 * std::sqrt(2.0)) * lg);
    EXPECT_EQ(default_estimation_episodes(100, 2, 2, 0.1, 0.5), static_cast<std::uint64_t>(std::ceil(expected)));
}

TEST(AgentFormulas, Perturbation) {
    const CostFunction c(1, 3, {0.0, 0.5, 0.05});
    auto p = perturb_costs(c, 0.1);
    EXPECT_DOUBLE_EQ(p(0, 0), 0.1);
    EXPECT_DOUBLE_EQ(p(0, 1), 0.5);
    EXPECT_DOUBLE_EQ(p(0, 2), 0.1);
    EXPECT_NEAR(default_perturbation(10000), 0.1, 1e-15);
    EXPECT_THROW(perturb_costs(c, 1.5), Error);
}

TEST(AgentFormulas, DefaultLearningRate) {
    EXPECT_NEAR(default_eta(10.0, 3, 2, 0.1, 400), std::sqrt(3.0 * std::log(600.0) / 400.0), 1e-15);
    EXPECT_NEAR(default_eta(10.0, 3, 2, 0.1, 400, 6.0), std::sqrt(6.0 * std::log(600.0) / 400.0), 1e-15);
}

TEST(AgentConfig, Validation) {
    EXPECT_NO_THROW(config(AgentKind::Oreps).validate());
    auto c = config(AgentKind::Oreps);
    c.c_min = 0.0;
    EXPECT_THROW(c.validate(), Error);
    c = config(AgentKind::Oreps);
    c.delta = 1.0;
    EXPECT_THROW(c.validate(), Error);
    c = config(AgentKind::Oreps);
    c.epsilon_perturb = 1.2;
    EXPECT_THROW(c.validate(), Error);
    c = config(AgentKind::Oreps2);
    c.estimate_diameter = true;
    EXPECT_THROW(c.validate(), Error);
    EXPECT_EQ(parse_agent_kind("oreps3"), AgentKind::Oreps3);
    EXPECT_THROW(parse_agent_kind("ucrl"), Error);
}

// ---------------------------------------------------------------- oreps

TEST(Oreps, FirstEpisodeIsEntropyProjection) {
    auto mdp = random_mdp(4, 3, 1);
    OrepsLearner l(mdp, config(AgentKind::Oreps), 100, false);
    l.begin_episode(1);
    const auto ones = OccupancyMeasure::filled(4, 3, 1.0);
    OmdParams p;
    p.tau = l.params().tau;
    auto expected = project_known(ones, mdp, p);
    for (std::size_t i = 0; i < ones.values().size(); ++i) EXPECT_NEAR(l.occupancy().values()[i], expected.q.values()[i], 1e-9);
    auto kkt = known_kkt(mdp, ones, expected, p.tau);
    EXPECT_LE(kkt.stationarity, 1e-6);
    EXPECT_LE(kkt.flow, 1e-6);
}

TEST(Oreps, EveryOccupancyFitsTheBudget) {
    Rng env(3), agent(4), costs(5);
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        auto mdp = random_mdp(5, 3, 10 + seed);
        auto cfg = config(AgentKind::Oreps, 0.2);
        cfg.eta = 2.0;
        OrepsLearner l(mdp, cfg, 30, false);
        const double tau = l.fast().diameter / 0.2;
        EXPECT_DOUBLE_EQ(l.params().tau, tau);
        for (std::size_t k = 1; k <= 30; ++k) {
            play(l, mdp, k, random_cost(5, 3, 0.2, costs), env, agent);
            EXPECT_LE(l.occupancy().total(), tau + 1e-6);
            EXPECT_LE(sup_norm(flow_residual(mdp, l.occupancy())), 1e-6);
            EXPECT_TRUE(l.stats().dual.converged);
        }
    }
}

TEST(Oreps, CombinationLockExcludesUniformPolicy) {
    auto env = fixture_a1(4, 2, 7);
    ASSERT_NEAR(fixture_a1_uniform_cost(4, 2), 30.0, 1e-12);
    OrepsLearner l(env.mdp, config(AgentKind::Oreps, 0.5), 100, false);
    ASSERT_LT(l.params().tau, 30.0);
    l.begin_episode(1);
    double deviation = 0.0;
    for (std::size_t s = 0; s < 4; ++s)
        for (std::size_t a = 0; a < 2; ++a) deviation = std::max(deviation, std::abs(l.policy()(s, a) - 0.5));
    EXPECT_GT(deviation, 1e-3);
    EXPECT_LE(hitting_times(env.mdp, l.policy()).at(0), l.params().tau + 1e-6);
}

TEST(Oreps, RepeatedCostKeepsFeasibility) {
    auto mdp = random_mdp(4, 2, 21);
    OrepsLearner l(mdp, config(AgentKind::Oreps, 0.25), 50, false);
    Rng env(1), agent(2);
    const auto c = CostFunction(4, 2, {0.3, 0.9, 0.25, 1.0, 0.6, 0.6, 0.8, 0.4});
    for (std::size_t k = 1; k <= 10; ++k) {
        play(l, mdp, k, c, env, agent);
        EXPECT_LE(l.occupancy().total(), l.params().tau + 1e-6);
    }
}

// ---------------------------------------------------------------- oreps2

TEST(Oreps2, UnreachedStateDefaultsToThresholdAndSwitches) {
    // s1 is never entered: every action of s0 goes to the goal
    Mdp mdp(2, 1, 0, {0.0, 0.0, 1.0, 0.0, 0.0, 1.0});
    OrepsLearner l(mdp, config(AgentKind::Oreps2), 10, true);
    l.begin_episode(1);
    ASSERT_LE(l.occupancy().state_mass(1), detail::kNegligibleMass);
    EXPECT_DOUBLE_EQ(l.times()[1], l.threshold());
    Rng rng(0);
    l.act(1, rng);
    EXPECT_EQ(l.mode(), Mode::Fast);
    EXPECT_EQ(l.stats().switch_step, std::optional<std::size_t>(0));
}

TEST(Oreps2, SwitchIffTimeReachesThreshold) {
    Rng costs(9);
    std::size_t switches = 0, stays = 0;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        auto mdp = random_mdp(5, 3, 40 + seed);
        auto cfg = config(AgentKind::Oreps2, 0.6);
        cfg.eta = 3.0;
        OrepsLearner l(mdp, cfg, 20, true);
        Rng env(seed), agent(seed + 100);
        for (std::size_t k = 1; k <= 8; ++k) {
            play(l, mdp, k, random_cost(5, 3, 0.6, costs), env, agent);
            for (std::size_t s = 0; s < 5; ++s) {
                OrepsLearner probe = l;
                probe.begin_episode(k + 1);
                Rng r(s);
                probe.act(s, r);
                const bool slow = probe.times()[s] >= probe.threshold();
                EXPECT_EQ(probe.mode(), slow ? Mode::Fast : Mode::Omd);
                (slow ? switches : stays) += 1;
            }
        }
    }
    EXPECT_GT(stays, 0u);
}

TEST(Oreps2, SwitchingStrategyIsFastAndNoCostlier) {
    Rng costs(19);
    std::size_t nontrivial = 0;
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const double c_min = 0.5;
        auto mdp = random_mdp(5, 3, 60 + seed);
        auto cfg = config(AgentKind::Oreps2, c_min);
        cfg.eta = 4.0;
        OrepsLearner l(mdp, cfg, 20, true);
        Rng env(seed), agent(seed + 7);
        for (std::size_t k = 1; k <= 6; ++k) {
            const auto c = random_cost(5, 3, c_min, costs);
            play(l, mdp, k, c, env, agent);
            std::vector<bool> bad(5);
            for (std::size_t s = 0; s < 5; ++s) bad[s] = l.times()[s] >= l.threshold();
            nontrivial += std::count(bad.begin(), bad.end(), true) > 0;
            auto sigma = switching_strategy_values(mdp, l.policy(), l.fast().policy, bad, c);
            for (std::size_t s = 0; s < 5; ++s) {
                ASSERT_TRUE(sigma.time.finite[s]);
                EXPECT_LE(sigma.time.values[s], l.threshold() + 1e-6);
            }
            const auto j_pi = evaluate_policy(mdp, l.policy(), c);
            EXPECT_LE(sigma.cost.values[0], j_pi.values[0] + 1e-8);
        }
    }
    EXPECT_GT(nontrivial, 0u);
}

TEST(Oreps2, SwitchIsPermanentWithinEpisode) {
    auto mdp = random_mdp(5, 3, 81);
    auto cfg = config(AgentKind::Oreps2, 0.6);
    cfg.eta = 4.0;
    OrepsLearner l(mdp, cfg, 30, true);
    Rng env(1), agent(2), costs(3);
    for (std::size_t k = 1; k <= 30; ++k) {
        l.begin_episode(k);
        bool left = false;
        std::size_t s = 0;
        while (s != mdp.goal()) {
            const std::size_t a = l.act(s, agent);
            if (left) { EXPECT_EQ(l.mode(), Mode::Fast); }
            left = left || l.mode() == Mode::Fast;
            s = env.categorical(mdp.row(s, a));
        }
        l.end_episode(random_cost(5, 3, 0.6, costs));
    }
}

// ---------------------------------------------------------------- oreps3

TEST(Oreps3, UnknownStateForcesLeastPlayedAction) {
    auto mdp = random_mdp(3, 3, 5);
    auto cfg = config(AgentKind::Oreps3);
    cfg.phi = 1000;
    Oreps3Learner l(mdp, cfg, 10, fast_policy_and_diameter(mdp).diameter);
    l.begin_episode(1);
    Rng rng(0);
    EXPECT_EQ(l.act(0, rng), 0u);
    EXPECT_EQ(l.mode(), Mode::Explore);
    l.observe(0, 0, 1);
    EXPECT_EQ(l.act(0, rng), 1u);
    l.observe(0, 1, 1);
    EXPECT_EQ(l.act(0, rng), 2u);
    EXPECT_EQ(l.stats().explore_steps, 3u);
}

TEST(Oreps3, DoublingStartsEpochButKeepsOccupancy) {
    auto mdp = random_mdp(3, 2, 6);
    auto cfg = config(AgentKind::Oreps3);
    cfg.phi = 1;
    Oreps3Learner l(mdp, cfg, 10, fast_policy_and_diameter(mdp).diameter);
    l.begin_episode(1);
    ASSERT_EQ(l.stats().epochs, 1u);
    const auto q_before = l.occupancy().values();
    const auto epoch_before = l.confidence().epoch();
    l.observe(0, 1, 2);  // first visit of a pair with N = 0 doubles immediately
    EXPECT_EQ(l.stats().epochs, 2u);
    EXPECT_EQ(l.confidence().epoch(), epoch_before + 1);
    EXPECT_EQ(l.counts().epoch_start_count(0, 1), 1u);
    EXPECT_EQ(l.occupancy().values(), q_before);
    EXPECT_NE(l.mode(), Mode::Omd);
}

/// Checks the per-step mode rules of the unknown-transition learner on live episodes.
void check_oreps3_modes(const Mdp& mdp, AgentConfig cfg, std::size_t episodes, std::uint64_t seed) {
    const double D = fast_policy_and_diameter(mdp).diameter;
    Oreps3Learner l(mdp, cfg, episodes, D);
    Rng env(seed), agent(seed + 1), costs(seed + 2);
    std::size_t total_steps = 0;
    for (std::size_t k = 1; k <= episodes; ++k) {
        l.begin_episode(k);
        Mode previous = l.mode();
        bool left_omd = previous != Mode::Omd;
        std::size_t s = mdp.initial_state(), steps = 0;
        while (s != mdp.goal()) {
            const bool known = l.tracker().is_known(s);
            const bool slow = !l.times().empty() && l.times()[s] >= l.threshold();
            const std::size_t a = l.act(s, agent);
            const Mode m = l.mode();
            if (left_omd) { ASSERT_NE(m, Mode::Omd) << "episode " << k << " returned to OMD"; }
            if (m == Mode::Omd) { EXPECT_TRUE(known && !slow); }
            if (previous == Mode::Omd && m == Mode::Fast) { EXPECT_TRUE(known && slow); }
            if (m != Mode::Omd) { EXPECT_EQ(m, known ? Mode::Fast : Mode::Explore); }
            if (m == Mode::Explore) { EXPECT_EQ(a, l.tracker().least_played_action(s)); }
            left_omd = left_omd || m != Mode::Omd;
            const std::size_t n = env.categorical(mdp.row(s, a));
            l.observe(s, a, n);
            previous = l.mode();
            left_omd = left_omd || previous != Mode::Omd;
            s = n;
            ASSERT_LT(++steps, 1'000'000u);
        }
        total_steps += steps;
        l.end_episode(random_cost(mdp.num_states(), mdp.num_actions(), cfg.c_min, costs));
    }
    const double SA = static_cast<double>(mdp.num_states() * mdp.num_actions());
    EXPECT_LE(static_cast<double>(l.stats().epochs),
              2.0 * SA * std::log2(static_cast<double>(total_steps)) + static_cast<double>(episodes) + SA);
}

TEST(Oreps3, ModeRulesHoldWithSmallThreshold) {
    auto cfg = config(AgentKind::Oreps3, 0.2);
    cfg.phi = 5;
    for (std::uint64_t seed = 0; seed < 3; ++seed) check_oreps3_modes(random_mdp(4, 2, 90 + seed), cfg, 60, seed);
}

TEST(Oreps3, ModeRulesHoldWithDefaultThreshold) {
    check_oreps3_modes(random_mdp(3, 2, 99), config(AgentKind::Oreps3, 0.5), 20, 4);
}

TEST(Oreps3, EmptyFeasibleSetFallsBackToFast) {
    // a known chain: the set is tight once counts accumulate, so tau below the chain length is infeasible
    auto mdp = make_chain(3).mdp;
    auto cfg = config(AgentKind::Oreps3, 1.0);
    cfg.phi = 1;
    Oreps3Learner l(mdp, cfg, 500, 1.0);  // understated diameter: tau = 1 < 3
    Rng env(1), agent(2);
    bool fell_back = false;
    for (std::size_t k = 1; k <= 500 && !fell_back; ++k) {
        play(l, mdp, k, CostFunction::constant(3, 1, 1.0), env, agent);
        for (const auto& e : l.stats().events) fell_back = fell_back || e.kind == AgentEvent::Kind::ProjectionFailed;
    }
    EXPECT_TRUE(fell_back);
    EXPECT_FALSE(l.stats().projected);
    EXPECT_EQ(l.stats().switch_step, std::optional<std::size_t>(0));
}

TEST(Oreps3, EstimatedDiameterOnChain) {
    auto mdp = make_chain(3).mdp;
    auto cfg = config(AgentKind::Oreps3, 0.5);
    cfg.estimate_diameter = true;
    cfg.estimation_episodes = 5;
    Oreps3Learner l(mdp, cfg, 20, 0.0);
    Rng env(0), agent(1);
    for (std::size_t k = 1; k <= 5; ++k) {
        EXPECT_TRUE(l.estimating());
        play(l, mdp, k, CostFunction::constant(3, 1, 1.0), env, agent);
        EXPECT_TRUE(l.stats().estimation);
    }
    EXPECT_FALSE(l.estimating());
    EXPECT_DOUBLE_EQ(l.diameter(), 30.0);
    EXPECT_DOUBLE_EQ(l.params().tau, 60.0);
    EXPECT_EQ(l.tracker().threshold(), 5u);
    EXPECT_NEAR(l.params().eta, default_eta(30.0, 3, 1, 0.5, 20, 3.0), 1e-15);
    for (std::size_t k = 6; k <= 20; ++k) play(l, mdp, k, CostFunction::constant(3, 1, 1.0), env, agent);
    // the estimation episodes already visit every state L times
    ASSERT_TRUE(l.state_diameter(0).has_value());
    EXPECT_DOUBLE_EQ(*l.state_diameter(0), 30.0);
    EXPECT_DOUBLE_EQ(*l.state_diameter(2), 10.0);
}

TEST(EstimateDiameter, DeterministicChainGivesTenTimesLength) {
    Rng rng(1);
    auto mdp = make_chain(3).mdp;
    EXPECT_DOUBLE_EQ(estimate_diameter(mdp, 7, 0, rng), 30.0);
    EXPECT_DOUBLE_EQ(estimate_diameter(mdp, 3, 1, rng), 20.0);
    EXPECT_GE(estimate_diameter(mdp, 3, 0, rng), fast_policy_and_diameter(mdp).times.at(0));
    EXPECT_THROW(estimate_diameter(mdp, 0, 0, rng), Error);
}

TEST(EstimateDiameter, UpperBoundsFastTimeOnRandomInstance) {
    Rng rng(2);
    auto mdp = random_mdp(4, 2, 12);
    EXPECT_GE(estimate_diameter(mdp, 50, 0, rng), fast_policy_and_diameter(mdp).times.at(0));
}

TEST(EstimateDiameter, StepCapAborts) {
    // the only action self-loops with probability 0.999
    Mdp slow(1, 1, 0, {0.999, 0.001});
    Rng rng(3);
    EXPECT_THROW(estimate_diameter(slow, 5, 0, rng, 0.1, 10), EstimationAborted);
}

// ---------------------------------------------------------------- wrappers

TEST(PerturbedLearner, FeedsClippedCosts) {
    auto mdp = random_mdp(3, 2, 31);
    auto cfg = config(AgentKind::Oreps, 0.1);
    cfg.eta = 1.0;
    cfg.epsilon_perturb = 0.3;
    auto wrapped = make_learner(mdp, cfg, 10, fast_policy_and_diameter(mdp).diameter);
    auto* perturbed = dynamic_cast<PerturbedLearner*>(wrapped.get());
    ASSERT_NE(perturbed, nullptr);
    OrepsLearner reference(mdp, cfg, 10, false);
    Rng env1(1), env2(1), a1(2), a2(2), costs(3);
    for (std::size_t k = 1; k <= 5; ++k) {
        const auto c = random_cost(3, 2, 0.0, costs);
        play(*wrapped, mdp, k, c, env1, a1);
        play(reference, mdp, k, perturb_costs(c, 0.3), env2, a2);
    }
    const auto& inner = dynamic_cast<OrepsLearner&>(perturbed->inner());
    EXPECT_EQ(inner.occupancy().values(), reference.occupancy().values());
    // tau follows the perturbed lower bound
    EXPECT_NEAR(inner.params().tau, fast_policy_and_diameter(mdp).diameter / 0.3, 1e-12);
}

}  // namespace
}  // namespace ssp
