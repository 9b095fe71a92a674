#include "flexpilot/airgym.hpp"
#include "flexpilot/dqn.hpp"
#include "flexpilot/error.hpp"

#include <doctest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace flexpilot;
using namespace flexpilot::gym;

namespace {

Arena empty_arena(double w = 25.0, double h = 25.0) {
    ArenaSpec s;
    s.width_m = w;
    s.height_m = h;
    return Arena{s, {}};
}

// Distance to the box walls along a direction, solved per wall.
double wall_distance(double w, double h, Vec2 p, double angle) {
    const double dx = std::cos(angle), dy = std::sin(angle);
    double best = std::numeric_limits<double>::infinity();
    auto consider = [&](double t, double other, double lo, double hi) {
        if (t >= 0 && other >= lo - 1e-9 && other <= hi + 1e-9)
            best = std::min(best, t);
    };
    if (dx != 0) {
        consider((0 - p.x) / dx, p.y + dy * (0 - p.x) / dx, 0, h);
        consider((w - p.x) / dx, p.y + dy * (w - p.x) / dx, 0, h);
    }
    if (dy != 0) {
        consider((0 - p.y) / dy, p.x + dx * (0 - p.y) / dy, 0, w);
        consider((h - p.y) / dy, p.x + dx * (h - p.y) / dy, 0, w);
    }
    return best;
}

AgentState at(Vec2 pos, double heading, Vec2 goal) {
    AgentState s;
    s.position = pos;
    s.heading = heading;
    s.goal = goal;
    return s;
}

std::size_t forward_index(double speed) {
    const auto t = ActionTable::standard();
    for (std::size_t i = 0; i < kActionCount; ++i)
        if (t.actions[i].kind == ActionKind::forward && std::abs(t.actions[i].value - speed) < 1e-12)
            return i;
    return kActionCount;
}

} // namespace

TEST_CASE("action table matches the fixed 25-entry layout") {
    const auto t = ActionTable::standard();
    CHECK(t.actions.size() == 25);
    CHECK(t.t_max == 1.0);
    CHECK(t.actions[0].value == 1.0);
    CHECK(t.actions[9].value == 5.0);
    for (int i = 0; i < 10; ++i)
        CHECK(t.actions[i].value == doctest::Approx(1.0 + 4.0 * i / 9.0));
    for (int i = 0; i < 5; ++i)
        CHECK(t.actions[10 + i].value == -(1.0 + i));
    const double right[] = {108, 54, 27, 13.5, 6.75};
    const double left[] = {-216, -108, -54, -27, -13.5};
    for (int i = 0; i < 5; ++i) {
        CHECK(t.actions[15 + i].kind == ActionKind::yaw);
        CHECK(t.actions[15 + i].value == right[i]);
        CHECK(t.actions[20 + i].value == left[i]);
    }
}

TEST_CASE("reward examples evaluated directly") {
    const RewardParams p;
    CHECK(reward(p, true, false, 0.0, 2.5, 1.0) == 999.0);
    CHECK(reward(p, false, true, 12.0, 2.5, 1.0) == -113.0);
    CHECK(reward(p, false, false, 10.0, 1.0, 1.0) == -12.5);
}

TEST_CASE("step: reach goal at full speed gives 999") {
    const Arena a = empty_arena();
    const auto r = step(a, at({5, 5}, 0.0, {7.5, 5}), forward_index(5.0));
    CHECK(r.outcome == Outcome::goal);
    CHECK(r.done);
    CHECK(r.reward == 999.0);
}

TEST_CASE("step: wall collision 12 m from the goal gives -113") {
    const Arena a = empty_arena();
    const auto r = step(a, at({2, 5}, std::numbers::pi, {12, 5}), forward_index(5.0));
    CHECK(r.outcome == Outcome::collision);
    CHECK(r.state.position.x == 0.0);
    CHECK(r.reward == -113.0);
}

TEST_CASE("step: non-terminal move at 1 m/s, 10 m from goal gives -12.5") {
    const Arena a = empty_arena();
    const auto r = step(a, at({5, 5}, 0.0, {16, 5}), forward_index(1.0));
    CHECK(r.outcome == Outcome::running);
    CHECK_FALSE(r.done);
    CHECK(r.state.position.x == 6.0);
    CHECK(r.reward == -12.5);
}

TEST_CASE("step: obstacle collision and goal precedence along the path") {
    Arena a = empty_arena();
    a.obstacles.push_back({8, 4, 9, 6});
    auto r = step(a, at({5, 5}, 0.0, {20, 5}), forward_index(5.0));
    CHECK(r.outcome == Outcome::collision);
    CHECK(r.state.position.x == doctest::Approx(8.0));
    // Goal in front of the obstacle is reached first.
    r = step(a, at({5, 5}, 0.0, {7, 5}), forward_index(5.0));
    CHECK(r.outcome == Outcome::goal);
    // Backward motion moves against the heading.
    r = step(a, at({5, 5}, 0.0, {20, 20}), 10);
    CHECK(r.state.position.x == doctest::Approx(4.0));
    CHECK(r.state.velocity.x == doctest::Approx(-1.0));
}

TEST_CASE("step: yaw rotates in place; positive table angles turn right") {
    const Arena a = empty_arena();
    const auto r = step(a, at({5, 5}, 0.0, {20, 20}), 15); // 108 deg right
    CHECK(r.state.position.x == 5.0);
    CHECK(r.state.heading == doctest::Approx(-108.0 * std::numbers::pi / 180));
    CHECK(r.state.speed == 0.0);
    CHECK(r.reward == doctest::Approx(-std::hypot(15.0, 15.0) - 2.5 - 1.0));
    const auto l = step(a, at({5, 5}, 0.0, {20, 20}), 20); // 216 deg left
    CHECK(l.state.heading == doctest::Approx(std::remainder(216.0 * std::numbers::pi / 180, 2 * std::numbers::pi)));
}

TEST_CASE("step: errors") {
    const Arena a = empty_arena();
    CHECK_THROWS_AS(step(a, at({5, 5}, 0, {9, 9}), 25), InvalidInput);
    auto done = at({5, 5}, 0, {9, 9});
    done.done = true;
    CHECK_THROWS_AS(step(a, done, 0), InvalidInput);
}

TEST_CASE("episodes time out at step 750 with the failure penalty") {
    const Arena a = empty_arena();
    AgentState s = at({12, 12}, 0, {20, 20});
    StepResult r;
    for (std::uint32_t i = 0; i < kMaxSteps; ++i) {
        REQUIRE_FALSE(s.done);
        r = step(a, s, 24); // small left turn forever
        s = r.state;
    }
    CHECK(r.outcome == Outcome::timeout);
    CHECK(r.done);
    CHECK(s.step_index == 750);
    CHECK(r.reward == doctest::Approx(-100 - std::hypot(8.0, 8.0) - 2.5 - 1));
}

TEST_CASE("reward bound and terminal exclusivity over random transitions") {
    std::mt19937_64 rng(1234);
    ArenaSpec spec;
    spec.width_m = spec.height_m = 10;
    const auto arenas = randomized_arenas(spec);
    std::size_t transitions = 0;
    for (std::uint64_t ep = 0; transitions < 100000; ++ep) {
        const Arena a = arenas(ep);
        AgentState s = reset(a, rng);
        for (;;) {
            const auto r = step(a, s, std::uniform_int_distribution<std::size_t>(0, 24)(rng));
            ++transitions;
            REQUIRE(r.reward <= 999.0);
            REQUIRE(r.state.step_index <= kMaxSteps);
            if (r.outcome == Outcome::goal)
                REQUIRE(r.reward > 0);
            else
                REQUIRE(r.reward < 0);
            if (r.done)
                break;
            s = r.state;
        }
    }
}

TEST_CASE("generate_env: determinism, counts and errors") {
    ArenaSpec s;
    s.seed = 42;
    const auto a = generate_env(s);
    const auto b = generate_env(s);
    CHECK(to_json(a).dump() == to_json(b).dump());
    CHECK(a.obstacles.size() >= 1);
    CHECK(a.obstacles.size() <= 5);

    s.min_obstacles = s.max_obstacles = 1;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        s.seed = seed;
        const auto one = generate_env(s);
        REQUIRE(one.obstacles.size() == 1);
        std::mt19937_64 rng(seed);
        const auto st = reset(one, rng);
        REQUIRE_FALSE(one.obstacles[0].contains(st.goal));
        REQUIRE_FALSE(one.obstacles[0].contains(st.position));
    }

    ArenaSpec crowded;
    crowded.width_m = crowded.height_m = 5;
    crowded.min_obstacles = crowded.max_obstacles = 5;
    crowded.obstacle_min_m = crowded.obstacle_max_m = 3;
    CHECK_THROWS_AS(generate_env(crowded), GenerationError);

    ArenaSpec bad;
    bad.max_obstacles = 6;
    CHECK_THROWS_AS(generate_env(bad), InvalidInput);
    bad = ArenaSpec{};
    bad.width_m = 0;
    CHECK_THROWS_AS(generate_env(bad), InvalidInput);

    const auto round = arena_spec_from_json(to_json(s));
    CHECK(round.seed == s.seed);
    CHECK(round.min_obstacles == 1);
}

TEST_CASE("goal positions are uniform over a 5x5 grid across 1000 seeds") {
    ArenaSpec s;
    std::array<int, 25> counts{};
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        s.seed = seed;
        const auto a = generate_env(s);
        std::mt19937_64 rng(seed);
        const auto st = reset(a, rng);
        const int cx = std::min(4, int(st.goal.x / 5.0)), cy = std::min(4, int(st.goal.y / 5.0));
        ++counts[cy * 5 + cx];
    }
    double chi2 = 0.0;
    for (int c : counts)
        chi2 += (c - 40.0) * (c - 40.0) / 40.0;
    const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(24), chi2));
    MESSAGE("chi2 = " << chi2 << ", p = " << p);
    CHECK(p > 0.01);
}

TEST_CASE("sense: empty arena rays equal analytic wall distances") {
    const Arena a = empty_arena();
    for (double heading : {0.0, 0.3, -2.0, 3.0}) {
        const auto st = at({12.5, 12.5}, heading, {1, 1});
        const auto obs = sense(a, st);
        for (std::size_t i = 0; i < kRayCount; ++i) {
            const double d = wall_distance(25, 25, st.position, heading + ray_offset(i));
            REQUIRE(obs[i] == doctest::Approx(std::min(d, 20.0) / 20.0).epsilon(1e-12));
        }
    }
    // Off-center with a wall closer than the clip range.
    const auto st = at({3, 20}, 1.0, {1, 1});
    const auto obs = sense(a, st);
    for (std::size_t i = 0; i < kRayCount; ++i)
        REQUIRE(obs[i] == doctest::Approx(std::min(wall_distance(25, 25, st.position, 1.0 + ray_offset(i)), 20.0) / 20.0));
}

TEST_CASE("sense: obstacle dead ahead at 5 m reads 0.25 on the center ray") {
    Arena a = empty_arena();
    a.obstacles.push_back({10, 11, 12, 14});
    const auto obs = sense(a, at({5, 12.5}, 0.0, {20, 20}));
    CHECK(ray_offset(kRayCount / 2) == 0.0);
    CHECK(obs[kRayCount / 2] == 0.25);
    CHECK(ray_offset(0) == doctest::Approx(-std::numbers::pi / 2));
}

TEST_CASE("observations stay within [-1, 1] and have 160 entries") {
    ArenaSpec spec;
    spec.width_m = spec.height_m = 10;
    const auto arenas = randomized_arenas(spec);
    std::mt19937_64 rng(3);
    for (std::uint64_t ep = 0; ep < 200; ++ep) {
        const Arena a = arenas(ep);
        AgentState s = reset(a, rng);
        for (;;) {
            const auto obs = sense(a, s);
            static_assert(std::tuple_size_v<Observation> == 160);
            for (double v : obs)
                REQUIRE((v >= -1.0 && v <= 1.0));
            const auto r = step(a, s, std::uniform_int_distribution<std::size_t>(0, 24)(rng));
            if (r.done)
                break;
            s = r.state;
        }
    }
}

TEST_CASE("trajectories are determined by seed and action sequence") {
    ArenaSpec spec;
    spec.seed = 9;
    auto run = [&] {
        const Arena a = generate_env(spec);
        std::mt19937_64 rng(5);
        AgentState s = reset(a, rng);
        std::vector<double> rewards;
        for (std::size_t k = 0; k < 40 && !s.done; ++k) {
            const auto r = step(a, s, (k * 7) % 25);
            rewards.push_back(r.reward);
            s = r.state;
        }
        return rewards;
    };
    CHECK(run() == run());
}

TEST_CASE("scripted goal-seeking policy succeeds everywhere in an empty arena") {
    ArenaSpec spec;
    const ArenaFactory empty = [spec](std::uint64_t) { return Arena{spec, {}}; };
    const auto st = evaluate_policy(empty, scripted_policy(), 100, 17);
    CHECK(st.success_rate == 1.0);
}

TEST_CASE("random policy rarely succeeds among five obstacles") {
    ArenaSpec spec;
    spec.min_obstacles = spec.max_obstacles = 5;
    const auto st = evaluate_policy(randomized_arenas(spec), random_policy(), 200, 4);
    MESSAGE("random policy success rate " << st.success_rate);
    CHECK(st.success_rate < 0.2);
}

TEST_CASE("curriculum caps grow and end uncapped") {
    ArenaSpec spec;
    spec.width_m = spec.height_m = 10;
    double prev = 0.0;
    for (std::size_t z = 0; z + 1 < 4; ++z) {
        const auto cap = zone_cap(z, 4, spec);
        REQUIRE(cap.has_value());
        CHECK(*cap > prev);
        prev = *cap;
    }
    CHECK_FALSE(zone_cap(3, 4, spec).has_value());

    const Arena a = generate_env(spec);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        const auto s = reset(a, rng, *zone_cap(0, 4, spec));
        REQUIRE(std::hypot(s.goal.x - s.position.x, s.goal.y - s.position.y) <= *zone_cap(0, 4, spec));
    }
}

TEST_CASE("dqn: epsilon schedule") {
    DqnHyper h;
    h.total_steps = 1000;
    CHECK(h.epsilon_at(0) == 1.0);
    CHECK(h.epsilon_at(150) == doctest::Approx(0.525));
    CHECK(h.epsilon_at(300) == 0.05);
    CHECK(h.epsilon_at(999) == 0.05);
}

TEST_CASE("dqn: learning rate 0 leaves weights unchanged") {
    const auto spec = quant::NetworkSpec::mlp(160, {16}, 25);
    DqnHyper h;
    h.total_steps = 600;
    h.learning_starts = 50;
    h.learning_rate = 0.0;
    h.target_sync_steps = 100;
    h.seed = 3;
    ArenaSpec arena;
    arena.width_m = arena.height_m = 10;
    const auto before = DqnAgent(spec, h).online_weights();
    const auto out = dqn_train(randomized_arenas(arena), spec, h);
    for (std::size_t l = 0; l < before.layers.size(); ++l) {
        CHECK(out.weights.layers[l].weights == before.layers[l].weights);
        CHECK(out.weights.layers[l].bias == before.layers[l].bias);
    }
    CHECK(out.steps >= 600);
    CHECK(out.target_syncs == out.steps / 100);
}

TEST_CASE("dqn: target sync copies the online weights bit for bit") {
    const auto spec = quant::NetworkSpec::mlp(160, {16}, 25);
    DqnHyper h;
    h.batch_size = 4;
    h.replay_capacity = 64;
    h.learning_rate = 1e-2;
    DqnAgent agent(spec, h);
    std::mt19937_64 rng(1);
    Observation o{};
    for (int i = 0; i < 10; ++i) {
        o[static_cast<std::size_t>(i)] = 0.1 * i;
        agent.remember(o, static_cast<std::size_t>(i), -1.0, o, i % 3 == 0);
    }
    for (int i = 0; i < 5; ++i)
        agent.train_step(rng);
    CHECK(agent.online_weights().layers[0].weights != agent.target_weights().layers[0].weights);
    agent.sync_target();
    const auto on = agent.online_weights(), tg = agent.target_weights();
    for (std::size_t l = 0; l < on.layers.size(); ++l) {
        CHECK(on.layers[l].weights == tg.layers[l].weights);
        CHECK(on.layers[l].bias == tg.layers[l].bias);
    }
    CHECK(agent.replay_size() == 10);
}

TEST_CASE("dqn: divergence guard trips on an exploding optimizer") {
    const auto spec = quant::NetworkSpec::mlp(160, {16}, 25);
    DqnHyper h;
    h.total_steps = 3000;
    h.learning_starts = 32;
    h.learning_rate = 1e30;
    h.grad_clip = 0.0;
    ArenaSpec arena;
    arena.width_m = arena.height_m = 10;
    CHECK_THROWS_AS(dqn_train(randomized_arenas(arena), spec, h), DivergenceError);
}

TEST_CASE("dqn: shape and hyperparameter validation") {
    DqnHyper h;
    CHECK_THROWS_AS(DqnAgent(quant::NetworkSpec::mlp(100, {8}, 25), h), ShapeError);
    CHECK_THROWS_AS(DqnAgent(quant::NetworkSpec::mlp(160, {8}, 24), h), ShapeError);
    h.gamma = 1.5;
    CHECK_THROWS_AS(DqnAgent(quant::NetworkSpec::mlp(160, {8}, 25), h), InvalidInput);
    const auto back = dqn_hyper_from_json(to_json(DqnHyper{}));
    CHECK(back.replay_capacity == 50000);
    CHECK(back.target_sync_steps == 1000);
}

TEST_CASE("dqn: short run logs episodes with non-decreasing zones and a stable CSV") {
    const auto spec = quant::NetworkSpec::mlp(160, {32}, 25);
    DqnHyper h;
    h.total_steps = 3000;
    h.learning_starts = 200;
    h.zone_window = 20;
    h.seed = 11;
    ArenaSpec arena;
    arena.width_m = arena.height_m = 10;
    arena.max_obstacles = 3;
    const auto a = dqn_train(randomized_arenas(arena), spec, h);
    const auto b = dqn_train(randomized_arenas(arena), spec, h);
    REQUIRE_FALSE(a.log.empty());
    double cum = 0.0;
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        cum += a.log[i].reward;
        CHECK(a.log[i].cumulative_reward == doctest::Approx(cum));
        if (i > 0)
            REQUIRE(a.log[i].zone >= a.log[i - 1].zone);
    }
    std::ostringstream sa, sb;
    write_log_csv(sa, a.log);
    write_log_csv(sb, b.log);
    CHECK(sa.str() == sb.str());
    CHECK(sa.str().rfind("episode,reward,cumulative_reward,epsilon,zone,success\n", 0) == 0);

    const auto e1 = evaluate(a.weights, spec, arena, 20);
    const auto e2 = evaluate(a.weights, spec, arena, 20);
    CHECK(e1.success_rate == e2.success_rate);
    CHECK(e1.successes + e1.collisions + e1.timeouts == 20);
}

TEST_CASE("linear_slope") {
    CHECK(linear_slope({1, 3, 5, 7}) == doctest::Approx(2.0));
    CHECK(linear_slope({4, 4, 4}) == 0.0);
    CHECK(linear_slope({1}) == 0.0);
}
