#include "flexpilot/airgym.hpp"

#include "flexpilot/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace flexpilot::gym {

namespace {

constexpr int kMaxAttempts = 10000;
constexpr double kStartClearance = 0.5;
constexpr double kInf = std::numeric_limits<double>::infinity();

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

double wrap_angle(double a) {
    a = std::remainder(a, 2.0 * std::numbers::pi);
    return a;
}

double dist(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

bool overlaps(const Rect& a, const Rect& b, double gap) {
    return a.x0 < b.x1 + gap && b.x0 < a.x1 + gap && a.y0 < b.y1 + gap && b.y0 < a.y1 + gap;
}

// Entry distance of a ray into a rectangle (slab test), or infinity.
double ray_rect(Vec2 o, Vec2 d, const Rect& r) {
    double t0 = -kInf, t1 = kInf;
    const double lo[2] = {r.x0, r.y0}, hi[2] = {r.x1, r.y1}, p[2] = {o.x, o.y}, v[2] = {d.x, d.y};
    for (int k = 0; k < 2; ++k) {
        if (v[k] == 0.0) {
            if (p[k] < lo[k] || p[k] > hi[k])
                return kInf;
            continue;
        }
        double a = (lo[k] - p[k]) / v[k], b = (hi[k] - p[k]) / v[k];
        if (a > b)
            std::swap(a, b);
        t0 = std::max(t0, a);
        t1 = std::min(t1, b);
    }
    if (t1 < std::max(t0, 0.0))
        return kInf;
    return std::max(t0, 0.0);
}

// Smallest s in [0, len] with |o + d*s - g| <= radius, if any.
std::optional<double> goal_contact(Vec2 o, Vec2 d, double len, Vec2 g, double radius) {
    const double fx = o.x - g.x, fy = o.y - g.y;
    const double c = fx * fx + fy * fy - radius * radius;
    if (c <= 0.0)
        return 0.0;
    const double b = fx * d.x + fy * d.y;
    const double disc = b * b - c;
    if (disc < 0.0)
        return std::nullopt;
    const double s = -b - std::sqrt(disc);
    if (s < 0.0 || s > len)
        return std::nullopt;
    return s;
}

} // namespace

void ArenaSpec::validate() const {
    if (!(width_m > 0.0) || !(height_m > 0.0))
        throw InvalidInput("arena dimensions must be positive");
    if (min_obstacles < 1 || max_obstacles > 5 || min_obstacles > max_obstacles)
        throw InvalidInput("obstacle count range must lie within [1, 5]");
    if (!(obstacle_min_m > 0.0) || obstacle_max_m < obstacle_min_m)
        throw InvalidInput("obstacle size range is invalid");
    if (obstacle_gap_m < 0.0)
        throw InvalidInput("obstacle gap must be non-negative");
    if (!(goal_radius_m > 0.0))
        throw InvalidInput("goal radius must be positive");
}

double ArenaSpec::diagonal() const { return std::hypot(width_m, height_m); }

nlohmann::json to_json(const ArenaSpec& s) {
    return {{"width_m", s.width_m},
            {"height_m", s.height_m},
            {"min_obstacles", s.min_obstacles},
            {"max_obstacles", s.max_obstacles},
            {"obstacle_min_m", s.obstacle_min_m},
            {"obstacle_max_m", s.obstacle_max_m},
            {"obstacle_gap_m", s.obstacle_gap_m},
            {"goal_radius_m", s.goal_radius_m},
            {"seed", s.seed}};
}

ArenaSpec arena_spec_from_json(const nlohmann::json& j) {
    ArenaSpec s;
    try {
        s.width_m = j.value("width_m", s.width_m);
        s.height_m = j.value("height_m", s.height_m);
        s.min_obstacles = j.value("min_obstacles", s.min_obstacles);
        s.max_obstacles = j.value("max_obstacles", s.max_obstacles);
        s.obstacle_min_m = j.value("obstacle_min_m", s.obstacle_min_m);
        s.obstacle_max_m = j.value("obstacle_max_m", s.obstacle_max_m);
        s.obstacle_gap_m = j.value("obstacle_gap_m", s.obstacle_gap_m);
        s.goal_radius_m = j.value("goal_radius_m", s.goal_radius_m);
        s.seed = j.value("seed", s.seed);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed arena spec: ") + e.what());
    }
    s.validate();
    return s;
}

bool Arena::is_free(Vec2 p, double clearance) const {
    if (p.x <= clearance || p.y <= clearance || p.x >= spec.width_m - clearance ||
        p.y >= spec.height_m - clearance)
        return false;
    for (const auto& r : obstacles) {
        const Rect grown{r.x0 - clearance, r.y0 - clearance, r.x1 + clearance, r.y1 + clearance};
        if (p.x >= grown.x0 && p.x <= grown.x1 && p.y >= grown.y0 && p.y <= grown.y1)
            return false;
    }
    return true;
}

nlohmann::json to_json(const Arena& a) {
    nlohmann::json obs = nlohmann::json::array();
    for (const auto& r : a.obstacles)
        obs.push_back({r.x0, r.y0, r.x1, r.y1});
    return {{"spec", to_json(a.spec)}, {"obstacles", obs}};
}

Arena generate_env(const ArenaSpec& spec) {
    spec.validate();
    Arena arena{spec, {}};
    std::mt19937_64 rng(spec.seed);
    const int count = std::uniform_int_distribution<int>(spec.min_obstacles, spec.max_obstacles)(rng);
    std::uniform_real_distribution<double> side(spec.obstacle_min_m, spec.obstacle_max_m);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int k = 0; k < count; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
            const double w = side(rng), h = side(rng);
            const double x = unit(rng) * (spec.width_m - w), y = unit(rng) * (spec.height_m - h);
            if (w > spec.width_m || h > spec.height_m)
                continue;
            const Rect r{x, y, x + w, y + h};
            placed = std::none_of(arena.obstacles.begin(), arena.obstacles.end(),
                                  [&](const Rect& o) { return overlaps(r, o, spec.obstacle_gap_m); });
            if (placed)
                arena.obstacles.push_back(r);
        }
        if (!placed)
            throw GenerationError("could not place obstacle " + std::to_string(k) + " after " +
                                  std::to_string(kMaxAttempts) + " attempts");
    }
    return arena;
}

AgentState reset(const Arena& arena, std::mt19937_64& rng, std::optional<double> max_goal_distance) {
    const auto& s = arena.spec;
    std::uniform_real_distribution<double> ux(0.0, s.width_m), uy(0.0, s.height_m), unit(0.0, 1.0);
    AgentState st;
    bool ok = false;
    for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
        st.position = {ux(rng), uy(rng)};
        ok = arena.is_free(st.position, kStartClearance);
    }
    if (!ok)
        throw GenerationError("no free start position");

    ok = false;
    for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
        if (max_goal_distance) {
            const double r = *max_goal_distance * std::sqrt(unit(rng));
            const double a = 2.0 * std::numbers::pi * unit(rng);
            st.goal = {st.position.x + r * std::cos(a), st.position.y + r * std::sin(a)};
        } else {
            st.goal = {ux(rng), uy(rng)};
        }
        ok = arena.is_free(st.goal) && dist(st.goal, st.position) > s.goal_radius_m;
    }
    if (!ok)
        throw GenerationError("no free goal position");
    st.heading = wrap_angle(2.0 * std::numbers::pi * unit(rng));
    return st;
}

double cast_ray(const Arena& arena, Vec2 o, double angle) {
    const Vec2 d{std::cos(angle), std::sin(angle)};
    double t = kInf;
    if (d.x > 0)
        t = std::min(t, (arena.spec.width_m - o.x) / d.x);
    else if (d.x < 0)
        t = std::min(t, -o.x / d.x);
    if (d.y > 0)
        t = std::min(t, (arena.spec.height_m - o.y) / d.y);
    else if (d.y < 0)
        t = std::min(t, -o.y / d.y);
    for (const auto& r : arena.obstacles)
        t = std::min(t, ray_rect(o, d, r));
    return std::max(t, 0.0);
}

double ray_offset(std::size_t i) {
    return (static_cast<double>(i) - static_cast<double>(kRayCount / 2)) * std::numbers::pi /
           static_cast<double>(kRayCount);
}

Observation sense(const Arena& arena, const AgentState& st) {
    Observation obs{};
    for (std::size_t i = 0; i < kRayCount; ++i)
        obs[i] = std::min(cast_ray(arena, st.position, st.heading + ray_offset(i)), kRayRange) / kRayRange;
    std::size_t k = kRayCount;
    obs[k++] = std::clamp(st.velocity.x / kMaxSpeed, -1.0, 1.0);
    obs[k++] = std::clamp(st.velocity.y / kMaxSpeed, -1.0, 1.0);
    obs[k++] = std::sin(st.heading);
    obs[k++] = std::cos(st.heading);
    const double bearing = std::atan2(st.goal.y - st.position.y, st.goal.x - st.position.x) - st.heading;
    obs[k++] = std::min(dist(st.position, st.goal) / arena.spec.diagonal(), 1.0);
    obs[k++] = std::sin(bearing);
    obs[k++] = std::cos(bearing);
    obs[k++] = static_cast<double>(kMaxSteps - std::min(st.step_index, kMaxSteps)) / kMaxSteps;
    return obs;
}

ActionTable ActionTable::standard() {
    ActionTable t;
    std::size_t k = 0;
    for (int i = 0; i < 10; ++i)
        t.actions[k++] = {ActionKind::forward, 1.0 + 4.0 * i / 9.0};
    for (int i = 0; i < 5; ++i)
        t.actions[k++] = {ActionKind::backward, -(1.0 + i)};
    for (double a : {108.0, 54.0, 27.0, 13.5, 6.75})
        t.actions[k++] = {ActionKind::yaw, a};
    for (double a : {-216.0, -108.0, -54.0, -27.0, -13.5})
        t.actions[k++] = {ActionKind::yaw, a};
    return t;
}

double reward(const RewardParams& p, bool alpha, bool beta, double d_goal, double v_now, double t_max) {
    const double d_c = (p.v_max - std::min(v_now, p.v_max)) * t_max;
    return p.goal_bonus * (alpha ? 1.0 : 0.0) - p.failure_penalty * (beta ? 1.0 : 0.0) - d_goal -
           d_c * p.delta - p.step_penalty;
}

std::string to_string(Outcome o) {
    switch (o) {
    case Outcome::goal:
        return "goal";
    case Outcome::collision:
        return "collision";
    case Outcome::timeout:
        return "timeout";
    case Outcome::running:
        break;
    }
    return "running";
}

StepResult step(const Arena& arena, const AgentState& state, std::size_t action_idx,
                const ActionTable& table, const RewardParams& params) {
    if (action_idx >= kActionCount)
        throw InvalidInput("action index " + std::to_string(action_idx) + " out of range");
    if (state.done)
        throw InvalidInput("step on a finished episode");

    StepResult res;
    AgentState& next = res.state;
    next = state;
    ++next.step_index;
    const Action& act = table.actions[action_idx];
    bool goal = false, crash = false;
    double v_now = 0.0;

    if (act.kind == ActionKind::yaw) {
        next.heading = wrap_angle(state.heading - deg2rad(act.value));
        next.velocity = {0.0, 0.0};
        next.speed = 0.0;
        goal = dist(state.position, state.goal) <= arena.spec.goal_radius_m;
    } else {
        const double v = act.value;
        const double move_angle = v >= 0 ? state.heading : state.heading + std::numbers::pi;
        const Vec2 dir{std::cos(move_angle), std::sin(move_angle)};
        const double len = std::abs(v) * table.t_max;
        const double wall = cast_ray(arena, state.position, move_angle);
        const auto contact = goal_contact(state.position, dir, len, state.goal, arena.spec.goal_radius_m);
        double travelled = len;
        if (contact && *contact <= wall) {
            goal = true;
            travelled = *contact;
        } else if (wall < len) {
            crash = true;
            travelled = wall;
        }
        next.position = {state.position.x + dir.x * travelled, state.position.y + dir.y * travelled};
        next.velocity = {dir.x * std::abs(v), dir.y * std::abs(v)};
        next.speed = std::abs(v);
        v_now = std::min(std::abs(v), params.v_max);
    }

    const bool timeout = !goal && !crash && next.step_index >= kMaxSteps;
    const bool beta = crash || timeout;
    const double d_goal = goal ? 0.0 : dist(next.position, next.goal);
    res.reward = reward(params, goal, beta, d_goal, v_now, table.t_max);
    res.outcome = goal ? Outcome::goal : crash ? Outcome::collision : timeout ? Outcome::timeout : Outcome::running;
    res.done = res.outcome != Outcome::running;
    next.done = res.done;
    return res;
}

std::size_t goal_seeking_action(const AgentState& st, const ActionTable& table) {
    const double bearing =
        wrap_angle(std::atan2(st.goal.y - st.position.y, st.goal.x - st.position.x) - st.heading);
    std::size_t best_turn = kActionCount;
    double best_err = std::abs(bearing);
    for (std::size_t i = 0; i < kActionCount; ++i) {
        const auto& a = table.actions[i];
        if (a.kind != ActionKind::yaw)
            continue;
        const double err = std::abs(wrap_angle(bearing + deg2rad(a.value)));
        if (err < best_err - 1e-12) {
            best_err = err;
            best_turn = i;
        }
    }
    if (best_turn != kActionCount && std::abs(bearing) > deg2rad(6.75 / 2))
        return best_turn;

    const double d = dist(st.position, st.goal);
    std::size_t best = 0;
    for (std::size_t i = 0; i < kActionCount; ++i) {
        const auto& a = table.actions[i];
        if (a.kind == ActionKind::forward &&
            std::abs(a.value * table.t_max - d) < std::abs(table.actions[best].value * table.t_max - d))
            best = i;
    }
    return best;
}

} // namespace flexpilot::gym
