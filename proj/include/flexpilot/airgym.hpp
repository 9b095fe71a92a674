#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

namespace flexpilot::gym {

inline constexpr std::size_t kRayCount = 152;
inline constexpr std::size_t kObservationSize = 160;
inline constexpr std::size_t kActionCount = 25;
inline constexpr std::uint32_t kMaxSteps = 750;
inline constexpr double kRayRange = 20.0;
inline constexpr double kMaxSpeed = 5.0;  // largest commanded speed, for normalization
inline constexpr double kVMax = 2.5;      // speed ceiling used by the reward

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// Axis-aligned obstacle footprint.
struct Rect {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

    bool contains(Vec2 p) const { return p.x > x0 && p.x < x1 && p.y > y0 && p.y < y1; }
};

struct ArenaSpec {
    double width_m = 25.0;
    double height_m = 25.0;
    int min_obstacles = 1;
    int max_obstacles = 5;
    double obstacle_min_m = 1.0; // side length range
    double obstacle_max_m = 4.0;
    double obstacle_gap_m = 0.5; // free space kept between obstacles
    double goal_radius_m = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
    double diagonal() const;
};

nlohmann::json to_json(const ArenaSpec& s);
ArenaSpec arena_spec_from_json(const nlohmann::json& j);

struct Arena {
    ArenaSpec spec;
    std::vector<Rect> obstacles;

    bool is_free(Vec2 p, double clearance = 0.0) const;
};

nlohmann::json to_json(const Arena& a);

// Obstacle count drawn from [min_obstacles, max_obstacles]; rectangles rejection-sampled
// inside the arena without overlapping. GenerationError after 10,000 failed draws.
Arena generate_env(const ArenaSpec& spec);

struct AgentState {
    Vec2 position;
    double heading = 0.0;  // rad, counter-clockwise from +x
    Vec2 velocity;         // last commanded motion, m/s
    double speed = 0.0;    // |velocity|
    std::uint32_t step_index = 0;
    Vec2 goal;
    bool done = false;
};

// Random start and goal, both outside obstacles. With `max_goal_distance`, the goal lies
// within that distance of the start (curriculum zones).
AgentState reset(const Arena& arena, std::mt19937_64& rng,
                 std::optional<double> max_goal_distance = std::nullopt);

using Observation = std::array<double, kObservationSize>;

// Distance along a ray to the first obstacle or wall (unbounded; caller clips).
double cast_ray(const Arena& arena, Vec2 origin, double angle);

// Heading offset of ray i; ray kRayCount / 2 points straight ahead.
double ray_offset(std::size_t i);

Observation sense(const Arena& arena, const AgentState& state);

enum class ActionKind { forward, backward, yaw };

struct Action {
    ActionKind kind = ActionKind::forward;
    double value = 0.0; // signed speed (m/s) or heading change (deg, positive turns right)
};

struct ActionTable {
    std::array<Action, kActionCount> actions;
    double t_max = 1.0;

    static ActionTable standard();
};

struct RewardParams {
    double goal_bonus = 1000.0;
    double failure_penalty = 100.0;
    double step_penalty = 1.0;
    double delta = 1.0;
    double v_max = kVMax;
};

// r = goal_bonus*alpha - failure_penalty*beta - d_goal - delta*(v_max - v_now)*t_max - step_penalty
double reward(const RewardParams& p, bool alpha, bool beta, double d_goal, double v_now, double t_max);

enum class Outcome { running, goal, collision, timeout };

std::string to_string(Outcome o);

struct StepResult {
    AgentState state;
    double reward = 0.0;
    bool done = false;
    Outcome outcome = Outcome::running;
};

StepResult step(const Arena& arena, const AgentState& state, std::size_t action_idx,
                const ActionTable& table = ActionTable::standard(),
                const RewardParams& params = RewardParams{});

// Greedy heuristic: turn toward the goal, then fly at it.
std::size_t goal_seeking_action(const AgentState& state, const ActionTable& table = ActionTable::standard());

} // namespace flexpilot::gym
