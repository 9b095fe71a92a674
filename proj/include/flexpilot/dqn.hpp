#pragma once

#include "flexpilot/airgym.hpp"
#include "flexpilot/quantnet.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <vector>

namespace flexpilot::gym {

struct DqnHyper {
    std::size_t total_steps = 20000;
    double gamma = 0.99;
    std::size_t replay_capacity = 50000;
    std::size_t batch_size = 32;
    std::size_t target_sync_steps = 1000;
    double eps_start = 1.0;
    double eps_end = 0.05;
    double eps_fraction = 0.3; // of total_steps
    double learning_rate = 1e-4;
    double reward_scale = 0.003; // rewards are multiplied by this before regression
    std::size_t learning_starts = 1000;
    std::size_t train_every = 1;
    std::size_t zones = 4;
    double zone_threshold = 0.5;
    std::size_t zone_window = 100;
    double grad_clip = 10.0; // global gradient-norm cap, 0 disables
    std::uint64_t seed = 1;

    void validate() const;
    double epsilon_at(std::size_t step) const;
};

nlohmann::json to_json(const DqnHyper& h);
DqnHyper dqn_hyper_from_json(const nlohmann::json& j);

// Arena for a given episode index.
using ArenaFactory = std::function<Arena(std::uint64_t episode)>;

// Fresh obstacle layout per episode, derived from base.seed and the episode index.
ArenaFactory randomized_arenas(const ArenaSpec& base);

// Goal-distance cap of curriculum zone `zone` (nullopt for the last zone: whole arena).
std::optional<double> zone_cap(std::size_t zone, std::size_t zones, const ArenaSpec& spec);

struct EpisodeLog {
    std::size_t episode = 0;
    double reward = 0.0;
    double cumulative_reward = 0.0;
    double epsilon = 0.0;
    std::size_t zone = 0;
    bool success = false;
    std::size_t steps = 0;
};

void write_log_csv(std::ostream& os, const std::vector<EpisodeLog>& log);

class QNetwork;

// Online/target Q-network pair with replay and an Adam optimizer.
class DqnAgent {
public:
    DqnAgent(const quant::NetworkSpec& spec, const DqnHyper& hyper);
    ~DqnAgent();
    DqnAgent(DqnAgent&&) noexcept;

    std::size_t act(const Observation& obs, double epsilon, std::mt19937_64& rng) const;
    void remember(const Observation& obs, std::size_t action, double reward, const Observation& next, bool done);
    // One minibatch regression step; returns the loss. Throws DivergenceError on non-finite loss.
    double train_step(std::mt19937_64& rng);
    void sync_target();

    std::size_t replay_size() const;
    quant::WeightSet online_weights() const;
    quant::WeightSet target_weights() const;

private:
    struct Replay;
    quant::NetworkSpec spec_;
    DqnHyper hyper_;
    std::unique_ptr<QNetwork> online_;
    std::unique_ptr<QNetwork> target_;
    std::unique_ptr<Replay> replay_;
};

struct TrainResult {
    quant::WeightSet weights;
    std::vector<EpisodeLog> log;
    std::size_t steps = 0;
    std::size_t target_syncs = 0;
    std::size_t final_zone = 0;
};

// Requires input_dim 160 and 25 outputs.
TrainResult dqn_train(const ArenaFactory& arenas, const quant::NetworkSpec& spec, const DqnHyper& hyper);

using Policy = std::function<std::size_t(const Observation&, const AgentState&, std::mt19937_64&)>;

Policy greedy_policy(const quant::NetworkSpec& spec, const quant::WeightSet& w);
Policy random_policy();
Policy scripted_policy();

struct EvalStats {
    std::size_t episodes = 0;
    std::size_t successes = 0;
    std::size_t collisions = 0;
    std::size_t timeouts = 0;
    double success_rate = 0.0;
    double mean_steps = 0.0;
    double mean_reward = 0.0;
};

EvalStats evaluate_policy(const ArenaFactory& arenas, const Policy& policy, std::size_t episodes,
                          std::uint64_t seed);

// Greedy evaluation of trained weights on freshly randomized arenas.
EvalStats evaluate(const quant::WeightSet& w, const quant::NetworkSpec& spec, const ArenaSpec& arena,
                   std::size_t episodes = 100, std::uint64_t eval_seed = 0x5eed);

// Least-squares slope of y against its index.
double linear_slope(const std::vector<double>& y);

} // namespace flexpilot::gym
