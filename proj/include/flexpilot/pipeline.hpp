#pragma once

#include "flexpilot/airgym.hpp"
#include "flexpilot/costmodel.hpp"
#include "flexpilot/dqn.hpp"
#include "flexpilot/dse.hpp"
#include "flexpilot/quantnet.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace flexpilot::pipeline {

inline constexpr const char* kToolVersion = "0.3.0";

struct Variant {
    std::string name;
    std::vector<std::size_t> hidden;
    nlohmann::json hyper_patch = nlohmann::json::object(); // merged over the shared hyperparameters
};

struct PipelineSpec {
    int schema_version = 1;

    // task
    gym::ArenaSpec arena;
    double success_threshold = 0.7;
    std::size_t eval_episodes = 100;
    std::uint64_t eval_seed = 0x5eed;

    // training
    std::vector<Variant> variants = {{"toy", {64, 64}}};
    gym::DqnHyper hyper;
    std::size_t instances = 1; // per variant

    // accelerator
    dse::DesignSpace space;
    double tolerance = 1e-3;
    std::optional<double> tolerance_4bit; // unset: same as tolerance
    std::string coefficients_path; // empty: built-in defaults
    std::size_t calibration_episodes = 10;
    std::size_t verify_inputs = 100;

    std::string output_dir = "out";
    std::uint64_t seed = 1;
    unsigned jobs = 0; // 0: hardware concurrency

    void validate() const;
    unsigned effective_jobs() const;
    double tolerance_for(int bits) const;
    gym::DqnHyper hyper_for(const Variant& v) const;
};

nlohmann::json to_json(const PipelineSpec& s);
// Also accepts a run manifest, whose embedded "config" is used.
PipelineSpec spec_from_json(const nlohmann::json& j);
PipelineSpec load_spec(const std::filesystem::path& path);

// Independent stream seed for a (base, salt) pair.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);

// Salts of the held-out observation streams.
inline constexpr std::uint64_t kCalibrationSalt = 0xca1;
inline constexpr std::uint64_t kVerifySalt = 0x7e5;
// Upper bound on calibration samples.
inline constexpr std::size_t kCalibrationLimit = 100000;

// SHA-256 of the canonical JSON form, without output_dir and jobs.
std::string config_hash(const PipelineSpec& s);

struct PolicyRecord {
    std::string name;
    std::size_t variant = 0;
    std::uint64_t seed = 0;
    quant::NetworkSpec spec;
    std::optional<quant::WeightSet> weights; // empty when training failed
    std::vector<gym::EpisodeLog> log;
    std::string error;
    std::optional<gym::EvalStats> eval;
};

// One training instance per (variant, instance); failures are recorded, not thrown.
std::vector<PolicyRecord> train_all(const PipelineSpec& s);

void evaluate_all(const PipelineSpec& s, std::vector<PolicyRecord>& policies);

struct PolicyScore {
    std::string name;
    double success_rate = 0.0;
};

// Exit status of a training run: 0 when at least one instance produced weights.
int train_exit_code(const std::vector<PolicyRecord>& records);

// Keeps scores at or above the threshold, in input order.
std::vector<PolicyScore> filter_policies(const std::vector<PolicyScore>& scores, double threshold);

// Policy-input samples gathered from greedy rollouts on held-out arenas.
std::vector<std::vector<double>> collect_observations(const PipelineSpec& s, const quant::NetworkSpec& spec,
                                                      const quant::WeightSet& w, std::size_t episodes,
                                                      std::uint64_t seed, std::size_t limit);

struct QuantAttempt {
    int bits = 8;
    bool evaluated = false; // false when no candidate at this precision holds the network
    sim::VerifyReport report;
    quant::QuantizedNetwork net;
};

// Tries each precision of the space in ascending order; the caller keeps the passing ones.
std::vector<QuantAttempt> quantize_and_verify(const PipelineSpec& s, const quant::NetworkSpec& spec,
                                              const quant::WeightSet& w,
                                              const std::vector<std::vector<double>>& calibration,
                                              const std::vector<std::vector<double>>& verification);

struct Coefficients {
    cost::CostCoefficients values;
    std::string hash;
    std::string source;
};

Coefficients resolve_coefficients(const PipelineSpec& s);

struct StageTiming {
    std::string stage;
    double seconds = 0.0;
};

struct RunManifest {
    std::string tool_version = kToolVersion;
    std::string config_hash;
    nlohmann::json config;
    std::vector<std::pair<std::string, std::uint64_t>> seeds;
    std::vector<StageTiming> timings;
    std::vector<std::string> artifacts; // relative to the output directory
    std::string status = "running";
    std::string failed_stage;
    std::string message;
};

nlohmann::json to_json(const RunManifest& m);

struct PipelineResult {
    RunManifest manifest;
    std::optional<dse::DseReport> dse;
    std::string selected_policy;
    bool knee = false;
};

// Full flow: train, evaluate, filter, quantize and verify, explore, report.
// Every file written under output_dir is listed in the manifest.
PipelineResult run_pipeline(const PipelineSpec& s, std::ostream& log);

// Human-readable summary of a finished output directory.
std::string render_report(const nlohmann::json& report);

} // namespace flexpilot::pipeline
