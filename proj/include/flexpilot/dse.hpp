#pragma once

#include "flexpilot/costmodel.hpp"
#include "flexpilot/flexsim.hpp"
#include "flexpilot/quantnet.hpp"

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace flexpilot::dse {

enum class Objective { latency_power, latency_area };

std::string to_string(Objective o);

struct DesignSpace {
    std::vector<int> pe_choices = {2, 4, 8, 16, 32};
    std::vector<int> lane_choices = {4, 8, 16};
    std::vector<int> precision_choices = {4, 8};
    std::vector<Objective> objectives = {Objective::latency_power, Objective::latency_area};
    double clock_mhz = 300.0;

    void validate() const;
};

struct Candidate {
    sim::AcceleratorConfig config;
    bool feasible = true;
    std::string reject_reason;
};

// Cartesian product of the choices with auto-sized weight buffers, ordered by config id.
// Candidates the network cannot fit are kept and carry their rejection reason.
std::vector<Candidate> enumerate(const DesignSpace& space, const quant::NetworkSpec& spec);

struct Point {
    double x = 0.0;
    double y = 0.0;
};

// Membership flags of the minimize-both Pareto front. Exact duplicates are all kept.
std::vector<bool> pareto_front(std::span<const Point> points);

// Index (into `front`) of the knee: after min-max normalization, the member farthest from the
// chord joining the two extreme members on the side of the ideal point. Ties go to lower x.
std::size_t knee(std::span<const Point> front);

struct ParetoPoint {
    Candidate candidate;
    std::optional<cost::CandidateMetrics> metrics; // feasible candidates only
    std::uint64_t simulated_cycles = 0;
    bool pareto_lat_power = false;
    bool pareto_lat_area = false;
    bool knee_lat_power = false;
    bool knee_lat_area = false;
};

struct DseOptions {
    double tolerance = 1e-3;
    unsigned jobs = 1;
    std::string coefficients_hash;
};

struct PrecisionVerification {
    int bits = 8;
    sim::VerifyReport report;
    bool evaluated = false; // false when no candidate at this precision can hold the network
};

struct DseReport {
    std::vector<ParetoPoint> points;
    std::vector<PrecisionVerification> verification;
    cost::CostCoefficients coefficients;
    std::string coefficients_hash;
    std::optional<std::size_t> knee_lat_power; // index into points
    std::optional<std::size_t> knee_lat_area;
};

// Quantizes the network at every precision of the space, verifies each against the
// floating-point reference (VerificationFailed when outside tolerance), simulates and costs
// every feasible candidate, then marks fronts and knees per objective pair.
DseReport run_dse(const DesignSpace& space, const quant::NetworkSpec& spec, const quant::WeightSet& w,
                  const std::vector<std::vector<double>>& calibration_inputs,
                  const std::vector<std::vector<double>>& verify_inputs,
                  const cost::CostCoefficients& coefficients, const DseOptions& options);

// Same as run_dse, but with networks that were already quantized (and verified) upstream.
DseReport run_dse_quantized(const DesignSpace& space, const std::vector<quant::QuantizedNetwork>& nets,
                            const std::vector<std::vector<double>>& probe_inputs,
                            const cost::CostCoefficients& coefficients, const DseOptions& options);

// Results CSV with the fixed column order documented in the README.
void write_results_csv(std::ostream& os, const DseReport& report);

// Standalone SVG scatter (latency vs power or area), front members and the knee highlighted.
std::string render_svg(const DseReport& report, Objective objective);

} // namespace flexpilot::dse
