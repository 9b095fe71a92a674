#pragma once

#include "flexpilot/flexsim.hpp"
#include "flexpilot/quantnet.hpp"

#include <filesystem>
#include <string>

#include <json.hpp>

namespace flexpilot::cost {

// Affine power/area model, referenced to a 300 MHz clock:
//   power = base + per_pe * P + per_lane * P * L * (bits / 8) + per_kb * P * (weight_kb + input_kb)
// Dynamic terms (per_pe, per_lane) scale linearly with clock / reference_clock.
// The global buffer is a fixed part of the base term.
struct CostCoefficients {
    int schema_version = 1;
    double reference_clock_mhz = 300.0;

    double power_base_w = 0.0;
    double power_per_pe_w = 0.0;
    double power_per_lane_w = 0.0;
    double power_per_kb_w = 0.0;

    double area_base_mm2 = 0.0;
    double area_per_pe_mm2 = 0.0;
    double area_per_lane_mm2 = 0.0;
    double area_per_kb_mm2 = 0.0;

    // Frozen calibration shipped with the toolkit (also in data/default_coefficients.json).
    static CostCoefficients defaults();

    void validate() const;
};

nlohmann::json to_json(const CostCoefficients& c);
CostCoefficients from_json(const nlohmann::json& j);
CostCoefficients load(const std::filesystem::path& path);
void save(const std::filesystem::path& path, const CostCoefficients& c);

enum class VehicleClass { standard, micro, nano, pico, none };

std::string to_string(VehicleClass v);

// Smallest vehicle class whose power budget the candidate fits:
// <= 0.1 W pico, <= 5 W nano, <= 50 W micro, otherwise standard.
VehicleClass vehicle_class(double power_w);

// Per-PE weight buffer (kB) sized for a network: max per-PE bytes rounded up to a
// power of two within [16, 1024]. May still be too small when the network cannot fit.
std::size_t auto_weight_buffer_kb(const quant::NetworkSpec& spec, int num_pes, int precision_bits);

// Total cycles from the closed-form model divided by the clock. Requires the network to fit.
double latency_us(const sim::AcceleratorConfig& cfg, const quant::NetworkSpec& spec);

// Same closed-form estimate without the residency check.
double estimated_latency_us(const sim::AcceleratorConfig& cfg, const quant::NetworkSpec& spec);

double power_w(const sim::AcceleratorConfig& cfg, const CostCoefficients& c);
double area_mm2(const sim::AcceleratorConfig& cfg, const CostCoefficients& c);

struct CandidateMetrics {
    std::string config_id;
    double latency_us = 0.0;
    double power_w = 0.0;
    double area_mm2 = 0.0;
    double energy_uj = 0.0; // power_w * latency_us
    VehicleClass vehicle_class = VehicleClass::none;
};

// Costs a candidate that fits the network (throws CapacityExceeded otherwise).
CandidateMetrics evaluate(const sim::AcceleratorConfig& cfg, const quant::NetworkSpec& spec,
                          const CostCoefficients& c);

// Costs a candidate from the analytical model alone, ignoring weight residency.
CandidateMetrics estimate(const sim::AcceleratorConfig& cfg, const quant::NetworkSpec& spec,
                          const CostCoefficients& c);

} // namespace flexpilot::cost
