#include "flexpilot/costmodel.hpp"

#include "flexpilot/error.hpp"

#include <cmath>
#include <fstream>

namespace flexpilot::cost {

CostCoefficients CostCoefficients::defaults() {
    // Anchored so that, on the 160-4096-2048-512-25 policy, the smallest feasible
    // candidate (P8 L4 4-bit) lands at 0.142 W / 4.9 mm2 and the largest (P32 L16 8-bit)
    // at 1.091 W / 39.2 mm2. Per-PE and per-kB terms were fixed first; base and per-lane
    // terms solve the two anchors.
    CostCoefficients c;
    c.power_base_w = 0.088248;
    c.power_per_pe_w = 0.001;
    c.power_per_lane_w = 0.0018315;
    c.power_per_kb_w = 2.0e-6;
    c.area_base_mm2 = 3.0344258064516128;
    c.area_per_pe_mm2 = 0.05;
    c.area_per_lane_mm2 = 0.06589838709677419;
    c.area_per_kb_mm2 = 5.0e-5;
    return c;
}

void CostCoefficients::validate() const {
    if (schema_version != 1)
        throw InvalidInput("unsupported coefficient schema_version " + std::to_string(schema_version));
    if (!(reference_clock_mhz > 0.0))
        throw InvalidInput("reference_clock_mhz must be > 0");
    for (double v : {power_base_w, power_per_pe_w, power_per_lane_w, power_per_kb_w, area_base_mm2,
                     area_per_pe_mm2, area_per_lane_mm2, area_per_kb_mm2})
        if (!(v >= 0.0) || !std::isfinite(v))
            throw InvalidInput("cost coefficients must be finite and non-negative");
}

nlohmann::json to_json(const CostCoefficients& c) {
    return {{"schema_version", c.schema_version},
            {"reference_clock_mhz", c.reference_clock_mhz},
            {"power",
             {{"base_w", c.power_base_w},
              {"per_pe_w", c.power_per_pe_w},
              {"per_lane_w", c.power_per_lane_w},
              {"per_kb_w", c.power_per_kb_w}}},
            {"area",
             {{"base_mm2", c.area_base_mm2},
              {"per_pe_mm2", c.area_per_pe_mm2},
              {"per_lane_mm2", c.area_per_lane_mm2},
              {"per_kb_mm2", c.area_per_kb_mm2}}}};
}

CostCoefficients from_json(const nlohmann::json& j) {
    CostCoefficients c;
    try {
        c.schema_version = j.at("schema_version").get<int>();
        c.reference_clock_mhz = j.at("reference_clock_mhz").get<double>();
        const auto& p = j.at("power");
        c.power_base_w = p.at("base_w").get<double>();
        c.power_per_pe_w = p.at("per_pe_w").get<double>();
        c.power_per_lane_w = p.at("per_lane_w").get<double>();
        c.power_per_kb_w = p.at("per_kb_w").get<double>();
        const auto& a = j.at("area");
        c.area_base_mm2 = a.at("base_mm2").get<double>();
        c.area_per_pe_mm2 = a.at("per_pe_mm2").get<double>();
        c.area_per_lane_mm2 = a.at("per_lane_mm2").get<double>();
        c.area_per_kb_mm2 = a.at("per_kb_mm2").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed cost coefficients: ") + e.what());
    }
    c.validate();
    return c;
}

CostCoefficients load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f)
        throw Error("cannot open coefficients file " + path.string());
    try {
        return from_json(nlohmann::json::parse(f));
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidInput("coefficients file " + path.string() + " is not valid JSON: " + e.what());
    }
}

void save(const std::filesystem::path& path, const CostCoefficients& c) {
    std::ofstream f(path);
    if (!f)
        throw Error("cannot write coefficients file " + path.string());
    f << to_json(c).dump(2) << '\n';
}

std::string to_string(VehicleClass v) {
    switch (v) {
    case VehicleClass::standard:
        return "std";
    case VehicleClass::micro:
        return "micro";
    case VehicleClass::nano:
        return "nano";
    case VehicleClass::pico:
        return "pico";
    case VehicleClass::none:
        break;
    }
    return "none";
}

VehicleClass vehicle_class(double power_w) {
    if (!(power_w > 0.0) || !std::isfinite(power_w))
        return VehicleClass::none;
    if (power_w <= 0.1)
        return VehicleClass::pico;
    if (power_w <= 5.0)
        return VehicleClass::nano;
    if (power_w <= 50.0)
        return VehicleClass::micro;
    return VehicleClass::standard;
}

std::size_t auto_weight_buffer_kb(const quant::NetworkSpec& spec, int num_pes, int precision_bits) {
    sim::AcceleratorConfig probe = sim::AcceleratorConfig::make(num_pes, 4, precision_bits);
    const std::size_t bytes = sim::max_pe_weight_bytes(spec, probe);
    const std::size_t kb = (bytes + 1023) / 1024;
    std::size_t size = 16;
    while (size < kb && size < 1024)
        size *= 2;
    return size;
}

double estimated_latency_us(const sim::AcceleratorConfig& cfg, const quant::NetworkSpec& spec) {
    return static_cast<double>(sim::network_cycles(spec, cfg)) / cfg.clock_mhz;
}

double latency_us(const sim::AcceleratorConfig& cfg, const quant::NetworkSpec& spec) {
    cfg.validate();
    sim::check_capacity(spec, cfg);
    return estimated_latency_us(cfg, spec);
}

namespace {

struct Terms {
    double pes;
    double lanes; // P * L * (bits / 8)
    double kb;    // per-PE buffers, summed
    double clock_factor;
};

Terms terms_of(const sim::AcceleratorConfig& cfg, const CostCoefficients& c) {
    if (cfg.num_pes < 0 || cfg.mac_lanes < 0 || !(cfg.clock_mhz > 0.0))
        throw InvalidInput("cost model needs non-negative geometry and a positive clock");
    if (cfg.precision_bits != 4 && cfg.precision_bits != 8)
        throw InvalidInput("precision_bits must be 4 or 8");
    Terms t;
    t.pes = cfg.num_pes;
    t.lanes = static_cast<double>(cfg.num_pes) * cfg.mac_lanes * (cfg.precision_bits / 8.0);
    t.kb = static_cast<double>(cfg.num_pes) *
           static_cast<double>(cfg.weight_buffer_kb + cfg.input_buffer_kb);
    t.clock_factor = cfg.clock_mhz / c.reference_clock_mhz;
    return t;
}

} // namespace

double power_w(const sim::AcceleratorConfig& cfg, const CostCoefficients& c) {
    const Terms t = terms_of(cfg, c);
    return c.power_base_w +
           t.clock_factor * (c.power_per_pe_w * t.pes + c.power_per_lane_w * t.lanes) +
           c.power_per_kb_w * t.kb;
}

double area_mm2(const sim::AcceleratorConfig& cfg, const CostCoefficients& c) {
    const Terms t = terms_of(cfg, c);
    return c.area_base_mm2 + c.area_per_pe_mm2 * t.pes + c.area_per_lane_mm2 * t.lanes +
           c.area_per_kb_mm2 * t.kb;
}

CandidateMetrics estimate(const sim::AcceleratorConfig& cfg, const quant::NetworkSpec& spec,
                          const CostCoefficients& c) {
    CandidateMetrics m;
    m.config_id = cfg.id();
    m.latency_us = estimated_latency_us(cfg, spec);
    m.power_w = power_w(cfg, c);
    m.area_mm2 = area_mm2(cfg, c);
    m.energy_uj = m.power_w * m.latency_us;
    m.vehicle_class = vehicle_class(m.power_w);
    return m;
}

CandidateMetrics evaluate(const sim::AcceleratorConfig& cfg, const quant::NetworkSpec& spec,
                          const CostCoefficients& c) {
    cfg.validate();
    sim::check_capacity(spec, cfg);
    return estimate(cfg, spec, c);
}

} // namespace flexpilot::cost
