#pragma once

#include "flexpilot/quantnet.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

namespace flexpilot::fxw {

// FXW1 layout (little-endian):
//   "FXW1" | u32 layer_count | per layer: u32 in_dim, u32 out_dim,
//   f32 weights[out_dim * in_dim] (row-major), f32 bias[out_dim]
std::vector<std::uint8_t> encode(const quant::NetworkSpec& spec, const quant::WeightSet& w);

struct Decoded {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> dims; // (in_dim, out_dim) per layer
    quant::WeightSet weights;
};

Decoded decode(std::span<const std::uint8_t> bytes);

void write_file(const std::filesystem::path& path, const quant::NetworkSpec& spec,
                const quant::WeightSet& w);
Decoded read_file(const std::filesystem::path& path);

// Calibration record carried next to a weight file.
struct QuantScales {
    int bits = 8;
    double input_scale = 1.0;
    std::vector<double> weight_scales;
    std::vector<double> output_scales;
    std::vector<quant::RequantParams> requant;
};

QuantScales scales_of(const quant::QuantizedNetwork& net);

// Sidecar manifest: activation kinds per layer and optional quantization scales.
nlohmann::json make_manifest(const quant::NetworkSpec& spec,
                             const std::optional<QuantScales>& scales);
void write_manifest(const std::filesystem::path& path, const nlohmann::json& manifest);
nlohmann::json read_manifest(const std::filesystem::path& path);

quant::NetworkSpec spec_from_manifest(const nlohmann::json& manifest);
std::optional<QuantScales> scales_from_manifest(const nlohmann::json& manifest);

struct Policy {
    quant::NetworkSpec spec;
    quant::WeightSet weights;
    std::optional<QuantScales> scales;
};

// Loads an FXW1 file together with its manifest and checks that both agree.
Policy load_policy(const std::filesystem::path& weights, const std::filesystem::path& manifest);
void save_policy(const std::filesystem::path& weights, const std::filesystem::path& manifest,
                 const Policy& policy);

// Reconstruct the exact quantized network recorded by a manifest.
quant::QuantizedNetwork rebuild_quantized(const Policy& policy);

} // namespace flexpilot::fxw
