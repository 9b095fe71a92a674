#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace flexpilot::quant {

enum class Activation { relu, identity };

std::string to_string(Activation act);
Activation activation_from_string(const std::string& name);

struct LayerShape {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Activation activation = Activation::relu;
};

// Topology of a fully-connected policy network.
struct NetworkSpec {
    std::size_t input_dim = 0;
    std::vector<LayerShape> layers;

    // Dense chain input -> hidden... -> outputs; relu on hidden layers, identity on the head.
    static NetworkSpec mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                           std::size_t outputs);

    // Throws ShapeError when the chain is broken or a dimension is zero.
    void validate() const;

    std::size_t output_dim() const;
    std::size_t weight_count() const;
    std::size_t max_width() const;
};

struct LayerWeights {
    std::vector<float> weights; // out_dim x in_dim, row-major
    std::vector<float> bias;    // out_dim
};

struct WeightSet {
    std::vector<LayerWeights> layers;

    static WeightSet zeros(const NetworkSpec& spec);
    static WeightSet uniform(const NetworkSpec& spec, float lo, float hi, std::uint64_t seed);

    void validate(const NetworkSpec& spec) const;
};

// Symmetric n-bit codes plus a real scale; dequantized value = code * scale.
struct QuantizedTensor {
    std::vector<std::int8_t> values;
    double scale = 1.0;
    int bits = 8;
};

// Fixed-point rescale of a wide accumulator: value * multiplier / 2^shift.
struct RequantParams {
    std::int32_t multiplier = 0;
    int shift = 0;

    double ratio() const;
};

// Largest representable code magnitude, 2^(bits-1) - 1.
int max_code(int bits);

// Round half away from zero, then clip to the symmetric range.
std::int8_t to_code(double value, int bits);

QuantizedTensor quantize(std::span<const double> tensor, int bits);
QuantizedTensor quantize(std::span<const float> tensor, int bits);
QuantizedTensor quantize_with_scale(std::span<const double> tensor, double scale, int bits);
std::vector<double> dequantize(const QuantizedTensor& q);

RequantParams derive_requant(double s_in, double s_w, double s_out);

// acc * multiplier / 2^shift, rounded half away from zero. Not clipped.
std::int64_t apply_requant(std::int64_t acc, const RequantParams& rp);

// Saturate a wide sum into the 32-bit accumulator register.
std::int32_t saturate_accumulator(std::int64_t acc);

// Requantize an accumulator, clip to n bits, then apply the activation.
std::int8_t requantize_activate(std::int32_t acc, const RequantParams& rp, int bits,
                                Activation act);

std::vector<double> fc_forward_fp(const NetworkSpec& spec, const WeightSet& w,
                                  std::span<const double> x);

// Same as fc_forward_fp but also returns every layer's post-activation output.
std::vector<std::vector<double>> fc_forward_fp_trace(const NetworkSpec& spec, const WeightSet& w,
                                                     std::span<const double> x);

struct QuantizedLayer {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Activation activation = Activation::relu;
    QuantizedTensor weights;         // out_dim x in_dim codes, row-major
    std::vector<std::int32_t> bias;  // in accumulator units (input_scale * weight scale)
    RequantParams requant;
    double input_scale = 1.0;
    double output_scale = 1.0;
};

struct QuantizedNetwork {
    int bits = 8;
    std::size_t input_dim = 0;
    double input_scale = 1.0;
    std::vector<QuantizedLayer> layers;

    QuantizedTensor quantize_input(std::span<const double> x) const;
    double output_scale() const;
    std::size_t weight_bytes() const;
    NetworkSpec spec() const;
};

QuantizedNetwork quantize_network(const NetworkSpec& spec, const WeightSet& w,
                                  const std::vector<std::vector<double>>& calibration_inputs,
                                  int bits);

// Rebuild a quantized network from already-calibrated activation scales (one per layer).
QuantizedNetwork build_quantized_network(const NetworkSpec& spec, const WeightSet& w, int bits,
                                         double input_scale,
                                         const std::vector<double>& output_scales);

// Integer reference semantics of the accelerator datapath for one layer / whole network.
QuantizedTensor forward_layer_quantized(const QuantizedLayer& layer, const QuantizedTensor& input,
                                        int bits);
QuantizedTensor forward_quantized(const QuantizedNetwork& net, const QuantizedTensor& input);

} // namespace flexpilot::quant
