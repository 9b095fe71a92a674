#include "flexpilot/quantnet.hpp"

#include "flexpilot/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace flexpilot::quant {

std::string to_string(Activation act) {
    return act == Activation::relu ? "relu" : "identity";
}

Activation activation_from_string(const std::string& name) {
    if (name == "relu")
        return Activation::relu;
    if (name == "identity")
        return Activation::identity;
    throw InvalidInput("unknown activation '" + name + "'");
}

NetworkSpec NetworkSpec::mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                             std::size_t outputs) {
    NetworkSpec spec;
    spec.input_dim = input_dim;
    std::size_t prev = input_dim;
    for (std::size_t h : hidden) {
        spec.layers.push_back({prev, h, Activation::relu});
        prev = h;
    }
    spec.layers.push_back({prev, outputs, Activation::identity});
    spec.validate();
    return spec;
}

void NetworkSpec::validate() const {
    if (input_dim == 0)
        throw ShapeError("network input_dim must be >= 1");
    if (layers.empty())
        throw ShapeError("network has no layers");
    std::size_t prev = input_dim;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.in_dim == 0 || l.out_dim == 0)
            throw ShapeError("layer " + std::to_string(i) + " has a zero dimension");
        if (l.in_dim != prev)
            throw ShapeError("layer " + std::to_string(i) + " in_dim " + std::to_string(l.in_dim) +
                             " does not match previous width " + std::to_string(prev));
        prev = l.out_dim;
    }
}

std::size_t NetworkSpec::output_dim() const {
    return layers.empty() ? 0 : layers.back().out_dim;
}

std::size_t NetworkSpec::weight_count() const {
    std::size_t n = 0;
    for (const auto& l : layers)
        n += l.in_dim * l.out_dim;
    return n;
}

std::size_t NetworkSpec::max_width() const {
    std::size_t w = input_dim;
    for (const auto& l : layers)
        w = std::max(w, l.out_dim);
    return w;
}

WeightSet WeightSet::zeros(const NetworkSpec& spec) {
    WeightSet ws;
    for (const auto& l : spec.layers)
        ws.layers.push_back({std::vector<float>(l.in_dim * l.out_dim, 0.0f),
                             std::vector<float>(l.out_dim, 0.0f)});
    return ws;
}

WeightSet WeightSet::uniform(const NetworkSpec& spec, float lo, float hi, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(lo, hi);
    WeightSet ws = zeros(spec);
    for (auto& l : ws.layers) {
        for (auto& v : l.weights)
            v = dist(rng);
        for (auto& v : l.bias)
            v = dist(rng);
    }
    return ws;
}

void WeightSet::validate(const NetworkSpec& spec) const {
    if (layers.size() != spec.layers.size())
        throw ShapeError("weight set has " + std::to_string(layers.size()) + " layers, network has " +
                         std::to_string(spec.layers.size()));
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& s = spec.layers[i];
        const auto& l = layers[i];
        if (l.weights.size() != s.in_dim * s.out_dim || l.bias.size() != s.out_dim)
            throw ShapeError("layer " + std::to_string(i) + " weight/bias shape mismatch");
        auto finite = [](float v) { return std::isfinite(v); };
        if (!std::all_of(l.weights.begin(), l.weights.end(), finite) ||
            !std::all_of(l.bias.begin(), l.bias.end(), finite))
            throw InvalidInput("layer " + std::to_string(i) + " has non-finite parameters");
    }
}

double RequantParams::ratio() const {
    return std::ldexp(static_cast<double>(multiplier), -shift);
}

int max_code(int bits) {
    if (bits < 2 || bits > 8)
        throw InvalidInput("unsupported precision " + std::to_string(bits) + " bits");
    return (1 << (bits - 1)) - 1;
}

std::int8_t to_code(double value, int bits) {
    const double limit = max_code(bits);
    // std::round is half-away-from-zero.
    const double r = std::clamp(std::round(value), -limit, limit);
    return static_cast<std::int8_t>(r);
}

namespace {

template <typename T>
double max_abs(std::span<const T> xs) {
    double m = 0.0;
    for (T v : xs) {
        if (!std::isfinite(static_cast<double>(v)))
            throw InvalidInput("non-finite value in tensor");
        m = std::max(m, std::abs(static_cast<double>(v)));
    }
    return m;
}

template <typename T>
QuantizedTensor quantize_impl(std::span<const T> tensor, int bits) {
    if (tensor.empty())
        throw InvalidInput("cannot quantize an empty tensor");
    const double m = max_abs(tensor);
    const double scale = m == 0.0 ? 1.0 : m / max_code(bits);
    QuantizedTensor q;
    q.bits = bits;
    q.scale = scale;
    q.values.reserve(tensor.size());
    for (T v : tensor)
        q.values.push_back(to_code(static_cast<double>(v) / scale, bits));
    return q;
}

double scale_from_max(double m, int bits) {
    return m == 0.0 ? 1.0 : m / max_code(bits);
}

} // namespace

QuantizedTensor quantize(std::span<const double> tensor, int bits) {
    return quantize_impl(tensor, bits);
}

QuantizedTensor quantize(std::span<const float> tensor, int bits) {
    return quantize_impl(tensor, bits);
}

QuantizedTensor quantize_with_scale(std::span<const double> tensor, double scale, int bits) {
    if (!(scale > 0.0) || !std::isfinite(scale))
        throw InvalidInput("quantization scale must be finite and > 0");
    QuantizedTensor q;
    q.bits = bits;
    q.scale = scale;
    q.values.reserve(tensor.size());
    for (double v : tensor) {
        if (!std::isfinite(v))
            throw InvalidInput("non-finite value in tensor");
        q.values.push_back(to_code(v / scale, bits));
    }
    return q;
}

std::vector<double> dequantize(const QuantizedTensor& q) {
    std::vector<double> out;
    out.reserve(q.values.size());
    for (auto v : q.values)
        out.push_back(static_cast<double>(v) * q.scale);
    return out;
}

RequantParams derive_requant(double s_in, double s_w, double s_out) {
    for (double s : {s_in, s_w, s_out})
        if (!(s > 0.0) || !std::isfinite(s))
            throw InvalidInput("requantization scales must be finite and > 0");
    const double ratio = s_in * s_w / s_out;
    if (!std::isfinite(ratio) || ratio >= std::ldexp(1.0, 31))
        throw OverflowError("requantization ratio " + std::to_string(ratio) + " exceeds 2^31");
    if (ratio == 0.0)
        throw OverflowError("requantization ratio underflows to zero");

    // ratio = frac * 2^exp with frac in [0.5, 1): the normalized multiplier is frac * 2^31.
    int exp = 0;
    const double frac = std::frexp(ratio, &exp);
    auto multiplier = static_cast<std::int64_t>(std::round(std::ldexp(frac, 31)));
    int shift = 31 - exp;
    if (multiplier == (std::int64_t{1} << 31)) {
        multiplier >>= 1;
        --shift;
    }
    if (shift < 0)
        throw OverflowError("requantization ratio " + std::to_string(ratio) + " exceeds 2^31");
    return {static_cast<std::int32_t>(multiplier), shift};
}

std::int64_t apply_requant(std::int64_t acc, const RequantParams& rp) {
    const bool negative = acc < 0;
    const std::uint64_t mag = static_cast<std::uint64_t>(negative ? -acc : acc) *
                              static_cast<std::uint64_t>(rp.multiplier);
    std::uint64_t r = 0;
    if (rp.shift == 0) {
        r = mag;
    } else if (rp.shift < 64) {
        // |acc| < 2^31 and multiplier < 2^31, so mag + half stays below 2^63.
        const std::uint64_t half = std::uint64_t{1} << (rp.shift - 1);
        r = (mag + half) >> rp.shift;
    }
    const auto v = static_cast<std::int64_t>(r);
    return negative ? -v : v;
}

std::int32_t saturate_accumulator(std::int64_t acc) {
    constexpr std::int64_t lo = std::numeric_limits<std::int32_t>::min();
    constexpr std::int64_t hi = std::numeric_limits<std::int32_t>::max();
    return static_cast<std::int32_t>(std::clamp(acc, lo, hi));
}

std::int8_t requantize_activate(std::int32_t acc, const RequantParams& rp, int bits,
                                Activation act) {
    const std::int64_t limit = max_code(bits);
    std::int64_t v = std::clamp(apply_requant(acc, rp), -limit, limit);
    if (act == Activation::relu && v < 0)
        v = 0;
    return static_cast<std::int8_t>(v);
}

std::vector<std::vector<double>> fc_forward_fp_trace(const NetworkSpec& spec, const WeightSet& w,
                                                     std::span<const double> x) {
    if (x.size() != spec.input_dim)
        throw ShapeError("input length " + std::to_string(x.size()) + " != input_dim " +
                         std::to_string(spec.input_dim));
    if (w.layers.size() != spec.layers.size())
        throw ShapeError("weight set does not match network");
    std::vector<std::vector<double>> trace;
    std::vector<double> cur(x.begin(), x.end());
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const auto& s = spec.layers[li];
        const auto& lw = w.layers[li];
        if (lw.weights.size() != s.in_dim * s.out_dim || lw.bias.size() != s.out_dim ||
            cur.size() != s.in_dim)
            throw ShapeError("layer " + std::to_string(li) + " shape mismatch");
        std::vector<double> next(s.out_dim);
        for (std::size_t o = 0; o < s.out_dim; ++o) {
            const float* row = lw.weights.data() + o * s.in_dim;
            double acc = 0.0;
            for (std::size_t i = 0; i < s.in_dim; ++i)
                acc += static_cast<double>(row[i]) * cur[i];
            acc += static_cast<double>(lw.bias[o]);
            next[o] = (s.activation == Activation::relu && acc < 0.0) ? 0.0 : acc;
        }
        trace.push_back(next);
        cur = std::move(next);
    }
    return trace;
}

std::vector<double> fc_forward_fp(const NetworkSpec& spec, const WeightSet& w,
                                  std::span<const double> x) {
    auto trace = fc_forward_fp_trace(spec, w, x);
    return std::move(trace.back());
}

QuantizedTensor QuantizedNetwork::quantize_input(std::span<const double> x) const {
    if (x.size() != input_dim)
        throw ShapeError("input length " + std::to_string(x.size()) + " != input_dim " +
                         std::to_string(input_dim));
    return quantize_with_scale(x, input_scale, bits);
}

double QuantizedNetwork::output_scale() const {
    return layers.empty() ? input_scale : layers.back().output_scale;
}

std::size_t QuantizedNetwork::weight_bytes() const {
    std::size_t bytes = 0;
    for (const auto& l : layers)
        bytes += (l.in_dim * l.out_dim * static_cast<std::size_t>(bits) + 7) / 8;
    return bytes;
}

NetworkSpec QuantizedNetwork::spec() const {
    NetworkSpec s;
    s.input_dim = input_dim;
    for (const auto& l : layers)
        s.layers.push_back({l.in_dim, l.out_dim, l.activation});
    return s;
}

QuantizedNetwork quantize_network(const NetworkSpec& spec, const WeightSet& w,
                                  const std::vector<std::vector<double>>& calibration_inputs,
                                  int bits) {
    spec.validate();
    w.validate(spec);
    max_code(bits);
    if (calibration_inputs.empty())
        throw InvalidInput("calibration set is empty");

    double in_max = 0.0;
    std::vector<double> act_max(spec.layers.size(), 0.0);
    for (const auto& x : calibration_inputs) {
        in_max = std::max(in_max, max_abs(std::span<const double>(x)));
        const auto trace = fc_forward_fp_trace(spec, w, x);
        for (std::size_t li = 0; li < trace.size(); ++li)
            act_max[li] = std::max(act_max[li], max_abs(std::span<const double>(trace[li])));
    }

    std::vector<double> output_scales;
    for (double m : act_max)
        output_scales.push_back(scale_from_max(m, bits));
    return build_quantized_network(spec, w, bits, scale_from_max(in_max, bits), output_scales);
}

QuantizedNetwork build_quantized_network(const NetworkSpec& spec, const WeightSet& w, int bits,
                                         double input_scale,
                                         const std::vector<double>& output_scales) {
    spec.validate();
    w.validate(spec);
    max_code(bits);
    if (output_scales.size() != spec.layers.size())
        throw ShapeError("need one activation scale per layer");

    QuantizedNetwork net;
    net.bits = bits;
    net.input_dim = spec.input_dim;
    net.input_scale = input_scale;

    double s_in = input_scale;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const auto& s = spec.layers[li];
        const auto& lw = w.layers[li];
        QuantizedLayer ql;
        ql.in_dim = s.in_dim;
        ql.out_dim = s.out_dim;
        ql.activation = s.activation;
        ql.weights = quantize(std::span<const float>(lw.weights), bits);
        ql.input_scale = s_in;
        ql.output_scale = output_scales[li];
        const double acc_scale = s_in * ql.weights.scale;
        ql.bias.reserve(s.out_dim);
        for (float b : lw.bias) {
            const double q = std::clamp(std::round(static_cast<double>(b) / acc_scale), -4.0e18, 4.0e18);
            ql.bias.push_back(saturate_accumulator(static_cast<std::int64_t>(q)));
        }
        ql.requant = derive_requant(s_in, ql.weights.scale, ql.output_scale);
        s_in = ql.output_scale;
        net.layers.push_back(std::move(ql));
    }
    return net;
}

QuantizedTensor forward_layer_quantized(const QuantizedLayer& layer, const QuantizedTensor& input,
                                        int bits) {
    if (input.values.size() != layer.in_dim)
        throw ShapeError("layer input length mismatch");
    QuantizedTensor out;
    out.bits = bits;
    out.scale = layer.output_scale;
    out.values.resize(layer.out_dim);
    for (std::size_t o = 0; o < layer.out_dim; ++o) {
        const std::int8_t* row = layer.weights.values.data() + o * layer.in_dim;
        std::int64_t acc = 0;
        for (std::size_t i = 0; i < layer.in_dim; ++i)
            acc += static_cast<std::int64_t>(row[i]) * input.values[i];
        acc += layer.bias[o];
        out.values[o] =
            requantize_activate(saturate_accumulator(acc), layer.requant, bits, layer.activation);
    }
    return out;
}

QuantizedTensor forward_quantized(const QuantizedNetwork& net, const QuantizedTensor& input) {
    if (input.values.size() != net.input_dim)
        throw ShapeError("network input length mismatch");
    if (input.bits != net.bits)
        throw ShapeError("input precision does not match network precision");
    QuantizedTensor cur = input;
    for (const auto& layer : net.layers)
        cur = forward_layer_quantized(layer, cur, net.bits);
    return cur;
}

} // namespace flexpilot::quant
