#include "flexpilot/fxw.hpp"

#include "flexpilot/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace flexpilot::fxw {

namespace {

constexpr char kMagic[4] = {'F', 'X', 'W', '1'};
constexpr int kManifestVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
    put_u32(out, std::bit_cast<std::uint32_t>(f));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }

    void magic() {
        need(4);
        if (std::memcmp(bytes_.data(), kMagic, 4) != 0)
            throw InvalidInput("not an FXW1 file (bad magic)");
        pos_ += 4;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n)
            throw InvalidInput("truncated FXW1 data");
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> encode(const quant::NetworkSpec& spec, const quant::WeightSet& w) {
    spec.validate();
    w.validate(spec);
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, static_cast<std::uint32_t>(spec.layers.size()));
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        put_u32(out, static_cast<std::uint32_t>(spec.layers[i].in_dim));
        put_u32(out, static_cast<std::uint32_t>(spec.layers[i].out_dim));
        for (float v : w.layers[i].weights)
            put_f32(out, v);
        for (float v : w.layers[i].bias)
            put_f32(out, v);
    }
    return out;
}

Decoded decode(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    r.magic();
    const std::uint32_t n = r.u32();
    Decoded d;
    for (std::uint32_t li = 0; li < n; ++li) {
        const std::uint32_t in = r.u32();
        const std::uint32_t out = r.u32();
        if (in == 0 || out == 0)
            throw ShapeError("FXW1 layer " + std::to_string(li) + " has a zero dimension");
        if (!d.dims.empty() && d.dims.back().second != in)
            throw ShapeError("FXW1 layer " + std::to_string(li) + " breaks the layer chain");
        if (static_cast<std::uint64_t>(in) * out > (std::uint64_t{1} << 31))
            throw InvalidInput("FXW1 layer " + std::to_string(li) + " is implausibly large");
        quant::LayerWeights lw;
        lw.weights.resize(static_cast<std::size_t>(in) * out);
        for (auto& v : lw.weights)
            v = r.f32();
        lw.bias.resize(out);
        for (auto& v : lw.bias)
            v = r.f32();
        d.dims.emplace_back(in, out);
        d.weights.layers.push_back(std::move(lw));
    }
    if (!r.done())
        throw InvalidInput("trailing bytes after FXW1 payload");
    return d;
}

void write_file(const std::filesystem::path& path, const quant::NetworkSpec& spec,
                const quant::WeightSet& w) {
    const auto bytes = encode(spec, w);
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw Error("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Decoded read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw Error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return decode(bytes);
}

QuantScales scales_of(const quant::QuantizedNetwork& net) {
    QuantScales s;
    s.bits = net.bits;
    s.input_scale = net.input_scale;
    for (const auto& l : net.layers) {
        s.weight_scales.push_back(l.weights.scale);
        s.output_scales.push_back(l.output_scale);
        s.requant.push_back(l.requant);
    }
    return s;
}

nlohmann::json make_manifest(const quant::NetworkSpec& spec,
                             const std::optional<QuantScales>& scales) {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        nlohmann::json j = {{"in_dim", l.in_dim},
                            {"out_dim", l.out_dim},
                            {"activation", quant::to_string(l.activation)}};
        if (scales) {
            j["weight_scale"] = scales->weight_scales.at(i);
            j["output_scale"] = scales->output_scales.at(i);
            j["requant"] = {{"multiplier", scales->requant.at(i).multiplier},
                            {"shift", scales->requant.at(i).shift}};
        }
        layers.push_back(std::move(j));
    }
    nlohmann::json m = {{"format", "FXW1"},
                        {"schema_version", kManifestVersion},
                        {"input_dim", spec.input_dim},
                        {"layers", std::move(layers)}};
    if (scales)
        m["quantization"] = {{"bits", scales->bits}, {"input_scale", scales->input_scale}};
    else
        m["quantization"] = nullptr;
    return m;
}

void write_manifest(const std::filesystem::path& path, const nlohmann::json& manifest) {
    std::ofstream f(path);
    if (!f)
        throw Error("cannot open " + path.string() + " for writing");
    f << manifest.dump(2) << '\n';
}

nlohmann::json read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f)
        throw Error("cannot open " + path.string());
    try {
        auto m = nlohmann::json::parse(f);
        if (m.value("schema_version", 0) != kManifestVersion)
            throw InvalidInput("unsupported manifest schema_version in " + path.string());
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("malformed manifest " + path.string() + ": " + e.what());
    }
}

quant::NetworkSpec spec_from_manifest(const nlohmann::json& manifest) {
    quant::NetworkSpec spec;
    try {
        spec.input_dim = manifest.at("input_dim").get<std::size_t>();
        for (const auto& l : manifest.at("layers"))
            spec.layers.push_back({l.at("in_dim").get<std::size_t>(),
                                   l.at("out_dim").get<std::size_t>(),
                                   quant::activation_from_string(l.at("activation"))});
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("manifest is missing network fields: ") + e.what());
    }
    spec.validate();
    return spec;
}

std::optional<QuantScales> scales_from_manifest(const nlohmann::json& manifest) {
    if (!manifest.contains("quantization") || manifest.at("quantization").is_null())
        return std::nullopt;
    try {
        QuantScales s;
        s.bits = manifest.at("quantization").at("bits").get<int>();
        s.input_scale = manifest.at("quantization").at("input_scale").get<double>();
        for (const auto& l : manifest.at("layers")) {
            s.weight_scales.push_back(l.at("weight_scale").get<double>());
            s.output_scales.push_back(l.at("output_scale").get<double>());
            s.requant.push_back({l.at("requant").at("multiplier").get<std::int32_t>(),
                                 l.at("requant").at("shift").get<int>()});
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("manifest quantization section is malformed: ") + e.what());
    }
}

Policy load_policy(const std::filesystem::path& weights, const std::filesystem::path& manifest) {
    const auto m = read_manifest(manifest);
    Policy p;
    p.spec = spec_from_manifest(m);
    auto decoded = read_file(weights);
    if (decoded.dims.size() != p.spec.layers.size())
        throw ShapeError("weight file and manifest disagree on layer count");
    for (std::size_t i = 0; i < decoded.dims.size(); ++i)
        if (decoded.dims[i].first != p.spec.layers[i].in_dim ||
            decoded.dims[i].second != p.spec.layers[i].out_dim)
            throw ShapeError("weight file and manifest disagree on layer " + std::to_string(i));
    p.weights = std::move(decoded.weights);
    p.weights.validate(p.spec);
    p.scales = scales_from_manifest(m);
    return p;
}

void save_policy(const std::filesystem::path& weights, const std::filesystem::path& manifest,
                 const Policy& policy) {
    write_file(weights, policy.spec, policy.weights);
    write_manifest(manifest, make_manifest(policy.spec, policy.scales));
}

quant::QuantizedNetwork rebuild_quantized(const Policy& policy) {
    if (!policy.scales)
        throw InvalidInput("policy manifest carries no quantization scales");
    auto net = quant::build_quantized_network(policy.spec, policy.weights, policy.scales->bits,
                                              policy.scales->input_scale,
                                              policy.scales->output_scales);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& rq = net.layers[i].requant;
        const auto& rec = policy.scales->requant.at(i);
        if (rq.multiplier != rec.multiplier || rq.shift != rec.shift)
            throw InvalidInput("manifest requant parameters for layer " + std::to_string(i) +
                               " do not match the weights");
    }
    return net;
}

} // namespace flexpilot::fxw
