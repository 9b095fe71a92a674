#include "flexpilot/flexsim.hpp"

#include "flexpilot/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>

namespace flexpilot::sim {

namespace {

constexpr std::array<int, 5> kPeChoices = {2, 4, 8, 16, 32};
constexpr std::array<int, 3> kLaneChoices = {4, 8, 16};

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) {
    return (a + b - 1) / b;
}

std::size_t packed_bytes(std::size_t codes, int bits) {
    return (codes * static_cast<std::size_t>(bits) + 7) / 8;
}

template <std::size_t N>
bool one_of(int v, const std::array<int, N>& choices) {
    return std::find(choices.begin(), choices.end(), v) != choices.end();
}

} // namespace

int default_vector_width(int precision_bits) {
    switch (precision_bits) {
    case 8:
        return 8;
    case 4:
        return 16;
    default:
        throw InvalidInput("precision must be 4 or 8 bits, got " + std::to_string(precision_bits));
    }
}

AcceleratorConfig AcceleratorConfig::make(int pes, int lanes, int bits,
                                          std::size_t weight_buffer_kb) {
    AcceleratorConfig c;
    c.num_pes = pes;
    c.mac_lanes = lanes;
    c.precision_bits = bits;
    c.vector_width = default_vector_width(bits);
    c.weight_buffer_kb = weight_buffer_kb;
    c.validate();
    return c;
}

void AcceleratorConfig::validate() const {
    if (!one_of(num_pes, kPeChoices))
        throw InvalidInput("num_pes must be one of 2,4,8,16,32; got " + std::to_string(num_pes));
    if (!one_of(mac_lanes, kLaneChoices))
        throw InvalidInput("mac_lanes must be one of 4,8,16; got " + std::to_string(mac_lanes));
    if (precision_bits != 4 && precision_bits != 8)
        throw InvalidInput("precision_bits must be 4 or 8");
    if (vector_width < 1)
        throw InvalidInput("vector_width must be >= 1");
    if (weight_buffer_kb < 16 || weight_buffer_kb > 1024)
        throw InvalidInput("weight_buffer_kb must lie in [16, 1024]");
    if (input_buffer_kb < 1 || global_buffer_kb < 1)
        throw InvalidInput("buffer sizes must be >= 1 kB");
    if (!(clock_mhz > 0.0) || !std::isfinite(clock_mhz))
        throw InvalidInput("clock_mhz must be > 0");
}

std::string AcceleratorConfig::id() const {
    auto two = [](int v) { return (v < 10 ? "0" : "") + std::to_string(v); };
    return "P" + two(num_pes) + "-L" + two(mac_lanes) + "-B" + std::to_string(precision_bits);
}

std::size_t AcceleratorConfig::macs_per_cycle() const {
    return static_cast<std::size_t>(num_pes) * mac_lanes * vector_width;
}

std::vector<NeuronRange> partition(std::size_t count, std::size_t parts) {
    if (parts == 0)
        throw InvalidInput("cannot partition over zero PEs");
    std::vector<NeuronRange> out;
    out.reserve(parts);
    const std::size_t base = count / parts;
    const std::size_t rem = count % parts;
    std::size_t begin = 0;
    for (std::size_t k = 0; k < parts; ++k) {
        const std::size_t n = base + (k < rem ? 1 : 0);
        out.push_back({begin, begin + n});
        begin += n;
    }
    return out;
}

LayerCycles layer_cycles(std::size_t in_dim, std::size_t out_dim, const AcceleratorConfig& cfg) {
    const std::uint64_t per_cycle = static_cast<std::uint64_t>(cfg.mac_lanes) * cfg.vector_width;
    LayerCycles c;
    c.compute = ceil_div(out_dim, cfg.num_pes) * ceil_div(in_dim, per_cycle);
    c.aggregate = static_cast<std::uint64_t>(cfg.num_pes);
    c.broadcast = ceil_div(out_dim, cfg.vector_width);
    return c;
}

std::uint64_t network_cycles(const quant::NetworkSpec& spec, const AcceleratorConfig& cfg) {
    std::uint64_t total = 0;
    for (const auto& l : spec.layers)
        total += layer_cycles(l.in_dim, l.out_dim, cfg).total();
    return total;
}

std::size_t pe_weight_bytes(const quant::LayerShape& layer, std::size_t pe,
                            const AcceleratorConfig& cfg) {
    const auto ranges = partition(layer.out_dim, static_cast<std::size_t>(cfg.num_pes));
    return packed_bytes(ranges.at(pe).size() * layer.in_dim, cfg.precision_bits);
}

std::size_t max_pe_weight_bytes(const quant::NetworkSpec& spec, const AcceleratorConfig& cfg) {
    std::size_t worst = 0;
    for (std::size_t pe = 0; pe < static_cast<std::size_t>(cfg.num_pes); ++pe) {
        std::size_t used = 0;
        for (const auto& l : spec.layers)
            used += pe_weight_bytes(l, pe, cfg);
        worst = std::max(worst, used);
    }
    return worst;
}

void check_capacity(const quant::NetworkSpec& spec, const AcceleratorConfig& cfg) {
    const std::size_t wb = cfg.weight_buffer_kb * 1024;
    const std::size_t ib = cfg.input_buffer_kb * 1024;
    const std::size_t gb = cfg.global_buffer_kb * 1024;
    std::vector<std::size_t> used(static_cast<std::size_t>(cfg.num_pes), 0);
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const auto& l = spec.layers[li];
        if (packed_bytes(l.in_dim, cfg.precision_bits) > ib)
            throw CapacityExceeded("layer " + std::to_string(li) + ": input activation of " +
                                       std::to_string(l.in_dim) + " codes exceeds the " +
                                       std::to_string(cfg.input_buffer_kb) + " kB input buffer",
                                   li, 0);
        if (packed_bytes(l.out_dim, cfg.precision_bits) > gb)
            throw CapacityExceeded("layer " + std::to_string(li) + ": output activation of " +
                                       std::to_string(l.out_dim) + " codes exceeds the " +
                                       std::to_string(cfg.global_buffer_kb) + " kB global buffer",
                                   li, 0);
        for (std::size_t pe = 0; pe < used.size(); ++pe) {
            used[pe] += pe_weight_bytes(l, pe, cfg);
            if (used[pe] > wb)
                throw CapacityExceeded("layer " + std::to_string(li) + " overflows the weight buffer of PE " +
                                           std::to_string(pe) + ": needs " + std::to_string(used[pe]) +
                                           " bytes, capacity " + std::to_string(wb),
                                       li, pe);
        }
    }
}

void write_trace(std::ostream& os, const std::vector<TraceEvent>& trace) {
    for (const auto& e : trace)
        os << e.start << ' ' << e.end << ' ' << e.unit << ' ' << e.phase << '\n';
}

Accelerator::Accelerator(AcceleratorConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    pes_.resize(static_cast<std::size_t>(cfg_.num_pes));
}

std::size_t Accelerator::weight_bytes_used(std::size_t pe) const {
    return pes_.at(pe).bytes_used;
}

std::size_t Accelerator::weight_address(std::size_t layer, std::size_t pe) const {
    return pes_.at(pe).layers.at(layer).address;
}

Response Accelerator::submit(const Command& command) {
    Response resp;
    try {
        std::visit(
            [&](const auto& c) {
                using T = std::decay_t<decltype(c)>;
                if constexpr (std::is_same_v<T, cmd::ConfigInput>) {
                    if (c.input_dim == 0 || !(c.scale > 0.0))
                        throw InvalidInput("CONFIG_INPUT needs a dimension and a positive scale");
                    input_dim_ = c.input_dim;
                    input_scale_ = c.scale;
                } else if constexpr (std::is_same_v<T, cmd::ConfigLayer>) {
                    config_layer(c);
                } else if constexpr (std::is_same_v<T, cmd::LoadWeights>) {
                    load_weights(c);
                } else if constexpr (std::is_same_v<T, cmd::Run>) {
                    last_ = run(c);
                    resp.result = last_;
                } else {
                    if (!last_)
                        throw InvalidInput("READ_RESULT before any RUN completed");
                    resp.result = last_;
                }
            },
            command);
    } catch (const Error& e) {
        resp.ok = false;
        resp.error = e.what();
    }
    return resp;
}

void Accelerator::config_layer(const cmd::ConfigLayer& c) {
    if (c.layer != programs_.size())
        throw InvalidInput("CONFIG_LAYER must configure layers in order; expected layer " +
                           std::to_string(programs_.size()));
    if (c.in_dim == 0 || c.out_dim == 0)
        throw ShapeError("CONFIG_LAYER with a zero dimension");
    const std::size_t expected_in = programs_.empty() ? input_dim_ : programs_.back().out_dim;
    if (expected_in != 0 && c.in_dim != expected_in)
        throw ShapeError("CONFIG_LAYER in_dim does not match the previous layer");
    LayerProgram p;
    p.in_dim = c.in_dim;
    p.out_dim = c.out_dim;
    p.activation = c.activation;
    p.requant = c.requant;
    p.output_scale = c.output_scale;
    p.assignment = partition(c.out_dim, pes_.size());
    programs_.push_back(std::move(p));
    for (auto& pe : pes_)
        pe.layers.emplace_back();
}

void Accelerator::load_weights(const cmd::LoadWeights& c) {
    if (c.layer >= programs_.size())
        throw InvalidInput("LOAD_WEIGHTS for an unconfigured layer");
    if (c.pe >= pes_.size())
        throw InvalidInput("LOAD_WEIGHTS for PE " + std::to_string(c.pe) + " out of range");
    const auto& prog = programs_[c.layer];
    const std::size_t neurons = prog.assignment[c.pe].size();
    if (c.codes.size() != neurons * prog.in_dim || c.bias.size() != neurons)
        throw ShapeError("LOAD_WEIGHTS payload does not match the PE's neuron range");
    const int limit = quant::max_code(cfg_.precision_bits);
    for (auto v : c.codes)
        if (v < -limit || v > limit)
            throw InvalidInput("weight code outside the configured precision");

    auto& pe = pes_[c.pe];
    auto& store = pe.layers[c.layer];
    const std::size_t old_bytes = packed_bytes(store.codes.size(), cfg_.precision_bits);
    const std::size_t new_bytes = packed_bytes(c.codes.size(), cfg_.precision_bits);
    const std::size_t used = pe.bytes_used - old_bytes + new_bytes;
    if (used > cfg_.weight_buffer_kb * 1024)
        throw CapacityExceeded("layer " + std::to_string(c.layer) + " overflows the weight buffer of PE " +
                                   std::to_string(c.pe),
                               c.layer, c.pe);
    // Layers are packed back to back in configuration order.
    std::size_t addr = 0;
    for (std::size_t li = 0; li < c.layer; ++li)
        addr += packed_bytes(pe.layers[li].codes.size(), cfg_.precision_bits);
    store.address = addr;
    store.codes = c.codes;
    store.bias = c.bias;
    pe.bytes_used = used;
}

SimResult Accelerator::run(const cmd::Run& c) {
    if (programs_.empty())
        throw InvalidInput("RUN on an unconfigured accelerator");
    const std::size_t last =
        c.layer_count == 0 ? programs_.size() : c.first_layer + c.layer_count;
    if (c.first_layer >= programs_.size() || last > programs_.size())
        throw InvalidInput("RUN layer range out of bounds");
    if (c.input.values.size() != programs_[c.first_layer].in_dim)
        throw ShapeError("input length " + std::to_string(c.input.values.size()) +
                         " != layer in_dim " + std::to_string(programs_[c.first_layer].in_dim));
    if (c.input.bits != cfg_.precision_bits)
        throw ShapeError("input precision " + std::to_string(c.input.bits) +
                         " does not match accelerator precision " +
                         std::to_string(cfg_.precision_bits));

    SimResult result;
    std::vector<std::int8_t> activations = c.input.values;
    std::uint64_t clock = 0;
    for (std::size_t li = c.first_layer; li < last; ++li)
        execute_layer(li, activations, clock, result);

    result.output.values = std::move(activations);
    result.output.bits = cfg_.precision_bits;
    result.output.scale = programs_[last - 1].output_scale;
    result.cycle_count = clock;
    result.irq_raised = true;
    ++irq_count_;
    return result;
}

void Accelerator::execute_layer(std::size_t layer, std::vector<std::int8_t>& activations,
                                std::uint64_t& clock, SimResult& result) {
    const auto& prog = programs_[layer];
    const std::size_t lanes = static_cast<std::size_t>(cfg_.mac_lanes);
    const std::size_t width = static_cast<std::size_t>(cfg_.vector_width);
    const std::size_t chunks = (prog.in_dim + lanes * width - 1) / (lanes * width);

    struct PeRun {
        std::size_t neuron = 0; // local index within the PE's range
        std::size_t chunk = 0;
        std::int64_t acc = 0;
        std::uint64_t busy = 0;
        std::vector<std::int8_t> out;
    };
    std::vector<PeRun> runs(pes_.size());
    for (std::size_t k = 0; k < pes_.size(); ++k)
        runs[k].out.resize(prog.assignment[k].size());

    // Each PE latches the broadcast activation vector into its input buffer.
    const std::vector<std::int8_t> input_buffer = activations;

    // Compute phase: every busy PE retires one L x V chunk of one neuron per cycle.
    const std::uint64_t start = clock;
    bool any_busy = true;
    while (any_busy) {
        any_busy = false;
        for (std::size_t k = 0; k < pes_.size(); ++k) {
            auto& r = runs[k];
            if (r.neuron >= r.out.size())
                continue;
            any_busy = true;
            const auto& store = pes_[k].layers[layer];
            const std::int8_t* row = store.codes.data() + r.neuron * prog.in_dim;
            for (std::size_t lane = 0; lane < lanes; ++lane) {
                const std::size_t base = (r.chunk * lanes + lane) * width;
                const std::size_t stop = std::min(base + width, prog.in_dim);
                for (std::size_t i = base; i < stop; ++i)
                    r.acc += static_cast<std::int64_t>(row[i]) * input_buffer[i];
            }
            ++r.busy;
            if (++r.chunk == chunks) {
                const std::int64_t acc = r.acc + store.bias[r.neuron];
                r.out[r.neuron] =
                    quant::requantize_activate(quant::saturate_accumulator(acc), prog.requant,
                                               cfg_.precision_bits, prog.activation);
                r.acc = 0;
                r.chunk = 0;
                ++r.neuron;
            }
        }
        if (any_busy)
            ++clock;
    }
    const std::uint64_t compute_end = clock;
    for (std::size_t k = 0; k < pes_.size(); ++k)
        if (runs[k].busy > 0)
            result.trace.push_back({start, start + runs[k].busy, "PE" + std::to_string(k), "compute"});

    // Aggregate phase: the arbiter grants one PE per cycle in index order.
    std::vector<std::int8_t> unified(prog.out_dim, 0);
    std::vector<std::uint32_t> coverage(prog.out_dim, 0);
    const std::uint64_t agg_start = clock;
    for (std::size_t k = 0; k < pes_.size(); ++k) {
        const auto& range = prog.assignment[k];
        for (std::size_t j = 0; j < range.size(); ++j) {
            unified[range.begin + j] = runs[k].out[j];
            ++coverage[range.begin + j];
        }
        ++clock;
    }
    result.trace.push_back({agg_start, clock, "ARB", "aggregate"});

    // Broadcast phase: the GB streams V codes per cycle back to the PEs.
    const std::uint64_t bcast_start = clock;
    for (std::size_t sent = 0; sent < prog.out_dim; sent += width)
        ++clock;
    result.trace.push_back({bcast_start, clock, "GB", "broadcast"});

    result.layers.push_back({compute_end - start, bcast_start - agg_start, clock - bcast_start});
    result.coverage.push_back(std::move(coverage));
    activations = std::move(unified);
}

Accelerator configure(const AcceleratorConfig& cfg, const quant::QuantizedNetwork& net) {
    cfg.validate();
    if (net.bits != cfg.precision_bits)
        throw InvalidInput("network quantized at " + std::to_string(net.bits) +
                           " bits but accelerator is configured for " +
                           std::to_string(cfg.precision_bits));
    const auto spec = net.spec();
    spec.validate();
    check_capacity(spec, cfg);

    Accelerator acc(cfg);
    auto expect_ok = [](const Response& r) {
        if (!r.ok)
            throw Error("accelerator rejected command: " + r.error);
    };
    expect_ok(acc.submit(cmd::ConfigInput{net.input_dim, net.input_scale}));
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const auto& l = net.layers[li];
        expect_ok(acc.submit(
            cmd::ConfigLayer{li, l.in_dim, l.out_dim, l.activation, l.requant, l.output_scale}));
        const auto ranges = acc.programs().back().assignment;
        for (std::size_t pe = 0; pe < ranges.size(); ++pe) {
            cmd::LoadWeights lw;
            lw.layer = li;
            lw.pe = pe;
            const auto& r = ranges[pe];
            lw.codes.assign(l.weights.values.begin() + static_cast<std::ptrdiff_t>(r.begin * l.in_dim),
                            l.weights.values.begin() + static_cast<std::ptrdiff_t>(r.end * l.in_dim));
            lw.bias.assign(l.bias.begin() + static_cast<std::ptrdiff_t>(r.begin),
                           l.bias.begin() + static_cast<std::ptrdiff_t>(r.end));
            expect_ok(acc.submit(lw));
        }
    }
    return acc;
}

namespace {

SimResult expect_result(const Response& r) {
    if (!r.ok)
        throw ShapeError(r.error);
    return *r.result;
}

} // namespace

SimResult run_layer(Accelerator& acc, std::size_t layer_idx, const quant::QuantizedTensor& input) {
    return expect_result(acc.submit(cmd::Run{input, layer_idx, 1}));
}

SimResult run_network(Accelerator& acc, const quant::QuantizedTensor& input) {
    if (acc.input_dim() != 0 && input.values.size() != acc.input_dim())
        throw ShapeError("input length " + std::to_string(input.values.size()) +
                         " != network input_dim " + std::to_string(acc.input_dim()));
    return expect_result(acc.submit(cmd::Run{input, 0, 0}));
}

VerifyReport verify_against_reference(Accelerator& acc, const quant::NetworkSpec& spec,
                                      const quant::WeightSet& w,
                                      const std::vector<std::vector<double>>& inputs,
                                      double tolerance) {
    if (inputs.empty())
        throw InvalidInput("verification needs at least one input");
    VerifyReport rep;
    rep.tolerance = tolerance;
    for (const auto& x : inputs) {
        const auto ref = quant::fc_forward_fp(spec, w, x);
        const auto q = quant::quantize_with_scale(x, acc.input_scale(), acc.config().precision_bits);
        const auto out = quant::dequantize(run_network(acc, q).output);
        if (out.size() != ref.size())
            throw ShapeError("accelerator output length differs from the reference");
        for (std::size_t i = 0; i < ref.size(); ++i)
            rep.max_err = std::max(rep.max_err, std::abs(out[i] - ref[i]));
        ++rep.inputs;
    }
    rep.pass = rep.max_err <= tolerance;
    return rep;
}

} // namespace flexpilot::sim
