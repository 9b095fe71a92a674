#pragma once

#include "flexpilot/quantnet.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace flexpilot::sim {

// Elements each vector MAC lane consumes per cycle at the given precision.
int default_vector_width(int precision_bits);

struct AcceleratorConfig {
    int num_pes = 8;
    int mac_lanes = 16;
    int vector_width = 8;
    int precision_bits = 8;
    std::size_t weight_buffer_kb = 1024; // per PE
    std::size_t input_buffer_kb = 4;     // per PE
    std::size_t global_buffer_kb = 4;
    double clock_mhz = 300.0;

    static AcceleratorConfig make(int pes, int lanes, int bits,
                                  std::size_t weight_buffer_kb = 1024);

    // Throws InvalidInput for values outside the legal design space.
    void validate() const;

    // Sortable identifier, e.g. "P08-L16-B8".
    std::string id() const;
    std::size_t macs_per_cycle() const;
};

struct NeuronRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

// Balanced contiguous split of [0, count) over `parts`; the remainder goes to the lowest indices.
std::vector<NeuronRange> partition(std::size_t count, std::size_t parts);

struct LayerCycles {
    std::uint64_t compute = 0;
    std::uint64_t aggregate = 0;
    std::uint64_t broadcast = 0;

    std::uint64_t sync() const { return aggregate + broadcast; }
    std::uint64_t total() const { return compute + aggregate + broadcast; }
    bool operator==(const LayerCycles&) const = default;
};

// Closed-form cycle model:
//   compute   = ceil(out / P) * ceil(in / (L * V))
//   aggregate = P            (arbiter drains one PE per cycle)
//   broadcast = ceil(out / V)
LayerCycles layer_cycles(std::size_t in_dim, std::size_t out_dim, const AcceleratorConfig& cfg);
std::uint64_t network_cycles(const quant::NetworkSpec& spec, const AcceleratorConfig& cfg);

// Bytes of packed weight codes PE `pe` stores for `layer`.
std::size_t pe_weight_bytes(const quant::LayerShape& layer, std::size_t pe,
                            const AcceleratorConfig& cfg);
// Largest per-PE weight footprint of the whole network.
std::size_t max_pe_weight_bytes(const quant::NetworkSpec& spec, const AcceleratorConfig& cfg);

// Throws CapacityExceeded naming the first layer/PE that does not fit.
void check_capacity(const quant::NetworkSpec& spec, const AcceleratorConfig& cfg);

struct LayerProgram {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    quant::Activation activation = quant::Activation::relu;
    std::vector<NeuronRange> assignment; // one range per PE
    quant::RequantParams requant;
    double output_scale = 1.0;
};

struct TraceEvent {
    std::uint64_t start = 0;
    std::uint64_t end = 0;
    std::string unit;  // PE<k>, ARB, GB
    std::string phase; // compute, aggregate, broadcast
};

void write_trace(std::ostream& os, const std::vector<TraceEvent>& trace);

struct SimResult {
    quant::QuantizedTensor output;
    std::uint64_t cycle_count = 0;
    std::vector<LayerCycles> layers;
    std::vector<TraceEvent> trace;
    // Per layer, how many times each output neuron was written into the global buffer.
    std::vector<std::vector<std::uint32_t>> coverage;
    bool irq_raised = false;
};

// Host-side command set. The transport is an abstract request/response channel.
namespace cmd {
struct ConfigInput {
    std::size_t input_dim = 0;
    double scale = 1.0;
};
struct ConfigLayer {
    std::size_t layer = 0;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    quant::Activation activation = quant::Activation::relu;
    quant::RequantParams requant;
    double output_scale = 1.0;
};
struct LoadWeights {
    std::size_t layer = 0;
    std::size_t pe = 0;
    std::vector<std::int8_t> codes;  // neurons assigned to `pe`, row-major
    std::vector<std::int32_t> bias;  // same neurons
};
struct Run {
    quant::QuantizedTensor input;
    std::size_t first_layer = 0;
    std::size_t layer_count = 0; // 0 = through the last configured layer
};
struct ReadResult {};
} // namespace cmd

using Command = std::variant<cmd::ConfigInput, cmd::ConfigLayer, cmd::LoadWeights, cmd::Run, cmd::ReadResult>;

struct Response {
    bool ok = true;
    std::string error;
    std::optional<SimResult> result;
};

// One accelerator instance. Not safe for concurrent runs; distinct instances are independent.
class Accelerator {
public:
    explicit Accelerator(AcceleratorConfig cfg);

    Response submit(const Command& command);

    const AcceleratorConfig& config() const { return cfg_; }
    const std::vector<LayerProgram>& programs() const { return programs_; }
    std::size_t weight_bytes_used(std::size_t pe) const;
    // Logical byte address of a layer's weights inside a PE's weight buffer.
    std::size_t weight_address(std::size_t layer, std::size_t pe) const;
    std::uint64_t irq_count() const { return irq_count_; }
    std::size_t input_dim() const { return input_dim_; }
    double input_scale() const { return input_scale_; }

private:
    struct PeLayerStore {
        std::size_t address = 0;
        std::vector<std::int8_t> codes;
        std::vector<std::int32_t> bias;
    };
    struct PeState {
        std::vector<PeLayerStore> layers;
        std::size_t bytes_used = 0;
    };

    void config_layer(const cmd::ConfigLayer& c);
    void load_weights(const cmd::LoadWeights& c);
    SimResult run(const cmd::Run& c);
    void execute_layer(std::size_t layer, std::vector<std::int8_t>& activations,
                       std::uint64_t& clock, SimResult& result);

    AcceleratorConfig cfg_;
    std::vector<LayerProgram> programs_;
    std::vector<PeState> pes_;
    std::optional<SimResult> last_;
    std::size_t input_dim_ = 0;
    double input_scale_ = 1.0;
    std::uint64_t irq_count_ = 0;
};

// Compile the quantized network onto a configured accelerator through the command channel.
Accelerator configure(const AcceleratorConfig& cfg, const quant::QuantizedNetwork& net);

SimResult run_layer(Accelerator& acc, std::size_t layer_idx, const quant::QuantizedTensor& input);
SimResult run_network(Accelerator& acc, const quant::QuantizedTensor& input);

struct VerifyReport {
    double max_err = 0.0;
    double tolerance = 1e-3;
    std::size_t inputs = 0;
    bool pass = false;
};

VerifyReport verify_against_reference(Accelerator& acc, const quant::NetworkSpec& spec,
                                      const quant::WeightSet& w,
                                      const std::vector<std::vector<double>>& inputs,
                                      double tolerance = 1e-3);

} // namespace flexpilot::sim
