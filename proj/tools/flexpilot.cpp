// flexpilot: policy training, accelerator verification and design-space exploration.

#include "flexpilot/costmodel.hpp"
#include "flexpilot/dse.hpp"
#include "flexpilot/error.hpp"
#include "flexpilot/flexsim.hpp"
#include "flexpilot/fxw.hpp"
#include "flexpilot/pipeline.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using namespace flexpilot;
namespace pl = flexpilot::pipeline;

namespace {

struct Globals {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> jobs;
    std::optional<double> tolerance;
};

pl::PipelineSpec load(const Globals& g) {
    pl::PipelineSpec s = g.config.empty() ? pl::PipelineSpec{} : pl::load_spec(g.config);
    if (!g.out.empty())
        s.output_dir = g.out;
    if (g.seed)
        s.seed = *g.seed;
    if (g.jobs)
        s.jobs = *g.jobs;
    if (g.tolerance)
        s.tolerance = *g.tolerance;
    s.validate();
    return s;
}

fs::path policy_dir(const pl::PipelineSpec& s) { return fs::path(s.output_dir) / "policies"; }

fxw::Policy load_named(const pl::PipelineSpec& s, const std::string& name) {
    const auto dir = policy_dir(s);
    return fxw::load_policy(dir / (name + ".fxw"), dir / (name + ".json"));
}

// Float policies stored under <out>/policies, by name.
std::vector<std::string> stored_policies(const pl::PipelineSpec& s) {
    std::vector<std::string> names;
    if (fs::exists(policy_dir(s)))
        for (const auto& e : fs::directory_iterator(policy_dir(s)))
            if (e.path().extension() == ".fxw")
                names.push_back(e.path().stem().string());
    std::sort(names.begin(), names.end());
    if (names.empty())
        throw InvalidInput("no trained policies under " + policy_dir(s).string());
    return names;
}

std::vector<std::vector<double>> verification_inputs(const pl::PipelineSpec& s, const fxw::Policy& p) {
    return pl::collect_observations(s, p.spec, p.weights, s.verify_inputs, pl::derive_seed(s.seed, pl::kVerifySalt), s.verify_inputs);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');)
        cells.push_back(c);
    if (!line.empty() && line.back() == ',')
        cells.emplace_back();
    return cells;
}

std::vector<pl::PolicyScore> read_scores(const fs::path& csv) {
    std::ifstream f(csv);
    if (!f)
        throw InvalidInput("cannot open " + csv.string() + " (run evaluate first)");
    std::string line;
    std::getline(f, line);
    const auto head = split(line);
    const auto col = [&](const std::string& name) {
        const auto it = std::find(head.begin(), head.end(), name);
        if (it == head.end())
            throw InvalidInput(csv.string() + " has no column " + name);
        return static_cast<std::size_t>(it - head.begin());
    };
    const auto name_col = col("policy"), rate_col = col("success_rate");
    std::vector<pl::PolicyScore> scores;
    while (std::getline(f, line)) {
        const auto cells = split(line);
        if (cells.size() <= rate_col || cells[rate_col].empty())
            continue;
        scores.push_back({cells[name_col], std::stod(cells[rate_col])});
    }
    return scores;
}

int cmd_train(const Globals& g) {
    const auto s = load(g);
    const auto records = pl::train_all(s);
    for (const auto& r : records) {
        std::cout << r.name << "  seed " << r.seed;
        if (!r.weights) {
            std::cout << "  FAILED: " << r.error << '\n';
            continue;
        }
        const auto dir = policy_dir(s);
        fs::create_directories(dir);
        fxw::save_policy(dir / (r.name + ".fxw"), dir / (r.name + ".json"), fxw::Policy{r.spec, *r.weights, {}});
        fs::create_directories(fs::path(s.output_dir) / "logs");
        std::ofstream log(fs::path(s.output_dir) / "logs" / (r.name + ".csv"));
        gym::write_log_csv(log, r.log);
        std::cout << "  " << r.log.size() << " episodes -> " << (dir / (r.name + ".fxw")).string() << '\n';
    }
    return pl::train_exit_code(records);
}

int cmd_evaluate(const Globals& g) {
    const auto s = load(g);
    std::ofstream f(fs::path(s.output_dir) / "evaluation.csv");
    f << "policy,success_rate,collisions,timeouts,mean_steps\n";
    for (const auto& name : stored_policies(s)) {
        const auto p = load_named(s, name);
        const auto e = gym::evaluate(p.weights, p.spec, s.arena, s.eval_episodes, s.eval_seed);
        f << name << ',' << e.success_rate << ',' << e.collisions << ',' << e.timeouts << ',' << e.mean_steps << '\n';
        std::cout << name << "  success " << e.success_rate << "  collisions " << e.collisions << "  timeouts "
                  << e.timeouts << '\n';
    }
    return 0;
}

int cmd_filter(const Globals& g, std::optional<double> threshold, const std::string& csv) {
    const auto s = load(g);
    const double t = threshold.value_or(s.success_threshold);
    if (!(t >= 0.0 && t <= 1.0))
        throw InvalidInput("threshold must lie in [0, 1]");
    const auto scores = read_scores(csv.empty() ? fs::path(s.output_dir) / "evaluation.csv" : fs::path(csv));
    const auto kept = pl::filter_policies(scores, t);
    std::ofstream f(fs::path(s.output_dir) / "filter.csv");
    f << "policy,success_rate,kept\n";
    for (const auto& p : scores) {
        const bool keep = std::any_of(kept.begin(), kept.end(), [&](const auto& k) { return k.name == p.name; });
        f << p.name << ',' << p.success_rate << ',' << int(keep) << '\n';
        std::cout << (keep ? "keep   " : "prune  ") << p.name << "  " << p.success_rate << '\n';
    }
    if (kept.empty()) {
        std::cerr << "error: no policy reached the success threshold " << t << '\n';
        return 1;
    }
    return 0;
}

int cmd_quantize(const Globals& g, const std::string& name) {
    const auto s = load(g);
    const auto p = load_named(s, name);
    const auto calib = pl::collect_observations(s, p.spec, p.weights, s.calibration_episodes, pl::derive_seed(s.seed, pl::kCalibrationSalt),
                                                pl::kCalibrationLimit);
    const auto attempts = pl::quantize_and_verify(s, p.spec, p.weights, calib, verification_inputs(s, p));
    bool any = false;
    for (const auto& q : attempts) {
        const bool pass = q.evaluated && q.report.pass;
        std::cout << q.bits << "-bit  ";
        if (q.evaluated)
            std::cout << "max_err " << q.report.max_err << "  tolerance " << s.tolerance_for(q.bits);
        else
            std::cout << "no candidate holds the network";
        std::cout << "  " << (pass ? "PASS" : "FAIL") << '\n';
        if (pass) {
            const auto path = policy_dir(s) / (name + ".q" + std::to_string(q.bits) + ".json");
            fxw::write_manifest(path, fxw::make_manifest(p.spec, fxw::scales_of(q.net)));
            std::cout << "  -> " << path.string() << '\n';
            any = true;
        }
    }
    if (!any)
        std::cerr << "error: no precision met the verification tolerance\n";
    return any ? 0 : 1;
}

int cmd_simulate(const Globals& g, const std::string& name, int pes, int lanes, int bits, const std::string& trace) {
    const auto s = load(g);
    const auto qpath = policy_dir(s) / (name + ".q" + std::to_string(bits) + ".json");
    if (!fs::exists(qpath))
        throw InvalidInput(qpath.string() + " not found (run quantize first)");
    const auto p = fxw::load_policy(policy_dir(s) / (name + ".fxw"), qpath);
    const auto net = fxw::rebuild_quantized(p);
    const auto cfg = sim::AcceleratorConfig::make(pes, lanes, bits, cost::auto_weight_buffer_kb(p.spec, pes, bits));
    auto acc = sim::configure(cfg, net);
    const auto input = verification_inputs(s, p).front();
    const auto r = sim::run_network(acc, net.quantize_input(input));
    const auto ref = quant::fc_forward_fp(p.spec, p.weights, input);
    const auto out = quant::dequantize(r.output);
    double err = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i)
        err = std::max(err, std::abs(out[i] - ref[i]));
    std::cout << cfg.id() << "  cycles " << r.cycle_count << "  latency " << cost::latency_us(cfg, p.spec)
              << " us  max_err " << err << "  action "
              << std::max_element(out.begin(), out.end()) - out.begin() << '\n';
    for (std::size_t l = 0; l < r.layers.size(); ++l)
        std::cout << "  layer " << l << "  " << r.layers[l].total() << " cycles\n";
    if (!trace.empty()) {
        std::ofstream f(trace);
        sim::write_trace(f, r.trace);
    }
    return 0;
}

int cmd_dse(const Globals& g, const std::string& name) {
    const auto s = load(g);
    const auto p = load_named(s, name);
    const auto coeffs = pl::resolve_coefficients(s);
    dse::DesignSpace space = s.space;
    space.precision_choices.clear();
    std::vector<quant::QuantizedNetwork> nets;
    for (int bits : s.space.precision_choices) {
        const auto qpath = policy_dir(s) / (name + ".q" + std::to_string(bits) + ".json");
        if (!fs::exists(qpath))
            continue;
        nets.push_back(fxw::rebuild_quantized(fxw::load_policy(policy_dir(s) / (name + ".fxw"), qpath)));
        space.precision_choices.push_back(bits);
    }
    if (nets.empty())
        throw InvalidInput("no verified quantized manifests for " + name + " (run quantize first)");
    dse::DseOptions opt{s.tolerance, s.effective_jobs(), coeffs.hash};
    const auto rep = dse::run_dse_quantized(space, nets, verification_inputs(s, p), coeffs.values, opt);
    const fs::path out = s.output_dir;
    {
        std::ofstream f(out / "results.csv");
        dse::write_results_csv(f, rep);
    }
    for (auto o : space.objectives)
        std::ofstream(out / ("pareto_" + dse::to_string(o) + ".svg")) << dse::render_svg(rep, o);
    const auto show = [&](const char* pair, const std::optional<std::size_t>& k) {
        if (!k)
            return;
        const auto& m = *rep.points[*k].metrics;
        std::cout << "knee " << pair << ": " << m.config_id << "  " << m.latency_us << " us  " << m.power_w << " W  "
                  << m.area_mm2 << " mm2  " << cost::to_string(m.vehicle_class) << '\n';
    };
    show("latency_power", rep.knee_lat_power);
    show("latency_area", rep.knee_lat_area);
    return rep.knee_lat_power || rep.knee_lat_area ? 0 : 1;
}

int cmd_pipeline(const Globals& g) {
    const auto s = load(g);
    const auto r = pl::run_pipeline(s, std::cout);
    std::cout << "manifest: " << (fs::path(s.output_dir) / "manifest.json").string() << "  status "
              << r.manifest.status << '\n';
    return r.knee ? 0 : 1;
}

int cmd_report(const Globals& g) {
    const fs::path dir = g.out.empty() ? load(g).output_dir : g.out;
    std::ifstream f(dir / "report.json");
    if (!f)
        throw InvalidInput("no report.json under " + dir.string());
    const auto j = nlohmann::json::parse(f);
    std::cout << pl::render_report(j);
    return j.contains("knee") && !j.at("knee").empty() ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"flexpilot: train navigation policies and size an accelerator for them"};
    app.set_version_flag("--version", std::string(pl::kToolVersion));
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "pipeline config (JSON) or a run manifest");
    app.add_option("--out", g.out, "output directory");
    app.add_option("--seed", g.seed, "master seed");
    app.add_option("--jobs", g.jobs, "parallel workers (default: CPU count)")->check(CLI::PositiveNumber);
    app.add_option("--tolerance", g.tolerance, "verification tolerance")->check(CLI::NonNegativeNumber);

    auto* train = app.add_subcommand("train", "train one policy per variant and instance");
    auto* evaluate = app.add_subcommand("evaluate", "greedy success rate of every stored policy");
    auto* filter = app.add_subcommand("filter", "prune policies below the success threshold");
    std::optional<double> threshold;
    std::string scores_csv;
    filter->add_option("--threshold", threshold, "success threshold (default: from config)");
    filter->add_option("--evaluation", scores_csv, "evaluation CSV (default: <out>/evaluation.csv)");
    auto* quantize = app.add_subcommand("quantize", "quantize a policy and verify it on the simulator");
    std::string policy;
    quantize->add_option("--policy", policy, "policy name under <out>/policies")->required();
    auto* simulate = app.add_subcommand("simulate", "run a quantized policy on one accelerator configuration");
    int pes = 8, lanes = 16, bits = 8;
    std::string trace;
    simulate->add_option("--policy", policy, "policy name")->required();
    simulate->add_option("--pes", pes, "processing elements");
    simulate->add_option("--lanes", lanes, "MAC lanes per PE");
    simulate->add_option("--bits", bits, "precision");
    simulate->add_option("--trace", trace, "write the cycle trace here");
    auto* explore = app.add_subcommand("dse", "explore the accelerator grid for a quantized policy");
    explore->add_option("--policy", policy, "policy name")->required();
    auto* pipe = app.add_subcommand("pipeline", "train, filter, quantize, verify, explore and report");
    auto* report = app.add_subcommand("report", "summarize a finished run");
    for (auto* sub : app.get_subcommands({}))
        sub->fallthrough();

    CLI11_PARSE(app, argc, argv);
    try {
        if (*train)
            return cmd_train(g);
        if (*evaluate)
            return cmd_evaluate(g);
        if (*filter)
            return cmd_filter(g, threshold, scores_csv);
        if (*quantize)
            return cmd_quantize(g, policy);
        if (*simulate)
            return cmd_simulate(g, policy, pes, lanes, bits, trace);
        if (*explore)
            return cmd_dse(g, policy);
        if (*pipe)
            return cmd_pipeline(g);
        if (*report)
            return cmd_report(g);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
