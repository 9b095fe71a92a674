#include "flexpilot/pipeline.hpp"

#include "flexpilot/error.hpp"
#include "flexpilot/fxw.hpp"
#include "flexpilot/hash.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace flexpilot::pipeline {

namespace fs = std::filesystem;

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

dse::Objective objective_from_string(const std::string& s) {
    if (s == "latency_power")
        return dse::Objective::latency_power;
    if (s == "latency_area")
        return dse::Objective::latency_area;
    throw InvalidInput("unknown objective pair '" + s + "'");
}

template <typename F>
void parallel_each(std::size_t n, unsigned jobs, F&& f) {
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++)
            f(i);
    };
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < jobs; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();
}

// Writes files under the output directory and remembers them for the manifest.
class Outputs {
public:
    explicit Outputs(fs::path root) : root_(std::move(root)) {}

    std::ofstream open(const std::string& rel) {
        const fs::path p = root_ / rel;
        fs::create_directories(p.parent_path());
        std::ofstream f(p, std::ios::binary);
        if (!f)
            throw Error("cannot write " + p.string());
        record(rel);
        return f;
    }
    void text(const std::string& rel, const std::string& content) { open(rel) << content; }
    void record(const std::string& rel) {
        if (std::find(files_.begin(), files_.end(), rel) == files_.end())
            files_.push_back(rel);
    }
    const fs::path& root() const { return root_; }
    const std::vector<std::string>& files() const { return files_; }

private:
    fs::path root_;
    std::vector<std::string> files_;
};

// An existing output directory is reused only if a previous run owns it.
void prepare_output_dir(const fs::path& dir) {
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir))
            throw InvalidInput(dir.string() + " exists and is not a directory");
        if (!fs::is_empty(dir)) {
            if (!fs::exists(dir / "manifest.json"))
                throw InvalidInput("output directory " + dir.string() +
                                   " is not empty and holds no previous run manifest");
            for (const auto& e : fs::directory_iterator(dir))
                fs::remove_all(e.path());
        }
    }
    fs::create_directories(dir);
}

nlohmann::json metrics_json(const dse::ParetoPoint& p) {
    const auto& c = p.candidate.config;
    const auto& m = *p.metrics;
    return {{"config_id", c.id()},
            {"pes", c.num_pes},
            {"lanes", c.mac_lanes},
            {"vector_width", c.vector_width},
            {"precision_bits", c.precision_bits},
            {"weight_buffer_kb", c.weight_buffer_kb},
            {"latency_us", m.latency_us},
            {"power_w", m.power_w},
            {"area_mm2", m.area_mm2},
            {"energy_uj", m.energy_uj},
            {"vehicle_class", cost::to_string(m.vehicle_class)}};
}

} // namespace

gym::DqnHyper PipelineSpec::hyper_for(const Variant& v) const {
    if (v.hyper_patch.is_null() || v.hyper_patch.empty())
        return hyper;
    auto j = gym::to_json(hyper);
    j.merge_patch(v.hyper_patch);
    return gym::dqn_hyper_from_json(j);
}

void PipelineSpec::validate() const {
    if (schema_version != 1)
        throw InvalidInput("unsupported pipeline schema_version " + std::to_string(schema_version));
    arena.validate();
    if (!(success_threshold > 0.0 && success_threshold <= 1.0))
        throw InvalidInput("success_threshold must lie in (0, 1]");
    if (eval_episodes == 0)
        throw InvalidInput("eval_episodes must be >= 1");
    if (variants.empty())
        throw InvalidInput("at least one network variant is required");
    std::set<std::string> names;
    for (const auto& v : variants) {
        if (v.name.empty() || v.name.find_first_of("/\\,\" ") != std::string::npos)
            throw InvalidInput("variant names must be non-empty and free of separators");
        if (!names.insert(v.name).second)
            throw InvalidInput("duplicate variant name " + v.name);
        quant::NetworkSpec::mlp(gym::kObservationSize, v.hidden, gym::kActionCount).validate();
        if (!v.hyper_patch.is_null() && !v.hyper_patch.is_object())
            throw InvalidInput("variant " + v.name + ": hyper must be an object");
        hyper_for(v).validate();
    }
    hyper.validate();
    if (instances == 0)
        throw InvalidInput("instances must be >= 1");
    space.validate();
    if (!(tolerance >= 0.0) || (tolerance_4bit && !(*tolerance_4bit >= 0.0)))
        throw InvalidInput("tolerance must be non-negative");
    if (!coefficients_path.empty() && !fs::exists(coefficients_path))
        throw InvalidInput("coefficients file " + coefficients_path + " does not exist");
    if (calibration_episodes == 0 || verify_inputs == 0)
        throw InvalidInput("calibration_episodes and verify_inputs must be >= 1");
    if (output_dir.empty())
        throw InvalidInput("output_dir must be set");
}

unsigned PipelineSpec::effective_jobs() const {
    return jobs ? jobs : std::max(1u, std::thread::hardware_concurrency());
}

double PipelineSpec::tolerance_for(int bits) const {
    return bits == 4 && tolerance_4bit ? *tolerance_4bit : tolerance;
}

nlohmann::json to_json(const PipelineSpec& s) {
    nlohmann::json variants = nlohmann::json::array();
    for (const auto& v : s.variants)
        variants.push_back({{"name", v.name}, {"hidden", v.hidden}, {"hyper", v.hyper_patch.is_null() ? nlohmann::json::object() : v.hyper_patch}});
    nlohmann::json objectives = nlohmann::json::array();
    for (auto o : s.space.objectives)
        objectives.push_back(dse::to_string(o));
    nlohmann::json accel = {{"pes", s.space.pe_choices},
                            {"lanes", s.space.lane_choices},
                            {"precisions", s.space.precision_choices},
                            {"objectives", objectives},
                            {"clock_mhz", s.space.clock_mhz},
                            {"tolerance", s.tolerance},
                            {"coefficients", s.coefficients_path},
                            {"calibration_episodes", s.calibration_episodes},
                            {"verify_inputs", s.verify_inputs}};
    accel["tolerance_4bit"] = s.tolerance_4bit ? nlohmann::json(*s.tolerance_4bit) : nlohmann::json();
    return {{"schema_version", s.schema_version},
            {"task",
             {{"arena", gym::to_json(s.arena)},
              {"success_threshold", s.success_threshold},
              {"eval_episodes", s.eval_episodes},
              {"eval_seed", s.eval_seed}}},
            {"training", {{"variants", variants}, {"hyper", gym::to_json(s.hyper)}, {"instances", s.instances}}},
            {"accelerator", accel},
            {"output_dir", s.output_dir},
            {"seed", s.seed},
            {"jobs", s.jobs}};
}

PipelineSpec spec_from_json(const nlohmann::json& in) {
    const nlohmann::json& j = in.contains("config") && in.contains("tool_version") ? in.at("config") : in;
    PipelineSpec s;
    try {
        s.schema_version = j.at("schema_version").get<int>();
        if (j.contains("task")) {
            const auto& t = j.at("task");
            if (t.contains("arena"))
                s.arena = gym::arena_spec_from_json(t.at("arena"));
            s.success_threshold = t.value("success_threshold", s.success_threshold);
            s.eval_episodes = t.value("eval_episodes", s.eval_episodes);
            s.eval_seed = t.value("eval_seed", s.eval_seed);
        }
        if (j.contains("training")) {
            const auto& t = j.at("training");
            if (t.contains("variants")) {
                s.variants.clear();
                for (const auto& v : t.at("variants"))
                    s.variants.push_back({v.at("name").get<std::string>(),
                                          v.at("hidden").get<std::vector<std::size_t>>(),
                                          v.value("hyper", nlohmann::json::object())});
            }
            if (t.contains("hyper"))
                s.hyper = gym::dqn_hyper_from_json(t.at("hyper"));
            s.instances = t.value("instances", s.instances);
        }
        if (j.contains("accelerator")) {
            const auto& a = j.at("accelerator");
            s.space.pe_choices = a.value("pes", s.space.pe_choices);
            s.space.lane_choices = a.value("lanes", s.space.lane_choices);
            s.space.precision_choices = a.value("precisions", s.space.precision_choices);
            if (a.contains("objectives")) {
                s.space.objectives.clear();
                for (const auto& o : a.at("objectives"))
                    s.space.objectives.push_back(objective_from_string(o.get<std::string>()));
            }
            s.space.clock_mhz = a.value("clock_mhz", s.space.clock_mhz);
            s.tolerance = a.value("tolerance", s.tolerance);
            if (a.contains("tolerance_4bit") && !a.at("tolerance_4bit").is_null())
                s.tolerance_4bit = a.at("tolerance_4bit").get<double>();
            s.coefficients_path = a.value("coefficients", s.coefficients_path);
            s.calibration_episodes = a.value("calibration_episodes", s.calibration_episodes);
            s.verify_inputs = a.value("verify_inputs", s.verify_inputs);
        }
        s.output_dir = j.value("output_dir", s.output_dir);
        s.seed = j.value("seed", s.seed);
        s.jobs = j.value("jobs", s.jobs);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed pipeline config: ") + e.what());
    }
    std::sort(s.space.precision_choices.begin(), s.space.precision_choices.end());
    return s;
}

PipelineSpec load_spec(const fs::path& path) {
    std::ifstream f(path);
    if (!f)
        throw Error("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidInput("config " + path.string() + " is not valid JSON: " + e.what());
    }
    auto s = spec_from_json(j);
    // Relative paths are taken from the config file's directory.
    const fs::path base = fs::absolute(path).parent_path();
    if (!s.coefficients_path.empty() && fs::path(s.coefficients_path).is_relative())
        s.coefficients_path = fs::weakly_canonical(base / s.coefficients_path).string();
    return s;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) { return mix(base, salt); }

std::string config_hash(const PipelineSpec& s) {
    // Where the run writes and how many workers it uses do not change its results.
    auto j = to_json(s);
    j.erase("output_dir");
    j.erase("jobs");
    return sha256_hex(j.dump());
}

std::vector<PolicyRecord> train_all(const PipelineSpec& s) {
    std::vector<PolicyRecord> records;
    for (std::size_t v = 0; v < s.variants.size(); ++v)
        for (std::size_t k = 0; k < s.instances; ++k) {
            PolicyRecord r;
            r.name = s.instances == 1 ? s.variants[v].name : s.variants[v].name + "-" + std::to_string(k);
            r.seed = mix(s.seed, v * 1000 + k);
            r.variant = v;
            r.spec = quant::NetworkSpec::mlp(gym::kObservationSize, s.variants[v].hidden, gym::kActionCount);
            records.push_back(std::move(r));
        }
    parallel_each(records.size(), s.effective_jobs(), [&](std::size_t i) {
        auto& r = records[i];
        gym::DqnHyper h = s.hyper_for(s.variants[r.variant]);
        h.seed = r.seed;
        gym::ArenaSpec arena = s.arena;
        arena.seed = mix(s.arena.seed, r.seed);
        try {
            auto out = gym::dqn_train(gym::randomized_arenas(arena), r.spec, h);
            r.weights = std::move(out.weights);
            r.log = std::move(out.log);
        } catch (const Error& e) {
            r.error = e.what();
        }
    });
    return records;
}

void evaluate_all(const PipelineSpec& s, std::vector<PolicyRecord>& policies) {
    parallel_each(policies.size(), s.effective_jobs(), [&](std::size_t i) {
        auto& p = policies[i];
        if (p.weights)
            p.eval = gym::evaluate(*p.weights, p.spec, s.arena, s.eval_episodes, s.eval_seed);
    });
}

int train_exit_code(const std::vector<PolicyRecord>& records) {
    return std::any_of(records.begin(), records.end(), [](const PolicyRecord& r) { return bool(r.weights); }) ? 0 : 1;
}

std::vector<PolicyScore> filter_policies(const std::vector<PolicyScore>& scores, double threshold) {
    std::vector<PolicyScore> kept;
    for (const auto& p : scores)
        if (p.success_rate >= threshold)
            kept.push_back(p);
    return kept;
}

std::vector<std::vector<double>> collect_observations(const PipelineSpec& s, const quant::NetworkSpec& spec,
                                                      const quant::WeightSet& w, std::size_t episodes,
                                                      std::uint64_t seed, std::size_t limit) {
    gym::ArenaSpec arena = s.arena;
    arena.seed = mix(s.arena.seed, seed);
    const auto arenas = gym::randomized_arenas(arena);
    const auto policy = gym::greedy_policy(spec, w);
    std::vector<std::vector<double>> out;
    for (std::size_t ep = 0; ep < episodes && out.size() < limit; ++ep) {
        const auto a = arenas(ep);
        std::mt19937_64 rng(mix(seed, ep));
        auto state = gym::reset(a, rng);
        while (!state.done && out.size() < limit) {
            const auto obs = gym::sense(a, state);
            out.emplace_back(obs.begin(), obs.end());
            state = gym::step(a, state, policy(obs, state, rng)).state;
        }
    }
    return out;
}

std::vector<QuantAttempt> quantize_and_verify(const PipelineSpec& s, const quant::NetworkSpec& spec,
                                              const quant::WeightSet& w,
                                              const std::vector<std::vector<double>>& calibration,
                                              const std::vector<std::vector<double>>& verification) {
    const auto candidates = dse::enumerate(s.space, spec);
    std::vector<QuantAttempt> out;
    for (int bits : s.space.precision_choices) {
        QuantAttempt q;
        q.bits = bits;
        q.net = quant::quantize_network(spec, w, calibration, bits);
        const auto host = std::find_if(candidates.begin(), candidates.end(), [&](const dse::Candidate& c) {
            return c.feasible && c.config.precision_bits == bits;
        });
        if (host != candidates.end()) {
            auto acc = sim::configure(host->config, q.net);
            q.report = sim::verify_against_reference(acc, spec, w, verification, s.tolerance_for(bits));
            q.evaluated = true;
        }
        out.push_back(std::move(q));
    }
    return out;
}

Coefficients resolve_coefficients(const PipelineSpec& s) {
    Coefficients c;
    if (s.coefficients_path.empty()) {
        c.values = cost::CostCoefficients::defaults();
        c.hash = sha256_hex(cost::to_json(c.values).dump(2) + "\n");
        c.source = "built-in";
    } else {
        c.values = cost::load(s.coefficients_path);
        c.hash = sha256_file(s.coefficients_path);
        c.source = s.coefficients_path;
    }
    return c;
}

nlohmann::json to_json(const RunManifest& m) {
    nlohmann::json seeds = nlohmann::json::object();
    for (const auto& [k, v] : m.seeds)
        seeds[k] = v;
    nlohmann::json timings = nlohmann::json::array();
    for (const auto& t : m.timings)
        timings.push_back({{"stage", t.stage}, {"seconds", t.seconds}});
    return {{"tool_version", m.tool_version},
            {"config_hash", m.config_hash},
            {"config", m.config},
            {"seeds", seeds},
            {"timings", timings},
            {"artifacts", m.artifacts},
            {"status", m.status},
            {"failed_stage", m.failed_stage},
            {"message", m.message}};
}

PipelineResult run_pipeline(const PipelineSpec& s, std::ostream& log) {
    s.validate();
    PipelineResult res;
    auto& man = res.manifest;
    man.config = to_json(s);
    man.config_hash = config_hash(s);
    man.seeds = {{"pipeline", s.seed}, {"arena", s.arena.seed}, {"eval", s.eval_seed}};

    const fs::path root = s.output_dir;
    prepare_output_dir(root);
    Outputs out(root);
    out.text("config.json", man.config.dump(2) + "\n");

    auto finish = [&] {
        out.record("manifest.json");
        man.artifacts = out.files();
        std::ofstream f(root / "manifest.json");
        f << to_json(man).dump(2) << '\n';
    };
    auto fail = [&](const std::string& stage, const std::string& msg) {
        man.status = "failed";
        man.failed_stage = stage;
        man.message = msg;
        log << "stage " << stage << " failed: " << msg << '\n';
        finish();
        return res;
    };
    using clock = std::chrono::steady_clock;
    auto timed = [&](const std::string& stage, auto&& body) {
        const auto t0 = clock::now();
        body();
        man.timings.push_back({stage, std::chrono::duration<double>(clock::now() - t0).count()});
    };

    try {
        // train
        std::vector<PolicyRecord> policies;
        timed("train", [&] { policies = train_all(s); });
        for (const auto& p : policies) {
            man.seeds.emplace_back("train:" + p.name, p.seed);
            if (!p.weights) {
                log << "train " << p.name << ": failed (" << p.error << ")\n";
                continue;
            }
            fs::create_directories(root / "policies");
            fxw::save_policy(root / "policies" / (p.name + ".fxw"), root / "policies" / (p.name + ".json"),
                             fxw::Policy{p.spec, *p.weights, std::nullopt});
            out.record("policies/" + p.name + ".fxw");
            out.record("policies/" + p.name + ".json");
            auto f = out.open("logs/" + p.name + ".csv");
            gym::write_log_csv(f, p.log);
            log << "train " << p.name << ": " << p.log.size() << " episodes\n";
        }
        if (std::none_of(policies.begin(), policies.end(), [](const PolicyRecord& p) { return bool(p.weights); }))
            return fail("train", "every training instance failed");

        // evaluate + filter
        timed("evaluate", [&] { evaluate_all(s, policies); });
        std::vector<PolicyScore> scores;
        for (const auto& p : policies)
            if (p.eval)
                scores.push_back({p.name, p.eval->success_rate});
        const auto kept = filter_policies(scores, s.success_threshold);
        {
            auto f = out.open("evaluation.csv");
            f << "policy,seed,hidden,status,success_rate,collisions,timeouts,mean_steps,kept\n";
            for (const auto& p : policies) {
                std::string hidden;
                for (std::size_t l = 0; l + 1 < p.spec.layers.size(); ++l)
                    hidden += (l ? "-" : "") + std::to_string(p.spec.layers[l].out_dim);
                const bool keep = std::any_of(kept.begin(), kept.end(),
                                              [&](const PolicyScore& k) { return k.name == p.name; });
                f << p.name << ',' << p.seed << ',' << hidden << ',' << (p.weights ? "trained" : "failed") << ',';
                if (p.eval)
                    f << num(p.eval->success_rate) << ',' << p.eval->collisions << ',' << p.eval->timeouts << ','
                      << num(p.eval->mean_steps);
                else
                    f << ",,,";
                f << ',' << int(keep) << '\n';
                if (p.eval)
                    log << "evaluate " << p.name << ": success " << p.eval->success_rate << '\n';
            }
        }
        if (kept.empty())
            return fail("filter", "no policy reached the success threshold " + num(s.success_threshold));

        const auto best = std::max_element(kept.begin(), kept.end(), [](const PolicyScore& a, const PolicyScore& b) {
            return a.success_rate < b.success_rate || (a.success_rate == b.success_rate && a.name > b.name);
        });
        res.selected_policy = best->name;
        const auto& chosen = *std::find_if(policies.begin(), policies.end(),
                                           [&](const PolicyRecord& p) { return p.name == best->name; });

        // quantize + verify, falling back from 4 to 8 bits
        std::vector<QuantAttempt> attempts;
        std::vector<std::vector<double>> verification;
        timed("quantize", [&] {
            const auto calibration =
                collect_observations(s, chosen.spec, *chosen.weights, s.calibration_episodes, mix(s.seed, kCalibrationSalt),
                                                    kCalibrationLimit);
            verification =
                collect_observations(s, chosen.spec, *chosen.weights, s.verify_inputs, mix(s.seed, kVerifySalt), s.verify_inputs);
            attempts = quantize_and_verify(s, chosen.spec, *chosen.weights, calibration, verification);
        });
        std::vector<quant::QuantizedNetwork> passing;
        dse::DesignSpace space = s.space;
        space.precision_choices.clear();
        {
            auto f = out.open("quantization.csv");
            f << "policy,bits,evaluated,max_err,tolerance,pass\n";
            for (const auto& q : attempts) {
                const bool pass = q.evaluated && q.report.pass;
                f << chosen.name << ',' << q.bits << ',' << int(q.evaluated) << ','
                  << (q.evaluated ? num(q.report.max_err) : "") << ',' << num(s.tolerance_for(q.bits)) << ','
                  << int(pass) << '\n';
                log << "verify " << q.bits << "-bit: "
                    << (q.evaluated ? "max_err " + num(q.report.max_err) : std::string("no host fits")) << " -> "
                    << (pass ? "pass" : "fail") << '\n';
                if (!pass)
                    continue;
                passing.push_back(q.net);
                space.precision_choices.push_back(q.bits);
                const auto rel = "policies/" + chosen.name + ".q" + std::to_string(q.bits) + ".json";
                fxw::write_manifest(root / rel, fxw::make_manifest(chosen.spec, fxw::scales_of(q.net)));
                out.record(rel);
            }
        }
        if (passing.empty())
            return fail("verify", "no precision met the verification tolerance");

        // explore
        const auto coeffs = resolve_coefficients(s);
        dse::DseOptions opt;
        opt.tolerance = s.tolerance;
        opt.jobs = s.effective_jobs();
        opt.coefficients_hash = coeffs.hash;
        timed("dse", [&] {
            res.dse = dse::run_dse_quantized(space, passing, verification, coeffs.values, opt);
        });
        auto& rep = *res.dse;
        {
            auto f = out.open("results.csv");
            dse::write_results_csv(f, rep);
        }
        for (auto o : space.objectives)
            out.text("pareto_" + dse::to_string(o) + ".svg", dse::render_svg(rep, o));

        // report
        nlohmann::json report = {{"selected_policy", chosen.name},
                                 {"success_rate", chosen.eval->success_rate},
                                 {"coefficients_source", coeffs.source},
                                 {"coefficients_hash", coeffs.hash},
                                 {"coefficients", cost::to_json(coeffs.values)}};
        nlohmann::json qa = nlohmann::json::array();
        for (const auto& q : attempts)
            qa.push_back({{"bits", q.bits},
                          {"evaluated", q.evaluated},
                          {"max_err", q.evaluated ? nlohmann::json(q.report.max_err) : nlohmann::json()},
                          {"tolerance", s.tolerance_for(q.bits)},
                          {"pass", q.evaluated && q.report.pass}});
        report["quantization"] = qa;
        nlohmann::json knees = nlohmann::json::object();
        if (rep.knee_lat_power)
            knees["latency_power"] = metrics_json(rep.points[*rep.knee_lat_power]);
        if (rep.knee_lat_area)
            knees["latency_area"] = metrics_json(rep.points[*rep.knee_lat_area]);
        report["knee"] = knees;
        const dse::ParetoPoint* frugal = nullptr;
        for (const auto& p : rep.points)
            if (p.metrics && (!frugal || p.metrics->energy_uj < frugal->metrics->energy_uj))
                frugal = &p;
        if (frugal)
            report["min_energy"] = metrics_json(*frugal);
        out.text("report.json", report.dump(2) + "\n");

        res.knee = !knees.empty();
        if (!res.knee)
            return fail("dse", "no feasible candidate produced a knee");
        log << render_report(report);
    } catch (const Error& e) {
        return fail(man.timings.empty() ? "train" : "after " + man.timings.back().stage, e.what());
    }
    man.status = "complete";
    finish();
    return res;
}

std::string render_report(const nlohmann::json& r) {
    std::ostringstream os;
    os << "policy " << r.value("selected_policy", std::string("?")) << " (success "
       << num(r.value("success_rate", 0.0)) << ")\n";
    if (r.contains("knee"))
        for (const auto& [pair, k] : r.at("knee").items())
            os << "knee " << pair << ": " << k.at("config_id").get<std::string>() << "  latency "
               << num(k.at("latency_us").get<double>()) << " us, power " << num(k.at("power_w").get<double>())
               << " W, area " << num(k.at("area_mm2").get<double>()) << " mm2, energy "
               << num(k.at("energy_uj").get<double>()) << " uJ, class "
               << k.at("vehicle_class").get<std::string>() << '\n';
    if (r.contains("min_energy"))
        os << "min energy: " << r.at("min_energy").at("config_id").get<std::string>() << " ("
           << num(r.at("min_energy").at("energy_uj").get<double>()) << " uJ)\n";
    os << "coefficients " << r.value("coefficients_source", std::string("?")) << " sha256 "
       << r.value("coefficients_hash", std::string("?")) << '\n';
    return os.str();
}

} // namespace flexpilot::pipeline
