#include "flexpilot/dse.hpp"
#include "flexpilot/error.hpp"
#include "flexpilot/fxw.hpp"
#include "flexpilot/pipeline.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace flexpilot;
using namespace flexpilot::pipeline;
namespace fs = std::filesystem;

namespace {

const fs::path kData = FLEXPILOT_DATA_DIR;

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("flexpilot_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

// Toy setup with a short training budget, for stage-level checks.
PipelineSpec quick_spec(const fs::path& out) {
    auto s = load_spec(kData / "toy_pipeline.json");
    s.hyper.total_steps = 1500;
    s.hyper.learning_starts = 500;
    s.eval_episodes = 10;
    s.output_dir = out.string();
    s.jobs = 1;
    return s;
}

int cli(const std::string& args) {
    const std::string cmd = std::string(FLEXPILOT_CLI) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

void write_json(const fs::path& p, const nlohmann::json& j) {
    fs::create_directories(p.parent_path());
    std::ofstream(p) << j.dump(2);
}

} // namespace

TEST_CASE("filter keeps rates at or above the threshold") {
    const std::vector<PolicyScore> scores = {{"a", 0.91}, {"b", 0.40}};
    const auto kept = filter_policies(scores, 0.8);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].name == "a");
    CHECK(filter_policies(scores, 0.0).size() == 2);
    CHECK(filter_policies({{"a", 0.91}}, 0.95).empty());
    CHECK(filter_policies({{"a", 0.8}}, 0.8).size() == 1);
}

TEST_CASE("filter subcommand fails loudly when nothing survives") {
    const auto dir = scratch("filter");
    fs::create_directories(dir);
    std::ofstream(dir / "evaluation.csv") << "policy,success_rate\na,0.91\n";
    CHECK(cli("--out " + dir.string() + " filter --threshold 0.95") == 1);
    CHECK(cli("--out " + dir.string() + " filter --threshold 0.8") == 0);
    CHECK(slurp(dir / "filter.csv") == "policy,success_rate,kept\na,0.91,1\n");
}

TEST_CASE("spec JSON round trip and manifest form") {
    auto s = load_spec(kData / "toy_pipeline.json");
    s.variants.push_back({"wide", {128, 64}, {{"learning_rate", 5e-4}}});
    s.tolerance_4bit.reset();
    const auto back = spec_from_json(to_json(s));
    CHECK(to_json(back) == to_json(s));
    CHECK(config_hash(back) == config_hash(s));
    CHECK(back.hyper_for(back.variants[1]).learning_rate == 5e-4);
    CHECK(back.hyper_for(back.variants[0]).learning_rate == s.hyper.learning_rate);

    RunManifest m;
    m.config = to_json(s);
    CHECK(to_json(spec_from_json(to_json(m))) == to_json(s));

    auto moved = s;
    moved.output_dir = "elsewhere";
    moved.jobs = 7;
    CHECK(config_hash(moved) == config_hash(s));
    moved.seed = 2;
    CHECK(config_hash(moved) != config_hash(s));
}

TEST_CASE("spec validation") {
    auto base = load_spec(kData / "toy_pipeline.json");
    CHECK_NOTHROW(base.validate());
    CHECK(fs::path(base.coefficients_path).is_absolute());
    auto s = base;
    s.success_threshold = 0.0;
    CHECK_THROWS_AS(s.validate(), InvalidInput);
    s = base;
    s.success_threshold = 1.01;
    CHECK_THROWS_AS(s.validate(), InvalidInput);
    s = base;
    s.variants.clear();
    CHECK_THROWS_AS(s.validate(), InvalidInput);
    s = base;
    s.variants.push_back(s.variants[0]);
    CHECK_THROWS_AS(s.validate(), InvalidInput);
    s = base;
    s.coefficients_path = "/nonexistent/coefficients.json";
    CHECK_THROWS_AS(s.validate(), InvalidInput);
    s = base;
    s.variants[0].hyper_patch = {{"gamma", 1.5}};
    CHECK_THROWS_AS(s.validate(), InvalidInput);
    CHECK_THROWS_AS(spec_from_json(nlohmann::json{{"task", {}}}), InvalidInput);
    CHECK_THROWS_AS(load_spec("/nonexistent.json"), Error);
}

TEST_CASE("tolerance per precision") {
    PipelineSpec s;
    s.tolerance = 1e-3;
    CHECK(s.tolerance_for(4) == 1e-3);
    s.tolerance_4bit = 0.5;
    CHECK(s.tolerance_for(4) == 0.5);
    CHECK(s.tolerance_for(8) == 1e-3);
}

TEST_CASE("three variants train with distinct seeds") {
    auto s = quick_spec(scratch("three"));
    s.variants = {{"a", {32}, {}}, {"b", {32}, {}}, {"c", {16, 16}, {}}};
    const auto records = train_all(s);
    REQUIRE(records.size() == 3);
    std::set<std::uint64_t> seeds;
    for (const auto& r : records) {
        CHECK(r.weights.has_value());
        CHECK_FALSE(r.log.empty());
        seeds.insert(r.seed);
    }
    CHECK(seeds.size() == 3);
    CHECK(train_exit_code(records) == 0);

    // Instances of one variant are independent too.
    s.variants = {{"a", {32}, {}}};
    s.instances = 2;
    const auto inst = train_all(s);
    REQUIRE(inst.size() == 2);
    CHECK(inst[0].name == "a-0");
    CHECK(inst[0].seed != inst[1].seed);
    CHECK(inst[0].log.back().cumulative_reward != inst[1].log.back().cumulative_reward);
}

TEST_CASE("a diverging variant is recorded without aborting its siblings") {
    const auto dir = scratch("diverge");
    auto s = quick_spec(dir);
    s.variants = {{"ok", {32}, {}}, {"bad", {32}, {{"learning_rate", 1e30}, {"grad_clip", 0.0}}}};
    const auto records = train_all(s);
    REQUIRE(records.size() == 2);
    CHECK(records[0].weights.has_value());
    CHECK_FALSE(records[1].weights.has_value());
    CHECK(records[1].error.find("non-finite") != std::string::npos);
    CHECK(train_exit_code(records) == 0);
    CHECK(train_exit_code({records[1]}) != 0);

    const auto cfg = dir / "cfg.json";
    write_json(cfg, to_json(s));
    CHECK(cli("--config " + cfg.string() + " --out " + dir.string() + " train") == 0);
    CHECK(fs::exists(dir / "policies" / "ok.fxw"));
    CHECK_FALSE(fs::exists(dir / "policies" / "bad.fxw"));

    auto all_bad = s;
    all_bad.variants = {s.variants[1]};
    write_json(cfg, to_json(all_bad));
    CHECK(cli("--config " + cfg.string() + " --out " + (dir / "x").string() + " train") != 0);
}

TEST_CASE("a failed stage halts the pipeline and the manifest says where") {
    const auto dir = scratch("halt");
    auto s = quick_spec(dir);
    s.success_threshold = 1.0;
    std::ostringstream log;
    const auto r = run_pipeline(s, log);
    CHECK_FALSE(r.knee);
    const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(m.at("status") == "failed");
    CHECK(m.at("failed_stage") == "filter");
    CHECK_FALSE(fs::exists(dir / "results.csv"));

    const auto cfg = scratch("halt_cfg.json");
    s.success_threshold = 1.0;
    write_json(cfg, to_json(s));
    CHECK(cli("--config " + cfg.string() + " pipeline") == 1);
}

TEST_CASE("output directory safety") {
    const auto dir = scratch("foreign");
    fs::create_directories(dir);
    std::ofstream(dir / "precious.txt") << "keep";
    std::ostringstream log;
    CHECK_THROWS_AS(run_pipeline(quick_spec(dir), log), InvalidInput);
    CHECK(fs::exists(dir / "precious.txt"));
}

namespace {

struct ToyRun {
    fs::path dir;
    PipelineSpec spec;
    PipelineResult result;
    std::string log;
};

// The full toy run is shared by the checks below.
const ToyRun& toy_run() {
    static const ToyRun run = [] {
        ToyRun t;
        t.dir = scratch("toy");
        t.spec = load_spec(kData / "toy_pipeline.json");
        t.spec.output_dir = t.dir.string();
        std::ostringstream log;
        t.result = run_pipeline(t.spec, log);
        t.log = log.str();
        return t;
    }();
    return run;
}

} // namespace

TEST_CASE("toy pipeline end to end") {
    const auto& t = toy_run();
    const auto& dir = t.dir;
    const auto& s = t.spec;
    const auto& r = t.result;
    INFO(t.log);
    REQUIRE(r.knee);
    CHECK(r.manifest.status == "complete");
    CHECK(r.selected_policy == "toy");

    SUBCASE("manifest lists exactly the files on disk") {
        const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
        std::set<std::string> listed;
        for (const auto& a : m.at("artifacts"))
            listed.insert(a.get<std::string>());
        std::set<std::string> present;
        for (const auto& e : fs::recursive_directory_iterator(dir))
            if (e.is_regular_file())
                present.insert(fs::relative(e.path(), dir).generic_string());
        CHECK(listed == present);
        for (const char* f : {"results.csv", "report.json", "pareto_latency_power.svg", "pareto_latency_area.svg",
                              "evaluation.csv", "quantization.csv", "config.json", "manifest.json"})
            CHECK(present.count(f) == 1);
        CHECK(m.at("tool_version") == kToolVersion);
        CHECK(m.at("config_hash") == config_hash(s));
        CHECK(m.at("timings").size() == 4);
    }

    SUBCASE("knee is a front member and carries a vehicle class") {
        const auto& rep = *r.dse;
        REQUIRE(rep.knee_lat_power);
        REQUIRE(rep.knee_lat_area);
        CHECK(rep.points[*rep.knee_lat_power].pareto_lat_power);
        CHECK(rep.points[*rep.knee_lat_area].pareto_lat_area);
        const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
        CHECK(report.at("knee").at("latency_power").at("config_id") ==
              rep.points[*rep.knee_lat_power].candidate.config.id());
        CHECK(report.at("knee").at("latency_power").contains("vehicle_class"));
        CHECK(report.at("coefficients_hash") == rep.coefficients_hash);
        // The energy proxy is the minimum over all feasible candidates.
        double best = 1e300;
        for (const auto& p : rep.points)
            if (p.metrics)
                best = std::min(best, p.metrics->energy_uj);
        CHECK(report.at("min_energy").at("energy_uj").get<double>() == best);
    }

    SUBCASE("4-bit falls back to 8-bit") {
        CHECK(slurp(dir / "quantization.csv").find("toy,4,1,") != std::string::npos);
        const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
        for (const auto& q : report.at("quantization"))
            CHECK(q.at("pass").get<bool>() == (q.at("bits") == 8));
        for (const auto& p : r.dse->points)
            CHECK(p.candidate.config.precision_bits == 8);
    }

    SUBCASE("report subcommand and rerun from manifest") {
        CHECK(cli("report --out " + dir.string()) == 0);
        const auto again = scratch("toy_again");
        CHECK(cli("--config " + (dir / "manifest.json").string() + " --out " + again.string() + " pipeline") == 0);
        CHECK(slurp(again / "results.csv") == slurp(dir / "results.csv"));
        CHECK(slurp(again / "evaluation.csv") == slurp(dir / "evaluation.csv"));
        // A previous run's directory may be reused.
        CHECK(cli("--config " + (dir / "manifest.json").string() + " --out " + again.string() + " pipeline") == 0);
    }
}

TEST_CASE("every precision fails verification at zero tolerance") {
    const auto& t = toy_run();
    auto s = t.spec;
    s.tolerance = 0.0;
    s.tolerance_4bit.reset();
    const auto p = fxw::load_policy(t.dir / "policies" / "toy.fxw", t.dir / "policies" / "toy.json");
    const auto obs = collect_observations(s, p.spec, p.weights, 2, 3, 200);
    CHECK(obs.size() == 200);
    const auto attempts = quantize_and_verify(s, p.spec, p.weights, obs, obs);
    REQUIRE(attempts.size() == 2);
    CHECK(attempts[0].bits == 4);
    CHECK(attempts[1].bits == 8);
    for (const auto& q : attempts) {
        CHECK(q.evaluated);
        CHECK_FALSE(q.report.pass);
        CHECK(q.report.max_err > 0.0);
    }
}
