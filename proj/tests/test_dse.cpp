#include "flexpilot/dse.hpp"
#include "flexpilot/error.hpp"
#include "flexpilot/hash.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

using namespace flexpilot;
using namespace flexpilot::dse;
using flexpilot::quant::NetworkSpec;

namespace {

std::vector<bool> brute_front(const std::vector<Point>& pts) {
    std::vector<bool> out(pts.size(), true);
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = 0; j < pts.size(); ++j) {
            const auto& p = pts[i];
            const auto& q = pts[j];
            if (q.x <= p.x && q.y <= p.y && (q.x != p.x || q.y != p.y))
                out[i] = false;
        }
    return out;
}

std::vector<Point> random_points(std::mt19937_64& rng, std::size_t n) {
    // Coarse integer grid forces plenty of ties and duplicates.
    std::uniform_int_distribution<int> coord(0, 30);
    std::vector<Point> pts(n);
    for (auto& p : pts)
        p = {double(coord(rng)), double(coord(rng))};
    return pts;
}

std::vector<std::vector<double>> inputs(std::size_t n, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1, 1);
    std::vector<std::vector<double>> xs(n, std::vector<double>(dim));
    for (auto& x : xs)
        for (auto& v : x)
            v = d(rng);
    return xs;
}

} // namespace

TEST_CASE("enumerate: product sizes and rejection reasons") {
    DesignSpace small;
    small.pe_choices = {2, 4};
    small.lane_choices = {4};
    small.precision_choices = {8};
    const auto toy = NetworkSpec::mlp(160, {64}, 25);
    CHECK(enumerate(small, toy).size() == 2);

    const auto all = enumerate(DesignSpace{}, toy);
    CHECK(all.size() == 30);
    for (std::size_t i = 1; i < all.size(); ++i)
        CHECK(all[i - 1].config.id() < all[i].config.id());

    const auto fig = NetworkSpec::mlp(160, {4096, 2048, 512}, 25);
    for (const auto& c : enumerate(DesignSpace{}, fig)) {
        if (c.config.num_pes == 2) {
            CHECK_FALSE(c.feasible);
            CHECK(c.reject_reason.find("PE") != std::string::npos);
        }
        if (c.config.num_pes == 32)
            CHECK(c.feasible);
    }

    DesignSpace empty;
    empty.pe_choices.clear();
    CHECK_THROWS_AS(enumerate(empty, toy), InvalidInput);
    DesignSpace illegal;
    illegal.pe_choices = {3};
    CHECK_THROWS_AS(enumerate(illegal, toy), InvalidInput);
}

TEST_CASE("pareto_front: examples") {
    std::vector<Point> one = {{3, 4}};
    CHECK(pareto_front(one) == std::vector<bool>{true});
    std::vector<Point> ex = {{10, 1}, {5, 2}, {7, 3}};
    CHECK(pareto_front(ex) == std::vector<bool>{true, true, false});
    std::vector<Point> dup = {{1, 1}, {1, 1}, {2, 2}};
    CHECK(pareto_front(dup) == std::vector<bool>{true, true, false});
    std::vector<Point> bad = {{1, std::nan("")}};
    CHECK_THROWS_AS(pareto_front(bad), InvalidInput);
    CHECK_THROWS_AS(pareto_front(std::span<const Point>()), InvalidInput);
}

TEST_CASE("pareto_front agrees with the brute-force oracle on random sets") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> size(1, 200);
    for (int t = 0; t < 1000; ++t) {
        const auto pts = random_points(rng, size(rng));
        REQUIRE(pareto_front(pts) == brute_front(pts));
    }
}

TEST_CASE("pareto_front is invariant under positive affine rescaling") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> a(0.01, 100), b(-50, 50);
    for (int t = 0; t < 200; ++t) {
        auto pts = random_points(rng, 60);
        const auto base = pareto_front(pts);
        const double ax = a(rng), bx = b(rng), ay = a(rng), by = b(rng);
        for (auto& p : pts)
            p = {ax * p.x + bx, ay * p.y + by};
        REQUIRE(pareto_front(pts) == base);
    }
}

TEST_CASE("knee: examples") {
    std::vector<Point> one = {{2, 3}};
    CHECK(knee(one) == 0);
    std::vector<Point> f = {{0, 1}, {0.1, 0.1}, {1, 0}};
    CHECK(knee(f) == 1);
    std::vector<Point> shuffled = {{1, 0}, {0.1, 0.1}, {0, 1}};
    CHECK(knee(shuffled) == 1);
    CHECK_THROWS_AS(knee(std::span<const Point>()), InvalidInput);
}

TEST_CASE("knee: member of the front, invariant under rescaling") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> a(0.01, 100), b(-50, 50);
    for (int t = 0; t < 300; ++t) {
        const auto pts = random_points(rng, 40);
        const auto flags = pareto_front(pts);
        std::vector<Point> front;
        for (std::size_t i = 0; i < pts.size(); ++i)
            if (flags[i])
                front.push_back(pts[i]);
        const auto k = knee(front);
        REQUIRE(k < front.size());
        const Point chosen = front[k];

        const double ax = a(rng), bx = b(rng), ay = a(rng), by = b(rng);
        auto scaled = front;
        for (auto& p : scaled)
            p = {ax * p.x + bx, ay * p.y + by};
        const Point again = front[knee(scaled)];
        REQUIRE(again.x == chosen.x);
        REQUIRE(again.y == chosen.y);
    }
}

TEST_CASE("run_dse: one-config space is front and knee") {
    const auto spec = NetworkSpec::mlp(160, {64}, 25);
    const auto w = quant::WeightSet::uniform(spec, -0.1f, 0.1f, 3);
    DesignSpace space;
    space.pe_choices = {8};
    space.lane_choices = {16};
    space.precision_choices = {8};
    DseOptions opt;
    opt.tolerance = 1e9;
    const auto rep = run_dse(space, spec, w, inputs(8, 160, 1), inputs(4, 160, 2),
                             cost::CostCoefficients::defaults(), opt);
    REQUIRE(rep.points.size() == 1);
    const auto& p = rep.points[0];
    CHECK(p.pareto_lat_power);
    CHECK(p.pareto_lat_area);
    CHECK(p.knee_lat_power);
    CHECK(p.knee_lat_area);
    CHECK(rep.knee_lat_power == std::optional<std::size_t>(0));
}

TEST_CASE("run_dse: full grid on the toy net emits two fronts, deterministically") {
    const auto spec = NetworkSpec::mlp(160, {64}, 25);
    const auto w = quant::WeightSet::uniform(spec, -0.1f, 0.1f, 5);
    DseOptions opt;
    opt.tolerance = 1e9;
    opt.coefficients_hash = sha256_hex("coefficients");
    opt.jobs = 3;
    const auto coeffs = cost::CostCoefficients::defaults();
    const auto calib = inputs(16, 160, 1), verify = inputs(4, 160, 2);
    const auto rep = run_dse(DesignSpace{}, spec, w, calib, verify, coeffs, opt);
    REQUIRE(rep.points.size() == 30);
    CHECK(rep.coefficients_hash == opt.coefficients_hash);

    int lp = 0, la = 0, klp = 0, kla = 0;
    for (const auto& p : rep.points) {
        REQUIRE(p.candidate.feasible);
        REQUIRE(p.metrics.has_value());
        REQUIRE(p.simulated_cycles == sim::network_cycles(spec, p.candidate.config));
        lp += p.pareto_lat_power;
        la += p.pareto_lat_area;
        klp += p.knee_lat_power;
        kla += p.knee_lat_area;
        if (p.knee_lat_power)
            CHECK(p.pareto_lat_power);
        if (p.knee_lat_area)
            CHECK(p.pareto_lat_area);
    }
    CHECK(lp >= 1);
    CHECK(la >= 1);
    CHECK(klp == 1);
    CHECK(kla == 1);

    // Flags agree with an independent dominance check over the reported metrics.
    std::vector<Point> pw, ar;
    for (const auto& p : rep.points) {
        pw.push_back({p.metrics->latency_us, p.metrics->power_w});
        ar.push_back({p.metrics->latency_us, p.metrics->area_mm2});
    }
    const auto bp = brute_front(pw), ba = brute_front(ar);
    for (std::size_t i = 0; i < rep.points.size(); ++i) {
        CHECK(rep.points[i].pareto_lat_power == bp[i]);
        CHECK(rep.points[i].pareto_lat_area == ba[i]);
    }

    opt.jobs = 1;
    const auto again = run_dse(DesignSpace{}, spec, w, calib, verify, coeffs, opt);
    std::ostringstream a, b;
    write_results_csv(a, rep);
    write_results_csv(b, again);
    CHECK(a.str() == b.str());

    const auto svg = render_svg(rep, Objective::latency_power);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("results CSV header and infeasible rows") {
    const auto fig = NetworkSpec::mlp(160, {4096, 2048, 512}, 25);
    DseReport rep;
    for (auto& c : enumerate(DesignSpace{}, fig)) {
        ParetoPoint p;
        p.candidate = c;
        rep.points.push_back(p);
    }
    std::ostringstream os;
    write_results_csv(os, rep);
    std::istringstream is(os.str());
    std::string header, row;
    std::getline(is, header);
    CHECK(header ==
          "config_id,pes,lanes,vector_width,precision_bits,weight_buffer_kb,latency_us,power_w,"
          "area_mm2,energy_uj,pareto_lat_power,pareto_lat_area,knee_lat_power,knee_lat_area,"
          "vehicle_class,feasible,reject_reason");
    std::getline(is, row);
    CHECK(row.rfind("P02-L04-B4,2,4,16,4,1024,,,,,", 0) == 0);
}

TEST_CASE("run_dse: verification failure is raised") {
    const auto spec = NetworkSpec::mlp(160, {64}, 25);
    const auto w = quant::WeightSet::uniform(spec, -1, 1, 3);
    DesignSpace space;
    space.pe_choices = {8};
    space.lane_choices = {16};
    space.precision_choices = {4};
    DseOptions opt;
    opt.tolerance = 1e-12;
    CHECK_THROWS_AS(run_dse(space, spec, w, inputs(8, 160, 1), inputs(4, 160, 2),
                            cost::CostCoefficients::defaults(), opt),
                    VerificationFailed);
}
