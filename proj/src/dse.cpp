#include "flexpilot/dse.hpp"

#include "flexpilot/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

namespace flexpilot::dse {

std::string to_string(Objective o) {
    return o == Objective::latency_power ? "latency_power" : "latency_area";
}

void DesignSpace::validate() const {
    if (pe_choices.empty() || lane_choices.empty() || precision_choices.empty())
        throw InvalidInput("design space choice lists must be non-empty");
    if (objectives.empty())
        throw InvalidInput("design space needs at least one objective pair");
    // Probe each choice through the config validator so illegal values are reported early.
    for (int p : pe_choices)
        sim::AcceleratorConfig::make(p, lane_choices.front(), precision_choices.front());
    for (int l : lane_choices)
        sim::AcceleratorConfig::make(pe_choices.front(), l, precision_choices.front());
    for (int b : precision_choices)
        sim::AcceleratorConfig::make(pe_choices.front(), lane_choices.front(), b);
    if (!(clock_mhz > 0.0))
        throw InvalidInput("clock_mhz must be > 0");
}

std::vector<Candidate> enumerate(const DesignSpace& space, const quant::NetworkSpec& spec) {
    space.validate();
    spec.validate();
    std::vector<Candidate> out;
    for (int p : space.pe_choices)
        for (int l : space.lane_choices)
            for (int b : space.precision_choices) {
                Candidate c;
                c.config = sim::AcceleratorConfig::make(p, l, b, cost::auto_weight_buffer_kb(spec, p, b));
                c.config.clock_mhz = space.clock_mhz;
                try {
                    sim::check_capacity(spec, c.config);
                } catch (const CapacityExceeded& e) {
                    c.feasible = false;
                    c.reject_reason = e.what();
                }
                out.push_back(std::move(c));
            }
    if (out.empty())
        throw InvalidInput("design space is empty");
    std::sort(out.begin(), out.end(),
              [](const Candidate& a, const Candidate& b) { return a.config.id() < b.config.id(); });
    auto dup = std::adjacent_find(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
        return a.config.id() == b.config.id();
    });
    if (dup != out.end())
        throw InvalidInput("design space lists configuration " + dup->config.id() + " twice");
    return out;
}

std::vector<bool> pareto_front(std::span<const Point> points) {
    if (points.empty())
        throw InvalidInput("pareto_front needs at least one point");
    for (const auto& p : points)
        if (!std::isfinite(p.x) || !std::isfinite(p.y))
            throw InvalidInput("pareto_front coordinates must be finite");

    // Sweep by ascending x (then y); a point survives when its y beats every strictly
    // better-or-equal predecessor, or when it duplicates the current best.
    std::vector<std::size_t> order(points.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (points[a].x != points[b].x)
            return points[a].x < points[b].x;
        return points[a].y < points[b].y;
    });

    std::vector<bool> member(points.size(), false);
    double best_y = std::numeric_limits<double>::infinity();
    const Point* best = nullptr;
    for (std::size_t idx : order) {
        const Point& p = points[idx];
        if (p.y < best_y) {
            member[idx] = true;
            best_y = p.y;
            best = &p;
        } else if (best && p.x == best->x && p.y == best->y) {
            member[idx] = true;
        }
    }
    return member;
}

std::size_t knee(std::span<const Point> front) {
    if (front.empty())
        throw InvalidInput("knee of an empty front");
    if (front.size() == 1)
        return 0;
    double min_x = front[0].x, max_x = front[0].x, min_y = front[0].y, max_y = front[0].y;
    for (const auto& p : front) {
        min_x = std::min(min_x, p.x);
        max_x = std::max(max_x, p.x);
        min_y = std::min(min_y, p.y);
        max_y = std::max(max_y, p.y);
    }
    const double rx = max_x - min_x;
    const double ry = max_y - min_y;
    // On a 2-D front the extremes normalize to (0, 1) and (1, 0), so the chord is x + y = 1
    // and the signed distance toward the origin is (1 - x - y) / sqrt(2).
    std::size_t best = 0;
    double best_d = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < front.size(); ++i) {
        const double nx = rx > 0.0 ? (front[i].x - min_x) / rx : 0.0;
        const double ny = ry > 0.0 ? (front[i].y - min_y) / ry : 0.0;
        const double d = (1.0 - nx - ny) / std::sqrt(2.0);
        if (d > best_d || (d == best_d && front[i].x < front[best].x)) {
            best = i;
            best_d = d;
        }
    }
    return best;
}

namespace {

template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
    const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < workers; ++t)
            pool.emplace_back(worker);
        for (auto& t : pool)
            t.join();
    }
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

void mark_fronts(DseReport& report, Objective objective) {
    std::vector<std::size_t> idx;
    std::vector<Point> pts;
    for (std::size_t i = 0; i < report.points.size(); ++i) {
        const auto& m = report.points[i].metrics;
        if (!m)
            continue;
        idx.push_back(i);
        pts.push_back({m->latency_us, objective == Objective::latency_power ? m->power_w : m->area_mm2});
    }
    if (pts.empty())
        return;
    const auto member = pareto_front(pts);
    std::vector<std::size_t> front_idx;
    std::vector<Point> front;
    for (std::size_t j = 0; j < pts.size(); ++j) {
        if (!member[j])
            continue;
        auto& p = report.points[idx[j]];
        (objective == Objective::latency_power ? p.pareto_lat_power : p.pareto_lat_area) = true;
        front_idx.push_back(idx[j]);
        front.push_back(pts[j]);
    }
    const std::size_t k = front_idx[knee(front)];
    auto& kp = report.points[k];
    if (objective == Objective::latency_power) {
        kp.knee_lat_power = true;
        report.knee_lat_power = k;
    } else {
        kp.knee_lat_area = true;
        report.knee_lat_area = k;
    }
}

} // namespace

DseReport run_dse_quantized(const DesignSpace& space, const std::vector<quant::QuantizedNetwork>& nets,
                            const std::vector<std::vector<double>>& probe_inputs,
                            const cost::CostCoefficients& coefficients, const DseOptions& options) {
    if (nets.empty())
        throw InvalidInput("run_dse needs at least one quantized network");
    if (probe_inputs.empty())
        throw InvalidInput("run_dse needs at least one probe input");
    coefficients.validate();
    const auto spec = nets.front().spec();
    std::map<int, const quant::QuantizedNetwork*> by_bits;
    for (const auto& n : nets)
        by_bits[n.bits] = &n;
    for (int b : space.precision_choices)
        if (!by_bits.count(b))
            throw InvalidInput("no quantized network for precision " + std::to_string(b));

    DseReport report;
    report.coefficients = coefficients;
    report.coefficients_hash = options.coefficients_hash;
    for (auto& c : enumerate(space, spec)) {
        ParetoPoint p;
        p.candidate = std::move(c);
        report.points.push_back(std::move(p));
    }

    parallel_for(report.points.size(), options.jobs, [&](std::size_t i) {
        auto& p = report.points[i];
        if (!p.candidate.feasible)
            return;
        const auto& cfg = p.candidate.config;
        const auto& net = *by_bits.at(cfg.precision_bits);
        auto acc = sim::configure(cfg, net);
        const auto result = sim::run_network(acc, net.quantize_input(probe_inputs.front()));
        const std::uint64_t closed_form = sim::network_cycles(spec, cfg);
        if (result.cycle_count != closed_form)
            throw Error("simulated cycles " + std::to_string(result.cycle_count) + " for " + cfg.id() +
                        " disagree with the closed-form model (" + std::to_string(closed_form) + ")");
        p.simulated_cycles = result.cycle_count;
        p.metrics = cost::evaluate(cfg, spec, coefficients);
    });

    for (auto o : space.objectives)
        mark_fronts(report, o);
    return report;
}

DseReport run_dse(const DesignSpace& space, const quant::NetworkSpec& spec, const quant::WeightSet& w,
                  const std::vector<std::vector<double>>& calibration_inputs,
                  const std::vector<std::vector<double>>& verify_inputs,
                  const cost::CostCoefficients& coefficients, const DseOptions& options) {
    const auto candidates = enumerate(space, spec);
    std::vector<quant::QuantizedNetwork> nets;
    std::vector<PrecisionVerification> checks;
    for (int bits : space.precision_choices) {
        auto net = quant::quantize_network(spec, w, calibration_inputs, bits);
        PrecisionVerification pv;
        pv.bits = bits;
        auto host = std::find_if(candidates.begin(), candidates.end(), [&](const Candidate& c) {
            return c.feasible && c.config.precision_bits == bits;
        });
        if (host != candidates.end()) {
            auto acc = sim::configure(host->config, net);
            pv.report = sim::verify_against_reference(acc, spec, w, verify_inputs, options.tolerance);
            pv.evaluated = true;
            if (!pv.report.pass)
                throw VerificationFailed("quantized network at " + std::to_string(bits) +
                                         " bits misses tolerance: max error " +
                                         std::to_string(pv.report.max_err) + " > " +
                                         std::to_string(options.tolerance));
        }
        checks.push_back(pv);
        nets.push_back(std::move(net));
    }
    auto report = run_dse_quantized(space, nets, verify_inputs, coefficients, options);
    report.verification = std::move(checks);
    return report;
}

namespace {

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + '"';
}

} // namespace

void write_results_csv(std::ostream& os, const DseReport& report) {
    os << "config_id,pes,lanes,vector_width,precision_bits,weight_buffer_kb,latency_us,power_w,"
          "area_mm2,energy_uj,pareto_lat_power,pareto_lat_area,knee_lat_power,knee_lat_area,"
          "vehicle_class,feasible,reject_reason\n";
    for (const auto& p : report.points) {
        const auto& c = p.candidate.config;
        os << c.id() << ',' << c.num_pes << ',' << c.mac_lanes << ',' << c.vector_width << ','
           << c.precision_bits << ',' << c.weight_buffer_kb << ',';
        if (p.metrics) {
            const auto& m = *p.metrics;
            os << num(m.latency_us) << ',' << num(m.power_w) << ',' << num(m.area_mm2) << ','
               << num(m.energy_uj) << ',';
        } else {
            os << ",,,,";
        }
        os << int(p.pareto_lat_power) << ',' << int(p.pareto_lat_area) << ',' << int(p.knee_lat_power)
           << ',' << int(p.knee_lat_area) << ','
           << cost::to_string(p.metrics ? p.metrics->vehicle_class : cost::VehicleClass::none) << ','
           << int(p.candidate.feasible) << ',' << csv_field(p.candidate.reject_reason) << '\n';
    }
}

std::string render_svg(const DseReport& report, Objective objective) {
    constexpr double W = 640, H = 480, left = 80, right = 30, top = 40, bottom = 60;
    const bool power = objective == Objective::latency_power;
    struct P {
        double x, y;
        bool front, knee;
        std::string id;
    };
    std::vector<P> pts;
    for (const auto& p : report.points) {
        if (!p.metrics)
            continue;
        pts.push_back({p.metrics->latency_us, power ? p.metrics->power_w : p.metrics->area_mm2,
                       power ? p.pareto_lat_power : p.pareto_lat_area,
                       power ? p.knee_lat_power : p.knee_lat_area, p.candidate.config.id()});
    }
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    const std::string ylabel = power ? "power (W)" : "area (mm2)";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">latency vs "
       << (power ? "power" : "area") << "</text>\n";
    if (pts.empty()) {
        os << "<text x=\"" << W / 2 << "\" y=\"" << H / 2
           << "\" text-anchor=\"middle\">no feasible candidates</text>\n</svg>\n";
        return os.str();
    }
    double x0 = pts[0].x, x1 = pts[0].x, y0 = pts[0].y, y1 = pts[0].y;
    for (const auto& p : pts) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
    }
    auto pad = [](double& lo, double& hi) {
        const double span = hi - lo > 0 ? hi - lo : std::max(std::abs(hi), 1.0);
        lo -= 0.05 * span;
        hi += 0.05 * span;
    };
    pad(x0, x1);
    pad(y0, y1);
    auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * (W - left - right); };
    auto sy = [&](double y) { return H - bottom - (y - y0) / (y1 - y0) * (H - top - bottom); };

    os << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\""
       << H - bottom << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
       << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double xv = x0 + (x1 - x0) * t / 4.0;
        const double yv = y0 + (y1 - y0) * t / 4.0;
        os << "<text x=\"" << num(sx(xv)) << "\" y=\"" << H - bottom + 16
           << "\" text-anchor=\"middle\">" << num(std::round(xv * 100) / 100) << "</text>\n";
        os << "<text x=\"" << left - 6 << "\" y=\"" << num(sy(yv) + 4) << "\" text-anchor=\"end\">"
           << num(std::round(yv * 1000) / 1000) << "</text>\n";
    }
    os << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 18
       << "\" text-anchor=\"middle\">latency (us)</text>\n";
    os << "<text x=\"18\" y=\"" << (top + H - bottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
       << (top + H - bottom) / 2 << ")\">" << ylabel << "</text>\n";

    // Front polyline in latency order.
    std::vector<P> front;
    for (const auto& p : pts)
        if (p.front)
            front.push_back(p);
    std::sort(front.begin(), front.end(), [](const P& a, const P& b) { return a.x < b.x; });
    if (front.size() > 1) {
        os << "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" points=\"";
        for (const auto& p : front)
            os << num(sx(p.x)) << ',' << num(sy(p.y)) << ' ';
        os << "\"/>\n";
    }
    for (const auto& p : pts) {
        os << "<circle cx=\"" << num(sx(p.x)) << "\" cy=\"" << num(sy(p.y)) << "\" r=\""
           << (p.front ? 5 : 3.5) << "\" fill=\"" << (p.front ? "#d62728" : "#999999")
           << "\"><title>" << p.id << "</title></circle>\n";
        if (p.knee)
            os << "<circle cx=\"" << num(sx(p.x)) << "\" cy=\"" << num(sy(p.y))
               << "\" r=\"10\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"/>\n<text x=\""
               << num(sx(p.x) + 12) << "\" y=\"" << num(sy(p.y) - 8) << "\">knee " << p.id << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

} // namespace flexpilot::dse
