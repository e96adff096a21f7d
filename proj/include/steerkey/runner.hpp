#pragma once

// Parameter sweeps, heuristic optimization of the protocol parameters, and
// key-rate reports.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "steerkey/bff.hpp"
#include "steerkey/entropy.hpp"
#include "steerkey/errors.hpp"
#include "steerkey/quantum_model.hpp"

namespace steerkey {

enum class Method { AnalyticSimple, AnalyticBias, Bff };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::AnalyticSimple: return "analytic-simple";
        case Method::AnalyticBias: return "analytic-bias";
        case Method::Bff: return "bff";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    if (s == "analytic-simple") return Method::AnalyticSimple;
    if (s == "analytic-bias") return Method::AnalyticBias;
    if (s == "bff") return Method::Bff;
    throw ParseError("unknown method '" + s + "'");
}

enum class Axis { Eta, Distance, EtaVisibility };

inline std::string to_string(Axis a) {
    switch (a) {
        case Axis::Eta: return "eta";
        case Axis::Distance: return "distance";
        case Axis::EtaVisibility: return "eta-v";
    }
    return "?";
}

inline Axis axis_from_string(const std::string& s) {
    if (s == "eta") return Axis::Eta;
    if (s == "distance") return Axis::Distance;
    if (s == "eta-v") return Axis::EtaVisibility;
    throw ParseError("unknown axis '" + s + "'");
}

/// Inclusive grid start, start + step, ..., up to stop.
struct Range {
    double start = 0.0;
    double stop = 0.0;
    double step = 0.0;

    std::vector<double> values() const {
        if (!(step > 0.0)) {
            if (start == stop) return {start};
            throw DomainError("range step must be positive");
        }
        if (stop < start) throw DomainError("range stop lies below start");
        std::vector<double> out;
        const auto n = static_cast<long>(std::floor((stop - start) / step + 1e-9));
        for (long i = 0; i <= n; ++i) out.push_back(start + static_cast<double>(i) * step);
        return out;
    }
};

/// Protocol parameters the optimizer may move.
struct PointParams {
    double theta = std::numbers::pi / 4;
    double q = 0.0;
    std::vector<double> aliceAngles;  // empty: scenario default
    std::vector<double> bobAngles;    // empty: scenario default
};

inline std::vector<double> default_alice_angles() { return {0.0, std::numbers::pi / 2}; }

inline std::vector<double> default_bob_angles(int bobInputs) {
    if (bobInputs == 3) return {std::numbers::pi / 4, -std::numbers::pi / 4, 0.0};
    return {0.0, std::numbers::pi / 2};
}

/// Bob's input used for the raw key: the one aligned with Alice's key basis.
inline int key_bob_input(const Scenario& s) { return s.bobInputs == 3 ? 3 : 1; }

inline PointParams resolved(const Scenario& s, PointParams p) {
    if (p.aliceAngles.empty()) p.aliceAngles = default_alice_angles();
    if (p.bobAngles.empty()) p.bobAngles = default_bob_angles(s.bobInputs);
    if (static_cast<int>(p.aliceAngles.size()) != s.aliceInputs)
        throw DomainError("need one Alice angle per input");
    if (static_cast<int>(p.bobAngles.size()) != s.bobInputs) throw DomainError("need one Bob angle per input");
    if (!(p.theta >= 0.0 && p.theta <= std::numbers::pi / 2)) throw DomainError("theta must lie in [0, pi/2]");
    if (!(p.q >= 0.0 && p.q <= 0.5)) throw DomainError("preprocessing probability must lie in [0, 1/2]");
    return p;
}

struct EvalConfig {
    Method method = Method::Bff;
    Scenario scenario{};
    BffOptions bff{};
};

struct KeyRateReport {
    std::string axis;
    double value = 0.0;
    NoiseParams noise{};
    PointParams params{};
    double hAE = 0.0;
    double hAB = 0.0;
    double retention = 1.0;
    double rate = 0.0;
    Method method = Method::Bff;
    std::string status = "ok";
    std::string diagnostics;
    unsigned seed = 0;
    int evaluations = 1;

    bool reliable() const { return status == "ok"; }
};

/// Observed behavior with Bob's no-click outcome kept separate.
inline BehaviorTable reference_table(const Scenario& s, const NoiseParams& np, const PointParams& params) {
    np.validate();
    const PointParams p = resolved(s, params);
    const auto state = make_state(p.theta, np.visibility);
    const auto alice = darkcount_alice_povm(ideal_measurements(Party::Alice, p.aliceAngles), np.etaA, np.darkCount);
    const auto bob = darkcount_bob_povm(ideal_measurements(Party::Bob, p.bobAngles), np.etaB, np.darkCount);
    return behavior(state, alice, bob);
}

/// The table as the scenario sees it: merged into outcome 1 for two-outcome Bob.
inline BehaviorTable scenario_table(const Scenario& s, const BehaviorTable& unmerged) {
    return s.bobOutcomes == 2 ? merge_bob_outcome(unmerged, kNoClick, 1) : unmerged;
}

/// Certified rate at one parameter point; solver failures are reported in the
/// status field, with the rate set to NaN.
inline KeyRateReport evaluate_point(const EvalConfig& cfg, const NoiseParams& np, const PointParams& params) {
    KeyRateReport r;
    r.method = cfg.method;
    r.noise = np;
    r.params = resolved(cfg.scenario, params);
    if (cfg.method != Method::Bff && r.params.q != 0.0)
        throw DomainError("noisy preprocessing needs the bff method");
    const BehaviorTable full = reference_table(cfg.scenario, np, r.params);
    r.hAB = cond_entropy_key(full, r.params.q, key_bob_input(cfg.scenario));
    if (cfg.method == Method::Bff) {
        Scenario s = cfg.scenario;
        s.preprocessingQ = r.params.q;
        try {
            const EntropyResult e = entropy_bound(s, scenario_table(s, full), cfg.bff);
            r.hAE = e.bits;
            int iters = 0;
            int stalled = 0;
            for (const auto& n : e.nodes) {
                iters = std::max(iters, n.iterations);
                stalled += n.status != sdp::Status::Optimal;
            }
            r.diagnostics = "nodes=" + std::to_string(e.nodes.size()) + " max-iterations=" + std::to_string(iters);
            if (stalled > 0) r.diagnostics += " stalled-certified=" + std::to_string(stalled);
        } catch (const SolverError& ex) {
            r.status = std::string(ex.what()).find("infeasible") != std::string::npos ? "infeasible" : "solver-failure";
            r.diagnostics = ex.what();
            r.hAE = std::numeric_limits<double>::quiet_NaN();
        }
    } else {
        const BehaviorTable merged = merge_bob_outcome(full, kNoClick, 1);
        const double corr = correlator(merged, 2, 2);
        r.hAE = cfg.method == Method::AnalyticSimple ? bound_simple(corr) : bound_bias(marginal_bias(merged, 1), corr);
    }
    r.rate = r.hAE - r.hAB;
    return r;
}

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerSettings {
    bool theta = false;
    bool q = false;
    bool angles = false;
    int restarts = 3;
    double tolerance = 1e-6;  // stop when a full sweep improves the rate by less
    double lineTolerance = 1e-4;
    int maxSweeps = 20;
    unsigned seed = 1;

    bool any() const { return theta || q || angles; }
};

namespace detail {

struct Coordinate {
    double* value;
    double lo;
    double hi;
};

inline std::vector<Coordinate> coordinates(PointParams& p, const OptimizerSettings& o, const PointParams& anchor) {
    std::vector<Coordinate> c;
    // Near-product states matter: the optimum can approach theta -> 0.
    if (o.theta) c.push_back({&p.theta, 1e-6, std::numbers::pi / 2 - 1e-6});
    if (o.q) c.push_back({&p.q, 0.0, 0.5});
    if (o.angles) {
        for (std::size_t i = 0; i < p.aliceAngles.size(); ++i)
            c.push_back({&p.aliceAngles[i], anchor.aliceAngles[i] - std::numbers::pi / 2,
                         anchor.aliceAngles[i] + std::numbers::pi / 2});
        for (std::size_t i = 0; i < p.bobAngles.size(); ++i)
            c.push_back({&p.bobAngles[i], anchor.bobAngles[i] - std::numbers::pi / 2,
                         anchor.bobAngles[i] + std::numbers::pi / 2});
    }
    return c;
}

inline double score(const KeyRateReport& r) {
    return std::isfinite(r.rate) ? r.rate : -std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Coordinate descent with golden-section line searches, started from `start`
/// and from `restarts` seeded random points. Returns the best report found.
inline KeyRateReport optimize_point(const EvalConfig& cfg, const NoiseParams& np, const PointParams& start,
                                    const OptimizerSettings& opt) {
    const PointParams anchor = resolved(cfg.scenario, start);
    if (!opt.any()) {
        KeyRateReport r = evaluate_point(cfg, np, anchor);
        r.seed = opt.seed;
        return r;
    }
    int evaluations = 0;
    auto eval = [&](const PointParams& p) {
        ++evaluations;
        return evaluate_point(cfg, np, p);
    };

    std::mt19937_64 rng(opt.seed);
    KeyRateReport best;
    bool haveBest = false;
    for (int run = 0; run <= std::max(0, opt.restarts); ++run) {
        PointParams p = anchor;
        auto coords = detail::coordinates(p, opt, anchor);
        if (run > 0)
            for (auto& c : coords) *c.value = std::uniform_real_distribution<double>(c.lo, c.hi)(rng);
        KeyRateReport current = eval(p);
        for (int sweep = 0; sweep < opt.maxSweeps; ++sweep) {
            const double before = detail::score(current);
            for (auto& c : coords) {
                const double keep = *c.value;
                auto f = [&](double x) {
                    *c.value = x;
                    return eval(p);
                };
                constexpr double g = 0.6180339887498949;
                double a = c.lo, b = c.hi;
                double x1 = b - g * (b - a), x2 = a + g * (b - a);
                KeyRateReport r1 = f(x1), r2 = f(x2);
                while (b - a > opt.lineTolerance) {
                    if (detail::score(r1) >= detail::score(r2)) {
                        b = x2;
                        x2 = x1;
                        r2 = std::move(r1);
                        x1 = b - g * (b - a);
                        r1 = f(x1);
                    } else {
                        a = x1;
                        x1 = x2;
                        r1 = std::move(r2);
                        x2 = a + g * (b - a);
                        r2 = f(x2);
                    }
                }
                const bool firstBetter = detail::score(r1) >= detail::score(r2);
                KeyRateReport& cand = firstBetter ? r1 : r2;
                if (detail::score(cand) > detail::score(current)) {
                    *c.value = firstBetter ? x1 : x2;
                    current = std::move(cand);
                } else {
                    *c.value = keep;
                }
            }
            if (!(detail::score(current) - before >= opt.tolerance)) break;
        }
        if (!haveBest || detail::score(current) > detail::score(best)) {
            best = std::move(current);
            haveBest = true;
        }
    }
    best.seed = opt.seed;
    best.evaluations = evaluations;
    return best;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepSpec {
    EvalConfig config{};
    Axis axis = Axis::Eta;
    Range range{};
    Range visibilityRange{1.0, 1.0, 0.0};  // eta-v grid only
    double etaFix = 0.9;                   // distance sweeps
    NoiseParams noise{};
    PointParams params{};
    OptimizerSettings optimizer{};
    int threads = 0;  // sweep points in flight; 0: hardware concurrency
};

/// Noise parameters at one axis value.
inline NoiseParams noise_at(const SweepSpec& spec, double value, double visibility) {
    NoiseParams np = spec.noise;
    switch (spec.axis) {
        case Axis::Eta: np.etaB = value; break;
        case Axis::EtaVisibility:
            np.etaB = value;
            np.visibility = visibility;
            break;
        case Axis::Distance:
            np.lengthKm = value;
            np.etaB = spec.etaFix;
            np.etaA = fiber_efficiency(spec.etaFix, np.alphaDb, value);
            break;
    }
    return np;
}

inline std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

/// One report per axis value (per grid cell for eta-v), in axis order.
/// Distance sweeps optimize once at l = 0 and reuse those parameters, and
/// multiply the rate by the retention probability.
inline std::vector<KeyRateReport> sweep(const SweepSpec& spec) {
    spec.config.scenario.validate();
    std::vector<std::pair<double, double>> cells;  // (value, visibility)
    const auto values = spec.range.values();
    if (spec.axis == Axis::EtaVisibility) {
        for (double v : spec.visibilityRange.values())
            for (double x : values) cells.push_back({x, v});
    } else {
        for (double x : values) cells.push_back({x, spec.noise.visibility});
    }

    PointParams warm = spec.params;
    unsigned seed = spec.optimizer.seed;
    if (spec.axis == Axis::Distance && spec.optimizer.any()) {
        const KeyRateReport r0 = optimize_point(spec.config, noise_at(spec, 0.0, 0.0), spec.params, spec.optimizer);
        warm = r0.params;
    }

    std::vector<KeyRateReport> out(cells.size());
    parallel_for(static_cast<int>(cells.size()), spec.threads, [&](int i) {
        const auto [x, v] = cells[i];
        const NoiseParams np = noise_at(spec, x, v);
        KeyRateReport r = (spec.axis == Axis::Distance || !spec.optimizer.any())
                              ? evaluate_point(spec.config, np, warm)
                              : optimize_point(spec.config, np, spec.params, spec.optimizer);
        r.seed = seed;
        r.value = x;
        r.axis = spec.axis == Axis::EtaVisibility ? "eta@v=" + format_value(v) : to_string(spec.axis);
        if (spec.axis == Axis::Distance) {
            r.retention = retention_probability(np.etaA, np.darkCount);
            r.rate *= r.retention;
        }
        out[i] = std::move(r);
    });
    return out;
}

/// Per visibility row of an eta-v grid, the smallest eta with positive rate,
/// linearly interpolated against the previous grid point. NaN when no point
/// of the row is positive.
inline std::vector<std::pair<double, double>> positivity_boundary(const std::vector<KeyRateReport>& grid) {
    std::map<double, std::vector<const KeyRateReport*>> rows;
    for (const auto& r : grid) rows[r.noise.visibility].push_back(&r);
    std::vector<std::pair<double, double>> out;
    for (auto& [v, row] : rows) {
        std::sort(row.begin(), row.end(), [](auto* a, auto* b) { return a->value < b->value; });
        double eta = std::numeric_limits<double>::quiet_NaN();
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (!(row[i]->rate > 0.0)) continue;
            if (i == 0 || !std::isfinite(row[i - 1]->rate)) {
                eta = row[i]->value;
            } else {
                const double r0 = row[i - 1]->rate, r1 = row[i]->rate;
                eta = row[i - 1]->value + (row[i]->value - row[i - 1]->value) * (-r0) / (r1 - r0);
            }
            break;
        }
        out.push_back({v, eta});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Thresholds

struct ThresholdResult {
    double value = 0.0;  // midpoint of the final bracket
    double lo = 0.0;
    double hi = 0.0;
    int evaluations = 0;
    KeyRateReport positiveSide;  // report at the bracket end with positive rate
    KeyRateReport otherSide;
};

/// Bisection on the sign of the certified rate across spec.range.start and
/// spec.range.stop, to `tolerance` in axis units (defaults: 1e-3 in eta,
/// 1 km in distance). Eta sweeps re-optimize at every point when the
/// optimizer has free parameters; distance sweeps reuse the l = 0 optimum.
inline ThresholdResult threshold(const SweepSpec& spec, double tolerance = 0.0) {
    if (spec.axis == Axis::EtaVisibility) throw DomainError("thresholds are defined for eta or distance axes");
    spec.config.scenario.validate();
    if (tolerance <= 0.0) tolerance = spec.axis == Axis::Eta ? 1e-3 : 1.0;

    PointParams warm = spec.params;
    ThresholdResult res;
    if (spec.axis == Axis::Distance && spec.optimizer.any()) {
        const KeyRateReport r0 = optimize_point(spec.config, noise_at(spec, 0.0, 0.0), spec.params, spec.optimizer);
        warm = r0.params;
        res.evaluations += r0.evaluations;
    }
    auto at = [&](double x) {
        const NoiseParams np = noise_at(spec, x, spec.noise.visibility);
        KeyRateReport r = (spec.axis == Axis::Distance || !spec.optimizer.any())
                              ? evaluate_point(spec.config, np, warm)
                              : optimize_point(spec.config, np, spec.params, spec.optimizer);
        res.evaluations += r.evaluations;
        r.axis = to_string(spec.axis);
        r.value = x;
        if (spec.axis == Axis::Distance) {
            r.retention = retention_probability(np.etaA, np.darkCount);
            r.rate *= r.retention;
        }
        if (!std::isfinite(r.rate)) throw SolverError("rate unavailable at " + format_value(x) + ": " + r.diagnostics);
        return r;
    };

    // Rate increases with eta and decreases with distance.
    const bool increasing = spec.axis == Axis::Eta;
    double lo = spec.range.start, hi = spec.range.stop;
    if (!(hi > lo)) throw DomainError("threshold bracket must satisfy start < stop");
    KeyRateReport rlo = at(lo), rhi = at(hi);
    const bool loPositive = rlo.rate > 0.0, hiPositive = rhi.rate > 0.0;
    if (loPositive == hiPositive || loPositive == increasing)
        throw DomainError("rate does not change sign in the expected direction across the bracket");
    while (hi - lo > tolerance) {
        const double mid = 0.5 * (lo + hi);
        KeyRateReport r = at(mid);
        if ((r.rate > 0.0) == loPositive) {
            lo = mid;
            rlo = std::move(r);
        } else {
            hi = mid;
            rhi = std::move(r);
        }
    }
    res.lo = lo;
    res.hi = hi;
    res.value = 0.5 * (lo + hi);
    res.positiveSide = loPositive ? rlo : rhi;
    res.otherSide = loPositive ? rhi : rlo;
    return res;
}

// ---------------------------------------------------------------------------
// Output and configuration

inline const char* kCsvHeader = "axis,value,theta,q,h_ae,h_ab,retention,rate,method,status";

inline void write_csv(std::ostream& os, const std::vector<KeyRateReport>& reports) {
    os << kCsvHeader << '\n';
    for (const auto& r : reports)
        os << r.axis << ',' << format_value(r.value) << ',' << format_value(r.params.theta) << ','
           << format_value(r.params.q) << ',' << format_value(r.hAE) << ',' << format_value(r.hAB) << ','
           << format_value(r.retention) << ',' << format_value(r.rate) << ',' << to_string(r.method) << ','
           << r.status << '\n';
}

inline nlohmann::json to_json(const KeyRateReport& r) {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"axis", r.axis},
            {"value", num(r.value)},
            {"etaA", r.noise.etaA},
            {"etaB", r.noise.etaB},
            {"visibility", r.noise.visibility},
            {"darkCount", r.noise.darkCount},
            {"lengthKm", r.noise.lengthKm},
            {"theta", r.params.theta},
            {"q", r.params.q},
            {"aliceAngles", r.params.aliceAngles},
            {"bobAngles", r.params.bobAngles},
            {"hAE", num(r.hAE)},
            {"hAB", num(r.hAB)},
            {"retention", r.retention},
            {"rate", num(r.rate)},
            {"method", to_string(r.method)},
            {"status", r.status},
            {"diagnostics", r.diagnostics},
            {"seed", r.seed},
            {"evaluations", r.evaluations}};
}

namespace detail {

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline Range range_from_json(const nlohmann::json& j) {
    Range r;
    r.start = j.at("start").get<double>();
    r.stop = j.value("stop", r.start);
    r.step = j.value("step", 0.0);
    return r;
}

}  // namespace detail

inline Scenario scenario_from_json(const nlohmann::json& j) {
    Scenario s;
    detail::read_opt(j, "bobInputs", s.bobInputs);
    detail::read_opt(j, "bobOutcomes", s.bobOutcomes);
    detail::read_opt(j, "anticommutingAlice", s.anticommutingAlice);
    detail::read_opt(j, "constrainBias", s.constrainBias);
    detail::read_opt(j, "quadM", s.quadM);
    if (j.contains("constraintMode")) s.constraintMode = constraint_mode_from_string(j.at("constraintMode"));
    if (j.contains("basisLevel")) s.basisLevel = basis_level_from_string(j.at("basisLevel"));
    s.validate();
    return s;
}

/// Parses a sweep configuration; unknown keys are rejected so that typos
/// surface. The JSON schema in the repository documents every field.
inline SweepSpec sweep_spec_from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known{"method", "scenario", "axis",      "range",   "visibilityRange",
                                                "etaFix", "noise",    "params",    "optimizer", "threads",
                                                "nodeThreads", "solver"};
    for (const auto& [k, v] : j.items())
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw ParseError("unknown configuration key '" + k + "'");
    SweepSpec spec;
    spec.config.method = method_from_string(j.at("method").get<std::string>());
    if (j.contains("scenario")) spec.config.scenario = scenario_from_json(j.at("scenario"));
    spec.axis = axis_from_string(j.at("axis").get<std::string>());
    spec.range = detail::range_from_json(j.at("range"));
    if (j.contains("visibilityRange")) spec.visibilityRange = detail::range_from_json(j.at("visibilityRange"));
    detail::read_opt(j, "etaFix", spec.etaFix);
    detail::read_opt(j, "threads", spec.threads);
    detail::read_opt(j, "nodeThreads", spec.config.bff.threads);
    if (j.contains("solver")) {
        const auto& s = j.at("solver");
        detail::read_opt(s, "tolerance", spec.config.bff.solver.tol);
        detail::read_opt(s, "maxIterations", spec.config.bff.solver.maxIterations);
    }
    if (j.contains("noise")) {
        const auto& n = j.at("noise");
        detail::read_opt(n, "etaA", spec.noise.etaA);
        detail::read_opt(n, "etaB", spec.noise.etaB);
        detail::read_opt(n, "visibility", spec.noise.visibility);
        detail::read_opt(n, "darkCount", spec.noise.darkCount);
        detail::read_opt(n, "alphaDb", spec.noise.alphaDb);
        spec.noise.validate();
    }
    if (j.contains("params")) {
        const auto& p = j.at("params");
        detail::read_opt(p, "theta", spec.params.theta);
        detail::read_opt(p, "q", spec.params.q);
        detail::read_opt(p, "aliceAngles", spec.params.aliceAngles);
        detail::read_opt(p, "bobAngles", spec.params.bobAngles);
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        for (const auto& f : o.value("free", std::vector<std::string>{})) {
            if (f == "theta")
                spec.optimizer.theta = true;
            else if (f == "q")
                spec.optimizer.q = true;
            else if (f == "angles")
                spec.optimizer.angles = true;
            else
                throw ParseError("unknown free parameter '" + f + "'");
        }
        detail::read_opt(o, "restarts", spec.optimizer.restarts);
        detail::read_opt(o, "tolerance", spec.optimizer.tolerance);
        detail::read_opt(o, "lineTolerance", spec.optimizer.lineTolerance);
        detail::read_opt(o, "maxSweeps", spec.optimizer.maxSweeps);
        detail::read_opt(o, "seed", spec.optimizer.seed);
    }
    if (spec.config.method != Method::Bff && (spec.optimizer.q || spec.params.q != 0.0))
        throw DomainError("noisy preprocessing needs the bff method");
    if (spec.axis == Axis::Distance && spec.range.start < 0.0) throw DomainError("distance must be nonnegative");
    if (spec.axis != Axis::Distance && (spec.range.start < 0.0 || spec.range.stop > 1.0))
        throw DomainError("eta range must lie in [0,1]");
    resolved(spec.config.scenario, spec.params);
    return spec;
}

}  // namespace steerkey
