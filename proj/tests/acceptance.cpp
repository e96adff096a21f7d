// Acceptance run: one PASS/FAIL line per criterion. Runtime limits are part of
// each criterion. Usage: acceptance [--only 1,4,11] [--di-long]

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sdp_instances.hpp"
#include "steerkey/entropy.hpp"
#include "steerkey/quadrature.hpp"
#include "steerkey/runner.hpp"
#include "steerkey/sdp.hpp"

using namespace steerkey;
constexpr double kPi = std::numbers::pi;

namespace {

struct Outcome {
    bool ok = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double limitSeconds;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// 1. Bisection on the closed-form rate at theta = pi/4.
Outcome analytic_threshold() {
    double lo = 0.5, hi = 1.0;
    while (hi - lo > 1e-4) {
        const double mid = 0.5 * (lo + hi);
        (closed_form_rate(mid, kPi / 4) > 0.0 ? hi : lo) = mid;
    }
    const double eta = 0.5 * (lo + hi);
    const double rateAt = closed_form_rate(0.659, kPi / 4);
    return {std::abs(eta - 0.659) <= 1e-3, fmt("eta*=%.5f (target 0.659 +- 0.001), rate(0.659)=%.2e", eta, rateAt)};
}

// 2. Bias bound with theta optimized at every bisection point.
Outcome bias_threshold() {
    SweepSpec spec;
    spec.config.method = Method::AnalyticBias;
    spec.axis = Axis::Eta;
    spec.range = {0.5, 1.0, 0.0};
    spec.optimizer.theta = true;
    const auto r = threshold(spec);
    return {std::abs(r.value - 0.626) <= 3e-3,
            fmt("eta*=%.5f (target 0.626 +- 0.003), theta at positive side=%.4g, %d evaluations", r.value,
                r.positiveSide.params.theta, r.evaluations)};
}

// 3. Correlators-only BFF bound against 1 - phi(eta).
Outcome bff_recovers_analytic(double& worstSeconds) {
    Scenario s;
    s.constraintMode = ConstraintMode::CorrelatorsOnly;
    s.bobOutcomes = 2;
    s.quadM = 8;
    bool ok = true;
    std::ostringstream os;
    for (double eta : {0.7, 0.8, 0.9}) {
        const auto t0 = std::chrono::steady_clock::now();
        NoiseParams np;
        np.etaB = eta;
        const auto table = scenario_table(s, reference_table(s, np, PointParams{}));
        const double h = entropy_bound(s, table).raw;
        const double target = 1.0 - phi(eta);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        worstSeconds = std::max(worstSeconds, secs);
        ok = ok && std::abs(h - target) <= 2e-3;
        os << fmt("eta=%.1f H=%.5f 1-phi=%.5f (%.1f s); ", eta, h, target, secs);
    }
    os << "tolerance 2e-3, limit 60 s per point";
    return {ok && worstSeconds < 60.0, os.str()};
}

KeyRateReport bff_point(const Scenario& s, const NoiseParams& np, const PointParams& p = {}) {
    EvalConfig cfg;
    cfg.method = Method::Bff;
    cfg.scenario = s;
    return evaluate_point(cfg, np, p);
}

NoiseParams eta_noise(double eta) {
    NoiseParams np;
    np.etaB = eta;
    return np;
}

// 4. Full statistics, Bob's no-click merged.
Outcome bff_two_outcome() {
    Scenario s;
    s.quadM = 15;
    s.bobOutcomes = 2;
    const auto at60 = bff_point(s, eta_noise(0.60));
    SweepSpec spec;
    spec.config.scenario = s;
    spec.axis = Axis::Eta;
    spec.range = {0.55, 0.65, 0.0};
    const auto r = threshold(spec);
    const bool ok = at60.reliable() && at60.rate > 0.0 && std::abs(r.value - 0.595) <= 4e-3;
    return {ok, fmt("rate(0.60)=%.3e [%s], eta*=%.5f (target 0.595 +- 0.004), %d evaluations", at60.rate,
                    at60.status.c_str(), r.value, r.evaluations)};
}

// 5. Full statistics with the no-click outcome kept.
Outcome bff_three_outcome() {
    Scenario s;
    s.quadM = 15;
    s.bobOutcomes = 3;
    const auto r55 = bff_point(s, eta_noise(0.55));
    const auto r51 = bff_point(s, eta_noise(0.51));
    const auto r50 = bff_point(s, eta_noise(0.50));
    const bool ok = r55.reliable() && r51.reliable() && r50.reliable() && r55.rate > 0.0 && r51.rate > 0.0 &&
                    r50.rate <= 1e-4;
    return {ok, fmt("rate(0.55)=%.3e rate(0.51)=%.3e rate(0.50)=%.3e (needs >0, >0, <=1e-4)", r55.rate, r51.rate,
                    r50.rate)};
}

// 6. Distance with noisy preprocessing; parameters optimized once at l = 0.
Outcome distance_estimate() {
    SweepSpec spec;
    spec.config.scenario.quadM = 15;
    spec.config.scenario.bobOutcomes = 3;
    spec.axis = Axis::Distance;
    spec.etaFix = 0.9;
    spec.noise.visibility = 0.99;
    spec.noise.darkCount = 1e-6;
    OptimizerSettings opt;
    opt.theta = true;
    opt.q = true;
    opt.restarts = 0;
    opt.tolerance = 1e-4;
    opt.lineTolerance = 1e-2;
    const auto r0 = optimize_point(spec.config, noise_at(spec, 0.0, spec.noise.visibility), PointParams{}, opt);
    spec.params = r0.params;  // warm start for every distance

    auto at = [&](double l) {
        KeyRateReport r = evaluate_point(spec.config, noise_at(spec, l, spec.noise.visibility), spec.params);
        r.rate *= retention_probability(r.noise.etaA, r.noise.darkCount);
        return r;
    };
    const auto r200 = at(200.0), r257 = at(257.0);
    std::string head = fmt("l=0 optimum theta=%.4f q=%.4f (%d evaluations); rate(200)=%.3e rate(257)=%.3e",
                           r0.params.theta, r0.params.q, r0.evaluations, r200.rate, r257.rate);
    if (!(r200.reliable() && r257.reliable() && r200.rate > 0.0 && r257.rate <= 0.0))
        return {false, head + " (needs >0 and <=0)"};
    spec.range = {200.0, 257.0, 0.0};
    const auto thr = threshold(spec);
    return {std::abs(thr.value - 247.0) <= 10.0, head + fmt("; crossing=%.1f km (target 247 +- 10)", thr.value)};
}

// 7. Gauss-Radau exactness.
Outcome quadrature_exactness() {
    double worst = 0.0;
    bool endpoint = true;
    for (int m = 2; m <= 15; ++m) {
        const auto r = gauss_radau(m);
        endpoint = endpoint && r.nodes.back() == 1.0;
        for (int k = 0; k <= 2 * m - 2; ++k) {
            double s = 0.0;
            for (int i = 0; i < m; ++i) s += r.weights[i] * std::pow(r.nodes[i], k);
            worst = std::max(worst, std::abs(s - 1.0 / (k + 1)));
        }
    }
    // m = 2 oracle from the moment equations w1 + w2 = 1, w1 t + w2 = 1/2, w1 t^2 + w2 = 1/3.
    const auto r2 = gauss_radau(2);
    const double dev = std::max({std::abs(r2.nodes[0] - 1.0 / 3), std::abs(r2.weights[0] - 0.75),
                                 std::abs(r2.nodes[1] - 1.0), std::abs(r2.weights[1] - 0.25)});
    return {worst <= 1e-12 && endpoint && dev <= 1e-12,
            fmt("max moment error=%.2e, t_m=1 for all m: %s, m=2 deviation=%.2e", worst, endpoint ? "yes" : "no", dev)};
}

// 8. Convexity of f(z,x) = phi(z) - phi(sqrt(z^2+x^2)).
Outcome convexity_suite() {
    std::vector<std::pair<double, double>> grid;
    const int n = 100;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double z = -1.0 + (i + 0.5) * 2.0 / n, x = -1.0 + (j + 0.5) * 2.0 / n;
            if (z * z + x * x <= 0.99 && x != 0.0) grid.push_back({z, x});
        }
    double minDz = INFINITY, minDx = INFINITY, minDet = INFINITY;
    int negative = 0;
    for (auto [z, x] : grid) {
        const auto h = hessian_f(z, x);
        minDz = std::min(minDz, h.d2z);
        minDx = std::min(minDx, h.d2x);
        minDet = std::min(minDet, h.det);
        const double slack = 1e-12 * (1.0 + std::abs(h.d2z) + std::abs(h.d2x) + std::abs(h.det));
        if (h.d2z < -slack || h.d2x < -slack || h.det < -slack) ++negative;
    }
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<std::size_t> pick(0, grid.size() - 1);
    int violations = 0;
    const int pairs = 200000;
    for (int k = 0; k < pairs; ++k) {
        const auto [z1, x1] = grid[pick(rng)];
        const auto [z2, x2] = grid[pick(rng)];
        const double mid = bound_bias(0.5 * (z1 + z2), 0.5 * (x1 + x2));
        if (mid > 0.5 * (bound_bias(z1, x1) + bound_bias(z2, x2)) + 1e-12) ++violations;
    }
    return {negative == 0 && violations == 0,
            fmt("%zu grid points, min d2z=%.2e min d2x=%.2e min det=%.2e, negative=%d; midpoint violations=%d/%d",
                grid.size(), minDz, minDx, minDet, negative, violations, pairs)};
}

// 9. <Z>^2 + <X B>^2 <= 1 on random states and observables.
Outcome domain_suite() {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g;
    auto gaussian = [&](int r, int c) {
        ComplexMatrix m(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) m(i, j) = {g(rng), g(rng)};
        return m;
    };
    double worst = 0.0;
    for (int k = 0; k < 10000; ++k) {
        const int rank = 1 + k % 4;
        const ComplexMatrix a = gaussian(4, rank);
        ComplexMatrix rho = a * a.adjoint();
        rho /= rho.trace().real();
        Eigen::HouseholderQR<ComplexMatrix> qr(gaussian(2, 2));
        const ComplexMatrix u = qr.householderQ();
        ComplexMatrix d = ComplexMatrix::Zero(2, 2);
        d(0, 0) = (k % 3 == 0) ? -1.0 : 1.0;
        d(1, 1) = (k % 5 == 0) ? 1.0 : -1.0;
        worst = std::max(worst, domain_check(rho, u * d * u.adjoint()));
    }
    return {worst <= 1.0 + 1e-9, fmt("max over 10^4 samples = %.12f (limit 1 + 1e-9)", worst)};
}

// 10. POVM and behavior sanity over random noise, plus the correlator oracle.
Outcome model_suite() {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int bad = 0;
    Scenario s2, s3;
    s3.bobOutcomes = 3;
    s3.bobInputs = 3;
    for (int k = 0; k < 1000; ++k) {
        NoiseParams np;
        np.etaA = 0.02 + 0.98 * u(rng);
        np.etaB = u(rng);
        np.visibility = u(rng);
        np.darkCount = 0.2 * u(rng);
        PointParams p;
        p.theta = u(rng) * kPi / 2;
        const Scenario& s = (k % 2) ? s3 : s2;
        p.aliceAngles = {kPi * u(rng), kPi * u(rng)};
        p.bobAngles.clear();
        for (int y = 0; y < s.bobInputs; ++y) p.bobAngles.push_back(kPi * (2 * u(rng) - 1));
        const auto alice = darkcount_alice_povm(ideal_measurements(Party::Alice, p.aliceAngles), np.etaA, np.darkCount);
        const auto bob = darkcount_bob_povm(ideal_measurements(Party::Bob, p.bobAngles), np.etaB, np.darkCount);
        const auto lossy = lossy_bob_povm(ideal_measurements(Party::Bob, p.bobAngles), np.etaB, k % 3 == 0);
        const auto full = reference_table(s, np, p);
        if (!alice.valid() || !bob.valid() || !lossy.valid() || !full.valid() || !scenario_table(s2, full).valid())
            ++bad;
    }
    double worst = 0.0;
    for (double eta : {0.0, 0.3, 0.5, 0.7, 0.9, 1.0})
        for (double theta : {0.0, 0.2, kPi / 4, 1.2, kPi / 2}) {
            PointParams p;
            p.theta = theta;
            const auto t = scenario_table(s2, reference_table(s2, eta_noise(eta), p));
            worst = std::max(worst, std::abs(correlator(t, 2, 2) - eta * std::sin(2 * theta)));
        }
    return {bad == 0 && worst <= 1e-12,
            fmt("invalid POVM/behavior cases=%d/1000, correlator oracle max error=%.2e", bad, worst)};
}

// 11. SDP backend on planted instances.
Outcome sdp_suite() {
    std::mt19937_64 rng(11);
    int wrong = 0, dualityBreaks = 0, certFail = 0, roundTrip = 0;
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        const auto pl = test_support::planted_instance(rng);
        const auto sol = sdp::solve(pl.problem);
        const double scale = 1.0 + std::abs(pl.optimum);
        if (sol.status != sdp::Status::Optimal) {
            ++wrong;
            continue;
        }
        const double err = std::abs(sol.primalValue - pl.optimum) / scale;
        worst = std::max(worst, err);
        if (err > 1e-6) ++wrong;
        if (sol.dualValue > sol.primalValue + 1e-7 * scale) ++dualityBreaks;
        try {
            if (sdp::certified_lower_bound(pl.problem, sol) > pl.optimum + 1e-7 * scale) ++dualityBreaks;
        } catch (const std::exception&) {
            ++certFail;
        }
        const std::string text = sdp::to_sdpa_string(pl.problem);
        const auto back = sdp::parse_sdpa_string(text);
        if (!(back == pl.problem) || sdp::to_sdpa_string(back) != text) ++roundTrip;
    }
    return {wrong == 0 && dualityBreaks == 0 && certFail == 0 && roundTrip == 0,
            fmt("50 instances: wrong optimum=%d (max rel error %.2e), weak-duality breaks=%d, certificate failures=%d, "
                "SDPA round-trip mismatches=%d",
                wrong, worst, dualityBreaks, certFail, roundTrip)};
}

// Optional: device-independent Alice with fair sampling at m = 4.
Outcome di_fair_sampling() {
    Scenario s;
    s.anticommutingAlice = false;
    s.bobInputs = 3;
    s.bobOutcomes = 3;
    s.quadM = 4;
    s.basisLevel = BasisLevel::LengthTwoABZ;
    const auto r = bff_point(s, eta_noise(0.9));
    return {r.reliable() && r.rate > 0.0, fmt("eta=0.9 v=1: H(A|E)>=%.4f H(A|B)=%.4f rate=%.4e [%s] %s", r.hAE, r.hAB,
                                              r.rate, r.status.c_str(), r.diagnostics.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> only;
    bool diLong = false;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--di-long") {
            diLong = true;
        } else if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
        } else {
            std::fprintf(stderr, "usage: acceptance [--only 1,2,...] [--di-long]\n");
            return 2;
        }
    }

    double c3Worst = 0.0;
    std::vector<Criterion> all{
        {1, "analytic threshold", 1.0, analytic_threshold},
        {2, "bias-bound threshold", 10.0, bias_threshold},
        {3, "BFF recovers analytic bound", 180.0, [&] { return bff_recovers_analytic(c3Worst); }},
        {4, "BFF two-outcome threshold", 1800.0, bff_two_outcome},
        {5, "BFF three-outcome threshold", 3600.0, bff_three_outcome},
        {6, "distance estimate", 7200.0, distance_estimate},
        {7, "quadrature exactness", 1.0, quadrature_exactness},
        {8, "convexity suite", 60.0, convexity_suite},
        {9, "domain suite", 60.0, domain_suite},
        {10, "model suite", 60.0, model_suite},
        {11, "SDP backend", 60.0, sdp_suite},
    };
    if (diLong) all = {{0, "DI fair-sampling check (m=4, 2+ABZ)", 10800.0, di_fair_sampling}};

    int failures = 0;
    for (const auto& c : all) {
        if (!only.empty() && !diLong && !only.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool inTime = secs <= c.limitSeconds;
        const bool pass = o.ok && inTime;
        failures += pass ? 0 : 1;
        const std::string label = c.id > 0 ? "criterion " + std::to_string(c.id) : "optional";
        std::printf("[%s] %s %s: %s | %.2f s (limit %.0f s%s)\n", pass ? "PASS" : "FAIL", label.c_str(),
                    c.name.c_str(), o.detail.c_str(), secs, c.limitSeconds, inTime ? "" : ", exceeded");
        std::fflush(stdout);
    }
    std::printf("%d failure(s)\n", failures);
    return failures == 0 ? 0 : 1;
}
