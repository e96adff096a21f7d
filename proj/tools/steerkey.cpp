// Command-line front end: sweeps, thresholds, quadrature tables and SDP file
// interop.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "steerkey/bff.hpp"
#include "steerkey/quadrature.hpp"
#include "steerkey/runner.hpp"
#include "steerkey/sdp.hpp"

namespace fs = std::filesystem;
using namespace steerkey;

namespace {

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

int run_sweep(const std::string& config, const std::string& outDir) {
    const SweepSpec spec = sweep_spec_from_json(read_json(config));
    const auto reports = sweep(spec);
    fs::create_directories(outDir);
    {
        std::ofstream csv(fs::path(outDir) / "rates.csv");
        write_csv(csv, reports);
    }
    {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : reports) j.push_back(to_json(r));
        std::ofstream(fs::path(outDir) / "reports.json") << j.dump(2) << '\n';
    }
    if (spec.axis == Axis::EtaVisibility) {
        std::ofstream b(fs::path(outDir) / "boundary.csv");
        b << "visibility,eta_boundary\n";
        for (const auto& [v, eta] : positivity_boundary(reports)) b << format_value(v) << ',' << format_value(eta) << '\n';
    }
    int unreliable = 0;
    for (const auto& r : reports) unreliable += r.reliable() ? 0 : 1;
    std::printf("%zu points written to %s (%d unreliable)\n", reports.size(), outDir.c_str(), unreliable);
    return 0;
}

struct ThresholdArgs {
    std::string method;
    std::string config;
    int outcomes = 2;
    int m = 15;
    std::optional<double> lo, hi;
    double tol = 0.0;
};

SweepSpec default_threshold_spec(const ThresholdArgs& a) {
    SweepSpec spec;
    spec.config.method = method_from_string(a.method);
    spec.axis = Axis::Eta;
    spec.range = {0.5, 1.0, 0.0};
    switch (spec.config.method) {
        case Method::AnalyticSimple: break;
        case Method::AnalyticBias: spec.optimizer.theta = true; break;
        case Method::Bff:
            spec.config.scenario.quadM = a.m;
            spec.config.scenario.bobOutcomes = a.outcomes;
            spec.range = a.outcomes == 3 ? Range{0.45, 0.55, 0.0} : Range{0.55, 0.65, 0.0};
            break;
    }
    return spec;
}

int run_threshold(const ThresholdArgs& a) {
    SweepSpec spec;
    if (!a.config.empty()) {
        nlohmann::json j = read_json(a.config);
        j["method"] = a.method;
        spec = sweep_spec_from_json(j);
    } else {
        spec = default_threshold_spec(a);
    }
    if (a.lo) spec.range.start = *a.lo;
    if (a.hi) spec.range.stop = *a.hi;
    const ThresholdResult r = threshold(spec, a.tol);
    nlohmann::json out{{"method", to_string(spec.config.method)},
                       {"axis", to_string(spec.axis)},
                       {"threshold", r.value},
                       {"bracket", {r.lo, r.hi}},
                       {"evaluations", r.evaluations},
                       {"positiveSide", to_json(r.positiveSide)},
                       {"otherSide", to_json(r.otherSide)}};
    std::cout << out.dump(2) << '\n';
    return 0;
}

int run_quadrature(int m) {
    const QuadratureRule rule = gauss_radau(m);
    std::printf("i,t,w,alpha\n");
    for (int i = 0; i < rule.size(); ++i)
        std::printf("%d,%.17g,%.17g,%.17g\n", i + 1, rule.nodes[i], rule.weights[i], rule.alphas[i]);
    return 0;
}

int run_sdp_export(const std::string& config, double value, int node, const std::string& out) {
    const SweepSpec spec = sweep_spec_from_json(read_json(config));
    if (spec.config.method != Method::Bff) throw DomainError("sdp export needs a bff configuration");
    const Scenario& s = spec.config.scenario;
    const QuadratureRule rule = gauss_radau(s.quadM);
    if (node < 1 || node >= rule.size()) throw DomainError("node index must lie in [1, m-1]");
    Scenario sq = s;
    sq.preprocessingQ = resolved(s, spec.params).q;
    const NoiseParams np = noise_at(spec, value, spec.noise.visibility);
    const BehaviorTable table = scenario_table(s, reference_table(s, np, spec.params));
    const int i = node - 1;
    const MomentBasis basis = build_basis(sq, node);
    const ConstraintSet cs{data_equalities(sq, table), alpha_constraints(sq, rule.alphas[i], node)};
    const auto inst =
        assemble_node_sdp(sq, basis, build_objective(sq, rule.nodes[i], node), cs, rule.nodes[i], rule.weights[i], node);
    const ReducedSdp red = to_sdp(inst);
    if (!red.consistent) throw SolverError("inconsistent equality constraints", node);
    std::fprintf(stderr, "node %d: t=%.17g weight=%.17g objective offset=%.17g\n", node, rule.nodes[i], rule.weights[i],
                 red.objectiveOffset);
    if (out.empty())
        std::cout << sdp::to_sdpa_string(red.problem);
    else
        sdp::export_sdpa(red.problem, out);
    return 0;
}

int run_sdp_solve(const std::string& file, double tol, const std::string& out) {
    const sdp::SdpProblem p = sdp::import_sdpa(file);
    sdp::SolverOptions opt;
    opt.tol = tol;
    const sdp::SdpSolution sol = sdp::solve(p, opt);
    nlohmann::json j = sdp::solution_to_json(sol, !out.empty());
    if (sol.status != sdp::Status::Infeasible) {
        try {
            j["certifiedBound"] = sdp::certified_bound(p, sol, tol);
        } catch (const SolverError&) {
        }
    }
    j["iterations"] = sol.iterations;
    j["message"] = sol.message;
    if (out.empty())
        std::cout << j.dump(2) << '\n';
    else
        std::ofstream(out) << j.dump(2) << '\n';
    return sol.status == sdp::Status::Optimal ? 0 : 2;
}

int run_sdp_certify(const std::string& file, const std::string& solution, double tol) {
    const sdp::SdpProblem p = sdp::import_sdpa(file);
    const sdp::SdpSolution sol = sdp::import_solution(solution);
    std::printf("%.17g\n", sdp::certified_bound(p, sol, tol));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Certified key rates for one-sided device-independent QKD"};
    app.require_subcommand(1);

    std::string config, outDir;
    auto* sweepCmd = app.add_subcommand("sweep", "run a parameter sweep and write CSV/JSON reports");
    sweepCmd->add_option("--config", config, "sweep configuration (JSON)")->required()->check(CLI::ExistingFile);
    sweepCmd->add_option("--out", outDir, "output directory")->required();

    ThresholdArgs ta;
    auto* thrCmd = app.add_subcommand("threshold", "bisect the rate-positivity threshold");
    thrCmd->add_option("--method", ta.method, "analytic-simple | analytic-bias | bff")->required();
    thrCmd->add_option("--config", ta.config, "configuration overriding the defaults")->check(CLI::ExistingFile);
    thrCmd->add_option("--outcomes", ta.outcomes, "Bob outcomes for bff (2 merged, 3 separate)")
        ->check(CLI::IsMember({2, 3}));
    thrCmd->add_option("--m", ta.m, "quadrature nodes for bff")->check(CLI::Range(2, 40));
    thrCmd->add_option("--lo", ta.lo, "bracket start");
    thrCmd->add_option("--hi", ta.hi, "bracket end");
    thrCmd->add_option("--tol", ta.tol, "bisection tolerance (default 1e-3 eta, 1 km distance)");

    int quadM = 15;
    auto* quadCmd = app.add_subcommand("quadrature", "print the Gauss-Radau rule");
    quadCmd->add_option("--m", quadM, "number of nodes")->check(CLI::Range(2, 60));

    auto* sdpCmd = app.add_subcommand("sdp", "SDPA file interop");
    sdpCmd->require_subcommand(1);
    std::string exportConfig, exportOut;
    double exportValue = 0.0;
    int exportNode = 1;
    auto* expCmd = sdpCmd->add_subcommand("export", "write one node SDP of a bff configuration in SDPA format");
    expCmd->add_option("file", exportConfig, "sweep configuration (JSON)")->required()->check(CLI::ExistingFile);
    expCmd->add_option("--value", exportValue, "axis value")->required();
    expCmd->add_option("--node", exportNode, "quadrature node, 1-based");
    expCmd->add_option("--out", exportOut, "output .dat-s file (stdout if omitted)");

    std::string solveFile, solveOut;
    double solveTol = 1e-8;
    auto* solCmd = sdpCmd->add_subcommand("solve", "solve an SDPA file with the embedded solver");
    solCmd->add_option("file", solveFile, "SDPA sparse file")->required()->check(CLI::ExistingFile);
    solCmd->add_option("--tol", solveTol, "gap and feasibility tolerance");
    solCmd->add_option("--out", solveOut, "write the solution JSON, with certificate, here");

    std::string certFile, certSolution;
    double certTol = 1e-8;
    auto* certCmd = sdpCmd->add_subcommand("certify", "verify an external solution and print its certified bound");
    certCmd->add_option("file", certFile, "SDPA sparse file")->required()->check(CLI::ExistingFile);
    certCmd->add_option("solution", certSolution, "solution JSON with a Y certificate")
        ->required()
        ->check(CLI::ExistingFile);
    certCmd->add_option("--tol", certTol, "feasibility tolerance");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sweepCmd) return run_sweep(config, outDir);
        if (*thrCmd) return run_threshold(ta);
        if (*quadCmd) return run_quadrature(quadM);
        if (*expCmd) return run_sdp_export(exportConfig, exportValue, exportNode, exportOut);
        if (*solCmd) return run_sdp_solve(solveFile, solveTol, solveOut);
        if (*certCmd) return run_sdp_certify(certFile, certSolution, certTol);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
