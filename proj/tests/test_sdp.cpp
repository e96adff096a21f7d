#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "sdp_instances.hpp"
#include "steerkey/sdp.hpp"

using namespace steerkey;
using namespace steerkey::sdp;
using namespace steerkey::test_support;

namespace {

/// min y s.t. y I - C >= 0, whose optimum is the largest eigenvalue of C.
SdpProblem max_eigenvalue_problem(const Eigen::MatrixXd& C) {
    SdpProblem p;
    p.blocks = {{static_cast<int>(C.rows()), false}};
    p.cost = dense_to_sparse(C, 0);
    p.constraints = {dense_to_sparse(Eigen::MatrixXd::Identity(C.rows(), C.cols()), 0)};
    p.rhs = {1.0};
    return p;
}

}  // namespace

TEST(Sdp, PlantedInstancesMatchOptimum) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 50; ++trial) {
        const Planted pl = planted_instance(rng);
        const SdpSolution sol = solve(pl.problem);
        ASSERT_EQ(sol.status, Status::Optimal) << "trial " << trial << ": " << sol.message;
        const double scale = 1.0 + std::abs(pl.optimum);
        EXPECT_NEAR(sol.primalValue, pl.optimum, 1e-6 * scale) << "trial " << trial;
        EXPECT_LE(sol.dualValue, sol.primalValue + 1e-7 * scale) << "weak duality, trial " << trial;
        const double lb = certified_lower_bound(pl.problem, sol);
        EXPECT_LE(lb, pl.optimum + 1e-7 * scale) << "trial " << trial;
        EXPECT_GE(lb, pl.optimum - 1e-5 * scale) << "trial " << trial;
    }
}

TEST(Sdp, MaxEigenvalueOracle) {
    std::mt19937_64 rng(5);
    for (int n : {1, 3, 7}) {
        const Eigen::MatrixXd C = random_symmetric(rng, n);
        const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(C).eigenvalues().maxCoeff();
        const SdpSolution sol = solve(max_eigenvalue_problem(C));
        ASSERT_EQ(sol.status, Status::Optimal);
        EXPECT_NEAR(sol.primalValue, lmax, 1e-7);
        EXPECT_NEAR(sol.Y.dense[0].trace(), 1.0, 1e-7);
    }
}

TEST(Sdp, DoublePrecisionPathAgrees) {
    std::mt19937_64 rng(11);
    const Planted pl = planted_instance(rng);
    SolverOptions opt;
    opt.extendedPrecision = false;
    const SdpSolution sol = solve(pl.problem, opt);
    ASSERT_EQ(sol.status, Status::Optimal);
    EXPECT_NEAR(sol.primalValue, pl.optimum, 1e-6 * (1 + std::abs(pl.optimum)));
}

TEST(Sdp, LessEqualSenseAddsSign) {
    // With y >= 0 enforced the optimum of a negative definite C becomes 0.
    Eigen::MatrixXd C(2, 2);
    C << -2.0, 0.5, 0.5, -1.0;
    SdpProblem p = max_eigenvalue_problem(C);
    EXPECT_LT(solve(p).primalValue, -0.5);
    p.senses = {Sense::LessEqual};
    const SdpSolution sol = solve(p);
    ASSERT_EQ(sol.status, Status::Optimal);
    EXPECT_NEAR(sol.primalValue, 0.0, 1e-7);
    EXPECT_LE(certified_bound(p, sol), 1e-7);
}

TEST(Sdp, MaximizeGivesUpperBound) {
    // max -y s.t. y I - C >= 0 equals -lambda_max(C).
    Eigen::MatrixXd C(2, 2);
    C << 1.0, 2.0, 2.0, -1.0;
    SdpProblem p = max_eigenvalue_problem(C);
    p.objective = Objective::Maximize;
    p.rhs = {-1.0};
    const SdpSolution sol = solve(p);
    ASSERT_EQ(sol.status, Status::Optimal);
    EXPECT_NEAR(sol.primalValue, -std::sqrt(5.0), 1e-7);
    EXPECT_GE(certified_bound(p, sol), -std::sqrt(5.0) - 1e-7);
}

TEST(Sdp, InfeasibleProblemIsFlagged) {
    // diag(y - 1, -y - 1) >= 0 has no solution.
    SdpProblem p;
    p.blocks = {{2, true}};
    p.cost.add(0, 0, 0, 1.0);
    p.cost.add(0, 1, 1, 1.0);
    SparseSymMatrix f;
    f.add(0, 0, 0, 1.0);
    f.add(0, 1, 1, -1.0);
    p.constraints = {f};
    p.rhs = {1.0};
    const SdpSolution sol = solve(p);
    EXPECT_NE(sol.status, Status::Optimal);
    EXPECT_THROW(certified_bound(p, sol), SolverError);
}

TEST(Sdp, PerturbedCertificateIsRejected) {
    std::mt19937_64 rng(3);
    const Planted pl = planted_instance(rng);
    const SdpSolution sol = solve(pl.problem);
    ASSERT_EQ(sol.status, Status::Optimal);

    SdpSolution notPsd = sol;
    notPsd.Y.dense[0] -= 0.5 * Eigen::MatrixXd::Identity(notPsd.Y.dense[0].rows(), notPsd.Y.dense[0].cols());
    EXPECT_THROW(certified_bound(pl.problem, notPsd), SolverError);

    SdpSolution infeasible = sol;
    infeasible.Y.dense[0] *= 1.5;
    EXPECT_THROW(certified_bound(pl.problem, infeasible), SolverError);

    // A tiny perturbation stays certified and can only lower the bound.
    SdpSolution tiny = sol;
    tiny.Y.dense[0](0, 0) += 1e-10;
    EXPECT_LE(certified_bound(pl.problem, tiny), pl.optimum + 1e-6);
}

TEST(Sdp, SdpaRoundTrip) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const SdpProblem p = planted_instance(rng).problem;
        const std::string text = to_sdpa_string(p);
        const SdpProblem q = parse_sdpa_string(text);
        EXPECT_EQ(q, p);
        EXPECT_EQ(to_sdpa_string(q), text);
    }
}

TEST(Sdp, SdpaFileRoundTrip) {
    std::mt19937_64 rng(19);
    SdpProblem p = planted_instance(rng).problem;
    const auto path = std::filesystem::temp_directory_path() / "steerkey_roundtrip.dat-s";
    export_sdpa(p, path.string());
    EXPECT_EQ(import_sdpa(path.string()), p);
    std::filesystem::remove(path);
}

TEST(Sdp, SdpaAcceptsCommentsAndPunctuation) {
    const std::string text =
        "\"example from a file header\n"
        "* another comment\n"
        "2 =mdim\n"
        "1 =nblocks\n"
        "{2}\n"
        "{10.0, 20.0}\n"
        "0 1 1 1 1.0\n"
        "1 1 1 1 1.0\n"
        "2 1 1 2 1.0\n";
    // Annotations after the expected count of leading integers are ignored.
    const SdpProblem annotated = parse_sdpa_string(text);
    EXPECT_EQ(annotated.numConstraints(), 2);
    EXPECT_EQ(annotated.constraints[1].entries.size(), 1u);
    const std::string clean =
        "\"example\n2\n1\n{2}\n{10.0, 20.0}\n0 1 1 1 1.0\n1 1 1 1 1.0\n2 1 1 2 1.0\n2 1 2 1 0.5\n";
    const SdpProblem p = parse_sdpa_string(clean);
    ASSERT_EQ(p.blocks.size(), 1u);
    EXPECT_EQ(p.rhs, (std::vector<double>{10.0, 20.0}));
    // Mirrored duplicate entries are merged.
    ASSERT_EQ(p.constraints[1].entries.size(), 1u);
    EXPECT_DOUBLE_EQ(p.constraints[1].entries[0].value, 1.5);
}

TEST(Sdp, SdpaParseErrorsCarryLineNumbers) {
    auto lineOf = [](const std::string& text) {
        try {
            parse_sdpa_string(text);
        } catch (const ParseError& e) {
            return e.line();
        }
        return -1;
    };
    EXPECT_EQ(lineOf("1\n1\n2\n1.0\n0 1 1 1 x\n"), 5);
    EXPECT_EQ(lineOf("1\n1\n2\n1.0\n0 1 3 1 1.0\n"), 5);
    EXPECT_EQ(lineOf("1\n1\n-2\n1.0\n1 1 1 2 1.0\n"), 5);
    EXPECT_EQ(lineOf("1\n1\n2\n1.0\n\n2 1 1 1 1.0\n"), 6);
    EXPECT_EQ(lineOf("1\n0\n"), 2);
    EXPECT_EQ(lineOf("1\n1\n2\n"), 4);
}

TEST(Sdp, SolutionJsonRoundTrip) {
    std::mt19937_64 rng(23);
    const Planted pl = planted_instance(rng);
    const SdpSolution sol = solve(pl.problem);
    ASSERT_EQ(sol.status, Status::Optimal);
    const SdpSolution back = solution_from_json(solution_to_json(sol));
    EXPECT_EQ(back.status, sol.status);
    EXPECT_EQ(back.y, sol.y);
    EXPECT_DOUBLE_EQ(certified_bound(pl.problem, back), certified_bound(pl.problem, sol));
    EXPECT_THROW(certified_bound(pl.problem, solution_from_json(solution_to_json(sol, false))), std::exception);
}

TEST(Sdp, ValidationRejectsBadShapes) {
    SdpProblem p;
    p.blocks = {{2, true}};
    p.cost.add(0, 0, 1, 1.0);
    EXPECT_THROW(p.validate(), ContractError);
    p.cost = {};
    p.constraints.resize(1);
    EXPECT_THROW(p.validate(), ContractError);
    SolverOptions bad;
    bad.tol = 0.0;
    p.rhs = {1.0};
    EXPECT_THROW(solve(p, bad), DomainError);
}
