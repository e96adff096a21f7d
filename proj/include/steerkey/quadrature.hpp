#pragma once

// Gauss-Radau quadrature on (0,1] with the right endpoint fixed at t = 1.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "steerkey/errors.hpp"

namespace steerkey {

/// 1.5 * max(1/t, 1/(1-t)), the norm bound on the optimal Eve operators at
/// node t. The t = 1 node enters no SDP; it reports 1.5 by convention.
inline double alpha_bound(double t) {
    if (!(t > 0.0 && t <= 1.0)) throw DomainError("quadrature node must lie in (0,1]");
    if (t == 1.0) return 1.5;
    return 1.5 * std::max(1.0 / t, 1.0 / (1.0 - t));
}

struct QuadratureRule {
    std::vector<double> nodes;    // strictly increasing, nodes.back() == 1
    std::vector<double> weights;  // positive, sum to 1
    std::vector<double> alphas;   // alpha_bound(node)

    int size() const { return static_cast<int>(nodes.size()); }
};

/// m-point Gauss-Radau rule for the unit weight on [0,1], exact up to degree 2m-2.
///
/// Built from the Jacobi matrix of the shifted Legendre polynomials, whose last
/// diagonal entry is modified so that 1 is an eigenvalue. Weights are the
/// squared first components of the normalized eigenvectors.
inline QuadratureRule gauss_radau(int m) {
    if (m < 1) throw DomainError("Gauss-Radau rule needs at least one node");

    // Monic shifted Legendre recurrence on [0,1]: a_k = 1/2, b_k = k^2 / (4(4k^2-1)).
    auto b = [](int k) { return k * k / (4.0 * (4.0 * k * k - 1.0)); };
    constexpr double tau = 1.0;

    // p_{m-2}(tau), p_{m-1}(tau)
    double pPrev = 0.0, pCur = 1.0;
    for (int k = 0; k + 1 < m; ++k) {
        const double next = (tau - 0.5) * pCur - (k > 0 ? b(k) * pPrev : 0.0);
        pPrev = pCur;
        pCur = next;
    }

    Eigen::VectorXd diag = Eigen::VectorXd::Constant(m, 0.5);
    Eigen::VectorXd sub(std::max(m - 1, 0));
    for (int k = 1; k < m; ++k) sub(k - 1) = std::sqrt(b(k));
    diag(m - 1) = (m == 1) ? tau : tau - b(m - 1) * pPrev / pCur;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    if (es.info() != Eigen::Success) throw DomainError("Jacobi eigen-decomposition failed");

    QuadratureRule rule;
    rule.nodes.resize(m);
    rule.weights.resize(m);
    for (int i = 0; i < m; ++i) {
        rule.nodes[i] = es.eigenvalues()(i);
        const double v0 = es.eigenvectors()(0, i);
        rule.weights[i] = v0 * v0;
    }
    rule.nodes.back() = 1.0;
    rule.alphas.resize(m);
    for (int i = 0; i < m; ++i) rule.alphas[i] = alpha_bound(rule.nodes[i]);
    return rule;
}

}  // namespace steerkey
