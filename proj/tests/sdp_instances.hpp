#pragma once

// Random SDP instances with a known optimum, shared by the unit and
// acceptance tests.

#include <Eigen/Dense>

#include <algorithm>
#include <random>

#include "steerkey/sdp.hpp"

namespace steerkey::test_support {

inline sdp::SparseSymMatrix dense_to_sparse(const Eigen::MatrixXd& m, int block, bool diagonal = false) {
    sdp::SparseSymMatrix s;
    for (int i = 0; i < m.rows(); ++i)
        for (int j = i; j < m.cols(); ++j)
            if (m(i, j) != 0.0 && (!diagonal || i == j)) s.add(block, i, j, m(i, j));
    return s;
}

inline void append(sdp::SparseSymMatrix& dst, const sdp::SparseSymMatrix& src) {
    dst.entries.insert(dst.entries.end(), src.entries.begin(), src.entries.end());
}

inline Eigen::MatrixXd random_symmetric(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> g;
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = g(rng);
    return 0.5 * (a + a.transpose());
}

inline Eigen::MatrixXd random_orthogonal(std::mt19937_64& rng, int n) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_symmetric(rng, n) + Eigen::MatrixXd::Identity(n, n) * 0.1);
    return qr.householderQ();
}

/// Instance with a planted complementary pair (Y*, Z*), so the optimum equals c^T y*.
struct Planted {
    sdp::SdpProblem problem;
    double optimum = 0.0;
};

inline Planted planted_instance(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> sizeDist(2, 6), mDist(2, 8);
    std::uniform_real_distribution<double> u(0.2, 2.0);
    std::normal_distribution<double> g;
    const int n = sizeDist(rng), nd = 3;
    // Fewer constraints than Y has free entries, so the dual keeps an interior.
    const int m = std::min(mDist(rng), n * (n + 1) / 2 + nd - 1);

    // Dense block: Y* and Z* share eigenvectors with disjoint supports.
    const Eigen::MatrixXd Q = random_orthogonal(rng, n);
    const int rank = std::uniform_int_distribution<int>(1, n - 1)(rng);
    Eigen::VectorXd ly = Eigen::VectorXd::Zero(n), lz = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) (i < rank ? ly(i) : lz(i)) = u(rng);
    const Eigen::MatrixXd Ystar = Q * ly.asDiagonal() * Q.transpose();
    const Eigen::MatrixXd Zstar = Q * lz.asDiagonal() * Q.transpose();
    // Diagonal block: complementary entries.
    Eigen::VectorXd dy(nd), dz(nd);
    for (int i = 0; i < nd; ++i) {
        const bool onY = i % 2 == 0;
        dy(i) = onY ? u(rng) : 0.0;
        dz(i) = onY ? 0.0 : u(rng);
    }

    Planted pl;
    sdp::SdpProblem& p = pl.problem;
    p.blocks = {{n, false}, {nd, true}};
    std::vector<double> ystar(m);
    Eigen::MatrixXd F0 = -Zstar;
    Eigen::VectorXd F0d = -dz;
    for (int k = 0; k < m; ++k) {
        const Eigen::MatrixXd Fk = random_symmetric(rng, n);
        Eigen::VectorXd Fkd(nd);
        for (int i = 0; i < nd; ++i) Fkd(i) = g(rng);
        ystar[k] = g(rng);
        F0 += ystar[k] * Fk;
        F0d += ystar[k] * Fkd;
        sdp::SparseSymMatrix fk = dense_to_sparse(Fk, 0);
        append(fk, dense_to_sparse(Eigen::MatrixXd(Fkd.asDiagonal()), 1, true));
        fk.normalize();
        p.constraints.push_back(fk);
        p.rhs.push_back((Fk.cwiseProduct(Ystar)).sum() + Fkd.dot(dy));
    }
    p.cost = dense_to_sparse(F0, 0);
    append(p.cost, dense_to_sparse(Eigen::MatrixXd(F0d.asDiagonal()), 1, true));
    p.cost.normalize();
    for (int k = 0; k < m; ++k) pl.optimum += p.rhs[k] * ystar[k];
    return pl;
}

}  // namespace steerkey::test_support
