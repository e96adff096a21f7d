#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "steerkey/quadrature.hpp"

using namespace steerkey;

TEST(Quadrature, TwoPointRule) {
    const auto r = gauss_radau(2);
    ASSERT_EQ(r.size(), 2);
    EXPECT_NEAR(r.nodes[0], 1.0 / 3, 1e-15);
    EXPECT_NEAR(r.weights[0], 0.75, 1e-15);
    EXPECT_EQ(r.nodes[1], 1.0);
    EXPECT_NEAR(r.weights[1], 0.25, 1e-15);
}

TEST(Quadrature, ExactForPolynomials) {
    for (int m = 2; m <= 15; ++m) {
        const auto r = gauss_radau(m);
        EXPECT_EQ(r.nodes.back(), 1.0);
        for (int k = 0; k <= 2 * m - 2; ++k) {
            double s = 0.0;
            for (int i = 0; i < m; ++i) s += r.weights[i] * std::pow(r.nodes[i], k);
            EXPECT_NEAR(s, 1.0 / (k + 1), 1e-12) << "m=" << m << " k=" << k;
        }
    }
}

TEST(Quadrature, NotExactBeyondDegree) {
    const int m = 4;
    const auto r = gauss_radau(m);
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += r.weights[i] * std::pow(r.nodes[i], 2 * m - 1);
    EXPECT_GT(std::abs(s - 1.0 / (2 * m)), 1e-8);
}

TEST(Quadrature, NodesIncreasingWeightsPositive) {
    const auto r = gauss_radau(15);
    EXPECT_NEAR(std::accumulate(r.weights.begin(), r.weights.end(), 0.0), 1.0, 1e-14);
    for (int i = 0; i < r.size(); ++i) {
        EXPECT_GT(r.weights[i], 0.0);
        EXPECT_GT(r.nodes[i], 0.0);
        if (i > 0) EXPECT_GT(r.nodes[i], r.nodes[i - 1]);
        EXPECT_DOUBLE_EQ(r.alphas[i], alpha_bound(r.nodes[i]));
    }
}

TEST(Quadrature, AlphaBound) {
    EXPECT_DOUBLE_EQ(alpha_bound(1.0), 1.5);
    EXPECT_DOUBLE_EQ(alpha_bound(0.5), 3.0);
    EXPECT_DOUBLE_EQ(alpha_bound(0.25), 6.0);
    EXPECT_DOUBLE_EQ(alpha_bound(0.8), 7.5);
    EXPECT_THROW(alpha_bound(0.0), DomainError);
    EXPECT_THROW(gauss_radau(0), DomainError);
}
