#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "steerkey/entropy.hpp"

using namespace steerkey;
constexpr double kPi = std::numbers::pi;

TEST(Entropy, BinaryEntropyValues) {
    EXPECT_DOUBLE_EQ(binary_entropy(0.0), 0.0);
    EXPECT_DOUBLE_EQ(binary_entropy(1.0), 0.0);
    EXPECT_DOUBLE_EQ(binary_entropy(0.5), 1.0);
    EXPECT_NEAR(binary_entropy(0.11), 0.4999, 1e-4);
    EXPECT_THROW(binary_entropy(1.1), DomainError);
}

TEST(Entropy, PhiIsEvenAndBounded) {
    for (double x : {0.0, 0.2, 0.7, 1.0}) {
        EXPECT_DOUBLE_EQ(phi(x), phi(-x));
        EXPECT_LE(phi(x), 1.0);
    }
    EXPECT_DOUBLE_EQ(phi(1.0), 0.0);
    EXPECT_THROW(phi(1.5), DomainError);
}

TEST(Entropy, SimpleBound) {
    EXPECT_DOUBLE_EQ(bound_simple(1.0), 1.0);
    EXPECT_DOUBLE_EQ(bound_simple(0.0), 0.0);
    EXPECT_THROW(bound_simple(1.2), DomainError);
}

TEST(Entropy, BiasBoundReducesToSimpleWithoutBias) {
    for (double c : {0.0, 0.3, 0.8, 1.0}) EXPECT_NEAR(bound_bias(0.0, c), bound_simple(c), 1e-12);
    EXPECT_THROW(bound_bias(0.9, 0.9), DomainError);
}

TEST(Entropy, BiasBoundIsNeverNegative) {
    for (double z = -0.9; z <= 0.9; z += 0.1)
        for (double x = -0.4; x <= 0.4; x += 0.1) EXPECT_GE(bound_bias(z, x), 0.0);
}

TEST(Entropy, ClosedFormRateMatchesFormula) {
    const double eta = 0.8;
    const double expected = 1.0 - binary_entropy(0.5 * (1 + eta)) - (1 - eta);
    EXPECT_NEAR(closed_form_rate(eta, kPi / 4), expected, 1e-15);
    EXPECT_NEAR(closed_form_rate(1.0, kPi / 4), 1.0, 1e-15);
    EXPECT_THROW(closed_form_rate(1.5, kPi / 4), DomainError);
}

TEST(Entropy, CondEntropyOfLossyTable) {
    // Maximally entangled. With the no-click outcome kept, H(A|B) = (1 - eta) h(1/2) = 1 - eta.
    const double eta = 0.7;
    const auto kept = behavior(make_state(kPi / 4, 1.0), ideal_measurements(Party::Alice, {0.0, kPi / 2}),
                               lossy_bob_povm(ideal_measurements(Party::Bob, {0.0, kPi / 2}), eta, true));
    EXPECT_NEAR(cond_entropy_key(kept), 1.0 - eta, 1e-12);
    // Merged into outcome 1: p(b=1) = 1 - eta/2 and p(a=2|b=1) = (1 - eta)/(2 - eta).
    const auto t = behavior(make_state(kPi / 4, 1.0), ideal_measurements(Party::Alice, {0.0, kPi / 2}),
                            lossy_bob_povm(ideal_measurements(Party::Bob, {0.0, kPi / 2}), eta, false));
    EXPECT_NEAR(cond_entropy_key(t), (1.0 - eta / 2) * binary_entropy((1.0 - eta) / (2.0 - eta)), 1e-12);
    // Flipping with probability 1/2 makes the bit independent of Bob.
    EXPECT_NEAR(cond_entropy_key(t, 0.5), 1.0, 1e-12);
    EXPECT_THROW(cond_entropy_key(t, 0.0, 3), ContractError);
}

TEST(Entropy, CondEntropyMatchesClosedFormRate) {
    // The closed-form rate is 1 - phi(eta sin 2theta) - H(A1|B) for the lossy reference.
    for (double theta : {0.4, kPi / 4})
        for (double eta : {0.6, 0.9}) {
            const auto t = behavior(make_state(theta, 1.0), ideal_measurements(Party::Alice, {0.0, kPi / 2}),
                                    lossy_bob_povm(ideal_measurements(Party::Bob, {0.0, kPi / 2}), eta, true));
            const double rate = bound_simple(eta * std::sin(2 * theta)) - cond_entropy_key(t);
            EXPECT_NEAR(rate, closed_form_rate(eta, theta), 1e-12);
        }
}

TEST(Entropy, DwRate) {
    EXPECT_NEAR(dw_rate(0.5, 0.7), -0.2, 1e-15);
    EXPECT_THROW(dw_rate(NAN, 0.1), DomainError);
}

TEST(Entropy, HessianAgreesWithFiniteDifferences) {
    auto f = [](double z, double x) { return phi(z) - phi(std::sqrt(z * z + x * x)); };
    const double h = 1e-4;
    for (auto [z, x] : {std::pair{0.3, 0.4}, std::pair{-0.5, 0.2}, std::pair{0.1, -0.7}}) {
        const auto hd = hessian_f(z, x);
        const double fzz = (f(z + h, x) - 2 * f(z, x) + f(z - h, x)) / (h * h);
        const double fxx = (f(z, x + h) - 2 * f(z, x) + f(z, x - h)) / (h * h);
        const double fzx = (f(z + h, x + h) - f(z + h, x - h) - f(z - h, x + h) + f(z - h, x - h)) / (4 * h * h);
        EXPECT_NEAR(hd.d2z, fzz, 1e-5);
        EXPECT_NEAR(hd.d2x, fxx, 1e-5);
        EXPECT_NEAR(hd.det, fzz * fxx - fzx * fzx, 1e-4);
    }
    EXPECT_THROW(hessian_f(0.5, 0.0), DomainError);
}

TEST(Entropy, DomainCheckOnProductAndMaximal) {
    EXPECT_NEAR(domain_check(make_state(0.0, 1.0), pauli_z()), 1.0, 1e-14);
    EXPECT_NEAR(domain_check(make_state(kPi / 4, 1.0), pauli_x()), 1.0, 1e-14);
    EXPECT_THROW(domain_check(pauli_x(), pauli_x()), ContractError);
}
