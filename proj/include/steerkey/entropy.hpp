#pragma once

// Closed-form entropy bounds and key rates for the two-input, two-outcome
// steering scenario with anticommuting observables on the trusted side.

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "steerkey/errors.hpp"
#include "steerkey/quantum_model.hpp"

namespace steerkey {

/// h(p) in bits, with 0 log 0 = 0.
inline double binary_entropy(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("binary entropy argument must lie in [0,1]");
    if (p == 0.0 || p == 1.0) return 0.0;
    return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

/// phi(x) = h((1+x)/2).
inline double phi(double x) {
    if (!(x >= -1.0 && x <= 1.0)) throw DomainError("phi argument must lie in [-1,1]");
    return binary_entropy(0.5 * (1.0 + x));
}

/// H(A'|B) on the (x,y) = (1,keyInputB) block, where A' is Alice's bit flipped
/// with probability q. Bob may have any number of outcomes.
inline double cond_entropy_key(const BehaviorTable& keyTable, double q = 0.0, int keyInputB = 1) {
    if (!(q >= 0.0 && q <= 1.0)) throw DomainError("preprocessing probability must lie in [0,1]");
    if (keyTable.outcomesA(1) != 2) throw ContractError("key setting must be two-outcome for Alice");
    if (keyInputB < 1 || keyInputB > keyTable.nY()) throw ContractError("Bob key input out of range");
    const int y = keyInputB;
    double h = 0.0;
    for (int b = 1; b <= keyTable.outcomesB(y); ++b) {
        const double pb = keyTable.marginalB(b, y, 1);
        if (pb <= 0.0) continue;
        for (int a = 1; a <= 2; ++a) {
            const double pab = (1.0 - q) * keyTable(a, b, 1, y) + q * keyTable(3 - a, b, 1, y);
            if (pab > 0.0) h -= pab * std::log2(pab / pb);
        }
    }
    return std::clamp(h, 0.0, 1.0);
}

/// H(A_1|E) >= 1 - phi(<A_2 B_2>).
inline double bound_simple(double corrA2B2) {
    if (!(std::abs(corrA2B2) <= 1.0)) throw DomainError("correlator must lie in [-1,1]");
    return 1.0 - phi(corrA2B2);
}

/// H(A_1|E) >= phi(<A_1>) - phi(sqrt(<A_1>^2 + <A_2 B_2>^2)).
inline double bound_bias(double biasA1, double corrA2B2) {
    const double r2 = biasA1 * biasA1 + corrA2B2 * corrA2B2;
    if (!(r2 <= 1.0 + 1e-9)) throw DomainError("bias and correlator outside the unit disc");
    const double r = std::min(1.0, std::sqrt(r2));
    return std::max(0.0, phi(std::clamp(biasA1, -1.0, 1.0)) - phi(r));
}

/// Asymptotic rate of the lossy reference experiment with the simple bound:
/// 1 - h((1 + eta sin 2theta)/2) - (1 - eta) h(cos^2 theta).
inline double closed_form_rate(double eta, double theta) {
    if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("eta must lie in [0,1]");
    const double c = std::cos(theta);
    return 1.0 - binary_entropy(0.5 * (1.0 + eta * std::sin(2.0 * theta))) -
           (1.0 - eta) * binary_entropy(c * c);
}

/// Devetak-Winter rate H(A|E) - H(A|B); not clamped.
inline double dw_rate(double hAE, double hAB) {
    if (!std::isfinite(hAE) || !std::isfinite(hAB)) throw DomainError("entropies must be finite");
    return hAE - hAB;
}

struct HessianDiag {
    double d2z;  ///< d^2 f / dz^2
    double d2x;  ///< d^2 f / dx^2
    double det;  ///< determinant of the Hessian
};

/// Second derivatives of f(z,x) = phi(z) - phi(sqrt(z^2+x^2)) in closed form.
inline HessianDiag hessian_f(double z, double x) {
    const double r2 = z * z + x * x;
    if (!(r2 < 1.0) || x == 0.0) throw DomainError("hessian needs z^2 + x^2 < 1 and x != 0");
    const double r = std::sqrt(r2);
    const double at = std::atanh(r);
    const double ln2 = std::numbers::ln2;
    const double d2z =
        x * x / ln2 * ((x * x - 1.0 + 2.0 * z * z) / (r2 * (1.0 - r2) * (1.0 - z * z)) + at / (r2 * r));
    const double d2x = (x * x / (r2 * (1.0 - r2)) + z * z * at / (r2 * r)) / ln2;
    const double det = x * x / (ln2 * ln2 * r2 * r2 * (1.0 - r2) * (1.0 - z * z)) * (r * at - r2);
    return {d2z, d2x, det};
}

/// <Z (x) I>^2 + <X (x) B>^2 for a two-qubit state and a Hermitian unitary B on Bob.
inline double domain_check(const ComplexMatrix& state, const ComplexMatrix& bobObservable) {
    if (state.rows() != 4 || state.cols() != 4) throw ContractError("state must be 4x4");
    if (bobObservable.rows() != 2 || bobObservable.cols() != 2)
        throw ContractError("Bob observable must be 2x2");
    auto kron = [](const ComplexMatrix& a, const ComplexMatrix& b) {
        ComplexMatrix k(4, 4);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) k.block(2 * i, 2 * j, 2, 2) = a(i, j) * b;
        return k;
    };
    const ComplexMatrix id = ComplexMatrix::Identity(2, 2);
    const double z = (state * kron(pauli_z(), id)).trace().real();
    const double xb = (state * kron(pauli_x(), bobObservable)).trace().real();
    return z * z + xb * xb;
}

}  // namespace steerkey
