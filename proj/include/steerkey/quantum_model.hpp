#pragma once

// Reference-experiment model: two-qubit states, noisy detector POVMs and the
// resulting behavior table p(a,b|x,y).
//
// Labels follow the protocol: inputs x,y and outcomes a,b are 1-based, and
// Bob's no-detection outcome is label 3.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "steerkey/errors.hpp"

namespace steerkey {

using ComplexMatrix = Eigen::MatrixXcd;

inline constexpr int kNoClick = 3;

enum class Party { Alice, Bob };

inline bool is_hermitian(const ComplexMatrix& m, double tol = 1e-12) {
    if (m.rows() != m.cols()) return false;
    return (m - m.adjoint()).cwiseAbs().maxCoeff() <= tol;
}

inline double min_eigenvalue(const ComplexMatrix& m) {
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

struct NoiseParams {
    double etaA = 1.0;
    double etaB = 1.0;
    double visibility = 1.0;
    double darkCount = 0.0;
    double alphaDb = 0.2;  // dB/km
    double lengthKm = 0.0;

    void validate() const {
        auto prob = [](double p, const char* name) {
            if (!(p >= 0.0 && p <= 1.0))
                throw DomainError(std::string(name) + " must lie in [0,1]");
        };
        prob(etaA, "etaA");
        prob(etaB, "etaB");
        prob(visibility, "visibility");
        prob(darkCount, "darkCount");
        if (!(alphaDb >= 0.0)) throw DomainError("alphaDb must be nonnegative");
        if (!(lengthKm >= 0.0)) throw DomainError("lengthKm must be nonnegative");
    }
};

/// POVMs of one party, one list of effects per input. perInput[x-1][a-1] is the
/// effect of outcome a for input x.
struct MeasurementSet {
    Party party = Party::Alice;
    std::vector<std::vector<ComplexMatrix>> perInput;

    int inputs() const { return static_cast<int>(perInput.size()); }
    int outcomes(int x) const { return static_cast<int>(perInput.at(x - 1).size()); }
    const ComplexMatrix& effect(int outcome, int input) const {
        return perInput.at(input - 1).at(outcome - 1);
    }

    /// Positivity and completeness of every POVM.
    bool valid(double tol = 1e-10) const {
        for (const auto& povm : perInput) {
            if (povm.empty()) return false;
            const auto dim = povm.front().rows();
            ComplexMatrix sum = ComplexMatrix::Zero(dim, dim);
            for (const auto& e : povm) {
                if (e.rows() != dim || !is_hermitian(e, tol)) return false;
                if (min_eigenvalue(e) < -tol) return false;
                sum += e;
            }
            if ((sum - ComplexMatrix::Identity(dim, dim)).cwiseAbs().maxCoeff() > tol) return false;
        }
        return true;
    }
};

/// Joint conditional distribution p(a,b|x,y) with per-input outcome counts.
class BehaviorTable {
public:
    BehaviorTable() = default;
    BehaviorTable(std::vector<int> outA, std::vector<int> outB)
        : outA_(std::move(outA)), outB_(std::move(outB)) {
        int offset = 0;
        for (int oa : outA_)
            for (int ob : outB_) {
                offsets_.push_back(offset);
                offset += oa * ob;
            }
        p_.assign(offset, 0.0);
    }

    int nX() const { return static_cast<int>(outA_.size()); }
    int nY() const { return static_cast<int>(outB_.size()); }
    int outcomesA(int x) const { return outA_.at(x - 1); }
    int outcomesB(int y) const { return outB_.at(y - 1); }
    const std::vector<int>& outA() const { return outA_; }
    const std::vector<int>& outB() const { return outB_; }

    double& operator()(int a, int b, int x, int y) { return p_[index(a, b, x, y)]; }
    double operator()(int a, int b, int x, int y) const { return p_[index(a, b, x, y)]; }

    double marginalA(int a, int x, int y = 1) const {
        double s = 0.0;
        for (int b = 1; b <= outcomesB(y); ++b) s += (*this)(a, b, x, y);
        return s;
    }
    double marginalB(int b, int y, int x = 1) const {
        double s = 0.0;
        for (int a = 1; a <= outcomesA(x); ++a) s += (*this)(a, b, x, y);
        return s;
    }

    /// Normalization, nonnegativity and no-signaling.
    bool valid(double tol = 1e-10) const {
        for (int x = 1; x <= nX(); ++x)
            for (int y = 1; y <= nY(); ++y) {
                double s = 0.0;
                for (int a = 1; a <= outcomesA(x); ++a)
                    for (int b = 1; b <= outcomesB(y); ++b) {
                        const double v = (*this)(a, b, x, y);
                        if (v < -1e-12) return false;
                        s += v;
                    }
                if (std::abs(s - 1.0) > tol) return false;
                for (int a = 1; a <= outcomesA(x); ++a)
                    if (std::abs(marginalA(a, x, y) - marginalA(a, x, 1)) > tol) return false;
                for (int b = 1; b <= outcomesB(y); ++b)
                    if (std::abs(marginalB(b, y, x) - marginalB(b, y, 1)) > tol) return false;
            }
        return true;
    }

    bool operator==(const BehaviorTable&) const = default;

private:
    std::size_t index(int a, int b, int x, int y) const {
        if (x < 1 || x > nX() || y < 1 || y > nY() || a < 1 || a > outA_[x - 1] || b < 1 ||
            b > outB_[y - 1])
            throw ContractError("behavior index out of range");
        return offsets_[(x - 1) * nY() + (y - 1)] + (a - 1) * outB_[y - 1] + (b - 1);
    }

    std::vector<int> outA_, outB_;
    std::vector<int> offsets_;
    std::vector<double> p_;
};

// ---------------------------------------------------------------------------
// States and ideal measurements

/// v |psi(theta)><psi(theta)| + (1-v)/4 I with |psi> = cos(theta)|00> + sin(theta)|11>.
inline ComplexMatrix make_state(double theta, double v) {
    if (!(theta >= 0.0 && theta <= std::numbers::pi / 2))
        throw DomainError("theta must lie in [0, pi/2]");
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("visibility must lie in [0,1]");
    Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(4);
    psi(0) = std::cos(theta);
    psi(3) = std::sin(theta);
    return v * psi * psi.adjoint() + (1.0 - v) / 4.0 * ComplexMatrix::Identity(4, 4);
}

inline ComplexMatrix pauli_x() {
    ComplexMatrix m(2, 2);
    m << 0, 1, 1, 0;
    return m;
}

inline ComplexMatrix pauli_z() {
    ComplexMatrix m(2, 2);
    m << 1, 0, 0, -1;
    return m;
}

/// cos(angle) Z + sin(angle) X.
inline ComplexMatrix ideal_qubit_observable(double angle) {
    return std::cos(angle) * pauli_z() + std::sin(angle) * pauli_x();
}

/// Projective two-outcome measurements {(I+O)/2, (I-O)/2} for each observable angle.
inline MeasurementSet ideal_measurements(Party party, const std::vector<double>& angles) {
    MeasurementSet ms{party, {}};
    const ComplexMatrix id = ComplexMatrix::Identity(2, 2);
    for (double ang : angles) {
        const ComplexMatrix o = ideal_qubit_observable(ang);
        ms.perInput.push_back({(id + o) / 2.0, (id - o) / 2.0});
    }
    return ms;
}

namespace detail {

inline void require_projective_two_outcome(const MeasurementSet& ideal) {
    for (const auto& povm : ideal.perInput) {
        if (povm.size() != 2) throw ContractError("ideal POVM must have two outcomes");
        for (const auto& e : povm)
            if ((e * e - e).cwiseAbs().maxCoeff() > 1e-10)
                throw ContractError("ideal POVM must be projective");
    }
}

inline void require_probability(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError(std::string(name) + " must lie in [0,1]");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Noise models

/// Detection loss on Bob's side. With keepEmpty the no-click weight (1-eta) I is
/// a third outcome; otherwise it is added to outcome mergeTarget.
inline MeasurementSet lossy_bob_povm(const MeasurementSet& ideal, double etaB, bool keepEmpty,
                                     int mergeTarget = 1) {
    detail::require_projective_two_outcome(ideal);
    detail::require_probability(etaB, "etaB");
    if (mergeTarget != 1 && mergeTarget != 2) throw ContractError("merge target must be 1 or 2");
    MeasurementSet out{ideal.party, {}};
    for (const auto& povm : ideal.perInput) {
        const auto dim = povm[0].rows();
        const ComplexMatrix lost = (1.0 - etaB) * ComplexMatrix::Identity(dim, dim);
        std::vector<ComplexMatrix> effects{etaB * povm[0], etaB * povm[1]};
        if (keepEmpty)
            effects.push_back(lost);
        else
            effects[mergeTarget - 1] += lost;
        out.perInput.push_back(std::move(effects));
    }
    return out;
}

/// Coefficient of the identity in Bob's grouped no-click/double-click effect.
inline double bob_empty_weight(double etaB, double pd) {
    return pd * etaB + (1.0 - etaB) * (pd * pd + (1.0 - pd) * (1.0 - pd));
}

/// Loss plus dark counts on Bob's two detectors; outcomes {1, 2, no/double click}.
inline MeasurementSet darkcount_bob_povm(const MeasurementSet& ideal, double etaB, double pd) {
    detail::require_projective_two_outcome(ideal);
    detail::require_probability(etaB, "etaB");
    detail::require_probability(pd, "darkCount");
    MeasurementSet out{ideal.party, {}};
    const double single = etaB * (1.0 - pd);
    const double spurious = (1.0 - etaB) * pd * (1.0 - pd);
    for (const auto& povm : ideal.perInput) {
        const auto dim = povm[0].rows();
        const ComplexMatrix id = ComplexMatrix::Identity(dim, dim);
        out.perInput.push_back({single * povm[0] + spurious * id, single * povm[1] + spurious * id,
                                bob_empty_weight(etaB, pd) * id});
    }
    return out;
}

/// Probability that Alice registers exactly one click, i.e. that a round is kept.
inline double retention_probability(double etaA, double pd) {
    detail::require_probability(etaA, "etaA");
    detail::require_probability(pd, "darkCount");
    const double r = 1.0 - pd * etaA - (1.0 - etaA) * (pd * pd + (1.0 - pd) * (1.0 - pd));
    return std::clamp(r, 0.0, 1.0);
}

/// Alice's POVM after discarding no-click and double-click rounds and renormalizing.
inline MeasurementSet darkcount_alice_povm(const MeasurementSet& ideal, double etaA, double pd) {
    detail::require_projective_two_outcome(ideal);
    detail::require_probability(etaA, "etaA");
    detail::require_probability(pd, "darkCount");
    const double denom = 1.0 - pd * etaA - (1.0 - etaA) * (pd * pd + (1.0 - pd) * (1.0 - pd));
    if (denom <= 1e-15) throw DomainError("degenerate retention probability");
    MeasurementSet out{ideal.party, {}};
    for (const auto& povm : ideal.perInput) {
        const auto dim = povm[0].rows();
        const ComplexMatrix id = ComplexMatrix::Identity(dim, dim);
        ComplexMatrix first = (etaA * (1.0 - pd) * povm[0] + (1.0 - etaA) * pd * (1.0 - pd) * id) / denom;
        ComplexMatrix second = id - first;
        out.perInput.push_back({std::move(first), std::move(second)});
    }
    return out;
}

/// etaFix * 10^(-alpha l / 10).
inline double fiber_efficiency(double etaFix, double alphaDb, double lengthKm) {
    if (!(lengthKm >= 0.0)) throw DomainError("fiber length must be nonnegative");
    return etaFix * std::pow(10.0, -alphaDb * lengthKm / 10.0);
}

// ---------------------------------------------------------------------------
// Statistics

/// Born rule p(a,b|x,y) = tr[rho (M_{a|x} (x) N_{b|y})].
inline BehaviorTable behavior(const ComplexMatrix& state, const MeasurementSet& alice,
                              const MeasurementSet& bob) {
    if (alice.perInput.empty() || bob.perInput.empty()) throw ContractError("empty measurement set");
    const auto da = alice.perInput[0][0].rows();
    const auto db = bob.perInput[0][0].rows();
    if (state.rows() != da * db || state.cols() != da * db)
        throw ContractError("state dimension does not match measurement dimensions");
    std::vector<int> outA, outB;
    for (int x = 1; x <= alice.inputs(); ++x) outA.push_back(alice.outcomes(x));
    for (int y = 1; y <= bob.inputs(); ++y) outB.push_back(bob.outcomes(y));
    BehaviorTable t(outA, outB);
    for (int x = 1; x <= alice.inputs(); ++x)
        for (int y = 1; y <= bob.inputs(); ++y)
            for (int a = 1; a <= alice.outcomes(x); ++a) {
                const ComplexMatrix& m = alice.effect(a, x);
                if (m.rows() != da) throw ContractError("inconsistent Alice effect dimension");
                for (int b = 1; b <= bob.outcomes(y); ++b) {
                    const ComplexMatrix& n = bob.effect(b, y);
                    if (n.rows() != db) throw ContractError("inconsistent Bob effect dimension");
                    ComplexMatrix k(da * db, da * db);
                    for (Eigen::Index i = 0; i < da; ++i)
                        for (Eigen::Index j = 0; j < da; ++j) k.block(i * db, j * db, db, db) = m(i, j) * n;
                    double p = (state * k).trace().real();
                    if (p < -1e-12) throw DomainError("negative probability from Born rule");
                    t(a, b, x, y) = std::clamp(p, 0.0, 1.0);
                }
            }
    return t;
}

/// Moves all weight of Bob's outcome `from` into outcome `into` and drops `from`.
/// Only settings that actually have outcome `from` are affected.
inline BehaviorTable merge_bob_outcome(const BehaviorTable& t, int from = kNoClick, int into = 1) {
    std::vector<int> outB = t.outB();
    for (auto& o : outB)
        if (o >= from) --o;
    BehaviorTable m(t.outA(), outB);
    for (int x = 1; x <= t.nX(); ++x)
        for (int y = 1; y <= t.nY(); ++y) {
            const bool has = t.outcomesB(y) >= from;
            for (int a = 1; a <= t.outcomesA(x); ++a)
                for (int b = 1; b <= t.outcomesB(y); ++b) {
                    int target = b;
                    if (has && b == from) target = into;
                    else if (has && b > from) target = b - 1;
                    m(a, target, x, y) += t(a, b, x, y);
                }
        }
    return m;
}

/// <A_x (x) B_y> for two-outcome settings, outcome 1 -> +1 and 2 -> -1.
inline double correlator(const BehaviorTable& t, int x, int y) {
    if (t.outcomesA(x) != 2 || t.outcomesB(y) != 2)
        throw ContractError("correlator needs two-outcome settings; merge the no-click outcome first");
    return t(1, 1, x, y) + t(2, 2, x, y) - t(1, 2, x, y) - t(2, 1, x, y);
}

/// <A_x> for a two-outcome Alice setting.
inline double marginal_bias(const BehaviorTable& t, int x) {
    if (t.outcomesA(x) != 2) throw ContractError("bias needs a two-outcome setting");
    return t.marginalA(1, x) - t.marginalA(2, x);
}

// ---------------------------------------------------------------------------
// JSON form: {"nX","nY","outA","outB","p"} with p indexed [x][y][a][b].

inline nlohmann::json to_json(const BehaviorTable& t) {
    nlohmann::json p = nlohmann::json::array();
    for (int x = 1; x <= t.nX(); ++x) {
        nlohmann::json px = nlohmann::json::array();
        for (int y = 1; y <= t.nY(); ++y) {
            nlohmann::json pxy = nlohmann::json::array();
            for (int a = 1; a <= t.outcomesA(x); ++a) {
                nlohmann::json row = nlohmann::json::array();
                for (int b = 1; b <= t.outcomesB(y); ++b) row.push_back(t(a, b, x, y));
                pxy.push_back(std::move(row));
            }
            px.push_back(std::move(pxy));
        }
        p.push_back(std::move(px));
    }
    return {{"nX", t.nX()}, {"nY", t.nY()}, {"outA", t.outA()}, {"outB", t.outB()}, {"p", p}};
}

inline BehaviorTable behavior_from_json(const nlohmann::json& j) {
    try {
        const int nX = j.at("nX").get<int>();
        const int nY = j.at("nY").get<int>();
        auto outA = j.at("outA").get<std::vector<int>>();
        auto outB = j.at("outB").get<std::vector<int>>();
        if (static_cast<int>(outA.size()) != nX || static_cast<int>(outB.size()) != nY)
            throw ParseError("outA/outB lengths disagree with nX/nY");
        BehaviorTable t(outA, outB);
        const auto& p = j.at("p");
        for (int x = 1; x <= nX; ++x)
            for (int y = 1; y <= nY; ++y)
                for (int a = 1; a <= outA[x - 1]; ++a)
                    for (int b = 1; b <= outB[y - 1]; ++b)
                        t(a, b, x, y) = p.at(x - 1).at(y - 1).at(a - 1).at(b - 1).get<double>();
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("behavior table: ") + e.what());
    }
}

}  // namespace steerkey
