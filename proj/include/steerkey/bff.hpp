#pragma once

// Per-node semidefinite relaxations of the quadrature entropy bound and their
// combination into a certified lower bound on H(A_1|E).

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "steerkey/errors.hpp"
#include "steerkey/nc_algebra.hpp"
#include "steerkey/quadrature.hpp"
#include "steerkey/quantum_model.hpp"
#include "steerkey/sdp.hpp"

namespace steerkey {

enum class ConstraintMode { CorrelatorsOnly, FullStatistics };

/// Moment basis families, from weakest to strongest.
///   Minimal      : 1, Alice words, Bob generators, Z, Z*, M_{a|1} Z_a
///   AliceGen     : Alice words x (1, Bob generators, Z, Z*)
///   AliceGenBobEve : AliceGen plus N Z and N Z*
///   AliceBobEve  : AliceGen plus Alice words x N x (Z, Z*)
///   LengthTwoABZ : every word of length <= 2 plus A N Z products
enum class BasisLevel { Minimal, AliceGen, AliceGenBobEve, AliceBobEve, LengthTwoABZ };

inline std::string to_string(BasisLevel l) {
    switch (l) {
        case BasisLevel::Minimal: return "minimal";
        case BasisLevel::AliceGen: return "1+AB+AE";
        case BasisLevel::AliceGenBobEve: return "1+AB+AE+BE";
        case BasisLevel::AliceBobEve: return "1+ABE";
        case BasisLevel::LengthTwoABZ: return "2+ABZ";
    }
    return "?";
}

inline BasisLevel basis_level_from_string(const std::string& s) {
    for (auto l : {BasisLevel::Minimal, BasisLevel::AliceGen, BasisLevel::AliceGenBobEve, BasisLevel::AliceBobEve,
                   BasisLevel::LengthTwoABZ})
        if (to_string(l) == s) return l;
    throw ParseError("unknown basis level '" + s + "'");
}

inline std::string to_string(ConstraintMode m) {
    return m == ConstraintMode::FullStatistics ? "full-statistics" : "correlators-only";
}

inline ConstraintMode constraint_mode_from_string(const std::string& s) {
    if (s == "full-statistics") return ConstraintMode::FullStatistics;
    if (s == "correlators-only") return ConstraintMode::CorrelatorsOnly;
    throw ParseError("unknown constraint mode '" + s + "'");
}

struct Scenario {
    int aliceInputs = 2;
    int aliceOutcomes = 2;
    int bobInputs = 2;
    int bobOutcomes = 2;  // per input; the last outcome is eliminated by completeness
    bool anticommutingAlice = true;
    ConstraintMode constraintMode = ConstraintMode::FullStatistics;
    bool constrainBias = false;  // correlators-only: also fix <A_1>
    double preprocessingQ = 0.0;
    int quadM = 8;
    BasisLevel basisLevel = BasisLevel::AliceGenBobEve;

    void validate() const {
        if (aliceInputs != 2 || aliceOutcomes != 2) throw DomainError("Alice must have two binary inputs");
        if (bobInputs < 2 || bobInputs > 3) throw DomainError("Bob needs 2 or 3 inputs");
        if (bobOutcomes < 2 || bobOutcomes > 3) throw DomainError("Bob needs 2 or 3 outcomes per input");
        if (!(preprocessingQ >= 0.0 && preprocessingQ <= 1.0))
            throw DomainError("preprocessing probability must lie in [0,1]");
        if (quadM < 2) throw DomainError("quadrature needs at least two nodes");
        if (constraintMode == ConstraintMode::CorrelatorsOnly && bobOutcomes != 2)
            throw DomainError("correlators-only mode needs two-outcome settings");
    }

    Algebra algebra() const { return {anticommutingAlice}; }
};

// ---------------------------------------------------------------------------
// Operators of the scenario

inline OperatorPolynomial alice_effect(const Scenario& s, int a, int x) {
    if (s.anticommutingAlice) return alice_povm_as_polynomial(a, x);
    OperatorPolynomial m = symbol(alice_projector(1, x));
    return a == 1 ? m : OperatorPolynomial(1.0) - m;
}

/// A_x = M_{1|x} - M_{2|x}.
inline OperatorPolynomial alice_observable_poly(const Scenario& s, int x) {
    if (s.anticommutingAlice) return symbol(alice_observable(x));
    return 2.0 * symbol(alice_projector(1, x)) - OperatorPolynomial(1.0);
}

inline OperatorPolynomial bob_effect(const Scenario& s, int b, int y) {
    if (b < s.bobOutcomes) return symbol(bob_projector(b, y));
    OperatorPolynomial r(1.0);
    for (int k = 1; k < s.bobOutcomes; ++k) r -= symbol(bob_projector(k, y));
    return r;
}

inline std::vector<OperatorPolynomial> alice_generators(const Scenario& s) {
    std::vector<OperatorPolynomial> g;
    for (int x = 1; x <= s.aliceInputs; ++x)
        g.push_back(s.anticommutingAlice ? symbol(alice_observable(x)) : symbol(alice_projector(1, x)));
    return g;
}

inline std::vector<OperatorPolynomial> bob_generators(const Scenario& s) {
    std::vector<OperatorPolynomial> g;
    for (int y = 1; y <= s.bobInputs; ++y)
        for (int b = 1; b < s.bobOutcomes; ++b) g.push_back(symbol(bob_projector(b, y)));
    return g;
}

/// Z_1, Z_1*, Z_2, Z_2*.
inline std::vector<OperatorPolynomial> eve_generators(int node) {
    std::vector<OperatorPolynomial> g;
    for (int a = 1; a <= 2; ++a) {
        g.push_back(symbol(eve_z(a, node, false)));
        g.push_back(symbol(eve_z(a, node, true)));
    }
    return g;
}

// ---------------------------------------------------------------------------
// Moment basis

class MomentBasis {
public:
    /// Appends p unless it is zero or already present up to sign.
    bool add(const OperatorPolynomial& p) {
        if (p.empty() || index_of(p) >= 0) return false;
        index_.emplace(p.terms(), static_cast<int>(elements_.size()));
        elements_.push_back(p);
        return true;
    }

    int size() const { return static_cast<int>(elements_.size()); }
    const OperatorPolynomial& operator[](int i) const { return elements_.at(i); }
    const std::vector<OperatorPolynomial>& elements() const { return elements_; }

    /// Index of p or -p, or -1.
    int index_of(const OperatorPolynomial& p) const {
        if (auto it = index_.find(p.terms()); it != index_.end()) return it->second;
        if (auto it = index_.find((-1.0 * p).terms()); it != index_.end()) return it->second;
        return -1;
    }
    int index_of(const Word& w) const { return index_of(OperatorPolynomial(w)); }

private:
    std::vector<OperatorPolynomial> elements_;
    std::map<OperatorPolynomial::Terms, int> index_;
};

inline bool adjoint_closed(const MomentBasis& basis, const Algebra& alg) {
    for (const auto& e : basis.elements())
        if (basis.index_of(adjoint(e, alg)) < 0) return false;
    return true;
}

inline MomentBasis build_basis(const Scenario& s, int node) {
    s.validate();
    const Algebra alg = s.algebra();
    const auto A = alice_generators(s);
    const auto N = bob_generators(s);
    const auto E = eve_generators(node);
    auto mul = [&](const OperatorPolynomial& p, const OperatorPolynomial& q) { return multiply(p, q, alg); };

    // Alice words: identity and products of at most two generators.
    std::vector<OperatorPolynomial> aliceWords{OperatorPolynomial(1.0)};
    {
        MomentBasis tmp;
        tmp.add(OperatorPolynomial(1.0));
        for (const auto& g : A) tmp.add(g);
        for (const auto& g : A)
            for (const auto& h : A) tmp.add(mul(g, h));
        aliceWords = tmp.elements();
    }

    MomentBasis b;
    switch (s.basisLevel) {
        case BasisLevel::Minimal: {
            for (const auto& w : aliceWords) b.add(w);
            for (const auto& g : N) b.add(g);
            for (const auto& g : E) b.add(g);
            for (int a = 1; a <= 2; ++a) b.add(mul(alice_effect(s, a, 1), symbol(eve_z(a, node))));
            break;
        }
        case BasisLevel::AliceGen:
        case BasisLevel::AliceGenBobEve:
        case BasisLevel::AliceBobEve: {
            std::vector<OperatorPolynomial> gens = N;
            gens.insert(gens.end(), E.begin(), E.end());
            for (const auto& w : aliceWords) b.add(w);
            for (const auto& w : aliceWords)
                for (const auto& g : gens) b.add(mul(w, g));
            if (s.basisLevel == BasisLevel::AliceGenBobEve) {
                for (const auto& n : N)
                    for (const auto& z : E) b.add(mul(n, z));
            } else if (s.basisLevel == BasisLevel::AliceBobEve) {
                for (const auto& w : aliceWords)
                    for (const auto& n : N)
                        for (const auto& z : E) b.add(mul(w, mul(n, z)));
            }
            break;
        }
        case BasisLevel::LengthTwoABZ: {
            std::vector<OperatorPolynomial> gens = A;
            gens.insert(gens.end(), N.begin(), N.end());
            gens.insert(gens.end(), E.begin(), E.end());
            b.add(OperatorPolynomial(1.0));
            for (const auto& g : gens) b.add(g);
            for (const auto& g : gens)
                for (const auto& h : gens) b.add(mul(g, h));
            for (const auto& a : A)
                for (const auto& n : N)
                    for (const auto& z : E) b.add(mul(a, mul(n, z)));
            break;
        }
    }
    return b;
}

// ---------------------------------------------------------------------------
// Objective and constraints

/// sum_a Mt_{a|1} (Z_a + Z_a* + (1-t) Z_a* Z_a) + t Z_a Z_a*, with Mt the key
/// POVM after flipping the bit with probability q.
inline OperatorPolynomial build_objective(const Scenario& s, double t, int node) {
    if (!(t > 0.0 && t <= 1.0)) throw DomainError("quadrature node must lie in (0,1]");
    const Algebra alg = s.algebra();
    const double q = s.preprocessingQ;
    OperatorPolynomial obj;
    for (int a = 1; a <= 2; ++a) {
        const OperatorPolynomial mt = (1.0 - q) * alice_effect(s, a, 1) + q * alice_effect(s, 3 - a, 1);
        const auto z = symbol(eve_z(a, node, false));
        const auto zs = symbol(eve_z(a, node, true));
        const OperatorPolynomial inner = z + zs + (1.0 - t) * multiply(zs, z, alg);
        obj += multiply(mt, inner, alg);
        obj += t * multiply(z, zs, alg);
    }
    return canonicalize(obj, alg);
}

struct MomentConstraint {
    OperatorPolynomial lhs;
    double rhs = 0.0;
    std::string label;
};

struct ConstraintSet {
    std::vector<MomentConstraint> equalities;    // <lhs> = rhs
    std::vector<MomentConstraint> inequalities;  // <lhs> <= rhs
};

/// Two-outcome correlator data: <A_2 B_2> and optionally <A_1>.
struct CorrelatorData {
    double corrA2B2 = 0.0;
    std::optional<double> biasA1;
};

inline MomentConstraint normalization() { return {OperatorPolynomial(1.0), 1.0, "<1> = 1"}; }

inline std::vector<MomentConstraint> data_equalities(const Scenario& s, const CorrelatorData& d) {
    s.validate();
    const Algebra alg = s.algebra();
    std::vector<MomentConstraint> eq{normalization()};
    // B_2 = N_{1|2} - N_{2|2} = 2 N_{1|2} - 1
    const OperatorPolynomial b2 = 2.0 * symbol(bob_projector(1, 2)) - OperatorPolynomial(1.0);
    eq.push_back({canonicalize(multiply(alice_observable_poly(s, 2), b2, alg), alg), d.corrA2B2, "<A2 B2>"});
    if (d.biasA1) eq.push_back({canonicalize(alice_observable_poly(s, 1), alg), *d.biasA1, "<A1>"});
    return eq;
}

inline void require_shape(const Scenario& s, const BehaviorTable& t) {
    if (t.nX() != s.aliceInputs || t.nY() != s.bobInputs)
        throw ContractError("behavior table inputs do not match the scenario");
    for (int x = 1; x <= t.nX(); ++x)
        if (t.outcomesA(x) != 2) throw ContractError("behavior table must have two Alice outcomes");
    for (int y = 1; y <= t.nY(); ++y)
        if (t.outcomesB(y) != s.bobOutcomes) throw ContractError("behavior table Bob outcomes do not match");
}

inline std::vector<MomentConstraint> data_equalities(const Scenario& s, const BehaviorTable& t) {
    s.validate();
    require_shape(s, t);
    if (s.constraintMode == ConstraintMode::CorrelatorsOnly) {
        CorrelatorData d{correlator(t, 2, 2), std::nullopt};
        if (s.constrainBias) d.biasA1 = marginal_bias(t, 1);
        return data_equalities(s, d);
    }
    const Algebra alg = s.algebra();
    std::vector<MomentConstraint> eq{normalization()};
    auto aliceOp = [&](int x) {
        return s.anticommutingAlice ? symbol(alice_observable(x)) : symbol(alice_projector(1, x));
    };
    auto aliceValue = [&](int x, int y, std::optional<int> b) {
        auto p = [&](int a) { return b ? t(a, *b, x, y) : t.marginalA(a, x, y); };
        return s.anticommutingAlice ? p(1) - p(2) : p(1);
    };
    for (int x = 1; x <= s.aliceInputs; ++x) {
        const auto op = aliceOp(x);
        eq.push_back({op, aliceValue(x, 1, std::nullopt), "<" + to_string(op) + ">"});
    }
    for (int y = 1; y <= s.bobInputs; ++y)
        for (int b = 1; b < s.bobOutcomes; ++b) {
            const auto n = symbol(bob_projector(b, y));
            eq.push_back({n, t.marginalB(b, y, 1), "<" + to_string(n) + ">"});
            for (int x = 1; x <= s.aliceInputs; ++x) {
                const auto prod = canonicalize(multiply(aliceOp(x), n, alg), alg);
                eq.push_back({prod, aliceValue(x, y, b), "<" + to_string(prod) + ">"});
            }
        }
    return eq;
}

inline std::vector<MomentConstraint> alpha_constraints(const Scenario& s, double alpha, int node) {
    const Algebra alg = s.algebra();
    std::vector<MomentConstraint> out;
    for (int a = 1; a <= 2; ++a) {
        const auto z = symbol(eve_z(a, node, false));
        const auto zs = symbol(eve_z(a, node, true));
        const auto zsz = multiply(zs, z, alg), zzs = multiply(z, zs, alg);
        out.push_back({zsz, alpha, "<" + to_string(zsz) + ">"});
        out.push_back({zzs, alpha, "<" + to_string(zzs) + ">"});
    }
    return out;
}

inline ConstraintSet build_constraints(const Scenario& s, const BehaviorTable& observed, double alpha, int node) {
    return {data_equalities(s, observed), alpha_constraints(s, alpha, node)};
}

inline ConstraintSet build_constraints(const Scenario& s, const CorrelatorData& observed, double alpha, int node) {
    return {data_equalities(s, observed), alpha_constraints(s, alpha, node)};
}

// ---------------------------------------------------------------------------
// Assembly

using LinearForm = std::map<int, double>;  // moment variable -> coefficient

/// Moment SDP of one node over real moment variables y(w) = Re<w>; variable 0
/// is the identity.
struct SdpInstance {
    int nodeIndex = 0;
    double node = 0.0;
    double weight = 0.0;
    double alpha = 0.0;
    std::vector<Word> variables;
    int dimension = 0;
    std::vector<LinearForm> entries;  // row-major upper triangle
    LinearForm objective;
    std::vector<std::pair<LinearForm, double>> equalities;
    std::vector<std::pair<LinearForm, double>> inequalities;
    std::vector<std::string> equalityLabels, inequalityLabels;
    MomentBasis basis;
    Algebra algebra;

    int variableCount() const { return static_cast<int>(variables.size()); }

    const LinearForm& entry(int i, int j) const {
        if (i > j) std::swap(i, j);
        return entries.at(static_cast<std::size_t>(i) * dimension - static_cast<std::size_t>(i) * (i - 1) / 2 +
                          (j - i));
    }
};

/// Real-part representative of a canonical word: y(w) = sign * y(key), with
/// sign 0 when Re<w> vanishes identically (w^dagger = -w).
inline std::pair<Word, int> real_key(const Word& w, const Algebra& alg) {
    const auto adj = canonicalize(reversed_adjoint(w), alg);
    const auto& [wa, sa] = *adj.terms().begin();
    const int sign = sa > 0 ? 1 : -1;
    if (wa == w) return {w, sign > 0 ? 1 : 0};
    if (w < wa) return {w, 1};
    return {wa, sign};
}

class MomentIndex {
public:
    explicit MomentIndex(Algebra alg) : alg_(alg) { id(Word{}); }

    int id(const Word& key) {
        auto [it, inserted] = ids_.try_emplace(key, static_cast<int>(words_.size()));
        if (inserted) words_.push_back(key);
        return it->second;
    }

    std::optional<int> find(const Word& key) const {
        auto it = ids_.find(key);
        if (it == ids_.end()) return std::nullopt;
        return it->second;
    }

    /// Adds the real part of p to `out`, creating variables as needed.
    void accumulate(const OperatorPolynomial& p, double scale, LinearForm& out) {
        const OperatorPolynomial canon = canonicalize(p, alg_);
        for (const auto& [w, c] : canon.terms()) {
            auto [key, sign] = real_key(w, alg_);
            if (sign == 0) continue;
            const int v = id(key);
            out[v] += scale * sign * c;
        }
    }

    const std::vector<Word>& words() const { return words_; }

private:
    Algebra alg_;
    std::map<Word, int> ids_;
    std::vector<Word> words_;
};

inline void drop_zeros(LinearForm& f) {
    std::erase_if(f, [](const auto& kv) { return std::abs(kv.second) <= 1e-15; });
}

inline SdpInstance assemble_node_sdp(const Scenario& s, const MomentBasis& basis, const OperatorPolynomial& objective,
                                     const ConstraintSet& constraints, double t, double weight = 0.0,
                                     int nodeIndex = 0) {
    const Algebra alg = s.algebra();
    if (basis.size() == 0 || !(basis[0] == OperatorPolynomial(1.0)))
        throw ContractError("basis must start with the identity");
    SdpInstance inst;
    inst.nodeIndex = nodeIndex;
    inst.node = t;
    inst.weight = weight;
    inst.alpha = alpha_bound(t);
    inst.dimension = basis.size();

    MomentIndex idx(alg);
    std::vector<OperatorPolynomial> adj;
    adj.reserve(basis.size());
    for (const auto& e : basis.elements()) adj.push_back(adjoint(e, alg));
    for (int i = 0; i < basis.size(); ++i)
        for (int j = i; j < basis.size(); ++j) {
            LinearForm f;
            idx.accumulate(multiply(adj[i], basis[j], alg), 1.0, f);
            drop_zeros(f);
            inst.entries.push_back(std::move(f));
        }
    std::set<int> covered;
    for (const auto& f : inst.entries)
        for (const auto& [v, c] : f) covered.insert(v);

    auto mapCovered = [&](const OperatorPolynomial& p) {
        LinearForm f;
        const OperatorPolynomial canon = canonicalize(p, alg);
        for (const auto& [w, c] : canon.terms()) {
            auto [key, sign] = real_key(w, alg);
            if (sign == 0) continue;
            auto v = idx.find(key);
            if (!v || !covered.count(*v))
                throw AssemblyError("word '" + to_string(w) + "' is not covered by the moment basis");
            f[*v] += sign * c;
        }
        drop_zeros(f);
        return f;
    };

    inst.objective = mapCovered(objective);
    for (const auto& c : constraints.equalities) {
        inst.equalities.emplace_back(mapCovered(c.lhs), c.rhs);
        inst.equalityLabels.push_back(c.label);
    }
    for (const auto& c : constraints.inequalities) {
        inst.inequalities.emplace_back(mapCovered(c.lhs), c.rhs);
        inst.inequalityLabels.push_back(c.label);
    }
    inst.variables = idx.words();
    inst.basis = basis;
    inst.algebra = alg;
    return inst;
}

// ---------------------------------------------------------------------------
// Reduction to SDPA form

/// Equality constraints eliminated: y_dep = offset + sum_f coeff * y_free.
struct ReducedSdp {
    sdp::SdpProblem problem;
    double objectiveOffset = 0.0;
    std::vector<int> freeVariables;  // moment variable of each SDP variable
    int equalityRank = 0;
    bool consistent = true;
    std::vector<int> activeRows;  // basis rows kept after facial reduction
    int facialReductions = 0;
};

struct Elimination {
    // For every moment variable: constant + linear combination of free variables.
    std::vector<double> constant;
    std::vector<LinearForm> linear;
    std::vector<bool> dependent;
    int rank = 0;
    bool consistent = true;
};

/// Gauss-Jordan elimination with full pivoting.
inline Elimination eliminate(const std::vector<std::pair<LinearForm, double>>& rows, int nVars,
                             double tol = 1e-10) {
    const int m = static_cast<int>(rows.size());
    Eigen::MatrixXd E = Eigen::MatrixXd::Zero(m, nVars);
    Eigen::VectorXd e(m);
    for (int r = 0; r < m; ++r) {
        for (const auto& [v, c] : rows[r].first) E(r, v) += c;
        e(r) = rows[r].second;
    }
    std::vector<int> pivotCol;
    int r = 0;
    std::vector<bool> used(nVars, false);
    for (; r < m; ++r) {
        Eigen::Index pr = -1, pc = -1;
        double best = tol;
        for (int i = r; i < m; ++i)
            for (int j = 0; j < nVars; ++j)
                if (!used[j] && std::abs(E(i, j)) > best) best = std::abs(E(i, j)), pr = i, pc = j;
        if (pr < 0) break;
        E.row(r).swap(E.row(pr));
        std::swap(e(r), e(pr));
        const double piv = E(r, pc);
        E.row(r) /= piv;
        e(r) /= piv;
        for (int i = 0; i < m; ++i)
            if (i != r && E(i, pc) != 0.0) {
                const double f = E(i, pc);
                E.row(i) -= f * E.row(r);
                e(i) -= f * e(r);
                E(i, pc) = 0.0;
            }
        used[pc] = true;
        pivotCol.push_back(static_cast<int>(pc));
    }
    Elimination out;
    out.rank = r;
    for (int i = r; i < m; ++i)
        if (std::abs(e(i)) > 1e-8) out.consistent = false;
    out.constant.assign(nVars, 0.0);
    out.linear.assign(nVars, {});
    out.dependent.assign(nVars, false);
    for (int v = 0; v < nVars; ++v) out.linear[v][v] = 1.0;
    for (int k = 0; k < r; ++k) {
        const int d = pivotCol[k];
        out.dependent[d] = true;
        out.constant[d] = e(k);
        LinearForm f;
        for (int j = 0; j < nVars; ++j)
            if (j != d && std::abs(E(k, j)) > 1e-14) f[j] = -E(k, j);
        out.linear[d] = std::move(f);
    }
    return out;
}

namespace detail {

inline LinearForm substitute(const Elimination& el, const LinearForm& f, double& constant) {
    LinearForm out;
    for (const auto& [v, c] : f) {
        constant += c * el.constant[v];
        for (const auto& [u, a] : el.linear[v]) out[u] += c * a;
    }
    drop_zeros(out);
    return out;
}

// Rows of the largest principal submatrix (greedy) whose entries are all
// fixed by the equalities, together with those fixed values.
inline std::vector<int> constant_block(const SdpInstance& inst, const Elimination& el, const std::vector<int>& active,
                                       Eigen::MatrixXd& values) {
    const int n = static_cast<int>(active.size());
    Eigen::MatrixXd val(n, n);
    std::vector<std::vector<bool>> fixed(n, std::vector<bool>(n));
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            double k0 = 0.0;
            const bool c = substitute(el, inst.entry(active[i], active[j]), k0).empty();
            fixed[i][j] = fixed[j][i] = c;
            val(i, j) = val(j, i) = k0;
        }
    std::vector<int> rows;
    for (int i = 0; i < n; ++i)
        if (fixed[i][i]) rows.push_back(i);
    while (true) {
        int worst = -1, worstCount = 0;
        for (int r = 0; r < static_cast<int>(rows.size()); ++r) {
            int cnt = 0;
            for (int c : rows) cnt += !fixed[rows[r]][c];
            if (cnt > worstCount) worstCount = cnt, worst = r;
        }
        if (worst < 0) break;
        rows.erase(rows.begin() + worst);
    }
    values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = 0; b < rows.size(); ++b) values(a, b) = val(rows[a], rows[b]);
    return rows;  // positions within `active`
}

}  // namespace detail

/// Eliminates the equality constraints and removes the directions in which
/// the fixed part of the moment matrix is singular: if v spans such a
/// direction, M(y) v = 0 for every feasible y, so those linear equations are
/// added and one pivot row/column per null vector is dropped. This restores
/// an interior for exact (pure-state) data without changing the optimum.
inline ReducedSdp to_sdp(const SdpInstance& inst, bool propagate = true, double nullTol = 1e-9) {
    const int nv = inst.variableCount();
    auto rows = inst.equalities;
    std::vector<int> active(inst.dimension);
    std::iota(active.begin(), active.end(), 0);
    ReducedSdp red;

    Elimination el = eliminate(rows, nv);
    for (int round = 0; round < 8 && el.consistent; ++round) {
        Eigen::MatrixXd K;
        const auto block = detail::constant_block(inst, el, active, K);
        if (block.empty()) break;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
        const Eigen::VectorXd& lam = es.eigenvalues();
        const double scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
        if (lam(0) < -1e-7 * scale) {
            el.consistent = false;  // data not realizable by any state
            break;
        }
        std::vector<int> nullIdx;
        for (Eigen::Index k = 0; k < lam.size(); ++k)
            if (lam(k) <= nullTol * scale) nullIdx.push_back(static_cast<int>(k));
        if (nullIdx.empty()) break;

        Eigen::MatrixXd V(K.rows(), static_cast<Eigen::Index>(nullIdx.size()));
        for (std::size_t k = 0; k < nullIdx.size(); ++k) V.col(k) = es.eigenvectors().col(nullIdx[k]);
        // Pivot rows: full-pivot elimination on V picks rows where V is invertible.
        std::vector<int> pivots;
        {
            Eigen::MatrixXd W = V;
            std::vector<bool> usedRow(W.rows(), false), usedCol(W.cols(), false);
            for (Eigen::Index step = 0; step < W.cols(); ++step) {
                Eigen::Index br = -1, bc = -1;
                double best = 0.0;
                for (Eigen::Index r = 0; r < W.rows(); ++r)
                    for (Eigen::Index c = 0; c < W.cols(); ++c)
                        if (!usedRow[r] && !usedCol[c] && std::abs(W(r, c)) > best)
                            best = std::abs(W(r, c)), br = r, bc = c;
                if (br < 0) break;
                usedRow[br] = usedCol[bc] = true;
                pivots.push_back(active[block[br]]);
                for (Eigen::Index c = 0; c < W.cols(); ++c)
                    if (c != bc) W.col(c) -= (W(br, c) / W(br, bc)) * W.col(bc);
            }
        }
        // Null vectors as (basis row, coefficient) lists.
        std::vector<std::vector<std::pair<int, double>>> nulls;
        for (Eigen::Index k = 0; k < V.cols(); ++k) {
            std::vector<std::pair<int, double>> v;
            for (std::size_t a = 0; a < block.size(); ++a)
                if (std::abs(V(a, k)) > 1e-12) v.emplace_back(active[block[a]], V(a, k));
            nulls.push_back(std::move(v));
        }
        // L|psi> = 0 implies L e|psi> = 0 for any Eve word e, which commutes with L.
        if (propagate && inst.basis.size() == inst.dimension) {
            std::set<Word> eveWords;
            for (int u : active)
                for (const auto& [w, c] : inst.basis[u].terms()) {
                    Word e;
                    for (const auto& sym : w)
                        if (sym.site == Site::Eve) e.push_back(sym);
                    if (!e.empty()) eveWords.insert(e);
                }
            const std::size_t base = nulls.size();
            for (std::size_t k = 0; k < base; ++k)
                for (const auto& e : eveWords) {
                    std::vector<std::pair<int, double>> v;
                    bool ok = true;
                    for (const auto& [row, coef] : nulls[k]) {
                        const auto prod = multiply(inst.basis[row], OperatorPolynomial(e), inst.algebra);
                        const int idx = inst.basis.index_of(prod);
                        if (idx < 0 || std::find(active.begin(), active.end(), idx) == active.end()) {
                            ok = false;
                            break;
                        }
                        const double sign = (inst.basis[idx] == prod) ? 1.0 : -1.0;
                        v.emplace_back(idx, sign * coef);
                    }
                    if (ok) nulls.push_back(std::move(v));
                }
            for (std::size_t k = base; k < nulls.size(); ++k) {
                int best = -1;
                double bv = 0.0;
                for (const auto& [row, coef] : nulls[k])
                    if (std::find(pivots.begin(), pivots.end(), row) == pivots.end() && std::abs(coef) > bv)
                        bv = std::abs(coef), best = row;
                if (best >= 0) pivots.push_back(best);
            }
        }
        // M(y) v = 0 row by row, in original moment variables.
        for (const auto& v : nulls)
            for (int u : active) {
                LinearForm f;
                for (const auto& [row, coef] : v)
                    for (const auto& [var, c] : inst.entry(u, row)) f[var] += coef * c;
                drop_zeros(f);
                if (!f.empty()) rows.emplace_back(std::move(f), 0.0);
            }
        std::vector<int> keep;
        for (int u : active)
            if (std::find(pivots.begin(), pivots.end(), u) == pivots.end()) keep.push_back(u);
        active = std::move(keep);
        red.facialReductions += static_cast<int>(pivots.size());
        el = eliminate(rows, nv);
    }
    red.equalityRank = el.rank;
    red.consistent = el.consistent;
    red.activeRows = active;

    const int n = static_cast<int>(active.size());
    const int nIneq = static_cast<int>(inst.inequalities.size());
    std::map<int, sdp::SparseSymMatrix> coeffs;
    sdp::SparseSymMatrix F0;
    std::map<int, double> cost;

    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            double k0 = 0.0;
            const LinearForm f = detail::substitute(el, inst.entry(active[i], active[j]), k0);
            if (k0 != 0.0) F0.add(0, i, j, -k0);
            for (const auto& [u, a] : f) coeffs[u].add(0, i, j, a);
        }
    for (int k = 0; k < nIneq; ++k) {
        double k0 = 0.0;
        const LinearForm f = detail::substitute(el, inst.inequalities[k].first, k0);
        // alpha - L(y) >= 0
        const double constant = inst.inequalities[k].second - k0;
        if (constant != 0.0) F0.add(1, k, k, -constant);
        for (const auto& [u, a] : f) coeffs[u].add(1, k, k, -a);
    }
    double off = 0.0;
    for (const auto& [u, a] : detail::substitute(el, inst.objective, off)) cost[u] += a;
    red.objectiveOffset = off;

    red.problem.blocks.push_back({n, false});
    if (nIneq > 0) red.problem.blocks.push_back({nIneq, true});
    red.problem.cost = F0;
    red.problem.cost.normalize();
    double maxAlpha = 1.0;
    for (const auto& [f, rhs] : inst.inequalities) maxAlpha = std::max(maxAlpha, rhs);
    red.problem.variableBound = maxAlpha;
    for (auto& [u, mtx] : coeffs) {
        mtx.normalize();
        if (mtx.entries.empty()) {
            if (cost.count(u) && std::abs(cost[u]) > 1e-15)
                throw AssemblyError("objective depends on an unconstrained moment");
            continue;
        }
        red.freeVariables.push_back(u);
        red.problem.constraints.push_back(std::move(mtx));
        red.problem.rhs.push_back(cost.count(u) ? cost[u] : 0.0);
    }
    return red;
}

// ---------------------------------------------------------------------------
// Entropy bound

struct NodeResult {
    int index = 0;  // 1-based
    double node = 0.0;
    double weight = 0.0;
    sdp::Status status = sdp::Status::NumericalLimit;
    double lower = 0.0;   // certified lower bound on O_i
    double primal = 0.0;  // upper estimate of O_i
    int iterations = 0;
    bool certified = false;  // lower holds a valid bound
    std::string message;
};

struct EntropyResult {
    double bits = 0.0;  // clamped below at 0
    double raw = 0.0;
    std::vector<NodeResult> nodes;
};

struct BffOptions {
    sdp::SolverOptions solver{};
    int threads = 0;  // 0: hardware concurrency
};

/// Runs f(i) for i in [0, n) on up to `threads` workers.
template <class F>
void parallel_for(int n, int threads, F&& f) {
    if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::jthread> pool;
    for (int w = 0; w < threads; ++w)
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                try {
                    f(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    pool.clear();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline NodeResult solve_node(const SdpInstance& inst, const sdp::SolverOptions& opt) {
    NodeResult r;
    r.index = inst.nodeIndex;
    r.node = inst.node;
    r.weight = inst.weight;
    const ReducedSdp red = to_sdp(inst);
    if (!red.consistent) {
        r.status = sdp::Status::Infeasible;
        r.message = "inconsistent equality constraints";
        return r;
    }
    const auto sol = sdp::solve(red.problem, opt);
    r.status = sol.status;
    r.iterations = sol.iterations;
    r.message = sol.message;
    if (sol.status == sdp::Status::Infeasible) return r;
    try {
        r.lower = sdp::certified_lower_bound(red.problem, sol, opt.tol) + red.objectiveOffset;
        r.primal = sol.primalValue + red.objectiveOffset;
        r.certified = true;
    } catch (const SolverError& e) {
        r.message += "; " + std::string(e.what());
    }
    return r;
}

/// H(A_1|E) >= sum_{i<m} w_i/(t_i ln 2) (1 + O_i). Throws SolverError naming
/// the first node that failed to produce a certified bound.
inline EntropyResult entropy_bound(const Scenario& s, const std::vector<MomentConstraint>& dataEqualities,
                                   const BffOptions& opt = {}) {
    s.validate();
    const QuadratureRule rule = gauss_radau(s.quadM);
    const int nodes = rule.size() - 1;
    EntropyResult res;
    res.nodes.resize(nodes);
    parallel_for(nodes, opt.threads, [&](int i) {
        const int label = i + 1;
        const double t = rule.nodes[i];
        const MomentBasis basis = build_basis(s, label);
        ConstraintSet cs{dataEqualities, alpha_constraints(s, rule.alphas[i], label)};
        const auto inst = assemble_node_sdp(s, basis, build_objective(s, t, label), cs, t, rule.weights[i], label);
        res.nodes[i] = solve_node(inst, opt.solver);
    });
    double h = 0.0;
    for (int i = 0; i < nodes; ++i) {
        const auto& nr = res.nodes[i];
        if (!nr.certified)
            throw SolverError(to_string(nr.status) + " (" + nr.message + ")", nr.index);
        h += rule.weights[i] / (rule.nodes[i] * std::log(2.0)) * (1.0 + nr.lower);
    }
    res.raw = h;
    res.bits = std::max(0.0, h);
    return res;
}

inline EntropyResult entropy_bound(const Scenario& s, const BehaviorTable& observed, const BffOptions& opt = {}) {
    return entropy_bound(s, data_equalities(s, observed), opt);
}

inline EntropyResult entropy_bound(const Scenario& s, const CorrelatorData& observed, const BffOptions& opt = {}) {
    return entropy_bound(s, data_equalities(s, observed), opt);
}

// ---------------------------------------------------------------------------
// Debug dumps

inline nlohmann::json to_json(const MomentBasis& b) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : b.elements()) j.push_back(to_string(e));
    return j;
}

inline nlohmann::json to_json(const ConstraintSet& c) {
    nlohmann::json eq = nlohmann::json::array(), in = nlohmann::json::array();
    for (const auto& e : c.equalities) eq.push_back({{"label", e.label}, {"lhs", to_string(e.lhs)}, {"rhs", e.rhs}});
    for (const auto& e : c.inequalities)
        in.push_back({{"label", e.label}, {"lhs", to_string(e.lhs)}, {"rhs", e.rhs}});
    return {{"equalities", eq}, {"inequalities", in}};
}

}  // namespace steerkey
