#pragma once

// Small dense semidefinite programs in SDPA form, a primal-dual interior-point
// solver, certified bounds and SDPA sparse file interop.
//
// Conventions follow SDPA:
//
//   primal:  minimize   sum_k c_k y_k
//            subject to Z = sum_k y_k F_k - F_0  >= 0
//   dual:    maximize   <F_0, Y>
//            subject to <F_k, Y> = c_k,  Y >= 0
//
// Constraint k with sense LessEqual means <F_k, Y> <= c_k on the dual side,
// i.e. y_k >= 0 on the primal side; it is realized with an extra diagonal
// slack block. Weak duality for a minimization: <F_0,Y> <= c^T y.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <tuple>
#include <type_traits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "steerkey/errors.hpp"

namespace steerkey::sdp {

struct BlockSpec {
    int size = 0;
    bool diagonal = false;

    bool operator==(const BlockSpec&) const = default;
};

/// One stored entry of a symmetric block-diagonal matrix. Indices are 0-based
/// and row <= col; the mirrored entry is implied.
struct Entry {
    int block = 0;
    int row = 0;
    int col = 0;
    double value = 0.0;

    bool operator==(const Entry&) const = default;
};

struct SparseSymMatrix {
    std::vector<Entry> entries;

    void add(int block, int row, int col, double value) {
        if (row > col) std::swap(row, col);
        entries.push_back({block, row, col, value});
    }

    /// Merges duplicates, drops zeros and sorts by (block,row,col).
    void normalize() {
        std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
            return std::tie(a.block, a.row, a.col) < std::tie(b.block, b.row, b.col);
        });
        std::vector<Entry> out;
        for (const auto& e : entries) {
            if (!out.empty() && out.back().block == e.block && out.back().row == e.row &&
                out.back().col == e.col)
                out.back().value += e.value;
            else
                out.push_back(e);
        }
        std::erase_if(out, [](const Entry& e) { return e.value == 0.0; });
        entries = std::move(out);
    }

    bool operator==(const SparseSymMatrix&) const = default;
};

enum class Sense { Equal, LessEqual };
enum class Objective { Minimize, Maximize };

struct SdpProblem {
    std::vector<BlockSpec> blocks;
    SparseSymMatrix cost;                     // F_0
    std::vector<SparseSymMatrix> constraints;  // F_1 .. F_m
    std::vector<double> rhs;                   // c_1 .. c_m
    std::vector<Sense> senses;                 // empty means all Equal
    Objective objective = Objective::Minimize;
    /// A priori bound on |y_k| over the feasible set; 0 when unknown. Used to
    /// turn a slightly infeasible dual certificate into a rigorous bound.
    double variableBound = 0.0;

    int numConstraints() const { return static_cast<int>(constraints.size()); }

    void validate() const {
        if (rhs.size() != constraints.size()) throw ContractError("rhs size differs from constraint count");
        if (!senses.empty() && senses.size() != constraints.size())
            throw ContractError("sense list size differs from constraint count");
        auto check = [&](const SparseSymMatrix& m) {
            for (const auto& e : m.entries) {
                if (e.block < 0 || e.block >= static_cast<int>(blocks.size()))
                    throw ContractError("entry references a missing block");
                const auto& b = blocks[e.block];
                if (e.row < 0 || e.col < 0 || e.row >= b.size || e.col >= b.size)
                    throw ContractError("entry outside its block");
                if (b.diagonal && e.row != e.col) throw ContractError("off-diagonal entry in a diagonal block");
            }
        };
        for (const auto& b : blocks)
            if (b.size <= 0) throw ContractError("block sizes must be positive");
        check(cost);
        for (const auto& f : constraints) check(f);
    }

    bool operator==(const SdpProblem&) const = default;
};

enum class Status { Optimal, Infeasible, NumericalLimit };

inline std::string to_string(Status s) {
    switch (s) {
        case Status::Optimal: return "optimal";
        case Status::Infeasible: return "infeasible";
        case Status::NumericalLimit: return "numerical-limit";
    }
    return "unknown";
}

inline Status status_from_string(const std::string& s) {
    if (s == "optimal") return Status::Optimal;
    if (s == "infeasible") return Status::Infeasible;
    if (s == "numerical-limit") return Status::NumericalLimit;
    throw ParseError("unknown solver status '" + s + "'");
}

/// Block-diagonal symmetric matrix; diagonal blocks are stored as vectors.
struct BlockMatrix {
    std::vector<Eigen::MatrixXd> dense;  // one per block; empty for diagonal blocks
    std::vector<Eigen::VectorXd> diag;   // one per block; empty for dense blocks
};

struct SdpSolution {
    Status status = Status::NumericalLimit;
    double primalValue = 0.0;  // c^T y
    double dualValue = 0.0;    // <F_0, Y>
    double gap = 0.0;
    double primalResidual = 0.0;
    double dualResidual = 0.0;
    int iterations = 0;
    std::vector<double> y;  // primal variables
    BlockMatrix Z;          // primal slack
    BlockMatrix Y;          // dual matrix (multipliers of the LMI)
    std::string message;
};

struct SolverOptions {
    double tol = 1e-8;
    int maxIterations = 200;
    double stepFraction = 0.95;
    double divergence = 1e10;
    bool extendedPrecision = true;  // keep iterates in long double
};

namespace detail {

// Internal layout: every dense block keeps its own matrix, all diagonal
// blocks are concatenated into one "linear" block.
struct Layout {
    std::vector<int> denseIndex;  // block -> dense slot or -1
    std::vector<int> linOffset;   // block -> offset in linear block or -1
    std::vector<int> denseSize;
    int linSize = 0;

    explicit Layout(const std::vector<BlockSpec>& blocks) {
        for (const auto& b : blocks) {
            if (b.diagonal) {
                denseIndex.push_back(-1);
                linOffset.push_back(linSize);
                linSize += b.size;
            } else {
                denseIndex.push_back(static_cast<int>(denseSize.size()));
                linOffset.push_back(-1);
                denseSize.push_back(b.size);
            }
        }
    }
    int totalDim() const { return std::accumulate(denseSize.begin(), denseSize.end(), 0) + linSize; }
};

struct DenseEntry {
    int slot;
    int r;
    int c;
    double v;
};
struct LinEntry {
    int pos;
    double v;
};

// Constraint matrix with both triangles expanded.
struct Coeff {
    std::vector<DenseEntry> dense;
    std::vector<LinEntry> lin;
};

inline Coeff expand(const SparseSymMatrix& m, const Layout& lay) {
    Coeff out;
    for (const auto& e : m.entries) {
        const int slot = lay.denseIndex[e.block];
        if (slot >= 0) {
            out.dense.push_back({slot, e.row, e.col, e.value});
            if (e.row != e.col) out.dense.push_back({slot, e.col, e.row, e.value});
        } else {
            out.lin.push_back({lay.linOffset[e.block] + e.row, e.value});
        }
    }
    return out;
}

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
struct BMT {
    std::vector<Mat<T>> d;
    Vec<T> l;

    static BMT zero(const Layout& lay) {
        BMT m;
        for (int s : lay.denseSize) m.d.push_back(Mat<T>::Zero(s, s));
        m.l = Vec<T>::Zero(lay.linSize);
        return m;
    }
    static BMT identity(const Layout& lay, T s) {
        BMT m;
        for (int n : lay.denseSize) m.d.push_back(s * Mat<T>::Identity(n, n));
        m.l = Vec<T>::Constant(lay.linSize, s);
        return m;
    }
    BMT& operator+=(const BMT& o) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += o.d[i];
        l += o.l;
        return *this;
    }
    BMT& axpy(T a, const BMT& o) {
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += a * o.d[i];
        l += a * o.l;
        return *this;
    }
    T normF() const {
        T s = l.squaredNorm();
        for (const auto& m : d) s += m.squaredNorm();
        return std::sqrt(s);
    }
    template <class U>
    BMT<U> cast() const {
        BMT<U> r;
        for (const auto& m : d) r.d.push_back(m.template cast<U>());
        r.l = l.template cast<U>();
        return r;
    }
};
using BM = BMT<double>;

template <class T>
T dot(const BMT<T>& a, const BMT<T>& b) {
    T s = a.l.dot(b.l);
    for (std::size_t i = 0; i < a.d.size(); ++i) s += a.d[i].cwiseProduct(b.d[i]).sum();
    return s;
}

template <class T>
void add_scaled(BMT<T>& m, const Coeff& f, T a) {
    for (const auto& e : f.dense) m.d[e.slot](e.r, e.c) += a * T(e.v);
    for (const auto& e : f.lin) m.l(e.pos) += a * T(e.v);
}

// <F, M> for a possibly nonsymmetric M; F symmetric so this equals <F, sym(M)>.
template <class T>
T inner(const Coeff& f, const BMT<T>& m) {
    T s = 0;
    for (const auto& e : f.dense) s += T(e.v) * m.d[e.slot](e.r, e.c);
    for (const auto& e : f.lin) s += T(e.v) * m.l(e.pos);
    return s;
}

inline double frob(const Coeff& f) {
    double s = 0.0;
    for (const auto& e : f.dense) s += e.v * e.v;
    for (const auto& e : f.lin) s += e.v * e.v;
    return std::sqrt(s);
}

template <class T>
using Chol = std::vector<Eigen::LLT<Mat<T>>>;

// Largest alpha such that M + alpha dM stays PD.
template <class T>
T max_step(const BMT<T>& m, const Chol<T>& chol, const BMT<T>& dm) {
    T alpha = std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < m.d.size(); ++i) {
        const auto& L = chol[i].matrixL();
        Mat<T> t = L.solve(dm.d[i]);
        t = L.solve(t.transpose()).transpose();
        t = T(0.5) * (t + t.transpose());
        Eigen::SelfAdjointEigenSolver<Mat<T>> es(t, Eigen::EigenvaluesOnly);
        const T lmin = es.eigenvalues().minCoeff();
        if (lmin < 0) alpha = std::min(alpha, T(-1) / lmin);
    }
    for (Eigen::Index k = 0; k < m.l.size(); ++k)
        if (dm.l(k) < 0) alpha = std::min(alpha, -m.l(k) / dm.l(k));
    return alpha;
}

template <class T>
bool factor(const BMT<T>& m, Chol<T>& chol) {
    chol.clear();
    for (const auto& b : m.d) {
        chol.emplace_back(b);
        if (chol.back().info() != Eigen::Success) return false;
    }
    return (m.l.array() > 0).all();
}

// a * b * c block-wise (general, non-symmetric result).
template <class T>
BMT<T> triple(const BMT<T>& a, const BMT<T>& b, const BMT<T>& c) {
    BMT<T> r;
    for (std::size_t i = 0; i < a.d.size(); ++i) r.d.push_back(a.d[i] * b.d[i] * c.d[i]);
    r.l = a.l.cwiseProduct(b.l).cwiseProduct(c.l);
    return r;
}

template <class T>
void symmetrize(BMT<T>& m) {
    for (auto& b : m.d) b = (T(0.5) * (b + b.transpose())).eval();
}

inline BM to_bm(const SparseSymMatrix& s, const Layout& lay) {
    BM m = BM::zero(lay);
    add_scaled(m, expand(s, lay), 1.0);
    return m;
}

inline BlockMatrix to_public(const BM& m, const std::vector<BlockSpec>& blocks, const Layout& lay) {
    BlockMatrix out;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (blocks[b].diagonal) {
            out.dense.emplace_back();
            out.diag.push_back(m.l.segment(lay.linOffset[b], blocks[b].size));
        } else {
            out.dense.push_back(m.d[lay.denseIndex[b]]);
            out.diag.emplace_back();
        }
    }
    return out;
}

inline BM from_public(const BlockMatrix& m, const std::vector<BlockSpec>& blocks, const Layout& lay) {
    BM out = BM::zero(lay);
    if (m.dense.size() != blocks.size() || m.diag.size() != blocks.size())
        throw ContractError("block matrix does not match problem blocks");
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (blocks[b].diagonal) {
            if (m.diag[b].size() != blocks[b].size) throw ContractError("diagonal block size mismatch");
            out.l.segment(lay.linOffset[b], blocks[b].size) = m.diag[b];
        } else {
            const auto& d = m.dense[b];
            if (d.rows() != blocks[b].size || d.cols() != blocks[b].size)
                throw ContractError("dense block size mismatch");
            out.d[lay.denseIndex[b]] = d;
        }
    }
    return out;
}

}  // namespace detail

/// Equivalent problem with all senses Equal and a Minimize objective:
/// LessEqual constraints get a +1 entry in an appended diagonal block, and a
/// Maximize objective is turned into minimizing -c.
inline SdpProblem standardize(const SdpProblem& p) {
    SdpProblem s = p;
    s.senses.clear();
    if (p.objective == Objective::Maximize) {
        for (auto& c : s.rhs) c = -c;
        s.objective = Objective::Minimize;
    }
    int slack = 0;
    for (std::size_t k = 0; k < p.senses.size(); ++k)
        if (p.senses[k] == Sense::LessEqual) ++slack;
    if (slack > 0) {
        const int block = static_cast<int>(s.blocks.size());
        s.blocks.push_back({slack, true});
        int pos = 0;
        for (std::size_t k = 0; k < p.senses.size(); ++k)
            if (p.senses[k] == Sense::LessEqual) s.constraints[k].add(block, pos, pos, 1.0), ++pos;
    }
    return s;
}

namespace detail {

template <class T>
SdpSolution solve_impl(const SdpProblem& problem, const SolverOptions& opt) {
    using MatT = Mat<T>;
    using VecT = Vec<T>;
    using BMt = BMT<T>;
    const SdpProblem std = standardize(problem);
    const double objSign = problem.objective == Objective::Maximize ? -1.0 : 1.0;
    const Layout lay(std.blocks);
    const int m = std.numConstraints();
    const int n = lay.totalDim();
    const T tol = T(opt.tol);

    std::vector<Coeff> F;
    F.reserve(m);
    for (const auto& f : std.constraints) F.push_back(expand(f, lay));
    const Coeff F0c = expand(std.cost, lay);
    const BMt F0 = to_bm(std.cost, lay).template cast<T>();
    VecT c(m);
    for (int k = 0; k < m; ++k) c(k) = T(std.rhs[k]);

    // Starting point, scaled as in CSDP.
    double alphaInit = 0.0, maxNorm = frob(F0c);
    for (int k = 0; k < m; ++k) {
        const double nf = frob(F[k]);
        alphaInit = std::max(alphaInit, (1.0 + std::abs(std.rhs[k])) / (1.0 + nf));
        maxNorm = std::max(maxNorm, nf);
    }
    alphaInit *= n;
    const double betaInit = (1.0 + maxNorm) / std::sqrt(static_cast<double>(n));
    BMt Y = BMt::identity(lay, T(10.0 * std::max(1.0, alphaInit)));
    BMt Z = BMt::identity(lay, T(10.0 * std::max(1.0, betaInit)));
    VecT y = VecT::Zero(m);

    const T normC = c.norm();
    const T normF0 = F0.normF();

    // Gram matrix <F_i, F_j>, used to pull Y back onto <F_k, Y> = c_k.
    std::optional<Eigen::LDLT<MatT>> gram;
    {
        std::map<std::tuple<int, int, int>, std::vector<std::pair<int, double>>> at;
        for (int k = 0; k < m; ++k) {
            for (const auto& e : F[k].dense) at[{e.slot, e.r, e.c}].push_back({k, e.v});
            for (const auto& e : F[k].lin) at[{-1, e.pos, e.pos}].push_back({k, e.v});
        }
        MatT G = MatT::Zero(m, m);
        for (const auto& [pos, list] : at)
            for (const auto& [i, a] : list)
                for (const auto& [j, b] : list) G(i, j) += T(a) * T(b);
        Eigen::LDLT<MatT> ldlt(G);
        if (m > 0 && ldlt.info() == Eigen::Success && ldlt.isPositive() &&
            ldlt.vectorD().minCoeff() > T(1e-10) * ldlt.vectorD().maxCoeff())
            gram = std::move(ldlt);
    }
    auto project = [&](BMt& Yc) {
        if (!gram) return;
        VecT r(m);
        for (int k = 0; k < m; ++k) r(k) = c(k) - inner(F[k], Yc);
        const VecT lambda = gram->solve(r);
        BMt trial = Yc;
        for (int k = 0; k < m; ++k) add_scaled(trial, F[k], lambda(k));
        Chol<T> ch;
        if (factor(trial, ch)) Yc = std::move(trial);
    };

    SdpSolution sol;
    // Best iterate: a dual residual within tol first, then max(gap, residuals).
    // A stalled run falls back to it.
    struct Snapshot {
        BMt Y, Z;
        VecT y;
        bool dualOk;
        T score;
        double pres, dres;
        int it;
    };
    std::optional<Snapshot> best;
    auto finish = [&](Status st, std::string msg) {
        if (st == Status::NumericalLimit && best) {
            Y = best->Y;
            Z = best->Z;
            y = best->y;
            sol.primalResidual = best->pres;
            sol.dualResidual = best->dres;
            msg += "; best iterate " + std::to_string(best->it) + " kept";
        }
        sol.status = st;
        sol.message = std::move(msg);
        sol.y.resize(m);
        for (int k = 0; k < m; ++k) sol.y[k] = static_cast<double>(y(k));
        sol.primalValue = objSign * static_cast<double>(c.dot(y));
        sol.dualValue = objSign * static_cast<double>(dot(F0, Y));
        sol.gap = std::abs(sol.primalValue - sol.dualValue);
        sol.Y = to_public(Y.template cast<double>(), std.blocks, lay);
        sol.Z = to_public(Z.template cast<double>(), std.blocks, lay);
        // Report only the caller's own blocks.
        sol.Y.dense.resize(problem.blocks.size());
        sol.Y.diag.resize(problem.blocks.size());
        sol.Z.dense.resize(problem.blocks.size());
        sol.Z.diag.resize(problem.blocks.size());
        return sol;
    };

    Chol<T> cholZ, cholY;
    MatT H(m, m);
    Eigen::LLT<MatT> schur;
    bool wideSchur = std::is_same_v<T, double>;
    VecT rhs(m), dy(m);
    int stalls = 0;
    const bool trace = std::getenv("STEERKEY_SDP_TRACE") != nullptr;

    for (int it = 0; it < opt.maxIterations; ++it) {
        sol.iterations = it;
        if (!factor(Z, cholZ) || !factor(Y, cholY))
            return finish(Status::NumericalLimit, "iterate left the positive definite cone");

        // Residuals.
        VecT rp(m);
        for (int k = 0; k < m; ++k) rp(k) = c(k) - inner(F[k], Y);
        BMt Rd = BMt::zero(lay);
        for (int k = 0; k < m; ++k) add_scaled(Rd, F[k], y(k));
        Rd.axpy(T(-1), F0).axpy(T(-1), Z);

        const T pobj = c.dot(y);
        const T dobj = dot(F0, Y);
        const T yz = dot(Y, Z);
        const T mu = yz / T(n);
        const T pres = Rd.normF() / (T(1) + normF0);
        const T dres = rp.norm() / (T(1) + normC);
        sol.primalResidual = static_cast<double>(pres);
        sol.dualResidual = static_cast<double>(dres);
        const T gap = std::abs(pobj - dobj);
        if (trace)
            std::fprintf(stderr, "%3d p=%.12g d=%.12g gap=%.2e mu=%.2e pinf=%.2e dinf=%.2e\n", it,
                         static_cast<double>(pobj), static_cast<double>(dobj), static_cast<double>(gap),
                         static_cast<double>(mu), sol.primalResidual, sol.dualResidual);

        if (gap <= tol && yz <= 10 * tol && pres <= tol && dres <= tol) return finish(Status::Optimal, "converged");
        const T score = std::max({gap, pres, dres});
        const bool dualOk = dres <= tol;
        if (!best || (dualOk && !best->dualOk) || (dualOk == best->dualOk && score < best->score))
            best = Snapshot{Y, Z, y, dualOk, score, sol.primalResidual, sol.dualResidual, it};
        else if (it - best->it >= 10)
            return finish(Status::NumericalLimit, "no progress");
        const T div = T(opt.divergence);
        if (dobj > div * (1 + std::abs(pobj)) && dres < T(1e-3))
            return finish(Status::Infeasible, "primal infeasible: dual objective diverges");
        if (-pobj > div * (1 + std::abs(dobj)) && pres < T(1e-3))
            return finish(Status::Infeasible, "dual infeasible: primal objective diverges");
        if (Y.normF() > div * 100 || Z.normF() > div * 100 || y.template lpNorm<Eigen::Infinity>() > div * 100)
            return finish(Status::Infeasible, "iterates diverge");

        // Nesterov-Todd scaling per dense block: with L_Y^T L_Z = U S V^T,
        // G = L_Y U S^{-1/2} maps both Y and Z to the diagonal S, and
        // D = G G^T satisfies D Z D = Y.
        std::vector<MatT> Gs, Ginv;
        std::vector<VecT> S;
        for (std::size_t b = 0; b < Y.d.size(); ++b) {
            const MatT LY = cholY[b].matrixL();
            const MatT LZ = cholZ[b].matrixL();
            Eigen::JacobiSVD<MatT> svd(LY.transpose() * LZ, Eigen::ComputeFullU);
            const VecT s = svd.singularValues();
            const VecT isq = s.array().sqrt().inverse().matrix();
            Gs.push_back(LY * svd.matrixU() * isq.asDiagonal());
            const MatT LYinv = cholY[b].matrixL().solve(MatT::Identity(LY.rows(), LY.cols()));
            Ginv.push_back(s.array().sqrt().matrix().asDiagonal() * svd.matrixU().transpose() * LYinv);
            S.push_back(s);
        }
        const VecT Dl = (Y.l.array() / Z.l.array()).sqrt().matrix();
        const VecT Sl = (Y.l.array() * Z.l.array()).sqrt().matrix();
        BMt D;
        for (const auto& g : Gs) D.d.push_back(g * g.transpose());
        D.l = Dl;
        // D M D for symmetric M.
        auto sandwich = [&](const BMt& M) {
            BMt r;
            for (std::size_t b = 0; b < M.d.size(); ++b) r.d.push_back(D.d[b] * M.d[b] * D.d[b]);
            r.l = D.l.cwiseProduct(M.l).cwiseProduct(D.l);
            return r;
        };

        // Schur complement H_ij = <F_i, D F_j D> as the Gram matrix of
        // G^T F_i G, so it stays PSD in floating point. Double is enough until
        // the refinement below stops converging.
        auto buildSchur = [&]<class U>() -> bool {
            using MatU = Eigen::Matrix<U, Eigen::Dynamic, Eigen::Dynamic>;
            std::vector<MatU> P;
            std::vector<Eigen::Index> off;
            Eigen::Index cols = 0;
            for (std::size_t b = 0; b < Gs.size(); ++b) {
                P.push_back(Gs[b].transpose().template cast<U>());
                off.push_back(cols);
                cols += Gs[b].rows() * Gs[b].rows();
            }
            const Eigen::Index linOff = cols;
            cols += Y.l.size();
            MatU G = MatU::Zero(cols, m);
            for (int k = 0; k < m; ++k) {
                for (const auto& e : F[k].dense) {
                    const Eigen::Index nb = P[e.slot].rows();
                    Eigen::Map<MatU> g(G.col(k).data() + off[e.slot], nb, nb);
                    g.noalias() += U(e.v) * P[e.slot].col(e.r) * P[e.slot].col(e.c).transpose();
                }
                for (const auto& e : F[k].lin) G(linOff + e.pos, k) += U(e.v) * U(Dl(e.pos));
            }
            H = (G.transpose() * G).template cast<T>();
            // H is positive definite in exact arithmetic; near the optimum it
            // can lose that numerically, so fall back to a lightly shifted factor.
            schur.compute(H);
            const T scale = std::max(T(1), H.diagonal().cwiseAbs().maxCoeff());
            for (T shift = T(1e-14); schur.info() != Eigen::Success; shift *= 10) {
                if (shift > T(1e-6)) return false;
                schur.compute(H + shift * scale * MatT::Identity(m, m));
            }
            return true;
        };
        const bool built = wideSchur ? buildSchur.template operator()<T>() : buildSchur.template operator()<double>();
        if (!built) return finish(Status::NumericalLimit, "Schur complement not positive definite");

        const BMt DRdD = sandwich(Rd);

        // H v in the wide type, for iterative refinement of the double factor.
        auto applyH = [&](const VecT& v) {
            BMt M = BMt::zero(lay);
            for (int k = 0; k < m; ++k) add_scaled(M, F[k], v(k));
            const BMt DMD = sandwich(M);
            VecT out(m);
            for (int k = 0; k < m; ++k) out(k) = inner(F[k], DMD);
            return out;
        };

        // In scaled space the linearized complementarity reads
        // S (dY' + dZ') + (dY' + dZ') S = 2 sigma mu I - 2 S^2 - C, with C the
        // symmetrized second-order term of the predictor (zero without it).
        auto direction = [&](T sigmaMu, const BMt* dYp, const BMt* dZp, BMt& dZ, BMt& dY) {
            BMt target;
            for (std::size_t b = 0; b < Gs.size(); ++b) {
                const VecT& s = S[b];
                const Eigen::Index nb = s.size();
                MatT R = MatT::Zero(nb, nb);
                for (Eigen::Index i = 0; i < nb; ++i) R(i, i) = 2 * sigmaMu - 2 * s(i) * s(i);
                if (dYp) {
                    const MatT a = Ginv[b] * dYp->d[b] * Ginv[b].transpose();
                    const MatT z = Gs[b].transpose() * dZp->d[b] * Gs[b];
                    const MatT az = a * z;
                    R -= az + az.transpose();
                }
                for (Eigen::Index i = 0; i < nb; ++i)
                    for (Eigen::Index j = 0; j < nb; ++j) R(i, j) /= s(i) + s(j);
                target.d.push_back(Gs[b] * R * Gs[b].transpose());
            }
            {
                VecT r = (sigmaMu - Sl.array().square()).matrix();
                if (dYp) r -= dYp->l.cwiseProduct(dZp->l);
                target.l = Dl.cwiseProduct(r.cwiseQuotient(Sl));
            }
            for (int k = 0; k < m; ++k) rhs(k) = inner(F[k], target) - rp(k) - inner(F[k], DRdD);
            dy = schur.solve(rhs);
            VecT res = rhs - applyH(dy);
            for (int r = 0; r < 3; ++r) {
                dy += schur.solve(res);
                res = rhs - applyH(dy);
            }
            const double refinement = static_cast<double>(res.norm() / std::max(T(1e-300), rhs.norm()));
            dZ = Rd;
            for (int k = 0; k < m; ++k) add_scaled(dZ, F[k], dy(k));
            dY = target;
            dY.axpy(T(-1), sandwich(dZ));
            symmetrize(dY);
            return refinement;
        };

        // Predictor.
        BMt dZp, dYp;
        if (direction(T(0), nullptr, nullptr, dZp, dYp) > 1e-12 && !wideSchur) {
            wideSchur = true;
            if (!buildSchur.template operator()<T>())
                return finish(Status::NumericalLimit, "Schur complement not positive definite");
            direction(T(0), nullptr, nullptr, dZp, dYp);
        }
        const T frac = T(opt.stepFraction);
        const T apP = std::min(T(1), frac * max_step(Z, cholZ, dZp));
        const T apD = std::min(T(1), frac * max_step(Y, cholY, dYp));
        BMt Yt = Y, Zt = Z;
        Yt.axpy(apD, dYp);
        Zt.axpy(apP, dZp);
        T sigma = std::pow(std::max(T(0), dot(Yt, Zt)) / yz, T(3));
        sigma = std::clamp(sigma, T(0), T(1));

        // Corrector.
        BMt dZ, dY;
        direction(sigma * mu, &dYp, &dZp, dZ, dY);
        T aP = std::min(T(1), frac * max_step(Z, cholZ, dZ));
        T aD = std::min(T(1), frac * max_step(Y, cholY, dY));
        if (!std::isfinite(static_cast<double>(aP)) || !std::isfinite(static_cast<double>(aD)))
            return finish(Status::NumericalLimit, "non-finite step");

        // Back off when rounding pushes the new iterate out of the cone.
        for (int tries = 0;; ++tries) {
            BMt Zn = Z, Yn = Y;
            Zn.axpy(aP, dZ);
            Yn.axpy(aD, dY);
            if (factor(Zn, cholZ) && factor(Yn, cholY)) {
                Z = std::move(Zn);
                Y = std::move(Yn);
                break;
            }
            if (tries == 10) return finish(Status::NumericalLimit, "iterate left the positive definite cone");
            aP /= 2;
            aD /= 2;
        }
        y += aP * dy;
        project(Y);

        if (trace)
            std::fprintf(stderr, "    sigma=%.2e aP=%.2e aD=%.2e\n", static_cast<double>(sigma), static_cast<double>(aP),
                         static_cast<double>(aD));
        stalls = (aP < T(1e-8) && aD < T(1e-8)) ? stalls + 1 : 0;
        if (stalls >= 3) return finish(Status::NumericalLimit, "step lengths stalled");
    }
    sol.iterations = opt.maxIterations;
    return finish(Status::NumericalLimit, "iteration cap reached");
}

}  // namespace detail

/// Primal-dual path-following interior-point method (Nesterov-Todd direction,
/// Mehrotra predictor-corrector, infeasible start). Single-threaded.
inline SdpSolution solve(const SdpProblem& problem, const SolverOptions& opt = {}) {
    problem.validate();
    if (!(opt.tol > 0.0)) throw DomainError("solver tolerance must be positive");
    if (opt.extendedPrecision) return detail::solve_impl<long double>(problem, opt);
    return detail::solve_impl<double>(problem, opt);
}

/// Dual-side bound with its feasibility defect priced in. For a minimization
/// the result is a lower bound on the optimum; for a maximization, an upper
/// bound. Any PSD dual iterate qualifies, so a run stopped at the numerical
/// limit can still certify. Throws when the problem was found infeasible or
/// the certificate is missing, not PSD, or its equality residual exceeds 10 * tol.
inline double certified_bound(const SdpProblem& problem, const SdpSolution& sol, double tol = 1e-8) {
    if (sol.status == Status::Infeasible)
        throw SolverError("no certified bound for status " + to_string(sol.status));
    const SdpProblem std = standardize(problem);
    const detail::Layout lay(std.blocks);
    const double objSign = problem.objective == Objective::Maximize ? -1.0 : 1.0;

    // Rebuild Y over the standardized blocks; slack entries for LessEqual
    // constraints are recovered as the nonnegative part of the residual.
    detail::BM Y = detail::BM::zero(lay);
    {
        SdpProblem own = problem;
        own.senses.clear();
        const detail::Layout ownLay(problem.blocks);
        const detail::BM Yown = detail::from_public(sol.Y, problem.blocks, ownLay);
        for (std::size_t b = 0; b < problem.blocks.size(); ++b) {
            if (problem.blocks[b].diagonal)
                Y.l.segment(lay.linOffset[b], problem.blocks[b].size) =
                    Yown.l.segment(ownLay.linOffset[b], problem.blocks[b].size);
            else
                Y.d[lay.denseIndex[b]] = Yown.d[ownLay.denseIndex[b]];
        }
    }

    // PSD defect: shift by the most negative eigenvalue.
    double lambdaMin = 0.0;
    for (auto& b : Y.d) {
        if (b.size() == 0) continue;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (b + b.transpose()), Eigen::EigenvaluesOnly);
        lambdaMin = std::min(lambdaMin, es.eigenvalues().minCoeff());
    }
    for (Eigen::Index k = 0; k < Y.l.size(); ++k) lambdaMin = std::min(lambdaMin, Y.l(k));
    if (-lambdaMin > 10 * tol) throw SolverError("dual certificate is not positive semidefinite");
    if (lambdaMin < 0) {
        for (auto& b : Y.d) b += -lambdaMin * Eigen::MatrixXd::Identity(b.rows(), b.cols());
        Y.l.array() += -lambdaMin;
    }

    const int m = std.numConstraints();
    const int slackBlock = static_cast<int>(problem.blocks.size());
    double residualL1 = 0.0, residualMax = 0.0;
    for (int k = 0; k < m; ++k) {
        // Split off the slack contribution: for LessEqual constraints any
        // nonnegative defect is absorbed by the slack variable.
        SparseSymMatrix own;
        double slackCoeff = 0.0;
        for (const auto& e : std.constraints[k].entries) {
            if (e.block == slackBlock)
                slackCoeff += e.value;
            else
                own.entries.push_back(e);
        }
        double r = std.rhs[k] - detail::inner(detail::expand(own, lay), Y);
        if (slackCoeff != 0.0 && r > 0) r = 0.0;
        residualL1 += std::abs(r);
        residualMax = std::max(residualMax, std::abs(r));
    }
    const double scale = 1.0 + Eigen::Map<const Eigen::VectorXd>(std.rhs.data(), m).norm();
    if (residualMax > 10 * tol * scale) throw SolverError("dual feasibility residual too large");

    double bound = problem.variableBound;
    if (bound <= 0.0) {
        bound = 1.0;
        for (double v : sol.y) bound = std::max(bound, 2.0 * std::abs(v));
    }
    const detail::BM F0 = detail::to_bm(std.cost, lay);
    const double value = detail::dot(F0, Y) - residualL1 * bound;
    return objSign * value;
}

/// Lower bound on the optimum of a minimization problem.
inline double certified_lower_bound(const SdpProblem& problem, const SdpSolution& sol, double tol = 1e-8) {
    if (problem.objective != Objective::Minimize)
        throw ContractError("certified_lower_bound needs a minimization problem");
    return certified_bound(problem, sol, tol);
}

// ---------------------------------------------------------------------------
// SDPA sparse format (".dat-s")

inline std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Writes the standardized problem: LessEqual senses become a trailing
/// diagonal slack block and a maximization is written as minimizing -c.
inline std::string to_sdpa_string(const SdpProblem& problem) {
    problem.validate();
    SdpProblem s = standardize(problem);
    std::ostringstream os;
    os << s.numConstraints() << "\n" << s.blocks.size() << "\n";
    for (std::size_t b = 0; b < s.blocks.size(); ++b)
        os << (b ? " " : "") << (s.blocks[b].diagonal ? -s.blocks[b].size : s.blocks[b].size);
    os << "\n";
    for (int k = 0; k < s.numConstraints(); ++k) os << (k ? " " : "") << format_number(s.rhs[k]);
    os << "\n";
    auto emit = [&](int k, SparseSymMatrix mtx) {
        mtx.normalize();
        for (const auto& e : mtx.entries)
            os << k << " " << e.block + 1 << " " << e.row + 1 << " " << e.col + 1 << " " << format_number(e.value)
               << "\n";
    };
    emit(0, s.cost);
    for (int k = 0; k < s.numConstraints(); ++k) emit(k + 1, s.constraints[k]);
    return os.str();
}

inline void export_sdpa(const SdpProblem& problem, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << to_sdpa_string(problem);
}

inline SdpProblem parse_sdpa(std::istream& in) {
    std::string line;
    int lineNo = 0;
    auto next = [&]() -> std::string {
        while (std::getline(in, line)) {
            ++lineNo;
            auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            if (line[first] == '"' || line[first] == '*') continue;
            for (char& ch : line)
                if (ch == ',' || ch == '(' || ch == ')' || ch == '{' || ch == '}') ch = ' ';
            return line;
        }
        throw ParseError("unexpected end of file", lineNo + 1);
    };
    auto readInts = [&](std::size_t count) {
        std::vector<long long> v;
        while (v.size() < count) {
            std::istringstream is(next());
            std::string tok;
            while (is >> tok && v.size() < count) {
                try {
                    std::size_t used = 0;
                    v.push_back(std::stoll(tok, &used));
                    if (used != tok.size()) throw ParseError("expected integer, got '" + tok + "'", lineNo);
                } catch (const std::logic_error&) {
                    throw ParseError("expected integer, got '" + tok + "'", lineNo);
                }
            }
        }
        return v;
    };

    SdpProblem p;
    const long long m = readInts(1)[0];
    if (m < 0) throw ParseError("negative constraint count", lineNo);
    const long long nb = readInts(1)[0];
    if (nb <= 0) throw ParseError("block count must be positive", lineNo);
    for (long long s : readInts(static_cast<std::size_t>(nb))) {
        if (s == 0) throw ParseError("zero block size", lineNo);
        p.blocks.push_back({static_cast<int>(std::llabs(s)), s < 0});
    }
    while (p.rhs.size() < static_cast<std::size_t>(m)) {
        std::istringstream is(next());
        std::string tok;
        while (is >> tok && p.rhs.size() < static_cast<std::size_t>(m)) {
            try {
                std::size_t used = 0;
                p.rhs.push_back(std::stod(tok, &used));
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::logic_error&) {
                throw ParseError("expected number, got '" + tok + "'", lineNo);
            }
        }
    }
    p.constraints.resize(m);
    while (std::getline(in, line)) {
        ++lineNo;
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        std::istringstream is(line);
        long long k, b, i, j;
        std::string vtok;
        if (!(is >> k >> b >> i >> j >> vtok)) throw ParseError("malformed entry line", lineNo);
        double v;
        try {
            std::size_t used = 0;
            v = std::stod(vtok, &used);
            if (used != vtok.size()) throw std::invalid_argument(vtok);
        } catch (const std::logic_error&) {
            throw ParseError("expected number, got '" + vtok + "'", lineNo);
        }
        std::string extra;
        if (is >> extra) throw ParseError("trailing data on entry line", lineNo);
        if (k < 0 || k > m) throw ParseError("matrix index out of range", lineNo);
        if (b < 1 || b > nb) throw ParseError("block index out of range", lineNo);
        const auto& spec = p.blocks[b - 1];
        if (i < 1 || j < 1 || i > spec.size || j > spec.size) throw ParseError("entry outside block", lineNo);
        if (spec.diagonal && i != j) throw ParseError("off-diagonal entry in diagonal block", lineNo);
        auto& target = (k == 0) ? p.cost : p.constraints[k - 1];
        target.add(static_cast<int>(b - 1), static_cast<int>(i - 1), static_cast<int>(j - 1), v);
    }
    p.cost.normalize();
    for (auto& f : p.constraints) f.normalize();
    return p;
}

inline SdpProblem parse_sdpa_string(const std::string& text) {
    std::istringstream is(text);
    return parse_sdpa(is);
}

inline SdpProblem import_sdpa(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    return parse_sdpa(in);
}

// ---------------------------------------------------------------------------
// Solution JSON: {"primal","dual","y","status"} plus an optional "Y" certificate
// (one entry per block: a matrix for dense blocks, a vector for diagonal ones).

inline nlohmann::json solution_to_json(const SdpSolution& s, bool withCertificate = true) {
    nlohmann::json j{{"primal", s.primalValue}, {"dual", s.dualValue}, {"y", s.y}, {"status", to_string(s.status)}};
    if (withCertificate) {
        nlohmann::json blocks = nlohmann::json::array();
        for (std::size_t b = 0; b < s.Y.dense.size(); ++b) {
            if (s.Y.diag[b].size() > 0) {
                blocks.push_back(std::vector<double>(s.Y.diag[b].data(), s.Y.diag[b].data() + s.Y.diag[b].size()));
            } else {
                nlohmann::json rows = nlohmann::json::array();
                const auto& d = s.Y.dense[b];
                for (Eigen::Index r = 0; r < d.rows(); ++r) {
                    std::vector<double> row(d.cols());
                    for (Eigen::Index c = 0; c < d.cols(); ++c) row[c] = d(r, c);
                    rows.push_back(row);
                }
                blocks.push_back(rows);
            }
        }
        j["Y"] = blocks;
    }
    return j;
}

inline SdpSolution solution_from_json(const nlohmann::json& j) {
    SdpSolution s;
    try {
        s.primalValue = j.at("primal").get<double>();
        s.dualValue = j.at("dual").get<double>();
        s.y = j.at("y").get<std::vector<double>>();
        s.status = status_from_string(j.at("status").get<std::string>());
        s.gap = std::abs(s.primalValue - s.dualValue);
        if (j.contains("Y")) {
            for (const auto& blk : j.at("Y")) {
                if (blk.empty() || blk.front().is_number()) {
                    auto v = blk.get<std::vector<double>>();
                    s.Y.dense.emplace_back();
                    s.Y.diag.push_back(Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
                } else {
                    auto rows = blk.get<std::vector<std::vector<double>>>();
                    Eigen::MatrixXd d(rows.size(), rows.size());
                    for (std::size_t r = 0; r < rows.size(); ++r) {
                        if (rows[r].size() != rows.size()) throw ParseError("certificate block is not square");
                        for (std::size_t c = 0; c < rows.size(); ++c) d(r, c) = rows[r][c];
                    }
                    s.Y.dense.push_back(std::move(d));
                    s.Y.diag.emplace_back();
                }
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("solution: ") + e.what());
    }
    return s;
}

inline SdpSolution import_solution(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("solution: ") + e.what());
    }
    return solution_from_json(j);
}

}  // namespace steerkey::sdp
