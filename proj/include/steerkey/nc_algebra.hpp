#pragma once

// Noncommutative operator words and polynomials over the steering alphabet.
//
// Alice: observables A_x (A_x^2 = 1, pairwise anticommuting when the algebra
// says so) or projectors M_{a|x}. Bob: projectors N_{b|y}. Eve: free operators
// Z_{a,i} and their adjoints. Operators of different parties commute, so every
// canonical word is laid out as [Alice block][Bob block][Eve block].

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace steerkey {

enum class Site : std::uint8_t { Alice = 0, Bob = 1, Eve = 2 };
enum class SymbolKind : std::uint8_t { Observable = 0, Projector = 1, Free = 2 };

struct OpSymbol {
    Site site = Site::Alice;
    SymbolKind kind = SymbolKind::Observable;
    int input = 0;    // x or y; for Eve the outcome label a of Z_{a,i}
    int outcome = 0;  // projectors only
    int node = 0;     // Eve only
    bool starred = false;

    auto operator<=>(const OpSymbol&) const = default;
};

inline OpSymbol alice_observable(int x) { return {Site::Alice, SymbolKind::Observable, x, 0, 0, false}; }
inline OpSymbol alice_projector(int a, int x) { return {Site::Alice, SymbolKind::Projector, x, a, 0, false}; }
inline OpSymbol bob_projector(int b, int y) { return {Site::Bob, SymbolKind::Projector, y, b, 0, false}; }
inline OpSymbol eve_z(int a, int node, bool starred = false) {
    return {Site::Eve, SymbolKind::Free, a, 0, node, starred};
}

using Word = std::vector<OpSymbol>;

/// Rewriting rules that depend on the scenario.
struct Algebra {
    bool aliceAnticommutes = true;
};

class OperatorPolynomial {
public:
    using Terms = std::map<Word, double>;

    OperatorPolynomial() = default;
    explicit OperatorPolynomial(double c) { add(Word{}, c); }
    explicit OperatorPolynomial(Word w, double c = 1.0) { add(std::move(w), c); }

    static OperatorPolynomial identity() { return OperatorPolynomial(1.0); }

    /// Adds c*w; `w` must already be canonical.
    void add(const Word& w, double c) {
        if (c == 0.0) return;
        auto [it, inserted] = terms_.try_emplace(w, c);
        if (!inserted) {
            it->second += c;
            if (std::abs(it->second) <= 1e-15) terms_.erase(it);
        }
    }

    const Terms& terms() const { return terms_; }
    bool empty() const { return terms_.empty(); }
    std::size_t size() const { return terms_.size(); }

    double coefficient(const Word& w) const {
        auto it = terms_.find(w);
        return it == terms_.end() ? 0.0 : it->second;
    }

    std::size_t degree() const {
        std::size_t d = 0;
        for (const auto& [w, c] : terms_) d = std::max(d, w.size());
        return d;
    }

    OperatorPolynomial& operator+=(const OperatorPolynomial& o) {
        for (const auto& [w, c] : o.terms_) add(w, c);
        return *this;
    }
    OperatorPolynomial& operator-=(const OperatorPolynomial& o) {
        for (const auto& [w, c] : o.terms_) add(w, -c);
        return *this;
    }
    OperatorPolynomial& operator*=(double s) {
        if (s == 0.0) {
            terms_.clear();
            return *this;
        }
        for (auto& [w, c] : terms_) c *= s;
        return *this;
    }

    friend OperatorPolynomial operator+(OperatorPolynomial a, const OperatorPolynomial& b) { return a += b; }
    friend OperatorPolynomial operator-(OperatorPolynomial a, const OperatorPolynomial& b) { return a -= b; }
    friend OperatorPolynomial operator*(double s, OperatorPolynomial p) { return p *= s; }

    bool operator==(const OperatorPolynomial&) const = default;

private:
    Terms terms_;
};

namespace detail {

// Reduces a block of projectors in place. Returns false if the block vanishes.
inline bool reduce_projectors(Word& block) {
    Word out;
    out.reserve(block.size());
    for (const auto& s : block) {
        if (!out.empty() && out.back().input == s.input && out.back().kind == SymbolKind::Projector &&
            s.kind == SymbolKind::Projector) {
            if (out.back().outcome == s.outcome) continue;
            return false;
        }
        out.push_back(s);
    }
    block = std::move(out);
    return true;
}

// Involutions A^2 = 1 without any commutation rule.
inline void reduce_involutions(Word& block) {
    Word out;
    out.reserve(block.size());
    for (const auto& s : block) {
        if (!out.empty() && out.back() == s && s.kind == SymbolKind::Observable) {
            out.pop_back();
            continue;
        }
        out.push_back(s);
    }
    block = std::move(out);
}

// Pairwise anticommuting involutions: sort by input with a sign per
// transposition, then cancel equal neighbours. Returns the sign.
inline double reduce_clifford(Word& block) {
    double sign = 1.0;
    for (std::size_t i = 0; i < block.size(); ++i)
        for (std::size_t j = 0; j + 1 < block.size() - i; ++j)
            if (block[j + 1].input < block[j].input) {
                std::swap(block[j], block[j + 1]);
                sign = -sign;
            }
    Word out;
    out.reserve(block.size());
    for (const auto& s : block) {
        if (!out.empty() && out.back() == s) {
            out.pop_back();
            continue;
        }
        out.push_back(s);
    }
    block = std::move(out);
    return sign;
}

inline bool all_kind(const Word& block, SymbolKind k) {
    return std::all_of(block.begin(), block.end(), [k](const OpSymbol& s) { return s.kind == k; });
}

}  // namespace detail

/// Rewrites a word into canonical form; the result has at most one term.
inline OperatorPolynomial canonicalize(const Word& w, const Algebra& alg = {}) {
    Word alice, bob, eve;
    for (const auto& s : w) {
        switch (s.site) {
            case Site::Alice: alice.push_back(s); break;
            case Site::Bob: bob.push_back(s); break;
            case Site::Eve: eve.push_back(s); break;
        }
    }
    double sign = 1.0;
    if (detail::all_kind(alice, SymbolKind::Observable)) {
        if (alg.aliceAnticommutes)
            sign *= detail::reduce_clifford(alice);
        else
            detail::reduce_involutions(alice);
    } else if (!detail::reduce_projectors(alice)) {
        return {};
    }
    if (detail::all_kind(bob, SymbolKind::Observable))
        detail::reduce_involutions(bob);
    else if (!detail::reduce_projectors(bob))
        return {};

    Word out;
    out.reserve(alice.size() + bob.size() + eve.size());
    out.insert(out.end(), alice.begin(), alice.end());
    out.insert(out.end(), bob.begin(), bob.end());
    out.insert(out.end(), eve.begin(), eve.end());
    return OperatorPolynomial(std::move(out), sign);
}

inline OperatorPolynomial canonicalize(const OperatorPolynomial& p, const Algebra& alg = {}) {
    OperatorPolynomial r;
    for (const auto& [w, c] : p.terms()) {
        const OperatorPolynomial canon = canonicalize(w, alg);
        for (const auto& [cw, s] : canon.terms()) r.add(cw, c * s);
    }
    return r;
}

/// Reversed word with Eve adjoint flags toggled, not yet canonical.
inline Word reversed_adjoint(const Word& w) {
    Word r(w.rbegin(), w.rend());
    for (auto& s : r)
        if (s.site == Site::Eve) s.starred = !s.starred;
    return r;
}

inline OperatorPolynomial adjoint(const OperatorPolynomial& p, const Algebra& alg = {}) {
    OperatorPolynomial r;
    for (const auto& [w, c] : p.terms()) {
        const OperatorPolynomial canon = canonicalize(reversed_adjoint(w), alg);
        for (const auto& [cw, s] : canon.terms()) r.add(cw, c * s);
    }
    return r;
}

inline OperatorPolynomial multiply(const OperatorPolynomial& p, const OperatorPolynomial& q,
                                   const Algebra& alg = {}) {
    OperatorPolynomial r;
    Word buf;
    for (const auto& [wp, cp] : p.terms())
        for (const auto& [wq, cq] : q.terms()) {
            buf = wp;
            buf.insert(buf.end(), wq.begin(), wq.end());
            const OperatorPolynomial canon = canonicalize(buf, alg);
            for (const auto& [cw, s] : canon.terms()) r.add(cw, cp * cq * s);
        }
    return r;
}

inline OperatorPolynomial symbol(const OpSymbol& s) { return OperatorPolynomial(Word{s}); }

/// M_{a|x} = (1 + (-1)^(a+1) A_x) / 2.
inline OperatorPolynomial alice_povm_as_polynomial(int a, int x) {
    OperatorPolynomial p(0.5);
    p.add(Word{alice_observable(x)}, a == 1 ? 0.5 : -0.5);
    return p;
}

// ---------------------------------------------------------------------------
// Debug text form, e.g. "-1 A1 A2 | N1|2 | Z*1,3".

inline std::string to_string(const OpSymbol& s) {
    std::ostringstream os;
    switch (s.site) {
        case Site::Alice:
            if (s.kind == SymbolKind::Observable)
                os << 'A' << s.input;
            else
                os << 'M' << s.outcome << '|' << s.input;
            break;
        case Site::Bob:
            if (s.kind == SymbolKind::Observable)
                os << 'B' << s.input;
            else
                os << 'N' << s.outcome << '|' << s.input;
            break;
        case Site::Eve: os << 'Z' << (s.starred ? "*" : "") << s.input << ',' << s.node; break;
    }
    return os.str();
}

inline std::string to_string(const Word& w) {
    if (w.empty()) return "1";
    std::string out;
    Site prev = w.front().site;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (i > 0) out += (w[i].site != prev) ? " | " : " ";
        out += to_string(w[i]);
        prev = w[i].site;
    }
    return out;
}

inline std::string to_string(const OperatorPolynomial& p) {
    if (p.empty()) return "0";
    std::ostringstream os;
    bool first = true;
    for (const auto& [w, c] : p.terms()) {
        if (!first) os << " + ";
        first = false;
        os << c << ' ' << to_string(w);
    }
    return os.str();
}

}  // namespace steerkey
