#pragma once

// Relative fundamental group of a profiled interpolation on M x R.
//
// The ambient function is F(m, s) = Ftilde(m, s) + C * h(s) where h has
// finitely many critical points p_1 < ... < p_k, each a max or a min, and
// Ftilde freezes to a slab function f_i near each p_i (f_0 and f_{k+1} are
// the regimes toward -infinity and +infinity).  Critical points of F are
// slab critical points, with the Morse index shifted up by one over max
// slabs.  Where h drops to -infinity the descending dynamics escape, which
// adds formal endpoints at infinity together with one copy of the escape
// surface's steps and relation disks per escaping side.
//
// Words are edge paths from a chosen base endpoint that finish either back
// at the base or at a formal endpoint.  Three moves generate equivalence:
//   (1) cancel adjacent inverse letter pairs,
//   (2) splice the boundary word of a relation disk, up to cyclic rotation
//       and inversion, at a position whose endpoint matches,
//   (3) drop a trailing step that lives at infinity.
// rel_normalize applies (1) and (3) to a fixpoint; rel_equivalent searches
// over all three; rel_classes enumerates classes below a length bound.
//
// Distinctness certificates are exponent vectors over the steps reduced
// modulo an integer lattice: the span of abelianized disk boundaries, and
// additionally every infinity step once move (3) is available, i.e. when
// either the base or the endpoint is formal.  The certificate separates
// whenever the relative group is abelian separated, which covers every
// model shipped here; merging of equal certificate representatives is
// re-verified by bounded move search when the representatives are short.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "continuation.hpp"
#include "expr.hpp"
#include "intlat.hpp"
#include "mscomplex.hpp"
#include "pi1.hpp"

namespace morsepi {

struct ProfileInvalid : std::runtime_error {
    explicit ProfileInvalid(const std::string& what) : std::runtime_error(what) {}
};

struct BudgetExceeded : std::runtime_error {
    explicit BudgetExceeded(const std::string& what) : std::runtime_error(what) {}
};

enum class InfSide { Neg, Pos };

inline const char* to_string(InfSide s) { return s == InfSide::Neg ? "neg_inf" : "pos_inf"; }

// Either a critical point of the big function (cp = global id) or a formal
// point at infinity (cp = minimum id within the escape surface's complex).
struct RelEndpoint {
    bool formal = false;
    int cp = -1;
    InfSide side = InfSide::Neg;

    friend bool operator==(const RelEndpoint& a, const RelEndpoint& b) {
        if (a.formal != b.formal) return false;
        if (a.formal) return a.side == b.side && a.cp == b.cp;
        return a.cp == b.cp;
    }
    friend bool operator!=(const RelEndpoint& a, const RelEndpoint& b) { return !(a == b); }
};

struct RelCp {
    int id = -1;
    int slab = -1;   // 1..k, position of the h critical point it sits over
    int local = -1;  // cp id within that slab's surface complex
    int index = 0;   // Morse index in the big function
};

struct RelStep {
    int id = -1;
    std::optional<InfSide> at;  // set for steps living at an infinite end
    int slab = -1;              // owning slab, or 0 / k+1 for infinity steps
    int through = -1;           // local cp id within the owning surface complex
    RelEndpoint start, end;
};

inline RelEndpoint letter_tail(const RelStep& s, int sign) { return sign > 0 ? s.start : s.end; }
inline RelEndpoint letter_head(const RelStep& s, int sign) { return sign > 0 ? s.end : s.start; }

struct RelComplex {
    std::vector<MorseComplexData> slabs;  // f_0 .. f_{k+1}
    std::vector<double> ps;
    std::vector<bool> is_max;
    bool neg_formal = false, pos_formal = false;
    std::vector<RelCp> cps;
    std::vector<RelStep> steps;
    std::vector<Word> disks;
    HermiteResult lat_loop, lat_formal;

    int cp_id(int slab, int local) const {
        for (const RelCp& c : cps)
            if (c.slab == slab && c.local == local) return c.id;
        return -1;
    }
};

// Slab functions around each critical point of the profile h, plus the two
// infinite regimes.  Connecting data for a max slab records how its steps
// and minima continue onto the neighbouring level; identity is assumed when
// a map is absent, which requires structurally equal complexes.  Populated
// maps normally come from continuation_map on the adjacent interpolation.
struct InterpolationProfile {
    Expr h = parse_expr("0");
    std::vector<double> ps;
    std::vector<bool> is_max;
    std::vector<MorseComplexData> slabs;  // f_0 .. f_{k+1}, so ps.size() + 2 entries
    double C = 1.0;
    std::map<int, StepMap> toward_left;   // key: max slab position 1..k
    std::map<int, StepMap> toward_right;
};

namespace detail {

inline void check_structural_match(const MorseComplexData& a, const MorseComplexData& b,
                                   const std::string& where) {
    if (a.cps.size() != b.cps.size() || a.steps.size() != b.steps.size())
        throw ProfileInvalid("identity connection needs equal complexes " + where);
    for (size_t i = 0; i < a.cps.size(); ++i)
        if (a.cps[i].index != b.cps[i].index)
            throw ProfileInvalid("identity connection needs matching indices " + where);
    for (size_t i = 0; i < a.steps.size(); ++i) {
        const Step &s = a.steps[i], &t = b.steps[i];
        if (s.through != t.through || s.start != t.start || s.end != t.end)
            throw ProfileInvalid("identity connection needs matching steps " + where);
    }
}

struct SideData {
    std::map<int, int> transport;   // minimum -> minimum on the adjacent level
    std::map<int, Word> images;     // step -> word over the adjacent level's steps
};

inline SideData side_data(const InterpolationProfile& prof, int slab, bool right) {
    const std::map<int, StepMap>& given = right ? prof.toward_right : prof.toward_left;
    const MorseComplexData& from = prof.slabs[static_cast<size_t>(slab)];
    int adj = right ? (slab + 1) : (slab - 1);
    const MorseComplexData& to = prof.slabs[static_cast<size_t>(adj)];
    SideData out;
    auto it = given.find(slab);
    if (it != given.end()) {
        check_endpoint_coherence(it->second);
        out.transport = it->second.base_transport;
        out.images = it->second.images;
        for (const CriticalPoint& c : from.cps) {
            if (c.index == 0 && !out.transport.count(c.id))
                throw ProfileInvalid("connection misses a minimum of slab " + std::to_string(slab));
            if (c.index == 1 && !out.images.count(from.step_of_saddle(c.id)))
                throw ProfileInvalid("connection misses a step of slab " + std::to_string(slab));
        }
        return out;
    }
    check_structural_match(from, to, "at slab " + std::to_string(slab));
    for (const CriticalPoint& c : from.cps)
        if (c.index == 0) out.transport[c.id] = c.id;
    for (const Step& s : from.steps) out.images[s.id] = Word{{s.id, 1}};
    return out;
}

inline std::string encode_rel(const Word& w) {
    std::string out;
    for (const SignedStep& l : w) {
        out += std::to_string(l.step);
        out += l.sign > 0 ? '+' : '-';
    }
    return out;
}

}  // namespace detail

inline void validate_profile(const InterpolationProfile& prof) {
    const size_t k = prof.ps.size();
    if (k == 0) throw ProfileInvalid("profile needs at least one critical point");
    if (prof.is_max.size() != k) throw ProfileInvalid("one max/min tag per critical point");
    for (size_t i = 0; i + 1 < k; ++i) {
        if (!(prof.ps[i] < prof.ps[i + 1]))
            throw ProfileInvalid("profile critical points must increase strictly");
        if (prof.is_max[i] == prof.is_max[i + 1])
            throw ProfileInvalid("consecutive profile critical points share a tag");
    }
    if (prof.slabs.size() != k + 2)
        throw ProfileInvalid("expected " + std::to_string(k + 2) + " slab functions");
    if (!(prof.C > 0.0)) throw ProfileInvalid("profile weight C must be positive");

    Expr dh = prof.h.diff(Var::S);
    Expr ddh = dh.diff(Var::S);
    for (size_t i = 0; i < k; ++i) {
        EvalEnv env;
        env.set(Var::S, prof.ps[i]);
        if (std::abs(dh.eval(env)) > 1e-6)
            throw ProfileInvalid("profile is not stationary at its tagged point " + std::to_string(i));
        double c = ddh.eval(env);
        if (prof.is_max[i] ? !(c < -1e-9) : !(c > 1e-9))
            throw ProfileInvalid("tag disagrees with profile curvature at point " + std::to_string(i));
    }
    EvalEnv lo, hi;
    lo.set(Var::S, prof.ps.front() - 5.0);
    hi.set(Var::S, prof.ps.back() + 5.0);
    double dlo = dh.eval(lo), dhi = dh.eval(hi);
    if (prof.is_max.front() ? !(dlo > 1e-9) : !(dlo < -1e-9))
        throw ProfileInvalid("profile slope left of the first tagged point contradicts its tag");
    if (prof.is_max.back() ? !(dhi < -1e-9) : !(dhi > 1e-9))
        throw ProfileInvalid("profile slope right of the last tagged point contradicts its tag");

    int dim = -1;
    for (const MorseComplexData& d : prof.slabs) {
        if (d.cps.empty()) throw ProfileInvalid("slab complex without critical points");
        if (dim < 0) dim = d.manifold.dim();
        if (d.manifold.dim() != dim) throw ProfileInvalid("slab complexes mix manifolds");
    }
}

inline RelComplex build_relative_complex(const InterpolationProfile& prof) {
    validate_profile(prof);
    const int k = static_cast<int>(prof.ps.size());

    RelComplex rc;
    rc.slabs = prof.slabs;
    rc.ps = prof.ps;
    rc.is_max = prof.is_max;
    rc.neg_formal = prof.is_max.front();
    rc.pos_formal = prof.is_max.back();

    for (int i = 1; i <= k; ++i) {
        const MorseComplexData& f = prof.slabs[static_cast<size_t>(i)];
        int shift = prof.is_max[static_cast<size_t>(i - 1)] ? 1 : 0;
        for (const CriticalPoint& c : f.cps) {
            RelCp rcp;
            rcp.id = static_cast<int>(rc.cps.size());
            rcp.slab = i;
            rcp.local = c.id;
            rcp.index = c.index + shift;
            rc.cps.push_back(rcp);
        }
    }

    auto cp_end = [&rc](int slab, int local) {
        RelEndpoint e;
        e.cp = rc.cp_id(slab, local);
        if (e.cp < 0) throw ProfileInvalid("slab endpoint does not exist");
        return e;
    };
    auto formal_end = [](InfSide side, int local) {
        RelEndpoint e;
        e.formal = true;
        e.side = side;
        e.cp = local;
        return e;
    };

    // Steps: min slab copies, then connecting steps over max slabs, then one
    // copy of the escape surface's steps per infinite side.
    std::map<std::pair<int, int>, int> slab_step;  // (slab, local step) -> global
    std::map<std::pair<int, int>, int> conn_step;  // (max slab, local min) -> global
    std::map<std::pair<int, int>, int> inf_step;   // (side 0/1, local step) -> global

    for (int i = 1; i <= k; ++i) {
        if (prof.is_max[static_cast<size_t>(i - 1)]) continue;
        const MorseComplexData& f = prof.slabs[static_cast<size_t>(i)];
        for (const Step& s : f.steps) {
            RelStep rs;
            rs.id = static_cast<int>(rc.steps.size());
            rs.slab = i;
            rs.through = s.through;
            rs.start = cp_end(i, s.start);
            rs.end = cp_end(i, s.end);
            slab_step[{i, s.id}] = rs.id;
            rc.steps.push_back(rs);
        }
    }

    std::map<int, detail::SideData> lefts, rights;
    for (int i = 1; i <= k; ++i) {
        if (!prof.is_max[static_cast<size_t>(i - 1)]) continue;
        lefts[i] = detail::side_data(prof, i, false);
        rights[i] = detail::side_data(prof, i, true);
        const MorseComplexData& f = prof.slabs[static_cast<size_t>(i)];
        for (const CriticalPoint& c : f.cps) {
            if (c.index != 0) continue;
            RelStep rs;
            rs.id = static_cast<int>(rc.steps.size());
            rs.slab = i;
            rs.through = c.id;
            int ml = lefts[i].transport.at(c.id);
            int mr = rights[i].transport.at(c.id);
            rs.start = (i == 1) ? formal_end(InfSide::Neg, ml) : cp_end(i - 1, ml);
            rs.end = (i == k) ? formal_end(InfSide::Pos, mr) : cp_end(i + 1, mr);
            conn_step[{i, c.id}] = rs.id;
            rc.steps.push_back(rs);
        }
    }

    auto add_inf = [&](InfSide side) {
        const MorseComplexData& f = prof.slabs[side == InfSide::Neg ? 0 : static_cast<size_t>(k + 1)];
        for (const Step& s : f.steps) {
            RelStep rs;
            rs.id = static_cast<int>(rc.steps.size());
            rs.at = side;
            rs.slab = side == InfSide::Neg ? 0 : k + 1;
            rs.through = s.through;
            rs.start = formal_end(side, s.start);
            rs.end = formal_end(side, s.end);
            inf_step[{side == InfSide::Neg ? 0 : 1, s.id}] = rs.id;
            rc.steps.push_back(rs);
        }
    };
    if (rc.neg_formal) add_inf(InfSide::Neg);
    if (rc.pos_formal) add_inf(InfSide::Pos);

    // Disks: min slab relations, escape surface relations, and one square per
    // saddle of a max slab whose sides are the saddle's step read on the two
    // neighbouring levels joined by the connecting steps of its endpoints.
    auto relabel = [](const Word& w, const std::map<std::pair<int, int>, int>& table, int key) {
        Word out;
        for (const SignedStep& l : w) out.push_back({table.at({key, l.step}), l.sign});
        return out;
    };
    for (int i = 1; i <= k; ++i) {
        if (prof.is_max[static_cast<size_t>(i - 1)]) continue;
        for (const DiskBoundary& d : prof.slabs[static_cast<size_t>(i)].disks)
            rc.disks.push_back(relabel(d.word, slab_step, i));
    }
    if (rc.neg_formal)
        for (const DiskBoundary& d : prof.slabs[0].disks)
            rc.disks.push_back(relabel(d.word, inf_step, 0));
    if (rc.pos_formal)
        for (const DiskBoundary& d : prof.slabs[static_cast<size_t>(k + 1)].disks)
            rc.disks.push_back(relabel(d.word, inf_step, 1));

    for (int i = 1; i <= k; ++i) {
        if (!prof.is_max[static_cast<size_t>(i - 1)]) continue;
        const MorseComplexData& f = prof.slabs[static_cast<size_t>(i)];
        for (const CriticalPoint& c : f.cps) {
            if (c.index != 1) continue;
            const Step& s = f.steps[static_cast<size_t>(f.step_of_saddle(c.id))];
            Word right_word = (i == k) ? relabel(rights[i].images.at(s.id), inf_step, 1)
                                       : relabel(rights[i].images.at(s.id), slab_step, i + 1);
            Word left_word = (i == 1) ? relabel(lefts[i].images.at(s.id), inf_step, 0)
                                      : relabel(lefts[i].images.at(s.id), slab_step, i - 1);
            Word w = right_word;
            w.push_back({conn_step.at({i, s.end}), -1});
            Word li = invert(left_word);
            w.insert(w.end(), li.begin(), li.end());
            w.push_back({conn_step.at({i, s.start}), 1});
            rc.disks.push_back(w);
        }
    }

    // Sanity: every disk boundary closes up.
    for (const Word& w : rc.disks) {
        if (w.empty()) continue;
        RelEndpoint cur = letter_tail(rc.steps[static_cast<size_t>(w.front().step)], w.front().sign);
        for (const SignedStep& l : w) {
            const RelStep& st = rc.steps[static_cast<size_t>(l.step)];
            if (letter_tail(st, l.sign) != cur) throw ProfileInvalid("disk boundary does not chain");
            cur = letter_head(st, l.sign);
        }
        if (cur != letter_tail(rc.steps[static_cast<size_t>(w.front().step)], w.front().sign))
            throw ProfileInvalid("disk boundary does not close");
    }

    const Eigen::Index n = static_cast<Eigen::Index>(rc.steps.size());
    std::vector<IVecN> rows;
    for (const Word& w : rc.disks) {
        IVecN r = IVecN::Zero(n);
        for (const SignedStep& l : w) r[l.step] += l.sign;
        if (!r.isZero()) rows.push_back(r);
    }
    size_t loop_rows = rows.size();
    for (const RelStep& s : rc.steps)
        if (s.at) {
            IVecN r = IVecN::Zero(n);
            r[s.id] = 1;
            rows.push_back(r);
        }
    auto pack = [n](const std::vector<IVecN>& rs, size_t count) {
        IMat m(static_cast<Eigen::Index>(count), n);
        for (size_t i = 0; i < count; ++i) m.row(static_cast<Eigen::Index>(i)) = rs[i];
        return m;
    };
    rc.lat_loop = hermite_normal_form(pack(rows, loop_rows));
    rc.lat_formal = hermite_normal_form(pack(rows, rows.size()));
    return rc;
}

// Endpoint of a word read from the given base; throws when letters do not chain.
inline RelEndpoint rel_endpoint(const RelComplex& rc, const RelEndpoint& base, const Word& w) {
    RelEndpoint cur = base;
    for (const SignedStep& l : w) {
        if (l.step < 0 || l.step >= static_cast<int>(rc.steps.size()))
            throw Pi1Error("letter names an unknown step");
        const RelStep& st = rc.steps[static_cast<size_t>(l.step)];
        if (letter_tail(st, l.sign) != cur) throw Pi1Error("letters do not chain at the endpoints");
        cur = letter_head(st, l.sign);
    }
    return cur;
}

// Moves (1) and (3) to a fixpoint.  Never lengthens and is idempotent.
inline Word rel_normalize(const Word& w, const RelComplex& rc) {
    Word out = w;
    for (;;) {
        size_t before = out.size();
        out = free_reduce(out);
        while (!out.empty() && rc.steps[static_cast<size_t>(out.back().step)].at) out.pop_back();
        if (out.size() == before) return out;
    }
}

inline RelEndpoint rel_base_min(const RelComplex& rc) {
    int best = -1;
    double val = 0.0;
    for (const RelCp& c : rc.cps) {
        if (c.index != 0) continue;
        double v = rc.slabs[static_cast<size_t>(c.slab)].cps[static_cast<size_t>(c.local)].value;
        if (best < 0 || v < val) {
            best = c.id;
            val = v;
        }
    }
    if (best < 0) throw ProfileInvalid("the big function has no minimum to base at");
    RelEndpoint e;
    e.cp = best;
    return e;
}

inline RelEndpoint rel_base_formal(const RelComplex& rc, InfSide side) {
    if (side == InfSide::Neg ? !rc.neg_formal : !rc.pos_formal)
        throw ProfileInvalid("no formal endpoints on that side");
    const MorseComplexData& f = rc.slabs[side == InfSide::Neg ? 0 : rc.slabs.size() - 1];
    int best = -1;
    double val = 0.0;
    for (const CriticalPoint& c : f.cps)
        if (c.index == 0 && (best < 0 || c.value < val)) {
            best = c.id;
            val = c.value;
        }
    RelEndpoint e;
    e.formal = true;
    e.side = side;
    e.cp = best;
    return e;
}

inline IVecN rel_abelianize(const RelComplex& rc, const Word& w) {
    IVecN v = IVecN::Zero(static_cast<Eigen::Index>(rc.steps.size()));
    for (const SignedStep& l : w) v[l.step] += l.sign;
    return v;
}

// Canonical certificate of a word: exponent vector reduced modulo the disk
// lattice, with infinity steps also killed when move (3) is in play.
inline IVecN rel_certificate(const RelComplex& rc, const Word& w, bool formal_regime) {
    return reduce_mod(formal_regime ? rc.lat_formal : rc.lat_loop, rel_abelianize(rc, w));
}

namespace detail {

inline std::vector<Word> rel_disk_variants(const RelComplex& rc) {
    std::set<std::string> seen;
    std::vector<Word> out;
    auto add = [&](const Word& w) {
        if (w.empty()) return;
        if (seen.insert(encode_rel(w)).second) out.push_back(w);
    };
    for (const Word& d : rc.disks) {
        for (size_t r = 0; r < d.size(); ++r) {
            Word rot(d.begin() + static_cast<long>(r), d.end());
            rot.insert(rot.end(), d.begin(), d.begin() + static_cast<long>(r));
            add(rot);
            add(invert(rot));
        }
    }
    return out;
}

}  // namespace detail

struct RelVerdict {
    enum class Kind { Equivalent, Distinct, Unknown };
    Kind kind = Kind::Unknown;
    std::vector<Word> trace;  // normalized words from the first toward the second
    std::string certificate;  // reason when Distinct
    long states = 0;
};

// Bidirectional bounded search over moves (1)(2)(3).  Words must start at
// the base and finish at the base or at a formal point.
inline RelVerdict rel_equivalent(const RelComplex& rc, const RelEndpoint& base, const Word& w1,
                                 const Word& w2, const SearchBudget& budget = {}) {
    RelEndpoint e1 = rel_endpoint(rc, base, w1);
    RelEndpoint e2 = rel_endpoint(rc, base, w2);
    for (const RelEndpoint& e : {e1, e2})
        if (!e.formal && e != base)
            throw Pi1Error("relative words must finish at the base or at infinity");

    RelVerdict out;
    auto etype = [](const RelEndpoint& e) {
        return e.formal ? (e.side == InfSide::Neg ? 1 : 2) : 0;
    };
    if (etype(e1) != etype(e2)) {
        out.kind = RelVerdict::Kind::Distinct;
        auto name = [](int t) {
            return t == 0 ? std::string("a loop") : std::string("a path to ") + (t == 1 ? "-infinity" : "+infinity");
        };
        out.certificate = "endpoint type differs: " + name(etype(e1)) + " vs " + name(etype(e2));
        return out;
    }
    bool formal_regime = base.formal || e1.formal;
    IVecN c1 = rel_certificate(rc, w1, formal_regime);
    IVecN c2 = rel_certificate(rc, w2, formal_regime);
    if (c1 != c2) {
        out.kind = RelVerdict::Kind::Distinct;
        std::string lhs, rhs;
        for (Eigen::Index i = 0; i < c1.size(); ++i) {
            lhs += (i ? "," : "") + std::to_string(c1[i]);
            rhs += (i ? "," : "") + std::to_string(c2[i]);
        }
        out.certificate = "abelianized certificates differ: (" + lhs + ") vs (" + rhs + ")";
        return out;
    }

    Word n1 = rel_normalize(w1, rc), n2 = rel_normalize(w2, rc);
    if (detail::encode_rel(n1) == detail::encode_rel(n2)) {
        out.kind = RelVerdict::Kind::Equivalent;
        out.trace = {n1};
        return out;
    }

    std::vector<Word> variants = detail::rel_disk_variants(rc);
    struct Node {
        Word word;
        int parent = -1;
    };
    // Two fronts expanded alternately; meeting key decides.
    std::vector<Node> nodes[2];
    std::unordered_map<std::string, int> seen[2];
    std::deque<int> queue[2];
    for (int side = 0; side < 2; ++side) {
        nodes[side].push_back({side == 0 ? n1 : n2, -1});
        seen[side][detail::encode_rel(nodes[side][0].word)] = 0;
        queue[side].push_back(0);
    }
    auto build_trace = [&](int ia, int ib) {
        std::vector<Word> fwd, bwd;
        for (int i = ia; i >= 0; i = nodes[0][static_cast<size_t>(i)].parent)
            fwd.push_back(nodes[0][static_cast<size_t>(i)].word);
        std::reverse(fwd.begin(), fwd.end());
        for (int i = ib; i >= 0; i = nodes[1][static_cast<size_t>(i)].parent)
            bwd.push_back(nodes[1][static_cast<size_t>(i)].word);
        if (!bwd.empty()) bwd.erase(bwd.begin());  // shared meeting word
        fwd.insert(fwd.end(), bwd.begin(), bwd.end());
        return fwd;
    };

    long states = 2;
    while (!queue[0].empty() || !queue[1].empty()) {
        int side = queue[0].empty() ? 1 : (queue[1].empty() ? 0 : (queue[0].size() <= queue[1].size() ? 0 : 1));
        int cur = queue[side].front();
        queue[side].pop_front();
        Word w = nodes[side][static_cast<size_t>(cur)].word;

        std::vector<RelEndpoint> pref;
        pref.push_back(base);
        for (const SignedStep& l : w)
            pref.push_back(letter_head(rc.steps[static_cast<size_t>(l.step)], l.sign));

        for (const Word& v : variants) {
            RelEndpoint anchor = letter_tail(rc.steps[static_cast<size_t>(v.front().step)], v.front().sign);
            for (size_t p = 0; p <= w.size(); ++p) {
                if (pref[p] != anchor) continue;
                Word cand(w.begin(), w.begin() + static_cast<long>(p));
                cand.insert(cand.end(), v.begin(), v.end());
                cand.insert(cand.end(), w.begin() + static_cast<long>(p), w.end());
                cand = rel_normalize(cand, rc);
                if (static_cast<int>(cand.size()) > budget.max_len) continue;
                std::string key = detail::encode_rel(cand);
                if (seen[side].count(key)) continue;
                if (states >= budget.max_states) {
                    out.kind = RelVerdict::Kind::Unknown;
                    out.states = states;
                    return out;
                }
                nodes[side].push_back({cand, cur});
                int id = static_cast<int>(nodes[side].size()) - 1;
                seen[side][key] = id;
                ++states;
                auto hit = seen[1 - side].find(key);
                if (hit != seen[1 - side].end()) {
                    out.kind = RelVerdict::Kind::Equivalent;
                    out.states = states;
                    out.trace = side == 0 ? build_trace(id, hit->second) : build_trace(hit->second, id);
                    return out;
                }
                queue[side].push_back(id);
            }
        }
    }
    out.kind = RelVerdict::Kind::Unknown;
    out.states = states;
    return out;
}

struct RelClass {
    Word rep;
    int endpoint_kind = 0;  // 0 loop at the base, 1 lands at -infinity, 2 at +infinity
    IVecN certificate;
    int length = 0;          // shortest representative seen
    bool distinguished = false;
    bool merge_verified = true;
};

struct RelClassification {
    std::vector<RelClass> classes;
    long states = 0;
    int unverified_merges = 0;
    std::vector<int> counts_by_length;  // distinct classes at each length bound 0..max_len
};

// Enumerates classes of words from the base up to a length bound by walking
// the step graph over (endpoint, exponent vector) states and bucketing final
// states by endpoint type and canonical certificate.
inline RelClassification rel_classes(const RelComplex& rc, const RelEndpoint& base, int max_len,
                                     const SearchBudget& budget = SearchBudget{64, 4000000}) {
    if (max_len < 0 || max_len > 12)
        throw BudgetExceeded("class enumeration supports length bounds up to 12");

    struct State {
        RelEndpoint at;
        IVecN exp;
        int len = 0;
        int parent = -1;
        SignedStep via{-1, 1};
    };
    auto key_of = [](const RelEndpoint& e, const IVecN& v) {
        std::string k = e.formal ? (e.side == InfSide::Neg ? "n" : "p") : "c";
        k += std::to_string(e.cp);
        for (Eigen::Index i = 0; i < v.size(); ++i) k += "," + std::to_string(v[i]);
        return k;
    };

    std::vector<State> states;
    std::unordered_map<std::string, int> seen;
    states.push_back({base, IVecN::Zero(static_cast<Eigen::Index>(rc.steps.size())), 0, -1, {-1, 1}});
    seen[key_of(base, states[0].exp)] = 0;
    std::deque<int> queue{0};

    while (!queue.empty()) {
        int cur = queue.front();
        queue.pop_front();
        if (states[static_cast<size_t>(cur)].len >= max_len) continue;
        for (const RelStep& s : rc.steps)
            for (int sign : {1, -1}) {
                if (letter_tail(s, sign) != states[static_cast<size_t>(cur)].at) continue;
                IVecN e = states[static_cast<size_t>(cur)].exp;
                e[s.id] += sign;
                RelEndpoint nxt = letter_head(s, sign);
                std::string key = key_of(nxt, e);
                if (seen.count(key)) continue;
                if (static_cast<long>(states.size()) >= budget.max_states)
                    throw BudgetExceeded("state budget exhausted while enumerating classes");
                states.push_back({nxt, e, states[static_cast<size_t>(cur)].len + 1, cur, {s.id, sign}});
                seen[key] = static_cast<int>(states.size()) - 1;
                queue.push_back(static_cast<int>(states.size()) - 1);
            }
    }

    auto rep_of = [&states](int id) {
        Word w;
        for (int i = id; i >= 0 && states[static_cast<size_t>(i)].parent >= 0;
             i = states[static_cast<size_t>(i)].parent)
            w.push_back(states[static_cast<size_t>(i)].via);
        std::reverse(w.begin(), w.end());
        return w;
    };

    RelClassification out;
    out.states = static_cast<long>(states.size());
    std::map<std::string, int> classes;       // class key -> index into out.classes
    std::map<std::string, int> second_state;  // class key -> another state id, for verification
    for (int id = 0; id < static_cast<int>(states.size()); ++id) {
        const State& st = states[static_cast<size_t>(id)];
        bool qualifies = st.at.formal || st.at == base;
        if (!qualifies) continue;
        int kind = st.at.formal ? (st.at.side == InfSide::Neg ? 1 : 2) : 0;
        bool formal_regime = base.formal || st.at.formal;
        IVecN cert = reduce_mod(formal_regime ? rc.lat_formal : rc.lat_loop, st.exp);
        std::string key = std::to_string(kind) + "|";
        for (Eigen::Index i = 0; i < cert.size(); ++i) key += std::to_string(cert[i]) + ",";
        auto it = classes.find(key);
        if (it == classes.end()) {
            RelClass cl;
            cl.rep = rep_of(id);
            cl.endpoint_kind = kind;
            cl.certificate = cert;
            cl.length = st.len;
            cl.distinguished = cert.isZero() && kind == (base.formal ? (base.side == InfSide::Neg ? 1 : 2) : 0);
            classes[key] = static_cast<int>(out.classes.size());
            out.classes.push_back(cl);
        } else if (!second_state.count(key) && rep_of(id) != out.classes[static_cast<size_t>(it->second)].rep) {
            second_state[key] = id;
        }
    }

    // Re-verify a bounded number of short same-certificate merges by move search.
    int checked = 0;
    for (auto& [key, second] : second_state) {
        if (checked >= 64) break;
        RelClass& cl = out.classes[static_cast<size_t>(classes[key])];
        Word other = rep_of(second);
        if (cl.rep.size() > 6 || other.size() > 6) continue;
        ++checked;
        RelVerdict v = rel_equivalent(rc, base, cl.rep, other, SearchBudget{24, 20000});
        if (v.kind != RelVerdict::Kind::Equivalent) {
            cl.merge_verified = false;
            ++out.unverified_merges;
        }
    }

    std::stable_sort(out.classes.begin(), out.classes.end(), [](const RelClass& a, const RelClass& b) {
        if (a.distinguished != b.distinguished) return a.distinguished;
        if (a.length != b.length) return a.length < b.length;
        return detail::encode_rel(a.rep) < detail::encode_rel(b.rep);
    });

    out.counts_by_length.assign(static_cast<size_t>(max_len) + 1, 0);
    for (const RelClass& c : out.classes)
        for (int L = c.length; L <= max_len; ++L) out.counts_by_length[static_cast<size_t>(L)] += 1;
    return out;
}

enum class RelBaseKind { AtMin, AtNegInf, AtPosInf };

struct CorReport {
    enum class Kind { Match, Mismatch, InconclusiveBudget };
    Kind kind = Kind::Mismatch;
    std::vector<std::vector<int>> counts_by_length;  // one row per profile
    std::string note;
};

// Compares class structure across profiles that share the profile nature and
// the base side but may differ in their slab functions.  Classes are matched
// through the invariant data: endpoint type and birth length.
inline CorReport cor_invariance_check(const std::vector<InterpolationProfile>& profiles,
                                      RelBaseKind where, int max_len,
                                      const SearchBudget& budget = SearchBudget{64, 4000000}) {
    if (profiles.size() < 2) throw ProfileInvalid("invariance check needs at least two profiles");
    for (const InterpolationProfile& p : profiles) {
        if (p.is_max != profiles.front().is_max)
            throw ProfileInvalid("profiles mix different profile natures");
        if (!p.slabs.empty() && !profiles.front().slabs.empty() &&
            p.slabs[0].manifold.dim() != profiles.front().slabs[0].manifold.dim())
            throw ProfileInvalid("profiles must share the underlying surface");
    }

    CorReport rep;
    std::vector<std::multiset<std::pair<int, int>>> shapes;
    std::vector<int> dist_kind;
    for (const InterpolationProfile& p : profiles) {
        RelComplex rc = build_relative_complex(p);
        RelEndpoint base;
        switch (where) {
            case RelBaseKind::AtMin: base = rel_base_min(rc); break;
            case RelBaseKind::AtNegInf: base = rel_base_formal(rc, InfSide::Neg); break;
            case RelBaseKind::AtPosInf: base = rel_base_formal(rc, InfSide::Pos); break;
        }
        RelClassification cls;
        try {
            cls = rel_classes(rc, base, max_len, budget);
        } catch (const BudgetExceeded& e) {
            rep.kind = CorReport::Kind::InconclusiveBudget;
            rep.note = e.what();
            return rep;
        }
        if (cls.unverified_merges > 0) {
            rep.kind = CorReport::Kind::InconclusiveBudget;
            rep.note = "certificate merges left unverified by the move search";
            return rep;
        }
        rep.counts_by_length.push_back(cls.counts_by_length);
        std::multiset<std::pair<int, int>> shape;
        for (const RelClass& c : cls.classes) {
            shape.insert({c.endpoint_kind, c.length});
            if (c.distinguished) dist_kind.push_back(c.endpoint_kind);
        }
        shapes.push_back(std::move(shape));
    }
    if (dist_kind.size() != profiles.size()) {
        rep.note = "a profile lost its distinguished class";
        return rep;
    }
    for (size_t i = 1; i < shapes.size(); ++i) {
        if (shapes[i] != shapes[0] || dist_kind[i] != dist_kind[0] ||
            rep.counts_by_length[i] != rep.counts_by_length[0]) {
            rep.note = "class structure differs between profiles " + std::to_string(i) + " and 0";
            return rep;
        }
    }
    rep.kind = CorReport::Kind::Match;
    rep.note = "classes matched one to one by endpoint type and birth length";
    return rep;
}

}  // namespace morsepi
