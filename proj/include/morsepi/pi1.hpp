#pragma once

// Group layer over the combinatorial complex: loops and free reduction,
// presentations of the Morse fundamental group, abelianization certificates,
// a bounded word-problem search with replayable witnesses, and the disk
// gluing calculus.
//
// A presentation kills a BFS spanning tree of the (minima, steps) graph, so
// its generators are the non-tree steps and disk relators are boundary words
// with tree letters dropped. The word search inserts relator variants and
// freely reduces; Unknown is an honest third verdict when the budget runs
// out.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "morsepi/intlat.hpp"
#include "morsepi/mscomplex.hpp"

namespace morsepi {

struct Pi1Error : std::runtime_error {
    explicit Pi1Error(const std::string& m) : std::runtime_error(m) {}
};

struct NotConsecutive : Pi1Error {
    int position;
    NotConsecutive(int pos, const std::string& m) : Pi1Error(m), position(pos) {}
};

struct DisconnectedComplex : Pi1Error {
    explicit DisconnectedComplex(const std::string& m) : Pi1Error(m) {}
};

struct NotDiskLike : Pi1Error {
    explicit NotDiskLike(const std::string& m) : Pi1Error(m) {}
};

inline Word invert(const Word& w) {
    Word out;
    out.reserve(w.size());
    for (auto it = w.rbegin(); it != w.rend(); ++it) out.push_back({it->step, -it->sign});
    return out;
}

inline Word free_reduce(const Word& w) {
    Word out;
    for (const SignedStep& s : w) {
        if (!out.empty() && out.back().step == s.step && out.back().sign == -s.sign)
            out.pop_back();
        else
            out.push_back(s);
    }
    return out;
}

// tail/head vertex of a letter travelling a step forwards or backwards
inline int letter_tail(const Step& s, int sign) { return sign > 0 ? s.start : s.end; }
inline int letter_head(const Step& s, int sign) { return sign > 0 ? s.end : s.start; }

inline void check_consecutive(const Word& w, const MorseComplexData& data) {
    for (size_t i = 0; i + 1 < w.size(); ++i) {
        const Step& a = data.steps[static_cast<size_t>(w[i].step)];
        const Step& b = data.steps[static_cast<size_t>(w[i + 1].step)];
        if (letter_head(a, w[i].sign) != letter_tail(b, w[i + 1].sign))
            throw NotConsecutive(static_cast<int>(i + 1),
                                 "word is not consecutive at position " + std::to_string(i + 1));
    }
}

struct Presentation {
    std::vector<int> generators;  // non-tree step ids, ascending
    std::vector<Word> relators;   // freely reduced, non-empty, letters are generator step ids
    std::vector<int> tree;        // tree step ids
    int base = -1;

    int gen_index(int step_id) const {
        auto it = std::lower_bound(generators.begin(), generators.end(), step_id);
        if (it == generators.end() || *it != step_id) return -1;
        return static_cast<int>(it - generators.begin());
    }
};

// Drop tree letters (they rewrite to the identity) and freely reduce.
inline Word rewrite_to_generators(const Presentation& p, const Word& w) {
    Word kept;
    for (const SignedStep& s : w)
        if (p.gen_index(s.step) >= 0) kept.push_back(s);
    return free_reduce(kept);
}

inline Presentation presentation(const MorseComplexData& data) {
    Presentation p;
    p.base = data.base;
    std::set<int> visited{data.base};
    std::set<int> in_tree;
    std::deque<int> queue{data.base};
    while (!queue.empty()) {
        int v = queue.front();
        queue.pop_front();
        for (const Step& s : data.steps) {
            if (in_tree.count(s.id)) continue;
            int other = -1;
            if (s.start == v && !visited.count(s.end)) other = s.end;
            if (s.end == v && !visited.count(s.start)) other = s.start;
            if (other < 0) continue;
            in_tree.insert(s.id);
            visited.insert(other);
            queue.push_back(other);
        }
    }
    for (const CriticalPoint& cp : data.cps)
        if (cp.index == 0 && !visited.count(cp.id))
            throw DisconnectedComplex("minimum " + std::to_string(cp.id) +
                                      " is not reachable from the base point");
    p.tree.assign(in_tree.begin(), in_tree.end());
    for (const Step& s : data.steps)
        if (!in_tree.count(s.id)) p.generators.push_back(s.id);
    for (const DiskBoundary& d : data.disks) {
        Word r = rewrite_to_generators(p, d.word);
        if (!r.empty()) p.relators.push_back(r);
    }
    return p;
}

namespace detail {

inline std::string gen_name(const Presentation& p, int step_id) {
    int gi = p.gen_index(step_id);
    if (p.generators.size() <= 26) return std::string(1, static_cast<char>('a' + gi));
    return "g" + std::to_string(gi);
}

}  // namespace detail

inline std::string to_text(const Presentation& p) {
    std::string gens, rels;
    for (size_t i = 0; i < p.generators.size(); ++i) {
        if (i) gens += ", ";
        gens += detail::gen_name(p, p.generators[i]);
    }
    for (size_t i = 0; i < p.relators.size(); ++i) {
        if (i) rels += ", ";
        for (size_t j = 0; j < p.relators[i].size(); ++j) {
            if (j) rels += " ";
            rels += detail::gen_name(p, p.relators[i][j].step);
            if (p.relators[i][j].sign < 0) rels += "^-1";
        }
    }
    std::string out = "<";
    if (!gens.empty()) out += " " + gens;
    out += " |";
    if (!rels.empty()) out += " " + rels;
    out += " >";
    return out;
}

// Word of tree steps joining two minima; empty when they coincide.
inline Word tree_path(const MorseComplexData& data, const Presentation& p, int from, int to) {
    if (from == to) return {};
    std::map<int, SignedStep> parent;  // vertex -> letter arriving there from the tree search
    std::map<int, int> prev;
    std::deque<int> queue{from};
    std::set<int> visited{from};
    while (!queue.empty() && !visited.count(to)) {
        int v = queue.front();
        queue.pop_front();
        for (int sid : p.tree) {
            const Step& s = data.steps[static_cast<size_t>(sid)];
            int other = -1, sign = 0;
            if (s.start == v && !visited.count(s.end)) {
                other = s.end;
                sign = 1;
            } else if (s.end == v && !visited.count(s.start)) {
                other = s.start;
                sign = -1;
            }
            if (other < 0) continue;
            visited.insert(other);
            parent[other] = {sid, sign};
            prev[other] = v;
            queue.push_back(other);
        }
    }
    if (!visited.count(to)) throw Pi1Error("minima are not joined by the spanning tree");
    Word out;
    for (int at = to; at != from; at = prev[at]) out.push_back(parent[at]);
    std::reverse(out.begin(), out.end());
    return out;
}

struct Abelianization {
    int rank = 0;
    std::vector<std::int64_t> torsion;  // invariant factors > 1
    int gens = 0;
    IMat u;                            // g x g: maps exponent vectors to Smith coordinates
    std::vector<std::int64_t> factor;  // per Smith coordinate; 0 marks a free summand
};

inline Abelianization abelianization(const Presentation& p) {
    Abelianization ab;
    ab.gens = static_cast<int>(p.generators.size());
    const Eigen::Index g = ab.gens, r = static_cast<Eigen::Index>(p.relators.size());
    IMat a = IMat::Zero(g, r);
    for (Eigen::Index k = 0; k < r; ++k)
        for (const SignedStep& s : p.relators[static_cast<size_t>(k)])
            a(p.gen_index(s.step), k) += s.sign;
    SmithResult snf = smith_normal_form(a);
    ab.u = std::move(snf.u);
    ab.factor.assign(static_cast<size_t>(g), 0);
    for (Eigen::Index t = 0; t < std::min(g, r); ++t)
        if (snf.d(t, t) != 0) ab.factor[static_cast<size_t>(t)] = snf.d(t, t);
    for (std::int64_t f : ab.factor) {
        if (f == 0) ++ab.rank;
        if (f > 1) ab.torsion.push_back(f);
    }
    return ab;
}

// Image of a loop in H1, reduced to canonical coordinates; zero iff the loop
// abelianizes to the identity.
inline std::vector<std::int64_t> ab_image(const Abelianization& ab, const Presentation& p,
                                          const Word& w) {
    IVecN x = IVecN::Zero(ab.gens);
    for (const SignedStep& s : w) {
        int gi = p.gen_index(s.step);
        if (gi >= 0) x[gi] += s.sign;
    }
    IVecN z = ab.u * x;
    std::vector<std::int64_t> out(static_cast<size_t>(ab.gens));
    for (int i = 0; i < ab.gens; ++i) {
        std::int64_t f = ab.factor[static_cast<size_t>(i)];
        out[static_cast<size_t>(i)] = f == 0 ? z[i] : ((z[i] % f) + f) % f;
    }
    return out;
}

struct SearchBudget {
    int max_len = 64;
    std::int64_t max_states = 100000;
};

struct TrivialityVerdict {
    enum class Kind { Trivial, Nontrivial, Unknown };

    // One rewriting move: the first `consumed` letters of `relator` are
    // matched and removed at `position`, and the inverse of the remainder is
    // spliced in; the word is then freely reduced. consumed = 0 is a plain
    // insertion.
    struct Move {
        int position = 0;
        Word relator;
        int consumed = 0;
    };

    Kind kind = Kind::Unknown;
    std::vector<Move> witness;                 // Trivial: replays to the empty word
    std::vector<std::int64_t> certificate;     // Nontrivial: nonzero H1 image
    std::int64_t states = 0;                   // Unknown: budget spent
};

namespace detail {

// compact encoding of a generator-index word for hashing and ordering
inline std::string encode(const Word& w, const Presentation& p) {
    std::string s;
    s.reserve(w.size());
    for (const SignedStep& l : w)
        s.push_back(static_cast<char>(1 + 2 * p.gen_index(l.step) + (l.sign < 0 ? 1 : 0)));
    return s;
}

inline Word decode(const std::string& s, const Presentation& p) {
    Word w;
    for (char c : s) {
        int code = static_cast<int>(c) - 1;
        w.push_back({p.generators[static_cast<size_t>(code / 2)], code % 2 ? -1 : 1});
    }
    return w;
}

inline std::vector<Word> relator_variants(const Presentation& p) {
    std::set<std::string> seen;
    std::vector<Word> out;
    for (const Word& r : p.relators)
        for (const Word& base : {r, invert(r)})
            for (size_t k = 0; k < base.size(); ++k) {
                Word rot(base.begin() + static_cast<long>(k), base.end());
                rot.insert(rot.end(), base.begin(), base.begin() + static_cast<long>(k));
                std::string enc = encode(rot, p);
                if (seen.insert(enc).second) out.push_back(rot);
            }
    std::sort(out.begin(), out.end(), [&](const Word& a, const Word& b) {
        return encode(a, p) < encode(b, p);
    });
    return out;
}

}  // namespace detail

inline bool verify_witness(const Word& w, const Presentation& p,
                           const std::vector<TrivialityVerdict::Move>& witness) {
    Word cur = free_reduce(rewrite_to_generators(p, w));
    for (const auto& mv : witness) {
        if (mv.position < 0 || mv.consumed < 0 ||
            mv.consumed > static_cast<int>(mv.relator.size()) ||
            mv.position + mv.consumed > static_cast<int>(cur.size()))
            return false;
        for (int k = 0; k < mv.consumed; ++k)
            if (!(cur[static_cast<size_t>(mv.position + k)] ==
                  mv.relator[static_cast<size_t>(k)]))
                return false;
        Word rest(mv.relator.begin() + mv.consumed, mv.relator.end());
        Word inv = invert(rest);
        Word next(cur.begin(), cur.begin() + mv.position);
        next.insert(next.end(), inv.begin(), inv.end());
        next.insert(next.end(), cur.begin() + mv.position + mv.consumed, cur.end());
        cur = free_reduce(next);
    }
    return cur.empty();
}

inline TrivialityVerdict is_trivial(const Word& w, const Presentation& p,
                                    const SearchBudget& budget = {}) {
    TrivialityVerdict out;
    Word w0 = free_reduce(rewrite_to_generators(p, w));
    if (w0.empty()) {
        out.kind = TrivialityVerdict::Kind::Trivial;
        return out;
    }
    Abelianization ab = abelianization(p);
    std::vector<std::int64_t> cert = ab_image(ab, p, w0);
    if (std::any_of(cert.begin(), cert.end(), [](std::int64_t c) { return c != 0; })) {
        out.kind = TrivialityVerdict::Kind::Nontrivial;
        out.certificate = std::move(cert);
        return out;
    }
    std::vector<Word> variants = detail::relator_variants(p);

    struct Parent {
        std::string from;
        int position;
        int variant;
        int consumed;
    };
    // shortest-first expansion tunnels through length plateaus that defeat
    // plain FIFO order; the seq tie-break keeps it deterministic
    struct Entry {
        size_t len;
        std::int64_t seq;
        std::string enc;
        bool operator>(const Entry& o) const {
            return len != o.len ? len > o.len : seq > o.seq;
        }
    };
    std::map<std::string, Parent> seen;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> frontier;
    std::string start = detail::encode(w0, p);
    seen[start] = {start, -1, -1, -1};
    std::int64_t seq = 0;
    frontier.push({start.size(), seq++, start});
    std::int64_t states = 1;
    while (!frontier.empty() && states < budget.max_states) {
        Word u = detail::decode(frontier.top().enc, p);
        std::string cur = frontier.top().enc;
        frontier.pop();
        for (size_t vi = 0; vi < variants.size() && states < budget.max_states; ++vi) {
            const Word& r = variants[vi];
            for (int consumed = 0; consumed <= static_cast<int>(r.size()); ++consumed) {
                for (int pos = 0; pos + consumed <= static_cast<int>(u.size()); ++pos) {
                    bool match = true;
                    for (int k = 0; k < consumed && match; ++k)
                        match = u[static_cast<size_t>(pos + k)] == r[static_cast<size_t>(k)];
                    if (!match) continue;
                    Word rest(r.begin() + consumed, r.end());
                    Word inv = invert(rest);
                    Word cand(u.begin(), u.begin() + pos);
                    cand.insert(cand.end(), inv.begin(), inv.end());
                    cand.insert(cand.end(), u.begin() + pos + consumed, u.end());
                    cand = free_reduce(cand);
                    if (static_cast<int>(cand.size()) > budget.max_len) continue;
                    std::string enc = detail::encode(cand, p);
                    if (seen.count(enc)) continue;
                    seen[enc] = {cur, pos, static_cast<int>(vi), consumed};
                    if (cand.empty()) {
                        out.kind = TrivialityVerdict::Kind::Trivial;
                        for (std::string at = enc; at != start;) {
                            const Parent& par = seen[at];
                            out.witness.push_back({par.position,
                                                   variants[static_cast<size_t>(par.variant)],
                                                   par.consumed});
                            at = par.from;
                        }
                        std::reverse(out.witness.begin(), out.witness.end());
                        out.states = states;
                        return out;
                    }
                    ++states;
                    if (states >= budget.max_states) break;
                    frontier.push({enc.size(), seq++, enc});
                }
                if (states >= budget.max_states) break;
            }
        }
    }
    out.kind = TrivialityVerdict::Kind::Unknown;
    out.states = states;
    return out;
}

namespace detail {

// Positions of letters in w whose step id lies in shared; they must form one
// contiguous cyclic run. Returns run start and length, or throws.
inline std::pair<size_t, size_t> shared_run(const Word& w, const std::set<int>& shared) {
    std::vector<char> mark(w.size(), 0);
    size_t count = 0;
    for (size_t i = 0; i < w.size(); ++i)
        if (shared.count(w[i].step)) {
            mark[i] = 1;
            ++count;
        }
    if (count == 0) throw NotDiskLike("glued disks share no boundary step");
    if (count == w.size()) return {0, count};
    // rotate to a position where the run can start
    size_t start = 0;
    while (!(mark[start] && !mark[(start + w.size() - 1) % w.size()])) {
        ++start;
        if (start == w.size()) throw NotDiskLike("shared boundary is not a single segment");
    }
    for (size_t k = 0; k < count; ++k)
        if (!mark[(start + k) % w.size()])
            throw NotDiskLike("shared boundary is not a single segment");
    return {start, count};
}

inline Word rotate(const Word& w, size_t start) {
    Word out(w.begin() + static_cast<long>(start), w.end());
    out.insert(out.end(), w.begin(), w.begin() + static_cast<long>(start));
    return out;
}

}  // namespace detail

// Boundary word of a union of disks, glued one at a time. Each new disk must
// meet the current union in a single consecutive boundary segment traversed
// the opposite way (the disk-like hypothesis); the segment cancels and the
// remainder is spliced in. The final loop, conjugated to the base point, is
// then checked for triviality in the presentation.
inline TrivialityVerdict glue_disks(const MorseComplexData& data, const std::vector<int>& disk_ids,
                                    const Word& conjugator, const SearchBudget& budget = {}) {
    if (disk_ids.empty()) throw Pi1Error("glue_disks needs at least one disk");
    auto word_of = [&](int id) -> const Word& {
        for (const DiskBoundary& d : data.disks)
            if (d.of == id) return d.word;
        throw Pi1Error("no disk with id " + std::to_string(id));
    };
    Word b = word_of(disk_ids[0]);
    for (size_t k = 1; k < disk_ids.size(); ++k) {
        Word w = word_of(disk_ids[static_cast<size_t>(k)]);
        std::set<int> in_b, shared;
        for (const SignedStep& s : b) in_b.insert(s.step);
        for (const SignedStep& s : w)
            if (in_b.count(s.step)) shared.insert(s.step);
        auto [bs, bl] = detail::shared_run(b, shared);
        auto [ws, wl] = detail::shared_run(w, shared);
        if (bl != wl) throw NotDiskLike("shared boundary segments have different lengths");
        if (bl == b.size() || wl == w.size())
            throw NotDiskLike("a disk may not be glued along its whole boundary");
        Word br = detail::rotate(b, (bs + bl) % b.size());  // run is the suffix
        Word wr = detail::rotate(w, (ws + wl) % w.size());  // run is the suffix
        Word run_b(br.end() - static_cast<long>(bl), br.end());
        Word run_w(wr.end() - static_cast<long>(wl), wr.end());
        if (!(run_b == invert(run_w)))
            throw NotDiskLike("shared boundary segment is not traversed oppositely");
        b.assign(br.begin(), br.end() - static_cast<long>(bl));
        b.insert(b.end(), wr.begin(), wr.end() - static_cast<long>(wl));
    }
    check_consecutive(b, data);
    Word loop = conjugator;
    loop.insert(loop.end(), b.begin(), b.end());
    Word inv = invert(conjugator);
    loop.insert(loop.end(), inv.begin(), inv.end());
    check_consecutive(loop, data);
    if (!loop.empty()) {
        const Step& first = data.steps[static_cast<size_t>(loop.front().step)];
        const Step& last = data.steps[static_cast<size_t>(loop.back().step)];
        if (letter_tail(first, loop.front().sign) != data.base ||
            letter_head(last, loop.back().sign) != data.base)
            throw Pi1Error("glued boundary is not a loop at the base point");
    }
    return is_trivial(loop, presentation(data), budget);
}

}  // namespace morsepi
