#pragma once

// Word error rate and the prediction-inconsistency metrics between an
// auxiliary and a primary hypothesis.
//
// The three-sentence alignment runs in four steps:
//   1. align (ref, hyp_p)           -> REF_p, HYP_p
//   2. align (ref, hyp_a)           -> REF_a, HYP_a
//   3. align the gapped REF_a, REF_p -> REF*
//   4. re-align hyp_a and hyp_p against REF* and merge the columns.
// Every column of the merged triplet is then scored for each hypothesis as
// correct or an error, which makes
//   errors_p = errors_a + deteriorated - ameliorated
// an identity on integer counts.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "cslr/error.hpp"

namespace cslr {

// None marks a column where both the reference and the hypothesis are empty
// (possible only in a merged triplet).
enum class EditOp { Match, Sub, Del, Ins, None };

inline char op_tag(EditOp op) {
    switch (op) {
        case EditOp::Match: return ' ';
        case EditOp::Sub: return 'S';
        case EditOp::Del: return 'D';
        case EditOp::Ins: return 'I';
        case EditOp::None: return ' ';
    }
    return '?';
}

struct EditCounts {
    std::size_t match = 0, sub = 0, del = 0, ins = 0;

    std::size_t errors() const noexcept { return sub + del + ins; }
    EditCounts& operator+=(const EditCounts& o) {
        match += o.match, sub += o.sub, del += o.del, ins += o.ins;
        return *this;
    }
    friend bool operator==(const EditCounts&, const EditCounts&) = default;
};

template <class Token>
struct AlignedPair {
    std::optional<Token> ref;
    std::optional<Token> hyp;
    EditOp op = EditOp::Match;
};

template <class Token>
struct EditAlignment {
    std::vector<AlignedPair<Token>> columns;
    EditCounts counts;

    std::size_t cost() const noexcept { return counts.errors(); }

    std::vector<std::optional<Token>> ref_row() const {
        std::vector<std::optional<Token>> r;
        for (const auto& c : columns) r.push_back(c.ref);
        return r;
    }
    std::vector<std::optional<Token>> hyp_row() const {
        std::vector<std::optional<Token>> r;
        for (const auto& c : columns) r.push_back(c.hyp);
        return r;
    }
};

template <class Token>
std::vector<Token> degap(const std::vector<std::optional<Token>>& row) {
    std::vector<Token> out;
    for (const auto& v : row)
        if (v) out.push_back(*v);
    return out;
}

namespace detail {

inline constexpr std::size_t kForbidden = std::numeric_limits<std::size_t>::max() / 4;

inline EditOp classify(bool has_ref, bool has_hyp, bool equal) {
    if (has_ref && has_hyp) return equal ? EditOp::Match : EditOp::Sub;
    if (has_ref) return EditOp::Del;
    if (has_hyp) return EditOp::Ins;
    return EditOp::None;
}

}  // namespace detail

// Minimum unit-cost alignment of hyp to ref. Backtrace preference, from the
// end: match, substitution, deletion, insertion.
template <class Token>
EditAlignment<Token> edit_align(std::span<const Token> ref, std::span<const Token> hyp) {
    const std::size_t n = ref.size(), m = hyp.size();
    std::vector<std::size_t> D((n + 1) * (m + 1));
    auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return D[i * (m + 1) + j]; };
    for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
    for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
        }

    EditAlignment<Token> a;
    std::size_t i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && at(i - 1, j - 1) == at(i, j)) {
            a.columns.push_back({ref[i - 1], hyp[j - 1], EditOp::Match});
            ++a.counts.match, --i, --j;
        } else if (i > 0 && j > 0 && at(i - 1, j - 1) + 1 == at(i, j)) {
            a.columns.push_back({ref[i - 1], hyp[j - 1], EditOp::Sub});
            ++a.counts.sub, --i, --j;
        } else if (i > 0 && at(i - 1, j) + 1 == at(i, j)) {
            a.columns.push_back({ref[i - 1], std::nullopt, EditOp::Del});
            ++a.counts.del, --i;
        } else {
            a.columns.push_back({std::nullopt, hyp[j - 1], EditOp::Ins});
            ++a.counts.ins, --j;
        }
    }
    std::reverse(a.columns.begin(), a.columns.end());
    return a;
}

template <class Token>
EditAlignment<Token> edit_align(const std::vector<Token>& ref, const std::vector<Token>& hyp) {
    return edit_align<Token>(std::span<const Token>(ref), std::span<const Token>(hyp));
}

// errors / reference_length. An empty reference gives 0 when there are no
// errors and +infinity otherwise.
inline double error_rate(std::size_t errors, std::size_t reference_length) {
    if (reference_length == 0) return errors == 0 ? 0.0 : std::numeric_limits<double>::infinity();
    return static_cast<double>(errors) / static_cast<double>(reference_length);
}

struct WerResult {
    EditCounts counts;
    std::size_t reference_length = 0;
    double rate = 0.0;
    bool infinite() const noexcept { return rate == std::numeric_limits<double>::infinity(); }
};

template <class Token>
WerResult wer(const std::vector<Token>& ref, const std::vector<Token>& hyp) {
    const auto a = edit_align(ref, hyp);
    return {a.counts, ref.size(), error_rate(a.counts.errors(), ref.size())};
}

// ---------------------------------------------------------------------------
// Three-sentence alignment

template <class Token>
struct TripletColumn {
    std::optional<Token> ref, hyp_a, hyp_p;
    EditOp op_a = EditOp::None, op_p = EditOp::None;

    bool a_correct() const { return op_a == EditOp::Match || op_a == EditOp::None; }
    bool p_correct() const { return op_p == EditOp::Match || op_p == EditOp::None; }
};

template <class Token>
struct AlignmentTriplet {
    std::vector<TripletColumn<Token>> columns;

    std::vector<std::optional<Token>> ref_row() const { return row(&TripletColumn<Token>::ref); }
    std::vector<std::optional<Token>> hyp_a_row() const { return row(&TripletColumn<Token>::hyp_a); }
    std::vector<std::optional<Token>> hyp_p_row() const { return row(&TripletColumn<Token>::hyp_p); }

private:
    std::vector<std::optional<Token>> row(std::optional<Token> TripletColumn<Token>::*m) const {
        std::vector<std::optional<Token>> r;
        for (const auto& c : columns) r.push_back(c.*m);
        return r;
    }
};

namespace detail {

// Step 3: merge two gapped copies of the same reference. Tokens must pair
// with the identical token and every gap stands alone at cost 1, so no
// column holds a gap from both references or a token against a gap.
template <class Token>
std::vector<std::optional<Token>> merge_gapped_references(const std::vector<std::optional<Token>>& ra,
                                                          const std::vector<std::optional<Token>>& rp) {
    const std::size_t n = ra.size(), m = rp.size();
    std::vector<std::size_t> D((n + 1) * (m + 1), kForbidden);
    auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return D[i * (m + 1) + j]; };
    auto skip_a = [&](std::size_t i) { return ra[i] ? kForbidden : 1; };
    auto skip_p = [&](std::size_t j) { return rp[j] ? kForbidden : 1; };
    auto pair = [&](std::size_t i, std::size_t j) { return ra[i] && ra[i] == rp[j] ? 0 : kForbidden; };
    auto add = [](std::size_t a, std::size_t b) { return (a >= kForbidden || b >= kForbidden) ? kForbidden : a + b; };
    at(0, 0) = 0;
    for (std::size_t i = 0; i <= n; ++i)
        for (std::size_t j = 0; j <= m; ++j) {
            if (i == 0 && j == 0) continue;
            std::size_t best = kForbidden;
            if (i > 0 && j > 0) best = std::min(best, add(at(i - 1, j - 1), pair(i - 1, j - 1)));
            if (i > 0) best = std::min(best, add(at(i - 1, j), skip_a(i - 1)));
            if (j > 0) best = std::min(best, add(at(i, j - 1), skip_p(j - 1)));
            at(i, j) = best;
        }
    if (at(n, m) >= kForbidden) throw InvalidInput("gapped references do not share the same tokens");

    std::vector<std::optional<Token>> merged;
    std::size_t i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && pair(i - 1, j - 1) == 0 && at(i - 1, j - 1) == at(i, j)) {
            merged.push_back(ra[i - 1]);
            --i, --j;
        } else if (i > 0 && skip_a(i - 1) == 1 && at(i - 1, j) + 1 == at(i, j)) {
            merged.push_back(std::nullopt);
            --i;
        } else {
            merged.push_back(std::nullopt);
            --j;
        }
    }
    std::reverse(merged.begin(), merged.end());
    return merged;
}

// Step 4 for one hypothesis: every REF* slot is consumed exactly once; hyp
// tokens fill token slots (match/sub) or gap slots (insertion), or open a
// new insertion column. Result: the hyp entry per REF* slot plus the tokens
// inserted before each slot (index == size means after the last slot).
template <class Token>
struct Projection {
    std::vector<std::optional<Token>> slot;
    std::vector<std::vector<Token>> inserted_before;
};

template <class Token>
Projection<Token> realign_to_reference(const std::vector<std::optional<Token>>& ref_star,
                                       const std::vector<Token>& hyp) {
    const std::size_t n = ref_star.size(), m = hyp.size();
    std::vector<std::size_t> D((n + 1) * (m + 1));
    auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return D[i * (m + 1) + j]; };
    auto fill_cost = [&](std::size_t i, std::size_t j) -> std::size_t {
        return ref_star[i] && *ref_star[i] == hyp[j] ? 0 : 1;
    };
    auto empty_cost = [&](std::size_t i) -> std::size_t { return ref_star[i] ? 1 : 0; };
    at(0, 0) = 0;
    for (std::size_t i = 1; i <= n; ++i) at(i, 0) = at(i - 1, 0) + empty_cost(i - 1);
    for (std::size_t j = 1; j <= m; ++j) at(0, j) = j;
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j)
            at(i, j) = std::min({at(i - 1, j - 1) + fill_cost(i - 1, j - 1), at(i - 1, j) + empty_cost(i - 1),
                                 at(i, j - 1) + 1});

    Projection<Token> p;
    p.slot.assign(n, std::nullopt);
    p.inserted_before.assign(n + 1, {});
    std::size_t i = n, j = m;
    while (i > 0 || j > 0) {
        // Diagonal first: match, substitution or filling a gap slot, which
        // are mutually exclusive for a given cell.
        if (i > 0 && j > 0 && at(i - 1, j - 1) + fill_cost(i - 1, j - 1) == at(i, j)) {
            p.slot[i - 1] = hyp[j - 1];
            --i, --j;
        } else if (i > 0 && at(i - 1, j) + empty_cost(i - 1) == at(i, j)) {
            --i;
        } else {
            p.inserted_before[i].push_back(hyp[j - 1]);
            --j;
        }
    }
    for (auto& v : p.inserted_before) std::reverse(v.begin(), v.end());
    return p;
}

}  // namespace detail

template <class Token>
AlignmentTriplet<Token> align_triplet(const std::vector<Token>& ref, const std::vector<Token>& hyp_a,
                                      const std::vector<Token>& hyp_p) {
    const auto ap = edit_align(ref, hyp_p);
    const auto aa = edit_align(ref, hyp_a);
    const auto ref_star = detail::merge_gapped_references<Token>(aa.ref_row(), ap.ref_row());
    const auto pa = detail::realign_to_reference(ref_star, hyp_a);
    const auto pp = detail::realign_to_reference(ref_star, hyp_p);

    AlignmentTriplet<Token> t;
    auto push = [&](std::optional<Token> r, std::optional<Token> a, std::optional<Token> p) {
        if (!r && !a && !p) return;  // a REF* gap slot neither hypothesis re-used
        TripletColumn<Token> c{r, a, p, EditOp::None, EditOp::None};
        c.op_a = detail::classify(r.has_value(), a.has_value(), r && a && *r == *a);
        c.op_p = detail::classify(r.has_value(), p.has_value(), r && p && *r == *p);
        t.columns.push_back(std::move(c));
    };
    for (std::size_t k = 0; k <= ref_star.size(); ++k) {
        for (const auto& tok : pa.inserted_before[k]) push(std::nullopt, tok, std::nullopt);
        for (const auto& tok : pp.inserted_before[k]) push(std::nullopt, std::nullopt, tok);
        if (k < ref_star.size()) push(ref_star[k], pa.slot[k], pp.slot[k]);
    }
    return t;
}

// Integer counts behind the triplet rates. `deteriorated`: columns correct for
// the auxiliary hypothesis and wrong for the primary; `ameliorated`: the
// reverse.
struct TripletCounts {
    std::size_t reference_length = 0;
    std::size_t errors_a = 0, errors_p = 0;
    std::size_t deteriorated = 0, ameliorated = 0;
    EditCounts ops_a, ops_p;

    bool identity_holds() const noexcept { return errors_p + ameliorated == errors_a + deteriorated; }

    TripletCounts& operator+=(const TripletCounts& o) {
        reference_length += o.reference_length;
        errors_a += o.errors_a, errors_p += o.errors_p;
        deteriorated += o.deteriorated, ameliorated += o.ameliorated;
        ops_a += o.ops_a, ops_p += o.ops_p;
        return *this;
    }
    friend bool operator==(const TripletCounts&, const TripletCounts&) = default;
};

struct TripletScores {
    TripletCounts counts;
    double wdr = 0.0, war = 0.0, wer_star_a = 0.0, wer_star_p = 0.0;
};

inline TripletScores scores_from_counts(const TripletCounts& c) {
    return {c, error_rate(c.deteriorated, c.reference_length), error_rate(c.ameliorated, c.reference_length),
            error_rate(c.errors_a, c.reference_length), error_rate(c.errors_p, c.reference_length)};
}

template <class Token>
TripletScores wdr_war(const AlignmentTriplet<Token>& triplet) {
    TripletCounts c;
    auto tally = [](EditCounts& e, EditOp op) {
        switch (op) {
            case EditOp::Match: ++e.match; break;
            case EditOp::Sub: ++e.sub; break;
            case EditOp::Del: ++e.del; break;
            case EditOp::Ins: ++e.ins; break;
            case EditOp::None: break;
        }
    };
    for (const auto& col : triplet.columns) {
        if (col.ref) ++c.reference_length;
        const bool ok_a = col.a_correct(), ok_p = col.p_correct();
        c.errors_a += ok_a ? 0 : 1;
        c.errors_p += ok_p ? 0 : 1;
        if (ok_a && !ok_p) ++c.deteriorated;
        if (!ok_a && ok_p) ++c.ameliorated;
        tally(c.ops_a, col.op_a);
        tally(c.ops_p, col.op_p);
    }
    return scores_from_counts(c);
}

// Fixed-width text rendering: one row each for REF*, HYP*_a and HYP*_p, an
// op-tag row under each hypothesis and a marker row (- deteriorated,
// + ameliorated).
template <class Token>
std::string render_triplet(const AlignmentTriplet<Token>& t, const std::function<std::string(const Token&)>& fmt) {
    std::vector<std::string> rows[6];
    for (const auto& c : t.columns) {
        auto cell = [&](const std::optional<Token>& v) { return v ? fmt(*v) : std::string("***"); };
        std::string r = cell(c.ref), a = cell(c.hyp_a), p = cell(c.hyp_p);
        std::string ta(1, op_tag(c.op_a)), tp(1, op_tag(c.op_p));
        std::string mark = c.a_correct() && !c.p_correct() ? "-" : (!c.a_correct() && c.p_correct() ? "+" : "");
        const std::size_t w = std::max({r.size(), a.size(), p.size()});
        for (auto* s : {&r, &a, &p, &ta, &tp, &mark}) s->resize(w, ' ');
        rows[0].push_back(r), rows[1].push_back(a), rows[2].push_back(ta);
        rows[3].push_back(p), rows[4].push_back(tp), rows[5].push_back(mark);
    }
    static const char* labels[6] = {"REF*  : ", "HYP*_a: ", "        ", "HYP*_p: ", "        ", "WDR/AR: "};
    std::ostringstream os;
    for (int r = 0; r < 6; ++r) {
        std::string line = labels[r];
        for (std::size_t k = 0; k < rows[r].size(); ++k) line += (k ? " " : "") + rows[r][k];
        while (!line.empty() && line.back() == ' ') line.pop_back();
        os << line << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Corpus aggregation

struct SentenceMetrics {
    std::string id;
    std::size_t reference_length = 0;
    EditCounts wer_a, wer_p;  // plain two-way alignments
    TripletCounts triplet;
};

struct MetricsReport {
    static constexpr int kSchemaVersion = 1;

    std::vector<SentenceMetrics> sentences;
    std::size_t reference_length = 0;
    EditCounts wer_a_counts, wer_p_counts;
    TripletCounts triplet;

    double wer_a() const { return error_rate(wer_a_counts.errors(), reference_length); }
    double wer_p() const { return error_rate(wer_p_counts.errors(), reference_length); }
    TripletScores scores() const { return scores_from_counts(triplet); }
};

template <class Token>
SentenceMetrics score_sentence(std::string id, const std::vector<Token>& ref, const std::vector<Token>& hyp_a,
                               const std::vector<Token>& hyp_p) {
    SentenceMetrics s;
    s.id = std::move(id);
    s.reference_length = ref.size();
    s.wer_a = edit_align(ref, hyp_a).counts;
    s.wer_p = edit_align(ref, hyp_p).counts;
    s.triplet = wdr_war(align_triplet(ref, hyp_a, hyp_p)).counts;
    return s;
}

// Corpus rates are total counts over total reference tokens.
inline MetricsReport corpus_report(std::vector<SentenceMetrics> sentences) {
    if (sentences.empty()) throw InvalidInput("corpus_report: empty corpus");
    MetricsReport r;
    for (const auto& s : sentences) {
        r.reference_length += s.reference_length;
        r.wer_a_counts += s.wer_a;
        r.wer_p_counts += s.wer_p;
        r.triplet += s.triplet;
    }
    r.sentences = std::move(sentences);
    return r;
}

template <class Token>
struct ScoringItem {
    std::string id;
    std::vector<Token> ref, hyp_a, hyp_p;
};

template <class Token>
MetricsReport corpus_report(const std::vector<ScoringItem<Token>>& items) {
    std::vector<SentenceMetrics> rows;
    rows.reserve(items.size());
    for (const auto& it : items) rows.push_back(score_sentence(it.id, it.ref, it.hyp_a, it.hyp_p));
    return corpus_report(std::move(rows));
}

}  // namespace cslr
