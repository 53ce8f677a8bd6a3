#pragma once

// Connectionist temporal classification: the collapse map from frame paths to
// labelings, the log-space forward-backward loss and gradient, a brute-force
// path enumeration oracle and best-path decoding.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cslr/error.hpp"
#include "cslr/matrix.hpp"

namespace cslr {

using ClassId = int;
// Gloss ids only (1..|G|), never blank.
using Labeling = std::vector<ClassId>;
// One extended-vocabulary id per frame.
using Path = std::vector<ClassId>;

inline constexpr ClassId kBlank = 0;

// The gloss set extended with blank. Blank is id 0, glosses are 1..|G| in
// insertion order.
class ExtendedVocabulary {
public:
    ExtendedVocabulary() = default;
    explicit ExtendedVocabulary(std::vector<std::string> glosses) : glosses_(std::move(glosses)) {
        for (std::size_t i = 0; i < glosses_.size(); ++i) {
            if (glosses_[i].empty()) throw InvalidInput("empty gloss symbol");
            if (!index_.emplace(glosses_[i], static_cast<ClassId>(i + 1)).second)
                throw InvalidInput("duplicate gloss symbol: " + glosses_[i]);
        }
    }

    // Glosses named "g1".."gN".
    static ExtendedVocabulary numbered(std::size_t gloss_count) {
        std::vector<std::string> g;
        g.reserve(gloss_count);
        for (std::size_t i = 1; i <= gloss_count; ++i) g.push_back("g" + std::to_string(i));
        return ExtendedVocabulary(std::move(g));
    }

    std::size_t gloss_count() const noexcept { return glosses_.size(); }
    // |G'| = |G| + 1
    std::size_t size() const noexcept { return glosses_.size() + 1; }
    ClassId blank_id() const noexcept { return kBlank; }

    ClassId id(const std::string& symbol) const {
        auto it = index_.find(symbol);
        if (it == index_.end()) throw InvalidInput("unknown gloss symbol: " + symbol);
        return it->second;
    }
    const std::string& symbol(ClassId id) const {
        if (id < 1 || static_cast<std::size_t>(id) > glosses_.size())
            throw InvalidInput("gloss id out of range: " + std::to_string(id));
        return glosses_[static_cast<std::size_t>(id - 1)];
    }
    const std::vector<std::string>& glosses() const noexcept { return glosses_; }

private:
    std::vector<std::string> glosses_;
    std::unordered_map<std::string, ClassId> index_;
};

inline void validate_path(std::span<const ClassId> path, std::size_t num_classes) {
    for (ClassId id : path)
        if (id < 0 || static_cast<std::size_t>(id) >= num_classes)
            throw InvalidInput("path id out of range: " + std::to_string(id));
}

inline void validate_labeling(std::span<const ClassId> labeling, std::size_t num_classes) {
    for (ClassId id : labeling)
        if (id < 1 || static_cast<std::size_t>(id) >= num_classes)
            throw InvalidInput("labeling id out of range: " + std::to_string(id));
}

// B(path): merge runs of identical ids, then drop blanks.
inline Labeling collapse_path(std::span<const ClassId> path, std::size_t num_classes) {
    validate_path(path, num_classes);
    Labeling out;
    ClassId prev = -1;
    for (ClassId id : path) {
        if (id != prev && id != kBlank) out.push_back(id);
        prev = id;
    }
    return out;
}

// Minimum number of frames any path collapsing to `labeling` needs: one per
// token plus a separating blank between each adjacent repeat.
inline std::size_t min_frames_required(std::span<const ClassId> labeling) {
    std::size_t n = labeling.size();
    for (std::size_t i = 1; i < labeling.size(); ++i)
        if (labeling[i] == labeling[i - 1]) ++n;
    return n;
}

inline bool ctc_feasible(std::size_t frames, std::span<const ClassId> labeling) {
    return frames >= min_frames_required(labeling);
}

namespace detail {

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

// log(exp(a) + exp(b)); log-zero is absorbing.
inline double log_add(double a, double b) {
    if (a == kLogZero) return b;
    if (b == kLogZero) return a;
    if (a < b) std::swap(a, b);
    return a + std::log1p(std::exp(b - a));
}

inline void check_logits(const Matrix& logits) {
    if (logits.rows() < 1) throw InvalidInput("logit sequence must have at least one frame");
    if (logits.cols() < 2) throw InvalidInput("logit sequence needs blank plus at least one gloss");
    if (!logits.all_finite()) throw InvalidInput("logit sequence has non-finite entries");
}

// Blank-interleaved label sequence: -, l1, -, l2, ..., lN, -
inline std::vector<ClassId> interleave_blanks(std::span<const ClassId> labeling) {
    std::vector<ClassId> ext(2 * labeling.size() + 1, kBlank);
    for (std::size_t i = 0; i < labeling.size(); ++i) ext[2 * i + 1] = labeling[i];
    return ext;
}

inline void check_instance(const Matrix& logits, std::span<const ClassId> labeling) {
    check_logits(logits);
    validate_labeling(labeling, logits.cols());
    const std::size_t need = min_frames_required(labeling);
    if (logits.rows() < need) throw InfeasibleAlignment(logits.rows(), need);
}

}  // namespace detail

// Row-wise log-softmax with max shift.
inline Matrix log_softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t t = 0; t < logits.rows(); ++t) {
        auto z = logits.row(t);
        const double m = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (double v : z) s += std::exp(v - m);
        const double lse = m + std::log(s);
        for (std::size_t k = 0; k < z.size(); ++k) out(t, k) = z[k] - lse;
    }
    return out;
}

inline Matrix softmax_rows(const Matrix& logits) {
    Matrix out = log_softmax_rows(logits);
    for (double& v : out.data()) v = std::exp(v);
    return out;
}

struct CtcResult {
    double loss = 0.0;  // nats
    Matrix gradient;    // d loss / d logits, T' x |G'|
};

namespace detail {

// alpha(t, s): log prob of all prefixes of length t+1 ending in ext[s].
inline Matrix ctc_alpha(const Matrix& logp, std::span<const ClassId> ext) {
    const std::size_t T = logp.rows(), S = ext.size();
    Matrix alpha(T, S, kLogZero);
    alpha(0, 0) = logp(0, ext[0]);
    if (S > 1) alpha(0, 1) = logp(0, ext[1]);
    for (std::size_t t = 1; t < T; ++t) {
        for (std::size_t s = 0; s < S; ++s) {
            double a = alpha(t - 1, s);
            if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
            if (s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]) a = log_add(a, alpha(t - 1, s - 2));
            alpha(t, s) = a == kLogZero ? kLogZero : a + logp(t, ext[s]);
        }
    }
    return alpha;
}

// beta(t, s): log prob of all suffixes from frame t onward starting in ext[s],
// including the emission at t.
inline Matrix ctc_beta(const Matrix& logp, std::span<const ClassId> ext) {
    const std::size_t T = logp.rows(), S = ext.size();
    Matrix beta(T, S, kLogZero);
    beta(T - 1, S - 1) = logp(T - 1, ext[S - 1]);
    if (S > 1) beta(T - 1, S - 2) = logp(T - 1, ext[S - 2]);
    for (std::size_t t = T - 1; t-- > 0;) {
        for (std::size_t s = 0; s < S; ++s) {
            double b = beta(t + 1, s);
            if (s + 1 < S) b = log_add(b, beta(t + 1, s + 1));
            if (s + 2 < S && ext[s] != kBlank && ext[s] != ext[s + 2]) b = log_add(b, beta(t + 1, s + 2));
            beta(t, s) = b == kLogZero ? kLogZero : b + logp(t, ext[s]);
        }
    }
    return beta;
}

inline double ctc_log_likelihood(const Matrix& alpha) {
    const std::size_t T = alpha.rows(), S = alpha.cols();
    double ll = alpha(T - 1, S - 1);
    if (S > 1) ll = log_add(ll, alpha(T - 1, S - 2));
    return ll;
}

}  // namespace detail

// -log p(labeling | logits), summing over every path that collapses to the
// labeling. Throws InfeasibleAlignment when T' is too short.
inline double ctc_loss(const Matrix& logits, std::span<const ClassId> labeling) {
    detail::check_instance(logits, labeling);
    const auto ext = detail::interleave_blanks(labeling);
    const Matrix logp = log_softmax_rows(logits);
    const double ll = detail::ctc_log_likelihood(detail::ctc_alpha(logp, ext));
    if (!std::isfinite(ll)) throw Divergence("ctc log-likelihood is not finite");
    return -ll;
}

// Loss and its gradient with respect to the logits in one forward-backward
// sweep. gradient(t, k) = softmax(z_t)[k] - posterior occupancy of class k at t.
inline CtcResult ctc_loss_and_gradient(const Matrix& logits, std::span<const ClassId> labeling) {
    detail::check_instance(logits, labeling);
    const auto ext = detail::interleave_blanks(labeling);
    const Matrix logp = log_softmax_rows(logits);
    const Matrix alpha = detail::ctc_alpha(logp, ext);
    const Matrix beta = detail::ctc_beta(logp, ext);
    const double ll = detail::ctc_log_likelihood(alpha);
    if (!std::isfinite(ll)) throw Divergence("ctc log-likelihood is not finite");

    const std::size_t T = logits.rows(), K = logits.cols(), S = ext.size();
    CtcResult r{-ll, Matrix(T, K)};
    std::vector<double> occ(K);
    for (std::size_t t = 0; t < T; ++t) {
        std::fill(occ.begin(), occ.end(), detail::kLogZero);
        for (std::size_t s = 0; s < S; ++s) {
            // alpha and beta both include the emission at t; remove one copy.
            const double ab = alpha(t, s) + beta(t, s);
            if (ab == detail::kLogZero || std::isnan(ab)) continue;
            const auto k = static_cast<std::size_t>(ext[s]);
            occ[k] = detail::log_add(occ[k], ab - logp(t, k));
        }
        for (std::size_t k = 0; k < K; ++k) {
            const double post = occ[k] == detail::kLogZero ? 0.0 : std::exp(occ[k] - ll);
            r.gradient(t, k) = std::exp(logp(t, k)) - post;
        }
    }
    return r;
}

inline Matrix ctc_gradient(const Matrix& logits, std::span<const ClassId> labeling) {
    return ctc_loss_and_gradient(logits, labeling).gradient;
}

// Every path of length `frames` over `num_classes` ids that collapses to
// `labeling`, found by exhaustive enumeration. Independent of the dynamic
// program; used to check it.
inline std::vector<Path> feasible_paths_oracle(std::size_t frames, std::span<const ClassId> labeling,
                                               std::size_t num_classes) {
    if (frames > 12) throw OracleLimit("oracle frame limit is 12, got " + std::to_string(frames));
    if (num_classes < 1) throw InvalidInput("empty vocabulary");
    double total = 1.0;
    for (std::size_t t = 0; t < frames; ++t) total *= static_cast<double>(num_classes);
    if (total > 1e8) throw OracleLimit("oracle path count exceeds 1e8");
    validate_labeling(labeling, num_classes);

    std::vector<Path> out;
    Path path(frames, 0);
    const auto count = static_cast<std::size_t>(total);
    for (std::size_t n = 0; n < count; ++n) {
        std::size_t code = n;
        for (std::size_t t = frames; t-- > 0;) {
            path[t] = static_cast<ClassId>(code % num_classes);
            code /= num_classes;
        }
        const Labeling l = collapse_path(path, num_classes);
        if (std::equal(l.begin(), l.end(), labeling.begin(), labeling.end())) out.push_back(path);
    }
    return out;
}

// Sum over the oracle's paths of the product of per-frame softmax
// probabilities, in linear space.
inline double oracle_labeling_probability(const Matrix& logits, std::span<const ClassId> labeling) {
    detail::check_logits(logits);
    const Matrix p = softmax_rows(logits);
    double total = 0.0;
    for (const Path& path : feasible_paths_oracle(logits.rows(), labeling, logits.cols())) {
        double prod = 1.0;
        for (std::size_t t = 0; t < path.size(); ++t) prod *= p(t, static_cast<std::size_t>(path[t]));
        total += prod;
    }
    return total;
}

// Per-frame argmax, lowest id on ties.
inline Path best_path(const Matrix& logits) {
    detail::check_logits(logits);
    Path path(logits.rows());
    for (std::size_t t = 0; t < logits.rows(); ++t) {
        auto z = logits.row(t);
        path[t] = static_cast<ClassId>(std::max_element(z.begin(), z.end()) - z.begin());
    }
    return path;
}

inline Labeling greedy_decode(const Matrix& logits) {
    return collapse_path(best_path(logits), logits.cols());
}

}  // namespace cslr
