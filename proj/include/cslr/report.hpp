#pragma once

// JSON form of MetricsReport, schema "cslr-metrics" version 1.
//
// {
//   "schema": "cslr-metrics", "version": 1,
//   "reference_tokens": N,
//   "wer_a": {"rate", "sub", "del", "ins", "match"},   plain alignment
//   "wer_p": {...},
//   "wer_star_a", "wer_star_p", "wdr", "war", "delta_wer_star",
//   "counts": {"errors_a", "errors_p", "deteriorated", "ameliorated"},
//   "identity_holds": bool,
//   "sentences": [{"id", "reference_tokens", "wer_a", "wer_p",
//                  "wer_star_a", "wer_star_p", "wdr", "war", "counts"}]
// }
// Rates are fractions, not percentages. An infinite rate (errors against an
// empty reference) is written as null.

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "cslr/seqmetrics.hpp"

namespace cslr {

inline constexpr const char* kMetricsSchema = "cslr-metrics";

namespace detail {

inline nlohmann::json rate_json(double r) { return std::isfinite(r) ? nlohmann::json(r) : nlohmann::json(nullptr); }

inline nlohmann::json wer_json(const EditCounts& c, std::size_t ref_len) {
    return {{"rate", rate_json(error_rate(c.errors(), ref_len))},
            {"sub", c.sub},
            {"del", c.del},
            {"ins", c.ins},
            {"match", c.match}};
}

inline nlohmann::json triplet_json(const TripletCounts& c) {
    return {{"errors_a", c.errors_a},
            {"errors_p", c.errors_p},
            {"deteriorated", c.deteriorated},
            {"ameliorated", c.ameliorated}};
}

}  // namespace detail

inline nlohmann::json report_to_json(const MetricsReport& r) {
    const auto s = r.scores();
    nlohmann::json j = {{"schema", kMetricsSchema},
                        {"version", MetricsReport::kSchemaVersion},
                        {"reference_tokens", r.reference_length},
                        {"wer_a", detail::wer_json(r.wer_a_counts, r.reference_length)},
                        {"wer_p", detail::wer_json(r.wer_p_counts, r.reference_length)},
                        {"wer_star_a", detail::rate_json(s.wer_star_a)},
                        {"wer_star_p", detail::rate_json(s.wer_star_p)},
                        {"wdr", detail::rate_json(s.wdr)},
                        {"war", detail::rate_json(s.war)},
                        {"delta_wer_star", detail::rate_json(s.wer_star_a - s.wer_star_p)},
                        {"counts", detail::triplet_json(r.triplet)},
                        {"identity_holds", r.triplet.identity_holds()}};
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& sm : r.sentences) {
        const auto ss = scores_from_counts(sm.triplet);
        rows.push_back({{"id", sm.id},
                        {"reference_tokens", sm.reference_length},
                        {"wer_a", detail::wer_json(sm.wer_a, sm.reference_length)},
                        {"wer_p", detail::wer_json(sm.wer_p, sm.reference_length)},
                        {"wer_star_a", detail::rate_json(ss.wer_star_a)},
                        {"wer_star_p", detail::rate_json(ss.wer_star_p)},
                        {"wdr", detail::rate_json(ss.wdr)},
                        {"war", detail::rate_json(ss.war)},
                        {"counts", detail::triplet_json(sm.triplet)}});
    }
    j["sentences"] = std::move(rows);
    return j;
}

}  // namespace cslr
