#include <algorithm>
#include <functional>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "cslr/prng.hpp"
#include "cslr/report.hpp"
#include "cslr/seqmetrics.hpp"
#include "cslr/transcripts.hpp"

using namespace cslr;
using Words = std::vector<std::string>;

namespace {

// Minimum cost over every alignment path, by exhaustive recursion.
std::size_t enumerate_min_cost(const std::vector<int>& r, const std::vector<int>& h, std::size_t i = 0,
                               std::size_t j = 0) {
    if (i == r.size() && j == h.size()) return 0;
    std::size_t best = std::numeric_limits<std::size_t>::max();
    if (i < r.size() && j < h.size())
        best = std::min(best, (r[i] == h[j] ? 0u : 1u) + enumerate_min_cost(r, h, i + 1, j + 1));
    if (i < r.size()) best = std::min(best, 1 + enumerate_min_cost(r, h, i + 1, j));
    if (j < h.size()) best = std::min(best, 1 + enumerate_min_cost(r, h, i, j + 1));
    return best;
}

std::vector<int> random_sentence(Xorshift64Star& rng, std::size_t max_len, int vocab) {
    std::vector<int> s(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(max_len))));
    for (int& v : s) v = static_cast<int>(rng.uniform_int(0, vocab - 1));
    return s;
}

Words row_text(const std::vector<std::optional<std::string>>& row) {
    Words w;
    for (const auto& v : row) w.push_back(v ? *v : "*");
    return w;
}

std::vector<ScoringItem<std::string>> weather_items() {
    const std::string dir = CSLR_DATA_DIR "/weather/";
    return pair_transcripts(read_transcripts(dir + "ref.txt"), read_transcripts(dir + "hyp_a.txt"),
                            read_transcripts(dir + "hyp_p.txt"));
}

}  // namespace

TEST(EditAlign, IdenticalIsAllMatch) {
    const Words s{"A", "B", "C"};
    const auto a = edit_align(s, s);
    EXPECT_EQ(a.cost(), 0u);
    for (const auto& c : a.columns) EXPECT_EQ(c.op, EditOp::Match);
}

TEST(EditAlign, SubstitutionAndInsertion) {
    const auto a = edit_align(Words{"A", "B", "C"}, Words{"A", "X", "C", "D"});
    EXPECT_EQ(a.counts, (EditCounts{2, 1, 0, 1}));
    EXPECT_EQ(row_text(a.ref_row()), (Words{"A", "B", "C", "*"}));
    EXPECT_EQ(row_text(a.hyp_row()), (Words{"A", "X", "C", "D"}));
}

TEST(EditAlign, EmptyReference) {
    const auto a = edit_align(Words{}, Words{"A", "B"});
    EXPECT_EQ(a.counts, (EditCounts{0, 0, 0, 2}));
    EXPECT_TRUE(edit_align(Words{}, Words{}).columns.empty());
}

TEST(EditAlign, CostMatchesExhaustiveEnumeration) {
    Xorshift64Star rng(17);
    for (int n = 0; n < 300; ++n) {
        const auto r = random_sentence(rng, 6, 3), h = random_sentence(rng, 6, 3);
        EXPECT_EQ(edit_align(r, h).cost(), enumerate_min_cost(r, h));
    }
}

TEST(EditAlign, DegapRestoresInputs) {
    Xorshift64Star rng(18);
    for (int n = 0; n < 300; ++n) {
        const auto r = random_sentence(rng, 10, 4), h = random_sentence(rng, 10, 4);
        const auto a = edit_align(r, h);
        EXPECT_EQ(degap(a.ref_row()), r);
        EXPECT_EQ(degap(a.hyp_row()), h);
        EXPECT_EQ(a.counts.match + a.counts.sub + a.counts.del, r.size());
        EXPECT_EQ(a.counts.match + a.counts.sub + a.counts.ins, h.size());
    }
}

TEST(Wer, NineTokenReference) {
    const Words ref{"MORGEN", "NORD", "WOLKE", "MEHR", "KALT", "REGEN", "SCHNEE", "MOEGLICH", "ABEND"};
    Words two_ins = ref;
    two_ins.insert(two_ins.begin() + 1, "SUED");
    two_ins.insert(two_ins.begin() + 7, "SUED");
    Words two_del = ref;
    two_del.erase(two_del.begin() + 3, two_del.begin() + 5);
    EXPECT_DOUBLE_EQ(wer(ref, two_ins).rate, 2.0 / 9.0);
    EXPECT_EQ(wer(ref, two_ins).counts.ins, 2u);
    EXPECT_DOUBLE_EQ(wer(ref, two_del).rate, 2.0 / 9.0);
    EXPECT_EQ(wer(ref, two_del).counts.del, 2u);
    EXPECT_NEAR(wer(Words{"A", "B", "C"}, Words{"A", "X", "C", "D"}).rate, 0.6667, 1e-4);
}

TEST(Wer, EmptyReferenceConvention) {
    EXPECT_EQ(wer(Words{}, Words{}).rate, 0.0);
    EXPECT_TRUE(wer(Words{}, Words{"A"}).infinite());
}

TEST(Wer, ZeroOnIdenticalAndInvariantUnderRelabeling) {
    Xorshift64Star rng(19);
    std::vector<int> perm{0, 1, 2, 3, 4, 5};
    for (int n = 0; n < 200; ++n) {
        const auto r = random_sentence(rng, 8, 6), h = random_sentence(rng, 8, 6);
        EXPECT_EQ(wer(r, r).counts.errors(), 0u);
        shuffle(perm, rng);
        auto relabel = [&](std::vector<int> s) {
            for (int& v : s) v = perm[static_cast<std::size_t>(v)];
            return s;
        };
        EXPECT_EQ(wer(relabel(r), relabel(h)).counts, wer(r, h).counts);
    }
}

TEST(Triplet, IdenticalSentencesAllMatch) {
    const Words s{"A", "B"};
    const auto t = align_triplet(s, s, s);
    ASSERT_EQ(t.columns.size(), 2u);
    for (const auto& c : t.columns) {
        EXPECT_EQ(c.op_a, EditOp::Match);
        EXPECT_EQ(c.op_p, EditOp::Match);
    }
}

TEST(Triplet, DeletionAgainstSubstitution) {
    const auto t = align_triplet(Words{"A", "B", "C"}, Words{"A", "C"}, Words{"A", "B", "X"});
    EXPECT_EQ(row_text(t.ref_row()), (Words{"A", "B", "C"}));
    EXPECT_EQ(row_text(t.hyp_a_row()), (Words{"A", "*", "C"}));
    EXPECT_EQ(row_text(t.hyp_p_row()), (Words{"A", "B", "X"}));
    EXPECT_EQ(t.columns[1].op_a, EditOp::Del);
    EXPECT_EQ(t.columns[2].op_p, EditOp::Sub);

    const auto s = wdr_war(t);
    EXPECT_EQ(s.counts.reference_length, 3u);
    EXPECT_EQ(s.counts.errors_a, 1u);
    EXPECT_EQ(s.counts.errors_p, 1u);
    EXPECT_EQ(s.counts.deteriorated, 1u);
    EXPECT_EQ(s.counts.ameliorated, 1u);
    EXPECT_DOUBLE_EQ(s.wdr, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(s.war, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(s.wer_star_a, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(s.wer_star_p, 1.0 / 3.0);
}

TEST(Triplet, OneSidedErrors) {
    const Words ref{"A", "B", "C", "D"};
    const auto s = wdr_war(align_triplet(ref, Words{"A", "X", "D"}, ref));
    EXPECT_EQ(s.counts.deteriorated, 0u);
    EXPECT_EQ(s.counts.ameliorated, s.counts.errors_a);
    EXPECT_EQ(s.counts.errors_a, 2u);
    EXPECT_DOUBLE_EQ(s.war, 2.0 / 4.0);
    EXPECT_EQ(s.wdr, 0.0);
}

TEST(Triplet, WeatherFixture) {
    const auto items = weather_items();
    ASSERT_EQ(items.size(), 1u);
    const auto& it = items[0];
    EXPECT_EQ(it.ref.size(), 9u);
    EXPECT_EQ(wer(it.ref, it.hyp_a).counts, (EditCounts{7, 0, 2, 0}));
    EXPECT_EQ(wer(it.ref, it.hyp_p).counts, (EditCounts{9, 0, 0, 2}));

    const auto s = wdr_war(align_triplet(it.ref, it.hyp_a, it.hyp_p));
    EXPECT_EQ(s.counts.reference_length, 9u);
    EXPECT_EQ(s.counts.deteriorated, 2u);
    EXPECT_EQ(s.counts.ameliorated, 2u);
    EXPECT_EQ(s.counts.errors_a, 2u);
    EXPECT_EQ(s.counts.errors_p, 2u);
    EXPECT_DOUBLE_EQ(s.wdr, 2.0 / 9.0);
    EXPECT_DOUBLE_EQ(s.war, 2.0 / 9.0);
    EXPECT_EQ(s.wer_star_a, s.wer_star_p);
}

TEST(Triplet, IdentityAndDegapOnRandomTriples) {
    Xorshift64Star rng(20);
    TripletCounts total;
    for (int n = 0; n < 1000; ++n) {
        const auto r = random_sentence(rng, 12, 20), a = random_sentence(rng, 12, 20),
                   p = random_sentence(rng, 12, 20);
        const auto t = align_triplet(r, a, p);
        EXPECT_EQ(degap(t.ref_row()), r);
        EXPECT_EQ(degap(t.hyp_a_row()), a);
        EXPECT_EQ(degap(t.hyp_p_row()), p);
        for (const auto& c : t.columns) EXPECT_TRUE(c.ref || c.hyp_a || c.hyp_p);
        const auto s = wdr_war(t);
        EXPECT_TRUE(s.counts.identity_holds());
        EXPECT_EQ(s.counts.reference_length, r.size());
        total += s.counts;
    }
    EXPECT_TRUE(total.identity_holds());
}

TEST(Triplet, RenderShowsRowsAndMarkers) {
    const auto t = align_triplet(Words{"A", "B", "C"}, Words{"A", "C"}, Words{"A", "B", "X"});
    const std::string text = render_triplet<std::string>(t, [](const std::string& s) { return s; });
    EXPECT_NE(text.find("REF*  : A B   C"), std::string::npos) << text;
    EXPECT_NE(text.find("HYP*_a: A *** C"), std::string::npos) << text;
    EXPECT_NE(text.find("HYP*_p: A B   X"), std::string::npos) << text;
    EXPECT_NE(text.find("WDR/AR:   +   -"), std::string::npos) << text;
}

TEST(CorpusReport, TotalsOverReferenceTokens) {
    const Words ref9{"A", "B", "C", "D", "E", "F", "G", "H", "I"};
    Words hyp9 = ref9;
    hyp9[0] = "X", hyp9[4] = "Y";
    const auto r = corpus_report(std::vector<ScoringItem<std::string>>{{"s1", ref9, hyp9, hyp9},
                                                                       {"s2", Words{"A"}, Words{"A"}, Words{"A"}}});
    EXPECT_EQ(r.reference_length, 10u);
    EXPECT_DOUBLE_EQ(r.wer_p(), 0.2);
    EXPECT_EQ(r.sentences.size(), 2u);
}

TEST(CorpusReport, SingleSentenceEqualsSentenceRate) {
    const auto items = weather_items();
    const auto r = corpus_report(items);
    EXPECT_EQ(r.scores().wdr, wdr_war(align_triplet(items[0].ref, items[0].hyp_a, items[0].hyp_p)).wdr);
    EXPECT_DOUBLE_EQ(r.wer_a(), 2.0 / 9.0);
}

TEST(CorpusReport, EmptyCorpusRejected) {
    EXPECT_THROW(corpus_report(std::vector<SentenceMetrics>{}), InvalidInput);
}

TEST(CorpusReport, JsonFields) {
    const auto j = report_to_json(corpus_report(weather_items()));
    EXPECT_EQ(j["schema"], "cslr-metrics");
    EXPECT_EQ(j["version"], 1);
    EXPECT_EQ(j["reference_tokens"], 9);
    EXPECT_EQ(j["wer_a"]["del"], 2);
    EXPECT_EQ(j["wer_p"]["ins"], 2);
    EXPECT_DOUBLE_EQ(j["wdr"].get<double>(), 2.0 / 9.0);
    EXPECT_DOUBLE_EQ(j["war"].get<double>(), 2.0 / 9.0);
    EXPECT_EQ(j["delta_wer_star"].get<double>(), 0.0);
    EXPECT_EQ(j["counts"]["deteriorated"], 2);
    EXPECT_TRUE(j["identity_holds"].get<bool>());
    ASSERT_EQ(j["sentences"].size(), 1u);
    EXPECT_EQ(j["sentences"][0]["id"], "weather");
}

TEST(CorpusReport, InfiniteRateIsNull) {
    const auto j = report_to_json(corpus_report(std::vector<ScoringItem<std::string>>{{"e", {}, {"A"}, {}}}));
    EXPECT_TRUE(j["wer_a"]["rate"].is_null());
    EXPECT_EQ(j["wer_p"]["rate"], 0.0);
}

TEST(Transcripts, ParseSkipsBlankLines) {
    const auto t = parse_transcripts("u1 A B\n\n   \nu2\nu3 C\n");
    ASSERT_EQ(t.size(), 3u);
    EXPECT_EQ(t[0].tokens, (Words{"A", "B"}));
    EXPECT_TRUE(t[1].tokens.empty());
    EXPECT_EQ(t[2].id, "u3");
}

TEST(Transcripts, DuplicateIdRejected) {
    EXPECT_THROW(parse_transcripts("u1 A\nu1 B\n"), InvalidInput);
}

TEST(Transcripts, PairingRequiresMatchingIds) {
    const auto ref = parse_transcripts("u1 A\nu2 B\n");
    const auto both = parse_transcripts("u2 B\nu1 A\n");
    const auto items = pair_transcripts(ref, both, both);
    ASSERT_EQ(items.size(), 2u);
    EXPECT_EQ(items[0].id, "u1");
    EXPECT_THROW(pair_transcripts(ref, parse_transcripts("u1 A\n"), both), InvalidInput);
    EXPECT_THROW(pair_transcripts(ref, both, parse_transcripts("u1 A\nu2 B\nu3 C\n")), InvalidInput);
    EXPECT_THROW(pair_transcripts({}, {}, {}), InvalidInput);
}
