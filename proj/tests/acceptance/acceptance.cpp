// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <unistd.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "cslr/cslr.hpp"
#include "cslr/gradcheck.hpp"
#include "scenarios.hpp"

using namespace cslr;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Verdict collapse_golden() {
    const Path p{0, 1, 1, 1, 0, 0, 1, 1, 2, 2, 2, 0};  // -aaa--aabbb-
    const Labeling l = collapse_path(p, 3);
    return {l == Labeling{1, 1, 2}, "B(-aaa--aabbb-) has " + std::to_string(l.size()) + " glosses"};
}

Verdict suites(const std::vector<check::SuiteResult>& all) {
    Verdict v{true, ""};
    for (const auto& s : all) {
        v.pass = v.pass && s.passed();
        v.detail += fmt("%s%s %zu/%zu worst %.2e", v.detail.empty() ? "" : "; ", s.name.c_str(),
                        s.instances - s.failures, s.instances, s.worst);
        if (!s.passed()) v.detail += " [" + s.first_failure + "]";
    }
    return v;
}

Verdict ctc_oracle() { return suites({check::ctc_oracle_suite(500, 1)}); }

Verdict gradients() {
    std::vector<check::SuiteResult> all{check::ctc_gradient_suite(100, 1)};
    for (auto& s : check::layer_gradient_suites(100, 1)) all.push_back(std::move(s));
    all.push_back(check::model_gradient_suite(100, 1));
    all.push_back(check::objective_gradient_suite(100, 1));
    return suites(all);
}

Verdict identity() {
    Xorshift64Star rng(2024);
    auto sentence = [&] {
        std::vector<int> s(static_cast<std::size_t>(rng.uniform_int(0, 12)));
        for (int& t : s) t = static_cast<int>(rng.uniform_int(0, 19));
        return s;
    };
    TripletCounts total;
    std::size_t broken = 0;
    for (int n = 0; n < 1000; ++n) {
        const auto r = sentence(), a = sentence(), p = sentence();
        const auto c = wdr_war(align_triplet(r, a, p)).counts;
        broken += c.identity_holds() ? 0 : 1;
        total += c;
    }
    return {broken == 0 && total.identity_holds(),
            fmt("%zu of 1000 triples broken; corpus %zu = %zu + %zu - %zu", broken, total.errors_p, total.errors_a,
                total.deteriorated, total.ameliorated)};
}

Verdict weather_fixture() {
    const std::string dir = CSLR_DATA_DIR "/weather/";
    const auto items = pair_transcripts(read_transcripts(dir + "ref.txt"), read_transcripts(dir + "hyp_a.txt"),
                                        read_transcripts(dir + "hyp_p.txt"));
    const auto r = corpus_report(items);
    const auto& t = r.triplet;
    const bool ok = r.reference_length == 9 && r.wer_a_counts == EditCounts{7, 0, 2, 0} &&
                    r.wer_p_counts == EditCounts{9, 0, 0, 2} && t.deteriorated == 2 && t.ameliorated == 2 &&
                    t.errors_a == 2 && t.errors_p == 2;
    return {ok, fmt("WER_a %zu/%zu, WER_p %zu/%zu, WDR %zu/%zu, WAR %zu/%zu", r.wer_a_counts.errors(),
                    r.reference_length, r.wer_p_counts.errors(), r.reference_length, t.deteriorated,
                    t.reference_length, t.ameliorated, t.reference_length)};
}

Verdict output_lengths() {
    const std::array<std::pair<TemporalVariant, std::function<std::size_t(std::size_t)>>, 4> table{{
        {TemporalVariant::FrameC1, [](std::size_t T) { return T; }},
        {TemporalVariant::FrameC3, [](std::size_t T) { return T - 2; }},
        {TemporalVariant::Subgloss, [](std::size_t T) { return T / 2 - 2; }},
        {TemporalVariant::Gloss, [](std::size_t T) { return T / 4 - 3; }},
    }};
    std::size_t checked = 0, wrong = 0;
    Xorshift64Star rng(6);
    for (const auto& [variant, formula] : table) {
        ModelConfig mc;
        mc.num_classes = 3, mc.input_dim = 2, mc.channels = 3, mc.hidden = 2, mc.layers = 1, mc.variant = variant;
        SequenceModel model(mc);
        model.initialize(1);
        for (std::size_t T = 20; T <= 128; ++T) {
            const ModelOutput out = model.forward(check::random_matrix(rng, T, 2), Mode::Eval);
            const std::size_t want = formula(T);
            ++checked;
            if (out.visual_logits.rows() != want || out.contextual_logits.rows() != want ||
                output_length(variant, T) != want)
                ++wrong;
        }
    }
    return {wrong == 0, fmt("%zu of %zu (variant, T) pairs differ", wrong, checked)};
}

Verdict overfit() {
    const auto r = scenario::overfit_smoke();
    const bool ok = r.recovered_at > 0 && r.recovered_at <= scenario::kOverfitSteps && r.window_violations == 0;
    return {ok, fmt("labeling recovered after step %zu; loss %.4g -> %.4g; %zu window violations", r.recovered_at,
                    r.losses.front(), r.losses.back(), r.window_violations)};
}

struct ToyRuns {
    scenario::ToyOutcome base, vac;
    fs::path base_dir, vac_dir;
};

ToyRuns toy_runs(const Corpus& corpus, const fs::path& root) {
    ToyRuns r{{}, {}, root / "baseline", root / "vac"};
    fs::create_directories(r.base_dir);
    fs::create_directories(r.vac_dir);
    r.base = scenario::toy_run(corpus, false, r.base_dir);
    r.vac = scenario::toy_run(corpus, true, r.vac_dir);
    return r;
}

Verdict toy(const ToyRuns& r) {
    const auto& b = r.base.last;
    const auto& v = r.vac.last;
    const double inc_b = b.dev_wdr + b.dev_war, inc_v = v.dev_wdr + v.dev_war;
    const bool ok = b.train_wer_p <= scenario::kToyTrainWerLimit && v.train_wer_p <= scenario::kToyTrainWerLimit &&
                    inc_v < inc_b;
    return {ok, fmt("train WER base %.2f%% vac %.2f%%; dev WDR+WAR base %.2f%% vac %.2f%%; skipped %zu", 100 * b.train_wer_p,
                    100 * v.train_wer_p, 100 * inc_b, 100 * inc_v, r.base.skipped + r.vac.skipped)};
}

Verdict determinism(const ToyRuns& first, const ToyRuns& second) {
    std::size_t files = 0, differing = 0;
    for (const auto& [a, b] : {std::pair{first.base_dir, second.base_dir}, std::pair{first.vac_dir, second.vac_dir}}) {
        for (const auto& entry : fs::directory_iterator(a)) {
            const auto name = entry.path().filename();
            if (name == "run_config.json") continue;  // records its own output path
            ++files;
            if (!fs::exists(b / name) || io::read_file(entry.path()) != io::read_file(b / name)) ++differing;
        }
    }
    const bool reports = first.base.report_json == second.base.report_json &&
                         first.vac.report_json == second.vac.report_json &&
                         first.base.checkpoint_bytes == second.base.checkpoint_bytes &&
                         first.vac.checkpoint_bytes == second.vac.checkpoint_bytes;
    return {files > 0 && differing == 0 && reports,
            fmt("%zu of %zu output files differ; reports %s", differing, files, reports ? "identical" : "differ")};
}

std::pair<int, std::string> run_capture(const std::string& cmd) {
    std::string out;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return {-1, out};
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) out.append(buf.data(), n);
    return {pclose(pipe), out};
}

Verdict baseline_equivalence() {
    const auto [sf, full] = run_capture(CSLR_LOSS_TRACE_FULL);
    const auto [sn, noaux] = run_capture(CSLR_LOSS_TRACE_NOAUX);
    const auto steps = static_cast<std::size_t>(std::count(full.begin(), full.end(), '\n'));
    return {sf == 0 && sn == 0 && steps > 0 && full == noaux,
            fmt("%zu per-step loss lines, outputs %s", steps, full == noaux ? "bit-identical" : "differ")};
}

}  // namespace

int main() {
    int failed = 0;
    auto report = [&](int id, const char* name, const std::function<Verdict()>& f) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = f();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %2d %-28s %s (%.1f s)\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str(), s);
        std::fflush(stdout);
        failed += v.pass ? 0 : 1;
    };

    report(1, "collapse-golden", collapse_golden);
    report(2, "ctc-vs-oracle", ctc_oracle);
    report(3, "gradient-suite", gradients);
    report(4, "error-identity", identity);
    report(5, "triplet-fixture", weather_fixture);
    report(6, "output-lengths", output_lengths);
    report(7, "overfit-smoke", overfit);

    const fs::path root = fs::temp_directory_path() / ("cslr_acceptance_" + std::to_string(::getpid()));
    std::optional<ToyRuns> first, second;
    report(8, "toy-run", [&] {
        const Corpus corpus = generate_corpus(CorpusConfig{});
        first = toy_runs(corpus, root / "first");
        return toy(*first);
    });
    report(9, "determinism", [&] {
        if (!first) return Verdict{false, "criterion 8 produced no runs"};
        second = toy_runs(generate_corpus(CorpusConfig{}), root / "second");
        return determinism(*first, *second);
    });
    report(10, "baseline-equivalence", baseline_equivalence);

    std::error_code ec;
    fs::remove_all(root, ec);
    std::printf("%d of 10 criteria failed\n", failed);
    return failed == 0 ? 0 : 1;
}
