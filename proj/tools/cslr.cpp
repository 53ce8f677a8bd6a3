// Command-line front end: corpus generation, training, evaluation, traces,
// file-based scoring and the oracle self-check.
//
// Exit status: 0 success, 1 invalid input or configuration, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cslr/cslr.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitRuntime = 2;

std::string percent(double rate) {
    if (!std::isfinite(rate)) return "inf";
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * rate << '%';
    return os.str();
}

std::string ops(const cslr::EditCounts& c) {
    return std::to_string(c.sub) + "/" + std::to_string(c.del) + "/" + std::to_string(c.ins);
}

void print_report(const cslr::MetricsReport& r) {
    const auto s = r.scores();
    std::printf("utterances        %zu\n", r.sentences.size());
    std::printf("reference tokens  %zu\n\n", r.reference_length);
    std::printf("%-18s%-14s%s\n", "", "auxiliary", "primary");
    std::printf("%-18s%-14s%s\n", "WER", percent(r.wer_a()).c_str(), percent(r.wer_p()).c_str());
    std::printf("%-18s%-14s%s\n", "  sub/del/ins", ops(r.wer_a_counts).c_str(), ops(r.wer_p_counts).c_str());
    std::printf("%-18s%-14s%s\n\n", "WER*", percent(s.wer_star_a).c_str(), percent(s.wer_star_p).c_str());
    std::printf("WDR               %s\n", percent(s.wdr).c_str());
    std::printf("WAR               %s\n", percent(s.war).c_str());
    std::printf("delta WER*        %s\n", percent(s.wer_star_a - s.wer_star_p).c_str());
    std::printf("identity          %s\n", r.triplet.identity_holds() ? "holds" : "VIOLATED");
}

struct GenArgs {
    std::string out, config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> vocab, feature_dim, train, dev, test;
    std::optional<double> noise;
    std::optional<std::string> variant;
};

int run_gen(const GenArgs& a, bool as_json) {
    cslr::CorpusConfig cfg;
    if (!a.config.empty()) cfg = cslr::corpus_config_from_json(json::parse(cslr::io::read_file(a.config)));
    if (a.seed) cfg.seed = *a.seed;
    if (a.vocab) cfg.vocab_size = *a.vocab;
    if (a.feature_dim) cfg.feature_dim = *a.feature_dim;
    if (a.train) cfg.train_count = *a.train;
    if (a.dev) cfg.dev_count = *a.dev;
    if (a.test) cfg.test_count = *a.test;
    if (a.noise) cfg.noise_std = *a.noise;
    if (a.variant) cfg.variant = cslr::parse_variant(*a.variant);
    const cslr::Corpus corpus = cslr::generate_corpus(cfg);
    cslr::write_corpus(corpus, a.out);
    if (as_json) {
        std::cout << cslr::corpus_manifest(corpus).dump(2) << '\n';
    } else {
        std::printf("wrote %s: %zu train, %zu dev, %zu test sentences, hash %s\n", a.out.c_str(), corpus.train.size(),
                    corpus.dev.size(), corpus.test.size(), corpus.hash.c_str());
    }
    return kExitOk;
}

struct TrainArgs {
    std::string config;
    std::optional<std::string> corpus, out, variant;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<double> lr, lr_ratio, alpha, tau;
    std::optional<bool> ve, va, aux_probe;
};

json epoch_json(const cslr::EpochLog& e) {
    return {{"epoch", e.epoch},
            {"lr", e.lr},
            {"steps", e.steps},
            {"skipped", e.skipped},
            {"loss",
             {{"l_ctc", e.mean_loss.l_ctc},
              {"l_ve", e.mean_loss.l_ve},
              {"l_va", e.mean_loss.l_va},
              {"total", e.mean_loss.total},
              {"l_probe", e.mean_loss.l_probe}}},
            {"train_wer_p", e.train_wer_p},
            {"train_wer_a", e.train_wer_a},
            {"dev_wer_p", e.dev_wer_p},
            {"dev_wer_a", e.dev_wer_a},
            {"dev_wdr", e.dev_wdr},
            {"dev_war", e.dev_war}};
}

int run_train(const TrainArgs& a, bool as_json) {
    cslr::RunConfig cfg;
    if (!a.config.empty()) cfg = cslr::load_run_config(a.config);
    if (a.corpus) cfg.corpus = *a.corpus;
    if (a.out) cfg.output_dir = *a.out;
    if (a.variant) cfg.model.variant = cslr::parse_variant(*a.variant);
    if (a.seed) cfg.seed = *a.seed;
    if (a.epochs) cfg.epochs = *a.epochs;
    if (a.lr) cfg.optimizer.lr = *a.lr;
    if (a.lr_ratio) cfg.lr_ratio = *a.lr_ratio;
    if (a.alpha) cfg.loss.alpha = *a.alpha;
    if (a.tau) cfg.loss.tau = *a.tau;
    if (a.ve) cfg.loss.enable_ve = *a.ve;
    if (a.va) cfg.loss.enable_va = *a.va;
    if (a.aux_probe) cfg.loss.aux_probe = *a.aux_probe;
    cfg.validate();
    if (cfg.corpus.empty()) throw cslr::ConfigError("no corpus given (--corpus or config key \"corpus\")");
    if (cfg.output_dir.empty()) throw cslr::ConfigError("no output directory given (--out or config key \"output_dir\")");

    const cslr::Corpus corpus = cslr::read_corpus(cfg.corpus);
    cslr::TrainOptions opts;
    if (!as_json) {
        std::printf("%5s %10s %10s %10s %10s %10s %9s %9s %9s %9s\n", "epoch", "lr", "l_ctc", "l_ve", "l_va", "total",
                    "trWER_p", "devWER_p", "devWDR", "devWAR");
        opts.on_epoch = [](const cslr::EpochLog& e) {
            std::printf("%5zu %10.3g %10.5f %10.5f %10.5f %10.5f %9s %9s %9s %9s\n", e.epoch, e.lr, e.mean_loss.l_ctc,
                        e.mean_loss.l_ve, e.mean_loss.l_va, e.mean_loss.total, percent(e.train_wer_p).c_str(),
                        percent(e.dev_wer_p).c_str(), percent(e.dev_wdr).c_str(), percent(e.dev_war).c_str());
            std::fflush(stdout);
        };
    }
    const cslr::TrainResult res = cslr::train(cfg, corpus, opts);
    if (as_json) {
        json j = {{"output_dir", cfg.output_dir.string()}, {"skipped", res.skipped}};
        j["epochs"] = json::array();
        for (const auto& e : res.epochs) j["epochs"].push_back(epoch_json(e));
        j["checkpoints"] = json::array();
        for (const auto& c : res.checkpoints) j["checkpoints"].push_back(c.string());
        std::cout << j.dump(2) << '\n';
    } else {
        std::printf("checkpoints and epoch_log.csv written to %s\n", cfg.output_dir.string().c_str());
    }
    return kExitOk;
}

int run_eval(const std::string& checkpoint, const std::string& corpus_dir, const std::string& split,
             const std::string& report_path, bool as_json) {
    cslr::SequenceModel model = cslr::load_checkpoint(checkpoint);
    const cslr::Corpus corpus = cslr::read_corpus(corpus_dir);
    cslr::check_vocabulary(model, corpus);
    const cslr::Evaluation ev = cslr::evaluate(model, corpus.split(split));
    const json j = cslr::report_to_json(ev.report);
    if (!report_path.empty()) cslr::io::write_file(report_path, j.dump(2) + "\n");
    if (as_json)
        std::cout << j.dump(2) << '\n';
    else
        print_report(ev.report);
    return kExitOk;
}

int run_trace(const std::string& checkpoint, const std::string& corpus_dir, const std::string& id,
              const std::string& out, bool as_json) {
    cslr::SequenceModel model = cslr::load_checkpoint(checkpoint);
    const cslr::Corpus corpus = cslr::read_corpus(corpus_dir);
    cslr::check_vocabulary(model, corpus);
    const cslr::Sentence* found = nullptr;
    for (const auto* split : {&corpus.train, &corpus.dev, &corpus.test})
        for (const auto& s : *split)
            if (s.id == id) found = &s;
    if (!found) throw cslr::InvalidInput("unknown sentence id: " + id);
    const auto rows = cslr::trace_sentence(model, found->frames);
    const std::string csv = cslr::trace_csv(rows);
    const double coincidence = cslr::spike_norm_coincidence(rows);
    if (!out.empty()) cslr::io::write_file(out, csv);
    if (as_json) {
        json j = {{"id", id},
                  {"frames", rows.size()},
                  {"spike_norm_coincidence", std::isfinite(coincidence) ? json(coincidence) : json(nullptr)}};
        if (!out.empty()) j["csv"] = out;
        std::cout << j.dump(2) << '\n';
    } else if (out.empty()) {
        std::cout << csv;
    } else {
        std::printf("wrote %zu rows to %s; spikes on a gloss-norm peak: %s\n", rows.size(), out.c_str(),
                    std::isfinite(coincidence) ? percent(coincidence).c_str() : "no spikes");
    }
    return kExitOk;
}

int run_score(const std::string& ref, const std::string& hyp_a, const std::string& hyp_p,
              const std::string& report_path, bool as_json) {
    const auto r = cslr::read_transcripts(ref);
    const auto hp = cslr::read_transcripts(hyp_p);
    const auto ha = hyp_a.empty() ? hp : cslr::read_transcripts(hyp_a);
    const auto items = cslr::pair_transcripts(r, ha, hp);
    const cslr::MetricsReport report = cslr::corpus_report(items);
    const json j = cslr::report_to_json(report);
    if (!report_path.empty()) cslr::io::write_file(report_path, j.dump(2) + "\n");
    if (as_json) {
        std::cout << j.dump(2) << '\n';
        return kExitOk;
    }
    print_report(report);
    const std::function<std::string(const std::string&)> same = [](const std::string& s) { return s; };
    for (const auto& it : items) {
        std::printf("\n%s\n", it.id.c_str());
        std::cout << cslr::render_triplet(cslr::align_triplet(it.ref, it.hyp_a, it.hyp_p), same);
    }
    return kExitOk;
}

int run_oracle_check(std::uint64_t seed, bool as_json) {
    std::vector<cslr::check::SuiteResult> suites;
    suites.push_back(cslr::check::ctc_oracle_suite(500, seed));
    suites.push_back(cslr::check::ctc_gradient_suite(100, seed));
    for (auto& s : cslr::check::layer_gradient_suites(100, seed)) suites.push_back(std::move(s));
    suites.push_back(cslr::check::model_gradient_suite(100, seed));
    suites.push_back(cslr::check::objective_gradient_suite(100, seed));
    bool ok = true;
    json j = json::array();
    for (const auto& s : suites) {
        ok = ok && s.passed();
        j.push_back({{"suite", s.name},
                     {"passed", s.passed()},
                     {"instances", s.instances},
                     {"failures", s.failures},
                     {"comparisons", s.compared},
                     {"skipped_at_kinks", s.skipped},
                     {"worst_error", s.worst}});
        if (!as_json) {
            std::printf("%-4s %-18s %4zu instances %8zu comparisons  worst %.3g", s.passed() ? "PASS" : "FAIL",
                        s.name.c_str(), s.instances, s.compared, s.worst);
            if (s.skipped) std::printf("  (%zu at kinks skipped)", s.skipped);
            if (!s.passed()) std::printf("  first failure: %s", s.first_failure.c_str());
            std::printf("\n");
        }
    }
    if (as_json) std::cout << json{{"passed", ok}, {"suites", j}}.dump(2) << '\n';
    return ok ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continuous sign-language recognition toolkit with visual alignment constraints"};
    app.require_subcommand(1);
    bool as_json = false;
    app.add_flag("--json", as_json, "Machine-readable JSON on stdout");

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic corpus");
    gen_cmd->add_option("--out", gen.out, "Corpus directory")->required();
    gen_cmd->add_option("--config", gen.config, "Corpus config JSON file")->check(CLI::ExistingFile);
    gen_cmd->add_option("--seed", gen.seed);
    gen_cmd->add_option("--vocab", gen.vocab, "Number of glosses");
    gen_cmd->add_option("--feature-dim", gen.feature_dim);
    gen_cmd->add_option("--noise", gen.noise, "Noise standard deviation");
    gen_cmd->add_option("--train", gen.train, "Train sentence count");
    gen_cmd->add_option("--dev", gen.dev, "Dev sentence count");
    gen_cmd->add_option("--test", gen.test, "Test sentence count");
    gen_cmd->add_option("--variant", gen.variant, "Temporal variant the corpus must be feasible for");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train a model");
    train_cmd->add_option("--config", tr.config, "Run config JSON file")->check(CLI::ExistingFile);
    train_cmd->add_option("--corpus", tr.corpus, "Corpus directory");
    train_cmd->add_option("--out", tr.out, "Output directory");
    train_cmd->add_option("--variant", tr.variant, "frame-c1, frame-c3, subgloss or gloss");
    train_cmd->add_option("--seed", tr.seed);
    train_cmd->add_option("--epochs", tr.epochs);
    train_cmd->add_option("--lr", tr.lr, "Base learning rate");
    train_cmd->add_option("--lr-ratio", tr.lr_ratio, "Feature-extractor to alignment learning-rate ratio");
    train_cmd->add_option("--alpha", tr.alpha, "Weight of the alignment loss");
    train_cmd->add_option("--tau", tr.tau, "Distillation temperature");
    train_cmd->add_flag("--ve,!--no-ve", tr.ve, "Visual enhancement loss");
    train_cmd->add_flag("--va,!--no-va", tr.va, "Visual alignment loss");
    train_cmd->add_flag("--aux-probe,!--no-aux-probe", tr.aux_probe,
                        "Train the auxiliary classifier as a detached probe when the enhancement loss is off");

    std::string checkpoint, corpus_dir, split = "dev", report_path;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus split");
    eval_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--corpus", corpus_dir)->required()->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--split", split)->check(CLI::IsMember({"train", "dev", "test"}));
    eval_cmd->add_option("--report", report_path, "Also write the JSON report here");

    std::string trace_id, trace_out;
    auto* trace_cmd = app.add_subcommand("trace", "Per-frame gate, norm and prediction trace of one sentence");
    trace_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    trace_cmd->add_option("--corpus", corpus_dir)->required()->check(CLI::ExistingDirectory);
    trace_cmd->add_option("--id", trace_id, "Sentence id")->required();
    trace_cmd->add_option("--out", trace_out, "CSV output file (stdout when absent)");

    std::string ref, hyp_a, hyp_p;
    auto* score_cmd = app.add_subcommand("score", "Score hypothesis files against a reference file");
    score_cmd->add_option("--ref", ref)->required()->check(CLI::ExistingFile);
    score_cmd->add_option("--hyp-a", hyp_a, "Auxiliary hypotheses (defaults to --hyp-p)")->check(CLI::ExistingFile);
    score_cmd->add_option("--hyp-p", hyp_p, "Primary hypotheses")->required()->check(CLI::ExistingFile);
    score_cmd->add_option("--report", report_path, "Also write the JSON report here");

    std::uint64_t check_seed = 1;
    auto* oracle_cmd = app.add_subcommand("oracle-check", "Run the CTC oracle and finite-difference suites");
    oracle_cmd->add_option("--seed", check_seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInvalid;
    }

    try {
        if (gen_cmd->parsed()) return run_gen(gen, as_json);
        if (train_cmd->parsed()) return run_train(tr, as_json);
        if (eval_cmd->parsed()) return run_eval(checkpoint, corpus_dir, split, report_path, as_json);
        if (trace_cmd->parsed()) return run_trace(checkpoint, corpus_dir, trace_id, trace_out, as_json);
        if (score_cmd->parsed()) return run_score(ref, hyp_a, hyp_p, report_path, as_json);
        if (oracle_cmd->parsed()) return run_oracle_check(check_seed, as_json);
    } catch (const cslr::InvalidInput& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInvalid;
    } catch (const cslr::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitInvalid;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "error: malformed JSON: %s\n", e.what());
        return kExitInvalid;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitInvalid;
}
