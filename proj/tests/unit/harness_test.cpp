#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "cslr/cslr.hpp"
#include "cslr/gradcheck.hpp"
#include "scenarios.hpp"

using namespace cslr;

namespace {

CorpusConfig small_corpus() {
    CorpusConfig c;
    c.vocab_size = 4;
    c.feature_dim = 6;
    c.sentence_length = {2, 3};
    c.train_count = 6, c.dev_count = 3, c.test_count = 2;
    c.seed = 11;
    return c;
}

RunConfig small_run(std::size_t epochs = 2) {
    RunConfig rc;
    rc.epochs = epochs;
    rc.model.channels = 8;
    rc.model.hidden = 6;
    rc.schedule.decay_epochs = {1};
    return rc;
}

std::vector<std::vector<double>> trainable_values(const ModelParams& p, bool visual_only = false) {
    std::vector<std::vector<double>> out;
    p.for_each([&](const Tensor& t) {
        if (t.trainable && (!visual_only || t.partition == Partition::Visual)) out.push_back(t.data);
    });
    return out;
}

Tensor scalar(double v) {
    Tensor t("w", Partition::Visual, {1});
    t.data[0] = v;
    return t;
}

}  // namespace

TEST(Adam, ZeroGradientFromZeroStateIsNoOp) {
    Tensor p = scalar(0.7), g = scalar(0.0), m = scalar(0.0), v = scalar(0.0);
    adam_update(p, g, m, v, 1, 1e-3, {});
    EXPECT_EQ(p.data[0], 0.7);
    EXPECT_EQ(m.data[0], 0.0);
    EXPECT_EQ(v.data[0], 0.0);
}

TEST(Adam, ZeroGradientDecaysMoments) {
    Tensor p = scalar(0.7), g = scalar(0.0), m = scalar(0.5), v = scalar(0.25);
    adam_update(p, g, m, v, 3, 1e-3, {});
    EXPECT_DOUBLE_EQ(m.data[0], 0.5 * 0.9);
    EXPECT_DOUBLE_EQ(v.data[0], 0.25 * 0.999);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    for (double g : {-3.0, 0.01, 250.0}) {
        Tensor p = scalar(1.0), gt = scalar(g), m = scalar(0.0), v = scalar(0.0);
        adam_update(p, gt, m, v, 1, 1e-3, {});
        EXPECT_NEAR(1.0 - p.data[0], std::copysign(1e-3, g), 1e-9);
    }
}

TEST(Adam, MatchesStraightLineReference) {
    Xorshift64Star rng(3);
    const AdamConfig cfg;
    Tensor p("w", Partition::Visual, {5}), m("m", Partition::Visual, {5}), v("v", Partition::Visual, {5});
    for (double& x : p.data) x = rng.uniform(-1.0, 1.0);
    std::vector<double> rp = p.data, rm(5, 0.0), rv(5, 0.0);
    for (std::uint64_t step = 1; step <= 50; ++step) {
        Tensor g("g", Partition::Visual, {5});
        for (double& x : g.data) x = rng.uniform(-2.0, 2.0);
        const double lr = rng.uniform(1e-4, 1e-2);
        adam_update(p, g, m, v, step, lr, cfg);
        for (std::size_t k = 0; k < 5; ++k) {
            rm[k] = 0.9 * rm[k] + 0.1 * g.data[k];
            rv[k] = 0.999 * rv[k] + 0.001 * g.data[k] * g.data[k];
            const double mh = rm[k] / (1.0 - std::pow(0.9, static_cast<double>(step)));
            const double vh = rv[k] / (1.0 - std::pow(0.999, static_cast<double>(step)));
            rp[k] -= lr * mh / (std::sqrt(vh) + 1e-8);
        }
    }
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(p.data[k], rp[k], 1e-12);
}

TEST(Adam, NonFiniteGradientAborts) {
    ModelConfig mc;
    mc.num_classes = 3, mc.input_dim = 2, mc.channels = 3, mc.hidden = 2, mc.layers = 1;
    ModelParams p = make_params(mc);
    ModelParams g = p.zeros_like();
    g.primary.bias.data[1] = std::nan("");
    AdamState s = AdamState::for_params(p);
    EXPECT_THROW(adam_step(p, g, s, 1e-3, 1e-3), Divergence);
}

TEST(Adam, PartitionLearningRatesAndBuffers) {
    ModelConfig mc;
    mc.num_classes = 3, mc.input_dim = 2, mc.channels = 3, mc.hidden = 2, mc.layers = 1;
    ModelParams p = make_params(mc);
    initialize(p, 4);
    ModelParams g = p.zeros_like();
    g.for_each([](Tensor& t) { std::fill(t.data.begin(), t.data.end(), 1.0); });
    const ModelParams before = p;
    AdamState s = AdamState::for_params(p);
    adam_step(p, g, s, 0.0, 1e-3);
    EXPECT_EQ(trainable_values(p, true), trainable_values(before, true));
    EXPECT_EQ(p.conv[0].running_mean, before.conv[0].running_mean);
    EXPECT_EQ(p.conv[0].running_var, before.conv[0].running_var);
    EXPECT_NE(p.primary.bias, before.primary.bias);
    EXPECT_EQ(s.step, 1u);
}

TEST(Schedule, StepDecay) {
    const Schedule s;
    EXPECT_EQ(s.lr_at(1e-3, 0), 1e-3);
    EXPECT_EQ(s.lr_at(1e-3, 14), 1e-3);
    EXPECT_DOUBLE_EQ(s.lr_at(1e-3, 15), 2e-4);
    EXPECT_DOUBLE_EQ(s.lr_at(1e-3, 22), 4e-5);
}

TEST(RunConfigJson, RoundTripAndValidation) {
    RunConfig c;
    c.seed = 9;
    c.model.variant = TemporalVariant::FrameC3;
    c.model.batch_norm = false;
    c.loss.alpha = 10.0;
    c.schedule.decay_epochs = {3};
    c.lr_ratio = 0.5;
    const auto j = run_config_to_json(c);
    EXPECT_EQ(run_config_to_json(run_config_from_json(j)), j);
    EXPECT_EQ(run_config_to_json(run_config_from_json(nlohmann::json::object())), run_config_to_json(RunConfig{}));
    EXPECT_THROW(run_config_from_json({{"epoch", 3}}), ConfigError);
    EXPECT_THROW(run_config_from_json({{"model", {{"width", 3}}}}), ConfigError);
    EXPECT_THROW(run_config_from_json({{"loss", {{"tau", 0.0}}}}), ConfigError);
    EXPECT_THROW(run_config_from_json({{"optimizer", {{"kind", "sgd"}}}}), ConfigError);
    EXPECT_THROW(run_config_from_json({{"seed", "one"}}), ConfigError);
    EXPECT_THROW(run_config_from_json({{"lr_ratio", -1.0}}), ConfigError);
}

TEST(Train, ZeroLearningRateKeepsParameters) {
    const Corpus corpus = generate_corpus(small_corpus());
    RunConfig rc = small_run(1);
    rc.optimizer.lr = 0.0;
    TrainOptions opts;
    opts.evaluate_epochs = false;
    const TrainResult r = train(rc, corpus, opts);
    SequenceModel fresh(rc.model_config(4, 6));
    fresh.initialize(rc.seed);
    EXPECT_EQ(trainable_values(r.model.params()), trainable_values(fresh.params()));
    EXPECT_EQ(r.epochs[0].steps, 6u);
}

TEST(Train, ZeroRatioFreezesVisualPartition) {
    const Corpus corpus = generate_corpus(small_corpus());
    RunConfig rc = small_run(2);
    rc.lr_ratio = 0.0;
    TrainOptions opts;
    opts.evaluate_epochs = false;
    const TrainResult r = train(rc, corpus, opts);
    SequenceModel fresh(rc.model_config(4, 6));
    fresh.initialize(rc.seed);
    EXPECT_EQ(trainable_values(r.model.params(), true), trainable_values(fresh.params(), true));
    EXPECT_NE(r.model.params().primary.weight, fresh.params().primary.weight);
}

TEST(Train, DeterministicCheckpointsAndLogs) {
    const Corpus corpus = generate_corpus(small_corpus());
    const auto root = std::filesystem::temp_directory_path() / "cslr_harness_determinism";
    std::filesystem::remove_all(root);
    std::vector<std::string> finals, logs;
    for (const char* name : {"a", "b"}) {
        RunConfig rc = small_run(2);
        rc.output_dir = root / name;
        std::filesystem::create_directories(rc.output_dir);
        const TrainResult r = train(rc, corpus);
        ASSERT_EQ(r.checkpoints.size(), 2u);
        EXPECT_EQ(r.checkpoints[0].filename(), "checkpoint-epoch001.bin");
        finals.push_back(io::read_file(rc.output_dir / "final.bin"));
        logs.push_back(io::read_file(rc.output_dir / "epoch_log.csv"));
    }
    EXPECT_EQ(finals[0], finals[1]);
    EXPECT_EQ(logs[0], logs[1]);
    EXPECT_EQ(io::fnv1a_hex(finals[0]), io::fnv1a_hex(finals[1]));
    EXPECT_EQ(load_checkpoint(root / "a" / "final.bin").params(), decode_checkpoint(finals[1]).params());
    std::filesystem::remove_all(root);
}

TEST(Train, OverfitsOneSentence) {
    const auto r = scenario::overfit_smoke();
    ASSERT_EQ(r.losses.size(), scenario::kOverfitSteps);
    EXPECT_GT(r.recovered_at, 0u);
    EXPECT_LE(r.recovered_at, scenario::kOverfitSteps);
    EXPECT_EQ(r.window_violations, 0u);
}

TEST(Evaluate, ZeroModelIsWellFormed) {
    const Corpus corpus = generate_corpus(small_corpus());
    SequenceModel zero(small_run().model_config(4, 6));
    const auto ev = evaluate(zero, corpus.dev);
    ASSERT_EQ(ev.hypotheses.size(), 3u);
    for (const auto& h : ev.hypotheses) {
        EXPECT_TRUE(h.primary.empty());
        EXPECT_TRUE(h.auxiliary.empty());
    }
    EXPECT_EQ(ev.report.wer_p(), 1.0);
    EXPECT_EQ(ev.report.wer_p_counts.del, ev.report.reference_length);
    EXPECT_TRUE(ev.report.triplet.identity_holds());
}

TEST(Evaluate, IdenticalClassifiersAgree) {
    const Corpus corpus = generate_corpus(small_corpus());
    SequenceModel m(small_run().model_config(4, 6));
    m.initialize(5);
    auto& p = m.params();
    std::fill(p.aux.weight.data.begin(), p.aux.weight.data.end(), 0.0);
    std::fill(p.primary.weight.data.begin(), p.primary.weight.data.end(), 0.0);
    p.aux.bias.data = p.primary.bias.data = {0.0, 0.0, 2.0, 0.0, 0.0};
    const auto ev = evaluate(m, corpus.dev);
    for (const auto& h : ev.hypotheses) EXPECT_EQ(h.primary, h.auxiliary);
    const auto s = ev.report.scores();
    EXPECT_EQ(s.wdr, 0.0);
    EXPECT_EQ(s.war, 0.0);
    EXPECT_EQ(s.wer_star_a, s.wer_star_p);
}

TEST(Evaluate, IdentityOnTrainedModel) {
    const Corpus corpus = generate_corpus(small_corpus());
    TrainResult r = train(small_run(3), corpus);
    const auto ev = evaluate(r.model, corpus.train);
    for (const auto& s : ev.report.sentences) EXPECT_TRUE(s.triplet.identity_holds()) << s.id;
    EXPECT_TRUE(ev.report.triplet.identity_holds());
    EXPECT_EQ(ev.report.reference_length, std::accumulate(corpus.train.begin(), corpus.train.end(), std::size_t{0},
                                                           [](std::size_t n, const Sentence& s) {
                                                               return n + s.labels.size();
                                                           }));
}

TEST(Evaluate, VocabularyMismatchIsConfigError) {
    const Corpus corpus = generate_corpus(small_corpus());
    SequenceModel m(small_run().model_config(5, 6));
    EXPECT_THROW(check_vocabulary(m, corpus), ConfigError);
    SequenceModel w(small_run().model_config(4, 7));
    EXPECT_THROW(check_vocabulary(w, corpus), ConfigError);
    SequenceModel ok(small_run().model_config(4, 6));
    EXPECT_NO_THROW(check_vocabulary(ok, corpus));
    EXPECT_THROW(evaluate(ok, {}), InvalidInput);
}

TEST(Trace, ZeroModelGatesAndNorms) {
    const Corpus corpus = generate_corpus(small_corpus());
    SequenceModel zero(small_run().model_config(4, 6));
    const Sentence& s = corpus.train[0];
    const auto rows = trace_sentence(zero, s.frames);
    EXPECT_EQ(rows.size(), output_length(TemporalVariant::Gloss, s.frames.rows()));
    for (const auto& r : rows) {
        EXPECT_EQ(r.gate_i, 0.5);
        EXPECT_EQ(r.gate_f, 0.5);
        EXPECT_EQ(r.gate_o, 0.5);
        EXPECT_EQ(r.gloss_norm, 0.0);
        EXPECT_EQ(r.seq_norm, 0.0);
        EXPECT_EQ(r.primary_argmax, kBlank);
    }
}

TEST(Trace, RowCountMatchesVariantAndCsvShape) {
    const Corpus corpus = generate_corpus(small_corpus());
    for (auto v : {TemporalVariant::FrameC1, TemporalVariant::FrameC3, TemporalVariant::Subgloss,
                   TemporalVariant::Gloss}) {
        RunConfig rc = small_run();
        rc.model.variant = v;
        SequenceModel m(rc.model_config(4, 6));
        m.initialize(2);
        const Sentence& s = corpus.dev[1];
        const auto rows = trace_sentence(m, s.frames);
        EXPECT_EQ(rows.size(), output_length(v, s.frames.rows()));
        for (const auto& r : rows) {
            EXPECT_GT(r.gate_f, 0.0);
            EXPECT_LT(r.gate_f, 1.0);
            EXPECT_GT(r.gloss_norm, 0.0);
            EXPECT_GT(r.primary_prob, 0.0);
        }
        const std::string csv = trace_csv(rows);
        EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), rows.size() + 1);
        EXPECT_EQ(csv.rfind("frame,gate_i,gate_f,gate_o,gloss_norm,seq_norm,primary_argmax,primary_prob,aux_argmax,"
                            "aux_prob\n",
                            0),
                  0u);
    }
}

TEST(Trace, SpikeCoincidenceIsAShare) {
    std::vector<TraceRow> rows(4);
    for (std::size_t t = 0; t < 4; ++t) rows[t].gloss_norm = static_cast<double>(t % 2);
    EXPECT_TRUE(std::isnan(spike_norm_coincidence(rows)));
    rows[1].primary_argmax = 2;
    rows[2].primary_argmax = 1;
    EXPECT_DOUBLE_EQ(spike_norm_coincidence(rows), 0.5);
}
