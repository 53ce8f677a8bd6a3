#pragma once

// Training loop, evaluation and diagnostic traces.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cslr/checkpoint.hpp"
#include "cslr/config.hpp"
#include "cslr/ctc.hpp"
#include "cslr/losses.hpp"
#include "cslr/optim.hpp"
#include "cslr/prng.hpp"
#include "cslr/seqmetrics.hpp"
#include "cslr/seqnet.hpp"
#include "cslr/synthgen.hpp"

namespace cslr {

// ---------------------------------------------------------------------------
// Evaluation

struct Decoded {
    Labeling primary;
    Labeling auxiliary;
};

inline Decoded decode_sentence(SequenceModel& model, const Matrix& frames) {
    const ModelOutput out = model.forward(frames, Mode::Eval);
    return {greedy_decode(out.contextual_logits), greedy_decode(out.visual_logits)};
}

struct Evaluation {
    MetricsReport report;
    std::vector<Decoded> hypotheses;
};

// Eval-mode forward on every sentence, greedy decoding of both classifiers and
// triplet scoring. Sentences too short for the temporal variant decode to the
// empty labeling.
inline Evaluation evaluate(SequenceModel& model, const std::vector<Sentence>& split) {
    if (split.empty()) throw InvalidInput("evaluate: empty split");
    Evaluation ev;
    std::vector<SentenceMetrics> rows;
    rows.reserve(split.size());
    for (const auto& s : split) {
        Decoded d;
        if (output_length(model.config().variant, s.frames.rows()) >= 1) d = decode_sentence(model, s.frames);
        rows.push_back(score_sentence(s.id, s.labels, d.auxiliary, d.primary));
        ev.hypotheses.push_back(std::move(d));
    }
    model.clear_cache();
    ev.report = corpus_report(std::move(rows));
    return ev;
}

inline void check_vocabulary(const SequenceModel& model, const Corpus& corpus) {
    if (model.config().num_classes != corpus.config.vocab_size + 1)
        throw ConfigError("checkpoint has " + std::to_string(model.config().num_classes - 1) +
                          " glosses, corpus has " + std::to_string(corpus.config.vocab_size));
    if (model.config().input_dim != corpus.config.feature_dim)
        throw ConfigError("checkpoint input width differs from corpus feature_dim");
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double lr = 0.0;
    std::size_t steps = 0;
    std::size_t skipped = 0;
    LossBreakdown mean_loss;
    double train_wer_p = 0.0, train_wer_a = 0.0;
    double dev_wer_p = 0.0, dev_wer_a = 0.0, dev_wdr = 0.0, dev_war = 0.0;
};

inline std::string epoch_log_header() {
    return "epoch,lr,steps,skipped,l_ctc,l_ve,l_va,total,l_probe,train_wer_p,train_wer_a,dev_wer_p,dev_wer_a,dev_wdr,"
           "dev_war";
}

inline std::string epoch_log_row(const EpochLog& e) {
    std::ostringstream os;
    os << std::setprecision(17) << e.epoch << ',' << e.lr << ',' << e.steps << ',' << e.skipped << ','
       << e.mean_loss.l_ctc << ',' << e.mean_loss.l_ve << ',' << e.mean_loss.l_va << ',' << e.mean_loss.total << ','
       << e.mean_loss.l_probe << ',' << e.train_wer_p << ',' << e.train_wer_a << ',' << e.dev_wer_p << ','
       << e.dev_wer_a << ',' << e.dev_wdr << ',' << e.dev_war;
    return os.str();
}

struct TrainOptions {
    // Called after every optimizer step with the 0-based global step and
    // that step's losses.
    std::function<void(std::size_t, const LossBreakdown&)> on_step;
    std::function<void(const EpochLog&)> on_epoch;
    // Evaluate train/dev WER at the end of each epoch.
    bool evaluate_epochs = true;
};

struct TrainResult {
    SequenceModel model;
    std::vector<EpochLog> epochs;
    std::size_t skipped = 0;
    std::vector<std::filesystem::path> checkpoints;
};

// Single-threaded, one sentence per step. Deterministic given the config,
// the corpus and the seed.
inline TrainResult train(const RunConfig& cfg, const Corpus& corpus, const TrainOptions& opts = {}) {
    cfg.validate();
    if (corpus.train.empty()) throw InvalidInput("train: empty training split");
    TrainResult res;
    res.model = SequenceModel(cfg.model_config(corpus.config.vocab_size, corpus.config.feature_dim));
    res.model.initialize(cfg.seed);
    SequenceModel& model = res.model;
    AdamState adam = AdamState::for_params(model.params());
    Xorshift64Star order_rng = Xorshift64Star::derive(cfg.seed, 2);
    std::vector<std::size_t> order(corpus.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    const bool write = !cfg.output_dir.empty();
    std::string log_text = epoch_log_header() + "\n";
    auto checkpoint = [&](const std::string& name) {
        if (!write) return;
        const auto path = cfg.output_dir / name;
        save_checkpoint(path, model);
        res.checkpoints.push_back(path);
    };

    std::size_t global_step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochLog log;
        log.epoch = epoch + 1;
        log.lr = cfg.schedule.lr_at(cfg.optimizer.lr, epoch);
        shuffle(order, order_rng);
        for (std::size_t idx : order) {
            const Sentence& s = corpus.train[idx];
            const std::size_t t_out = output_length(model.config().variant, s.frames.rows());
            if (t_out < 1 || !ctc_feasible(t_out, s.labels)) {
                ++log.skipped;
                std::fprintf(stderr, "warning: skipping infeasible sentence %s (T=%zu, T'=%zu, |l|=%zu)\n",
                             s.id.c_str(), s.frames.rows(), t_out, s.labels.size());
                continue;
            }
            ObjectiveResult r = total_loss(model, s.frames, s.labels, cfg.loss);
            if (!std::isfinite(r.losses.total))
                throw Divergence("non-finite loss at epoch " + std::to_string(epoch + 1) + ", sentence " + s.id);
            adam_step(model.params(), r.grads, adam, log.lr * cfg.lr_ratio, log.lr, cfg.optimizer);
            log.mean_loss.l_ctc += r.losses.l_ctc;
            log.mean_loss.l_ve += r.losses.l_ve;
            log.mean_loss.l_va += r.losses.l_va;
            log.mean_loss.total += r.losses.total;
            log.mean_loss.l_probe += r.losses.l_probe;
            ++log.steps;
            if (opts.on_step) opts.on_step(global_step, r.losses);
            ++global_step;
        }
        model.clear_cache();
        if (log.steps > 0) {
            const double n = static_cast<double>(log.steps);
            log.mean_loss.l_ctc /= n, log.mean_loss.l_ve /= n, log.mean_loss.l_va /= n;
            log.mean_loss.total /= n, log.mean_loss.l_probe /= n;
        }
        res.skipped += log.skipped;
        if (opts.evaluate_epochs) {
            const auto tr = evaluate(model, corpus.train).report;
            log.train_wer_p = tr.wer_p();
            log.train_wer_a = tr.wer_a();
            if (!corpus.dev.empty()) {
                const auto dv = evaluate(model, corpus.dev).report;
                const auto sc = dv.scores();
                log.dev_wer_p = dv.wer_p();
                log.dev_wer_a = dv.wer_a();
                log.dev_wdr = sc.wdr;
                log.dev_war = sc.war;
            }
        }
        res.epochs.push_back(log);
        log_text += epoch_log_row(log) + "\n";
        if (opts.on_epoch) opts.on_epoch(log);

        // Checkpoint right before each learning-rate decay and at the end.
        const bool boundary = std::find(cfg.schedule.decay_epochs.begin(), cfg.schedule.decay_epochs.end(),
                                        epoch + 1) != cfg.schedule.decay_epochs.end();
        if (boundary && epoch + 1 < cfg.epochs) {
            std::ostringstream name;
            name << "checkpoint-epoch" << std::setw(3) << std::setfill('0') << epoch + 1 << ".bin";
            checkpoint(name.str());
        }
    }
    checkpoint("final.bin");
    if (write) {
        io::write_file(cfg.output_dir / "epoch_log.csv", log_text);
        io::write_file(cfg.output_dir / "run_config.json", run_config_to_json(cfg).dump(2) + "\n");
    }
    return res;
}

// ---------------------------------------------------------------------------
// Traces

struct TraceRow {
    std::size_t frame = 0;
    double gate_i = 0, gate_f = 0, gate_o = 0;
    double gloss_norm = 0, seq_norm = 0;
    ClassId primary_argmax = 0;
    double primary_prob = 0;
    ClassId aux_argmax = 0;
    double aux_prob = 0;
};

inline std::vector<TraceRow> trace_sentence(SequenceModel& model, const Matrix& frames) {
    const ModelOutput out = model.forward(frames, Mode::Eval);
    model.clear_cache();
    const Matrix pp = softmax_rows(out.contextual_logits);
    const Matrix pa = softmax_rows(out.visual_logits);
    const Path bp = best_path(out.contextual_logits);
    const Path ba = best_path(out.visual_logits);
    std::vector<TraceRow> rows(pp.rows());
    for (std::size_t t = 0; t < rows.size(); ++t) {
        auto& r = rows[t];
        r.frame = t;
        r.gate_i = out.last_forward_gates(t, 0);
        r.gate_f = out.last_forward_gates(t, 1);
        r.gate_o = out.last_forward_gates(t, 2);
        r.gloss_norm = out.layer_input_norms.at(0)[t];
        // Zero for a single-layer stack.
        r.seq_norm = out.layer_input_norms.size() > 1 ? out.layer_input_norms[1][t] : 0.0;
        r.primary_argmax = bp[t];
        r.primary_prob = pp(t, static_cast<std::size_t>(bp[t]));
        r.aux_argmax = ba[t];
        r.aux_prob = pa(t, static_cast<std::size_t>(ba[t]));
    }
    return rows;
}

inline std::string trace_csv(const std::vector<TraceRow>& rows) {
    std::ostringstream os;
    os << "frame,gate_i,gate_f,gate_o,gloss_norm,seq_norm,primary_argmax,primary_prob,aux_argmax,aux_prob\n";
    os << std::setprecision(17);
    for (const auto& r : rows)
        os << r.frame << ',' << r.gate_i << ',' << r.gate_f << ',' << r.gate_o << ',' << r.gloss_norm << ','
           << r.seq_norm << ',' << r.primary_argmax << ',' << r.primary_prob << ',' << r.aux_argmax << ','
           << r.aux_prob << '\n';
    return os.str();
}

// Share of primary non-blank spike frames that sit on a local maximum of the
// gloss norm (>= both neighbours). Reported, not gated. NaN without spikes.
inline double spike_norm_coincidence(const std::vector<TraceRow>& rows) {
    std::size_t spikes = 0, hits = 0;
    for (std::size_t t = 0; t < rows.size(); ++t) {
        if (rows[t].primary_argmax == kBlank) continue;
        ++spikes;
        const double n = rows[t].gloss_norm;
        const bool left = t == 0 || n >= rows[t - 1].gloss_norm;
        const bool right = t + 1 == rows.size() || n >= rows[t + 1].gloss_norm;
        if (left && right) ++hits;
    }
    return spikes == 0 ? std::nan("") : static_cast<double>(hits) / static_cast<double>(spikes);
}

}  // namespace cslr
