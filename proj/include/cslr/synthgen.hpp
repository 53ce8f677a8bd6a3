#pragma once

// Synthetic continuous-gesture corpus. Each gloss owns a prototype feature
// vector; a sentence is a run of noisy prototype segments joined by unlabeled
// transition frames that interpolate between neighbouring prototypes (the
// rest pose, all zeros, stands in at the sentence boundaries and between two
// occurrences of the same gloss).
//
// On-disk layout of a corpus directory:
//   manifest.json        config echo, vocabulary, counts, content hash
//   <split>.bin          per sentence: u64 T, u64 C, then T*C f64, row-major
//   <split>.labels       per sentence: "ID gloss-id gloss-id ..."
// All integers and floats little-endian. The hash is FNV-1a 64 over the
// .bin then .labels bytes of train, dev and test in that order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cslr/binary_io.hpp"
#include "cslr/ctc.hpp"
#include "cslr/error.hpp"
#include "cslr/matrix.hpp"
#include "cslr/prng.hpp"
#include "cslr/seqnet.hpp"

namespace cslr {

struct Range {
    std::size_t min = 1, max = 1;
    friend bool operator==(const Range&, const Range&) = default;
};

struct CorpusConfig {
    std::size_t vocab_size = 10;
    std::size_t feature_dim = 16;
    Range sentence_length{3, 6};
    Range duration{6, 10};
    Range transition{2, 4};
    bool boundary_transitions = true;
    double noise_std = 0.3;
    double prototype_scale = 1.0;
    std::size_t train_count = 200, dev_count = 40, test_count = 40;
    std::uint64_t seed = 1;
    TemporalVariant variant = TemporalVariant::Gloss;

    void validate() const {
        auto range_ok = [](const Range& r) { return r.min <= r.max; };
        if (vocab_size < 1 || feature_dim < 1) throw ConfigError("vocab_size and feature_dim must be >= 1");
        if (sentence_length.min < 1 || duration.min < 1) throw ConfigError("sentence and duration minimums must be >= 1");
        if (!range_ok(sentence_length) || !range_ok(duration) || !range_ok(transition))
            throw ConfigError("range min exceeds max");
        if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be >= 0");
        if (!(prototype_scale > 0.0)) throw ConfigError("prototype_scale must be > 0");
        if (train_count < 1 || dev_count < 1 || test_count < 1) throw ConfigError("split counts must be >= 1");
    }

    friend bool operator==(const CorpusConfig&, const CorpusConfig&) = default;
};

struct GlossTemplate {
    ClassId gloss_id = 1;
    std::vector<double> prototype;
    Range duration;
};

struct Sentence {
    std::string id;
    Matrix frames;  // T x C
    Labeling labels;
};

struct Corpus {
    CorpusConfig config;
    std::vector<Sentence> train, dev, test;
    std::string hash;

    const std::vector<Sentence>& split(const std::string& name) const {
        if (name == "train") return train;
        if (name == "dev") return dev;
        if (name == "test") return test;
        throw InvalidInput("unknown split: " + name);
    }
};

inline constexpr double kMinPrototypeDistance = 1.0;

inline std::vector<GlossTemplate> generate_templates(const CorpusConfig& cfg) {
    cfg.validate();
    Xorshift64Star rng = Xorshift64Star::derive(cfg.seed, 1);
    std::vector<GlossTemplate> out;
    std::size_t attempts = 0;
    while (out.size() < cfg.vocab_size) {
        if (++attempts > 10000) throw ConfigError("cannot place prototypes with minimum separation");
        std::vector<double> proto(cfg.feature_dim);
        for (double& v : proto) v = cfg.prototype_scale * rng.normal();
        bool ok = true;
        for (const auto& t : out) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < proto.size(); ++k) d2 += (proto[k] - t.prototype[k]) * (proto[k] - t.prototype[k]);
            if (std::sqrt(d2) < kMinPrototypeDistance) {
                ok = false;
                break;
            }
        }
        if (ok) out.push_back({static_cast<ClassId>(out.size() + 1), std::move(proto), cfg.duration});
    }
    return out;
}

// Samples a gloss sequence and renders it. Does not check CTC feasibility;
// generate_corpus does.
inline Sentence generate_sentence(const std::vector<GlossTemplate>& templates, const CorpusConfig& cfg,
                                  Xorshift64Star& rng) {
    if (templates.empty()) throw InvalidInput("no templates");
    const std::size_t C = templates.front().prototype.size();
    auto range = [&](const Range& r) {
        return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(r.min), static_cast<std::int64_t>(r.max)));
    };
    const std::size_t n = range(cfg.sentence_length);
    Sentence s;
    for (std::size_t i = 0; i < n; ++i)
        s.labels.push_back(static_cast<ClassId>(rng.uniform_int(1, static_cast<std::int64_t>(templates.size()))));

    std::vector<double> rows;
    auto emit = [&](const std::vector<double>& mean) {
        for (std::size_t k = 0; k < C; ++k) rows.push_back(mean[k] + cfg.noise_std * rng.normal());
    };
    // A repeated gloss retracts towards the rest pose and back, so that the
    // boundary between the two occurrences is visible.
    auto transition = [&](const std::vector<double>& a, const std::vector<double>& b) {
        const std::size_t frames = range(cfg.transition);
        const bool repeat = a == b;
        std::vector<double> m(C);
        for (std::size_t f = 1; f <= frames; ++f) {
            const double w = static_cast<double>(f) / static_cast<double>(frames + 1);
            for (std::size_t k = 0; k < C; ++k) m[k] = repeat ? a[k] * std::abs(1.0 - 2.0 * w) : a[k] + (b[k] - a[k]) * w;
            emit(m);
        }
    };
    const std::vector<double> rest(C, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& tpl = templates[static_cast<std::size_t>(s.labels[i] - 1)];
        if (i == 0 && cfg.boundary_transitions) transition(rest, tpl.prototype);
        if (i > 0) transition(templates[static_cast<std::size_t>(s.labels[i - 1] - 1)].prototype, tpl.prototype);
        const std::size_t d = range(tpl.duration);
        for (std::size_t f = 0; f < d; ++f) emit(tpl.prototype);
    }
    if (cfg.boundary_transitions) transition(templates[static_cast<std::size_t>(s.labels.back() - 1)].prototype, rest);
    const std::size_t T = rows.size() / C;
    s.frames = Matrix(T, C, std::move(rows));
    return s;
}

inline bool sentence_feasible(const Sentence& s, TemporalVariant variant) {
    const std::size_t t_out = output_length(variant, s.frames.rows());
    return t_out >= 1 && ctc_feasible(t_out, s.labels);
}

inline nlohmann::json corpus_manifest(const Corpus& c);

inline Corpus generate_corpus(const CorpusConfig& cfg) {
    cfg.validate();
    const auto templates = generate_templates(cfg);
    Corpus corpus;
    corpus.config = cfg;
    std::set<Labeling> train_labelings;
    const struct {
        const char* name;
        std::size_t count;
        std::vector<Sentence>* out;
        std::uint64_t tag;
    } splits[] = {{"train", cfg.train_count, &corpus.train, 101},
                  {"dev", cfg.dev_count, &corpus.dev, 102},
                  {"test", cfg.test_count, &corpus.test, 103}};
    for (const auto& sp : splits) {
        Xorshift64Star rng = Xorshift64Star::derive(cfg.seed, sp.tag);
        const bool held_out = sp.out != &corpus.train;
        std::size_t rejected = 0;
        while (sp.out->size() < sp.count) {
            Sentence s = generate_sentence(templates, cfg, rng);
            const bool fresh = !held_out || !train_labelings.contains(s.labels);
            if (!sentence_feasible(s, cfg.variant) || !fresh) {
                if (++rejected > 100000) throw ConfigError(std::string("cannot fill split ") + sp.name);
                continue;
            }
            if (!held_out) train_labelings.insert(s.labels);
            std::ostringstream id;
            id << sp.name << '-' << std::setw(5) << std::setfill('0') << sp.out->size();
            s.id = id.str();
            sp.out->push_back(std::move(s));
        }
    }
    corpus.hash = corpus_manifest(corpus)["hash"].get<std::string>();
    return corpus;
}

// ---------------------------------------------------------------------------
// Persistence

inline nlohmann::json corpus_config_to_json(const CorpusConfig& c) {
    return {{"vocab_size", c.vocab_size},
            {"feature_dim", c.feature_dim},
            {"sentence_length", {c.sentence_length.min, c.sentence_length.max}},
            {"duration", {c.duration.min, c.duration.max}},
            {"transition", {c.transition.min, c.transition.max}},
            {"boundary_transitions", c.boundary_transitions},
            {"noise_std", c.noise_std},
            {"prototype_scale", c.prototype_scale},
            {"train_count", c.train_count},
            {"dev_count", c.dev_count},
            {"test_count", c.test_count},
            {"seed", c.seed},
            {"variant", std::string(variant_name(c.variant))}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline CorpusConfig corpus_config_from_json(const nlohmann::json& j) {
    CorpusConfig c;
    auto range = [](const nlohmann::json& v) {
        if (!v.is_array() || v.size() != 2) throw ConfigError("range must be [min, max]");
        return Range{v[0].get<std::size_t>(), v[1].get<std::size_t>()};
    };
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const auto& k = it.key();
            const auto& v = it.value();
            if (k == "vocab_size") c.vocab_size = v.get<std::size_t>();
            else if (k == "feature_dim") c.feature_dim = v.get<std::size_t>();
            else if (k == "sentence_length") c.sentence_length = range(v);
            else if (k == "duration") c.duration = range(v);
            else if (k == "transition") c.transition = range(v);
            else if (k == "boundary_transitions") c.boundary_transitions = v.get<bool>();
            else if (k == "noise_std") c.noise_std = v.get<double>();
            else if (k == "prototype_scale") c.prototype_scale = v.get<double>();
            else if (k == "train_count") c.train_count = v.get<std::size_t>();
            else if (k == "dev_count") c.dev_count = v.get<std::size_t>();
            else if (k == "test_count") c.test_count = v.get<std::size_t>();
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "variant") c.variant = parse_variant(v.get<std::string>());
            else throw ConfigError("unknown corpus config key: " + k);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("corpus config: ") + e.what());
    }
    c.validate();
    return c;
}

namespace detail {

inline std::string encode_records(const std::vector<Sentence>& split) {
    std::string out;
    for (const auto& s : split) {
        io::put_u64(out, s.frames.rows());
        io::put_u64(out, s.frames.cols());
        for (double v : s.frames.data()) io::put_f64(out, v);
    }
    return out;
}

inline std::string encode_labels(const std::vector<Sentence>& split) {
    std::string out;
    for (const auto& s : split) {
        out += s.id;
        for (ClassId g : s.labels) out += ' ' + std::to_string(g);
        out += '\n';
    }
    return out;
}

inline std::vector<Sentence> decode_split(const std::string& records, const std::string& labels,
                                          const std::string& source) {
    std::vector<Sentence> out;
    io::Reader r(records, source + ".bin");
    std::istringstream lines(labels);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        Sentence s;
        ls >> s.id;
        ClassId g;
        while (ls >> g) s.labels.push_back(g);
        if (r.done()) throw IoError(source + ": fewer records than label lines");
        const auto T = r.u64(), C = r.u64();
        std::vector<double> data(T * C);
        for (double& v : data) v = r.f64();
        s.frames = Matrix(T, C, std::move(data));
        out.push_back(std::move(s));
    }
    if (!r.done()) throw IoError(source + ": more records than label lines");
    return out;
}

}  // namespace detail

inline nlohmann::json corpus_manifest(const Corpus& c) {
    io::Fnv1a h;
    for (const auto* split : {&c.train, &c.dev, &c.test}) {
        h.update(detail::encode_records(*split));
        h.update(detail::encode_labels(*split));
    }
    return {{"format", "cslr-corpus"},
            {"version", 1},
            {"config", corpus_config_to_json(c.config)},
            {"vocabulary", ExtendedVocabulary::numbered(c.config.vocab_size).glosses()},
            {"counts", {{"train", c.train.size()}, {"dev", c.dev.size()}, {"test", c.test.size()}}},
            {"hash", h.hex()}};
}

inline std::string write_corpus(const Corpus& c, const std::filesystem::path& dir) {
    const auto manifest = corpus_manifest(c);
    const std::pair<const char*, const std::vector<Sentence>*> splits[] = {
        {"train", &c.train}, {"dev", &c.dev}, {"test", &c.test}};
    for (const auto& [name, split] : splits) {
        io::write_file(dir / (std::string(name) + ".bin"), detail::encode_records(*split));
        io::write_file(dir / (std::string(name) + ".labels"), detail::encode_labels(*split));
    }
    io::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    return manifest["hash"].get<std::string>();
}

inline Corpus read_corpus(const std::filesystem::path& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError((dir / "manifest.json").string() + ": " + e.what());
    }
    if (manifest.value("format", "") != "cslr-corpus" || manifest.value("version", 0) != 1)
        throw IoError((dir / "manifest.json").string() + ": not a version-1 corpus manifest");
    Corpus c;
    c.config = corpus_config_from_json(manifest.at("config"));
    c.train = detail::decode_split(io::read_file(dir / "train.bin"), io::read_file(dir / "train.labels"),
                                   (dir / "train").string());
    c.dev = detail::decode_split(io::read_file(dir / "dev.bin"), io::read_file(dir / "dev.labels"),
                                 (dir / "dev").string());
    c.test = detail::decode_split(io::read_file(dir / "test.bin"), io::read_file(dir / "test.labels"),
                                  (dir / "test").string());
    c.hash = corpus_manifest(c)["hash"].get<std::string>();
    if (c.hash != manifest.at("hash").get<std::string>())
        throw IoError((dir / "manifest.json").string() + ": content hash mismatch");
    return c;
}

}  // namespace cslr
