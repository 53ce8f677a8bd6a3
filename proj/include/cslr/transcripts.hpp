#pragma once

// Transcript files for file-based scoring: one utterance per line,
// "UTT-ID token token ...", whitespace separated. Blank lines are ignored.

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cslr/binary_io.hpp"
#include "cslr/error.hpp"
#include "cslr/seqmetrics.hpp"

namespace cslr {

struct Transcript {
    std::string id;
    std::vector<std::string> tokens;
};

inline std::vector<Transcript> parse_transcripts(const std::string& text, const std::string& source = "input") {
    std::vector<Transcript> out;
    std::map<std::string, std::size_t> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        Transcript t;
        if (!(ls >> t.id)) continue;
        for (std::string tok; ls >> tok;) t.tokens.push_back(tok);
        if (!seen.emplace(t.id, line_no).second)
            throw InvalidInput(source + ":" + std::to_string(line_no) + ": duplicate utterance id " + t.id);
        out.push_back(std::move(t));
    }
    return out;
}

inline std::vector<Transcript> read_transcripts(const std::filesystem::path& path) {
    return parse_transcripts(io::read_file(path), path.string());
}

// Pairs hypotheses with references by utterance id, in reference order. Every
// reference id must appear in both hypothesis sets and vice versa.
inline std::vector<ScoringItem<std::string>> pair_transcripts(const std::vector<Transcript>& ref,
                                                              const std::vector<Transcript>& hyp_a,
                                                              const std::vector<Transcript>& hyp_p) {
    auto index = [](const std::vector<Transcript>& v) {
        std::map<std::string, const Transcript*> m;
        for (const auto& t : v) m[t.id] = &t;
        return m;
    };
    const auto ia = index(hyp_a), ip = index(hyp_p), ir = index(ref);
    for (const auto* m : {&ia, &ip})
        for (const auto& [id, _] : *m)
            if (!ir.count(id)) throw InvalidInput("hypothesis utterance " + id + " has no reference");
    std::vector<ScoringItem<std::string>> items;
    for (const auto& r : ref) {
        const auto a = ia.find(r.id), p = ip.find(r.id);
        if (a == ia.end() || p == ip.end()) throw InvalidInput("no hypothesis for utterance " + r.id);
        items.push_back({r.id, r.tokens, a->second->tokens, p->second->tokens});
    }
    if (items.empty()) throw InvalidInput("reference file holds no utterances");
    return items;
}

}  // namespace cslr
