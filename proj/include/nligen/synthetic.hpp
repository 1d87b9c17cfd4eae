#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nligen/corpus.hpp"
#include "nligen/templates.hpp"
#include "nligen/toy_models.hpp"

namespace nligen {

// Corpus with condition-governed hypothesis shapes over a tiny closed
// vocabulary. Premise: "det noun verb adv". Hypotheses: entailment keeps
// "noun verb", contradiction negates it as "noun never verb", neutral maps
// the noun to its fixed object as "noun likes obj". The neutral object is a
// function of the noun, so a demonstration sharing the query's noun shows
// the token the query's target needs.
struct SyntheticCorpusConfig {
    std::size_t nouns = 4;     // ≤ 8
    std::size_t verbs = 4;     // ≤ 8
    std::size_t variants = 1;  // premise variants per (noun, verb)

    std::size_t samples_per_condition() const { return nouns * verbs * variants; }

    void validate() const {
        if (nouns < 1 || nouns > 8 || verbs < 1 || verbs > 8)
            throw std::invalid_argument("synthetic corpus: nouns and verbs must be in [1, 8]");
        if (variants < 1) throw std::invalid_argument("synthetic corpus: variants must be >= 1");
    }
};

struct SyntheticCorpus {
    std::vector<Sample> samples;
    std::vector<std::string> content_tokens;  // every non-special token used
};

namespace detail {

inline const std::vector<std::string>& synthetic_nouns() {
    static const std::vector<std::string> v = {"dog",   "cat", "bird",  "man",
                                               "woman", "kid", "horse", "fox"};
    return v;
}
inline const std::vector<std::string>& synthetic_verbs() {
    static const std::vector<std::string> v = {"runs",  "sleeps", "jumps", "eats",
                                               "sings", "walks",  "swims", "plays"};
    return v;
}
inline const std::vector<std::string>& synthetic_objects() {
    static const std::vector<std::string> v = {"bones", "milk", "seeds", "tea",
                                               "books", "toys", "hay",   "eggs"};
    return v;
}
inline const std::vector<std::string>& synthetic_dets() {
    static const std::vector<std::string> v = {"a", "the"};
    return v;
}
inline const std::vector<std::string>& synthetic_advs() {
    static const std::vector<std::string> v = {"quickly", "slowly", "today", "outside"};
    return v;
}

}  // namespace detail

inline SyntheticCorpus synthetic_corpus(const SyntheticCorpusConfig& config) {
    config.validate();
    const auto& nouns = detail::synthetic_nouns();
    const auto& verbs = detail::synthetic_verbs();
    const auto& objects = detail::synthetic_objects();
    const auto& dets = detail::synthetic_dets();
    const auto& advs = detail::synthetic_advs();

    SyntheticCorpus corpus;
    std::set<std::string> tokens;
    for (std::size_t n = 0; n < config.nouns; ++n) {
        for (std::size_t v = 0; v < config.verbs; ++v) {
            for (std::size_t var = 0; var < config.variants; ++var) {
                const std::string& noun = nouns[n];
                const std::string& verb = verbs[v];
                const std::string& det = dets[(n + v + var) % dets.size()];
                const std::string& adv = advs[(n * config.verbs + v + var) % advs.size()];
                const std::string premise = det + " " + noun + " " + verb + " " + adv;
                const std::string stem = "syn-n" + std::to_string(n) + "v" + std::to_string(v) +
                                         "x" + std::to_string(var);
                ConditionMap<std::string> hypothesis;
                hypothesis[Condition::Entailment] = noun + " " + verb;
                hypothesis[Condition::Contradiction] = noun + " never " + verb;
                hypothesis[Condition::Neutral] = noun + " likes " + objects[n];
                for (Condition c : kAllConditions)
                    corpus.samples.push_back(Sample{
                        stem + "-" + std::string(condition_name(c)), premise, c, hypothesis[c]});
                for (const std::string& tok :
                     {det, noun, verb, adv, std::string("never"), std::string("likes"),
                      objects[n]})
                    tokens.insert(tok);
            }
        }
    }
    corpus.content_tokens.assign(tokens.begin(), tokens.end());
    return corpus;
}

// The object-determining feature of a synthetic sample: its premise noun.
inline std::string synthetic_noun(const Sample& sample) {
    const auto tokens = detail::whitespace_tokens(sample.premise);
    if (tokens.size() < 2) throw std::invalid_argument("not a synthetic premise: " +
                                                       sample.premise);
    return tokens[1];
}

// Complete toy vocabulary for a set of datasets: every premise/hypothesis
// token, extra tokens (template connectives, condition names), and the
// special tokens, sorted for a stable order. Errors past the toy cap.
inline std::vector<std::string> collect_vocab(const std::vector<const std::vector<Sample>*>& datasets,
                                              const std::vector<std::string>& extra = {}) {
    std::set<std::string> tokens;
    for (const auto* samples : datasets)
        for (const auto& s : *samples) {
            for (const auto& tok : detail::whitespace_tokens(s.premise)) tokens.insert(tok);
            for (const auto& tok : detail::whitespace_tokens(s.hypothesis)) tokens.insert(tok);
        }
    for (const auto& tok : extra)
        for (const auto& word : detail::whitespace_tokens(tok)) tokens.insert(word);
    std::vector<std::string> vocab(tokens.begin(), tokens.end());
    vocab = with_special_tokens(std::move(vocab));
    if (vocab.size() > 64)
        throw std::invalid_argument("toy vocabulary needs " + std::to_string(vocab.size()) +
                                    " tokens; the cap is 64. Use smaller data or an external "
                                    "backend (see README).");
    return vocab;
}

// Tokens a template contributes to the vocabulary (pattern minus slots).
inline std::vector<std::string> template_tokens(const TemplateSet& set) {
    std::vector<std::string> out;
    for (Condition c : kAllConditions) {
        std::string pattern = set.for_condition(c).pattern;
        for (std::string_view slot : {kPremiseSlot, kHypothesisSlot}) {
            const auto at = pattern.find(slot);
            if (at != std::string::npos) pattern.erase(at, slot.size());
        }
        for (const auto& tok : detail::whitespace_tokens(pattern)) out.push_back(tok);
    }
    return out;
}

}  // namespace nligen
