// Brute-force reference implementations the tests compare against. Each one
// recomputes its quantity by the most literal route available: explicit
// per-prefix model calls, full enumeration, naive scans.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "nligen/corpus.hpp"
#include "nligen/generation.hpp"
#include "nligen/retrieval.hpp"
#include "nligen/templates.hpp"

namespace oracle {

// Per-token logprobs of `target` behind `context`, one next_token_logprobs
// call per prefix. Independent of target_position_logprobs overrides.
inline std::vector<double> stepwise_logprobs(const nligen::LanguageModel& lm,
                                             const std::string& context,
                                             const std::string& target, bool append_eos = false) {
    std::vector<int> prefix{lm.bos_id()};
    for (int id : lm.tokenize(context)) prefix.push_back(id);
    std::vector<int> target_tokens = lm.tokenize(target);
    if (append_eos) target_tokens.push_back(lm.eos_id());
    std::vector<double> out;
    for (int id : target_tokens) {
        const auto dist = lm.next_token_logprobs(prefix);
        out.push_back(dist.at(static_cast<std::size_t>(id)));
        prefix.push_back(id);
    }
    return out;
}

inline double softmax_weight(const std::vector<double>& sims, std::size_t k) {
    double denom = 0.0;
    for (double s : sims) denom += std::exp(s);
    return std::exp(sims[k]) / denom;
}

// log Π_j Σ_k w_k P(h_j | demo_k context), all sums in plain double
// arithmetic without log-space tricks.
inline double marginal_logprob(const nligen::LanguageModel& lm,
                               const nligen::SentenceEncoder& embedder,
                               const nligen::Template& tmpl, const nligen::Sample& query,
                               const std::vector<nligen::Sample>& demo_set,
                               bool append_eos = false) {
    std::vector<double> sims;
    const auto query_emb = embedder.embed(query.premise);
    for (const auto& demo : demo_set)
        sims.push_back(nligen::cosine_similarity(query_emb, embedder.embed(demo.premise)));

    std::vector<std::vector<double>> per_demo;
    for (const auto& demo : demo_set) {
        const std::string ctx = nligen::render(tmpl, query.premise, std::nullopt, &demo);
        per_demo.push_back(stepwise_logprobs(lm, ctx, query.hypothesis, append_eos));
    }
    const std::size_t n = per_demo.front().size();
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double mix = 0.0;
        for (std::size_t k = 0; k < demo_set.size(); ++k)
            mix += softmax_weight(sims, k) * std::exp(per_demo[k][j]);
        total += std::log(mix);
    }
    return total;
}

// Naive template selection: evaluate the strategy objective for every row.
inline std::size_t select_row(const std::vector<std::vector<double>>& scores,
                              std::size_t own_column, bool max_margin) {
    std::size_t best = 0;
    double best_value = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < scores.size(); ++t) {
        double value = 0.0;
        if (max_margin) {
            for (std::size_t k = 0; k < scores[t].size(); ++k)
                value += (k == own_column ? 1.0 : -1.0) * scores[t][k];
        } else {
            value = scores[t][own_column];
        }
        if (value > best_value) {
            best_value = value;
            best = t;
        }
    }
    return best;
}

// All length ≤ max_len token sequences over the vocab, stopping a sequence
// the moment it emits stop_id; the best finished one by mean logprob, ties
// by lexicographically smaller token ids. Mirrors the decode contract.
struct EnumeratedSequence {
    std::vector<int> tokens;  // without the stop token
    double score = 0.0;       // includes the stop token's logprob when emitted
    std::size_t scored = 0;   // positions contributing to score
};

inline void enumerate_rec(const nligen::LanguageModel& lm, std::vector<int>& prefix,
                          std::vector<int>& emitted, double score, int stop_id,
                          std::size_t max_len, std::vector<EnumeratedSequence>& out) {
    const auto dist = lm.next_token_logprobs(prefix);
    for (int id = 0; id < static_cast<int>(dist.size()); ++id) {
        if (id == lm.bos_id()) continue;
        const double next_score = score + dist[static_cast<std::size_t>(id)];
        if (id == stop_id) {
            out.push_back({emitted, next_score, emitted.size() + 1});
            continue;
        }
        emitted.push_back(id);
        prefix.push_back(id);
        if (emitted.size() == max_len)
            out.push_back({emitted, next_score, emitted.size()});
        else
            enumerate_rec(lm, prefix, emitted, next_score, stop_id, max_len, out);
        prefix.pop_back();
        emitted.pop_back();
    }
}

inline std::vector<int> exhaustive_decode(const nligen::LanguageModel& lm,
                                          const std::string& context, int stop_id,
                                          std::size_t max_len) {
    std::vector<int> prefix{lm.bos_id()};
    for (int id : lm.tokenize(context)) prefix.push_back(id);
    std::vector<int> emitted;
    std::vector<EnumeratedSequence> finished;
    enumerate_rec(lm, prefix, emitted, 0.0, stop_id, max_len, finished);
    const auto better = [](const EnumeratedSequence& a, const EnumeratedSequence& b) {
        const double na = a.score / static_cast<double>(a.scored);
        const double nb = b.score / static_cast<double>(b.scored);
        if (na != nb) return na > nb;
        return a.tokens < b.tokens;
    };
    const auto it = std::min_element(finished.begin(), finished.end(),
                                     [&](const auto& a, const auto& b) { return better(a, b); });
    return it->tokens;
}

}  // namespace oracle
