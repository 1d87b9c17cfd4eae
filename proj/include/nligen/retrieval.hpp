#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nligen/corpus.hpp"
#include "nligen/rng.hpp"

namespace nligen {

using EmbeddingVector = std::vector<double>;

// Sentence encoder contract. embed() maps text to a fixed-dimension vector;
// parameters() exposes trainable weights (empty span for frozen encoders).
class SentenceEncoder {
public:
    virtual ~SentenceEncoder() = default;
    virtual std::size_t dim() const = 0;
    virtual EmbeddingVector embed(const std::string& text) const = 0;
    virtual std::span<double> parameters() { return {}; }
    virtual std::span<const double> parameters() const { return {}; }
    virtual bool deterministic() const { return true; }
};

// Encoder whose gradients are available: accumulates d(loss)/d(weights)
// given d(loss)/d(embedding of text). Trainable encoders can checkpoint
// their state as an opaque blob.
class TrainableSentenceEncoder : public SentenceEncoder {
public:
    virtual void accumulate_embed_grad(const std::string& text,
                                       std::span<const double> embedding_grad,
                                       std::span<double> grad_out) const = 0;
    virtual std::string save_blob() const = 0;
    virtual void load_blob(const std::string& blob) = 0;
};

// A retriever that ignores the text: each distinct string gets a fixed
// pseudo-random vector derived from (seed, text). Serves as the random
// retriever configuration.
class RandomEncoder final : public SentenceEncoder {
public:
    RandomEncoder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
        if (dim < 1) throw std::invalid_argument("encoder dim must be >= 1");
    }

    std::size_t dim() const override { return dim_; }

    EmbeddingVector embed(const std::string& text) const override {
        std::uint64_t h = seed_;
        for (unsigned char ch : text) h = mix_seed(h ^ ch);
        Rng rng(h);
        EmbeddingVector v(dim_);
        for (auto& x : v) x = rng.normal();
        return v;
    }

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

struct RetrievalDistribution {
    std::vector<std::string> candidate_ids;
    std::vector<double> probabilities;
};

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size())
        throw std::invalid_argument("cosine_similarity: dimension mismatch " +
                                    std::to_string(u.size()) + " vs " + std::to_string(v.size()));
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0)
        throw std::invalid_argument("cosine_similarity: zero vector has no direction");
    return dot / (std::sqrt(nu) * std::sqrt(nv));
}

namespace detail {

inline void check_candidate_pool(const Sample& query, const std::vector<Sample>& candidates) {
    if (candidates.empty()) throw std::invalid_argument("candidate pool is empty");
    for (const auto& c : candidates) {
        if (c.condition != query.condition)
            throw std::invalid_argument("candidate " + c.id + " has condition " +
                                        std::string(condition_name(c.condition)) +
                                        ", query requires " +
                                        std::string(condition_name(query.condition)));
        if (c.id == query.id)
            throw std::invalid_argument("query sample " + query.id + " is in its own pool");
    }
}

// Premise-only embeddings: demonstrations are matched on their premises.
inline std::vector<double> premise_similarities(const SentenceEncoder& embedder,
                                                const Sample& query,
                                                const std::vector<Sample>& candidates) {
    const EmbeddingVector q = embedder.embed(query.premise);
    std::vector<double> sims;
    sims.reserve(candidates.size());
    for (const auto& c : candidates) sims.push_back(cosine_similarity(q, embedder.embed(c.premise)));
    return sims;
}

inline std::vector<double> stable_softmax(std::span<const double> scores) {
    double max_score = scores[0];
    for (double s : scores) max_score = std::max(max_score, s);
    std::vector<double> probs(scores.size());
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        probs[i] = std::exp(scores[i] - max_score);
        total += probs[i];
    }
    for (auto& p : probs) p /= total;
    return probs;
}

// Candidate indices ordered by similarity descending, ties by lowest index.
inline std::vector<std::size_t> similarity_order(const std::vector<double>& sims) {
    std::vector<std::size_t> order(sims.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
    return order;
}

}  // namespace detail

// Softmax over cosine similarities of premise embeddings.
inline RetrievalDistribution retrieval_distribution(const SentenceEncoder& embedder,
                                                    const Sample& query,
                                                    const std::vector<Sample>& candidates) {
    detail::check_candidate_pool(query, candidates);
    const auto sims = detail::premise_similarities(embedder, query, candidates);
    RetrievalDistribution dist;
    dist.candidate_ids.reserve(candidates.size());
    for (const auto& c : candidates) dist.candidate_ids.push_back(c.id);
    dist.probabilities = detail::stable_softmax(sims);
    return dist;
}

// The k most similar candidates, descending similarity, ties by pool index.
// k = 1 is the test-time retrieval rule.
inline std::vector<Sample> top_k_candidates(const SentenceEncoder& embedder, const Sample& query,
                                            const std::vector<Sample>& pool, std::size_t k) {
    if (k == 0) throw std::invalid_argument("k must be positive");
    detail::check_candidate_pool(query, pool);
    const auto sims = detail::premise_similarities(embedder, query, pool);
    const auto order = detail::similarity_order(sims);
    std::vector<Sample> out;
    const std::size_t take = std::min(k, pool.size());
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(pool[order[i]]);
    return out;
}

// Static demonstration sampling: uniform draw from the most-similar half of
// the pool (rounded up, so singleton pools stay usable).
inline Sample static_sample_demo(const SentenceEncoder& embedder, const Sample& query,
                                 const std::vector<Sample>& pool, Rng& rng) {
    detail::check_candidate_pool(query, pool);
    const auto sims = detail::premise_similarities(embedder, query, pool);
    const auto order = detail::similarity_order(sims);
    const std::size_t half = (pool.size() + 1) / 2;
    return pool[order[static_cast<std::size_t>(rng.next_below(half))]];
}

}  // namespace nligen
