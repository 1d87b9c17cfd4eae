#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nligen/corpus.hpp"
#include "nligen/retrieval.hpp"
#include "nligen/templates.hpp"

namespace nligen {

// Token budgets: prompts without a demonstration get the short budget,
// demonstration prompts the long one.
inline constexpr std::size_t kMaxLengthNoDemo = 128;
inline constexpr std::size_t kMaxLengthWithDemo = 170;

// Autoregressive language model contract. Scoring prepends the model's BOS
// token; exactly the target positions are scored (no end-of-sequence term).
class LanguageModel {
public:
    virtual ~LanguageModel() = default;
    virtual std::size_t vocab_size() const = 0;
    virtual int bos_id() const = 0;
    virtual int eos_id() const = 0;
    virtual std::vector<int> tokenize(std::string_view text) const = 0;
    virtual std::string detokenize(std::span<const int> tokens) const = 0;
    // log P(next token | prefix) for every vocabulary entry; prefix includes BOS.
    virtual std::vector<double> next_token_logprobs(std::span<const int> prefix) const = 0;

    // log P(target[j] | BOS, context, target[0..j)) for each position j.
    // Stepwise by default; models may override with a single forward pass.
    virtual std::vector<double> target_position_logprobs(std::span<const int> context_tokens,
                                                         std::span<const int> target_tokens) const {
        std::vector<int> prefix;
        prefix.reserve(1 + context_tokens.size() + target_tokens.size());
        prefix.push_back(bos_id());
        prefix.insert(prefix.end(), context_tokens.begin(), context_tokens.end());
        std::vector<double> out;
        out.reserve(target_tokens.size());
        for (int tok : target_tokens) {
            const auto lp = next_token_logprobs(prefix);
            if (tok < 0 || static_cast<std::size_t>(tok) >= lp.size())
                throw std::out_of_range("target token id out of vocabulary: " + std::to_string(tok));
            out.push_back(lp[static_cast<std::size_t>(tok)]);
            prefix.push_back(tok);
        }
        return out;
    }
};

// Adds parameter access and analytic gradients so training loops can drive
// the model. Parameters are one contiguous block.
class TrainableLanguageModel : public LanguageModel {
public:
    virtual std::span<double> parameters() = 0;
    virtual std::span<const double> parameters() const = 0;
    // Accumulates d(Σ_j position_weights[j] · logprob_j)/dθ into grad_out,
    // where logprob_j scores target position j as in target_position_logprobs.
    virtual void accumulate_weighted_logprob_grad(std::span<const int> context_tokens,
                                                  std::span<const int> target_tokens,
                                                  std::span<const double> position_weights,
                                                  std::span<double> grad_out) const = 0;
    virtual std::string save_blob() const = 0;
    virtual void load_blob(const std::string& blob) = 0;
};

struct GeneratorContext {
    std::string text;
    std::size_t max_length = kMaxLengthNoDemo;

    void validate() const {
        if (text.empty()) throw std::invalid_argument("generator context text is empty");
        if (max_length < 1) throw std::invalid_argument("max_length must be >= 1");
    }
};

struct TokenScoredSequence {
    std::vector<int> tokens;
    std::vector<double> logprobs;

    void validate() const {
        if (tokens.size() != logprobs.size())
            throw std::invalid_argument("scored sequence: token/logprob length mismatch");
        for (double lp : logprobs)
            if (!(lp <= 1e-9))
                throw std::invalid_argument("scored sequence: log-probability above zero");
    }

    double total() const {
        double s = 0.0;
        for (double lp : logprobs) s += lp;
        return s;
    }
};

// The standard fine-tuning input shape: condition, separator, premise.
inline std::string standard_format_input(Condition condition, std::string_view premise,
                                         std::string_view separator = "[SEP]") {
    std::string out{condition_name(condition)};
    out += ' ';
    out += separator;
    out += ' ';
    out += premise;
    return out;
}

namespace detail {

inline void check_budget(std::size_t context_len, std::size_t target_len, std::size_t max_length) {
    const std::size_t total = 1 + context_len + target_len;  // BOS + context + target
    if (total > max_length)
        throw std::invalid_argument(
            "token budget exceeded: 1 (BOS) + " + std::to_string(context_len) + " (context) + " +
            std::to_string(target_len) + " (target) = " + std::to_string(total) + " > " +
            std::to_string(max_length));
}

inline double log_sum_exp(std::span<const double> values) {
    double hi = -std::numeric_limits<double>::infinity();
    for (double v : values) hi = std::max(hi, v);
    if (!std::isfinite(hi)) return hi;
    double acc = 0.0;
    for (double v : values) acc += std::exp(v - hi);
    return hi + std::log(acc);
}

}  // namespace detail

// Per-position scores of a target under a context.
// Scores the target tokens behind the context. append_eos adds the end token
// as one more scored position, the shape training targets use; plain scoring
// (perplexity, marginal likelihood oracles) covers exactly the target tokens.
inline TokenScoredSequence score_sequence(const LanguageModel& lm, const GeneratorContext& context,
                                          std::string_view target, bool append_eos = false) {
    context.validate();
    const auto context_tokens = lm.tokenize(context.text);
    auto target_tokens = lm.tokenize(target);
    if (target_tokens.empty())
        throw std::invalid_argument("target tokenizes to zero tokens: \"" + std::string(target) +
                                    "\"");
    if (append_eos) target_tokens.push_back(lm.eos_id());
    detail::check_budget(context_tokens.size(), target_tokens.size(), context.max_length);
    auto logprobs = lm.target_position_logprobs(context_tokens, target_tokens);
    for (double lp : logprobs)
        if (!std::isfinite(lp))
            throw std::runtime_error("non-finite target log-probability");
    return TokenScoredSequence{std::move(target_tokens), std::move(logprobs)};
}

inline double sequence_logprob(const LanguageModel& lm, const GeneratorContext& context,
                               std::string_view target) {
    return score_sequence(lm, context, target).total();
}

// Forward pass of the marginalized objective, kept around for training:
// retrieval weights, per-demonstration per-position logprobs, and the mixed
// per-position logprobs.
struct MarginalBreakdown {
    std::vector<std::string> demo_ids;
    std::vector<double> weights;                         // retrieval distribution over demo_set
    std::vector<std::vector<double>> position_logprobs;  // [demo][target position]
    std::vector<double> mixture_logprobs;                // [target position]
    double total = 0.0;
};

inline MarginalBreakdown marginal_breakdown(const LanguageModel& lm,
                                            const SentenceEncoder& embedder, const Template& tmpl,
                                            const Sample& query, const std::vector<Sample>& demo_set,
                                            std::string_view separator = "[SEP]",
                                            std::size_t max_length = kMaxLengthWithDemo,
                                            bool append_eos = false) {
    if (query.condition != tmpl.condition)
        throw std::invalid_argument("query condition does not match template condition");
    const RetrievalDistribution dist = retrieval_distribution(embedder, query, demo_set);

    MarginalBreakdown out;
    out.demo_ids = dist.candidate_ids;
    out.weights = dist.probabilities;
    out.position_logprobs.reserve(demo_set.size());

    std::size_t target_len = 0;
    for (std::size_t k = 0; k < demo_set.size(); ++k) {
        GeneratorContext ctx{render(tmpl, query.premise, std::nullopt, &demo_set[k], separator),
                             max_length};
        const auto scored = score_sequence(lm, ctx, query.hypothesis, append_eos);
        target_len = scored.tokens.size();
        out.position_logprobs.push_back(scored.logprobs);
    }

    out.mixture_logprobs.resize(target_len);
    std::vector<double> terms(demo_set.size());
    for (std::size_t j = 0; j < target_len; ++j) {
        for (std::size_t k = 0; k < demo_set.size(); ++k)
            terms[k] = std::log(out.weights[k]) + out.position_logprobs[k][j];
        out.mixture_logprobs[j] = detail::log_sum_exp(terms);
        out.total += out.mixture_logprobs[j];
    }
    return out;
}

// Log-likelihood of the query hypothesis with the demonstration marginalized
// out: at each target position the next-token probability is mixed across
// demonstrations under the retrieval distribution, then logs are summed.
inline double marginal_logprob(const LanguageModel& lm, const SentenceEncoder& embedder,
                               const Template& tmpl, const Sample& query,
                               const std::vector<Sample>& demo_set,
                               std::string_view separator = "[SEP]",
                               std::size_t max_length = kMaxLengthWithDemo) {
    return marginal_breakdown(lm, embedder, tmpl, query, demo_set, separator, max_length).total;
}

struct DecodeStrategy {
    enum class Kind { Greedy, Beam };
    Kind kind = Kind::Greedy;
    std::size_t width = 1;

    static DecodeStrategy greedy() { return {Kind::Greedy, 1}; }
    static DecodeStrategy beam(std::size_t width) {
        if (width == 0) throw std::invalid_argument("beam width must be positive");
        return {Kind::Beam, width};
    }
};

namespace detail {

struct DecodeBeam {
    std::vector<int> tokens;
    double score = 0.0;
    std::size_t scored_positions = 0;  // emitted tokens plus the stop token if taken

    double normalized() const {
        return scored_positions == 0 ? score : score / static_cast<double>(scored_positions);
    }
};

}  // namespace detail

// Greedy or beam decoding from a context prefix. Beam search prunes on raw
// cumulative score, finishes a beam when it takes the stop token (the stop
// log-probability counts toward its score), and picks the final output by
// length-normalized score. Ties always resolve toward the lowest token id.
inline std::string decode(const LanguageModel& lm, const GeneratorContext& context,
                          DecodeStrategy strategy, int stop_id) {
    context.validate();
    const auto context_tokens = lm.tokenize(context.text);
    const std::size_t used = 1 + context_tokens.size();
    if (used >= context.max_length) return "";  // no room to generate
    const std::size_t room = context.max_length - used;

    std::vector<int> base;
    base.reserve(used);
    base.push_back(lm.bos_id());
    base.insert(base.end(), context_tokens.begin(), context_tokens.end());

    const int bos = lm.bos_id();
    if (strategy.kind == DecodeStrategy::Kind::Greedy) {
        std::vector<int> generated;
        std::vector<int> prefix = base;
        for (std::size_t step = 0; step < room; ++step) {
            const auto lp = lm.next_token_logprobs(prefix);
            std::size_t best = lp.size();
            for (std::size_t v = 0; v < lp.size(); ++v) {
                if (static_cast<int>(v) == bos) continue;  // bos never re-emitted
                if (best == lp.size() || lp[v] > lp[best]) best = v;
            }
            if (static_cast<int>(best) == stop_id) break;
            generated.push_back(static_cast<int>(best));
            prefix.push_back(static_cast<int>(best));
        }
        return lm.detokenize(generated);
    }

    std::vector<detail::DecodeBeam> alive{detail::DecodeBeam{}};
    std::vector<detail::DecodeBeam> finished;
    for (std::size_t step = 0; step < room && !alive.empty(); ++step) {
        // stop-token extensions compete for the same width slots as live
        // ones, so beam(1) degenerates to greedy exactly
        std::vector<detail::DecodeBeam> next;
        std::vector<bool> done_flags;
        for (const auto& beam : alive) {
            std::vector<int> prefix = base;
            prefix.insert(prefix.end(), beam.tokens.begin(), beam.tokens.end());
            const auto lp = lm.next_token_logprobs(prefix);
            for (std::size_t v = 0; v < lp.size(); ++v) {
                if (static_cast<int>(v) == bos) continue;  // bos never re-emitted
                if (!std::isfinite(lp[v])) continue;
                detail::DecodeBeam ext = beam;
                ext.score += lp[v];
                ext.scored_positions += 1;
                if (static_cast<int>(v) != stop_id) ext.tokens.push_back(static_cast<int>(v));
                next.push_back(std::move(ext));
                done_flags.push_back(static_cast<int>(v) == stop_id);
            }
        }
        // tie-break key spells the stop token out so a finished extension
        // ranks by its token id, exactly as greedy would
        std::vector<std::vector<int>> keys(next.size());
        for (std::size_t i = 0; i < keys.size(); ++i) {
            keys[i] = next[i].tokens;
            if (done_flags[i]) keys[i].push_back(stop_id);
        }
        std::vector<std::size_t> order(next.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (next[a].score != next[b].score) return next[a].score > next[b].score;
            return keys[a] < keys[b];
        });
        if (order.size() > strategy.width) order.resize(strategy.width);
        std::vector<detail::DecodeBeam> survivors;
        for (std::size_t idx : order) {
            if (done_flags[idx])
                finished.push_back(std::move(next[idx]));
            else
                survivors.push_back(std::move(next[idx]));
        }
        alive = std::move(survivors);
    }
    // out of room: close surviving beams without a stop term
    finished.insert(finished.end(), alive.begin(), alive.end());
    if (finished.empty()) return "";

    std::size_t best = 0;
    for (std::size_t i = 1; i < finished.size(); ++i) {
        const double a = finished[i].normalized();
        const double b = finished[best].normalized();
        if (a > b || (a == b && finished[i].tokens < finished[best].tokens)) best = i;
    }
    return lm.detokenize(finished[best].tokens);
}

}  // namespace nligen
