#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nligen/generation.hpp"
#include "nligen/retrieval.hpp"
#include "nligen/rng.hpp"
#include "nligen/templates.hpp"

namespace nligen {

inline constexpr std::string_view kBosToken = "<s>";
inline constexpr std::string_view kEosToken = "</s>";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kUnkToken = "<unk>";

// Appends any missing special tokens to a word list.
inline std::vector<std::string> with_special_tokens(std::vector<std::string> words) {
    for (std::string_view special : {kBosToken, kEosToken, kSepToken, kMaskToken, kUnkToken})
        if (std::find(words.begin(), words.end(), special) == words.end())
            words.emplace_back(special);
    return words;
}

struct ToyLmConfig {
    std::vector<std::string> vocab;  // complete vocabulary, special tokens included
    std::size_t embed_dim = 8;
    std::size_t hidden_dim = 16;
    std::size_t context_window = 256;
    std::uint64_t seed = 0;

    void validate() const {
        if (vocab.size() < 4)
            throw std::invalid_argument("vocab too small: " + std::to_string(vocab.size()) +
                                        " tokens, need at least 4 including specials");
        if (vocab.size() > 64)
            throw std::invalid_argument("vocab too large: " + std::to_string(vocab.size()) +
                                        " tokens, cap is 64");
        for (std::size_t i = 0; i < vocab.size(); ++i)
            for (std::size_t j = i + 1; j < vocab.size(); ++j)
                if (vocab[i] == vocab[j])
                    throw std::invalid_argument("duplicate vocab token: " + vocab[i]);
        for (std::string_view special : {kBosToken, kEosToken, kSepToken, kMaskToken, kUnkToken})
            if (std::find(vocab.begin(), vocab.end(), special) == vocab.end())
                throw std::invalid_argument("vocab missing special token " + std::string(special));
        if (embed_dim == 0 || hidden_dim == 0 || context_window == 0)
            throw std::invalid_argument("model dimensions must be positive");
    }
};

// Word-level Elman recurrent LM: h_t = tanh(W_x e_t + W_h h_{t-1} + b_h),
// logits_t = W_o h_t + b_o. Parameters live in one flat block so optimizers
// and gradient checks can treat the model as a vector.
class ToyLm final : public TrainableLanguageModel {
public:
    explicit ToyLm(ToyLmConfig config) : config_(std::move(config)) {
        config_.validate();
        v_ = config_.vocab.size();
        d_ = config_.embed_dim;
        h_ = config_.hidden_dim;
        for (std::size_t i = 0; i < v_; ++i) id_of_[config_.vocab[i]] = static_cast<int>(i);
        params_.assign(v_ * d_ + h_ * d_ + h_ * h_ + h_ + v_ * h_ + v_, 0.0);
        Rng rng(mix_seed(config_.seed, 0x746f796c6dULL));
        for (double& p : params_) p = 0.1 * rng.normal();
    }

    const ToyLmConfig& config() const { return config_; }
    int id_of(std::string_view token) const {
        const auto it = id_of_.find(std::string(token));
        return it == id_of_.end() ? id_of_.at(std::string(kUnkToken)) : it->second;
    }
    int sep_id() const { return id_of(kSepToken); }
    int mask_id() const { return id_of(kMaskToken); }
    int unk_id() const { return id_of(kUnkToken); }

    std::size_t vocab_size() const override { return v_; }
    int bos_id() const override { return id_of(kBosToken); }
    int eos_id() const override { return id_of(kEosToken); }

    std::vector<int> tokenize(std::string_view text) const override {
        std::vector<int> out;
        std::string cur;
        auto flush = [&] {
            if (!cur.empty()) {
                out.push_back(id_of(cur));
                cur.clear();
            }
        };
        for (char ch : text) {
            if (std::isspace(static_cast<unsigned char>(ch)))
                flush();
            else
                cur += ch;
        }
        flush();
        return out;
    }

    std::string detokenize(std::span<const int> tokens) const override {
        std::string out;
        for (int id : tokens) {
            if (id < 0 || static_cast<std::size_t>(id) >= v_)
                throw std::out_of_range("token id out of vocabulary: " + std::to_string(id));
            if (!out.empty()) out += ' ';
            out += config_.vocab[static_cast<std::size_t>(id)];
        }
        return out;
    }

    std::vector<double> next_token_logprobs(std::span<const int> prefix) const override {
        if (prefix.empty()) throw std::invalid_argument("empty prefix");
        check_window(prefix.size());
        std::vector<double> hidden(h_, 0.0);
        std::vector<double> next(h_, 0.0);
        for (int id : prefix) step(id, hidden, next), hidden.swap(next);
        return log_softmax_logits(hidden);
    }

    std::vector<double> target_position_logprobs(std::span<const int> context_tokens,
                                                 std::span<const int> target_tokens) const override {
        std::vector<int> seq = full_sequence(context_tokens, target_tokens);
        std::vector<double> hidden(h_, 0.0);
        std::vector<double> next(h_, 0.0);
        std::vector<double> out;
        out.reserve(target_tokens.size());
        const std::size_t first_target = 1 + context_tokens.size();
        for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
            step(seq[t], hidden, next);
            hidden.swap(next);
            const std::size_t predicted = t + 1;
            if (predicted >= first_target && predicted < seq.size()) {
                const auto lp = log_softmax_logits(hidden);
                out.push_back(lp[static_cast<std::size_t>(seq[predicted])]);
            }
        }
        return out;
    }

    std::span<double> parameters() override { return params_; }
    std::span<const double> parameters() const override { return params_; }

    // BPTT for d(Σ_j position_weights[j] · log P(target_j | prefix_j))/dθ.
    void accumulate_weighted_logprob_grad(std::span<const int> context_tokens,
                                          std::span<const int> target_tokens,
                                          std::span<const double> position_weights,
                                          std::span<double> grad_out) const override {
        if (position_weights.size() != target_tokens.size())
            throw std::invalid_argument("one weight per target position required");
        if (grad_out.size() != params_.size())
            throw std::invalid_argument("gradient buffer size mismatch");
        const std::vector<int> seq = full_sequence(context_tokens, target_tokens);
        const std::size_t steps = seq.size() - 1;  // step t consumes seq[t], predicts seq[t+1]
        const std::size_t first_target = 1 + context_tokens.size();

        std::vector<std::vector<double>> hiddens(steps + 1, std::vector<double>(h_, 0.0));
        std::vector<std::vector<double>> probs(steps);
        for (std::size_t t = 0; t < steps; ++t) {
            step(seq[t], hiddens[t], hiddens[t + 1]);
            probs[t] = softmax_logits(hiddens[t + 1]);
        }

        auto E = [&](std::size_t row) { return params_.data() + row * d_; };
        const double* W_x = params_.data() + v_ * d_;
        const double* W_h = W_x + h_ * d_;
        const double* W_o = W_h + h_ * h_ + h_;
        auto gE = [&](std::size_t row) { return grad_out.data() + row * d_; };
        double* gW_x = grad_out.data() + v_ * d_;
        double* gW_h = gW_x + h_ * d_;
        double* gb_h = gW_h + h_ * h_;
        double* gW_o = gb_h + h_;
        double* gb_o = gW_o + v_ * h_;

        std::vector<double> da_next(h_, 0.0);  // da_{t+1}, zero past the last step
        for (std::size_t t = steps; t-- > 0;) {
            const std::size_t predicted = t + 1;
            const bool weighted = predicted >= first_target;
            const double w = weighted ? position_weights[predicted - first_target] : 0.0;

            // dh_t+1 from this step's logits plus the carry from step t+1
            std::vector<double> dh(h_, 0.0);
            if (w != 0.0) {
                const int y = seq[predicted];
                for (std::size_t u = 0; u < v_; ++u) {
                    const double dz = w * ((static_cast<int>(u) == y ? 1.0 : 0.0) - probs[t][u]);
                    gb_o[u] += dz;
                    const double* w_row = W_o + u * h_;
                    double* gw_row = gW_o + u * h_;
                    for (std::size_t i = 0; i < h_; ++i) {
                        gw_row[i] += dz * hiddens[t + 1][i];
                        dh[i] += dz * w_row[i];
                    }
                }
            }
            for (std::size_t i = 0; i < h_; ++i)  // carry: dh_t+1 += W_hᵀ da_{t+2}
                for (std::size_t j = 0; j < h_; ++j) dh[j] += W_h[i * h_ + j] * da_next[i];

            std::vector<double> da(h_, 0.0);
            for (std::size_t i = 0; i < h_; ++i)
                da[i] = dh[i] * (1.0 - hiddens[t + 1][i] * hiddens[t + 1][i]);

            const std::size_t x = static_cast<std::size_t>(seq[t]);
            const double* e = E(x);
            double* ge = gE(x);
            for (std::size_t i = 0; i < h_; ++i) {
                gb_h[i] += da[i];
                const double* wx_row = W_x + i * d_;
                double* gwx_row = gW_x + i * d_;
                for (std::size_t j = 0; j < d_; ++j) {
                    gwx_row[j] += da[i] * e[j];
                    ge[j] += da[i] * wx_row[j];
                }
                double* gwh_row = gW_h + i * h_;
                for (std::size_t j = 0; j < h_; ++j) gwh_row[j] += da[i] * hiddens[t][j];
            }
            da_next = std::move(da);
        }
    }

    std::string save_blob() const override {
        nlohmann::json blob;
        blob["kind"] = "toy_lm";
        blob["config"] = {{"vocab", config_.vocab},
                          {"embed_dim", config_.embed_dim},
                          {"hidden_dim", config_.hidden_dim},
                          {"context_window", config_.context_window},
                          {"seed", config_.seed}};
        blob["params"] = params_;
        return blob.dump();
    }

    void load_blob(const std::string& blob) override {
        const auto parsed = nlohmann::json::parse(blob);
        if (parsed.at("kind").get<std::string>() != "toy_lm")
            throw std::runtime_error("checkpoint is not a toy LM blob");
        const auto& cfg = parsed.at("config");
        if (cfg.at("vocab").get<std::vector<std::string>>() != config_.vocab ||
            cfg.at("embed_dim").get<std::size_t>() != d_ ||
            cfg.at("hidden_dim").get<std::size_t>() != h_)
            throw std::runtime_error("checkpoint config does not match this model");
        auto loaded = parsed.at("params").get<std::vector<double>>();
        if (loaded.size() != params_.size())
            throw std::runtime_error("checkpoint parameter count mismatch");
        params_ = std::move(loaded);
    }

private:
    std::vector<int> full_sequence(std::span<const int> context_tokens,
                                   std::span<const int> target_tokens) const {
        std::vector<int> seq;
        seq.reserve(1 + context_tokens.size() + target_tokens.size());
        seq.push_back(bos_id());
        seq.insert(seq.end(), context_tokens.begin(), context_tokens.end());
        seq.insert(seq.end(), target_tokens.begin(), target_tokens.end());
        check_window(seq.size());
        for (int id : seq)
            if (id < 0 || static_cast<std::size_t>(id) >= v_)
                throw std::out_of_range("token id out of vocabulary: " + std::to_string(id));
        return seq;
    }

    void check_window(std::size_t len) const {
        if (len > config_.context_window)
            throw std::invalid_argument("sequence length " + std::to_string(len) +
                                        " exceeds context window " +
                                        std::to_string(config_.context_window));
    }

    // one recurrence step: consumes token id, reads hidden, writes next hidden
    void step(int id, const std::vector<double>& hidden, std::vector<double>& next) const {
        if (id < 0 || static_cast<std::size_t>(id) >= v_)
            throw std::out_of_range("token id out of vocabulary: " + std::to_string(id));
        const double* e = params_.data() + static_cast<std::size_t>(id) * d_;
        const double* W_x = params_.data() + v_ * d_;
        const double* W_h = W_x + h_ * d_;
        const double* b_h = W_h + h_ * h_;
        for (std::size_t i = 0; i < h_; ++i) {
            double a = b_h[i];
            const double* wx_row = W_x + i * d_;
            for (std::size_t j = 0; j < d_; ++j) a += wx_row[j] * e[j];
            const double* wh_row = W_h + i * h_;
            for (std::size_t j = 0; j < h_; ++j) a += wh_row[j] * hidden[j];
            next[i] = std::tanh(a);
        }
    }

    std::vector<double> logits(const std::vector<double>& hidden) const {
        const double* W_o = params_.data() + v_ * d_ + h_ * d_ + h_ * h_ + h_;
        const double* b_o = W_o + v_ * h_;
        std::vector<double> out(v_);
        for (std::size_t u = 0; u < v_; ++u) {
            double z = b_o[u];
            const double* row = W_o + u * h_;
            for (std::size_t i = 0; i < h_; ++i) z += row[i] * hidden[i];
            out[u] = z;
        }
        return out;
    }

    std::vector<double> softmax_logits(const std::vector<double>& hidden) const {
        auto z = logits(hidden);
        const double hi = *std::max_element(z.begin(), z.end());
        double total = 0.0;
        for (double& v : z) {
            v = std::exp(v - hi);
            total += v;
        }
        for (double& v : z) v /= total;
        return z;
    }

    std::vector<double> log_softmax_logits(const std::vector<double>& hidden) const {
        auto z = logits(hidden);
        const double hi = *std::max_element(z.begin(), z.end());
        double total = 0.0;
        for (double v : z) total += std::exp(v - hi);
        const double lse = hi + std::log(total);
        for (double& v : z) v -= lse;
        return z;
    }

    ToyLmConfig config_;
    std::size_t v_ = 0, d_ = 0, h_ = 0;
    std::map<std::string, int> id_of_;
    std::vector<double> params_;
};

struct ToyEncoderConfig {
    std::vector<std::string> vocab;
    std::size_t dim = 8;
    std::uint64_t seed = 0;

    void validate() const {
        if (dim < 2) throw std::invalid_argument("encoder dim must be at least 2");
        if (vocab.empty()) throw std::invalid_argument("encoder vocab is empty");
        for (std::size_t i = 0; i < vocab.size(); ++i)
            for (std::size_t j = i + 1; j < vocab.size(); ++j)
                if (vocab[i] == vocab[j])
                    throw std::invalid_argument("duplicate vocab token: " + vocab[i]);
    }
};

// Sentence embedding as the mean of trainable token embeddings; unknown
// tokens share one reserved row.
class ToyEncoder final : public TrainableSentenceEncoder {
public:
    explicit ToyEncoder(ToyEncoderConfig config) : config_(std::move(config)) {
        config_.validate();
        if (std::find(config_.vocab.begin(), config_.vocab.end(), std::string(kUnkToken)) ==
            config_.vocab.end())
            config_.vocab.emplace_back(kUnkToken);
        for (std::size_t i = 0; i < config_.vocab.size(); ++i)
            id_of_[config_.vocab[i]] = static_cast<int>(i);
        params_.assign(config_.vocab.size() * config_.dim, 0.0);
        Rng rng(mix_seed(config_.seed, 0x746f79656e63ULL));
        for (double& p : params_) p = rng.normal();
    }

    const ToyEncoderConfig& config() const { return config_; }
    std::size_t dim() const override { return config_.dim; }
    bool deterministic() const override { return true; }

    std::span<double> parameters() override { return params_; }
    std::span<const double> parameters() const override { return params_; }

    std::span<double> embedding_row(std::string_view token) {
        const auto it = id_of_.find(std::string(token));
        const std::size_t row =
            it == id_of_.end() ? static_cast<std::size_t>(id_of_.at(std::string(kUnkToken)))
                               : static_cast<std::size_t>(it->second);
        return std::span<double>(params_.data() + row * config_.dim, config_.dim);
    }

    EmbeddingVector embed(const std::string& text) const override {
        const auto rows = token_rows(text);
        if (rows.empty()) throw std::invalid_argument("cannot embed empty text");
        EmbeddingVector out(config_.dim, 0.0);
        for (std::size_t row : rows)
            for (std::size_t j = 0; j < config_.dim; ++j)
                out[j] += params_[row * config_.dim + j];
        for (double& v : out) v /= static_cast<double>(rows.size());
        return out;
    }

    void accumulate_embed_grad(const std::string& text, std::span<const double> embedding_grad,
                               std::span<double> grad_out) const override {
        if (embedding_grad.size() != config_.dim)
            throw std::invalid_argument("embedding gradient dimension mismatch");
        if (grad_out.size() != params_.size())
            throw std::invalid_argument("gradient buffer size mismatch");
        const auto rows = token_rows(text);
        if (rows.empty()) throw std::invalid_argument("cannot embed empty text");
        const double scale = 1.0 / static_cast<double>(rows.size());
        for (std::size_t row : rows)
            for (std::size_t j = 0; j < config_.dim; ++j)
                grad_out[row * config_.dim + j] += scale * embedding_grad[j];
    }

    std::string save_blob() const {
        nlohmann::json blob;
        blob["kind"] = "toy_encoder";
        blob["config"] = {{"vocab", config_.vocab}, {"dim", config_.dim}, {"seed", config_.seed}};
        blob["params"] = params_;
        return blob.dump();
    }

    void load_blob(const std::string& blob) {
        const auto parsed = nlohmann::json::parse(blob);
        if (parsed.at("kind").get<std::string>() != "toy_encoder")
            throw std::runtime_error("checkpoint is not a toy encoder blob");
        const auto& cfg = parsed.at("config");
        if (cfg.at("vocab").get<std::vector<std::string>>() != config_.vocab ||
            cfg.at("dim").get<std::size_t>() != config_.dim)
            throw std::runtime_error("checkpoint config does not match this encoder");
        auto loaded = parsed.at("params").get<std::vector<double>>();
        if (loaded.size() != params_.size())
            throw std::runtime_error("checkpoint parameter count mismatch");
        params_ = std::move(loaded);
    }

private:
    std::vector<std::size_t> token_rows(std::string_view text) const {
        std::vector<std::size_t> rows;
        std::string cur;
        auto flush = [&] {
            if (cur.empty()) return;
            const auto it = id_of_.find(cur);
            rows.push_back(it == id_of_.end()
                               ? static_cast<std::size_t>(id_of_.at(std::string(kUnkToken)))
                               : static_cast<std::size_t>(it->second));
            cur.clear();
        };
        for (char ch : text) {
            if (std::isspace(static_cast<unsigned char>(ch)))
                flush();
            else
                cur += ch;
        }
        flush();
        return rows;
    }

    ToyEncoderConfig config_;
    std::map<std::string, int> id_of_;
    std::vector<double> params_;
};

inline ToyLm create_toy_lm(ToyLmConfig config) { return ToyLm(std::move(config)); }
inline ToyEncoder create_toy_encoder(ToyEncoderConfig config) {
    return ToyEncoder(std::move(config));
}

// Span infiller backed by an autoregressive LM. Extending the span with
// token v scores log P(v | premise, span); ending the span scores the full
// hypothesis continuation, so a completed candidate's total is the joint
// log-likelihood of connective and hypothesis given the premise. Special
// tokens are never proposed as span tokens.
class LmInfiller final : public SpanInfiller {
public:
    explicit LmInfiller(const ToyLm& lm) : lm_(lm) {}

    std::size_t vocab_size() const override { return lm_.vocab_size(); }
    const std::string& token_text(int id) const override {
        return lm_.config().vocab.at(static_cast<std::size_t>(id));
    }
    int end_id() const override { return lm_.eos_id(); }

    std::vector<double> next_span_logprobs(const Sample& sample,
                                           std::span<const int> span_prefix) const override {
        const auto premise_tokens = lm_.tokenize(sample.premise);
        std::vector<int> context = premise_tokens;
        context.insert(context.end(), span_prefix.begin(), span_prefix.end());

        std::vector<int> prefix;
        prefix.reserve(1 + context.size());
        prefix.push_back(lm_.bos_id());
        prefix.insert(prefix.end(), context.begin(), context.end());
        auto out = lm_.next_token_logprobs(prefix);

        const auto hypothesis_tokens = lm_.tokenize(sample.hypothesis);
        if (hypothesis_tokens.empty())
            throw std::invalid_argument("sample " + sample.id + " has an empty hypothesis");
        const auto continuation = lm_.target_position_logprobs(context, hypothesis_tokens);
        double continuation_total = 0.0;
        for (double lp : continuation) continuation_total += lp;

        const double neg_inf = -std::numeric_limits<double>::infinity();
        for (int special : {lm_.bos_id(), lm_.sep_id(), lm_.mask_id(), lm_.unk_id()})
            out[static_cast<std::size_t>(special)] = neg_inf;
        out[static_cast<std::size_t>(end_id())] = continuation_total;
        return out;
    }

private:
    const ToyLm& lm_;
};

// Central-difference gradient check over one parameter block. Returns the
// max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <typename LossFn>
double finite_diff_check(std::span<double> params, std::span<const double> analytic_grad,
                         LossFn&& loss, double epsilon) {
    if (epsilon <= 0.0) throw std::invalid_argument("epsilon must be positive");
    if (params.size() != analytic_grad.size())
        throw std::invalid_argument("gradient size does not match parameter count");
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + epsilon;
        const double up = loss();
        params[i] = saved - epsilon;
        const double down = loss();
        params[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw std::runtime_error("non-finite loss while probing parameter " +
                                     std::to_string(i));
        const double numeric = (up - down) / (2.0 * epsilon);
        const double analytic = analytic_grad[i];
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace nligen
