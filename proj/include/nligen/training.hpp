#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nligen/corpus.hpp"
#include "nligen/generation.hpp"
#include "nligen/metrics.hpp"
#include "nligen/retrieval.hpp"
#include "nligen/rng.hpp"
#include "nligen/templates.hpp"

namespace nligen {

enum class Regime { Standard, Prompt, PromptStatic, PromptDynamic };

inline std::string_view regime_name(Regime r) {
    switch (r) {
        case Regime::Standard: return "standard";
        case Regime::Prompt: return "prompt";
        case Regime::PromptStatic: return "prompt_static";
        case Regime::PromptDynamic: return "prompt_dynamic";
    }
    throw std::logic_error("unreachable");
}

inline Regime parse_regime(std::string_view name) {
    for (Regime r : {Regime::Standard, Regime::Prompt, Regime::PromptStatic,
                     Regime::PromptDynamic})
        if (regime_name(r) == name) return r;
    throw std::invalid_argument("unknown regime: " + std::string(name));
}

struct TrainConfig {
    double learning_rate = 5e-5;
    std::size_t batch_size = 32;
    std::size_t warmup_steps = 10;
    std::size_t epochs = 30;
    std::size_t eval_from_epoch = 10;
    std::size_t top_k = 4;            // dynamic regime only
    std::uint64_t seed = 42;
    double retriever_lr_scale = 1.0;  // dynamic regime only

    void validate() const {
        if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
        if (epochs < 1) throw std::invalid_argument("epochs must be positive");
        if (eval_from_epoch < 1 || eval_from_epoch > epochs)
            throw std::invalid_argument("eval_from_epoch must lie in [1, epochs]");
        if (top_k < 1) throw std::invalid_argument("top_k must be at least 1");
        if (!(retriever_lr_scale > 0.0))
            throw std::invalid_argument("retriever_lr_scale must be positive");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"learning_rate", c.learning_rate},
         {"batch_size", c.batch_size},
         {"warmup_steps", c.warmup_steps},
         {"epochs", c.epochs},
         {"eval_from_epoch", c.eval_from_epoch},
         {"top_k", c.top_k},
         {"seed", c.seed},
         {"retriever_lr_scale", c.retriever_lr_scale}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("batch_size").get_to(c.batch_size);
    j.at("warmup_steps").get_to(c.warmup_steps);
    j.at("epochs").get_to(c.epochs);
    j.at("eval_from_epoch").get_to(c.eval_from_epoch);
    j.at("top_k").get_to(c.top_k);
    j.at("seed").get_to(c.seed);
    j.at("retriever_lr_scale").get_to(c.retriever_lr_scale);
}

// Plain key=value config file; '#' starts a comment.
inline TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    TrainConfig c;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string text = detail::trim(line);
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected key=value");
        const std::string key = detail::trim(text.substr(0, eq));
        const std::string value = detail::trim(text.substr(eq + 1));
        static const std::vector<std::string> known = {
            "learning_rate", "batch_size", "warmup_steps",       "epochs",
            "eval_from_epoch", "top_k",    "seed",               "retriever_lr_scale"};
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": unknown key: " +
                                     key);
        try {
            if (key == "learning_rate")
                c.learning_rate = std::stod(value);
            else if (key == "batch_size")
                c.batch_size = static_cast<std::size_t>(std::stoull(value));
            else if (key == "warmup_steps")
                c.warmup_steps = static_cast<std::size_t>(std::stoull(value));
            else if (key == "epochs")
                c.epochs = static_cast<std::size_t>(std::stoull(value));
            else if (key == "eval_from_epoch")
                c.eval_from_epoch = static_cast<std::size_t>(std::stoull(value));
            else if (key == "top_k")
                c.top_k = static_cast<std::size_t>(std::stoull(value));
            else if (key == "seed")
                c.seed = std::stoull(value);
            else if (key == "retriever_lr_scale")
                c.retriever_lr_scale = std::stod(value);
        } catch (const std::exception&) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad value for " +
                                     key + ": " + value);
        }
    }
    c.validate();
    return c;
}

struct Checkpoint {
    std::size_t epoch = 0;
    std::string generator_state;
    std::optional<std::string> retriever_state;
    std::map<std::string, double> dev_metrics;
};

// The dev metric that picks checkpoints.
inline constexpr std::string_view kSelectionMetric = "rouge2";

inline const Checkpoint& select_checkpoint(const std::vector<Checkpoint>& checkpoints,
                                           std::string_view metric) {
    if (checkpoints.empty()) throw std::invalid_argument("select_checkpoint: no checkpoints");
    const std::string key(metric);
    const Checkpoint* best = nullptr;
    for (const auto& c : checkpoints) {
        const auto it = c.dev_metrics.find(key);
        if (it == c.dev_metrics.end())
            throw std::invalid_argument("checkpoint at epoch " + std::to_string(c.epoch) +
                                        " lacks metric " + key);
        if (best == nullptr || it->second > best->dev_metrics.at(key)) best = &c;
    }
    return *best;  // strict > keeps the earliest epoch on ties
}

// Adam with bias correction; one instance per parameter block.
class Adam {
public:
    explicit Adam(std::size_t size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : m_(size, 0.0), v_(size, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::span<double> params, std::span<const double> grad, double lr) {
        if (params.size() != m_.size() || grad.size() != m_.size())
            throw std::invalid_argument("optimizer size mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
            params[i] -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
        }
    }

private:
    std::vector<double> m_, v_;
    double beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

// loss = weight · (−Σ_j log P(target_j | context, target_{<j})); the gradient
// lands in lm_grad. Training targets end with the end token so decoding
// learns to stop.
inline double sequence_loss_and_grad(const TrainableLanguageModel& lm,
                                     const GeneratorContext& context, std::string_view target,
                                     double weight, std::span<double> lm_grad,
                                     bool append_eos = true) {
    const auto scored = score_sequence(lm, context, target, append_eos);
    const auto context_tokens = lm.tokenize(context.text);
    const std::vector<double> weights(scored.tokens.size(), -weight);
    lm.accumulate_weighted_logprob_grad(context_tokens, scored.tokens, weights, lm_grad);
    return -weight * scored.total();
}

// loss = weight · (−log marginal likelihood over demo_set); gradients land in
// lm_grad and enc_grad. Per target position j and demonstration k the LM
// position weight is −weight · w_k p_{j,k} / m_j, and the retrieval weight
// gradient is −weight · Σ_j p_{j,k} / m_j, pushed through the softmax and the
// cosine similarities into the encoder embeddings.
inline double marginal_loss_and_grad(const TrainableLanguageModel& lm,
                                     const TrainableSentenceEncoder& embedder,
                                     const Template& tmpl, const Sample& query,
                                     const std::vector<Sample>& demo_set, double weight,
                                     std::span<double> lm_grad, std::span<double> enc_grad,
                                     std::string_view separator = "[SEP]",
                                     std::size_t max_length = kMaxLengthWithDemo,
                                     bool append_eos = true) {
    const auto breakdown =
        marginal_breakdown(lm, embedder, tmpl, query, demo_set, separator, max_length, append_eos);
    auto target_tokens = lm.tokenize(query.hypothesis);
    if (append_eos) target_tokens.push_back(lm.eos_id());
    const std::size_t n = breakdown.mixture_logprobs.size();

    std::vector<double> weight_grads(demo_set.size(), 0.0);  // dLoss/dw_k
    for (std::size_t k = 0; k < demo_set.size(); ++k) {
        std::vector<double> position_weights(n);
        double wg = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double ratio =
                std::exp(breakdown.position_logprobs[k][j] - breakdown.mixture_logprobs[j]);
            position_weights[j] = -weight * breakdown.weights[k] * ratio;
            wg += ratio;
        }
        weight_grads[k] = -weight * wg;
        const GeneratorContext ctx{render(tmpl, query.premise, std::nullopt, &demo_set[k],
                                          separator),
                                   max_length};
        lm.accumulate_weighted_logprob_grad(lm.tokenize(ctx.text), target_tokens, position_weights,
                                            lm_grad);
    }

    // softmax backprop: dLoss/dsim_t = w_t (g_t − Σ_k g_k w_k)
    double dot = 0.0;
    for (std::size_t k = 0; k < demo_set.size(); ++k) dot += weight_grads[k] * breakdown.weights[k];

    const EmbeddingVector query_emb = embedder.embed(query.premise);
    const double qn = std::sqrt(std::inner_product(query_emb.begin(), query_emb.end(),
                                                   query_emb.begin(), 0.0));
    EmbeddingVector query_grad(query_emb.size(), 0.0);
    for (std::size_t t = 0; t < demo_set.size(); ++t) {
        const double dsim = breakdown.weights[t] * (weight_grads[t] - dot);
        if (dsim == 0.0) continue;
        const EmbeddingVector demo_emb = embedder.embed(demo_set[t].premise);
        const double dn = std::sqrt(std::inner_product(demo_emb.begin(), demo_emb.end(),
                                                       demo_emb.begin(), 0.0));
        const double sim = cosine_similarity(query_emb, demo_emb);
        EmbeddingVector demo_grad(demo_emb.size(), 0.0);
        for (std::size_t j = 0; j < query_emb.size(); ++j) {
            query_grad[j] += dsim * (demo_emb[j] / (qn * dn) - sim * query_emb[j] / (qn * qn));
            demo_grad[j] = dsim * (query_emb[j] / (qn * dn) - sim * demo_emb[j] / (dn * dn));
        }
        embedder.accumulate_embed_grad(demo_set[t].premise, demo_grad, enc_grad);
    }
    embedder.accumulate_embed_grad(query.premise, query_grad, enc_grad);

    return -weight * breakdown.total;
}

using DynamicStepObserver = std::function<void(
    std::size_t epoch, std::size_t step, const Sample& query, const std::vector<Sample>& demo_set)>;

namespace detail {

inline std::vector<Sample> pool_excluding(const std::vector<Sample>& pool, const std::string& id) {
    std::vector<Sample> out;
    out.reserve(pool.size());
    for (const auto& s : pool)
        if (s.id != id) out.push_back(s);
    return out;
}

inline GeneratorContext eval_context(Regime regime, const TemplateSet* templates,
                                     const SentenceEncoder* embedder,
                                     const ConditionMap<std::vector<Sample>>& train_pools,
                                     const Sample& query) {
    switch (regime) {
        case Regime::Standard:
            return {standard_format_input(query.condition, query.premise), kMaxLengthNoDemo};
        case Regime::Prompt:
            return {render(templates->for_condition(query.condition), query.premise),
                    kMaxLengthNoDemo};
        case Regime::PromptStatic:
        case Regime::PromptDynamic: {
            const auto pool = pool_excluding(train_pools[query.condition], query.id);
            const auto top = top_k_candidates(*embedder, query, pool, 1);
            return {render(templates->for_condition(query.condition), query.premise, std::nullopt,
                           &top.front()),
                    kMaxLengthWithDemo};
        }
    }
    throw std::logic_error("unreachable");
}

inline std::map<std::string, double> evaluate_dev(const LanguageModel& lm, Regime regime,
                                                  const TemplateSet* templates,
                                                  const SentenceEncoder* embedder,
                                                  const ConditionMap<std::vector<Sample>>& pools,
                                                  const std::vector<Sample>& dev) {
    double rouge_sum = 0.0;
    double loss_sum = 0.0;
    for (const auto& s : dev) {
        const auto ctx = eval_context(regime, templates, embedder, pools, s);
        const std::string decoded = decode(lm, ctx, DecodeStrategy::greedy(), lm.eos_id());
        rouge_sum += decoded.empty() ? 0.0 : rouge2(decoded, s.hypothesis);
        loss_sum += -sequence_logprob(lm, ctx, s.hypothesis);
    }
    const double n = static_cast<double>(dev.size());
    return {{std::string(kSelectionMetric), rouge_sum / n}, {"dev_loss", loss_sum / n}};
}

struct TrainInputs {
    TrainableLanguageModel& lm;
    Regime regime;
    const TemplateSet* templates;
    const SentenceEncoder* embedder;             // demo sampling and dev eval
    TrainableSentenceEncoder* trained_embedder;  // dynamic only
    const FewShotSplit& split;
    const TrainConfig& config;
    const DynamicStepObserver* observer;
    std::vector<double>* epoch_losses;
};

inline std::vector<Checkpoint> run_training(const TrainInputs& in) {
    in.config.validate();
    const bool needs_templates = in.regime != Regime::Standard;
    const bool needs_embedder =
        in.regime == Regime::PromptStatic || in.regime == Regime::PromptDynamic;
    if (needs_templates && in.templates == nullptr)
        throw std::invalid_argument(std::string(regime_name(in.regime)) +
                                    " training requires a template set");
    if (needs_embedder && in.embedder == nullptr)
        throw std::invalid_argument(std::string(regime_name(in.regime)) +
                                    " training requires a sentence encoder");
    if (in.regime == Regime::PromptDynamic && in.trained_embedder == nullptr)
        throw std::invalid_argument("dynamic training requires a trainable sentence encoder");
    if (in.split.train.empty()) throw std::invalid_argument("empty training split");
    if (in.split.dev.empty()) throw std::invalid_argument("empty dev split");

    const auto& train = in.split.train;
    const auto pools = partition_by_condition(train);
    if (needs_embedder)
        for (Condition c : kAllConditions)
            if (pools[c].size() < 2)
                throw std::invalid_argument(
                    "demonstration pool for " + std::string(condition_name(c)) +
                    " has fewer than 2 samples; nothing to retrieve after excluding the query");

    const std::size_t lm_size = in.lm.parameters().size();
    const std::size_t enc_size =
        in.regime == Regime::PromptDynamic ? in.trained_embedder->parameters().size() : 0;
    std::vector<double> lm_grad(lm_size, 0.0);
    std::vector<double> enc_grad(enc_size, 0.0);
    Adam adam_lm(lm_size);
    Adam adam_enc(enc_size);

    std::vector<Checkpoint> checkpoints;
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= in.config.epochs; ++epoch) {
        std::vector<std::size_t> order(train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(mix_seed(in.config.seed, 0x657368756666ULL, epoch));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        std::size_t epoch_batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += in.config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + in.config.batch_size);
            ++step;
            std::fill(lm_grad.begin(), lm_grad.end(), 0.0);
            std::fill(enc_grad.begin(), enc_grad.end(), 0.0);
            const double weight = 1.0 / static_cast<double>(end - begin);

            double batch_loss = 0.0;
            for (std::size_t pos = begin; pos < end; ++pos) {
                const std::size_t idx = order[pos];
                const Sample& q = train[idx];
                switch (in.regime) {
                    case Regime::Standard: {
                        const GeneratorContext ctx{
                            standard_format_input(q.condition, q.premise), kMaxLengthNoDemo};
                        batch_loss +=
                            sequence_loss_and_grad(in.lm, ctx, q.hypothesis, weight, lm_grad);
                        break;
                    }
                    case Regime::Prompt: {
                        const GeneratorContext ctx{
                            render(in.templates->for_condition(q.condition), q.premise),
                            kMaxLengthNoDemo};
                        batch_loss +=
                            sequence_loss_and_grad(in.lm, ctx, q.hypothesis, weight, lm_grad);
                        break;
                    }
                    case Regime::PromptStatic: {
                        const auto pool = pool_excluding(pools[q.condition], q.id);
                        Rng demo_rng(
                            mix_seed(mix_seed(in.config.seed, 0x64656d6fULL), epoch, idx));
                        const Sample demo =
                            static_sample_demo(*in.embedder, q, pool, demo_rng);
                        const GeneratorContext ctx{
                            render(in.templates->for_condition(q.condition), q.premise,
                                   std::nullopt, &demo),
                            kMaxLengthWithDemo};
                        batch_loss +=
                            sequence_loss_and_grad(in.lm, ctx, q.hypothesis, weight, lm_grad);
                        break;
                    }
                    case Regime::PromptDynamic: {
                        const auto pool = pool_excluding(pools[q.condition], q.id);
                        const auto demo_set = top_k_candidates(*in.trained_embedder, q, pool,
                                                               in.config.top_k);
                        if (in.observer && *in.observer) (*in.observer)(epoch, step, q, demo_set);
                        batch_loss += marginal_loss_and_grad(
                            in.lm, *in.trained_embedder, in.templates->for_condition(q.condition),
                            q, demo_set, weight, lm_grad, enc_grad);
                        break;
                    }
                }
            }
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("training diverged: non-finite loss at step " +
                                         std::to_string(step));

            const double warm =
                in.config.warmup_steps == 0
                    ? 1.0
                    : std::min(1.0, static_cast<double>(step) /
                                        static_cast<double>(in.config.warmup_steps));
            const double lr = in.config.learning_rate * warm;
            adam_lm.step(in.lm.parameters(), lm_grad, lr);
            if (in.regime == Regime::PromptDynamic)
                adam_enc.step(in.trained_embedder->parameters(), enc_grad,
                              lr * in.config.retriever_lr_scale);
            epoch_loss += batch_loss;
            ++epoch_batches;
        }
        if (in.epoch_losses)
            in.epoch_losses->push_back(epoch_loss / static_cast<double>(epoch_batches));

        if (epoch >= in.config.eval_from_epoch) {
            Checkpoint c;
            c.epoch = epoch;
            c.generator_state = in.lm.save_blob();
            if (in.regime == Regime::PromptDynamic)
                c.retriever_state = in.trained_embedder->save_blob();
            c.dev_metrics = evaluate_dev(in.lm, in.regime, in.templates, in.embedder, pools,
                                         in.split.dev);
            checkpoints.push_back(std::move(c));
        }
    }
    return checkpoints;
}

}  // namespace detail

inline std::vector<Checkpoint> finetune(TrainableLanguageModel& lm, Regime regime,
                                        const TemplateSet* templates,
                                        const SentenceEncoder* embedder,
                                        const FewShotSplit& split, const TrainConfig& config,
                                        std::vector<double>* epoch_losses = nullptr) {
    if (regime == Regime::PromptDynamic)
        throw std::invalid_argument("use train_dynamic for the dynamic regime");
    detail::TrainInputs in{lm,    regime, templates, embedder,     nullptr,
                           split, config, nullptr,   epoch_losses};
    return detail::run_training(in);
}

inline std::vector<Checkpoint> train_dynamic(TrainableLanguageModel& lm,
                                             TrainableSentenceEncoder& embedder,
                                             const TemplateSet& templates,
                                             const FewShotSplit& split, const TrainConfig& config,
                                             const DynamicStepObserver& observer = {},
                                             std::vector<double>* epoch_losses = nullptr) {
    detail::TrainInputs in{lm,        Regime::PromptDynamic, &templates, &embedder, &embedder,
                           split,     config,                &observer,  epoch_losses};
    return detail::run_training(in);
}

// On-disk run layout: manifest.json plus one json file per checkpoint.
inline void save_run(const std::string& dir, Regime regime, const TemplateSet* templates,
                     const TrainConfig& config, int split_seed,
                     const std::vector<Checkpoint>& checkpoints) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["regime"] = std::string(regime_name(regime));
    manifest["split_seed"] = split_seed;
    manifest["config"] = config;
    if (templates != nullptr) {
        nlohmann::json t;
        for (Condition c : kAllConditions)
            t[std::string(condition_name(c))] = templates->for_condition(c).pattern;
        manifest["templates"] = t;
    } else {
        manifest["templates"] = nullptr;
    }
    nlohmann::json list = nlohmann::json::array();
    for (const auto& c : checkpoints) {
        const std::string name = "checkpoint_epoch_" + std::to_string(c.epoch) + ".json";
        nlohmann::json ck;
        ck["epoch"] = c.epoch;
        ck["generator_state"] = c.generator_state;
        if (c.retriever_state)
            ck["retriever_state"] = *c.retriever_state;
        else
            ck["retriever_state"] = nullptr;
        ck["dev_metrics"] = c.dev_metrics;
        std::ofstream out(fs::path(dir) / name);
        if (!out) throw std::runtime_error("cannot write checkpoint: " + name);
        out << ck.dump(2) << '\n';
        list.push_back({{"epoch", c.epoch}, {"file", name}, {"dev_metrics", c.dev_metrics}});
    }
    manifest["checkpoints"] = list;
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw std::runtime_error("cannot write manifest under " + dir);
    out << manifest.dump(2) << '\n';
}

struct LoadedRun {
    nlohmann::json manifest;
    std::vector<Checkpoint> checkpoints;
};

inline LoadedRun load_run(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw std::runtime_error("cannot open manifest under " + dir);
    LoadedRun run;
    in >> run.manifest;
    for (const auto& entry : run.manifest.at("checkpoints")) {
        std::ifstream ck_in(fs::path(dir) / entry.at("file").get<std::string>());
        if (!ck_in)
            throw std::runtime_error("missing checkpoint file " +
                                     entry.at("file").get<std::string>());
        nlohmann::json ck;
        ck_in >> ck;
        Checkpoint c;
        c.epoch = ck.at("epoch").get<std::size_t>();
        c.generator_state = ck.at("generator_state").get<std::string>();
        if (!ck.at("retriever_state").is_null())
            c.retriever_state = ck.at("retriever_state").get<std::string>();
        c.dev_metrics = ck.at("dev_metrics").get<std::map<std::string, double>>();
        run.checkpoints.push_back(std::move(c));
    }
    return run;
}

}  // namespace nligen
