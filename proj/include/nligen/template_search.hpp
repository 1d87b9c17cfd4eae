#pragma once

#include <cstddef>
#include <fstream>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nligen/corpus.hpp"
#include "nligen/generation.hpp"
#include "nligen/metrics.hpp"
#include "nligen/templates.hpp"
#include "nligen/training.hpp"

namespace nligen {

enum class ScoreMetric { Rouge2, NegLoss, Bleu4 };

inline std::string_view score_metric_name(ScoreMetric m) {
    switch (m) {
        case ScoreMetric::Rouge2: return "rouge2";
        case ScoreMetric::NegLoss: return "neg_loss";
        case ScoreMetric::Bleu4: return "bleu4";
    }
    throw std::logic_error("unreachable");
}

inline ScoreMetric parse_score_metric(std::string_view name) {
    for (ScoreMetric m : {ScoreMetric::Rouge2, ScoreMetric::NegLoss, ScoreMetric::Bleu4})
        if (score_metric_name(m) == name) return m;
    throw std::invalid_argument("unknown score metric: " + std::string(name));
}

// Scoring procedure handle: a factory producing a fresh generator at the
// shared initialization, a reduced training budget, and the dev metric.
// config.epochs = 0 scores the untrained model.
struct TemplateScorer {
    std::function<std::unique_ptr<TrainableLanguageModel>()> make_lm;
    TrainConfig config = reduced_budget();
    ScoreMetric metric = ScoreMetric::Rouge2;

    static TrainConfig reduced_budget() {
        TrainConfig c;
        c.epochs = 5;
        c.eval_from_epoch = 5;
        c.batch_size = 8;
        c.learning_rate = 0.02;
        c.warmup_steps = 10;
        return c;
    }
};

namespace detail {

// The same pattern for every condition, so condition-k buckets render the
// candidate under test regardless of the candidate's own condition.
inline TemplateSet uniform_template_set(const Template& t) {
    TemplateSet set;
    for (Condition c : kAllConditions)
        set.per_condition[c] = Template::make(c, t.pattern, t.origin, t.empty_connective);
    return set;
}

}  // namespace detail

// S(D_train, D_dev, T): fine-tune a fresh generator on the train bucket with
// the candidate as the prompt for every sample, then score the dev bucket.
inline double score_template(const TemplateScorer& scorer, const Template& tmpl,
                             const std::vector<Sample>& train_bucket,
                             const std::vector<Sample>& dev_bucket) {
    if (!scorer.make_lm) throw std::invalid_argument("template scorer lacks a generator factory");
    if (train_bucket.empty() || dev_bucket.empty())
        throw std::invalid_argument("score_template: empty bucket");
    const TemplateSet set = detail::uniform_template_set(tmpl);
    auto lm = scorer.make_lm();
    if (scorer.config.epochs > 0) {
        TrainConfig cfg = scorer.config;
        cfg.eval_from_epoch = cfg.epochs;  // only the final state is scored
        FewShotSplit split;
        split.seed = cfg.seed;
        split.k_per_condition = train_bucket.size();
        split.train = train_bucket;
        split.dev = dev_bucket;
        finetune(*lm, Regime::Prompt, &set, nullptr, split, cfg);
    }

    double total = 0.0;
    for (const auto& s : dev_bucket) {
        const GeneratorContext ctx{render(set.for_condition(s.condition), s.premise),
                                   kMaxLengthNoDemo};
        switch (scorer.metric) {
            case ScoreMetric::NegLoss:
                total += sequence_logprob(*lm, ctx, s.hypothesis);
                break;
            case ScoreMetric::Rouge2: {
                const auto decoded = decode(*lm, ctx, DecodeStrategy::greedy(), lm->eos_id());
                total += decoded.empty() ? 0.0 : rouge2(decoded, s.hypothesis);
                break;
            }
            case ScoreMetric::Bleu4: {
                const auto decoded = decode(*lm, ctx, DecodeStrategy::greedy(), lm->eos_id());
                total += decoded.empty() ? 0.0 : bleu4(decoded, {s.hypothesis});
                break;
            }
        }
    }
    return total / static_cast<double>(dev_bucket.size());
}

// Row t, column k: the candidate scored on condition-k train/dev buckets.
inline ScoreMatrix build_score_matrix(const TemplateScorer& scorer,
                                      const std::vector<Template>& candidates,
                                      Condition condition,
                                      const ConditionMap<std::vector<Sample>>& train_buckets,
                                      const ConditionMap<std::vector<Sample>>& dev_buckets) {
    if (candidates.empty()) throw std::invalid_argument("build_score_matrix: no candidates");
    std::vector<std::vector<double>> scores;
    scores.reserve(candidates.size());
    for (const auto& t : candidates) {
        if (t.condition != condition)
            throw std::invalid_argument("candidate condition does not match matrix condition");
        std::vector<double> row(kAllConditions.size());
        for (Condition k : kAllConditions)
            row[condition_index(k)] = score_template(scorer, t, train_buckets[k], dev_buckets[k]);
        scores.push_back(std::move(row));
    }
    return ScoreMatrix::make(condition, candidates, scores);
}

struct TemplateSearchResult {
    TemplateSet selected;
    ConditionMap<ScoreMatrix> matrices;
    SelectionStrategy strategy = SelectionStrategy::Top;
};

// Full search: per condition, propose candidates from the infiller (or take
// them precomputed), score every candidate on every condition's buckets, and
// select by the requested strategy.
inline TemplateSearchResult search_templates(
    const std::function<std::vector<Template>(Condition, const std::vector<Sample>&)>& propose,
    const TemplateScorer& scorer, const FewShotSplit& split, SelectionStrategy strategy) {
    if (!propose) throw std::invalid_argument("search_templates: no candidate source");
    const auto train_buckets = partition_by_condition(split.train);
    const auto dev_buckets = partition_by_condition(split.dev);
    for (Condition c : kAllConditions)
        if (train_buckets[c].empty() || dev_buckets[c].empty())
            throw std::invalid_argument("search_templates: split lacks " +
                                        std::string(condition_name(c)) + " samples");

    TemplateSearchResult result;
    result.strategy = strategy;
    for (Condition c : kAllConditions) {
        auto candidates = propose(c, train_buckets[c]);
        if (candidates.empty())
            throw std::runtime_error("no template candidates for " +
                                     std::string(condition_name(c)));
        result.matrices[c] =
            build_score_matrix(scorer, candidates, c, train_buckets, dev_buckets);
        result.selected.per_condition[c] = select_template(result.matrices[c], strategy, c);
    }
    result.selected.validate();
    return result;
}

// Candidate source backed by a span infiller (beam search over connectives).
inline std::function<std::vector<Template>(Condition, const std::vector<Sample>&)>
infiller_candidate_source(const SpanInfiller& infiller, std::size_t beam_width,
                          std::size_t max_span_tokens = 5) {
    return [&infiller, beam_width, max_span_tokens](Condition c,
                                                    const std::vector<Sample>& bucket) {
        return generate_candidate_templates(infiller, bucket, c, beam_width, max_span_tokens);
    };
}

// Candidate source from a json file: {"entailment": ["conn", ...], ...}.
// One connective per entry; an empty string is the empty connective.
inline ConditionMap<std::vector<Template>> load_candidate_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open candidate file: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    ConditionMap<std::vector<Template>> out;
    for (Condition c : kAllConditions) {
        const std::string name(condition_name(c));
        if (!doc.contains(name))
            throw std::runtime_error(path + ": missing candidate list for " + name);
        for (const auto& conn : doc.at(name)) {
            out[c].push_back(
                connective_template(c, conn.get<std::string>(), TemplateOrigin::Generated));
        }
        if (out[c].empty()) throw std::runtime_error(path + ": empty candidate list for " + name);
    }
    return out;
}

inline std::function<std::vector<Template>(Condition, const std::vector<Sample>&)>
file_candidate_source(ConditionMap<std::vector<Template>> candidates) {
    return [candidates = std::move(candidates)](Condition c, const std::vector<Sample>&) {
        return candidates[c];
    };
}

inline void save_search_result(const std::string& path, const TemplateSearchResult& result) {
    nlohmann::json doc;
    doc["strategy"] =
        result.strategy == SelectionStrategy::Top ? "top" : "max_margin";
    for (Condition c : kAllConditions) {
        const auto& m = result.matrices[c];
        nlohmann::json entry;
        entry["selected"] = result.selected.for_condition(c).pattern;
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t t = 0; t < m.candidates.size(); ++t)
            rows.push_back({{"pattern", m.candidates[t].pattern},
                            {"scores", m.scores[t]},
                            {"margin", margin_score(m, t)}});
        entry["candidates"] = rows;
        doc[std::string(condition_name(c))] = entry;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write search result: " + path);
    out << doc.dump(2) << '\n';
}

}  // namespace nligen
