#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
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
#include "nligen/synthetic.hpp"
#include "nligen/template_search.hpp"
#include "nligen/templates.hpp"
#include "nligen/toy_models.hpp"
#include "nligen/training.hpp"

namespace nligen {

enum class TemplateSource { Manual, SearchTop, SearchMm };
enum class RetrieverKind { None, Random, Static, Dynamic };
enum class BackendKind { Toy, External };

inline std::string_view template_source_name(TemplateSource s) {
    switch (s) {
        case TemplateSource::Manual: return "manual";
        case TemplateSource::SearchTop: return "search_top";
        case TemplateSource::SearchMm: return "search_mm";
    }
    throw std::logic_error("unreachable");
}

inline TemplateSource parse_template_source(std::string_view name) {
    for (TemplateSource s :
         {TemplateSource::Manual, TemplateSource::SearchTop, TemplateSource::SearchMm})
        if (template_source_name(s) == name) return s;
    throw std::invalid_argument("unknown template source: " + std::string(name));
}

inline std::string_view retriever_name(RetrieverKind r) {
    switch (r) {
        case RetrieverKind::None: return "none";
        case RetrieverKind::Random: return "random";
        case RetrieverKind::Static: return "static";
        case RetrieverKind::Dynamic: return "dynamic";
    }
    throw std::logic_error("unreachable");
}

inline RetrieverKind parse_retriever(std::string_view name) {
    for (RetrieverKind r : {RetrieverKind::None, RetrieverKind::Random, RetrieverKind::Static,
                            RetrieverKind::Dynamic})
        if (retriever_name(r) == name) return r;
    throw std::invalid_argument("unknown retriever: " + std::string(name));
}

inline std::string_view backend_name(BackendKind b) {
    return b == BackendKind::Toy ? "toy" : "external";
}

inline BackendKind parse_backend(std::string_view name) {
    if (name == "toy") return BackendKind::Toy;
    if (name == "external") return BackendKind::External;
    throw std::invalid_argument("unknown backend: " + std::string(name));
}

struct ExperimentSpec {
    std::string train_path;  // pool the few-shot splits are sampled from
    std::string test_path;   // held-out evaluation samples
    Regime regime = Regime::Prompt;
    TemplateSource template_source = TemplateSource::Manual;
    RetrieverKind retriever = RetrieverKind::None;
    BackendKind backend = BackendKind::Toy;
    std::vector<std::uint64_t> seeds = {13, 21, 42, 87, 100};
    std::size_t k_per_condition = 8;
    TrainConfig train;
    std::string output_dir;

    std::string templates_path;   // explicit template set file (optional)
    std::string candidates_path;  // precomputed search candidates (optional)
    std::string classifier_path;  // precomputed classifier predictions (optional)
    std::size_t search_beam_width = 8;
    TrainConfig scorer_config = TemplateScorer::reduced_budget();
    ScoreMetric score_metric = ScoreMetric::Rouge2;
    std::size_t decode_beam = 1;  // 1 = greedy

    std::size_t lm_embed_dim = 12;
    std::size_t lm_hidden_dim = 24;
    std::size_t encoder_dim = 12;

    void validate() const {
        if (train_path.empty() || test_path.empty())
            throw std::invalid_argument("spec needs train and test dataset paths");
        if (output_dir.empty()) throw std::invalid_argument("spec needs an output directory");
        if (seeds.empty()) throw std::invalid_argument("spec needs at least one seed");
        if (k_per_condition < 1) throw std::invalid_argument("k_per_condition must be positive");
        if (decode_beam < 1) throw std::invalid_argument("decode_beam must be positive");
        train.validate();
        if (backend == BackendKind::External)
            throw std::invalid_argument(
                "the external backend is a documented configuration, not a runnable one; "
                "see README section \"External backends\"");
        switch (regime) {
            case Regime::Standard:
                if (template_source != TemplateSource::Manual || !templates_path.empty())
                    throw std::invalid_argument(
                        "templates are unused in the standard regime; drop the template options");
                [[fallthrough]];
            case Regime::Prompt:
                if (retriever != RetrieverKind::None)
                    throw std::invalid_argument(std::string(regime_name(regime)) +
                                                " regime uses no retriever");
                break;
            case Regime::PromptStatic:
                if (retriever != RetrieverKind::Static && retriever != RetrieverKind::Random)
                    throw std::invalid_argument(
                        "prompt_static regime needs retriever=static or retriever=random");
                break;
            case Regime::PromptDynamic:
                if (retriever != RetrieverKind::Dynamic)
                    throw std::invalid_argument("prompt_dynamic regime needs retriever=dynamic");
                break;
        }
        if (!templates_path.empty() && template_source != TemplateSource::Manual)
            throw std::invalid_argument(
                "an explicit template file and template search are mutually exclusive");
    }
};

inline void to_json(nlohmann::json& j, const ExperimentSpec& s) {
    j = {{"train_path", s.train_path},
         {"test_path", s.test_path},
         {"regime", std::string(regime_name(s.regime))},
         {"template_source", std::string(template_source_name(s.template_source))},
         {"retriever", std::string(retriever_name(s.retriever))},
         {"backend", std::string(backend_name(s.backend))},
         {"seeds", s.seeds},
         {"k_per_condition", s.k_per_condition},
         {"train", s.train},
         {"output_dir", s.output_dir},
         {"templates_path", s.templates_path},
         {"candidates_path", s.candidates_path},
         {"classifier_path", s.classifier_path},
         {"search_beam_width", s.search_beam_width},
         {"score_metric", std::string(score_metric_name(s.score_metric))},
         {"decode_beam", s.decode_beam},
         {"lm_embed_dim", s.lm_embed_dim},
         {"lm_hidden_dim", s.lm_hidden_dim},
         {"encoder_dim", s.encoder_dim}};
}

// Row label in reports: regime, template source, retriever.
inline std::string spec_label(const ExperimentSpec& spec) {
    if (spec.regime == Regime::Standard) return "standard";
    std::string label = "prompt_";
    switch (spec.template_source) {
        case TemplateSource::Manual: label += "man"; break;
        case TemplateSource::SearchTop: label += "top"; break;
        case TemplateSource::SearchMm: label += "mm"; break;
    }
    if (spec.retriever != RetrieverKind::None)
        label += "+" + std::string(retriever_name(spec.retriever));
    return label;
}

inline DatasetFormat infer_format(const std::string& path) {
    return path.size() >= 4 && path.substr(path.size() - 4) == ".tsv" ? DatasetFormat::Tsv
                                                                      : DatasetFormat::Jsonl;
}

inline std::vector<Sample> load_samples(const std::string& path) {
    return load_dataset(path, infer_format(path)).samples;
}

// Resolves the output directory against NLIGEN_ARTIFACT_ROOT when relative.
inline std::filesystem::path resolve_output_dir(const std::string& dir) {
    std::filesystem::path p(dir);
    if (p.is_absolute()) return p;
    const char* root = std::getenv("NLIGEN_ARTIFACT_ROOT");
    if (root == nullptr || *root == '\0') return p;
    return std::filesystem::path(root) / p;
}

inline std::filesystem::path seed_dir(const ExperimentSpec& spec, std::uint64_t seed) {
    return resolve_output_dir(spec.output_dir) / ("seed_" + std::to_string(seed));
}

// The complete toy vocabulary for a run: dataset tokens, template and
// candidate connectives, condition names for the standard input format.
inline std::vector<std::string> experiment_vocab(const ExperimentSpec& spec,
                                                 const std::vector<Sample>& train_samples,
                                                 const std::vector<Sample>& test_samples) {
    std::vector<std::string> extra = template_tokens(manual_templates());
    for (Condition c : kAllConditions) extra.emplace_back(condition_name(c));
    if (!spec.templates_path.empty())
        for (const auto& tok : template_tokens(load_template_set(spec.templates_path)))
            extra.push_back(tok);
    if (!spec.candidates_path.empty()) {
        const auto candidates = load_candidate_file(spec.candidates_path);
        for (Condition c : kAllConditions)
            for (const auto& t : candidates[c]) {
                TemplateSet one;
                for (Condition k : kAllConditions)
                    one.per_condition[k] = Template::make(k, t.pattern, t.origin,
                                                          t.empty_connective);
                for (const auto& tok : template_tokens(one)) extra.push_back(tok);
            }
    }
    return collect_vocab({&train_samples, &test_samples}, extra);
}

inline ToyLmConfig experiment_lm_config(const ExperimentSpec& spec,
                                        const std::vector<std::string>& vocab,
                                        std::uint64_t seed) {
    ToyLmConfig config;
    config.vocab = vocab;
    config.embed_dim = spec.lm_embed_dim;
    config.hidden_dim = spec.lm_hidden_dim;
    config.context_window = 256;
    config.seed = mix_seed(seed, 0x6c6dULL);
    return config;
}

inline ToyEncoderConfig experiment_encoder_config(const ExperimentSpec& spec,
                                                  const std::vector<std::string>& vocab,
                                                  std::uint64_t seed) {
    ToyEncoderConfig config;
    config.vocab = vocab;
    config.dim = spec.encoder_dim;
    config.seed = mix_seed(seed, 0x656e63ULL);
    return config;
}

// -------- stages --------

inline FewShotSplit stage_split(const ExperimentSpec& spec, std::uint64_t seed,
                                const std::vector<Sample>& train_samples) {
    FewShotSplit split = sample_few_shot_split(train_samples, spec.k_per_condition, seed);
    const auto dir = seed_dir(spec, seed);
    std::filesystem::create_directories(dir);
    save_split((dir / "split.jsonl").string(), split);
    return split;
}

inline TemplateSet stage_templates(const ExperimentSpec& spec, std::uint64_t seed,
                                   const FewShotSplit& split,
                                   const std::vector<std::string>& vocab) {
    const auto dir = seed_dir(spec, seed);
    std::filesystem::create_directories(dir);
    TemplateSet templates;
    if (!spec.templates_path.empty()) {
        templates = load_template_set(spec.templates_path);
    } else if (spec.template_source == TemplateSource::Manual) {
        templates = manual_templates();
    } else {
        TemplateScorer scorer;
        scorer.config = spec.scorer_config;
        scorer.config.seed = mix_seed(seed, 0x73636f7265ULL);
        scorer.metric = spec.score_metric;
        const ToyLmConfig lm_config = experiment_lm_config(spec, vocab, seed);
        scorer.make_lm = [lm_config]() -> std::unique_ptr<TrainableLanguageModel> {
            return std::make_unique<ToyLm>(lm_config);
        };
        const SelectionStrategy strategy = spec.template_source == TemplateSource::SearchTop
                                               ? SelectionStrategy::Top
                                               : SelectionStrategy::MaxMargin;
        TemplateSearchResult result;
        if (!spec.candidates_path.empty()) {
            result = search_templates(
                file_candidate_source(load_candidate_file(spec.candidates_path)), scorer, split,
                strategy);
        } else {
            // connective proposals from a fresh seeded toy LM over the run vocabulary
            ToyLm infiller_lm(experiment_lm_config(spec, vocab, mix_seed(seed, 0x696e66ULL)));
            LmInfiller infiller(infiller_lm);
            result = search_templates(infiller_candidate_source(infiller, spec.search_beam_width),
                                      scorer, split, strategy);
        }
        save_search_result((dir / "search_scores.json").string(), result);
        templates = result.selected;
    }
    save_template_set((dir / "templates.tsv").string(), templates);
    return templates;
}

inline std::vector<Checkpoint> stage_train(const ExperimentSpec& spec, std::uint64_t seed,
                                           const FewShotSplit& split, const TemplateSet& templates,
                                           const std::vector<std::string>& vocab) {
    const auto dir = seed_dir(spec, seed);
    TrainConfig config = spec.train;
    config.seed = mix_seed(seed, 0x747261696eULL);
    ToyLm lm(experiment_lm_config(spec, vocab, seed));

    std::vector<Checkpoint> checkpoints;
    switch (spec.regime) {
        case Regime::Standard:
            checkpoints = finetune(lm, Regime::Standard, nullptr, nullptr, split, config);
            break;
        case Regime::Prompt:
            checkpoints = finetune(lm, Regime::Prompt, &templates, nullptr, split, config);
            break;
        case Regime::PromptStatic: {
            if (spec.retriever == RetrieverKind::Random) {
                RandomEncoder encoder(spec.encoder_dim, mix_seed(seed, 0x72616e64ULL));
                checkpoints =
                    finetune(lm, Regime::PromptStatic, &templates, &encoder, split, config);
            } else {
                ToyEncoder encoder(experiment_encoder_config(spec, vocab, seed));
                checkpoints =
                    finetune(lm, Regime::PromptStatic, &templates, &encoder, split, config);
            }
            break;
        }
        case Regime::PromptDynamic: {
            ToyEncoder encoder(experiment_encoder_config(spec, vocab, seed));
            checkpoints = train_dynamic(lm, encoder, templates, split, config);
            break;
        }
    }
    save_run((dir / "run").string(), spec.regime,
             spec.regime == Regime::Standard ? nullptr : &templates, config,
             static_cast<int>(seed), checkpoints);
    return checkpoints;
}

struct GenerationRecord {
    std::uint64_t seed = 0;
    std::string id;
    std::string premise;
    Condition condition = Condition::Entailment;
    std::string reference;
    std::string generated;
    std::size_t checkpoint_epoch = 0;
    std::optional<std::string> demo_id;
};

inline void save_generations(const std::string& path,
                             const std::vector<GenerationRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write: " + path);
    for (const auto& r : records) {
        nlohmann::json line = {{"seed", r.seed},
                               {"id", r.id},
                               {"premise", r.premise},
                               {"condition", std::string(condition_name(r.condition))},
                               {"reference", r.reference},
                               {"generated", r.generated},
                               {"checkpoint_epoch", r.checkpoint_epoch}};
        if (r.demo_id)
            line["demo_id"] = *r.demo_id;
        else
            line["demo_id"] = nullptr;
        out << line.dump() << '\n';
    }
}

inline std::vector<GenerationRecord> load_generations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open generations: " + path);
    std::vector<GenerationRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        GenerationRecord r;
        r.seed = rec.at("seed").get<std::uint64_t>();
        r.id = rec.at("id").get<std::string>();
        r.premise = rec.at("premise").get<std::string>();
        r.condition = require_condition(rec.at("condition").get<std::string>());
        r.reference = rec.at("reference").get<std::string>();
        r.generated = rec.at("generated").get<std::string>();
        r.checkpoint_epoch = rec.at("checkpoint_epoch").get<std::size_t>();
        if (!rec.at("demo_id").is_null()) r.demo_id = rec.at("demo_id").get<std::string>();
        out.push_back(std::move(r));
    }
    return out;
}

namespace detail {

inline const Sample& sample_by_id(const std::vector<Sample>& samples, const std::string& id) {
    for (const auto& s : samples)
        if (s.id == id) return s;
    throw std::runtime_error("no sample with id " + id);
}

// Rebuilds the generation context for a record: the regime's input shape,
// with the recorded demonstration when one was used.
inline GeneratorContext record_context(Regime regime, const TemplateSet* templates,
                                       const FewShotSplit& split, const GenerationRecord& r) {
    if (regime == Regime::Standard)
        return {standard_format_input(r.condition, r.premise), kMaxLengthNoDemo};
    const Template& tmpl = templates->for_condition(r.condition);
    if (!r.demo_id) return {render(tmpl, r.premise), kMaxLengthNoDemo};
    const Sample& demo = sample_by_id(split.train, *r.demo_id);
    return {render(tmpl, r.premise, std::nullopt, &demo), kMaxLengthWithDemo};
}

}  // namespace detail

// Decodes the test set with the selected checkpoint; static/dynamic regimes
// retrieve the top-1 same-condition demonstration from the train split.
inline std::vector<GenerationRecord> stage_generate(const ExperimentSpec& spec,
                                                    std::uint64_t seed, const FewShotSplit& split,
                                                    const TemplateSet& templates,
                                                    const std::vector<Sample>& test_samples,
                                                    const std::vector<std::string>& vocab) {
    const auto dir = seed_dir(spec, seed);
    const LoadedRun run = load_run((dir / "run").string());
    const Checkpoint& best = select_checkpoint(run.checkpoints, kSelectionMetric);

    ToyLm lm(experiment_lm_config(spec, vocab, seed));
    lm.load_blob(best.generator_state);

    std::unique_ptr<SentenceEncoder> encoder;
    if (spec.regime == Regime::PromptStatic) {
        if (spec.retriever == RetrieverKind::Random)
            encoder = std::make_unique<RandomEncoder>(spec.encoder_dim,
                                                      mix_seed(seed, 0x72616e64ULL));
        else
            encoder = std::make_unique<ToyEncoder>(experiment_encoder_config(spec, vocab, seed));
    } else if (spec.regime == Regime::PromptDynamic) {
        auto toy = std::make_unique<ToyEncoder>(experiment_encoder_config(spec, vocab, seed));
        if (!best.retriever_state)
            throw std::runtime_error("dynamic checkpoint lacks retriever state");
        toy->load_blob(*best.retriever_state);
        encoder = std::move(toy);
    }

    const auto pools = partition_by_condition(split.train);
    const DecodeStrategy strategy = spec.decode_beam > 1 ? DecodeStrategy::beam(spec.decode_beam)
                                                         : DecodeStrategy::greedy();

    std::vector<GenerationRecord> records;
    records.reserve(test_samples.size());
    for (const auto& s : test_samples) {
        GenerationRecord r;
        r.seed = seed;
        r.id = s.id;
        r.premise = s.premise;
        r.condition = s.condition;
        r.reference = s.hypothesis;
        r.checkpoint_epoch = best.epoch;
        GeneratorContext ctx{"", kMaxLengthNoDemo};
        if (spec.regime == Regime::Standard) {
            ctx = {standard_format_input(s.condition, s.premise), kMaxLengthNoDemo};
        } else if (spec.regime == Regime::Prompt) {
            ctx = {render(templates.for_condition(s.condition), s.premise), kMaxLengthNoDemo};
        } else {
            const auto pool = detail::pool_excluding(pools[s.condition], s.id);
            const auto top = top_k_candidates(*encoder, s, pool, 1);
            r.demo_id = top.front().id;
            ctx = {render(templates.for_condition(s.condition), s.premise, std::nullopt,
                          &top.front()),
                   kMaxLengthWithDemo};
        }
        r.generated = decode(lm, ctx, strategy, lm.eos_id());
        records.push_back(std::move(r));
    }
    save_generations((dir / "generations.jsonl").string(), records);
    return records;
}

struct EvaluationResult {
    MetricReport report;
    std::size_t empty_generations = 0;
    std::size_t total = 0;
};

// Metrics over one seed's generations. Empty generations count as
// classification misses and are excluded from the text metrics.
inline EvaluationResult evaluate_generations(const ExperimentSpec& spec, std::uint64_t seed,
                                             const FewShotSplit& split,
                                             const TemplateSet& templates,
                                             const std::vector<GenerationRecord>& records,
                                             const std::vector<std::string>& vocab,
                                             const NliClassifier& classifier) {
    if (records.empty()) throw std::invalid_argument("no generations to evaluate");
    const auto dir = seed_dir(spec, seed);
    const LoadedRun run = load_run((dir / "run").string());
    const Checkpoint& best = select_checkpoint(run.checkpoints, kSelectionMetric);
    ToyLm lm(experiment_lm_config(spec, vocab, seed));
    lm.load_blob(best.generator_state);

    std::size_t correct = 0;
    std::vector<std::string> produced;
    std::vector<std::string> produced_refs;
    double rouge_sum = 0.0;
    double logprob_sum = 0.0;
    std::size_t token_count = 0;
    std::size_t empty = 0;
    for (const auto& r : records) {
        if (metric_tokens(r.generated).empty()) {
            ++empty;
            continue;
        }
        if (classifier.classify(r.premise, r.generated) == r.condition) ++correct;
        produced.push_back(r.generated);
        produced_refs.push_back(r.reference);
        rouge_sum += rouge2(r.generated, r.reference);
        const auto ctx = detail::record_context(
            spec.regime, spec.regime == Regime::Standard ? nullptr : &templates, split, r);
        const auto scored = score_sequence(lm, ctx, r.generated);
        logprob_sum += scored.total();
        token_count += scored.tokens.size();
    }
    if (produced.empty())
        throw std::runtime_error("every generation is empty; nothing to evaluate");

    std::vector<std::vector<std::string>> refs;
    refs.reserve(produced_refs.size());
    for (const auto& ref : produced_refs) refs.push_back({ref});

    EvaluationResult result;
    result.total = records.size();
    result.empty_generations = empty;
    result.report.split_seed = static_cast<int>(seed);
    result.report.values["accuracy"] =
        static_cast<double>(correct) / static_cast<double>(records.size());
    result.report.values["bleu4"] = corpus_bleu4(produced, refs);
    result.report.values["rouge2"] = rouge_sum / static_cast<double>(produced.size());
    result.report.values["ppl"] =
        std::exp(-logprob_sum / static_cast<double>(token_count));
    result.report.values["div2"] = div_n(produced, 2);
    result.report.values["div3"] = div_n(produced, 3);
    result.report.validate();
    return result;
}

inline std::unique_ptr<NliClassifier> make_classifier(const ExperimentSpec& spec) {
    if (!spec.classifier_path.empty())
        return std::make_unique<PrecomputedClassifier>(
            PrecomputedClassifier::from_jsonl(spec.classifier_path));
    return std::make_unique<ToyHeuristicClassifier>();
}

inline EvaluationResult stage_evaluate(const ExperimentSpec& spec, std::uint64_t seed,
                                       const FewShotSplit& split, const TemplateSet& templates,
                                       const std::vector<GenerationRecord>& records,
                                       const std::vector<std::string>& vocab) {
    const auto classifier = make_classifier(spec);
    EvaluationResult result =
        evaluate_generations(spec, seed, split, templates, records, vocab, *classifier);
    nlohmann::json doc = {{"seed", seed},
                          {"values", result.report.values},
                          {"empty_generations", result.empty_generations},
                          {"total", result.total}};
    std::ofstream out(seed_dir(spec, seed) / "metrics.json");
    if (!out) throw std::runtime_error("cannot write metrics.json");
    out << doc.dump(2) << '\n';
    return result;
}

struct SeedStatus {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
};

struct ExperimentResult {
    AggregateReport aggregate;
    std::vector<MetricReport> reports;
    std::vector<SeedStatus> statuses;
};

inline void write_experiment_reports(const std::filesystem::path& dir, const std::string& label,
                                     const ExperimentResult& result) {
    std::vector<std::pair<std::string, AggregateReport>> rows;
    bool partial = false;
    for (const auto& st : result.statuses)
        if (!st.ok) partial = true;
    rows.emplace_back(partial ? label + " *" : label, result.aggregate);
    {
        std::ofstream out(dir / "report.tsv");
        write_report_tsv(out, rows);
        if (partial) {
            out << "# * incomplete: aggregated over " << result.reports.size() << " of "
                << result.statuses.size() << " seeds\n";
            for (const auto& st : result.statuses)
                if (!st.ok) out << "# seed " << st.seed << " failed: " << st.error << '\n';
        }
    }
    {
        std::ofstream out(dir / "report.md");
        write_report_markdown(out, rows);
        if (partial) {
            out << "\n`*` incomplete: aggregated over " << result.reports.size() << " of "
                << result.statuses.size() << " seeds\n";
            for (const auto& st : result.statuses)
                if (!st.ok) out << "- seed " << st.seed << " failed: " << st.error << '\n';
        }
    }
}

// The full protocol: per seed, split → templates → train → generate →
// evaluate; failures mark the seed in the manifest and the survivors are
// aggregated. Throws only when no seed completes.
inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
    spec.validate();
    const auto train_samples = load_samples(spec.train_path);
    const auto test_samples = load_samples(spec.test_path);
    if (test_samples.empty()) throw std::invalid_argument("test dataset is empty");
    const auto vocab = experiment_vocab(spec, train_samples, test_samples);
    const auto out_dir = resolve_output_dir(spec.output_dir);
    std::filesystem::create_directories(out_dir);

    ExperimentResult result;
    for (std::uint64_t seed : spec.seeds) {
        SeedStatus status;
        status.seed = seed;
        try {
            const FewShotSplit split = stage_split(spec, seed, train_samples);
            // the standard regime renders no prompts, so it writes no template artifacts
            const TemplateSet templates = spec.regime == Regime::Standard
                                              ? manual_templates()
                                              : stage_templates(spec, seed, split, vocab);
            stage_train(spec, seed, split, templates, vocab);
            const auto records =
                stage_generate(spec, seed, split, templates, test_samples, vocab);
            const auto evaluation = stage_evaluate(spec, seed, split, templates, records, vocab);
            result.reports.push_back(evaluation.report);
            status.ok = true;
        } catch (const std::exception& e) {
            status.error = e.what();
            std::cerr << "seed " << seed << " failed: " << e.what() << '\n';
        }
        result.statuses.push_back(std::move(status));
    }
    if (result.reports.empty()) throw std::runtime_error("every seed failed; no report");
    if (result.reports.size() < spec.seeds.size())
        std::cerr << "warning: aggregate covers " << result.reports.size() << " of "
                  << spec.seeds.size() << " seeds\n";
    result.aggregate = aggregate_splits(result.reports);

    nlohmann::json manifest;
    manifest["spec"] = spec;
    manifest["label"] = spec_label(spec);
    nlohmann::json seed_list = nlohmann::json::array();
    for (const auto& st : result.statuses) {
        nlohmann::json entry = {{"seed", st.seed}, {"status", st.ok ? "ok" : "error"}};
        if (!st.ok) entry["message"] = st.error;
        seed_list.push_back(entry);
    }
    manifest["seeds"] = seed_list;
    manifest["aggregate"] = {{"mean", result.aggregate.mean}, {"stddev", result.aggregate.stddev}};
    std::ofstream out(out_dir / "manifest.json");
    if (!out) throw std::runtime_error("cannot write experiment manifest");
    out << manifest.dump(2) << '\n';

    write_experiment_reports(out_dir, spec_label(spec), result);
    return result;
}

}  // namespace nligen
