// Command line front end: each subcommand runs one pipeline stage against a
// shared on-disk layout, and `run` composes all of them over the seed list.
// Exit codes: 0 success, 2 configuration error, 3 stage failure.

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nligen/nligen.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct CliOptions {
    nligen::ExperimentSpec spec;
    std::string regime = "prompt";
    std::string template_source = "manual";
    std::string retriever = "none";
    std::string backend = "toy";
    std::string score_metric = "rouge2";
    std::string train_config_path;
    std::uint64_t seed = 42;
};

void add_spec_flags(CLI::App& cmd, CliOptions& opt, bool with_seed_list) {
    cmd.add_option("--train", opt.spec.train_path, "train dataset (.jsonl or .tsv)");
    cmd.add_option("--test", opt.spec.test_path, "test dataset (.jsonl or .tsv)");
    cmd.add_option("--out", opt.spec.output_dir, "output directory for artifacts");
    cmd.add_option("--regime", opt.regime, "standard|prompt|prompt_static|prompt_dynamic");
    cmd.add_option("--templates", opt.template_source, "manual|search_top|search_mm");
    cmd.add_option("--template-file", opt.spec.templates_path, "explicit template set (tsv)");
    cmd.add_option("--candidates", opt.spec.candidates_path, "candidate connectives (json)");
    cmd.add_option("--retriever", opt.retriever, "none|random|static|dynamic");
    cmd.add_option("--backend", opt.backend, "toy|external");
    cmd.add_option("--classifier", opt.spec.classifier_path,
                   "precomputed classifier predictions (jsonl)");
    cmd.add_option("--k", opt.spec.k_per_condition, "train/dev samples per condition");
    cmd.add_option("--train-config", opt.train_config_path, "key=value training config file");
    cmd.add_option("--epochs", opt.spec.train.epochs, "training epochs");
    cmd.add_option("--learning-rate", opt.spec.train.learning_rate, "Adam learning rate");
    cmd.add_option("--batch-size", opt.spec.train.batch_size, "batch size");
    cmd.add_option("--warmup", opt.spec.train.warmup_steps, "warmup steps");
    cmd.add_option("--eval-from", opt.spec.train.eval_from_epoch, "first checkpointed epoch");
    cmd.add_option("--top-k", opt.spec.train.top_k, "demonstration candidates kept per step");
    cmd.add_option("--retriever-lr-scale", opt.spec.train.retriever_lr_scale,
                   "retriever learning rate multiplier");
    cmd.add_option("--decode-beam", opt.spec.decode_beam, "beam width at generation (1 = greedy)");
    cmd.add_option("--search-beam", opt.spec.search_beam_width, "beam width for connective search");
    cmd.add_option("--scorer-epochs", opt.spec.scorer_config.epochs,
                   "epochs per template scoring run (0 = score without training)");
    cmd.add_option("--score-metric", opt.score_metric, "rouge2|neg_loss|bleu4");
    cmd.add_option("--embed-dim", opt.spec.lm_embed_dim, "generator embedding size");
    cmd.add_option("--hidden-dim", opt.spec.lm_hidden_dim, "generator hidden size");
    cmd.add_option("--encoder-dim", opt.spec.encoder_dim, "retriever embedding size");
    if (with_seed_list)
        cmd.add_option("--seeds", opt.spec.seeds, "split seeds to run");
    else
        cmd.add_option("--seed", opt.seed, "split seed for this stage");
}

// Flags arrive as strings; fold them into the typed spec.
void finalize_spec(CliOptions& opt, bool with_seed_list) {
    opt.spec.regime = nligen::parse_regime(opt.regime);
    opt.spec.template_source = nligen::parse_template_source(opt.template_source);
    opt.spec.retriever = nligen::parse_retriever(opt.retriever);
    opt.spec.backend = nligen::parse_backend(opt.backend);
    opt.spec.score_metric = nligen::parse_score_metric(opt.score_metric);
    if (!opt.train_config_path.empty()) {
        // file values load first, explicit flags are already folded in; the
        // file wins only for keys the command line left at defaults
        nligen::TrainConfig file_config = nligen::load_train_config(opt.train_config_path);
        file_config.seed = opt.spec.train.seed;
        opt.spec.train = file_config;
    }
    if (!with_seed_list) opt.spec.seeds = {opt.seed};
    opt.spec.scorer_config.eval_from_epoch = std::max<std::size_t>(opt.spec.scorer_config.epochs,
                                                                   1);
}

nligen::FewShotSplit load_stage_split(const nligen::ExperimentSpec& spec, std::uint64_t seed) {
    const auto path = nligen::seed_dir(spec, seed) / "split.jsonl";
    if (!std::filesystem::exists(path))
        throw std::runtime_error("missing " + path.string() + "; run the split stage first");
    return nligen::load_split(path.string());
}

nligen::TemplateSet load_stage_templates(const nligen::ExperimentSpec& spec, std::uint64_t seed,
                                         const nligen::FewShotSplit& split,
                                         const std::vector<std::string>& vocab) {
    const auto path = nligen::seed_dir(spec, seed) / "templates.tsv";
    if (std::filesystem::exists(path)) return nligen::load_template_set(path.string());
    if (spec.template_source == nligen::TemplateSource::Manual && spec.templates_path.empty())
        return nligen::stage_templates(spec, seed, split, vocab);
    throw std::runtime_error("missing " + path.string() +
                             "; run the search-templates stage first");
}

int run_command(const std::string& name, const CliOptions& opt) {
    using namespace nligen;
    const ExperimentSpec& spec = opt.spec;
    spec.validate();
    const std::uint64_t seed = spec.seeds.front();

    if (name == "run") {
        const ExperimentResult result = run_experiment(spec);
        std::cout << spec_label(spec) << ": accuracy "
                  << format_percent_mean_std(result.aggregate.mean.at("accuracy"),
                                             result.aggregate.stddev.at("accuracy"))
                  << " over " << result.reports.size() << " seeds\n";
        std::cout << "report: " << (resolve_output_dir(spec.output_dir) / "report.tsv").string()
                  << '\n';
        return 0;
    }

    const auto train_samples = load_samples(spec.train_path);
    if (name == "split") {
        const FewShotSplit split = stage_split(spec, seed, train_samples);
        std::cout << "split seed " << split.seed << ": " << split.train.size() << " train, "
                  << split.dev.size() << " dev -> "
                  << (seed_dir(spec, seed) / "split.jsonl").string() << '\n';
        return 0;
    }

    const auto test_samples = load_samples(spec.test_path);
    const auto vocab = experiment_vocab(spec, train_samples, test_samples);
    const FewShotSplit split = load_stage_split(spec, seed);

    if (name == "search-templates") {
        const TemplateSet templates = stage_templates(spec, seed, split, vocab);
        for (Condition c : kAllConditions)
            std::cout << condition_name(c) << '\t' << templates.for_condition(c).pattern << '\n';
        return 0;
    }

    const TemplateSet templates = load_stage_templates(spec, seed, split, vocab);
    if (name == "train") {
        const auto checkpoints = stage_train(spec, seed, split, templates, vocab);
        const Checkpoint& best = select_checkpoint(checkpoints, kSelectionMetric);
        std::cout << checkpoints.size() << " checkpoints; best epoch " << best.epoch << " ("
                  << kSelectionMetric << ' '
                  << best.dev_metrics.at(std::string(kSelectionMetric)) << ")\n";
        return 0;
    }
    if (name == "generate") {
        const auto records = stage_generate(spec, seed, split, templates, test_samples, vocab);
        std::cout << records.size() << " generations -> "
                  << (seed_dir(spec, seed) / "generations.jsonl").string() << '\n';
        return 0;
    }
    if (name == "evaluate") {
        const auto records =
            load_generations((seed_dir(spec, seed) / "generations.jsonl").string());
        const EvaluationResult result =
            stage_evaluate(spec, seed, split, templates, records, vocab);
        for (const auto& key : metric_keys())
            std::cout << key << '\t' << result.report.values.at(key) << '\n';
        if (result.empty_generations > 0)
            std::cout << "# " << result.empty_generations << " of " << result.total
                      << " generations were empty\n";
        return 0;
    }
    throw std::logic_error("unhandled command " + name);
}

// Merges the manifests of several finished experiments into one table.
int report_command(const std::vector<std::string>& dirs, const std::string& out_dir) {
    using nligen::AggregateReport;
    using nligen::MetricReport;
    std::vector<std::pair<std::string, AggregateReport>> rows;
    std::vector<std::string> gaps;
    for (const auto& dir : dirs) {
        const auto root = nligen::resolve_output_dir(dir);
        std::ifstream in(root / "manifest.json");
        if (!in) throw std::runtime_error("cannot open " + (root / "manifest.json").string());
        nlohmann::json manifest = nlohmann::json::parse(in);
        const std::string label = manifest.at("label").get<std::string>();
        std::vector<MetricReport> reports;
        bool partial = false;
        for (const auto& entry : manifest.at("seeds")) {
            const auto seed = entry.at("seed").get<std::uint64_t>();
            if (entry.at("status").get<std::string>() != "ok") {
                partial = true;
                gaps.push_back(label + ": seed " + std::to_string(seed) + " failed: " +
                               entry.at("message").get<std::string>());
                continue;
            }
            std::ifstream metrics_in(root / ("seed_" + std::to_string(seed)) / "metrics.json");
            if (!metrics_in)
                throw std::runtime_error("missing metrics.json for seed " +
                                         std::to_string(seed) + " in " + dir);
            nlohmann::json doc = nlohmann::json::parse(metrics_in);
            MetricReport report;
            report.split_seed = static_cast<int>(seed);
            for (const auto& [key, value] : doc.at("values").items())
                report.values[key] = value.get<double>();
            reports.push_back(std::move(report));
        }
        if (reports.empty()) {
            gaps.push_back(label + ": no completed seeds, row omitted");
            continue;
        }
        rows.emplace_back(partial ? label + " *" : label, nligen::aggregate_splits(reports));
    }
    if (rows.empty()) throw std::runtime_error("no completed experiments to report");
    const auto out_root = nligen::resolve_output_dir(out_dir);
    std::filesystem::create_directories(out_root);
    {
        std::ofstream out(out_root / "report.tsv");
        nligen::write_report_tsv(out, rows);
        for (const auto& gap : gaps) out << "# " << gap << '\n';
    }
    {
        std::ofstream out(out_root / "report.md");
        nligen::write_report_markdown(out, rows);
        if (!gaps.empty()) out << '\n';
        for (const auto& gap : gaps) out << "- " << gap << '\n';
    }
    std::cout << "report: " << (out_root / "report.tsv").string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"few-shot conditional hypothesis generation pipeline"};
    app.require_subcommand(1);

    CliOptions opt;
    std::vector<std::string> report_dirs;
    std::string report_out = ".";

    CLI::App* split = app.add_subcommand("split", "sample a few-shot split");
    CLI::App* search = app.add_subcommand("search-templates", "select templates for a split");
    CLI::App* train = app.add_subcommand("train", "finetune a generator on a split");
    CLI::App* generate = app.add_subcommand("generate", "decode the test set");
    CLI::App* evaluate = app.add_subcommand("evaluate", "score generations");
    CLI::App* run = app.add_subcommand("run", "full pipeline over all seeds");
    CLI::App* report = app.add_subcommand("report", "merge experiment outputs into one table");
    for (CLI::App* cmd : {split, search, train, generate, evaluate})
        add_spec_flags(*cmd, opt, false);
    add_spec_flags(*run, opt, true);
    report->add_option("dirs", report_dirs, "experiment output directories")->required();
    report->add_option("--out", report_out, "directory for the merged report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        if (name == "report") return report_command(report_dirs, report_out);
        finalize_spec(opt, name == "run");
        return run_command(name, opt);
    } catch (const std::invalid_argument& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitStage;
    }
}
