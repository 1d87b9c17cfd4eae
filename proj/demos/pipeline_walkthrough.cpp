// Library usage end to end on synthetic data: sample a split, pick templates,
// train the prompt regime with a dynamic retriever, decode, and score.

#include <iostream>

#include "nligen/nligen.hpp"

int main() {
    using namespace nligen;

    SyntheticCorpusConfig corpus_config;
    corpus_config.nouns = 4;
    corpus_config.verbs = 4;
    corpus_config.variants = 2;
    const SyntheticCorpus corpus = synthetic_corpus(corpus_config);

    std::vector<Sample> pool;
    std::vector<Sample> test;
    for (const auto& s : corpus.samples)
        (s.id.find("x0-") != std::string::npos ? pool : test).push_back(s);
    test.resize(6);

    const FewShotSplit split = sample_few_shot_split(pool, 4, 42);
    const TemplateSet templates = manual_templates();

    const auto vocab = collect_vocab({&pool, &test}, template_tokens(templates));
    ToyLmConfig lm_config;
    lm_config.vocab = vocab;
    lm_config.embed_dim = 12;
    lm_config.hidden_dim = 24;
    lm_config.seed = 7;
    ToyLm lm(lm_config);

    ToyEncoderConfig encoder_config;
    encoder_config.vocab = vocab;
    encoder_config.dim = 12;
    encoder_config.seed = 7;
    ToyEncoder encoder(encoder_config);

    TrainConfig config;
    config.epochs = 12;
    config.eval_from_epoch = 6;
    config.batch_size = 8;
    config.learning_rate = 0.05;
    config.top_k = 3;
    config.seed = 42;

    const auto checkpoints = train_dynamic(lm, encoder, templates, split, config);
    const Checkpoint& best = select_checkpoint(checkpoints, kSelectionMetric);
    lm.load_blob(best.generator_state);
    encoder.load_blob(*best.retriever_state);
    std::cout << "best checkpoint: epoch " << best.epoch << " (dev " << kSelectionMetric << ' '
              << best.dev_metrics.at(std::string(kSelectionMetric)) << ")\n\n";

    const auto pools = partition_by_condition(split.train);
    ToyHeuristicClassifier classifier;
    std::size_t correct = 0;
    for (const auto& s : test) {
        const auto demo_pool = detail::pool_excluding(pools[s.condition], s.id);
        const auto top = top_k_candidates(encoder, s, demo_pool, 1);
        const GeneratorContext ctx{
            render(templates.for_condition(s.condition), s.premise, std::nullopt, &top.front()),
            kMaxLengthWithDemo};
        const std::string hypothesis = decode(lm, ctx, DecodeStrategy::greedy(), lm.eos_id());
        const bool ok = classifier.classify(s.premise, hypothesis) == s.condition;
        correct += ok ? 1 : 0;
        std::cout << condition_name(s.condition) << " | " << s.premise << " -> " << hypothesis
                  << (ok ? "" : "  (classifier disagrees)") << '\n';
    }
    std::cout << "\nclassifier agreement: " << correct << '/' << test.size() << '\n';
    return 0;
}
