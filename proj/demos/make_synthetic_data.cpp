// Writes a small synthetic NLI corpus as train/test jsonl files. Premises are
// "det noun verb adv" sentences; each premise carries one hypothesis per
// condition, and the neutral hypothesis mentions an object determined by the
// premise noun, so a same-noun demonstration is informative.

#include <filesystem>
#include <iostream>
#include <string>

#include "nligen/corpus.hpp"
#include "nligen/synthetic.hpp"

int main(int argc, char** argv) {
    std::string out_dir = argc > 1 ? argv[1] : "synthetic_data";
    nligen::SyntheticCorpusConfig config;
    config.nouns = argc > 2 ? std::stoul(argv[2]) : 6;
    config.verbs = argc > 3 ? std::stoul(argv[3]) : 6;
    config.variants = 2;  // variant 0 -> train pool, variant 1 -> test

    const nligen::SyntheticCorpus corpus = nligen::synthetic_corpus(config);
    std::vector<nligen::Sample> train;
    std::vector<nligen::Sample> test;
    for (const auto& s : corpus.samples)
        (s.id.find("x0-") != std::string::npos ? train : test).push_back(s);

    std::filesystem::create_directories(out_dir);
    const std::string train_path = out_dir + "/train.jsonl";
    const std::string test_path = out_dir + "/test.jsonl";
    nligen::save_samples_jsonl(train_path, train);
    nligen::save_samples_jsonl(test_path, test);
    std::cout << train.size() << " train samples -> " << train_path << '\n'
              << test.size() << " test samples -> " << test_path << '\n';
    return 0;
}
