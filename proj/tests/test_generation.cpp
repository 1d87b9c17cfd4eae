#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "nligen/generation.hpp"
#include "nligen/retrieval.hpp"
#include "nligen/rng.hpp"
#include "nligen/templates.hpp"
#include "nligen/toy_models.hpp"
#include "support/oracles.hpp"

using namespace nligen;
using Catch::Matchers::ContainsSubstring;

namespace {

// LM over a fixed word list with scripted next-token logits. Logits for a
// prefix come from a table keyed by the emitted suffix (tokens after BOS);
// missing keys fall back to a default row. Rows are softmax-normalized.
class TableLm : public LanguageModel {
public:
    TableLm(std::vector<std::string> words, std::vector<double> default_logits)
        : words_(std::move(words)), default_logits_(std::move(default_logits)) {
        if (default_logits_.size() != words_.size() + 2)
            throw std::logic_error("logits must cover words plus bos/eos");
    }

    void set_row(std::vector<int> suffix, std::vector<double> logits) {
        rows_[std::move(suffix)] = std::move(logits);
    }

    std::size_t vocab_size() const override { return words_.size() + 2; }
    int bos_id() const override { return static_cast<int>(words_.size()); }
    int eos_id() const override { return static_cast<int>(words_.size()) + 1; }

    std::vector<int> tokenize(std::string_view text) const override {
        std::vector<int> out;
        std::string cur;
        auto flush = [&] {
            if (cur.empty()) return;
            for (std::size_t i = 0; i < words_.size(); ++i)
                if (words_[i] == cur) {
                    out.push_back(static_cast<int>(i));
                    cur.clear();
                    return;
                }
            throw std::invalid_argument("unknown word: " + cur);
        };
        for (char ch : text) {
            if (ch == ' ')
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
            if (!out.empty()) out += ' ';
            out += words_.at(static_cast<std::size_t>(id));
        }
        return out;
    }

    std::vector<double> next_token_logprobs(std::span<const int> prefix) const override {
        if (prefix.empty() || prefix.front() != bos_id())
            throw std::invalid_argument("prefix must start with bos");
        const std::vector<int> suffix(prefix.begin() + 1, prefix.end());
        const auto it = rows_.find(suffix);
        const auto& logits = it == rows_.end() ? default_logits_ : it->second;
        double mx = logits[0];
        for (double v : logits) mx = std::max(mx, v);
        double denom = 0.0;
        for (double v : logits) denom += std::exp(v - mx);
        std::vector<double> out(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i)
            out[i] = logits[i] - mx - std::log(denom);
        return out;
    }

private:
    std::vector<std::string> words_;
    std::vector<double> default_logits_;
    std::map<std::vector<int>, std::vector<double>> rows_;
};

// Every next-token distribution is exactly uniform.
TableLm uniform_lm(std::vector<std::string> words) {
    const std::size_t v = words.size() + 2;
    return TableLm(std::move(words), std::vector<double>(v, 0.0));
}

}  // namespace

TEST_CASE("standard input format", "[generation]") {
    CHECK(standard_format_input(Condition::Entailment, "A dog runs.") ==
          "entailment [SEP] A dog runs.");
    CHECK(standard_format_input(Condition::Contradiction, "A dog runs.", "|") ==
          "contradiction | A dog runs.");
}

TEST_CASE("budget violations name every length", "[generation]") {
    auto lm = uniform_lm({"a", "b", "c"});
    const GeneratorContext ctx{"a b c", 5};
    CHECK_THROWS_WITH(score_sequence(lm, ctx, "a b c"),
                      ContainsSubstring("3") && ContainsSubstring("5") && ContainsSubstring("7"));
    CHECK_NOTHROW(score_sequence(lm, GeneratorContext{"a b c", 7}, "a b c"));
}

TEST_CASE("uniform model scores are exactly uniform", "[generation]") {
    auto lm = uniform_lm({"a", "b", "c", "d"});  // V = 6 with bos/eos
    const double expected = -std::log(6.0);
    const auto scored = score_sequence(lm, GeneratorContext{"a b", 64}, "c d a");
    REQUIRE(scored.tokens.size() == 3);
    for (double lp : scored.logprobs) CHECK(lp == Catch::Approx(expected).margin(1e-12));
    CHECK(scored.total() == Catch::Approx(3.0 * expected).margin(1e-12));
    CHECK(sequence_logprob(lm, GeneratorContext{"a b", 64}, "c d a") ==
          Catch::Approx(3.0 * expected).margin(1e-12));
}

TEST_CASE("scoring follows the chain rule on scripted rows", "[generation]") {
    TableLm lm({"x", "y"}, {0.0, 0.0, 0.0, 0.0});
    // after "x": strongly prefer y; after "x y": strongly prefer eos
    lm.set_row({0}, {1.0, 3.0, -2.0, -2.0});
    lm.set_row({0, 1}, {-1.0, -1.0, -5.0, 4.0});

    const auto scored = score_sequence(lm, GeneratorContext{"x", 16}, "y");
    const auto step = lm.next_token_logprobs(std::vector<int>{lm.bos_id(), 0});
    CHECK(scored.total() == Catch::Approx(step[1]).margin(1e-12));

    const auto with_eos = score_sequence(lm, GeneratorContext{"x", 16}, "y", true);
    const auto step2 = lm.next_token_logprobs(std::vector<int>{lm.bos_id(), 0, 1});
    REQUIRE(with_eos.tokens.size() == 2);
    CHECK(with_eos.total() == Catch::Approx(step[1] + step2[3]).margin(1e-12));
}

TEST_CASE("scoring input validation", "[generation]") {
    auto lm = uniform_lm({"a"});
    CHECK_THROWS_AS(score_sequence(lm, GeneratorContext{"a", 8}, ""), std::invalid_argument);
    CHECK_THROWS_AS(score_sequence(lm, GeneratorContext{"a", 0}, "a"), std::invalid_argument);
    CHECK_THROWS_AS(sequence_logprob(lm, GeneratorContext{"a", 8}, "  "),
                    std::invalid_argument);
}

TEST_CASE("marginal with one demonstration is plain scoring", "[generation]") {
    ToyLmConfig config;
    config.vocab = with_special_tokens({"a", "dog", "runs", "cat", "sits", "Then"});
    config.seed = 5;
    ToyLm lm(config);
    ToyEncoderConfig enc_config;
    enc_config.vocab = config.vocab;
    enc_config.seed = 6;
    ToyEncoder encoder(enc_config);

    const Template tmpl = Template::make(Condition::Entailment, "⟨p⟩ Then ⟨h⟩");
    const Sample query{"q", "a dog runs", Condition::Entailment, "a dog runs"};
    const std::vector<Sample> demo_set = {
        Sample{"d", "a cat sits", Condition::Entailment, "a cat sits"}};

    const double marginal = marginal_logprob(lm, encoder, tmpl, query, demo_set);
    const GeneratorContext ctx{render(tmpl, query.premise, std::nullopt, &demo_set[0]),
                               kMaxLengthWithDemo};
    CHECK(marginal == Catch::Approx(sequence_logprob(lm, ctx, query.hypothesis)).margin(1e-12));
}

TEST_CASE("marginal matches the brute-force oracle", "[generation]") {
    ToyLmConfig config;
    config.vocab = with_special_tokens({"a", "dog", "runs", "cat", "sits", "bird", "flies",
                                        "Then"});
    config.seed = 11;
    ToyLm lm(config);
    ToyEncoderConfig enc_config;
    enc_config.vocab = config.vocab;
    enc_config.seed = 12;
    ToyEncoder encoder(enc_config);

    const Template tmpl = Template::make(Condition::Neutral, "⟨p⟩ Then ⟨h⟩");
    const Sample query{"q", "a dog runs", Condition::Neutral, "a bird flies"};
    const std::vector<Sample> demo_set = {
        Sample{"d1", "a cat sits", Condition::Neutral, "a cat sits"},
        Sample{"d2", "a bird flies", Condition::Neutral, "a dog runs"},
        Sample{"d3", "a dog sits", Condition::Neutral, "a cat flies"},
    };

    const auto breakdown = marginal_breakdown(lm, encoder, tmpl, query, demo_set);
    const double expected = oracle::marginal_logprob(lm, encoder, tmpl, query, demo_set);
    CHECK(breakdown.total == Catch::Approx(expected).margin(1e-9));
    CHECK(marginal_logprob(lm, encoder, tmpl, query, demo_set) ==
          Catch::Approx(expected).margin(1e-9));

    const auto dist = retrieval_distribution(encoder, query, demo_set);
    REQUIRE(breakdown.weights.size() == dist.probabilities.size());
    for (std::size_t k = 0; k < dist.probabilities.size(); ++k)
        CHECK(breakdown.weights[k] == Catch::Approx(dist.probabilities[k]).margin(1e-12));

    // each mixture term sits between the per-demo extremes
    for (std::size_t j = 0; j < breakdown.mixture_logprobs.size(); ++j) {
        double lo = breakdown.position_logprobs[0][j];
        double hi = lo;
        for (const auto& row : breakdown.position_logprobs) {
            lo = std::min(lo, row[j]);
            hi = std::max(hi, row[j]);
        }
        CHECK(breakdown.mixture_logprobs[j] >= lo - 1e-12);
        CHECK(breakdown.mixture_logprobs[j] <= hi + 1e-12);
    }
}

TEST_CASE("marginal rejects condition mismatches", "[generation]") {
    ToyLmConfig config;
    config.vocab = with_special_tokens({"a", "b", "Then"});
    ToyLm lm(config);
    ToyEncoderConfig enc_config;
    enc_config.vocab = config.vocab;
    ToyEncoder encoder(enc_config);
    const Template tmpl = Template::make(Condition::Entailment, "⟨p⟩ Then ⟨h⟩");
    const Sample query{"q", "a", Condition::Neutral, "b"};
    CHECK_THROWS_AS(
        marginal_logprob(lm, encoder, tmpl, query,
                         {Sample{"d", "b", Condition::Neutral, "a"}}),
        std::invalid_argument);
}

TEST_CASE("greedy decode follows the scripted argmax", "[generation]") {
    TableLm lm({"u", "v", "w"}, {0.0, 0.0, 0.0, 0.0, 0.0});
    lm.set_row({2}, {5.0, 1.0, 1.0, -9.0, -9.0});         // -> u
    lm.set_row({2, 0}, {1.0, 6.0, 1.0, -9.0, -9.0});      // -> v
    lm.set_row({2, 0, 1}, {1.0, 1.0, 1.0, -9.0, 9.0});    // -> eos
    const std::string out = decode(lm, GeneratorContext{"w", 16}, DecodeStrategy::greedy(),
                                   lm.eos_id());
    CHECK(out == "u v");
}

TEST_CASE("greedy decode breaks ties toward the lowest token id", "[generation]") {
    TableLm lm({"u", "v", "w"}, {2.0, 2.0, 2.0, -9.0, -9.0});
    lm.set_row({2, 0}, {-9.0, -9.0, -9.0, -9.0, 9.0});
    CHECK(decode(lm, GeneratorContext{"w", 16}, DecodeStrategy::greedy(), lm.eos_id()) == "u");
}

TEST_CASE("decode with no room returns empty", "[generation]") {
    auto lm = uniform_lm({"a", "b"});
    CHECK(decode(lm, GeneratorContext{"a b", 3}, DecodeStrategy::greedy(), lm.eos_id()) == "");
    CHECK(decode(lm, GeneratorContext{"a b", 3}, DecodeStrategy::beam(4), lm.eos_id()) == "");
}

TEST_CASE("decode stops at the budget when the model never stops", "[generation]") {
    TableLm lm({"a", "b"}, {3.0, 1.0, -20.0, -20.0});
    const std::string out = decode(lm, GeneratorContext{"b", 6}, DecodeStrategy::greedy(),
                                   lm.eos_id());
    // 1 bos + 1 context + 4 generated = 6
    CHECK(out == "a a a a");
}

TEST_CASE("beam width one matches greedy", "[generation]") {
    Rng rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        TableLm lm({"a", "b", "c"}, {0.0, 0.0, 0.0, 0.0, 0.0});
        // script a few random rows over short suffixes
        for (int r = 0; r < 8; ++r) {
            std::vector<int> suffix;
            const std::size_t len = rng.next_below(3);
            for (std::size_t i = 0; i < len; ++i)
                suffix.push_back(static_cast<int>(rng.next_below(3)));
            std::vector<double> logits(5);
            for (auto& v : logits) v = rng.uniform(-3.0, 3.0);
            lm.set_row(std::move(suffix), std::move(logits));
        }
        const GeneratorContext ctx{"a", 6};
        CHECK(decode(lm, ctx, DecodeStrategy::beam(1), lm.eos_id()) ==
              decode(lm, ctx, DecodeStrategy::greedy(), lm.eos_id()));
    }
}

TEST_CASE("wide beam matches exhaustive search", "[generation]") {
    Rng rng(22);
    for (int trial = 0; trial < 15; ++trial) {
        TableLm lm({"a", "b"}, {0.0, 0.0, 0.0, 0.0});
        for (int r = 0; r < 10; ++r) {
            std::vector<int> suffix;
            const std::size_t len = rng.next_below(4);
            for (std::size_t i = 0; i < len; ++i)
                suffix.push_back(static_cast<int>(rng.next_below(2)));
            std::vector<double> logits(4);
            for (auto& v : logits) v = rng.uniform(-2.0, 2.0);
            lm.set_row(std::move(suffix), std::move(logits));
        }
        // room for 3 generated tokens: 1 bos + 1 context token + 3
        const GeneratorContext ctx{"a", 5};
        const auto expected = oracle::exhaustive_decode(lm, "a", lm.eos_id(), 3);
        CHECK(decode(lm, ctx, DecodeStrategy::beam(256), lm.eos_id()) ==
              lm.detokenize(expected));
    }
}

TEST_CASE("scored sequences reject positive logprobs", "[generation]") {
    TokenScoredSequence seq{{1, 2}, {-0.5, 0.5}};
    CHECK_THROWS_AS(seq.validate(), std::invalid_argument);
    CHECK_THROWS_AS(DecodeStrategy::beam(0), std::invalid_argument);
}
