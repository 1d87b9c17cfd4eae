#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "nligen/templates.hpp"
#include "nligen/toy_models.hpp"
#include "nligen/training.hpp"
#include "support/oracles.hpp"

using namespace nligen;

namespace {

ToyLmConfig train_lm_config(std::uint64_t seed = 5) {
    ToyLmConfig cfg;
    cfg.vocab = with_special_tokens({"a", "b", "c", "d", "e", "f", "g", "h", "Then", "Maybe",
                                     "But", "entailment", "neutral", "contradiction"});
    cfg.embed_dim = 4;
    cfg.hidden_dim = 6;
    cfg.seed = seed;
    return cfg;
}

ToyEncoderConfig train_enc_config(std::uint64_t seed = 5) {
    ToyEncoderConfig cfg;
    cfg.vocab = {"a", "b", "c", "d", "e", "f", "g", "h"};
    cfg.dim = 4;
    cfg.seed = seed;
    return cfg;
}

std::vector<Sample> balanced_train() {
    return {{"e-1", "a b", Condition::Entailment, "a"},
            {"e-2", "b c", Condition::Entailment, "b"},
            {"e-3", "c d", Condition::Entailment, "c"},
            {"n-1", "d e", Condition::Neutral, "d"},
            {"n-2", "e f", Condition::Neutral, "e"},
            {"n-3", "f g", Condition::Neutral, "f"},
            {"c-1", "g h", Condition::Contradiction, "g"},
            {"c-2", "h a", Condition::Contradiction, "h"},
            {"c-3", "a c", Condition::Contradiction, "a"}};
}

std::vector<Sample> balanced_dev() {
    return {{"e-9", "a d", Condition::Entailment, "a"},
            {"n-9", "d g", Condition::Neutral, "d"},
            {"c-9", "g b", Condition::Contradiction, "g"}};
}

FewShotSplit make_split(std::vector<Sample> train, std::vector<Sample> dev,
                        std::size_t k = 3) {
    FewShotSplit split;
    split.seed = 7;
    split.k_per_condition = k;
    split.train = std::move(train);
    split.dev = std::move(dev);
    return split;
}

TrainConfig quick_config(std::size_t epochs, std::size_t eval_from, std::size_t batch,
                         double lr = 0.05) {
    TrainConfig cfg;
    cfg.learning_rate = lr;
    cfg.batch_size = batch;
    cfg.warmup_steps = 2;
    cfg.epochs = epochs;
    cfg.eval_from_epoch = eval_from;
    cfg.seed = 42;
    return cfg;
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("nligen_test_" + std::to_string(std::rand()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& contents) {
        path = (std::filesystem::temp_directory_path() /
                ("nligen_cfg_" + std::to_string(std::rand()) + ".cfg"))
                   .string();
        std::ofstream out(path);
        out << contents;
    }
    ~TempFile() { std::remove(path.c_str()); }
};

// Finite per-position logprobs so large that any multi-token loss overflows.
class HugeLossLm final : public TrainableLanguageModel {
public:
    std::size_t vocab_size() const override { return 3; }
    int bos_id() const override { return 1; }
    int eos_id() const override { return 2; }
    std::vector<int> tokenize(std::string_view text) const override {
        std::vector<int> out;
        bool in_word = false;
        for (char ch : text) {
            const bool space = std::isspace(static_cast<unsigned char>(ch)) != 0;
            if (!space && !in_word) out.push_back(0);
            in_word = !space;
        }
        return out;
    }
    std::string detokenize(std::span<const int> tokens) const override {
        std::string out;
        for (std::size_t i = 0; i < tokens.size(); ++i) out += i == 0 ? "w" : " w";
        return out;
    }
    std::vector<double> next_token_logprobs(std::span<const int>) const override {
        return std::vector<double>(3, -1e308);
    }
    std::span<double> parameters() override { return params_; }
    std::span<const double> parameters() const override { return params_; }
    void accumulate_weighted_logprob_grad(std::span<const int>, std::span<const int>,
                                          std::span<const double>,
                                          std::span<double>) const override {}
    std::string save_blob() const override { return "{}"; }
    void load_blob(const std::string&) override {}

private:
    std::vector<double> params_{0.0};
};

}  // namespace

TEST_CASE("train config defaults pin the protocol", "[training]") {
    const TrainConfig cfg;
    CHECK(cfg.learning_rate == 5e-5);
    CHECK(cfg.batch_size == 32);
    CHECK(cfg.warmup_steps == 10);
    CHECK(cfg.epochs == 30);
    CHECK(cfg.eval_from_epoch == 10);
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("train config validation", "[training]") {
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.eval_from_epoch = 31;
    CHECK_THROWS_WITH(cfg.validate(), Catch::Matchers::ContainsSubstring("eval_from_epoch"));
    cfg = {};
    cfg.top_k = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.retriever_lr_scale = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("train config files parse key=value lines", "[training]") {
    TempFile file(
        "# hyperparameters\n"
        "learning_rate = 0.001\n"
        "batch_size=16  # inline comment\n"
        "warmup_steps = 5\n"
        "\n"
        "epochs = 20\n"
        "eval_from_epoch = 7\n"
        "top_k = 3\n"
        "seed = 99\n"
        "retriever_lr_scale = 0.5\n");
    const TrainConfig cfg = load_train_config(file.path);
    CHECK(cfg.learning_rate == 0.001);
    CHECK(cfg.batch_size == 16);
    CHECK(cfg.warmup_steps == 5);
    CHECK(cfg.epochs == 20);
    CHECK(cfg.eval_from_epoch == 7);
    CHECK(cfg.top_k == 3);
    CHECK(cfg.seed == 99);
    CHECK(cfg.retriever_lr_scale == 0.5);
}

TEST_CASE("train config files reject malformed input", "[training]") {
    TempFile unknown("learning_rate = 0.1\nmomentum = 0.9\n");
    CHECK_THROWS_WITH(load_train_config(unknown.path),
                      Catch::Matchers::ContainsSubstring(":2: unknown key: momentum"));
    TempFile missing_eq("batch_size\n");
    CHECK_THROWS_WITH(load_train_config(missing_eq.path),
                      Catch::Matchers::ContainsSubstring("expected key=value"));
    TempFile bad_value("batch_size = many\n");
    CHECK_THROWS_WITH(load_train_config(bad_value.path),
                      Catch::Matchers::ContainsSubstring("bad value for batch_size"));
    TempFile out_of_range("eval_from_epoch = 40\n");  // default epochs is 30
    CHECK_THROWS_AS(load_train_config(out_of_range.path), std::invalid_argument);
    CHECK_THROWS_AS(load_train_config("/nonexistent/train.cfg"), std::runtime_error);
}

TEST_CASE("train config json roundtrip", "[training]") {
    TrainConfig cfg;
    cfg.learning_rate = 1e-5;
    cfg.batch_size = 16;
    cfg.top_k = 7;
    const nlohmann::json j = cfg;
    const auto back = j.get<TrainConfig>();
    CHECK(back.learning_rate == cfg.learning_rate);
    CHECK(back.batch_size == cfg.batch_size);
    CHECK(back.top_k == cfg.top_k);
    CHECK(back.epochs == cfg.epochs);
}

TEST_CASE("checkpoint selection follows argmax with earliest-epoch ties", "[training]") {
    const auto ck = [](std::size_t epoch, double rouge) {
        Checkpoint c;
        c.epoch = epoch;
        c.dev_metrics = {{"rouge2", rouge}};
        return c;
    };
    const std::vector<Checkpoint> single = {ck(10, 0.5)};
    CHECK(select_checkpoint(single, "rouge2").epoch == 10);

    const std::vector<Checkpoint> ranked = {ck(10, 0.10), ck(11, 0.30), ck(12, 0.20)};
    CHECK(select_checkpoint(ranked, "rouge2").epoch == 11);

    const std::vector<Checkpoint> tied = {ck(10, 0.2), ck(11, 0.2)};
    CHECK(select_checkpoint(tied, "rouge2").epoch == 10);

    CHECK_THROWS_AS(select_checkpoint({}, "rouge2"), std::invalid_argument);
    CHECK_THROWS_WITH(select_checkpoint(single, "bleu4"),
                      Catch::Matchers::ContainsSubstring("lacks metric bleu4"));
}

TEST_CASE("adam walks a quadratic bowl toward its minimum", "[training]") {
    std::vector<double> params = {1.0, -2.0};
    Adam adam(params.size());
    const auto value = [&] { return params[0] * params[0] + params[1] * params[1]; };
    const double initial = value();
    for (int step = 0; step < 500; ++step) {
        const std::vector<double> grad = {2.0 * params[0], 2.0 * params[1]};
        adam.step(params, grad, 0.01);
    }
    CHECK(value() < initial);
    CHECK(std::abs(params[0]) < 0.1);
    CHECK(std::abs(params[1]) < 0.1);

    std::vector<double> wrong(3, 0.0);
    CHECK_THROWS_AS(adam.step(wrong, wrong, 0.01), std::invalid_argument);
}

TEST_CASE("sequence loss matches the stepwise oracle", "[training]") {
    ToyLm lm(train_lm_config(11));
    const GeneratorContext ctx{"a b But", 64};
    const double w = 0.7;
    std::vector<double> grad(lm.parameters().size(), 0.0);
    const double loss = sequence_loss_and_grad(lm, ctx, "c d", w, grad);

    double expected = 0.0;
    for (double lp : oracle::stepwise_logprobs(lm, ctx.text, "c d", true)) expected += lp;
    CHECK(loss == Catch::Approx(-w * expected).margin(1e-12));

    std::vector<double> grad_plain(lm.parameters().size(), 0.0);
    const double loss_plain = sequence_loss_and_grad(lm, ctx, "c d", w, grad_plain, false);
    double expected_plain = 0.0;
    for (double lp : oracle::stepwise_logprobs(lm, ctx.text, "c d", false))
        expected_plain += lp;
    CHECK(loss_plain == Catch::Approx(-w * expected_plain).margin(1e-12));

    const auto loss_fn = [&] {
        double total = 0.0;
        for (double lp : oracle::stepwise_logprobs(lm, ctx.text, "c d", true)) total += lp;
        return -w * total;
    };
    CHECK(finite_diff_check(lm.parameters(), grad, loss_fn, 1e-5) < 1e-4);
}

TEST_CASE("marginal loss matches the mixture oracle and its gradient checks out",
          "[training]") {
    ToyLm lm(train_lm_config(13));
    ToyEncoder enc(train_enc_config(13));
    const TemplateSet templates = manual_templates();
    const Template& tmpl = templates.for_condition(Condition::Entailment);
    const Sample query{"e-1", "a b", Condition::Entailment, "a"};
    const std::vector<Sample> demos = {{"e-2", "b c", Condition::Entailment, "b"},
                                       {"e-3", "c d", Condition::Entailment, "c"}};
    const double w = 0.8;
    std::vector<double> lm_grad(lm.parameters().size(), 0.0);
    std::vector<double> enc_grad(enc.parameters().size(), 0.0);
    const double loss =
        marginal_loss_and_grad(lm, enc, tmpl, query, demos, w, lm_grad, enc_grad);
    CHECK(loss ==
          Catch::Approx(-w * oracle::marginal_logprob(lm, enc, tmpl, query, demos, true))
              .margin(1e-9));

    // epsilon 1e-4: smaller steps push the tiniest gradient entries into
    // central-difference cancellation noise
    const auto loss_fn = [&] {
        return -w * oracle::marginal_logprob(lm, enc, tmpl, query, demos, true);
    };
    CHECK(finite_diff_check(lm.parameters(), lm_grad, loss_fn, 1e-4) < 1e-4);
    CHECK(finite_diff_check(enc.parameters(), enc_grad, loss_fn, 1e-4) < 1e-4);
}

TEST_CASE("marginal loss over one demonstration is the plain prompt loss", "[training]") {
    ToyLm lm(train_lm_config(17));
    ToyEncoder enc(train_enc_config(17));
    const TemplateSet templates = manual_templates();
    const Template& tmpl = templates.for_condition(Condition::Neutral);
    const Sample query{"n-1", "d e", Condition::Neutral, "d"};
    const Sample demo{"n-2", "e f", Condition::Neutral, "e"};
    const double w = 1.3;

    std::vector<double> lm_grad_m(lm.parameters().size(), 0.0);
    std::vector<double> enc_grad(enc.parameters().size(), 0.0);
    const double marginal =
        marginal_loss_and_grad(lm, enc, tmpl, query, {demo}, w, lm_grad_m, enc_grad);

    std::vector<double> lm_grad_s(lm.parameters().size(), 0.0);
    const GeneratorContext ctx{render(tmpl, query.premise, std::nullopt, &demo),
                               kMaxLengthWithDemo};
    const double plain = sequence_loss_and_grad(lm, ctx, query.hypothesis, w, lm_grad_s);

    CHECK(marginal == Catch::Approx(plain).margin(1e-12));
    for (std::size_t i = 0; i < lm_grad_m.size(); ++i)
        CHECK(lm_grad_m[i] == Catch::Approx(lm_grad_s[i]).margin(1e-12));
    for (double g : enc_grad) CHECK(g == 0.0);  // singleton softmax has no slope
}

TEST_CASE("standard fine-tuning reduces the training loss", "[training]") {
    ToyLm lm(train_lm_config(3));
    const auto split = make_split({{"e-1", "a b", Condition::Entailment, "a"},
                                   {"n-1", "d e", Condition::Neutral, "d"},
                                   {"c-1", "g h", Condition::Contradiction, "g"}},
                                  balanced_dev(), 1);
    auto cfg = quick_config(50, 50, 3);
    std::vector<double> losses;
    const auto checkpoints = finetune(lm, Regime::Standard, nullptr, nullptr, split, cfg, &losses);
    REQUIRE(losses.size() == 50);
    for (double l : losses) CHECK(std::isfinite(l));
    CHECK(losses.back() < losses.front());
    REQUIRE(checkpoints.size() == 1);
    CHECK(checkpoints.front().epoch == 50);
    CHECK(!checkpoints.front().retriever_state.has_value());
}

TEST_CASE("reference hyperparameter grid yields the full checkpoint range", "[training]") {
    const auto split = make_split({{"e-1", "a b", Condition::Entailment, "a"},
                                   {"e-2", "b c", Condition::Entailment, "b"},
                                   {"n-1", "d e", Condition::Neutral, "d"},
                                   {"n-2", "e f", Condition::Neutral, "e"},
                                   {"c-1", "g h", Condition::Contradiction, "g"},
                                   {"c-2", "h a", Condition::Contradiction, "h"}},
                                  balanced_dev(), 2);

    TrainConfig first;  // learning_rate 5e-5, batch_size 32
    ToyLm lm_first(train_lm_config(3));
    const auto ck_first = finetune(lm_first, Regime::Standard, nullptr, nullptr, split, first);

    TrainConfig second;
    second.learning_rate = 1e-5;
    second.batch_size = 16;
    ToyLm lm_second(train_lm_config(3));
    const auto ck_second = finetune(lm_second, Regime::Standard, nullptr, nullptr, split, second);

    for (const auto* cks : {&ck_first, &ck_second}) {
        REQUIRE(cks->size() == 21);  // epochs 10 through 30
        CHECK(cks->front().epoch == 10);
        CHECK(cks->back().epoch == 30);
        for (const auto& c : *cks) {
            CHECK(c.dev_metrics.count(std::string(kSelectionMetric)) == 1);
            CHECK(c.dev_metrics.count("dev_loss") == 1);
        }
    }
    const auto& best_first = select_checkpoint(ck_first, kSelectionMetric);
    const auto& best_second = select_checkpoint(ck_second, kSelectionMetric);
    const double a = best_first.dev_metrics.at(std::string(kSelectionMetric));
    const double b = best_second.dev_metrics.at(std::string(kSelectionMetric));
    const auto& winner = a >= b ? best_first : best_second;
    CHECK(winner.dev_metrics.at(std::string(kSelectionMetric)) == std::max(a, b));
}

TEST_CASE("training is deterministic given the seed", "[training]") {
    const auto split = make_split(balanced_train(), balanced_dev());
    const auto cfg = quick_config(3, 2, 4);

    std::vector<double> losses_a, losses_b;
    ToyLm lm_a(train_lm_config(5));
    ToyEncoder enc_a(train_enc_config(5));
    const auto ck_a =
        train_dynamic(lm_a, enc_a, manual_templates(), split, cfg, {}, &losses_a);
    ToyLm lm_b(train_lm_config(5));
    ToyEncoder enc_b(train_enc_config(5));
    const auto ck_b =
        train_dynamic(lm_b, enc_b, manual_templates(), split, cfg, {}, &losses_b);

    CHECK(losses_a == losses_b);
    REQUIRE(ck_a.size() == ck_b.size());
    for (std::size_t i = 0; i < ck_a.size(); ++i) {
        CHECK(ck_a[i].epoch == ck_b[i].epoch);
        CHECK(ck_a[i].generator_state == ck_b[i].generator_state);
        REQUIRE(ck_a[i].retriever_state.has_value());
        CHECK(*ck_a[i].retriever_state == *ck_b[i].retriever_state);
        CHECK(ck_a[i].dev_metrics == ck_b[i].dev_metrics);
    }
}

TEST_CASE("static prompting with duplicated pools equals prompting with the demo inlined",
          "[training]") {
    // two identical-text samples per condition: every query retrieves the
    // same demonstration text, which a prompt-only template can inline
    std::vector<Sample> train;
    const std::vector<std::pair<std::string, std::string>> texts = {
        {"a b", "a"}, {"d e", "d"}, {"g h", "g"}};
    const std::vector<Condition> conds = {Condition::Entailment, Condition::Neutral,
                                          Condition::Contradiction};
    for (std::size_t c = 0; c < 3; ++c)
        for (int copy = 1; copy <= 2; ++copy)
            train.push_back({std::string(condition_name(conds[c])) + "-" + std::to_string(copy),
                             texts[c].first, conds[c], texts[c].second});
    const auto split = make_split(train, balanced_dev(), 2);
    const auto cfg = quick_config(3, 1, 2);
    const TemplateSet manual = manual_templates();
    const RandomEncoder encoder(4, 99);

    ToyLm lm_static(train_lm_config(5));
    const auto ck_static =
        finetune(lm_static, Regime::PromptStatic, &manual, &encoder, split, cfg);

    TemplateSet inlined = manual;
    for (std::size_t c = 0; c < 3; ++c) {
        const Template& base = manual.for_condition(conds[c]);
        const std::string prefix =
            render(base, texts[c].first, texts[c].second) + " [SEP] " + base.pattern;
        inlined.per_condition[conds[c]] = Template::make(conds[c], prefix, base.origin);
    }
    ToyLm lm_prompt(train_lm_config(5));
    const auto ck_prompt =
        finetune(lm_prompt, Regime::Prompt, &inlined, nullptr, split, cfg);

    const auto pa = lm_static.parameters();
    const auto pb = lm_prompt.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] == pb[i]);
    REQUIRE(ck_static.size() == ck_prompt.size());
    for (std::size_t i = 0; i < ck_static.size(); ++i)
        CHECK(ck_static[i].generator_state == ck_prompt[i].generator_state);
}

TEST_CASE("dynamic training with the full pool matches exact marginalization", "[training]") {
    const auto split = make_split(balanced_train(), balanced_dev());
    auto cfg = quick_config(1, 1, 9);
    cfg.top_k = 2;  // pool size after excluding the query

    // expected first-epoch loss from the initial parameters
    ToyLm lm_ref(train_lm_config(5));
    ToyEncoder enc_ref(train_enc_config(5));
    const TemplateSet templates = manual_templates();
    const auto pools = partition_by_condition(split.train);
    double expected = 0.0;
    for (const auto& q : split.train) {
        std::vector<Sample> pool;
        for (const auto& s : pools[q.condition])
            if (s.id != q.id) pool.push_back(s);
        expected += -oracle::marginal_logprob(lm_ref, enc_ref,
                                              templates.for_condition(q.condition), q, pool,
                                              true) /
                    static_cast<double>(split.train.size());
    }

    ToyLm lm(train_lm_config(5));
    ToyEncoder enc(train_enc_config(5));
    std::vector<double> losses;
    train_dynamic(lm, enc, templates, split, cfg, {}, &losses);
    REQUIRE(losses.size() == 1);
    CHECK(losses.front() == Catch::Approx(expected).margin(1e-9));
}

TEST_CASE("dynamic demonstration sets exclude the query and stay in condition", "[training]") {
    const auto split = make_split(balanced_train(), balanced_dev());
    auto cfg = quick_config(2, 2, 4);
    cfg.top_k = 2;

    std::size_t observed = 0;
    std::size_t last_step = 0;
    const DynamicStepObserver observer = [&](std::size_t epoch, std::size_t step,
                                             const Sample& query,
                                             const std::vector<Sample>& demo_set) {
        ++observed;
        CHECK(epoch >= 1);
        CHECK(step >= last_step);
        last_step = step;
        CHECK(demo_set.size() == 2);
        for (const auto& d : demo_set) {
            CHECK(d.id != query.id);
            CHECK(d.condition == query.condition);
        }
    };
    ToyLm lm(train_lm_config(5));
    ToyEncoder enc(train_enc_config(5));
    train_dynamic(lm, enc, manual_templates(), split, cfg, observer);
    CHECK(observed == 2 * split.train.size());
}

TEST_CASE("training rejects missing components", "[training]") {
    const auto split = make_split(balanced_train(), balanced_dev());
    const auto cfg = quick_config(2, 1, 4);
    ToyLm lm(train_lm_config(5));

    CHECK_THROWS_WITH(finetune(lm, Regime::Prompt, nullptr, nullptr, split, cfg),
                      Catch::Matchers::ContainsSubstring("requires a template set"));
    const TemplateSet templates = manual_templates();
    CHECK_THROWS_WITH(finetune(lm, Regime::PromptStatic, &templates, nullptr, split, cfg),
                      Catch::Matchers::ContainsSubstring("requires a sentence encoder"));
    CHECK_THROWS_WITH(finetune(lm, Regime::PromptDynamic, &templates, nullptr, split, cfg),
                      Catch::Matchers::ContainsSubstring("train_dynamic"));

    auto empty_train = split;
    empty_train.train.clear();
    CHECK_THROWS_AS(finetune(lm, Regime::Standard, nullptr, nullptr, empty_train, cfg),
                    std::invalid_argument);
    auto empty_dev = split;
    empty_dev.dev.clear();
    CHECK_THROWS_AS(finetune(lm, Regime::Standard, nullptr, nullptr, empty_dev, cfg),
                    std::invalid_argument);

    const RandomEncoder encoder(4, 1);
    auto thin = split;
    thin.train = {{"e-1", "a b", Condition::Entailment, "a"},
                  {"n-1", "d e", Condition::Neutral, "d"},
                  {"n-2", "e f", Condition::Neutral, "e"},
                  {"c-1", "g h", Condition::Contradiction, "g"},
                  {"c-2", "h a", Condition::Contradiction, "h"}};
    CHECK_THROWS_WITH(finetune(lm, Regime::PromptStatic, &templates, &encoder, thin, cfg),
                      Catch::Matchers::ContainsSubstring("fewer than 2"));
}

TEST_CASE("training aborts on a non-finite loss", "[training]") {
    HugeLossLm lm;
    const auto split = make_split({{"e-1", "a b", Condition::Entailment, "a a"},
                                   {"n-1", "d e", Condition::Neutral, "d d"},
                                   {"c-1", "g h", Condition::Contradiction, "g g"}},
                                  balanced_dev(), 1);
    const auto cfg = quick_config(1, 1, 3);
    CHECK_THROWS_WITH(finetune(lm, Regime::Standard, nullptr, nullptr, split, cfg),
                      Catch::Matchers::ContainsSubstring("diverged"));
}

TEST_CASE("runs save and load through the manifest", "[training]") {
    TempDir dir;
    const TemplateSet templates = manual_templates();
    TrainConfig cfg;
    cfg.learning_rate = 1e-5;
    cfg.top_k = 2;

    std::vector<Checkpoint> checkpoints(2);
    checkpoints[0].epoch = 10;
    checkpoints[0].generator_state = "{\"fake\":1}";
    checkpoints[0].dev_metrics = {{"rouge2", 0.12}, {"dev_loss", 3.4}};
    checkpoints[1].epoch = 11;
    checkpoints[1].generator_state = "{\"fake\":2}";
    checkpoints[1].retriever_state = "{\"fake\":3}";
    checkpoints[1].dev_metrics = {{"rouge2", 0.15}, {"dev_loss", 3.1}};

    const std::string run_dir = (dir.path / "run").string();
    save_run(run_dir, Regime::PromptDynamic, &templates, cfg, 21, checkpoints);
    const LoadedRun run = load_run(run_dir);

    CHECK(run.manifest.at("regime").get<std::string>() == "prompt_dynamic");
    CHECK(run.manifest.at("split_seed").get<int>() == 21);
    CHECK(run.manifest.at("config").get<TrainConfig>().top_k == 2);
    CHECK(run.manifest.at("templates").at("contradiction").get<std::string>() ==
          templates.for_condition(Condition::Contradiction).pattern);

    REQUIRE(run.checkpoints.size() == 2);
    CHECK(run.checkpoints[0].epoch == 10);
    CHECK(run.checkpoints[0].generator_state == "{\"fake\":1}");
    CHECK(!run.checkpoints[0].retriever_state.has_value());
    CHECK(run.checkpoints[1].retriever_state == "{\"fake\":3}");
    CHECK(run.checkpoints[1].dev_metrics.at("rouge2") == 0.15);

    const std::string bare_dir = (dir.path / "bare").string();
    save_run(bare_dir, Regime::Standard, nullptr, cfg, 13, {});
    CHECK(load_run(bare_dir).manifest.at("templates").is_null());

    CHECK_THROWS_WITH(load_run((dir.path / "missing").string()),
                      Catch::Matchers::ContainsSubstring("manifest"));
}

TEST_CASE("regime names roundtrip", "[training]") {
    for (Regime r : {Regime::Standard, Regime::Prompt, Regime::PromptStatic,
                     Regime::PromptDynamic})
        CHECK(parse_regime(regime_name(r)) == r);
    CHECK_THROWS_WITH(parse_regime("finetune"),
                      Catch::Matchers::ContainsSubstring("unknown regime"));
}
