#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nligen/corpus.hpp"
#include "nligen/generation.hpp"

namespace nligen {

using Tokenizer = std::function<std::vector<std::string>(std::string_view)>;

// Lowercased whitespace tokens; the default tokenizer for every text metric.
inline std::vector<std::string> metric_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
            continue;
        }
        cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

namespace detail {

inline std::map<std::string, std::size_t> ngram_counts(const std::vector<std::string>& tokens,
                                                       std::size_t n) {
    std::map<std::string, std::size_t> counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (std::size_t j = 1; j < n; ++j) {
            key += '\x1f';
            key += tokens[i + j];
        }
        ++counts[key];
    }
    return counts;
}

}  // namespace detail

struct NgramPrecision {
    std::size_t matched = 0;
    std::size_t total = 0;

    double value() const {
        return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
    }
};

// Clipped n-gram precision counts: each candidate n-gram matches at most as
// many times as its maximum count in any single reference.
inline NgramPrecision modified_ngram_precision(const std::vector<std::string>& candidate_tokens,
                                               const std::vector<std::vector<std::string>>& reference_token_lists,
                                               std::size_t n) {
    if (n == 0) throw std::invalid_argument("n-gram order must be positive");
    const auto cand = detail::ngram_counts(candidate_tokens, n);
    std::map<std::string, std::size_t> ref_max;
    for (const auto& ref : reference_token_lists)
        for (const auto& [gram, count] : detail::ngram_counts(ref, n)) {
            auto& slot = ref_max[gram];
            slot = std::max(slot, count);
        }
    NgramPrecision p;
    for (const auto& [gram, count] : cand) {
        p.total += count;
        const auto it = ref_max.find(gram);
        if (it != ref_max.end()) p.matched += std::min(count, it->second);
    }
    return p;
}

namespace detail {

// Closest reference length; ties go to the shorter reference.
inline std::size_t effective_reference_length(std::size_t candidate_len,
                                              const std::vector<std::vector<std::string>>& refs) {
    std::size_t best = refs.front().size();
    for (const auto& ref : refs) {
        const auto d = [&](std::size_t len) {
            return len > candidate_len ? len - candidate_len : candidate_len - len;
        };
        if (d(ref.size()) < d(best) || (d(ref.size()) == d(best) && ref.size() < best))
            best = ref.size();
    }
    return best;
}

inline double bleu_from_counts(const std::array<NgramPrecision, 4>& per_order,
                               std::size_t candidate_len, std::size_t reference_len,
                               bool smoothing) {
    double log_precision = 0.0;
    for (const auto& p : per_order) {
        std::size_t matched = p.matched;
        std::size_t total = p.total;
        if (total == 0) return 0.0;  // candidate too short for this order
        if (matched == 0) {
            if (!smoothing) return 0.0;
            ++matched;  // add-one smoothing on empty overlap
            ++total;
        }
        log_precision += 0.25 * std::log(static_cast<double>(matched) / static_cast<double>(total));
    }
    if (candidate_len == 0) return 0.0;
    const double bp = candidate_len >= reference_len
                          ? 1.0
                          : std::exp(1.0 - static_cast<double>(reference_len) /
                                               static_cast<double>(candidate_len));
    return bp * std::exp(log_precision);
}

}  // namespace detail

// Sentence BLEU with orders 1..4, uniform weights, brevity penalty.
inline double bleu4(std::string_view candidate, const std::vector<std::string>& references,
                    bool smoothing = false) {
    if (references.empty()) throw std::invalid_argument("bleu4: no references");
    const auto cand = metric_tokens(candidate);
    if (cand.empty()) throw std::invalid_argument("bleu4: candidate has no tokens");
    std::vector<std::vector<std::string>> refs;
    refs.reserve(references.size());
    for (const auto& r : references) refs.push_back(metric_tokens(r));
    std::array<NgramPrecision, 4> per_order{};
    for (std::size_t n = 1; n <= 4; ++n)
        per_order[n - 1] = modified_ngram_precision(cand, refs, n);
    return detail::bleu_from_counts(per_order, cand.size(),
                                    detail::effective_reference_length(cand.size(), refs),
                                    smoothing);
}

// Corpus BLEU: n-gram counts and lengths pooled over all pairs before the
// precision/brevity computation.
inline double corpus_bleu4(const std::vector<std::string>& candidates,
                           const std::vector<std::vector<std::string>>& references,
                           bool smoothing = false) {
    if (candidates.empty()) throw std::invalid_argument("corpus_bleu4: no candidates");
    if (candidates.size() != references.size())
        throw std::invalid_argument("corpus_bleu4: candidate/reference count mismatch");
    std::array<NgramPrecision, 4> per_order{};
    std::size_t cand_len = 0;
    std::size_t ref_len = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (references[i].empty()) throw std::invalid_argument("corpus_bleu4: no references");
        const auto cand = metric_tokens(candidates[i]);
        if (cand.empty()) throw std::invalid_argument("corpus_bleu4: candidate has no tokens");
        std::vector<std::vector<std::string>> refs;
        refs.reserve(references[i].size());
        for (const auto& r : references[i]) refs.push_back(metric_tokens(r));
        for (std::size_t n = 1; n <= 4; ++n) {
            const auto p = modified_ngram_precision(cand, refs, n);
            per_order[n - 1].matched += p.matched;
            per_order[n - 1].total += p.total;
        }
        cand_len += cand.size();
        ref_len += detail::effective_reference_length(cand.size(), refs);
    }
    return detail::bleu_from_counts(per_order, cand_len, ref_len, smoothing);
}

// Bigram F1. A reference shorter than two tokens has no bigrams; the score
// is defined as 0 and a warning is printed.
inline double rouge2(std::string_view candidate, std::string_view reference) {
    const auto cand = detail::ngram_counts(metric_tokens(candidate), 2);
    const auto ref_tokens = metric_tokens(reference);
    if (ref_tokens.size() < 2) {
        std::cerr << "rouge2: reference has fewer than 2 tokens; score defined as 0\n";
        return 0.0;
    }
    const auto ref = detail::ngram_counts(ref_tokens, 2);
    std::size_t overlap = 0;
    std::size_t cand_total = 0;
    std::size_t ref_total = 0;
    for (const auto& [gram, count] : cand) {
        cand_total += count;
        const auto it = ref.find(gram);
        if (it != ref.end()) overlap += std::min(count, it->second);
    }
    for (const auto& [gram, count] : ref) ref_total += count;
    if (overlap == 0 || cand_total == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / static_cast<double>(cand_total);
    const double recall = static_cast<double>(overlap) / static_cast<double>(ref_total);
    return 2.0 * precision * recall / (precision + recall);
}

// Distinct n-grams over total n-grams, pooled across all candidates.
inline double div_n(const std::vector<std::string>& candidates, std::size_t n) {
    if (n == 0) throw std::invalid_argument("div_n: n must be positive");
    std::map<std::string, std::size_t> pooled;
    std::size_t total = 0;
    for (const auto& c : candidates)
        for (const auto& [gram, count] : detail::ngram_counts(metric_tokens(c), n)) {
            pooled[gram] += count;
            total += count;
        }
    if (total == 0)
        throw std::invalid_argument("div_n: no " + std::to_string(n) + "-grams in any candidate");
    return static_cast<double>(pooled.size()) / static_cast<double>(total);
}

// Token-level micro-averaged perplexity over (context, hypothesis) pairs.
inline double perplexity(const LanguageModel& lm, const std::vector<Sample>& samples,
                         const std::function<GeneratorContext(const Sample&)>& context_builder) {
    if (samples.empty()) throw std::invalid_argument("perplexity: no samples");
    double total_logprob = 0.0;
    std::size_t total_tokens = 0;
    for (const auto& s : samples) {
        const auto scored = score_sequence(lm, context_builder(s), s.hypothesis);
        total_logprob += scored.total();
        total_tokens += scored.tokens.size();
    }
    return std::exp(-total_logprob / static_cast<double>(total_tokens));
}

// NLI classifier contract used for the condition-accuracy metric.
class NliClassifier {
public:
    virtual ~NliClassifier() = default;
    virtual Condition classify(const std::string& premise, const std::string& hypothesis) const = 0;
};

// Desk-test classifier: a hypothesis introducing a negation token reads as a
// contradiction; otherwise high token overlap with the premise reads as an
// entailment and low overlap as neutral.
class ToyHeuristicClassifier final : public NliClassifier {
public:
    explicit ToyHeuristicClassifier(double entail_overlap_threshold = 0.66)
        : threshold_(entail_overlap_threshold) {}

    Condition classify(const std::string& premise, const std::string& hypothesis) const override {
        static const std::vector<std::string> kNegations = {
            "not", "no", "never", "don't", "dont", "isn't", "isnt",
            "can't", "cannot", "nobody", "none", "won't", "wont"};
        const auto prem = metric_tokens(premise);
        const auto hyp = metric_tokens(hypothesis);
        if (hyp.empty()) return Condition::Neutral;
        for (const auto& tok : hyp) {
            const bool negation =
                std::find(kNegations.begin(), kNegations.end(), tok) != kNegations.end();
            const bool in_premise = std::find(prem.begin(), prem.end(), tok) != prem.end();
            if (negation && !in_premise) return Condition::Contradiction;
        }
        std::size_t covered = 0;
        for (const auto& tok : hyp)
            if (std::find(prem.begin(), prem.end(), tok) != prem.end()) ++covered;
        const double overlap = static_cast<double>(covered) / static_cast<double>(hyp.size());
        return overlap >= threshold_ ? Condition::Entailment : Condition::Neutral;
    }

private:
    double threshold_;
};

// Adapter for an external pretrained classifier: predictions are produced
// offline and read from a jsonl file of {premise, hypothesis, label}.
class PrecomputedClassifier final : public NliClassifier {
public:
    void add(const std::string& premise, const std::string& hypothesis, Condition label) {
        table_[key(premise, hypothesis)] = label;
    }

    static PrecomputedClassifier from_jsonl(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open predictions: " + path);
        PrecomputedClassifier c;
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
            c.add(rec.at("premise").get<std::string>(), rec.at("hypothesis").get<std::string>(),
                  require_condition(rec.at("label").get<std::string>()));
        }
        return c;
    }

    Condition classify(const std::string& premise, const std::string& hypothesis) const override {
        const auto it = table_.find(key(premise, hypothesis));
        if (it == table_.end())
            throw std::runtime_error("no precomputed prediction for premise \"" + premise +
                                     "\" / hypothesis \"" + hypothesis + "\"");
        return it->second;
    }

private:
    static std::string key(const std::string& p, const std::string& h) { return p + '\x1f' + h; }
    std::map<std::string, Condition> table_;
};

struct ClassifiedTriple {
    std::string premise;
    Condition condition = Condition::Entailment;
    std::string hypothesis;
};

// Fraction of generations the classifier assigns the intended condition.
inline double condition_accuracy(const NliClassifier& classifier,
                                 const std::vector<ClassifiedTriple>& triples) {
    if (triples.empty()) throw std::invalid_argument("condition_accuracy: no triples");
    std::size_t correct = 0;
    for (const auto& t : triples)
        if (classifier.classify(t.premise, t.hypothesis) == t.condition) ++correct;
    return static_cast<double>(correct) / static_cast<double>(triples.size());
}

inline const std::vector<std::string>& metric_keys() {
    static const std::vector<std::string> keys = {"accuracy", "bleu4", "rouge2",
                                                  "ppl",      "div2",  "div3"};
    return keys;
}

struct MetricReport {
    int split_seed = 0;
    std::map<std::string, double> values;

    void validate() const {
        for (const auto& key : metric_keys())
            if (!values.count(key)) throw std::invalid_argument("metric report missing " + key);
        for (const auto& key : {"accuracy", "bleu4", "rouge2", "div2", "div3"}) {
            const double v = values.at(key);
            if (v < 0.0 || v > 1.0)
                throw std::invalid_argument(std::string(key) + " out of [0,1]: " +
                                            std::to_string(v));
        }
        if (values.at("ppl") < 1.0)
            throw std::invalid_argument("ppl below 1: " + std::to_string(values.at("ppl")));
    }
};

struct AggregateReport {
    std::size_t report_count = 0;
    std::map<std::string, double> mean;
    std::map<std::string, double> stddev;  // population standard deviation
};

inline AggregateReport aggregate_splits(const std::vector<MetricReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("aggregate_splits: no reports");
    AggregateReport agg;
    agg.report_count = reports.size();
    for (const auto& key : metric_keys()) {
        double sum = 0.0;
        for (const auto& r : reports) sum += r.values.at(key);
        const double mean = sum / static_cast<double>(reports.size());
        double var = 0.0;
        for (const auto& r : reports) {
            const double d = r.values.at(key) - mean;
            var += d * d;
        }
        agg.mean[key] = mean;
        agg.stddev[key] = std::sqrt(var / static_cast<double>(reports.size()));
    }
    return agg;
}

// "74.44(4.74)": mean and parenthesized std, both scaled to percent.
inline std::string format_percent_mean_std(double mean, double stddev) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(2);
    out << mean * 100.0 << '(' << stddev * 100.0 << ')';
    return out.str();
}

inline std::string format_fixed(double value) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(2);
    out << value;
    return out.str();
}

struct ReportMetadata {
    std::string bleu_granularity = "corpus-level";
    std::string rouge_granularity = "mean sentence-level";
    std::string ppl_context = "generation context (demonstration included when the model uses one)";
};

namespace detail {

inline std::vector<std::string> report_row(const AggregateReport& agg) {
    return {format_percent_mean_std(agg.mean.at("accuracy"), agg.stddev.at("accuracy")),
            format_fixed(agg.mean.at("bleu4") * 100.0),
            format_fixed(agg.mean.at("rouge2") * 100.0),
            format_fixed(agg.mean.at("ppl")),
            format_fixed(agg.mean.at("div2") * 100.0),
            format_fixed(agg.mean.at("div3") * 100.0)};
}

}  // namespace detail

inline void write_report_tsv(std::ostream& out,
                             const std::vector<std::pair<std::string, AggregateReport>>& rows,
                             const ReportMetadata& meta = {}) {
    out << "# bleu4: " << meta.bleu_granularity << "; rouge2: " << meta.rouge_granularity
        << "; ppl context: " << meta.ppl_context << '\n';
    out << "model\tacc(std)\tB-4\tR-2\tPPL\tDiv-2\tDiv-3\n";
    for (const auto& [name, agg] : rows) {
        out << name;
        for (const auto& cell : detail::report_row(agg)) out << '\t' << cell;
        out << '\n';
    }
}

inline void write_report_markdown(std::ostream& out,
                                  const std::vector<std::pair<std::string, AggregateReport>>& rows,
                                  const ReportMetadata& meta = {}) {
    out << "| model | acc(std) | B-4 | R-2 | PPL | Div-2 | Div-3 |\n";
    out << "|---|---|---|---|---|---|---|\n";
    for (const auto& [name, agg] : rows) {
        out << "| " << name;
        for (const auto& cell : detail::report_row(agg)) out << " | " << cell;
        out << " |\n";
    }
    out << "\nbleu4: " << meta.bleu_granularity << "; rouge2: " << meta.rouge_granularity
        << "; ppl context: " << meta.ppl_context << '\n';
}

}  // namespace nligen
