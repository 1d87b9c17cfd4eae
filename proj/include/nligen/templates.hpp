#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "nligen/corpus.hpp"

namespace nligen {

// Slot markers used in template patterns and the on-disk template format.
inline constexpr std::string_view kPremiseSlot = "⟨p⟩";     // ⟨p⟩
inline constexpr std::string_view kHypothesisSlot = "⟨h⟩";  // ⟨h⟩

enum class TemplateOrigin { Manual, Generated };

// A condition-specific prompt pattern with one premise slot and one
// hypothesis slot, premise first (the prompt is a generation prefix).
struct Template {
    Condition condition = Condition::Entailment;
    std::string pattern;
    TemplateOrigin origin = TemplateOrigin::Manual;
    bool empty_connective = false;

    static Template make(Condition condition, std::string pattern,
                         TemplateOrigin origin = TemplateOrigin::Manual,
                         bool empty_connective = false) {
        Template t{condition, std::move(pattern), origin, empty_connective};
        t.validate();
        return t;
    }

    std::size_t premise_pos() const { return pattern.find(kPremiseSlot); }
    std::size_t hypothesis_pos() const { return pattern.find(kHypothesisSlot); }

    void validate() const {
        const auto p = pattern.find(kPremiseSlot);
        const auto h = pattern.find(kHypothesisSlot);
        if (p == std::string::npos || pattern.find(kPremiseSlot, p + 1) != std::string::npos)
            throw std::invalid_argument("template needs exactly one premise slot: " + pattern);
        if (h == std::string::npos || pattern.find(kHypothesisSlot, h + 1) != std::string::npos)
            throw std::invalid_argument("template needs exactly one hypothesis slot: " + pattern);
        if (p > h)
            throw std::invalid_argument("premise slot must precede hypothesis slot: " + pattern);
        if (!empty_connective) {
            std::string rest = pattern;
            rest.erase(rest.find(kPremiseSlot), kPremiseSlot.size());
            rest.erase(rest.find(kHypothesisSlot), kHypothesisSlot.size());
            if (detail::trim(rest).empty())
                throw std::invalid_argument(
                    "template text is empty; flag it as the empty connective if intended");
        }
    }
};

// One template per condition.
struct TemplateSet {
    ConditionMap<Template> per_condition;

    static TemplateSet make(Template entailment, Template neutral, Template contradiction) {
        TemplateSet set;
        set.per_condition[Condition::Entailment] = std::move(entailment);
        set.per_condition[Condition::Neutral] = std::move(neutral);
        set.per_condition[Condition::Contradiction] = std::move(contradiction);
        set.validate();
        return set;
    }

    const Template& for_condition(Condition c) const { return per_condition[c]; }

    void validate() const {
        for (Condition c : kAllConditions) {
            per_condition[c].validate();
            if (per_condition[c].condition != c)
                throw std::invalid_argument("template set entry for " +
                                            std::string(condition_name(c)) +
                                            " carries a different condition");
        }
    }
};

// The hand-crafted template set.
inline TemplateSet manual_templates() {
    return TemplateSet::make(
        Template::make(Condition::Entailment, "⟨p⟩ Then ⟨h⟩"),
        Template::make(Condition::Neutral, "⟨p⟩ Maybe ⟨h⟩"),
        Template::make(Condition::Contradiction, "⟨p⟩ But ⟨h⟩"));
}

// Builds a connective-between-slots template from a connective string.
inline Template connective_template(Condition condition, std::string_view connective,
                                    TemplateOrigin origin = TemplateOrigin::Generated) {
    std::string conn = detail::trim(connective);
    std::string pattern = std::string(kPremiseSlot);
    if (!conn.empty()) pattern += " " + conn;
    pattern += " ";
    pattern += kHypothesisSlot;
    return Template::make(condition, std::move(pattern), origin, conn.empty());
}

namespace detail {

inline std::string fill_slots(const Template& t, std::string_view premise,
                              std::optional<std::string_view> hypothesis) {
    std::string out = t.pattern;
    out.replace(out.find(kPremiseSlot), kPremiseSlot.size(), premise);
    const auto h = out.find(kHypothesisSlot);
    if (hypothesis) {
        out.replace(h, kHypothesisSlot.size(), *hypothesis);
    } else {
        out.erase(h);  // truncate at the slot: the result is a generation prefix
    }
    return out;
}

inline std::string normalize_spaces(std::string_view text) {
    std::string out;
    bool in_space = false;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty()) out += ' ';
        in_space = false;
        out += ch;
    }
    return out;
}

}  // namespace detail

// Renders a prompt. With a demonstration the prompt is the demonstration's
// filled template, the separator, then the query part; without a hypothesis
// the pattern is cut at the hypothesis slot so the text is a prefix the
// generator continues.
inline std::string render(const Template& t, std::string_view premise,
                          std::optional<std::string_view> hypothesis = std::nullopt,
                          const Sample* demonstration = nullptr,
                          std::string_view separator = "[SEP]") {
    std::string out;
    if (demonstration != nullptr) {
        if (demonstration->condition != t.condition)
            throw std::invalid_argument(
                "demonstration condition " +
                std::string(condition_name(demonstration->condition)) +
                " does not match template condition " + std::string(condition_name(t.condition)));
        out += detail::fill_slots(t, demonstration->premise, demonstration->hypothesis);
        out += ' ';
        out += separator;
        out += ' ';
    }
    out += detail::fill_slots(t, premise, hypothesis);
    return out;
}

// The mask-filled prompt used to elicit connective candidates:
// premise, one mask token, hypothesis, single-space joined.
inline std::string build_fill_prompt(const Sample& sample, std::string_view mask_token) {
    std::string out = detail::normalize_spaces(sample.premise);
    out += ' ';
    out += mask_token;
    out += ' ';
    out += detail::normalize_spaces(sample.hypothesis);
    return out;
}

// Dev scores for a list of same-condition candidate templates. Row t holds
// the candidate's score on each condition's data; own_column is the
// candidate condition's column.
struct ScoreMatrix {
    Condition condition = Condition::Entailment;
    std::vector<Template> candidates;
    std::vector<std::vector<double>> scores;
    std::size_t columns = 3;
    std::size_t own_column = 0;

    static ScoreMatrix make(Condition condition, std::vector<Template> candidates,
                            std::vector<std::vector<double>> scores) {
        ScoreMatrix m;
        m.condition = condition;
        m.candidates = std::move(candidates);
        m.scores = std::move(scores);
        m.columns = 3;
        m.own_column = condition_index(condition);
        m.validate();
        return m;
    }

    void validate() const {
        if (candidates.size() != scores.size())
            throw std::invalid_argument("score matrix: row count != candidate count");
        if (own_column >= columns) throw std::invalid_argument("score matrix: own column out of range");
        for (const auto& row : scores) {
            if (row.size() != columns)
                throw std::invalid_argument("score matrix: ragged row");
            for (double v : row)
                if (!std::isfinite(v)) throw std::invalid_argument("score matrix: non-finite entry");
        }
    }
};

enum class SelectionStrategy { Top, MaxMargin };

// Signed margin for one row: the own-condition score minus every other
// condition's score.
inline double margin_score(const ScoreMatrix& m, std::size_t row) {
    double total = 0.0;
    for (std::size_t k = 0; k < m.columns; ++k)
        total += (k == m.own_column ? 1.0 : -1.0) * m.scores[row][k];
    return total;
}

// Top picks the best own-condition score; max-margin additionally penalizes
// templates that also score well on the other conditions. Ties go to the
// lowest candidate index.
inline Template select_template(const ScoreMatrix& matrix, SelectionStrategy strategy,
                                Condition condition) {
    matrix.validate();
    if (matrix.candidates.empty()) throw std::invalid_argument("select_template: empty matrix");
    if (condition != matrix.condition)
        throw std::invalid_argument("select_template: condition does not match matrix");
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < matrix.candidates.size(); ++t) {
        const double s = strategy == SelectionStrategy::Top ? matrix.scores[t][matrix.own_column]
                                                            : margin_score(matrix, t);
        if (s > best_score) {
            best_score = s;
            best = t;
        }
    }
    return matrix.candidates[best];
}

// Span infiller contract: an autoregressive model over connective tokens
// conditioned on a sample's premise/hypothesis context. next_span_logprobs
// scores every vocabulary entry as the next span token; the end id's entry
// scores terminating the span there.
class SpanInfiller {
public:
    virtual ~SpanInfiller() = default;
    virtual std::size_t vocab_size() const = 0;
    virtual const std::string& token_text(int id) const = 0;
    virtual int end_id() const = 0;
    virtual std::vector<double> next_span_logprobs(const Sample& sample,
                                                   std::span<const int> span_prefix) const = 0;
};

namespace detail {

struct SpanBeam {
    std::vector<int> tokens;
    double score = 0.0;
};

inline bool beam_before(const SpanBeam& a, const SpanBeam& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;  // deterministic tie-break
}

}  // namespace detail

// Beam search over connective spans, scored by the sum over the bucket of
// the infiller's span log-probability. Returns up to beam_width distinct
// connective templates, best first.
inline std::vector<Template> generate_candidate_templates(const SpanInfiller& infiller,
                                                          const std::vector<Sample>& train_bucket,
                                                          Condition condition,
                                                          std::size_t beam_width,
                                                          std::size_t max_span_tokens = 5) {
    if (train_bucket.empty())
        throw std::invalid_argument("generate_candidate_templates: empty bucket");
    for (const auto& s : train_bucket)
        if (s.condition != condition)
            throw std::invalid_argument("generate_candidate_templates: sample " + s.id +
                                        " is not condition " +
                                        std::string(condition_name(condition)));
    if (beam_width == 0) throw std::invalid_argument("beam width must be positive");

    const std::size_t vocab = infiller.vocab_size();
    const int end_id = infiller.end_id();

    // summed next-token scores across the bucket for one beam state
    auto summed_logprobs = [&](const detail::SpanBeam& beam) {
        std::vector<double> total(vocab, 0.0);
        for (const auto& s : train_bucket) {
            std::vector<double> lp;
            try {
                lp = infiller.next_span_logprobs(s, beam.tokens);
            } catch (const std::exception& e) {
                throw std::runtime_error("span infiller failed on sample " + s.id + ": " + e.what());
            }
            if (lp.size() != vocab)
                throw std::runtime_error("span infiller returned " + std::to_string(lp.size()) +
                                         " scores, expected " + std::to_string(vocab));
            for (std::size_t v = 0; v < vocab; ++v) total[v] += lp[v];
        }
        return total;
    };

    std::vector<detail::SpanBeam> alive{detail::SpanBeam{}};
    std::vector<detail::SpanBeam> finished;
    for (std::size_t step = 0; step <= max_span_tokens && !alive.empty(); ++step) {
        std::vector<detail::SpanBeam> next;
        for (const auto& beam : alive) {
            const auto total = summed_logprobs(beam);
            if (step == max_span_tokens) {
                // span budget exhausted: close the beam with the end score
                detail::SpanBeam done = beam;
                done.score += total[static_cast<std::size_t>(end_id)];
                finished.push_back(std::move(done));
                continue;
            }
            for (std::size_t v = 0; v < vocab; ++v) {
                if (!std::isfinite(total[v])) continue;
                detail::SpanBeam ext = beam;
                ext.score += total[v];
                if (static_cast<int>(v) == end_id) {
                    finished.push_back(std::move(ext));
                } else {
                    ext.tokens.push_back(static_cast<int>(v));
                    next.push_back(std::move(ext));
                }
            }
        }
        std::sort(next.begin(), next.end(), detail::beam_before);
        if (next.size() > beam_width) next.resize(beam_width);
        alive = std::move(next);
    }

    std::sort(finished.begin(), finished.end(), detail::beam_before);

    std::vector<Template> out;
    std::vector<std::string> seen;
    for (const auto& beam : finished) {
        std::string connective;
        for (int id : beam.tokens) {
            if (!connective.empty()) connective += ' ';
            connective += infiller.token_text(id);
        }
        connective = detail::normalize_spaces(connective);
        if (std::find(seen.begin(), seen.end(), connective) != seen.end()) continue;
        seen.push_back(connective);
        out.push_back(connective_template(condition, connective));
        if (out.size() == beam_width) break;
    }
    if (out.empty())
        throw std::runtime_error("template candidate generation produced no candidates");
    return out;
}

// On-disk template set format: one line per condition, condition<TAB>pattern.
inline void save_template_set(const std::string& path, const TemplateSet& set) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write: " + path);
    for (Condition c : kAllConditions)
        out << condition_name(c) << '\t' << set.per_condition[c].pattern << '\n';
}

inline TemplateSet load_template_set(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open template set: " + path);
    TemplateSet set;
    std::array<bool, 3> filled{};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected condition<TAB>pattern");
        const Condition c = require_condition(line.substr(0, tab));
        std::string pattern = line.substr(tab + 1);
        const bool empty_conn = detail::trim(pattern) ==
                                std::string(kPremiseSlot) + " " + std::string(kHypothesisSlot);
        set.per_condition[c] = Template::make(c, std::move(pattern), TemplateOrigin::Manual,
                                              empty_conn);
        filled[condition_index(c)] = true;
    }
    for (Condition c : kAllConditions)
        if (!filled[condition_index(c)])
            throw std::runtime_error(path + ": missing template for " +
                                     std::string(condition_name(c)));
    set.validate();
    return set;
}

}  // namespace nligen
