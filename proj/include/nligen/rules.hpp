#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nligen/corpus.hpp"
#include "nligen/rng.hpp"

namespace nligen {

enum class PosTag { Adj, Adv, Noun, Verb, Other };

inline std::string_view pos_tag_name(PosTag t) {
    switch (t) {
        case PosTag::Adj: return "ADJ";
        case PosTag::Adv: return "ADV";
        case PosTag::Noun: return "NOUN";
        case PosTag::Verb: return "VERB";
        case PosTag::Other: return "OTHER";
    }
    throw std::logic_error("unreachable");
}

inline PosTag parse_pos_tag(std::string_view name) {
    for (PosTag t : {PosTag::Adj, PosTag::Adv, PosTag::Noun, PosTag::Verb, PosTag::Other})
        if (pos_tag_name(t) == name) return t;
    throw std::invalid_argument("unknown POS tag: " + std::string(name));
}

struct TaggedSentence {
    std::vector<std::string> tokens;
    std::vector<PosTag> pos_tags;

    void validate() const {
        if (tokens.size() != pos_tags.size())
            throw std::invalid_argument("tagged sentence: token/tag length mismatch");
    }
};

class PosTagger {
public:
    virtual ~PosTagger() = default;
    virtual TaggedSentence tag(const std::string& text) const = 0;
};

// Word-list tagger for desk tests: case-insensitive lookup, unknown tokens
// tagged OTHER.
class DictionaryTagger final : public PosTagger {
public:
    void add(std::string_view token, PosTag tag) { table_[detail::lower(token)] = tag; }

    // tsv lines: token<TAB>TAG
    static DictionaryTagger from_tsv(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open tagger table: " + path);
        DictionaryTagger tagger;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (detail::trim(line).empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                         ": expected token<TAB>tag");
            tagger.add(detail::trim(line.substr(0, tab)),
                       parse_pos_tag(detail::trim(line.substr(tab + 1))));
        }
        return tagger;
    }

    TaggedSentence tag(const std::string& text) const override {
        TaggedSentence out;
        out.tokens = detail::whitespace_tokens(text);
        out.pos_tags.reserve(out.tokens.size());
        for (const auto& tok : out.tokens) {
            const auto it = table_.find(detail::lower(tok));
            out.pos_tags.push_back(it == table_.end() ? PosTag::Other : it->second);
        }
        return out;
    }

private:
    std::map<std::string, PosTag> table_;
};

// Antonym/hyponym lists plus the negation table for the contradiction
// fallback. Keys are lowercase; empty replacement lists are never stored.
struct LexicalResource {
    std::map<std::string, std::vector<std::string>> antonyms;
    std::map<std::string, std::vector<std::string>> hyponyms;
    // trigger verb -> negated form; falls back to inserting plain "not"
    std::vector<std::pair<std::string, std::string>> negation_insertions = {
        {"is", "is not"},   {"are", "are not"},   {"was", "was not"},
        {"were", "were not"}, {"does", "does not"}, {"do", "do not"},
        {"did", "did not"}, {"has", "has not"},   {"have", "have not"},
        {"can", "can not"}};

    void add_antonyms(std::string_view token, std::vector<std::string> list) {
        if (!list.empty()) antonyms[detail::lower(token)] = std::move(list);
    }
    void add_hyponyms(std::string_view token, std::vector<std::string> list) {
        if (!list.empty()) hyponyms[detail::lower(token)] = std::move(list);
    }

    // jsonl records: {"token": ..., "antonyms": [...], "hyponyms": [...]}
    static LexicalResource from_jsonl(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open lexicon: " + path);
        LexicalResource lex;
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
            const auto token = rec.at("token").get<std::string>();
            if (rec.contains("antonyms"))
                lex.add_antonyms(token, rec.at("antonyms").get<std::vector<std::string>>());
            if (rec.contains("hyponyms"))
                lex.add_hyponyms(token, rec.at("hyponyms").get<std::vector<std::string>>());
        }
        return lex;
    }
};

struct RuleOutcome {
    std::string text;
    bool modified = false;
};

namespace detail {

inline std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& tok : tokens) {
        if (!out.empty()) out += ' ';
        out += tok;
    }
    return out;
}

template <typename Eligible>
inline std::vector<std::size_t> eligible_positions(const TaggedSentence& s, Eligible&& pred) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < s.tokens.size(); ++i)
        if (pred(i)) out.push_back(i);
    return out;
}

}  // namespace detail

// Zero-shot rule baseline. Entailment drops every ADJ/ADV token (a premise
// with fewer details is entailed). Contradiction replaces one random
// antonym-bearing ADJ/ADV/VERB token, falling back to a negation insertion.
// Neutral replaces one random NOUN token with a hyponym, falling back to the
// unchanged premise with modified=false.
inline RuleOutcome rule_generate(const TaggedSentence& premise, Condition condition,
                                 const LexicalResource& lexicon, Rng& rng) {
    premise.validate();
    if (premise.tokens.empty()) throw std::invalid_argument("rule_generate: empty premise");

    const auto lookup = [&](const std::map<std::string, std::vector<std::string>>& table,
                            std::size_t i) -> const std::vector<std::string>* {
        const auto it = table.find(detail::lower(premise.tokens[i]));
        return it == table.end() ? nullptr : &it->second;
    };

    switch (condition) {
        case Condition::Entailment: {
            std::vector<std::string> kept;
            bool dropped = false;
            for (std::size_t i = 0; i < premise.tokens.size(); ++i) {
                if (premise.pos_tags[i] == PosTag::Adj || premise.pos_tags[i] == PosTag::Adv)
                    dropped = true;
                else
                    kept.push_back(premise.tokens[i]);
            }
            if (!dropped || kept.empty())
                return {detail::join_tokens(premise.tokens), false};
            return {detail::join_tokens(kept), true};
        }
        case Condition::Contradiction: {
            const auto eligible = detail::eligible_positions(premise, [&](std::size_t i) {
                const PosTag t = premise.pos_tags[i];
                return (t == PosTag::Adj || t == PosTag::Adv || t == PosTag::Verb) &&
                       lookup(lexicon.antonyms, i) != nullptr;
            });
            std::vector<std::string> tokens = premise.tokens;
            if (!eligible.empty()) {
                const std::size_t pos = eligible[rng.next_below(eligible.size())];
                const auto& options = *lookup(lexicon.antonyms, pos);
                tokens[pos] = options[rng.next_below(options.size())];
                return {detail::join_tokens(tokens), true};
            }
            for (std::size_t i = 0; i < tokens.size(); ++i) {
                if (premise.pos_tags[i] != PosTag::Verb) continue;
                const std::string low = detail::lower(tokens[i]);
                for (const auto& [trigger, negated] : lexicon.negation_insertions)
                    if (low == trigger) {
                        const auto words = detail::whitespace_tokens(negated);
                        tokens.erase(tokens.begin() + static_cast<std::ptrdiff_t>(i));
                        tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      words.begin(), words.end());
                        return {detail::join_tokens(tokens), true};
                    }
                tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(i), "not");
                return {detail::join_tokens(tokens), true};
            }
            tokens.insert(tokens.begin(), "Not");
            return {detail::join_tokens(tokens), true};
        }
        case Condition::Neutral: {
            const auto eligible = detail::eligible_positions(premise, [&](std::size_t i) {
                return premise.pos_tags[i] == PosTag::Noun && lookup(lexicon.hyponyms, i) != nullptr;
            });
            if (eligible.empty()) return {detail::join_tokens(premise.tokens), false};
            std::vector<std::string> tokens = premise.tokens;
            const std::size_t pos = eligible[rng.next_below(eligible.size())];
            const auto& options = *lookup(lexicon.hyponyms, pos);
            tokens[pos] = options[rng.next_below(options.size())];
            return {detail::join_tokens(tokens), true};
        }
    }
    throw std::logic_error("unreachable");
}

}  // namespace nligen
