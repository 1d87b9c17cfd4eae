#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nligen/rng.hpp"

namespace nligen {

// The three generation conditions, in fixed iteration order.
enum class Condition : int { Entailment = 0, Neutral = 1, Contradiction = 2 };

inline constexpr std::array<Condition, 3> kAllConditions = {
    Condition::Entailment, Condition::Neutral, Condition::Contradiction};

inline constexpr std::size_t condition_index(Condition c) {
    return static_cast<std::size_t>(c);
}

inline std::string_view condition_name(Condition c) {
    switch (c) {
        case Condition::Entailment: return "entailment";
        case Condition::Neutral: return "neutral";
        case Condition::Contradiction: return "contradiction";
    }
    return "?";
}

// Parses a dataset label. Returns nullopt for labels outside the condition
// set (SNLI/MNLI use "-" for items without a gold label).
inline std::optional<Condition> parse_condition(std::string_view label) {
    if (label == "entailment") return Condition::Entailment;
    if (label == "neutral") return Condition::Neutral;
    if (label == "contradiction") return Condition::Contradiction;
    return std::nullopt;
}

inline Condition require_condition(std::string_view label) {
    auto c = parse_condition(label);
    if (!c) throw std::invalid_argument("unknown condition label: " + std::string(label));
    return *c;
}

// Fixed-size map keyed by Condition.
template <typename T>
struct ConditionMap {
    std::array<T, 3> values{};

    T& operator[](Condition c) { return values[condition_index(c)]; }
    const T& operator[](Condition c) const { return values[condition_index(c)]; }
};

struct Sample {
    std::string id;
    std::string premise;
    Condition condition = Condition::Entailment;
    std::string hypothesis;
};

inline bool operator==(const Sample& a, const Sample& b) {
    return a.id == b.id && a.premise == b.premise && a.condition == b.condition &&
           a.hypothesis == b.hypothesis;
}

// A K-shot split: exactly k samples per condition in train and in dev,
// disjoint by id.
struct FewShotSplit {
    std::uint64_t seed = 0;
    std::size_t k_per_condition = 0;
    std::vector<Sample> train;
    std::vector<Sample> dev;
};

struct LoadedDataset {
    std::vector<Sample> samples;
    std::size_t skipped = 0;  // records whose label is outside the condition set
    std::size_t raw_records = 0;
};

enum class DatasetFormat { Tsv, Jsonl };

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::string lower(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char ch : text) out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

inline std::vector<std::string> whitespace_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline std::optional<std::size_t> find_column(const std::vector<std::string>& header,
                                              std::initializer_list<std::string_view> names) {
    for (std::size_t i = 0; i < header.size(); ++i)
        for (auto name : names)
            if (header[i] == name) return i;
    return std::nullopt;
}

inline const nlohmann::json* find_field(const nlohmann::json& rec,
                                        std::initializer_list<std::string_view> names) {
    for (auto name : names) {
        auto it = rec.find(name);
        if (it != rec.end() && !it->is_null()) return &*it;
    }
    return nullptr;
}

}  // namespace detail

// Loads an NLI dataset. Both the official tab-separated layout (header row
// with gold_label / sentence1 / sentence2) and jsonl (label/gold_label,
// premise/sentence1, hypothesis/sentence2) are accepted. Records whose label
// is not a known condition are skipped and counted; malformed records are an
// error naming the line.
inline LoadedDataset load_dataset(const std::string& path, DatasetFormat format) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);

    LoadedDataset result;
    std::string line;
    std::size_t line_no = 0;

    auto fail = [&](const std::string& what) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
    };

    auto add = [&](std::string id, std::string premise, std::string label, std::string hypothesis) {
        ++result.raw_records;
        auto condition = parse_condition(label);
        if (!condition) {
            ++result.skipped;
            return;
        }
        premise = detail::trim(premise);
        hypothesis = detail::trim(hypothesis);
        if (premise.empty()) fail("empty premise");
        if (hypothesis.empty()) fail("empty hypothesis");
        result.samples.push_back(Sample{std::move(id), std::move(premise), *condition,
                                        std::move(hypothesis)});
    };

    if (format == DatasetFormat::Tsv) {
        if (!std::getline(in, line)) throw std::runtime_error("empty dataset: " + path);
        ++line_no;
        auto header = detail::split_tabs(line);
        auto label_col = detail::find_column(header, {"gold_label", "label"});
        auto premise_col = detail::find_column(header, {"sentence1", "premise"});
        auto hypothesis_col = detail::find_column(header, {"sentence2", "hypothesis"});
        auto id_col = detail::find_column(header, {"pairID", "id"});
        if (!label_col || !premise_col || !hypothesis_col)
            fail("header must name gold_label/label, sentence1/premise, sentence2/hypothesis");

        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            auto cols = detail::split_tabs(line);
            std::size_t needed = std::max({*label_col, *premise_col, *hypothesis_col});
            if (cols.size() <= needed) fail("expected at least " + std::to_string(needed + 1) + " columns");
            std::string id = (id_col && *id_col < cols.size() && !cols[*id_col].empty())
                                 ? cols[*id_col]
                                 : "line-" + std::to_string(line_no);
            add(std::move(id), cols[*premise_col], cols[*label_col], cols[*hypothesis_col]);
        }
    } else {
        while (std::getline(in, line)) {
            ++line_no;
            if (detail::trim(line).empty()) continue;
            nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
            if (rec.is_discarded() || !rec.is_object()) fail("malformed json record");
            const auto* label = detail::find_field(rec, {"label", "gold_label"});
            const auto* premise = detail::find_field(rec, {"premise", "sentence1"});
            const auto* hypothesis = detail::find_field(rec, {"hypothesis", "sentence2"});
            if (!label || !premise || !hypothesis) fail("record missing premise/hypothesis/label");
            if (!label->is_string() || !premise->is_string() || !hypothesis->is_string())
                fail("premise/hypothesis/label must be strings");
            const auto* id = detail::find_field(rec, {"id", "pairID"});
            std::string id_str = (id && id->is_string() && !id->get<std::string>().empty())
                                     ? id->get<std::string>()
                                     : "line-" + std::to_string(line_no);
            add(std::move(id_str), premise->get<std::string>(), label->get<std::string>(),
                hypothesis->get<std::string>());
        }
    }

    if (result.samples.empty())
        throw std::runtime_error("dataset has no usable samples: " + path);
    return result;
}

inline void save_samples_jsonl(const std::string& path, const std::vector<Sample>& samples) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write: " + path);
    for (const auto& s : samples) {
        nlohmann::json rec = {{"id", s.id},
                              {"premise", s.premise},
                              {"label", std::string(condition_name(s.condition))},
                              {"hypothesis", s.hypothesis}};
        out << rec.dump() << '\n';
    }
}

// Buckets samples by condition, preserving input order within each bucket.
inline ConditionMap<std::vector<Sample>> partition_by_condition(const std::vector<Sample>& samples) {
    ConditionMap<std::vector<Sample>> buckets;
    for (const auto& s : samples) buckets[s.condition].push_back(s);
    return buckets;
}

// Draws a K-shot split: 2k samples per condition without replacement from a
// single seeded stream consumed in fixed condition order; the first k go to
// train, the next k to dev. Deterministic given (dataset order, k, seed).
inline FewShotSplit sample_few_shot_split(const std::vector<Sample>& dataset, std::size_t k,
                                          std::uint64_t seed) {
    if (k == 0) throw std::invalid_argument("k must be positive");
    auto buckets = partition_by_condition(dataset);
    for (Condition c : kAllConditions) {
        if (buckets[c].size() < 2 * k) {
            std::ostringstream msg;
            msg << "condition " << condition_name(c) << " needs " << 2 * k << " samples, has "
                << buckets[c].size();
            throw std::runtime_error(msg.str());
        }
    }

    FewShotSplit split;
    split.seed = seed;
    split.k_per_condition = k;
    Rng rng(seed);
    for (Condition c : kAllConditions) {
        auto& bucket = buckets[c];
        // partial Fisher-Yates: only the first 2k slots need to be randomized
        for (std::size_t i = 0; i < 2 * k; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.next_below(bucket.size() - i));
            std::swap(bucket[i], bucket[j]);
        }
        for (std::size_t i = 0; i < k; ++i) split.train.push_back(bucket[i]);
        for (std::size_t i = k; i < 2 * k; ++i) split.dev.push_back(bucket[i]);
    }
    return split;
}

// Split files are jsonl: a header record {seed, k} followed by sample
// records tagged with their role.
inline void save_split(const std::string& path, const FewShotSplit& split) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write: " + path);
    out << nlohmann::json{{"seed", split.seed}, {"k", split.k_per_condition}}.dump() << '\n';
    auto emit = [&](const std::vector<Sample>& samples, const char* role) {
        for (const auto& s : samples) {
            nlohmann::json rec = {{"split", role},
                                  {"id", s.id},
                                  {"premise", s.premise},
                                  {"label", std::string(condition_name(s.condition))},
                                  {"hypothesis", s.hypothesis}};
            out << rec.dump() << '\n';
        }
    };
    emit(split.train, "train");
    emit(split.dev, "dev");
}

inline FewShotSplit load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open split file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty split file: " + path);
    nlohmann::json header = nlohmann::json::parse(line);
    FewShotSplit split;
    split.seed = header.at("seed").get<std::uint64_t>();
    split.k_per_condition = header.at("k").get<std::size_t>();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
        if (rec.is_discarded())
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed record");
        Sample s{rec.at("id").get<std::string>(), rec.at("premise").get<std::string>(),
                 require_condition(rec.at("label").get<std::string>()),
                 rec.at("hypothesis").get<std::string>()};
        const auto role = rec.at("split").get<std::string>();
        if (role == "train")
            split.train.push_back(std::move(s));
        else if (role == "dev")
            split.dev.push_back(std::move(s));
        else
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": unknown role " + role);
    }
    return split;
}

}  // namespace nligen
