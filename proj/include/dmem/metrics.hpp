#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dmem/text.hpp"

namespace dmem {

/// QA-style answer normalization: lowercase, drop punctuation, drop the
/// articles a/an/the, split on whitespace.
inline std::vector<std::string> normalize(std::string_view s) {
    std::string cleaned;
    cleaned.reserve(s.size());
    for (char c : s) {
        unsigned char u = static_cast<unsigned char>(c);
        if (std::ispunct(u)) continue;
        cleaned.push_back(static_cast<char>(std::tolower(u)));
    }
    std::vector<std::string> tokens;
    for (auto& tok : text::split_ws(cleaned)) {
        if (tok == "a" || tok == "an" || tok == "the") continue;
        tokens.push_back(std::move(tok));
    }
    return tokens;
}

/// Token-multiset F1 between prediction and gold. Both empty after
/// normalization scores 1, exactly one empty scores 0.
inline double f1(std::string_view pred, std::string_view gold) {
    auto p = normalize(pred);
    auto g = normalize(gold);
    if (p.empty() && g.empty()) return 1.0;
    if (p.empty() || g.empty()) return 0.0;
    std::map<std::string, int> gold_counts;
    for (const auto& t : g) ++gold_counts[t];
    int overlap = 0;
    for (const auto& t : p) {
        auto it = gold_counts.find(t);
        if (it != gold_counts.end() && it->second > 0) {
            ++overlap;
            --it->second;
        }
    }
    if (overlap == 0) return 0.0;
    double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
    double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
    return 2.0 * precision * recall / (precision + recall);
}

struct BleuOptions {
    int max_order = 4;
    double smoothing_epsilon = 0.1; // added to zero-match n-gram counts
};

/// Sentence BLEU: modified n-gram precision up to max_order, uniform weights
/// over the orders the prediction actually has, brevity penalty, and epsilon
/// smoothing on zero-match counts. Empty-side conventions mirror f1.
inline double bleu(std::string_view pred, std::string_view gold, BleuOptions opt = {}) {
    auto p = normalize(pred);
    auto g = normalize(gold);
    if (p.empty() && g.empty()) return 1.0;
    if (p.empty() || g.empty()) return 0.0;

    auto ngram_counts = [](const std::vector<std::string>& tokens, int n) {
        std::map<std::string, int> counts;
        if (static_cast<int>(tokens.size()) < n) return counts;
        for (size_t i = 0; i + n <= tokens.size(); ++i) {
            std::string key;
            for (int j = 0; j < n; ++j) {
                if (j) key.push_back('\x1f');
                key += tokens[i + j];
            }
            ++counts[key];
        }
        return counts;
    };

    int effective_order = std::min<int>(opt.max_order, static_cast<int>(p.size()));
    double weight = 1.0 / effective_order;
    double score = 1.0;
    for (int n = 1; n <= effective_order; ++n) {
        auto pc = ngram_counts(p, n);
        auto gc = ngram_counts(g, n);
        int total = 0, matches = 0;
        for (const auto& [key, count] : pc) {
            total += count;
            auto it = gc.find(key);
            if (it != gc.end()) matches += std::min(count, it->second);
        }
        double precision = matches > 0 ? static_cast<double>(matches) / total
                                       : opt.smoothing_epsilon / total;
        score *= std::pow(precision, weight);
    }
    double bp = p.size() >= g.size()
                    ? 1.0
                    : std::exp(1.0 - static_cast<double>(g.size()) / static_cast<double>(p.size()));
    return std::clamp(score * bp, 0.0, 1.0);
}

} // namespace dmem
