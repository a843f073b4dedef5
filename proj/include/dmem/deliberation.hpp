#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "dmem/conversation.hpp"
#include "dmem/gateway.hpp"
#include "dmem/log.hpp"
#include "dmem/mem0star.hpp"
#include "dmem/trace.hpp"

namespace dmem {

/// One slice of raw history. Chunks partition the conversation; the history
/// window carries the messages immediately preceding the chunk so the
/// extractor keeps continuity across boundaries.
struct Chunk {
    int index = 0;
    std::vector<Message> messages;
    std::vector<Message> history;
};

/// A query-relevant statement mined from one chunk, with the extractor's
/// integer relevance score.
struct FactCandidate {
    std::string fact;
    int score = 0;
    int chunk_index = 0;
};

inline std::vector<Chunk> chunk_history(const std::vector<Message>& messages, int chunk_size = 60,
                                        int history_size = 4) {
    if (chunk_size < 1) throw InvalidArgument("chunk_size must be >= 1");
    if (history_size < 0) throw InvalidArgument("history_size must be >= 0");
    std::vector<Chunk> chunks;
    for (size_t start = 0; start < messages.size(); start += chunk_size) {
        Chunk c;
        c.index = static_cast<int>(chunks.size());
        size_t end = std::min(messages.size(), start + chunk_size);
        c.messages.assign(messages.begin() + start, messages.begin() + end);
        size_t h = std::min<size_t>(history_size, start);
        c.history.assign(messages.begin() + (start - h), messages.begin() + start);
        chunks.push_back(std::move(c));
    }
    return chunks;
}

struct DeliberationConfig {
    int chunk_size = 60;
    int history_size = 4;
    int fact_score_min = 5;       // extractor-side floor; lower-scored facts are dropped
    int fact_keep_threshold = 6;  // stage-2 keeps only scores strictly above this
    int llm_filter_min_facts = 6; // LLM filter runs only when more facts than this survive
    double answer_temperature = 0.0;
    int parallelism = 1; // concurrent chunk extractions; 1 keeps runs bit-reproducible
};

/// The System 2 fallback: chunked query-guided fact extraction over the raw
/// dialogue, multi-stage score filtering, then grounded answer generation.
/// Never touches the memory store.
class Deliberator {
public:
    Deliberator(Mem0Star& mem0, Gateway& gateway, DeliberationConfig config = {})
        : mem0_(mem0), gateway_(gateway), config_(config) {}

    const DeliberationConfig& config() const { return config_; }

    std::vector<FactCandidate> extract_chunk_facts(const std::string& query, const Chunk& chunk,
                                                   AnswerTrace& trace) {
        std::vector<CallRecord> calls;
        bool degraded = false;
        auto facts = extract_impl(query, chunk, calls, degraded);
        for (auto& c : calls) trace.calls.push_back(std::move(c));
        if (degraded) ++trace.parse_degradations;
        return facts;
    }

    /// Stage 2: sort by score (ties: earlier chunk, then extraction order),
    /// apply the strict score threshold, and when enough facts remain let an
    /// LLM pick the pertinent subset. An empty or unusable selection keeps
    /// the top six instead of dropping everything.
    std::vector<FactCandidate> select_facts(std::vector<FactCandidate> facts,
                                            const std::string& query, AnswerTrace& trace) {
        std::stable_sort(facts.begin(), facts.end(), [](const FactCandidate& a, const FactCandidate& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.chunk_index < b.chunk_index;
        });
        std::erase_if(facts, [&](const FactCandidate& f) { return f.score <= config_.fact_keep_threshold; });
        if (facts.size() <= static_cast<size_t>(config_.llm_filter_min_facts)) return facts;

        ChatRequest req;
        req.template_id = tpl::fact_filter;
        std::string numbered;
        for (size_t i = 0; i < facts.size(); ++i) {
            if (!numbered.empty()) numbered += "\n";
            numbered += std::to_string(i + 1) + ". " + facts[i].fact;
        }
        req.variables = {{"question", query}, {"memory_items", numbered}};
        req.response_format = ResponseFormat::Json;
        JsonChat sel = gateway_.chat_json(req);
        for (const auto& c : sel.calls) trace.add_chat(req.template_id, c);

        std::set<size_t> keep;
        if (!sel.degraded && sel.value->is_object() && sel.value->contains("indexes") &&
            (*sel.value)["indexes"].is_array()) {
            for (const auto& idx : (*sel.value)["indexes"]) {
                if (!idx.is_number_integer()) continue;
                auto i = idx.get<int64_t>();
                if (i >= 1 && static_cast<size_t>(i) <= facts.size())
                    keep.insert(static_cast<size_t>(i - 1));
                else
                    log::warn("fact filter selected out-of-range index " + std::to_string(i));
            }
        } else if (sel.degraded) {
            ++trace.parse_degradations;
        }

        std::vector<FactCandidate> out;
        if (keep.empty()) {
            out.assign(facts.begin(), facts.begin() + std::min<size_t>(facts.size(), 6));
            return out;
        }
        for (size_t i : keep) out.push_back(facts[i]);
        return out;
    }

    AnswerTrace deliberate(const Conversation& conv, const std::string& query) {
        AnswerTrace trace;
        trace.conversation_id = conv.id;
        trace.query = query;
        auto t0 = std::chrono::steady_clock::now();
        deliberate_into(conv, query, trace);
        trace.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return trace;
    }

    /// Runs all three stages, appending calls to an existing trace (gating
    /// composes this after its own gate calls).
    void deliberate_into(const Conversation& conv, const std::string& query, AnswerTrace& trace) {
        trace.path = Path::Fallback;
        auto chunks = chunk_history(conv.messages, config_.chunk_size, config_.history_size);

        struct ChunkOutput {
            std::vector<FactCandidate> facts;
            std::vector<CallRecord> calls;
            bool degraded = false;
        };
        std::vector<ChunkOutput> outputs(chunks.size());

        int workers = std::max(1, std::min<int>(config_.parallelism, static_cast<int>(chunks.size())));
        if (workers <= 1) {
            for (size_t i = 0; i < chunks.size(); ++i)
                outputs[i].facts = extract_impl(query, chunks[i], outputs[i].calls, outputs[i].degraded);
        } else {
            std::atomic<size_t> next{0};
            std::vector<std::thread> pool;
            for (int w = 0; w < workers; ++w) {
                pool.emplace_back([&] {
                    for (size_t i = next.fetch_add(1); i < chunks.size(); i = next.fetch_add(1))
                        outputs[i].facts =
                            extract_impl(query, chunks[i], outputs[i].calls, outputs[i].degraded);
                });
            }
            for (auto& t : pool) t.join();
        }

        // Merge strictly by chunk index so concurrency never changes the
        // result.
        std::vector<FactCandidate> all_facts;
        for (auto& out : outputs) {
            for (auto& c : out.calls) trace.calls.push_back(std::move(c));
            if (out.degraded) ++trace.parse_degradations;
            for (auto& f : out.facts) all_facts.push_back(std::move(f));
        }

        auto selected = select_facts(std::move(all_facts), query, trace);

        // Stage 3: the surviving facts stand in for retrieved memories,
        // ordered chronologically.
        std::stable_sort(selected.begin(), selected.end(),
                         [](const FactCandidate& a, const FactCandidate& b) {
                             if (a.chunk_index != b.chunk_index) return a.chunk_index < b.chunk_index;
                             return a.score > b.score;
                         });
        ContextSet facts_ctx;
        facts_ctx.role = ContextRole::Facts;
        SpeakerGroup combined;
        for (const auto& f : selected) combined.items.push_back({std::nullopt, f.fact, double(f.score)});
        facts_ctx.groups.push_back(std::move(combined));

        trace.context_role = to_string(ContextRole::Facts);
        trace.final_answer =
            mem0_.generate_answer(conv, query, facts_ctx, config_.answer_temperature, trace);
    }

private:
    std::vector<FactCandidate> extract_impl(const std::string& query, const Chunk& chunk,
                                            std::vector<CallRecord>& calls, bool& degraded) {
        ChatRequest req;
        req.template_id = tpl::fact_extraction;
        req.variables = {{"question", query},
                         {"History", chunk.history.empty() ? "(none)" : format_messages(chunk.history)},
                         {"Conversation", format_messages(chunk.messages)}};
        req.response_format = ResponseFormat::Json;
        JsonChat res = gateway_.chat_json(req);
        for (const auto& c : res.calls) calls.push_back({"chat", req.template_id, c.usage, c.latency_s, c.usage_estimated});

        std::vector<FactCandidate> out;
        if (res.degraded) {
            degraded = true;
            log::warn("chunk " + std::to_string(chunk.index) +
                      ": fact extraction output unusable, chunk contributes nothing");
            return out;
        }
        const json& v = *res.value;
        if (!v.is_object() || !v.contains("facts") || !v["facts"].is_array()) {
            degraded = true;
            log::warn("chunk " + std::to_string(chunk.index) + ": missing \"facts\" array");
            return out;
        }
        for (const auto& f : v["facts"]) {
            if (!f.is_object() || !f.contains("fact") || !f["fact"].is_string() || !f.contains("score"))
                continue;
            FactCandidate fc;
            fc.fact = f["fact"].get<std::string>();
            if (fc.fact.empty()) continue;
            if (f["score"].is_number_integer()) {
                fc.score = static_cast<int>(f["score"].get<int64_t>());
            } else if (f["score"].is_number()) {
                fc.score = static_cast<int>(std::floor(f["score"].get<double>()));
            } else {
                continue;
            }
            if (fc.score < 0 || fc.score > 10) {
                log::warn("chunk " + std::to_string(chunk.index) + ": score " +
                          std::to_string(fc.score) + " clamped to [0,10]");
                fc.score = std::clamp(fc.score, 0, 10);
            }
            if (fc.score < config_.fact_score_min) continue;
            fc.chunk_index = chunk.index;
            out.push_back(std::move(fc));
        }
        return out;
    }

    Mem0Star& mem0_;
    Gateway& gateway_;
    DeliberationConfig config_;
};

} // namespace dmem
