#pragma once

#include <algorithm>
#include <chrono>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dmem/conversation.hpp"
#include "dmem/gateway.hpp"
#include "dmem/log.hpp"
#include "dmem/memory_store.hpp"
#include "dmem/trace.hpp"

namespace dmem {

enum class ContextRole { ExtractionBackground, UpdateBackground, QueryContext, FilteredContext, Facts };

inline const char* to_string(ContextRole r) {
    switch (r) {
        case ContextRole::ExtractionBackground: return "F";
        case ContextRole::UpdateBackground: return "B";
        case ContextRole::QueryContext: return "C";
        case ContextRole::FilteredContext: return "C'";
        case ContextRole::Facts: return "facts";
    }
    return "?";
}

struct ContextItem {
    std::optional<int64_t> id;
    std::string text;
    double score = 0.0;
};

struct SpeakerGroup {
    std::string speaker;
    std::vector<ContextItem> items;
};

struct ContextSet {
    ContextRole role = ContextRole::QueryContext;
    std::vector<SpeakerGroup> groups;
    bool fallback = false; // set when filtering fell back to the unfiltered context

    size_t total_items() const {
        size_t n = 0;
        for (const auto& g : groups) n += g.items.size();
        return n;
    }
};

struct Mem0StarConfig {
    int extraction_top_k = 10;   // similar memories shown to the extractor
    int recent_window = 9;       // messages of recency context before the new pair
    int update_top_k = 5;        // neighbors retrieved per candidate memory
    double update_similarity_threshold = 0.8; // strict: keep only cosine > threshold
    int query_top_k = 30;        // memories retrieved per speaker at query time
    double answer_temperature = 0.0;
};

struct IngestResult {
    std::vector<MemoryOp> applied;
    std::vector<CallRecord> calls;
    bool skipped = false; // extraction or update output unusable; store untouched
};

/// The incremental System 1 pipeline: per-turn extraction and update of the
/// memory store, plus query-time retrieval, optional context filtering and
/// answer generation. Ingestion is the only path that mutates the store;
/// everything on the query side is read-only.
class Mem0Star {
public:
    Mem0Star(MemoryStore& store, Gateway& gateway, Mem0StarConfig config = {})
        : store_(store), gateway_(gateway), config_(config) {}

    const Mem0StarConfig& config() const { return config_; }

    /// Runs the extraction and update phases for turn t. Turns must arrive
    /// in strictly increasing order per conversation.
    IngestResult ingest_turn(const Conversation& conv, int t) {
        auto [last_it, inserted] = last_turn_.try_emplace(conv.id, 0);
        if (!inserted && t <= last_it->second)
            throw InvalidState("conversation " + conv.id + ": turn " + std::to_string(t) +
                               " ingested after turn " + std::to_string(last_it->second));
        auto [first_msg, second_msg] = conv.turn_pair(t);
        last_it->second = t;

        IngestResult result;
        std::string new_pair = format_message(first_msg) + "\n" + format_message(second_msg);

        // Extraction phase: similar existing memories + recent messages +
        // the new pair go to the extractor.
        auto qv = embed_one(new_pair, result.calls);
        auto background = store_.search(qv, config_.extraction_top_k);
        std::string recent = recent_block(conv, t);

        ChatRequest ext_req;
        ext_req.template_id = tpl::memory_extraction;
        ext_req.variables = {{"existing_memories", memory_lines(background)},
                             {"recent_messages", recent},
                             {"new_messages", new_pair}};
        ext_req.response_format = ResponseFormat::Json;
        JsonChat ext = gateway_.chat_json(ext_req);
        for (const auto& c : ext.calls) result.calls.push_back({"chat", ext_req.template_id, c.usage, c.latency_s, c.usage_estimated});
        if (ext.degraded) {
            log::warn("conversation " + conv.id + " turn " + std::to_string(t) +
                      ": extraction output unusable, turn skipped");
            result.skipped = true;
            return result;
        }

        auto candidates = parse_candidates(*ext.value, first_msg.speaker, conv);
        if (candidates.empty()) return result;

        // Update phase: per-candidate neighbors above the similarity
        // threshold form the background the update model cross-references.
        std::vector<std::string> cand_texts;
        for (const auto& c : candidates) cand_texts.push_back(c.text);
        EmbedResponse embeds = gateway_.embed(cand_texts);
        result.calls.push_back({"embed", "", embeds.usage, embeds.latency_s, embeds.usage_estimated});

        std::vector<SearchHit> update_bg;
        std::set<int64_t> seen;
        for (const auto& vec : embeds.vectors) {
            for (auto& hit : update_background(vec)) {
                if (seen.insert(hit.record.id).second) update_bg.push_back(std::move(hit));
            }
        }

        std::string cand_block;
        for (const auto& c : candidates) {
            if (!cand_block.empty()) cand_block += "\n";
            cand_block += "- [" + c.owner + "] " + c.text;
        }
        std::string bg_block;
        for (const auto& h : update_bg) {
            if (!bg_block.empty()) bg_block += "\n";
            bg_block += "[" + std::to_string(h.record.id) + "] " + h.record.text;
        }
        if (bg_block.empty()) bg_block = "(none)";

        ChatRequest upd_req;
        upd_req.template_id = tpl::memory_update;
        upd_req.variables = {{"candidate_memories", cand_block}, {"existing_memories", bg_block}};
        upd_req.response_format = ResponseFormat::Json;
        JsonChat upd = gateway_.chat_json(upd_req);
        for (const auto& c : upd.calls) result.calls.push_back({"chat", upd_req.template_id, c.usage, c.latency_s, c.usage_estimated});
        if (upd.degraded) {
            log::warn("conversation " + conv.id + " turn " + std::to_string(t) +
                      ": update output unusable, no ops applied");
            result.skipped = true;
            return result;
        }

        // Ops apply in emitted order; a failing op is logged and the batch
        // continues.
        for (const auto& op : parse_ops(*upd.value, first_msg.speaker, conv)) {
            try {
                store_.apply_op(op, [&](const std::string& txt) { return embed_one(txt, result.calls); }, t);
                result.applied.push_back(op);
            } catch (const NotFound& e) {
                log::warn(std::string("op dropped: ") + e.what());
            } catch (const InvalidArgument& e) {
                log::warn(std::string("op dropped: ") + e.what());
            }
        }
        return result;
    }

    /// Neighbors of one candidate embedding that clear the strict
    /// similarity threshold.
    std::vector<SearchHit> update_background(const std::vector<double>& candidate_embedding) const {
        auto hits = store_.search(candidate_embedding, config_.update_top_k);
        std::erase_if(hits, [&](const SearchHit& h) {
            return !(h.score > config_.update_similarity_threshold);
        });
        return hits;
    }

    /// Top-k memories per speaker for a query.
    ContextSet retrieve_context(const Conversation& conv, const std::string& query,
                                AnswerTrace& trace) {
        EmbedResponse e = gateway_.embed({query});
        trace.add_embed(e);
        ContextSet ctx;
        ctx.role = ContextRole::QueryContext;
        for (const auto& speaker : conv.speakers) {
            SpeakerGroup g;
            g.speaker = speaker;
            for (const auto& hit : store_.search(e.vectors[0], config_.query_top_k, speaker)) {
                g.items.push_back({hit.record.id, hit.record.text, hit.score});
            }
            ctx.groups.push_back(std::move(g));
        }
        return ctx;
    }

    /// Keeps only the memories an LLM marks as necessary; an empty or
    /// unusable selection conservatively falls back to the full context.
    ContextSet filter_context(const std::string& query, const ContextSet& ctx, AnswerTrace& trace) {
        ChatRequest req;
        req.template_id = tpl::memory_filter;
        req.variables.emplace_back("user_question", query);
        std::vector<std::pair<size_t, size_t>> slots; // (group, item) per 1-based index
        size_t n = 0;
        for (size_t gi = 0; gi < ctx.groups.size(); ++gi) {
            for (size_t ii = 0; ii < ctx.groups[gi].items.size(); ++ii) {
                ++n;
                req.variables.emplace_back("memory_" + std::to_string(n),
                                           ctx.groups[gi].items[ii].text);
                slots.emplace_back(gi, ii);
            }
        }
        req.response_format = ResponseFormat::Json;
        JsonChat sel = gateway_.chat_json(req);
        for (const auto& c : sel.calls) trace.add_chat(req.template_id, c);
        if (sel.degraded) ++trace.parse_degradations;

        std::set<size_t> keep;
        if (!sel.degraded) {
            const json& v = *sel.value;
            const json* arr = v.is_array() ? &v : (v.is_object() && v.contains("indexes") ? &v["indexes"] : nullptr);
            if (arr) {
                for (const auto& idx : *arr) {
                    if (!idx.is_number_integer()) continue;
                    auto i = idx.get<int64_t>();
                    if (i >= 1 && static_cast<size_t>(i) <= slots.size())
                        keep.insert(static_cast<size_t>(i - 1));
                    else
                        log::warn("filter selected out-of-range index " + std::to_string(i));
                }
            }
        }

        ContextSet out;
        out.role = ContextRole::FilteredContext;
        if (keep.empty()) {
            out.groups = ctx.groups;
            out.fallback = true;
            trace.filter_fallback = true;
            return out;
        }
        for (const auto& g : ctx.groups) out.groups.push_back({g.speaker, {}});
        for (size_t flat : keep) {
            auto [gi, ii] = slots[flat];
            out.groups[gi].items.push_back(ctx.groups[gi].items[ii]);
        }
        return out;
    }

    /// Renders the answer prompt from a context (retrieved memories or
    /// deliberated facts) and returns the model's answer verbatim.
    std::string generate_answer(const Conversation& conv, const std::string& query,
                                const ContextSet& ctx, double temperature, AnswerTrace& trace) {
        ChatRequest req;
        req.template_id = tpl::answer_generation;
        req.temperature = temperature;
        if (ctx.role == ContextRole::Facts) {
            std::string combined = conv.speakers[0] + " and " + conv.speakers[1] + " (combined)";
            std::string block = ctx.groups.empty() ? "(none)" : group_block(ctx.groups[0]);
            req.variables = {{"speaker_1_user_id", combined},
                             {"speaker_1_memories", block},
                             {"speaker_2_user_id", combined},
                             {"speaker_2_memories", "(listed above)"},
                             {"question", query}};
        } else {
            const SpeakerGroup* g1 = ctx.groups.size() > 0 ? &ctx.groups[0] : nullptr;
            const SpeakerGroup* g2 = ctx.groups.size() > 1 ? &ctx.groups[1] : nullptr;
            req.variables = {{"speaker_1_user_id", g1 ? g1->speaker : conv.speakers[0]},
                             {"speaker_1_memories", g1 ? group_block(*g1) : "(none)"},
                             {"speaker_2_user_id", g2 ? g2->speaker : conv.speakers[1]},
                             {"speaker_2_memories", g2 ? group_block(*g2) : "(none)"},
                             {"question", query}};
        }
        ChatResponse r = gateway_.chat(req);
        trace.add_chat(req.template_id, r);
        return text::trim(r.text);
    }

    /// Retrieval, optional filtering and a single deterministic answer.
    AnswerTrace answer_fast_path(const Conversation& conv, const std::string& query,
                                 bool use_filter) {
        auto t0 = std::chrono::steady_clock::now();
        AnswerTrace trace;
        trace.conversation_id = conv.id;
        trace.query = query;
        trace.path = Path::Fast;

        ContextSet ctx = retrieve_context(conv, query, trace);
        ContextSet used = use_filter ? filter_context(query, ctx, trace) : std::move(ctx);
        trace.context_role = to_string(used.role);
        std::string answer = generate_answer(conv, query, used, config_.answer_temperature, trace);
        trace.a_init = answer;
        trace.final_answer = answer;
        trace.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return trace;
    }

    /// The context that produced an answer, re-computed for gate prompts.
    static std::string group_block(const SpeakerGroup& g) {
        if (g.items.empty()) return "(none)";
        std::string out;
        for (const auto& item : g.items) {
            if (!out.empty()) out += "\n";
            out += "- " + item.text;
        }
        return out;
    }

private:
    struct Candidate {
        std::string text;
        std::string owner;
    };

    std::vector<double> embed_one(const std::string& txt, std::vector<CallRecord>& calls) {
        EmbedResponse e = gateway_.embed({txt});
        calls.push_back({"embed", "", e.usage, e.latency_s, e.usage_estimated});
        return e.vectors[0];
    }

    std::string recent_block(const Conversation& conv, int t) const {
        int pair_start = 2 * t - 2;
        int window = std::min(config_.recent_window, pair_start);
        if (window <= 0) return "(none)";
        std::span<const Message> recent(conv.messages.data() + pair_start - window,
                                        static_cast<size_t>(window));
        return format_messages(recent);
    }

    static std::string memory_lines(const std::vector<SearchHit>& hits) {
        if (hits.empty()) return "(none)";
        std::string out;
        for (const auto& h : hits) {
            if (!out.empty()) out += "\n";
            out += "- " + h.record.text;
        }
        return out;
    }

    std::vector<Candidate> parse_candidates(const json& v, const std::string& default_owner,
                                            const Conversation& conv) const {
        std::vector<Candidate> out;
        if (!v.is_object() || !v.contains("memories") || !v["memories"].is_array()) {
            log::warn("extraction output missing \"memories\" array, treating as empty");
            return out;
        }
        for (const auto& m : v["memories"]) {
            if (!m.is_object() || !m.contains("text") || !m["text"].is_string()) continue;
            Candidate c;
            c.text = m["text"].get<std::string>();
            if (c.text.empty()) continue;
            std::string speaker = m.value("speaker", std::string{});
            if (speaker == conv.speakers[0] || speaker == conv.speakers[1]) {
                c.owner = speaker;
            } else {
                if (!speaker.empty())
                    log::warn("extraction attributed memory to unknown speaker \"" + speaker +
                              "\", defaulting to " + default_owner);
                c.owner = default_owner;
            }
            out.push_back(std::move(c));
        }
        return out;
    }

    std::vector<MemoryOp> parse_ops(const json& v, const std::string& default_owner,
                                    const Conversation& conv) const {
        std::vector<MemoryOp> out;
        if (!v.is_object() || !v.contains("operations") || !v["operations"].is_array()) {
            log::warn("update output missing \"operations\" array, treating as empty");
            return out;
        }
        for (const auto& o : v["operations"]) {
            if (!o.is_object() || !o.contains("op") || !o["op"].is_string()) continue;
            auto kind = op_kind_from_string(o["op"].get<std::string>());
            if (!kind) {
                log::warn("unknown op kind \"" + o["op"].get<std::string>() + "\" skipped");
                continue;
            }
            MemoryOp op;
            op.kind = *kind;
            if (o.contains("id") && o["id"].is_number_integer())
                op.target_id = o["id"].get<int64_t>();
            if (o.contains("text") && o["text"].is_string())
                op.text = o["text"].get<std::string>();
            if (op.kind == OpKind::Add) {
                std::string owner = o.value("owner", std::string{});
                if (owner != conv.speakers[0] && owner != conv.speakers[1]) {
                    if (!owner.empty())
                        log::warn("ADD attributed to unknown owner \"" + owner +
                                  "\", defaulting to " + default_owner);
                    owner = default_owner;
                }
                op.owner = owner;
            }
            out.push_back(std::move(op));
        }
        return out;
    }

    MemoryStore& store_;
    Gateway& gateway_;
    Mem0StarConfig config_;
    std::map<std::string, int> last_turn_;
};

} // namespace dmem
