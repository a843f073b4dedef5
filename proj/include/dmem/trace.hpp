#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dmem/gateway.hpp"
#include "dmem/json_util.hpp"

namespace dmem {

enum class Path { Fast, Fallback };

inline const char* to_string(Path p) { return p == Path::Fast ? "fast" : "fallback"; }

struct CallRecord {
    std::string kind; // "chat" or "embed"
    std::string template_id;
    Usage usage;
    double latency_s = 0.0;
    bool estimated = false;
};

/// Full record of one query resolution. latency_seconds() sums the per-call
/// latencies, which is what reports use: scripted runs stay bit-reproducible
/// while live runs still reflect time spent in the provider. The measured
/// wall clock is kept alongside for diagnostics.
struct AnswerTrace {
    std::string conversation_id;
    std::string query;
    std::string policy;
    Path path = Path::Fast;
    std::string context_role; // "C", "C'" or "facts"
    std::optional<std::string> a_init;
    std::vector<std::string> candidates; // diversity samples, when the policy draws them
    std::string final_answer;
    bool gate_triggered = false;
    std::optional<std::map<std::string, std::string>> gate_dimensions;
    bool filter_fallback = false;
    int parse_degradations = 0;
    std::vector<CallRecord> calls;
    double wall_seconds = 0.0;

    void add_chat(const std::string& template_id, const ChatResponse& r) {
        calls.push_back({"chat", template_id, r.usage, r.latency_s, r.usage_estimated});
    }

    void add_embed(const EmbedResponse& r) {
        calls.push_back({"embed", "", r.usage, r.latency_s, r.usage_estimated});
    }

    Usage totals() const {
        Usage u;
        for (const auto& c : calls) u += c.usage;
        return u;
    }

    double latency_seconds() const {
        double s = 0.0;
        for (const auto& c : calls) s += c.latency_s;
        return s;
    }

    size_t count_calls(const std::string& template_id) const {
        size_t n = 0;
        for (const auto& c : calls)
            if (c.template_id == template_id) ++n;
        return n;
    }

    json to_json() const {
        json calls_j = json::array();
        for (const auto& c : calls) {
            calls_j.push_back({{"kind", c.kind},
                               {"template", c.template_id},
                               {"prompt_tokens", c.usage.prompt_tokens},
                               {"completion_tokens", c.usage.completion_tokens},
                               {"latency", c.latency_s},
                               {"estimated", c.estimated}});
        }
        Usage t = totals();
        json j = {{"conversation", conversation_id},
                  {"query", query},
                  {"policy", policy},
                  {"path", to_string(path)},
                  {"context_role", context_role},
                  {"final_answer", final_answer},
                  {"gate_triggered", gate_triggered},
                  {"filter_fallback", filter_fallback},
                  {"parse_degradations", parse_degradations},
                  {"calls", calls_j},
                  {"totals",
                   {{"prompt_tokens", t.prompt_tokens},
                    {"completion_tokens", t.completion_tokens},
                    {"total", t.total()}}},
                  {"latency_seconds", latency_seconds()},
                  {"wall_seconds", wall_seconds}};
        if (a_init) j["a_init"] = *a_init;
        if (!candidates.empty()) j["candidates"] = candidates;
        if (gate_dimensions) j["gate_dimensions"] = *gate_dimensions;
        return j;
    }

    static AnswerTrace from_json(const json& j) {
        AnswerTrace t;
        t.conversation_id = j.value("conversation", std::string{});
        t.query = j.value("query", std::string{});
        t.policy = j.value("policy", std::string{});
        t.path = j.value("path", std::string{"fast"}) == "fallback" ? Path::Fallback : Path::Fast;
        t.context_role = j.value("context_role", std::string{});
        t.final_answer = j.value("final_answer", std::string{});
        t.gate_triggered = j.value("gate_triggered", false);
        t.filter_fallback = j.value("filter_fallback", false);
        t.parse_degradations = j.value("parse_degradations", 0);
        t.wall_seconds = j.value("wall_seconds", 0.0);
        if (j.contains("a_init")) t.a_init = j["a_init"].get<std::string>();
        if (j.contains("candidates")) t.candidates = j["candidates"].get<std::vector<std::string>>();
        if (j.contains("gate_dimensions"))
            t.gate_dimensions = j["gate_dimensions"].get<std::map<std::string, std::string>>();
        for (const auto& c : j.value("calls", json::array())) {
            CallRecord r;
            r.kind = c.value("kind", std::string{});
            r.template_id = c.value("template", std::string{});
            r.usage = {c.value("prompt_tokens", int64_t{0}), c.value("completion_tokens", int64_t{0})};
            r.latency_s = c.value("latency", 0.0);
            r.estimated = c.value("estimated", false);
            t.calls.push_back(std::move(r));
        }
        return t;
    }
};

} // namespace dmem
