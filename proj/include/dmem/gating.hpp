#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dmem/deliberation.hpp"
#include "dmem/gateway.hpp"
#include "dmem/log.hpp"
#include "dmem/mem0star.hpp"
#include "dmem/trace.hpp"

namespace dmem {

enum class PolicyKind { AlwaysFast, MajorityVoting, Consensus, QualityGating, AlwaysDeliberate };

/// Routing policy. The two always-* kinds exist as baselines; "filter" is
/// the fast path with context filtering enabled.
struct GatePolicy {
    PolicyKind kind = PolicyKind::AlwaysFast;
    bool use_filter = false;
    int sample_count = 3;
    double sample_temperature = 0.7;
};

inline GatePolicy parse_policy(const std::string& name) {
    GatePolicy p;
    if (name == "fast" || name == "always-fast") {
        p.kind = PolicyKind::AlwaysFast;
    } else if (name == "filter") {
        p.kind = PolicyKind::AlwaysFast;
        p.use_filter = true;
    } else if (name == "majority" || name == "majority-voting") {
        p.kind = PolicyKind::MajorityVoting;
    } else if (name == "consensus") {
        p.kind = PolicyKind::Consensus;
    } else if (name == "quality" || name == "quality-gating") {
        p.kind = PolicyKind::QualityGating;
    } else if (name == "deliberate" || name == "always-deliberate") {
        p.kind = PolicyKind::AlwaysDeliberate;
    } else {
        throw InvalidArgument("unknown policy \"" + name +
                              "\" (expected fast|filter|majority|consensus|quality|deliberate)");
    }
    return p;
}

inline std::string policy_id(const GatePolicy& p) {
    switch (p.kind) {
        case PolicyKind::AlwaysFast: return p.use_filter ? "filter" : "always-fast";
        case PolicyKind::MajorityVoting: return "majority-voting";
        case PolicyKind::Consensus: return "consensus";
        case PolicyKind::QualityGating: return "quality-gating";
        case PolicyKind::AlwaysDeliberate: return "always-deliberate";
    }
    return "always-fast";
}

inline std::string policy_label(const GatePolicy& p) {
    switch (p.kind) {
        case PolicyKind::AlwaysFast: return p.use_filter ? "Filter" : "Mem0*";
        case PolicyKind::MajorityVoting: return "Majority Voting";
        case PolicyKind::Consensus: return "Consensus";
        case PolicyKind::QualityGating: return "Quality Gating";
        case PolicyKind::AlwaysDeliberate: return "Full Deliberation";
    }
    return "Mem0*";
}

/// Gate output: trigger=true escalates to full deliberation. When the gate
/// accepts, selected_answer carries the fast-path answer; the quality policy
/// also records its per-dimension statuses.
struct GateVerdict {
    bool trigger = false;
    std::optional<std::string> selected_answer;
    std::optional<std::map<std::string, std::string>> dimensions;
    Usage judge_usage;
};

struct SampledAnswers {
    std::vector<std::string> answers;
    ContextSet context;
};

/// Composes the fast path, the gate and the deliberation fallback into the
/// full answer flow.
class DMemEngine {
public:
    DMemEngine(Mem0Star& mem0, Deliberator& deliberator, Gateway& gateway)
        : mem0_(mem0), deliberator_(deliberator), gateway_(gateway) {}

    /// Three diversity samples over one shared retrieval. A sample that
    /// fails outright is recorded as the empty string and judged like any
    /// other candidate.
    SampledAnswers sample_answers(const Conversation& conv, const std::string& query,
                                  const GatePolicy& policy, AnswerTrace& trace) {
        SampledAnswers out;
        out.context = mem0_.retrieve_context(conv, query, trace);
        if (policy.use_filter) out.context = mem0_.filter_context(query, out.context, trace);
        for (int i = 0; i < policy.sample_count; ++i) {
            try {
                out.answers.push_back(mem0_.generate_answer(conv, query, out.context,
                                                            policy.sample_temperature, trace));
            } catch (const Error& e) {
                log::warn(std::string("sample failed, recording empty answer: ") + e.what());
                out.answers.emplace_back();
            }
        }
        return out;
    }

    GateVerdict judge_majority(const std::string& query, const std::vector<std::string>& answers,
                               AnswerTrace& trace) {
        return judge_votes(tpl::majority_judge, query, answers, trace);
    }

    GateVerdict judge_consensus(const std::string& query, const std::vector<std::string>& answers,
                                AnswerTrace& trace) {
        return judge_votes(tpl::consensus_judge, query, answers, trace);
    }

    /// Pass/fail audit of a fast-path answer against the retrieved context.
    /// Any failed dimension, or an unusable audit, triggers the fallback.
    GateVerdict quality_audit(const std::string& query, const ContextSet& ctx,
                              const std::string& a_init, AnswerTrace& trace) {
        ChatRequest req;
        req.template_id = tpl::quality_audit;
        const SpeakerGroup* g1 = ctx.groups.size() > 0 ? &ctx.groups[0] : nullptr;
        const SpeakerGroup* g2 = ctx.groups.size() > 1 ? &ctx.groups[1] : nullptr;
        req.variables = {{"speaker_1_memories", g1 ? Mem0Star::group_block(*g1) : "(none)"},
                         {"speaker_2_memories", g2 ? Mem0Star::group_block(*g2) : "(none)"},
                         {"question", query},
                         {"answer", a_init}};
        req.response_format = ResponseFormat::Json;
        JsonChat res = gateway_.chat_json(req);
        GateVerdict verdict;
        for (const auto& c : res.calls) {
            trace.add_chat(req.template_id, c);
            verdict.judge_usage += c.usage;
        }

        static const char* kDimensions[] = {"relevance", "faithfulness", "completeness_relevance"};
        std::map<std::string, std::string> statuses;
        bool parsed = !res.degraded && res.value->is_object();
        if (parsed) {
            for (const char* dim : kDimensions) {
                auto status = read_status(*res.value, dim);
                if (!status) {
                    parsed = false;
                    break;
                }
                statuses[dim] = *status;
            }
        }
        if (!parsed) {
            // Ambiguity escalates: an audit we cannot read counts as a fail.
            ++trace.parse_degradations;
            log::warn("quality audit output unusable, triggering fallback");
            verdict.trigger = true;
            return verdict;
        }
        verdict.dimensions = statuses;
        for (const auto& [dim, status] : statuses)
            if (status != "pass") verdict.trigger = true;
        if (!verdict.trigger) verdict.selected_answer = a_init;
        return verdict;
    }

    /// Routes one query per policy and returns the full trace.
    AnswerTrace answer(const Conversation& conv, const std::string& query,
                       const GatePolicy& policy) {
        auto t0 = std::chrono::steady_clock::now();
        AnswerTrace trace;

        switch (policy.kind) {
            case PolicyKind::AlwaysFast: {
                trace = mem0_.answer_fast_path(conv, query, policy.use_filter);
                break;
            }
            case PolicyKind::AlwaysDeliberate: {
                trace.conversation_id = conv.id;
                trace.query = query;
                trace.gate_triggered = true;
                deliberator_.deliberate_into(conv, query, trace);
                break;
            }
            case PolicyKind::MajorityVoting:
            case PolicyKind::Consensus: {
                trace.conversation_id = conv.id;
                trace.query = query;
                SampledAnswers sampled = sample_answers(conv, query, policy, trace);
                trace.candidates = sampled.answers;
                trace.context_role = to_string(sampled.context.role);
                GateVerdict verdict = policy.kind == PolicyKind::MajorityVoting
                                          ? judge_majority(query, sampled.answers, trace)
                                          : judge_consensus(query, sampled.answers, trace);
                trace.gate_triggered = verdict.trigger;
                if (!verdict.trigger) {
                    trace.path = Path::Fast;
                    trace.a_init = *verdict.selected_answer;
                    trace.final_answer = *verdict.selected_answer;
                } else {
                    deliberator_.deliberate_into(conv, query, trace);
                }
                break;
            }
            case PolicyKind::QualityGating: {
                trace.conversation_id = conv.id;
                trace.query = query;
                ContextSet ctx = mem0_.retrieve_context(conv, query, trace);
                ContextSet used = policy.use_filter ? mem0_.filter_context(query, ctx, trace)
                                                    : std::move(ctx);
                trace.context_role = to_string(used.role);
                std::string a_init = mem0_.generate_answer(conv, query, used,
                                                           mem0_.config().answer_temperature, trace);
                trace.a_init = a_init;
                GateVerdict verdict = quality_audit(query, used, a_init, trace);
                trace.gate_triggered = verdict.trigger;
                trace.gate_dimensions = verdict.dimensions;
                if (!verdict.trigger) {
                    trace.path = Path::Fast;
                    trace.final_answer = a_init;
                } else {
                    deliberator_.deliberate_into(conv, query, trace);
                }
                break;
            }
        }
        trace.policy = policy_id(policy);
        trace.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return trace;
    }

private:
    // Accepts both the nested {"status": ...} form and the flat string form
    // the audit template shows in its per-dimension examples.
    static std::optional<std::string> read_status(const json& v, const char* dim) {
        if (!v.contains(dim)) return std::nullopt;
        const json& d = v[dim];
        if (d.is_string()) return d.get<std::string>();
        if (d.is_object() && d.contains("status") && d["status"].is_string())
            return d["status"].get<std::string>();
        return std::nullopt;
    }

    GateVerdict judge_votes(const std::string& template_id, const std::string& query,
                            const std::vector<std::string>& answers, AnswerTrace& trace) {
        if (answers.size() != 3)
            throw InvalidArgument("vote judging requires exactly 3 answers, got " +
                                  std::to_string(answers.size()));
        ChatRequest req;
        req.template_id = template_id;
        req.variables = {{"question", query},
                         {"answer_1", answers[0]},
                         {"answer_2", answers[1]},
                         {"answer_3", answers[2]}};
        req.response_format = ResponseFormat::Json;
        JsonChat res = gateway_.chat_json(req);
        GateVerdict verdict;
        for (const auto& c : res.calls) {
            trace.add_chat(req.template_id, c);
            verdict.judge_usage += c.usage;
        }
        if (res.degraded || !res.value->is_object()) {
            if (res.degraded) ++trace.parse_degradations;
            verdict.trigger = true; // no readable verdict counts as no consensus
            return verdict;
        }
        const json& v = *res.value;
        bool consensus = v.value("consensus", false);
        if (!consensus) {
            verdict.trigger = true;
            return verdict;
        }
        std::string answer = v.value("answer", std::string{});
        bool member = false;
        for (const auto& a : answers) member = member || (a == answer);
        if (!member) {
            log::warn("judge returned an answer outside the candidate list, treating as no consensus");
            verdict.trigger = true;
            return verdict;
        }
        verdict.selected_answer = answer;
        return verdict;
    }

    Mem0Star& mem0_;
    Deliberator& deliberator_;
    Gateway& gateway_;
};

} // namespace dmem
