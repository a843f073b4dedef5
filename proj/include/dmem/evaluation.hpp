#pragma once

#include <array>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dmem/dataset.hpp"
#include "dmem/gating.hpp"
#include "dmem/metrics.hpp"
#include "dmem/trace.hpp"

namespace dmem {

struct JudgeOutcome {
    bool correct = false;
    bool degraded = false;
    Usage usage;
};

/// Binary CORRECT/WRONG semantic-equivalence judgment of a prediction
/// against gold. Anything the judge returns other than those two labels is
/// conservatively scored WRONG.
inline JudgeOutcome llm_judge(Gateway& gateway, const std::string& question,
                              const std::string& gold, const std::string& pred) {
    ChatRequest req;
    req.template_id = tpl::answer_judge;
    req.variables = {{"question", question}, {"gold_answer", gold}, {"generated_answer", pred}};
    req.response_format = ResponseFormat::Json;
    JsonChat res = gateway.chat_json(req);
    JudgeOutcome out;
    for (const auto& c : res.calls) out.usage += c.usage;
    if (res.degraded || !res.value->is_object()) {
        out.degraded = true;
        log::warn("judge output unusable, scoring WRONG");
        return out;
    }
    std::string label = text::trim(res.value->value("label", std::string{}));
    if (label == "CORRECT") {
        out.correct = true;
    } else if (label != "WRONG") {
        out.degraded = true;
        log::warn("judge label \"" + label + "\" not CORRECT/WRONG, scoring WRONG");
    }
    return out;
}

struct QuestionResult {
    QAItem item;
    AnswerTrace trace;
    double f1_score = 0.0;
    double bleu_score = 0.0;
    bool judge_correct = false;
    bool judge_degraded = false;
    Usage judge_usage; // evaluation overhead, kept out of the trace totals

    json to_json() const {
        return {{"question", item.question},
                {"gold_answer", item.gold_answer},
                {"category", to_string(item.category)},
                {"conversation_id", item.conversation_id},
                {"f1", f1_score},
                {"bleu", bleu_score},
                {"judge_correct", judge_correct},
                {"judge_degraded", judge_degraded},
                {"judge_usage",
                 {{"prompt_tokens", judge_usage.prompt_tokens},
                  {"completion_tokens", judge_usage.completion_tokens}}},
                {"trace", trace.to_json()}};
    }

    static QuestionResult from_json(const json& j) {
        QuestionResult r;
        r.item.question = j.value("question", std::string{});
        r.item.gold_answer = j.value("gold_answer", std::string{});
        auto cat = category_from_string(j.value("category", std::string{"open-domain"}));
        r.item.category = cat.value_or(Category::OpenDomain);
        r.item.conversation_id = j.value("conversation_id", std::string{});
        r.f1_score = j.value("f1", 0.0);
        r.bleu_score = j.value("bleu", 0.0);
        r.judge_correct = j.value("judge_correct", false);
        r.judge_degraded = j.value("judge_degraded", false);
        if (j.contains("judge_usage"))
            r.judge_usage = {j["judge_usage"].value("prompt_tokens", int64_t{0}),
                             j["judge_usage"].value("completion_tokens", int64_t{0})};
        if (j.contains("trace")) r.trace = AnswerTrace::from_json(j["trace"]);
        return r;
    }
};

/// Running aggregate over a set of question results.
struct Agg {
    int n = 0;
    double f1_sum = 0.0;
    double bleu_sum = 0.0;
    int correct = 0;
    int64_t tokens_in = 0;
    int64_t tokens_out = 0;
    double latency_sum = 0.0;

    void add(const QuestionResult& r) {
        ++n;
        f1_sum += r.f1_score;
        bleu_sum += r.bleu_score;
        correct += r.judge_correct ? 1 : 0;
        Usage u = r.trace.totals();
        tokens_in += u.prompt_tokens;
        tokens_out += u.completion_tokens;
        latency_sum += r.trace.latency_seconds();
    }

    double f1_pct() const { return n ? 100.0 * f1_sum / n : 0.0; }
    double llm_pct() const { return n ? 100.0 * correct / n : 0.0; }
    double bleu_pct() const { return n ? 100.0 * bleu_sum / n : 0.0; }
    double mean_tokens_in() const { return n ? static_cast<double>(tokens_in) / n : 0.0; }
    double mean_tokens_out() const { return n ? static_cast<double>(tokens_out) / n : 0.0; }
    double mean_tokens_total() const {
        return n ? static_cast<double>(tokens_in + tokens_out) / n : 0.0;
    }
    double mean_latency() const { return n ? latency_sum / n : 0.0; }
};

/// Per-category and overall metrics plus the fallback routing split, for
/// one method row.
struct MetricsReport {
    std::string method_label;
    std::string policy;
    std::array<Agg, 4> per_category; // indexed by Category
    Agg overall;
    Agg without_fb;
    Agg with_fb;
    int fallback_count = 0;

    double fallback_rate_pct() const {
        return overall.n ? 100.0 * fallback_count / overall.n : 0.0;
    }
};

inline MetricsReport aggregate(const std::vector<QuestionResult>& results,
                               const GatePolicy& policy) {
    MetricsReport rep;
    rep.policy = policy_id(policy);
    rep.method_label = policy_label(policy);
    for (const auto& r : results) {
        rep.per_category[static_cast<size_t>(r.item.category)].add(r);
        rep.overall.add(r);
        if (r.trace.path == Path::Fallback) {
            rep.with_fb.add(r);
            ++rep.fallback_count;
        } else {
            rep.without_fb.add(r);
        }
    }
    return rep;
}

struct BenchmarkOptions {
    Mem0StarConfig mem0;
    DeliberationConfig deliberation;
    GatePolicy policy;
    BleuOptions bleu;
};

struct BenchmarkOutput {
    MetricsReport report;
    std::vector<QuestionResult> results;
};

/// Ingests every conversation turn by turn, then answers and scores all of
/// its questions under the policy. Per-question failures degrade to empty
/// answers; per-turn ingestion failures are logged and skipped.
inline BenchmarkOutput run_benchmark(const Dataset& ds, const BenchmarkOptions& opt,
                                     Gateway& gateway, Gateway& judge_gateway) {
    BenchmarkOutput out;
    for (const auto& conv : ds.conversations) {
        MemoryStore store(gateway.embedding_dimension());
        Mem0Star mem0(store, gateway, opt.mem0);
        Deliberator deliberator(mem0, gateway, opt.deliberation);
        DMemEngine engine(mem0, deliberator, gateway);

        if (conv.messages.size() % 2 != 0)
            log::warn("conversation " + conv.id + ": odd trailing message not ingested");
        for (int t = 1; t <= conv.full_turns(); ++t) {
            try {
                mem0.ingest_turn(conv, t);
            } catch (const Error& e) {
                log::warn("conversation " + conv.id + " turn " + std::to_string(t) +
                          " failed: " + e.what());
            }
        }

        for (const auto& item : ds.questions) {
            if (item.conversation_id != conv.id) continue;
            QuestionResult qr;
            qr.item = item;
            try {
                qr.trace = engine.answer(conv, item.question, opt.policy);
            } catch (const Error& e) {
                log::warn("question \"" + item.question + "\" failed: " + e.what());
                qr.trace.conversation_id = conv.id;
                qr.trace.query = item.question;
                qr.trace.policy = policy_id(opt.policy);
                qr.trace.final_answer.clear();
            }
            qr.f1_score = f1(qr.trace.final_answer, item.gold_answer);
            qr.bleu_score = bleu(qr.trace.final_answer, item.gold_answer, opt.bleu);
            try {
                JudgeOutcome j = llm_judge(judge_gateway, item.question, item.gold_answer,
                                           qr.trace.final_answer);
                qr.judge_correct = j.correct;
                qr.judge_degraded = j.degraded;
                qr.judge_usage = j.usage;
            } catch (const Error& e) {
                log::warn("judge failed: " + std::string(e.what()));
                qr.judge_degraded = true;
            }
            out.results.push_back(std::move(qr));
        }
    }
    out.report = aggregate(out.results, opt.policy);
    return out;
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt1(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

inline std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

inline std::string pad(const std::string& s, size_t width, bool left = false) {
    if (s.size() >= width) return s;
    std::string fill(width - s.size(), ' ');
    return left ? s + fill : fill + s;
}

} // namespace detail

enum class ReportFormat { TableText, Csv };

/// Renders one row per method: per-category and average F1 / LLM / BLEU,
/// efficiency columns, and a second table with the fallback routing split.
inline std::string render_report(const std::vector<MetricsReport>& reports, ReportFormat format) {
    using detail::fmt1;
    using detail::fmt2;
    using detail::pad;
    static const std::array<Category, 4> kCats = {Category::SingleHop, Category::MultiHop,
                                                  Category::Temporal, Category::OpenDomain};
    static const std::array<const char*, 4> kShort = {"S-H", "M-H", "Temp", "O-D"};

    if (format == ReportFormat::Csv) {
        std::ostringstream out;
        out << "method,policy,segment,category,questions,rate_pct,f1,llm,bleu,time_s,"
               "tokens_in,tokens_out,tokens_total\n";
        auto row = [&](const MetricsReport& r, const std::string& segment,
                       const std::string& category, const Agg& a, double rate) {
            out << r.method_label << ',' << r.policy << ',' << segment << ',' << category << ','
                << a.n << ',' << fmt1(rate) << ',';
            if (a.n == 0) {
                out << ",,,,,,\n";
                return;
            }
            out << fmt1(a.f1_pct()) << ',' << fmt1(a.llm_pct()) << ',' << fmt1(a.bleu_pct()) << ','
                << fmt2(a.mean_latency()) << ',' << fmt1(a.mean_tokens_in()) << ','
                << fmt1(a.mean_tokens_out()) << ',' << fmt1(a.mean_tokens_total()) << "\n";
        };
        for (const auto& r : reports) {
            for (auto c : kCats)
                row(r, "all", to_string(c), r.per_category[static_cast<size_t>(c)], 100.0);
            row(r, "all", "overall", r.overall, 100.0);
            row(r, "wo-fb", "overall", r.without_fb, 100.0 - r.fallback_rate_pct());
            row(r, "w-fb", "overall", r.with_fb, r.fallback_rate_pct());
        }
        return out.str();
    }

    std::ostringstream out;
    out << "== Overall scores and efficiency ==\n\n";
    out << pad("Method", 18, true) << " |";
    for (const char* metric : {"F1", "LLM", "BLEU"}) {
        for (const char* cat : kShort) out << pad(std::string(metric) + ":" + cat, 10);
        out << pad(std::string(metric) + ":Avg", 10) << " |";
    }
    out << pad("Time(s)", 9) << pad("Tok:In", 10) << pad("Tok:Out", 9) << pad("Tokens", 10) << "\n";

    for (const auto& r : reports) {
        out << pad(r.method_label, 18, true) << " |";
        auto metric_cols = [&](auto pct_of) {
            for (auto c : kCats) {
                const Agg& a = r.per_category[static_cast<size_t>(c)];
                out << pad(a.n ? fmt1(pct_of(a)) : "-", 10);
            }
            out << pad(r.overall.n ? fmt1(pct_of(r.overall)) : "-", 10) << " |";
        };
        metric_cols([](const Agg& a) { return a.f1_pct(); });
        metric_cols([](const Agg& a) { return a.llm_pct(); });
        metric_cols([](const Agg& a) { return a.bleu_pct(); });
        out << pad(fmt2(r.overall.mean_latency()), 9) << pad(fmt1(r.overall.mean_tokens_in()), 10)
            << pad(fmt1(r.overall.mean_tokens_out()), 9)
            << pad(fmt1(r.overall.mean_tokens_total()), 10) << "\n";
    }

    out << "\n== Fallback routing split ==\n\n";
    out << pad("Method", 18, true) << " | " << pad("Status", 6, true) << " |" << pad("Rate", 8)
        << pad("F1", 7) << pad("LLM", 7) << pad("BLEU", 7) << pad("Tokens", 11) << "\n";
    for (const auto& r : reports) {
        auto split_row = [&](const char* status, const Agg& a, double rate) {
            out << pad(r.method_label, 18, true) << " | " << pad(status, 6, true) << " |"
                << pad(fmt1(rate) + "%", 8);
            if (a.n == 0) {
                out << pad("-", 7) << pad("-", 7) << pad("-", 7) << pad("-", 11) << "\n";
                return;
            }
            out << pad(fmt1(a.f1_pct()), 7) << pad(fmt1(a.llm_pct()), 7)
                << pad(fmt1(a.bleu_pct()), 7) << pad(fmt1(a.mean_tokens_total()), 11) << "\n";
        };
        split_row("W/O FB", r.without_fb, 100.0 - r.fallback_rate_pct());
        split_row("W/ FB", r.with_fb, r.fallback_rate_pct());
    }
    return out.str();
}

} // namespace dmem
