#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dmem/errors.hpp"
#include "dmem/json_util.hpp"
#include "dmem/log.hpp"
#include "dmem/prompts.hpp"
#include "dmem/text.hpp"

namespace dmem {

struct Usage {
    int64_t prompt_tokens = 0;
    int64_t completion_tokens = 0;

    int64_t total() const { return prompt_tokens + completion_tokens; }
    Usage& operator+=(const Usage& o) {
        prompt_tokens += o.prompt_tokens;
        completion_tokens += o.completion_tokens;
        return *this;
    }
};

enum class ResponseFormat { FreeText, Json };

struct ChatRequest {
    std::string template_id;
    Vars variables;
    double temperature = 0.0;
    std::optional<int> max_output_tokens;
    ResponseFormat response_format = ResponseFormat::FreeText;
};

struct ChatResponse {
    std::string text;
    Usage usage;
    double latency_s = 0.0;
    bool usage_estimated = false;
};

struct EmbedResponse {
    std::vector<std::vector<double>> vectors;
    Usage usage;
    double latency_s = 0.0;
    bool usage_estimated = false;
};

// What a backend reports per call. Usage and latency are optional; the
// gateway fills gaps with its deterministic heuristic / wall clock.
struct BackendChatResult {
    std::string text;
    std::optional<Usage> usage;
    std::optional<double> latency_s;
};

struct BackendEmbedResult {
    std::vector<std::vector<double>> vectors;
    std::optional<Usage> usage;
    std::optional<double> latency_s;
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual BackendChatResult chat(const ChatRequest& req, const std::string& rendered) = 0;
    virtual BackendEmbedResult embed(const std::vector<std::string>& texts) = 0;
    virtual size_t embedding_dimension() const = 0;
    virtual bool is_scripted() const { return false; }
};

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

/// Deterministic word-hash embedding: each token contributes a fixed
/// pseudo-random direction, the sum is unit-normalized. Pure function of the
/// text, stable across processes and platforms.
inline std::vector<double> scripted_embedding(const std::string& input, size_t dim) {
    std::vector<std::string> tokens = text::split_ws(text::to_lower(input));
    if (tokens.empty()) tokens.push_back(input);
    std::vector<double> acc(dim, 0.0);
    for (const auto& tok : tokens) {
        uint64_t state = text::fnv1a(tok);
        for (size_t d = 0; d < dim; ++d) {
            uint64_t u = text::splitmix64(state);
            double x = static_cast<double>(u >> 11) * (1.0 / 9007199254740992.0); // [0,1)
            acc[d] += 2.0 * x - 1.0;
        }
    }
    double norm = 0.0;
    for (double v : acc) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) {
        acc[0] = 1.0;
        return acc;
    }
    for (double& v : acc) v /= norm;
    return acc;
}

struct ScriptedResponse {
    std::string text;
    std::optional<Usage> usage;
    double latency_s = 0.0;
};

/// Offline backend driven by registered rules. A rule matches on template id
/// plus optional conditions over the request variables; the first registered
/// matching rule wins. A rule with several responses cycles through them,
/// which is how tests script disagreement between diversity samples.
class ScriptedBackend : public Backend {
public:
    struct Condition {
        std::string var;
        enum class Op { Equals, Contains } op = Op::Contains;
        std::string value;

        bool matches(const Vars& vars) const {
            const std::string* v = find_var(vars, var);
            if (!v) return false;
            if (op == Op::Equals) return *v == value;
            return v->find(value) != std::string::npos;
        }
    };

    using Predicate = std::function<bool(const Vars&)>;

    explicit ScriptedBackend(size_t dim = 64) : dim_(dim) {}

    size_t register_script(const std::string& template_id, std::vector<Condition> conditions,
                           std::vector<ScriptedResponse> responses) {
        std::lock_guard lock(mu_);
        rules_.push_back({template_id, std::move(conditions), nullptr, std::move(responses), 0});
        return rules_.size() - 1;
    }

    size_t register_script(const std::string& template_id, const std::string& response_text,
                           std::optional<Usage> usage = std::nullopt, double latency_s = 0.0) {
        return register_script(template_id, std::vector<Condition>{},
                               {{response_text, usage, latency_s}});
    }

    size_t register_script(const std::string& template_id, Predicate predicate,
                           std::vector<ScriptedResponse> responses) {
        std::lock_guard lock(mu_);
        rules_.push_back({template_id, {}, std::move(predicate), std::move(responses), 0});
        return rules_.size() - 1;
    }

    /// Rule file schema: {"dimension": 64, "rules": [{"template": ...,
    /// "when": [{"var", "contains"|"equals"}...], "respond": {...} |
    /// "respond_seq": [...]}]}. Each response: {"text", "prompt_tokens"?,
    /// "completion_tokens"?, "latency"?}.
    void load_rules(const json& doc) {
        if (doc.contains("dimension")) dim_ = doc.at("dimension").get<size_t>();
        for (const auto& rule : doc.at("rules")) {
            std::vector<Condition> conds;
            if (rule.contains("when")) {
                for (const auto& w : rule.at("when")) {
                    Condition c;
                    c.var = w.at("var").get<std::string>();
                    if (w.contains("equals")) {
                        c.op = Condition::Op::Equals;
                        c.value = w.at("equals").get<std::string>();
                    } else {
                        c.op = Condition::Op::Contains;
                        c.value = w.at("contains").get<std::string>();
                    }
                    conds.push_back(std::move(c));
                }
            }
            std::vector<ScriptedResponse> responses;
            auto parse_response = [](const json& r) {
                ScriptedResponse sr;
                sr.text = r.at("text").get<std::string>();
                if (r.contains("prompt_tokens"))
                    sr.usage = Usage{r.at("prompt_tokens").get<int64_t>(),
                                     r.value("completion_tokens", int64_t{0})};
                sr.latency_s = r.value("latency", 0.0);
                return sr;
            };
            if (rule.contains("respond_seq"))
                for (const auto& r : rule.at("respond_seq")) responses.push_back(parse_response(r));
            else
                responses.push_back(parse_response(rule.at("respond")));
            register_script(rule.at("template").get<std::string>(), std::move(conds),
                            std::move(responses));
        }
    }

    BackendChatResult chat(const ChatRequest& req, const std::string&) override {
        std::lock_guard lock(mu_);
        for (auto& rule : rules_) {
            if (rule.template_id != req.template_id) continue;
            bool ok = true;
            for (const auto& c : rule.conditions) ok = ok && c.matches(req.variables);
            if (ok && rule.predicate) ok = rule.predicate(req.variables);
            if (!ok) continue;
            const ScriptedResponse& r = rule.responses[rule.next % rule.responses.size()];
            if (rule.responses.size() > 1) ++rule.next;
            return {r.text, r.usage, r.latency_s};
        }
        throw ScriptMiss("no scripted rule matches template \"" + req.template_id + "\"");
    }

    BackendEmbedResult embed(const std::vector<std::string>& texts) override {
        BackendEmbedResult out;
        for (const auto& t : texts) out.vectors.push_back(scripted_embedding(t, dim_));
        out.latency_s = 0.0;
        return out;
    }

    size_t embedding_dimension() const override { return dim_; }
    bool is_scripted() const override { return true; }

private:
    struct Rule {
        std::string template_id;
        std::vector<Condition> conditions;
        Predicate predicate;
        std::vector<ScriptedResponse> responses;
        size_t next = 0;
    };

    size_t dim_;
    std::vector<Rule> rules_;
    std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

struct GatewayOptions {
    int retries = 2;            // additional attempts after the first
    int retry_backoff_ms = 250; // doubled per attempt
    int in_flight_limit = 4;
};

struct JsonChat {
    std::optional<json> value;
    std::vector<ChatResponse> calls; // every call issued, for accounting
    bool degraded = false;           // true when parsing failed after the retry
};

/// Single entry point for every model call: renders the template, enforces
/// the in-flight limit, retries transport failures, and guarantees usage is
/// never silently absent (the character-count heuristic fills in, flagged
/// as estimated).
class Gateway {
public:
    Gateway(std::shared_ptr<Backend> backend, std::shared_ptr<PromptLibrary> prompts,
            GatewayOptions options = {})
        : backend_(std::move(backend)), prompts_(std::move(prompts)), options_(options),
          slots_(std::max(1, options.in_flight_limit)) {}

    const PromptLibrary& prompts() const { return *prompts_; }
    size_t embedding_dimension() const { return backend_->embedding_dimension(); }
    bool scripted() const { return backend_->is_scripted(); }

    std::string render(const std::string& template_id, const Vars& vars) const {
        return prompts_->render(template_id, vars);
    }

    ChatResponse chat(const ChatRequest& req) {
        std::string rendered = prompts_->render(req.template_id, req.variables);
        auto t0 = std::chrono::steady_clock::now();
        BackendChatResult raw = with_retries([&] { return backend_->chat(req, rendered); });
        double wall = seconds_since(t0);

        ChatResponse resp;
        resp.text = raw.text;
        resp.latency_s = raw.latency_s.value_or(wall);
        if (raw.usage) {
            resp.usage = *raw.usage;
        } else {
            resp.usage = {estimate_tokens(rendered), estimate_tokens(raw.text)};
            resp.usage_estimated = true;
        }
        return resp;
    }

    /// chat + JSON extraction with one identical re-issue on parse failure.
    /// Never throws for malformed output; callers decide the fallback.
    JsonChat chat_json(const ChatRequest& req) {
        JsonChat out;
        for (int attempt = 0; attempt < 2; ++attempt) {
            out.calls.push_back(chat(req));
            out.value = extract_json(out.calls.back().text);
            if (out.value) return out;
            if (attempt == 0)
                log::warn("unparseable JSON from template \"" + req.template_id + "\", retrying once");
        }
        out.degraded = true;
        log::warn("template \"" + req.template_id + "\" returned no parseable JSON after retry");
        return out;
    }

    EmbedResponse embed(const std::vector<std::string>& texts) {
        if (texts.empty()) throw InvalidArgument("embed: texts must be non-empty");
        for (const auto& t : texts)
            if (t.empty()) throw InvalidArgument("embed: empty string in input");
        auto t0 = std::chrono::steady_clock::now();
        BackendEmbedResult raw = with_retries([&] { return backend_->embed(texts); });
        double wall = seconds_since(t0);

        EmbedResponse resp;
        resp.vectors = std::move(raw.vectors);
        resp.latency_s = raw.latency_s.value_or(wall);
        if (raw.usage) {
            resp.usage = *raw.usage;
        } else {
            int64_t prompt = 0;
            for (const auto& t : texts) prompt += estimate_tokens(t);
            resp.usage = {prompt, 0};
            resp.usage_estimated = true;
        }
        return resp;
    }

    static int64_t estimate_tokens(const std::string& s) {
        return static_cast<int64_t>((s.size() + 3) / 4);
    }

private:
    template <typename F>
    auto with_retries(F&& call) -> decltype(call()) {
        Slot slot(slots_);
        int backoff = options_.retry_backoff_ms;
        for (int attempt = 0;; ++attempt) {
            try {
                return call();
            } catch (const NetworkError& e) {
                if (attempt >= options_.retries) throw;
                log::warn(std::string("transport failure, retrying: ") + e.what());
            } catch (const BackendError& e) {
                if (attempt >= options_.retries) throw;
                log::warn(std::string("backend error, retrying: ") + e.what());
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
            backoff *= 2;
        }
    }

    struct Slot {
        explicit Slot(std::counting_semaphore<>& s) : sem(s) { sem.acquire(); }
        ~Slot() { sem.release(); }
        std::counting_semaphore<>& sem;
    };

    static double seconds_since(std::chrono::steady_clock::time_point t0) {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    std::shared_ptr<Backend> backend_;
    std::shared_ptr<PromptLibrary> prompts_;
    GatewayOptions options_;
    std::counting_semaphore<> slots_;
};

} // namespace dmem
