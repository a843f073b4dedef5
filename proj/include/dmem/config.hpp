#pragma once

#include <cstdlib>
#include <fstream>
#include <memory>
#include <string>

#include "dmem/deliberation.hpp"
#include "dmem/errors.hpp"
#include "dmem/gateway.hpp"
#include "dmem/json_util.hpp"
#include "dmem/mem0star.hpp"

namespace dmem {

/// Everything a run needs in one place. Defaults are the shipped pipeline
/// configuration; a JSON config file overrides defaults and command-line
/// flags override the file.
struct RunConfig {
    // backend
    std::string backend = "scripted"; // "scripted" | "http"
    std::string base_url = "https://api.openai.com/v1";
    std::string chat_model = "gpt-4o-mini";
    std::string embed_model = "text-embedding-3-small";
    std::string api_key_env = "OPENAI_API_KEY";
    std::string script_path;    // scripted backend rule file
    size_t embedding_dim = 64;  // live embedding endpoints usually want 1536
    int retries = 2;
    int retry_backoff_ms = 250;
    int in_flight_limit = 4;
    std::string prompt_dir = "assets/prompts";

    // pipeline
    Mem0StarConfig mem0;
    DeliberationConfig deliberation;
    double sample_temperature = 0.7;
    int sample_count = 3;
    bool use_filter = false;
    std::string policy = "quality";
    double bleu_smoothing_epsilon = 0.1;

    void merge_json(const json& j) {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        get("backend", backend);
        get("base_url", base_url);
        get("chat_model", chat_model);
        get("embed_model", embed_model);
        get("api_key_env", api_key_env);
        get("script_path", script_path);
        get("embedding_dim", embedding_dim);
        get("retries", retries);
        get("retry_backoff_ms", retry_backoff_ms);
        get("in_flight_limit", in_flight_limit);
        get("prompt_dir", prompt_dir);
        get("extraction_top_k", mem0.extraction_top_k);
        get("recent_window", mem0.recent_window);
        get("update_top_k", mem0.update_top_k);
        get("update_similarity_threshold", mem0.update_similarity_threshold);
        get("query_top_k", mem0.query_top_k);
        get("answer_temperature", mem0.answer_temperature);
        get("chunk_size", deliberation.chunk_size);
        get("history_size", deliberation.history_size);
        get("fact_score_min", deliberation.fact_score_min);
        get("fact_keep_threshold", deliberation.fact_keep_threshold);
        get("llm_filter_min_facts", deliberation.llm_filter_min_facts);
        get("parallelism", deliberation.parallelism);
        get("sample_temperature", sample_temperature);
        get("sample_count", sample_count);
        get("use_filter", use_filter);
        get("policy", policy);
        get("bleu_smoothing_epsilon", bleu_smoothing_epsilon);
        deliberation.answer_temperature = mem0.answer_temperature;
    }

    static RunConfig from_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw FormatError("cannot open config file " + path);
        json j = json::parse(f, nullptr, false);
        if (j.is_discarded()) throw FormatError(path + ": not valid JSON");
        RunConfig cfg;
        cfg.merge_json(j);
        return cfg;
    }

    void validate() const {
        if (backend != "scripted" && backend != "http")
            throw InvalidArgument("backend must be \"scripted\" or \"http\"");
        if (sample_count != 3)
            throw InvalidArgument("sample_count must be 3: the vote judges compare exactly three answers");
        if (mem0.query_top_k < 1 || mem0.extraction_top_k < 1 || mem0.update_top_k < 1)
            throw InvalidArgument("top-k values must be >= 1");
        if (deliberation.chunk_size < 1) throw InvalidArgument("chunk_size must be >= 1");
        if (deliberation.history_size < 0) throw InvalidArgument("history_size must be >= 0");
    }
};

} // namespace dmem
