#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "dmem/errors.hpp"
#include "dmem/gateway.hpp"

namespace dmem {

struct HttpBackendConfig {
    std::string base_url = "https://api.openai.com/v1";
    std::string chat_model = "gpt-4o-mini";
    std::string embed_model = "text-embedding-3-small";
    std::string api_key;
    size_t embedding_dim = 1536;
    int timeout_s = 120;
};

/// Chat-completions and embeddings over the OpenAI-compatible wire format.
/// Transport failures surface as NetworkError and non-2xx statuses as
/// BackendError; the gateway owns the retry loop.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
        auto slash = config_.base_url.find('/', config_.base_url.find("//") + 2);
        if (slash == std::string::npos) {
            origin_ = config_.base_url;
        } else {
            origin_ = config_.base_url.substr(0, slash);
            path_prefix_ = config_.base_url.substr(slash);
        }
        while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    }

    BackendChatResult chat(const ChatRequest& req, const std::string& rendered) override {
        json body = {
            {"model", config_.chat_model},
            {"messages", json::array({json{{"role", "user"}, {"content", rendered}}})},
            {"temperature", req.temperature},
        };
        if (req.max_output_tokens) body["max_tokens"] = *req.max_output_tokens;
        if (req.response_format == ResponseFormat::Json)
            body["response_format"] = {{"type", "json_object"}};

        json resp = post(path_prefix_ + "/chat/completions", body);
        BackendChatResult out;
        try {
            out.text = resp.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception& e) {
            throw BackendError(std::string("malformed chat completion payload: ") + e.what());
        }
        if (resp.contains("usage")) {
            out.usage = Usage{resp["usage"].value("prompt_tokens", int64_t{0}),
                              resp["usage"].value("completion_tokens", int64_t{0})};
        }
        return out;
    }

    BackendEmbedResult embed(const std::vector<std::string>& texts) override {
        json body = {{"model", config_.embed_model}, {"input", texts}};
        json resp = post(path_prefix_ + "/embeddings", body);
        BackendEmbedResult out;
        try {
            out.vectors.resize(texts.size());
            for (const auto& item : resp.at("data")) {
                size_t idx = item.at("index").get<size_t>();
                out.vectors.at(idx) = item.at("embedding").get<std::vector<double>>();
            }
        } catch (const json::exception& e) {
            throw BackendError(std::string("malformed embeddings payload: ") + e.what());
        }
        if (resp.contains("usage"))
            out.usage = Usage{resp["usage"].value("prompt_tokens", int64_t{0}), 0};
        return out;
    }

    size_t embedding_dimension() const override { return config_.embedding_dim; }

private:
    json post(const std::string& path, const json& body) {
        httplib::Client client(origin_);
        client.set_read_timeout(config_.timeout_s, 0);
        client.set_connection_timeout(10, 0);
        httplib::Headers headers = {{"Authorization", "Bearer " + config_.api_key}};
        auto res = client.Post(path, headers, body.dump(), "application/json");
        if (!res)
            throw NetworkError("POST " + origin_ + path + ": " + httplib::to_string(res.error()));
        if (res->status < 200 || res->status >= 300)
            throw BackendError("POST " + path + " returned " + std::to_string(res->status) + ": " +
                                   res->body.substr(0, 300),
                               res->status);
        json parsed = json::parse(res->body, nullptr, false);
        if (parsed.is_discarded())
            throw BackendError("non-JSON response body from " + path);
        return parsed;
    }

    HttpBackendConfig config_;
    std::string origin_;
    std::string path_prefix_;
};

} // namespace dmem
