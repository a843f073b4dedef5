#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace dmem {

using json = nlohmann::json;

// Pulls the first balanced JSON object or array out of a completion.
// Handles code fences and leading/trailing chatter; returns nullopt when no
// parseable JSON value is present.
inline std::optional<json> extract_json(std::string_view raw) {
    std::string s(raw);
    // Drop fenced blocks down to their contents.
    size_t fence = s.find("```");
    if (fence != std::string::npos) {
        size_t body = s.find('\n', fence);
        if (body != std::string::npos) {
            size_t close = s.find("```", body);
            if (close != std::string::npos) s = s.substr(body + 1, close - body - 1);
        }
    }
    size_t start = s.find_first_of("{[");
    while (start != std::string::npos) {
        char open = s[start];
        char close = (open == '{') ? '}' : ']';
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (size_t i = start; i < s.size(); ++i) {
            char c = s[i];
            if (in_string) {
                if (escaped) escaped = false;
                else if (c == '\\') escaped = true;
                else if (c == '"') in_string = false;
                continue;
            }
            if (c == '"') { in_string = true; continue; }
            if (c == open) ++depth;
            else if (c == close) {
                if (--depth == 0) {
                    auto parsed = json::parse(s.substr(start, i - start + 1), nullptr, false);
                    if (!parsed.is_discarded()) return parsed;
                    break;
                }
            }
        }
        start = s.find_first_of("{[", start + 1);
    }
    return std::nullopt;
}

} // namespace dmem
