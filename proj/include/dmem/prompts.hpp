#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dmem/errors.hpp"
#include "dmem/text.hpp"

namespace dmem {

/// Ordered bindings: order matters for variables that are appended as
/// labeled sections rather than substituted in place.
using Vars = std::vector<std::pair<std::string, std::string>>;

// Template ids shipped under assets/prompts/.
namespace tpl {
inline constexpr const char* answer_generation = "answer_generation";
inline constexpr const char* memory_filter = "memory_filter";
inline constexpr const char* fact_extraction = "fact_extraction";
inline constexpr const char* fact_filter = "fact_filter";
inline constexpr const char* consensus_judge = "consensus_judge";
inline constexpr const char* majority_judge = "majority_judge";
inline constexpr const char* quality_audit = "quality_audit";
inline constexpr const char* answer_judge = "answer_judge";
inline constexpr const char* memory_extraction = "memory_extraction";
inline constexpr const char* memory_update = "memory_update";
} // namespace tpl

inline const std::string* find_var(const Vars& vars, const std::string& name) {
    for (const auto& [k, v] : vars)
        if (k == name) return &v;
    return nullptr;
}

/// Loads one template per .txt file in a directory and renders them.
///
/// Rendering rules, in order:
///  1. A numbered placeholder list ("1. {memory_1}" ... followed by "...")
///     expands to one line per bound item, however many the caller passes.
///  2. {{name}} and {name} placeholders are substituted. Placeholder syntax
///     varies between templates; both forms are supported everywhere.
///  3. Any template placeholder left unbound raises invalid-argument naming
///     the placeholder.
///  4. Bound variables the template never mentions are appended at the end
///     as "# name:" sections, in binding order. Judge- and extractor-style
///     templates that describe their inputs in prose receive them this way.
class PromptLibrary {
public:
    explicit PromptLibrary(const std::string& dir) {
        namespace fs = std::filesystem;
        if (!fs::is_directory(dir))
            throw NotFound("prompt directory not found: " + dir);
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
            std::ifstream f(entry.path(), std::ios::binary);
            std::ostringstream body;
            body << f.rdbuf();
            templates_[entry.path().stem().string()] = body.str();
        }
        if (templates_.empty())
            throw NotFound("no .txt templates in " + dir);
    }

    bool has(const std::string& id) const { return templates_.count(id) > 0; }

    const std::string& raw(const std::string& id) const {
        auto it = templates_.find(id);
        if (it == templates_.end()) throw NotFound("unknown template \"" + id + "\"");
        return it->second;
    }

    std::vector<std::string> ids() const {
        std::vector<std::string> out;
        for (const auto& [id, _] : templates_) out.push_back(id);
        return out;
    }

    std::string render(const std::string& id, const Vars& vars) const {
        const std::string& tpl = raw(id);
        std::set<std::string> used;

        std::string body = expand_groups(tpl, vars, used);

        // Collect placeholders before substitution so values containing
        // braces can never be mistaken for placeholders.
        static const std::regex double_brace(R"(\{\{([A-Za-z_][A-Za-z0-9_]*)\}\})");
        static const std::regex single_brace(R"(\{([A-Za-z_][A-Za-z0-9_]*)\})");
        std::vector<std::string> wanted;
        std::string masked = body;
        for (std::smatch m; std::regex_search(masked, m, double_brace);) {
            wanted.push_back(m[1]);
            masked = m.prefix().str() + std::string(m[0].length(), '\x01') + m.suffix().str();
        }
        for (std::smatch m; std::regex_search(masked, m, single_brace);) {
            wanted.push_back(m[1]);
            masked = m.prefix().str() + std::string(m[0].length(), '\x01') + m.suffix().str();
        }
        for (const auto& name : wanted) {
            if (!find_var(vars, name))
                throw InvalidArgument("template \"" + id + "\": unbound placeholder \"" + name + "\"");
        }

        for (const auto& [name, value] : vars) {
            bool hit = false;
            hit |= replace_all(body, "{{" + name + "}}", value);
            hit |= replace_all(body, "{" + name + "}", value);
            if (hit) used.insert(name);
        }

        // Leftover bindings become appended sections.
        std::string out = body;
        if (!out.empty() && out.back() != '\n') out.push_back('\n');
        for (const auto& [name, value] : vars) {
            if (used.count(name)) continue;
            out += "\n# " + name + ":\n" + value + "\n";
        }
        return out;
    }

private:
    // Expands "1. {prefix_1} / 2. {prefix_2} / ... " line groups to match the
    // number of bound prefix_N variables.
    static std::string expand_groups(const std::string& tpl, const Vars& vars,
                                     std::set<std::string>& used) {
        static const std::regex item(R"(^(\d+)\. \{([A-Za-z_][A-Za-z0-9_]*_)(\d+)\}\s*$)");
        auto lines = text::split(tpl, '\n');
        std::ostringstream out;
        size_t i = 0;
        bool first = true;
        auto emit = [&](const std::string& line) {
            if (!first) out << '\n';
            out << line;
            first = false;
        };
        while (i < lines.size()) {
            std::smatch m;
            if (!std::regex_match(lines[i], m, item) || m[1] != "1" || m[3] != "1") {
                emit(lines[i++]);
                continue;
            }
            std::string prefix = m[2];
            size_t shown = 0;
            while (i + shown < lines.size()) {
                std::smatch mm;
                if (!std::regex_match(lines[i + shown], mm, item) || mm[2] != prefix) break;
                if (std::stoul(mm[1]) != shown + 1 || std::stoul(mm[3]) != shown + 1) break;
                ++shown;
            }
            size_t consumed = shown;
            if (i + consumed < lines.size() && text::trim(lines[i + consumed]) == "...") ++consumed;

            size_t n = 0;
            while (find_var(vars, prefix + std::to_string(n + 1))) ++n;
            for (size_t j = 1; j <= n; ++j) {
                std::string name = prefix + std::to_string(j);
                emit(std::to_string(j) + ". " + *find_var(vars, name));
                used.insert(name);
            }
            i += consumed;
        }
        return out.str();
    }

    static bool replace_all(std::string& s, const std::string& from, const std::string& to) {
        bool any = false;
        size_t pos = 0;
        while ((pos = s.find(from, pos)) != std::string::npos) {
            s.replace(pos, from.size(), to);
            pos += to.size();
            any = true;
        }
        return any;
    }

    std::map<std::string, std::string> templates_;
};

} // namespace dmem
