#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dmem/conversation.hpp"
#include "dmem/errors.hpp"
#include "dmem/json_util.hpp"
#include "dmem/log.hpp"

namespace dmem {

enum class Category { SingleHop, MultiHop, Temporal, OpenDomain };

inline const char* to_string(Category c) {
    switch (c) {
        case Category::SingleHop: return "single-hop";
        case Category::MultiHop: return "multi-hop";
        case Category::Temporal: return "temporal";
        case Category::OpenDomain: return "open-domain";
    }
    return "open-domain";
}

inline std::optional<Category> category_from_string(const std::string& s) {
    if (s == "single-hop") return Category::SingleHop;
    if (s == "multi-hop") return Category::MultiHop;
    if (s == "temporal") return Category::Temporal;
    if (s == "open-domain") return Category::OpenDomain;
    return std::nullopt;
}

struct QAItem {
    std::string question;
    std::string gold_answer;
    Category category = Category::OpenDomain;
    std::string conversation_id;
};

struct Dataset {
    std::vector<Conversation> conversations;
    std::vector<QAItem> questions;

    const Conversation& conversation(const std::string& id) const {
        for (const auto& c : conversations)
            if (c.id == id) return c;
        throw NotFound("no conversation with id \"" + id + "\"");
    }
};

enum class DatasetFormat { Normalized, LoCoMo, RealTalk };

inline DatasetFormat dataset_format_from_string(const std::string& s) {
    if (s == "normalized") return DatasetFormat::Normalized;
    if (s == "locomo") return DatasetFormat::LoCoMo;
    if (s == "realtalk") return DatasetFormat::RealTalk;
    throw InvalidArgument("unknown dataset format \"" + s +
                          "\" (expected normalized|locomo|realtalk)");
}

namespace detail {

inline json load_json_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open dataset file " + path);
    json doc = json::parse(f, nullptr, false);
    if (doc.is_discarded()) throw FormatError(path + ": not valid JSON");
    return doc;
}

inline Dataset parse_normalized(const json& doc, const std::string& path) {
    Dataset ds;
    if (!doc.is_object() || !doc.contains("conversations") || !doc.contains("questions"))
        throw FormatError(path + ": expected object with \"conversations\" and \"questions\"");
    for (size_t ci = 0; ci < doc["conversations"].size(); ++ci) {
        const json& c = doc["conversations"][ci];
        std::string where = path + ": conversations[" + std::to_string(ci) + "]";
        Conversation conv;
        try {
            conv.id = c.at("id").get<std::string>();
            auto speakers = c.at("speakers");
            if (!speakers.is_array() || speakers.size() != 2)
                throw FormatError(where + ".speakers: expected exactly two speakers");
            conv.speakers = {speakers[0].get<std::string>(), speakers[1].get<std::string>()};
            for (size_t mi = 0; mi < c.at("messages").size(); ++mi) {
                const json& m = c["messages"][mi];
                Message msg;
                msg.index = static_cast<int>(mi);
                msg.speaker = m.at("speaker").get<std::string>();
                msg.timestamp = m.value("timestamp", std::string{});
                msg.text = m.at("text").get<std::string>();
                conv.messages.push_back(std::move(msg));
            }
        } catch (const json::exception& e) {
            throw FormatError(where + ": " + e.what());
        }
        conv.validate();
        ds.conversations.push_back(std::move(conv));
    }
    for (size_t qi = 0; qi < doc["questions"].size(); ++qi) {
        const json& q = doc["questions"][qi];
        std::string where = path + ": questions[" + std::to_string(qi) + "]";
        QAItem item;
        try {
            item.question = q.at("question").get<std::string>();
            item.gold_answer = q.at("answer").get<std::string>();
            item.conversation_id = q.at("conversation_id").get<std::string>();
            auto cat = category_from_string(q.at("category").get<std::string>());
            if (!cat) throw FormatError(where + ".category: unknown category");
            item.category = *cat;
        } catch (const json::exception& e) {
            throw FormatError(where + ": " + e.what());
        }
        ds.questions.push_back(std::move(item));
    }
    return ds;
}

// Session-structured source files: an array of samples, each carrying a
// "conversation" object with speaker_a/speaker_b and session_N message
// arrays, plus a "qa" list with integer or string categories.
inline Dataset parse_sessions(const json& doc, const std::string& path, bool allow_single_hop) {
    if (!doc.is_array()) throw FormatError(path + ": expected a top-level array of samples");
    Dataset ds;
    size_t dropped_adversarial = 0;
    for (size_t si = 0; si < doc.size(); ++si) {
        const json& sample = doc[si];
        std::string where = path + ": [" + std::to_string(si) + "]";
        if (!sample.is_object() || !sample.contains("conversation"))
            throw FormatError(where + ": missing \"conversation\"");
        const json& cj = sample["conversation"];
        Conversation conv;
        conv.id = sample.value("sample_id", "conv-" + std::to_string(si));
        try {
            conv.speakers = {cj.at("speaker_a").get<std::string>(),
                             cj.at("speaker_b").get<std::string>()};
        } catch (const json::exception& e) {
            throw FormatError(where + ".conversation: " + e.what());
        }
        // Sessions iterate in numeric order; each message inherits the
        // session's date_time string.
        std::map<int, std::string> session_keys;
        for (const auto& [key, value] : cj.items()) {
            if (key.rfind("session_", 0) == 0 && value.is_array()) {
                try {
                    session_keys[std::stoi(key.substr(8))] = key;
                } catch (const std::exception&) {
                    throw FormatError(where + ": unparseable session key \"" + key + "\"");
                }
            }
        }
        for (const auto& [num, key] : session_keys) {
            std::string stamp = cj.value(key + "_date_time", std::string{});
            for (const auto& mj : cj[key]) {
                Message m;
                m.index = static_cast<int>(conv.messages.size());
                try {
                    m.speaker = mj.at("speaker").get<std::string>();
                    m.text = mj.at("text").get<std::string>();
                } catch (const json::exception& e) {
                    throw FormatError(where + "." + key + ": " + e.what());
                }
                m.timestamp = stamp;
                conv.messages.push_back(std::move(m));
            }
        }
        conv.validate();

        if (sample.contains("qa")) {
            for (size_t qi = 0; qi < sample["qa"].size(); ++qi) {
                const json& qj = sample["qa"][qi];
                std::string qwhere = where + ".qa[" + std::to_string(qi) + "]";
                std::optional<Category> cat;
                if (qj.contains("category") && qj["category"].is_number_integer()) {
                    switch (qj["category"].get<int>()) {
                        case 1: cat = Category::MultiHop; break;
                        case 2: cat = Category::Temporal; break;
                        case 3: cat = Category::OpenDomain; break;
                        case 4: cat = Category::SingleHop; break;
                        case 5: cat = std::nullopt; break; // adversarial, excluded
                        default: throw FormatError(qwhere + ": unknown category number");
                    }
                } else if (qj.contains("category") && qj["category"].is_string()) {
                    std::string s = qj["category"].get<std::string>();
                    if (s == "adversarial") {
                        cat = std::nullopt;
                    } else {
                        cat = category_from_string(s);
                        if (!cat) throw FormatError(qwhere + ": unknown category \"" + s + "\"");
                    }
                } else {
                    throw FormatError(qwhere + ": missing category");
                }
                if (!cat) {
                    ++dropped_adversarial;
                    continue;
                }
                if (!allow_single_hop && *cat == Category::SingleHop)
                    throw FormatError(qwhere + ": single-hop category not part of this dataset");
                QAItem item;
                item.category = *cat;
                item.conversation_id = conv.id;
                try {
                    item.question = qj.at("question").get<std::string>();
                } catch (const json::exception& e) {
                    throw FormatError(qwhere + ": " + e.what());
                }
                if (qj.contains("answer") && qj["answer"].is_string())
                    item.gold_answer = qj["answer"].get<std::string>();
                else if (qj.contains("answer") && qj["answer"].is_number())
                    item.gold_answer = qj["answer"].dump();
                else
                    throw FormatError(qwhere + ": missing answer");
                ds.questions.push_back(std::move(item));
            }
        }
        ds.conversations.push_back(std::move(conv));
    }
    if (dropped_adversarial)
        log::info("dropped " + std::to_string(dropped_adversarial) + " adversarial questions");
    return ds;
}

} // namespace detail

/// Loads a dataset file as the normalized schema or through one of the
/// source-format adapters. Reports counts on stderr.
inline Dataset ingest_dataset(const std::string& path, DatasetFormat format) {
    json doc = detail::load_json_file(path);
    Dataset ds;
    switch (format) {
        case DatasetFormat::Normalized: ds = detail::parse_normalized(doc, path); break;
        case DatasetFormat::LoCoMo: ds = detail::parse_sessions(doc, path, true); break;
        case DatasetFormat::RealTalk: ds = detail::parse_sessions(doc, path, false); break;
    }
    std::set<std::string> ids;
    for (const auto& c : ds.conversations) {
        if (!ids.insert(c.id).second)
            throw FormatError(path + ": duplicate conversation id \"" + c.id + "\"");
    }
    for (const auto& q : ds.questions) {
        if (!ids.count(q.conversation_id))
            throw FormatError(path + ": question references unknown conversation \"" +
                              q.conversation_id + "\"");
    }
    log::info(path + ": " + std::to_string(ds.conversations.size()) + " conversations, " +
              std::to_string(ds.questions.size()) + " questions");
    return ds;
}

} // namespace dmem
