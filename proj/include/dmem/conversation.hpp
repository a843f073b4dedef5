#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "dmem/errors.hpp"

namespace dmem {

/// One utterance, with the dataset's original timestamp string.
struct Message {
    int index = 0;
    std::string speaker;
    std::string timestamp;
    std::string text;
};

/// A two-speaker dialogue. Turn t (1-based) covers the message pair at
/// 0-based indices (2t-2, 2t-1).
struct Conversation {
    std::string id;
    std::array<std::string, 2> speakers;
    std::vector<Message> messages;

    int full_turns() const { return static_cast<int>(messages.size() / 2); }

    bool has_turn(int t) const {
        return t >= 1 && static_cast<size_t>(2 * t) <= messages.size();
    }

    std::pair<const Message&, const Message&> turn_pair(int t) const {
        if (!has_turn(t))
            throw InvalidArgument("conversation " + id + ": no message pair for turn " +
                                  std::to_string(t));
        return {messages[2 * t - 2], messages[2 * t - 1]};
    }

    void validate() const {
        if (speakers[0].empty() || speakers[1].empty() || speakers[0] == speakers[1])
            throw FormatError("conversation " + id + ": needs two distinct speakers");
        for (size_t i = 0; i < messages.size(); ++i) {
            if (messages[i].index != static_cast<int>(i))
                throw FormatError("conversation " + id + ": message indices not contiguous at " +
                                  std::to_string(i));
            if (messages[i].speaker != speakers[0] && messages[i].speaker != speakers[1])
                throw FormatError("conversation " + id + ": message " + std::to_string(i) +
                                  " has unknown speaker \"" + messages[i].speaker + "\"");
        }
    }
};

inline std::string format_message(const Message& m) {
    std::string out;
    if (!m.timestamp.empty()) out += "(" + m.timestamp + ") ";
    out += m.speaker + ": " + m.text;
    return out;
}

inline std::string format_messages(std::span<const Message> messages) {
    std::string out;
    for (const auto& m : messages) {
        if (!out.empty()) out += "\n";
        out += format_message(m);
    }
    return out;
}

} // namespace dmem
