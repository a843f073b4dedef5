#pragma once

#include <iostream>
#include <mutex>
#include <string>

namespace dmem::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3 };

inline Level& threshold() {
    static Level level = Level::Info;
    return level;
}

inline std::mutex& mu() {
    static std::mutex m;
    return m;
}

// All diagnostics go to stderr so stdout stays clean for data.
inline void write(Level level, const std::string& msg) {
    if (level < threshold()) return;
    static const char* names[] = {"debug", "info", "warn", "error"};
    std::lock_guard<std::mutex> lock(mu());
    std::cerr << "[dmem:" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

inline void debug(const std::string& msg) { write(Level::Debug, msg); }
inline void info(const std::string& msg) { write(Level::Info, msg); }
inline void warn(const std::string& msg) { write(Level::Warn, msg); }
inline void error(const std::string& msg) { write(Level::Error, msg); }

} // namespace dmem::log
