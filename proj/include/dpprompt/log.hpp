#pragma once

#include <string_view>

namespace dpprompt::log {

enum class Level { kQuiet = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

void set_level(Level level);
Level level();

// Messages go to stderr. Callers must never pass private prompt content at
// levels below kDebug.
void warn(std::string_view message);
void info(std::string_view message);
void debug(std::string_view message);

}  // namespace dpprompt::log
