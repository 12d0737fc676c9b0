// aud/log.hpp

#ifndef AUD_LOG_HPP_
#define AUD_LOG_HPP_

#include <sstream>
#include <string>

namespace aud {

enum class LogLevel { kError = 0, kWarning = 1, kInfo = 2, kDebug = 3 };

void set_log_level(LogLevel level);
LogLevel log_level();
void log_message(LogLevel level, const std::string& message);

}  // namespace aud

#define AUD_LOG_AT(level, expr)                        \
  do {                                                 \
    if (static_cast<int>(level) <= static_cast<int>(::aud::log_level())) { \
      std::ostringstream aud_log_os_;                  \
      aud_log_os_ << expr;                             \
      ::aud::log_message(level, aud_log_os_.str());    \
    }                                                  \
  } while (0)

#define AUD_WARN(expr) AUD_LOG_AT(::aud::LogLevel::kWarning, expr)
#define AUD_INFO(expr) AUD_LOG_AT(::aud::LogLevel::kInfo, expr)

#endif  // AUD_LOG_HPP_
