#include "cgmmsep/log.hpp"

#include <cstdlib>
#include <string>

#include <spdlog/sinks/stdout_sinks.h>

namespace cgmm {

namespace {

spdlog::level::level_enum level_from_env() {
  const char* env = std::getenv("CGMMSEP_LOG");
  if (env == nullptr) return spdlog::level::warn;
  const std::string value(env);
  if (value == "error") return spdlog::level::err;
  if (value == "info") return spdlog::level::info;
  if (value == "debug") return spdlog::level::debug;
  return spdlog::level::warn;
}

}  // namespace

spdlog::logger& logger() {
  static std::shared_ptr<spdlog::logger> instance = [] {
    auto sink = std::make_shared<spdlog::sinks::stderr_sink_mt>();
    auto log = std::make_shared<spdlog::logger>("cgmmsep", sink);
    log->set_pattern("[%l] %v");
    log->set_level(level_from_env());
    return log;
  }();
  return *instance;
}

}  // namespace cgmm
