#pragma once

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace nfnoise {

/// Library logger; writes to stderr so command output stays clean.
inline spdlog::logger& log() {
  static const auto logger = [] {
    auto l = spdlog::stderr_color_mt("nfnoise");
    l->set_pattern("%^%l%$: %v");
    return l;
  }();
  return *logger;
}

}  // namespace nfnoise
