#pragma once

#include <spdlog/spdlog.h>

namespace cgmm {

// Shared stderr logger. Level comes from CGMMSEP_LOG (error|warn|info|debug),
// default warn.
spdlog::logger& logger();

}  // namespace cgmm
