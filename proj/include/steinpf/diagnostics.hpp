#pragma once

#include <functional>
#include <string_view>

namespace steinpf {

// Non-fatal numerical events (bandwidth fallback, weight degeneracy, coarse
// grids) are routed through a process-wide sink. The default sink writes to
// stderr; tests install their own to count events.
using WarningHandler = std::function<void(std::string_view)>;

WarningHandler set_warning_handler(WarningHandler handler);
void warn(std::string_view message);

}  // namespace steinpf
