#pragma once

#include <string_view>

namespace stormcast {

// Warnings go to stderr prefixed with "WARN:"; tests may mute them.
void warn(std::string_view message);
void set_warnings_enabled(bool enabled);

// Worker cap from STORMCAST_THREADS (default: hardware concurrency, min 1).
unsigned worker_threads();

}  // namespace stormcast
