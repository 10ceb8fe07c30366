#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace stormcast {

using Timestamp = std::chrono::sys_seconds;
using std::chrono::hours;
using std::chrono::minutes;

// Frame cadence of the satellite imagery.
inline constexpr minutes kFrameStep{15};

// Accepts "YYYY-MM-DDTHH:MM[:SS][Z]" and the space-separated variant.
// Throws Errc::parse on malformed input.
Timestamp parse_timestamp(std::string_view text);

// "YYYY-MM-DDTHH:MM:SSZ"
std::string format_timestamp(Timestamp t);

// "YYYYMMDDTHHMM", used in file names.
std::string compact_timestamp(Timestamp t);

}  // namespace stormcast
