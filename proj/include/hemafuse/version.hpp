#pragma once

namespace hemafuse {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace hemafuse
