#pragma once

namespace gphodlr {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace gphodlr
