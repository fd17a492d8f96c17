#pragma once

namespace framepick {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace framepick
