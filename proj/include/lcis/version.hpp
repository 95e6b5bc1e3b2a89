#pragma once

namespace lcis {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace lcis
