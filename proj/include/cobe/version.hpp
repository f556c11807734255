#pragma once

namespace cobe {

inline constexpr const char* kEngineVersion = "0.1.0";

}  // namespace cobe
