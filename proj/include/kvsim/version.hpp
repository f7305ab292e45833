#pragma once

namespace kvsim {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace kvsim
