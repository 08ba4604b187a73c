#pragma once

namespace dad {

inline constexpr const char* kVersion = "0.1.0";

} // namespace dad
