#pragma once

namespace s4tk {

inline constexpr const char* kVersion = "0.1.0";

} // namespace s4tk
