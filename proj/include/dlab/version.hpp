#pragma once

namespace dlab {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kToolVersion = "dlab 0.1.0";

}  // namespace dlab
