#pragma once

namespace nsvd {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace nsvd
