#pragma once

#include <string_view>

namespace nvae {

inline constexpr std::string_view kLibraryVersion = "0.1.0";
inline constexpr std::string_view kCheckpointMagic = "NVAE-CHECKPOINT 1";

}  // namespace nvae
