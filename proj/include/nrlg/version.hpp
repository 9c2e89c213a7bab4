#pragma once

#define NRLG_VERSION_MAJOR 1
#define NRLG_VERSION_MINOR 0
#define NRLG_VERSION_PATCH 0

namespace nrlg {

inline constexpr const char* version_string = "1.0.0";

}  // namespace nrlg
