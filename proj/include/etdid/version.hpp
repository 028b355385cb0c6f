#pragma once

namespace etdid {
inline constexpr const char* kVersion = "0.1.0";
}
