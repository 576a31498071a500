#pragma once

namespace morsepi {

inline constexpr const char* kToolVersion = "0.1.0";

}
