#pragma once

namespace balmkt {

// Bumped whenever a change alters simulated output for a fixed config.
inline constexpr const char* kEngineVersion = "1.0.0";

}  // namespace balmkt
