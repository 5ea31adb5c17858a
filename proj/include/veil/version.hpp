#pragma once

namespace veil {

/// Toolkit version recorded in run manifests.
inline constexpr const char* kCodeVersion = "0.1.0";

}  // namespace veil
