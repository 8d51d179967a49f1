#pragma once

namespace crowdflow {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kTensorFormatVersion = 1;
inline constexpr int kCheckpointFormatVersion = 1;

}  // namespace crowdflow
