#pragma once

namespace fairmig {

inline constexpr const char* kVersion = "fairmig 0.1.0";
inline constexpr int kSchemaVersion = 1;

}  // namespace fairmig
