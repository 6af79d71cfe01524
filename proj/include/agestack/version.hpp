#ifndef AGESTACK_VERSION_HPP
#define AGESTACK_VERSION_HPP

namespace agestack {

inline constexpr const char* kVersion = "0.1.0";

// Bumped whenever any report or bundle layout changes shape.
inline constexpr const char* kSchemaVersion = "1";

}  // namespace agestack

#endif
