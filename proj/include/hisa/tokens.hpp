// Reserved vocabulary ids, fixed across every corpus and checkpoint.
#pragma once

namespace hisa {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kReservedTokens = 4;

}  // namespace hisa
