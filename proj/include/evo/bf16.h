// Copyright 2026 The Evoengine Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace evo::bf16 {

// bfloat16 is the upper half of an IEEE binary32 pattern: 1 sign bit,
// 8 exponent bits, 7 stored significand bits.

inline constexpr std::uint16_t kQuietNaN = 0x7FC0;

// Round-to-nearest-even onto the upper 16 bits. Overflow rounds to infinity;
// NaN stays NaN (quiet, sign preserved).
inline std::uint16_t from_float(float value) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
  if ((bits & 0x7F800000u) == 0x7F800000u && (bits & 0x007FFFFFu) != 0) {
    return static_cast<std::uint16_t>((bits >> 16) | 0x0040u);
  }
  const std::uint32_t lsb = (bits >> 16) & 1u;
  const std::uint32_t rounded = bits + 0x7FFFu + lsb;
  return static_cast<std::uint16_t>(rounded >> 16);
}

inline float to_float(std::uint16_t raw) {
  return std::bit_cast<float>(static_cast<std::uint32_t>(raw) << 16);
}

// Nearest bfloat16 value, widened back to float.
inline float round(float value) { return to_float(from_float(value)); }

}  // namespace evo::bf16
