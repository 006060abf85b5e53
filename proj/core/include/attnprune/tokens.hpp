/* Copyright 2026 The attnprune Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace attnprune {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumReserved = 4;

// Right-padded [batch x len] token ids with per-row valid lengths.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<int> ids;
  std::vector<std::size_t> lengths;

  int at(std::size_t b, std::size_t i) const { return ids[b * len + i]; }
  bool valid(std::size_t b, std::size_t i) const { return i < lengths[b]; }

  static TokenBatch from_rows(const std::vector<std::vector<int>>& rows);
};

inline TokenBatch TokenBatch::from_rows(const std::vector<std::vector<int>>& rows) {
  TokenBatch t;
  t.batch = rows.size();
  for (const auto& r : rows) t.len = std::max(t.len, r.size());
  t.ids.assign(t.batch * t.len, kPadId);
  for (std::size_t b = 0; b < rows.size(); ++b) {
    for (std::size_t i = 0; i < rows[b].size(); ++i) t.ids[b * t.len + i] = rows[b][i];
    t.lengths.push_back(rows[b].size());
  }
  return t;
}

}  // namespace attnprune
