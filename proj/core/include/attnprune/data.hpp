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

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "attnprune/tokens.hpp"

namespace attnprune {

// Symbol list whose first kNumReserved entries are <pad> <bos> <eos> <unk>.
class Vocab {
 public:
  Vocab();
  explicit Vocab(const std::vector<std::string>& symbols);  // non-reserved symbols

  std::size_t size() const { return symbols_.size(); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  const std::string& symbol(int id) const;
  int id(const std::string& symbol) const;  // kUnkId when absent

  // Character-level helpers: one symbol per UTF-8 code point.
  std::vector<int> encode_chars(std::string_view text) const;
  std::string decode_chars(const std::vector<int>& ids) const;

  bool operator==(const Vocab& other) const { return symbols_ == other.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::map<std::string, int> index_;
};

// Splits UTF-8 text into code points; invalid bytes become single-byte symbols.
std::vector<std::string> utf8_chars(std::string_view text);

enum class DatasetKind { kLmStream, kPairSet };
enum class Split { kTrain, kValid, kTest };

std::string_view to_string(DatasetKind k);
std::string_view to_string(Split s);

struct Pair {
  std::vector<int> src;
  std::vector<int> tgt;  // bos ... eos
  bool operator==(const Pair&) const = default;
};

struct Dataset {
  DatasetKind kind = DatasetKind::kPairSet;
  Split split = Split::kTrain;
  std::size_t vocab_size = 0;
  std::vector<Pair> pairs;
  std::vector<std::size_t> indices;  // generator index of each pair
  std::vector<int> stream;
  std::size_t stream_offset = 0;  // position of stream[0] in the full corpus

  std::size_t num_examples() const { return kind == DatasetKind::kPairSet ? pairs.size() : stream.size(); }
  bool operator==(const Dataset&) const = default;
};

struct TaskData {
  std::string name;
  Vocab vocab;
  Dataset train;
  Dataset valid;
  Dataset test;

  const Dataset& split(Split s) const;
};

// Pair generators: 80/10/10 split by example index; deterministic per seed.
TaskData gen_copy(std::size_t count, std::size_t len_min, std::size_t len_max,
                  std::size_t alphabet_size, std::uint64_t seed);
TaskData gen_reverse(std::size_t count, std::size_t len_min, std::size_t len_max,
                     std::size_t alphabet_size, std::uint64_t seed);

inline constexpr std::size_t kToyAlphabet = 20;
inline constexpr std::size_t kToySentinels = 4;
inline constexpr std::size_t kToyLenMin = 5;
inline constexpr std::size_t kToyLenMax = 16;

// src[0] is a sentinel, src[1..] are alphabet symbols. tgt is the per-seed
// substitution cipher of src[1..] followed by the cipher of src[0], so the
// last target token can only be recovered by attending back to position 0.
TaskData gen_toy_translation(std::size_t count, std::uint64_t seed);
// The cipher used by gen_toy_translation for `seed`, indexed by token id.
std::vector<int> toy_cipher(std::uint64_t seed);

// Character LM over at most max_chars code points; 90/5/5 contiguous split.
TaskData char_lm_ingest(const std::string& path, std::size_t max_chars);

struct Batch {
  TokenBatch src;     // pair sets only
  TokenBatch input;   // decoder / LM input
  std::vector<int> targets;  // [input.batch * input.len], kPadId where ignored
  std::vector<std::size_t> examples;  // pair indices or stream segment starts

  std::size_t target_tokens() const;
};

// LmStream: contiguous segments of max_len predicted tokens (the trailing
// partial segment is kept). PairSet: length-bucketed padded batches; pairs
// longer than max_len raise ShapeError. Batch order and membership depend
// only on (seed, epoch); seed 0 with shuffle=false keeps dataset order.
std::vector<Batch> make_batches(const Dataset& data, std::size_t batch_size, std::size_t max_len,
                                std::uint64_t seed, std::uint64_t epoch = 0, bool shuffle = true);

// One example per line: tokens space-separated, src and tgt tab-separated.
std::string export_text(const Dataset& data, const Vocab& vocab);

}  // namespace attnprune
