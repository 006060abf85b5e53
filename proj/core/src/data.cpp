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

#include "attnprune/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "attnprune/error.hpp"

namespace attnprune {

namespace {

const std::vector<std::string> kReserved = {"<pad>", "<bos>", "<eos>", "<unk>"};

std::vector<std::string> alphabet_symbols(std::size_t n, std::string_view prefix) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (n <= 26 && prefix.empty()) {
      out.emplace_back(1, static_cast<char>('a' + i));
    } else {
      out.push_back(std::string(prefix.empty() ? "s" : prefix) + std::to_string(i));
    }
  }
  return out;
}

Dataset make_split(Split s, std::size_t vocab_size) {
  Dataset d;
  d.kind = DatasetKind::kPairSet;
  d.split = s;
  d.vocab_size = vocab_size;
  return d;
}

// Index ranges [0, a), [a, b), [b, count) for the 80/10/10 split.
std::pair<std::size_t, std::size_t> split_points(std::size_t count) {
  const std::size_t a = count * 8 / 10;
  const std::size_t b = a + count / 10;
  return {a, b};
}

TaskData distribute(std::string name, Vocab vocab, std::vector<Pair> pairs) {
  TaskData t;
  t.name = std::move(name);
  const std::size_t v = vocab.size();
  t.vocab = std::move(vocab);
  t.train = make_split(Split::kTrain, v);
  t.valid = make_split(Split::kValid, v);
  t.test = make_split(Split::kTest, v);
  const auto [a, b] = split_points(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Dataset& d = i < a ? t.train : (i < b ? t.valid : t.test);
    d.pairs.push_back(std::move(pairs[i]));
    d.indices.push_back(i);
  }
  return t;
}

void check_lengths(std::size_t len_min, std::size_t len_max, std::size_t alphabet_size) {
  if (len_min < 1 || len_max < len_min) {
    throw ConfigError("sequence lengths need 1 <= len_min <= len_max");
  }
  if (alphabet_size < 2) throw ConfigError("alphabet_size must be at least 2");
}

template <typename MakeTarget>
TaskData gen_symbolic(std::string name, std::size_t count, std::size_t len_min,
                      std::size_t len_max, std::size_t alphabet_size, std::uint64_t seed,
                      MakeTarget make_target) {
  check_lengths(len_min, len_max, alphabet_size);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len_dist(len_min, len_max);
  std::uniform_int_distribution<int> sym(kNumReserved,
                                         kNumReserved + static_cast<int>(alphabet_size) - 1);
  std::vector<Pair> pairs(count);
  for (auto& p : pairs) {
    p.src.resize(len_dist(rng));
    for (auto& s : p.src) s = sym(rng);
    p.tgt.push_back(kBosId);
    for (int s : make_target(p.src)) p.tgt.push_back(s);
    p.tgt.push_back(kEosId);
  }
  return distribute(std::move(name), Vocab(alphabet_symbols(alphabet_size, "")), std::move(pairs));
}

}  // namespace

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(const std::vector<std::string>& symbols) : symbols_(kReserved) {
  for (const auto& s : symbols) symbols_.push_back(s);
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (!index_.emplace(symbols_[i], static_cast<int>(i)).second) {
      throw ConfigError("duplicate vocabulary symbol '" + symbols_[i] + "'");
    }
  }
}

const std::string& Vocab::symbol(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    throw DomainError("token id " + std::to_string(id) + " outside vocabulary of size " +
                      std::to_string(symbols_.size()));
  }
  return symbols_[static_cast<std::size_t>(id)];
}

int Vocab::id(const std::string& symbol) const {
  auto it = index_.find(symbol);
  return it == index_.end() ? kUnkId : it->second;
}

std::vector<int> Vocab::encode_chars(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& c : utf8_chars(text)) ids.push_back(id(c));
  return ids;
}

std::string Vocab::decode_chars(const std::vector<int>& ids) const {
  std::string out;
  for (int i : ids) out += symbol(i);
  return out;
}

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (c >= 0xF0 && c < 0xF8) {
      len = 4;
    } else if (c >= 0xE0) {
      len = c < 0xF0 ? 3 : 1;
    } else if (c >= 0xC0) {
      len = 2;
    }
    bool ok = i + len <= text.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      ok = (static_cast<unsigned char>(text[i + k]) & 0xC0) == 0x80;
    }
    if (!ok) len = 1;
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

std::string_view to_string(DatasetKind k) {
  return k == DatasetKind::kLmStream ? "lm_stream" : "pair_set";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

const Dataset& TaskData::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kValid: return valid;
    case Split::kTest: return test;
  }
  return train;
}

TaskData gen_copy(std::size_t count, std::size_t len_min, std::size_t len_max,
                  std::size_t alphabet_size, std::uint64_t seed) {
  return gen_symbolic("copy", count, len_min, len_max, alphabet_size, seed,
                      [](const std::vector<int>& src) { return src; });
}

TaskData gen_reverse(std::size_t count, std::size_t len_min, std::size_t len_max,
                     std::size_t alphabet_size, std::uint64_t seed) {
  return gen_symbolic("reverse", count, len_min, len_max, alphabet_size, seed,
                      [](const std::vector<int>& src) {
                        return std::vector<int>(src.rbegin(), src.rend());
                      });
}

std::vector<int> toy_cipher(std::uint64_t seed) {
  // Letters and sentinels are permuted within their own groups.
  const int first = kNumReserved;
  const int sentinel0 = first + static_cast<int>(kToyAlphabet);
  std::vector<int> cipher(kNumReserved + kToyAlphabet + kToySentinels);
  std::iota(cipher.begin(), cipher.end(), 0);
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
  std::shuffle(cipher.begin() + first, cipher.begin() + sentinel0, rng);
  std::shuffle(cipher.begin() + sentinel0, cipher.end(), rng);
  return cipher;
}

TaskData gen_toy_translation(std::size_t count, std::uint64_t seed) {
  const auto cipher = toy_cipher(seed);
  const int first = kNumReserved;
  const int sentinel0 = first + static_cast<int>(kToyAlphabet);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len_dist(kToyLenMin, kToyLenMax);
  std::uniform_int_distribution<int> letter(first, sentinel0 - 1);
  std::uniform_int_distribution<int> sentinel(sentinel0,
                                              sentinel0 + static_cast<int>(kToySentinels) - 1);
  std::vector<Pair> pairs(count);
  for (auto& p : pairs) {
    const std::size_t n = len_dist(rng);
    p.src.push_back(sentinel(rng));
    for (std::size_t i = 1; i < n; ++i) p.src.push_back(letter(rng));
    p.tgt.push_back(kBosId);
    for (std::size_t i = 1; i < n; ++i) p.tgt.push_back(cipher[static_cast<std::size_t>(p.src[i])]);
    p.tgt.push_back(cipher[static_cast<std::size_t>(p.src[0])]);
    p.tgt.push_back(kEosId);
  }
  auto symbols = alphabet_symbols(kToyAlphabet, "");
  for (auto& s : alphabet_symbols(kToySentinels, "S")) symbols.push_back(s);
  return distribute("toy-translation", Vocab(symbols), std::move(pairs));
}

TaskData char_lm_ingest(const std::string& path, std::size_t max_chars) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read corpus " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  auto chars = utf8_chars(buf.str());
  if (max_chars > 0 && chars.size() > max_chars) chars.resize(max_chars);
  if (chars.empty()) throw ConfigError("corpus " + path + " is empty");

  std::vector<std::string> distinct = chars;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  TaskData t;
  t.name = "char-lm";
  t.vocab = Vocab(distinct);

  std::vector<int> ids;
  ids.reserve(chars.size());
  for (const auto& c : chars) ids.push_back(t.vocab.id(c));
  const std::size_t a = ids.size() * 90 / 100;
  const std::size_t b = a + ids.size() * 5 / 100;
  auto slice = [&](Split s, std::size_t from, std::size_t to) {
    Dataset d;
    d.kind = DatasetKind::kLmStream;
    d.split = s;
    d.vocab_size = t.vocab.size();
    d.stream.assign(ids.begin() + static_cast<std::ptrdiff_t>(from),
                    ids.begin() + static_cast<std::ptrdiff_t>(to));
    d.stream_offset = from;
    return d;
  };
  t.train = slice(Split::kTrain, 0, a);
  t.valid = slice(Split::kValid, a, b);
  t.test = slice(Split::kTest, b, ids.size());
  return t;
}

std::size_t Batch::target_tokens() const {
  return static_cast<std::size_t>(
      std::count_if(targets.begin(), targets.end(), [](int t) { return t != kPadId; }));
}

std::vector<Batch> make_batches(const Dataset& data, std::size_t batch_size, std::size_t max_len,
                                std::uint64_t seed, std::uint64_t epoch, bool shuffle) {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::vector<Batch> batches;

  if (data.kind == DatasetKind::kLmStream) {
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + 1 < data.stream.size(); s += max_len) starts.push_back(s);
    if (shuffle) std::shuffle(starts.begin(), starts.end(), rng);
    for (std::size_t b0 = 0; b0 < starts.size(); b0 += batch_size) {
      const std::size_t nb = std::min(batch_size, starts.size() - b0);
      std::vector<std::vector<int>> rows;
      Batch batch;
      for (std::size_t k = 0; k < nb; ++k) {
        const std::size_t s = starts[b0 + k];
        const std::size_t n = std::min(max_len, data.stream.size() - 1 - s);
        rows.emplace_back(data.stream.begin() + static_cast<std::ptrdiff_t>(s),
                          data.stream.begin() + static_cast<std::ptrdiff_t>(s + n));
        batch.examples.push_back(s);
      }
      batch.input = TokenBatch::from_rows(rows);
      batch.targets.assign(batch.input.batch * batch.input.len, kPadId);
      for (std::size_t k = 0; k < nb; ++k) {
        const std::size_t s = batch.examples[k];
        for (std::size_t i = 0; i < rows[k].size(); ++i) {
          batch.targets[k * batch.input.len + i] = data.stream[s + 1 + i];
        }
      }
      batches.push_back(std::move(batch));
    }
    return batches;
  }

  // Pairs: shuffle, stable-sort by source length so equal lengths share
  // batches, then shuffle the batch order.
  std::vector<std::size_t> order(data.pairs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i : order) {
    const auto& p = data.pairs[i];
    if (p.src.size() > max_len || p.tgt.size() - 1 > max_len) {
      throw ShapeError("example " + std::to_string(i) + " exceeds max_len " +
                       std::to_string(max_len));
    }
  }
  if (shuffle) std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return data.pairs[a].src.size() < data.pairs[b].src.size();
  });
  for (std::size_t b0 = 0; b0 < order.size(); b0 += batch_size) {
    const std::size_t nb = std::min(batch_size, order.size() - b0);
    std::vector<std::vector<int>> src, tin;
    Batch batch;
    for (std::size_t k = 0; k < nb; ++k) {
      const auto& p = data.pairs[order[b0 + k]];
      src.push_back(p.src);
      tin.emplace_back(p.tgt.begin(), p.tgt.end() - 1);
      batch.examples.push_back(order[b0 + k]);
    }
    batch.src = TokenBatch::from_rows(src);
    batch.input = TokenBatch::from_rows(tin);
    batch.targets.assign(batch.input.batch * batch.input.len, kPadId);
    for (std::size_t k = 0; k < nb; ++k) {
      const auto& tgt = data.pairs[batch.examples[k]].tgt;
      for (std::size_t i = 0; i + 1 < tgt.size(); ++i) {
        batch.targets[k * batch.input.len + i] = tgt[i + 1];
      }
    }
    batches.push_back(std::move(batch));
  }
  if (shuffle) std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

std::string export_text(const Dataset& data, const Vocab& vocab) {
  std::ostringstream out;
  auto tokens = [&](const std::vector<int>& ids) {
    for (std::size_t i = 0; i < ids.size(); ++i) out << (i ? " " : "") << vocab.symbol(ids[i]);
  };
  if (data.kind == DatasetKind::kLmStream) {
    tokens(data.stream);
    out << "\n";
  } else {
    for (const auto& p : data.pairs) {
      tokens(p.src);
      out << "\t";
      tokens(p.tgt);
      out << "\n";
    }
  }
  return out.str();
}

}  // namespace attnprune
