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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "attnprune/data.hpp"
#include "attnprune/error.hpp"

using namespace attnprune;

namespace {

const std::string kData = ATTNPRUNE_TEST_DATA;

std::vector<int> strip(const std::vector<int>& tgt) { return {tgt.begin() + 1, tgt.end() - 1}; }

}  // namespace

TEST_CASE("vocab") {
  const Vocab v({"x", "y"});
  CHECK(v.size() == 6);
  CHECK(v.symbol(kPadId) == "<pad>");
  CHECK(v.symbol(kEosId) == "<eos>");
  CHECK(v.id("y") == 5);
  CHECK(v.id("zzz") == kUnkId);
  CHECK_THROWS_AS(v.symbol(6), DomainError);
  CHECK(utf8_chars("aé€") == std::vector<std::string>{"a", "é", "€"});
  const Vocab c({"a", "é"});
  CHECK(c.decode_chars(c.encode_chars("éaa")) == "éaa");
  CHECK(c.encode_chars("q")[0] == kUnkId);
}

TEST_CASE("copy task") {
  const TaskData a = gen_copy(1000, 3, 10, 10, 5), b = gen_copy(1000, 3, 10, 10, 5);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK_FALSE(a.train == gen_copy(1000, 3, 10, 10, 6).train);
  CHECK(a.train.pairs.size() == 800);
  CHECK(a.valid.pairs.size() == 100);
  CHECK(a.test.pairs.size() == 100);
  CHECK(a.vocab.size() == 14);
  for (const Dataset* d : {&a.train, &a.valid, &a.test}) {
    for (const Pair& p : d->pairs) {
      CHECK(p.tgt.size() == p.src.size() + 2);
      CHECK(p.tgt.front() == kBosId);
      CHECK(p.tgt.back() == kEosId);
      CHECK(strip(p.tgt) == p.src);
      CHECK(p.src.size() >= 3);
      CHECK(p.src.size() <= 10);
    }
  }
  std::set<std::size_t> seen;
  for (const Dataset* d : {&a.train, &a.valid, &a.test}) {
    for (std::size_t i : d->indices) CHECK(seen.insert(i).second);
  }
  CHECK(seen.size() == 1000);
  CHECK_THROWS(gen_copy(10, 0, 3, 5, 1));
  CHECK_THROWS(gen_copy(10, 2, 3, 1, 1));
}

TEST_CASE("copy symbols are uniform") {
  const TaskData t = gen_copy(10000, 5, 5, 10, 11);
  std::vector<double> counts(t.vocab.size(), 0);
  double total = 0;
  for (const Dataset* d : {&t.train, &t.valid, &t.test}) {
    for (const Pair& p : d->pairs) {
      for (int s : p.src) {
        counts[s] += 1;
        total += 1;
      }
    }
  }
  const double expect = total / 10, sigma = std::sqrt(total * 0.1 * 0.9);
  for (int s = kNumReserved; s < kNumReserved + 10; ++s) CHECK(std::abs(counts[s] - expect) < 3 * sigma);
}

TEST_CASE("reverse task") {
  const TaskData r = gen_reverse(200, 3, 8, 6, 2);
  for (const Pair& p : r.train.pairs) {
    std::vector<int> back = strip(p.tgt);
    std::reverse(back.begin(), back.end());
    CHECK(back == p.src);
  }
  CHECK(r.train == gen_reverse(200, 3, 8, 6, 2).train);
}

TEST_CASE("toy translation") {
  const TaskData t = gen_toy_translation(2000, 4);
  const std::vector<int> cipher = toy_cipher(4);
  std::set<int> images;
  for (int id = kNumReserved; id < static_cast<int>(t.vocab.size()); ++id) images.insert(cipher[id]);
  CHECK(images.size() == t.vocab.size() - kNumReserved);
  std::vector<std::vector<double>> last(t.vocab.size(), std::vector<double>(t.vocab.size(), 0));
  std::size_t n = 0;
  for (const Pair& p : t.train.pairs) {
    CHECK(p.src.size() >= kToyLenMin);
    CHECK(p.src.size() <= kToyLenMax);
    const std::vector<int> body = strip(p.tgt);
    REQUIRE(body.size() == p.src.size());
    for (std::size_t i = 1; i < p.src.size(); ++i) CHECK(body[i - 1] == cipher[p.src[i]]);
    CHECK(body.back() == cipher[p.src[0]]);
    ++n;
  }
  // Best unigram guess for the final token, fitted and scored on the same
  // data, stays near chance over the sentinel set.
  std::map<int, std::size_t> finals;
  for (const Pair& p : t.train.pairs) ++finals[strip(p.tgt).back()];
  std::size_t best = 0;
  for (const auto& [tok, c] : finals) best = std::max(best, c);
  CHECK(finals.size() == kToySentinels);
  const double chance = 1.0 / kToySentinels;
  CHECK(static_cast<double>(best) / n < chance + 3 * std::sqrt(chance * (1 - chance) / n));
}

TEST_CASE("char lm ingest") {
  const TaskData t = char_lm_ingest(kData + "/abcab.txt", 0);
  CHECK(t.vocab.size() == 7);
  const TaskData again = char_lm_ingest(kData + "/abcab.txt", 0);
  CHECK(again.vocab == t.vocab);
  const TaskData full = char_lm_ingest(kData + "/licenses.txt", 0);
  const TaskData part = char_lm_ingest(kData + "/licenses.txt", 20000);
  const std::size_t total = full.train.stream.size() + full.valid.stream.size() + full.test.stream.size();
  CHECK(std::abs(static_cast<double>(full.train.stream.size()) / total - 0.9) < 1e-3);
  CHECK(full.valid.stream_offset == full.train.stream.size());
  std::vector<int> joined = part.train.stream;
  joined.insert(joined.end(), part.valid.stream.begin(), part.valid.stream.end());
  joined.insert(joined.end(), part.test.stream.begin(), part.test.stream.end());
  CHECK(joined.size() == 20000);
  for (std::size_t i = 0; i < joined.size(); ++i) {
    if (part.vocab.symbol(joined[i]) != full.vocab.symbol(full.train.stream[i])) {
      FAIL("prefix mismatch at " << i);
      break;
    }
  }
  const auto empty = std::filesystem::temp_directory_path() / "attnprune_empty.txt";
  std::ofstream(empty).close();
  CHECK_THROWS_AS(char_lm_ingest(empty.string(), 0), ConfigError);
  CHECK_THROWS_AS(char_lm_ingest("/nonexistent/file.txt", 0), ConfigError);
  std::filesystem::remove(empty);
}

TEST_CASE("pair batches") {
  const TaskData t = gen_copy(300, 2, 9, 8, 3);
  const auto batches = make_batches(t.train, 16, 16, 7);
  std::set<std::size_t> covered;
  for (const Batch& b : batches) {
    CHECK(b.src.batch <= 16);
    for (std::size_t r = 0; r < b.src.batch; ++r) {
      const Pair& p = t.train.pairs[b.examples[r]];
      CHECK(covered.insert(b.examples[r]).second);
      for (std::size_t i = 0; i < b.src.len; ++i) {
        CHECK(b.src.valid(r, i) == (i < p.src.size()));
        if (!b.src.valid(r, i)) CHECK(b.src.at(r, i) == kPadId);
      }
      // Teacher forcing: input is tgt without eos, targets are tgt without bos.
      for (std::size_t i = 0; i < b.input.len; ++i) {
        if (i + 1 < p.tgt.size()) {
          CHECK(b.input.at(r, i) == p.tgt[i]);
          CHECK(b.targets[r * b.input.len + i] == p.tgt[i + 1]);
        } else {
          CHECK(b.targets[r * b.input.len + i] == kPadId);
        }
      }
    }
  }
  CHECK(covered.size() == t.train.pairs.size());
  CHECK_THROWS_AS(make_batches(t.train, 16, 4, 7), ShapeError);
}

TEST_CASE("equal-length pairs need no padding") {
  const TaskData t = gen_copy(100, 5, 5, 8, 3);
  for (const Batch& b : make_batches(t.train, 8, 8, 1)) {
    for (std::size_t r = 0; r < b.src.batch; ++r) CHECK(b.src.lengths[r] == b.src.len);
  }
}

TEST_CASE("epoch shuffles are reproducible") {
  const TaskData t = gen_copy(300, 2, 9, 8, 3);
  auto order = [&](std::uint64_t seed, std::uint64_t epoch) {
    std::vector<std::size_t> o;
    for (const Batch& b : make_batches(t.train, 16, 16, seed, epoch)) o.insert(o.end(), b.examples.begin(), b.examples.end());
    return o;
  };
  CHECK(order(1, 0) == order(1, 0));
  CHECK(order(1, 0) != order(1, 1));
  CHECK(order(1, 1) == order(1, 1));
  const auto fixed = make_batches(t.train, 16, 16, 0, 0, false);
  std::size_t prev_len = 0;
  for (const Batch& b : fixed) {
    for (std::size_t i : b.examples) {
      CHECK(t.train.pairs[i].src.size() >= prev_len);
      prev_len = t.train.pairs[i].src.size();
    }
  }
}

TEST_CASE("lm batches") {
  const TaskData t = char_lm_ingest(kData + "/licenses.txt", 1000);
  const auto batches = make_batches(t.train, 4, 64, 0, 0, false);
  std::size_t predicted = 0;
  for (const Batch& b : batches) {
    for (std::size_t r = 0; r < b.input.batch; ++r) {
      const std::size_t start = b.examples[r];
      CHECK(start % 64 == 0);
      for (std::size_t i = 0; i < b.input.lengths[r]; ++i) {
        CHECK(b.input.at(r, i) == t.train.stream[start + i]);
        CHECK(b.targets[r * b.input.len + i] == t.train.stream[start + i + 1]);
        ++predicted;
      }
    }
  }
  CHECK(predicted == t.train.stream.size() - 1);
}

TEST_CASE("export") {
  const TaskData t = gen_copy(10, 2, 2, 3, 1);
  const std::string text = export_text(t.train, t.vocab);
  CHECK(std::count(text.begin(), text.end(), '\n') == 8);
  CHECK(text.find('\t') != std::string::npos);
}
