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

#include "attnprune/stats.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "attnprune/error.hpp"

namespace attnprune {

namespace {
constexpr int kStatsSchemaVersion = 1;
}

std::string to_string(const HeadKey& key) {
  return std::string(to_string(key.kind)) + "/" + std::to_string(key.layer) + "/" +
         std::to_string(key.head);
}

AttentionStats::AttentionStats(std::span<const HeadLayout> layout) {
  for (const HeadLayout& h : layout) {
    Head head;
    head.rows = h.rows;
    head.cols = h.cols;
    head.sum.assign(h.rows * h.cols, 0.0);
    head.count.assign(h.rows * h.cols, 0);
    if (!heads_.emplace(h.key, std::move(head)).second) {
      throw ConfigError("duplicate head key " + to_string(h.key));
    }
  }
}

const AttentionStats::Head& AttentionStats::head(const HeadKey& key) const {
  auto it = heads_.find(key);
  if (it == heads_.end()) throw ShapeError("no statistics for head " + to_string(key));
  return it->second;
}

AttentionStats::Head& AttentionStats::mutable_head(const HeadKey& key) {
  auto it = heads_.find(key);
  if (it == heads_.end()) throw ShapeError("no statistics for head " + to_string(key));
  return it->second;
}

std::vector<HeadLayout> AttentionStats::layout() const {
  std::vector<HeadLayout> out;
  for (const auto& [key, h] : heads_) out.push_back({key, h.rows, h.cols});
  return out;
}

void AttentionStats::accumulate(const HeadKey& key, const Tensor& weights,
                                std::span<const bool> query_valid,
                                std::span<const bool> key_valid, bool causal) {
  if (weights.rank() != 2) throw ShapeError("accumulate expects an n x m weight matrix");
  const std::size_t n = weights.dim(0), m = weights.dim(1);
  if (query_valid.size() != n || key_valid.size() != m) {
    throw ShapeError("accumulate: validity vectors do not match weight shape");
  }
  Head& h = mutable_head(key);
  if (n > h.rows || m > h.cols) {
    throw ShapeError("accumulate: " + std::to_string(n) + "x" + std::to_string(m) +
                     " weights overflow " + std::to_string(h.rows) + "x" +
                     std::to_string(h.cols) + " statistics for " + to_string(key));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!query_valid[i]) continue;
    for (std::size_t j = 0; j < m; ++j) {
      if (!key_valid[j] || (causal && j > i)) continue;
      h.sum[i * h.cols + j] += weights[i * m + j];
      h.count[i * h.cols + j] += 1;
    }
  }
}

void AttentionStats::accumulate(const AttentionEvent& ev) {
  Head& h = mutable_head({ev.kind, ev.layer, ev.head});
  if (ev.q_len > h.rows || ev.k_len > h.cols) {
    throw ShapeError("accumulate: " + std::to_string(ev.q_len) + "x" +
                     std::to_string(ev.k_len) + " weights overflow statistics for " +
                     to_string(HeadKey{ev.kind, ev.layer, ev.head}));
  }
  for (std::size_t i = 0; i < ev.q_len; ++i) {
    const std::size_t width = ev.causal ? std::min(ev.k_len, i + 1) : ev.k_len;
    const double* src = ev.weights.data() + i * ev.cols;
    double* sum = h.sum.data() + i * h.cols;
    std::uint64_t* cnt = h.count.data() + i * h.cols;
    for (std::size_t j = 0; j < width; ++j) {
      sum[j] += src[j];
      cnt[j] += 1;
    }
  }
}

AttentionStats merge(const AttentionStats& a, const AttentionStats& b) {
  if (a.heads_.size() != b.heads_.size()) {
    throw ShapeError("merge: statistics cover different heads");
  }
  AttentionStats out = a;
  out.examples_seen_ += b.examples_seen_;
  for (auto& [key, hr] : out.heads_) {
    auto it = b.heads_.find(key);
    if (it == b.heads_.end() || it->second.rows != hr.rows || it->second.cols != hr.cols) {
      throw ShapeError("merge: head layout mismatch at " + to_string(key));
    }
    const auto& hb = it->second;
    for (std::size_t i = 0; i < hr.sum.size(); ++i) {
      hr.sum[i] += hb.sum[i];
      hr.count[i] += hb.count[i];
    }
  }
  return out;
}

std::size_t AverageAttention::num_layers(AttentionKind kind) const {
  std::size_t n = 0;
  for (const auto& [key, h] : heads) {
    if (key.kind == kind) n = std::max(n, key.layer + 1);
  }
  return n;
}

std::size_t AverageAttention::num_heads(AttentionKind kind, std::size_t layer) const {
  std::size_t n = 0;
  for (const auto& [key, h] : heads) {
    if (key.kind == kind && key.layer == layer) n = std::max(n, key.head + 1);
  }
  return n;
}

AverageAttention average(const AttentionStats& stats) {
  if (stats.examples_seen() == 0) throw Error("average: statistics are empty");
  AverageAttention out;
  out.examples = stats.examples_seen();
  for (const auto& [key, h] : stats.heads()) {
    HeadAverage avg;
    avg.rows = h.rows;
    avg.cols = h.cols;
    avg.mean.assign(h.sum.size(), 0.0);
    avg.visited.assign(h.sum.size(), 0);
    for (std::size_t i = 0; i < h.sum.size(); ++i) {
      if (h.count[i] > 0) {
        avg.mean[i] = h.sum[i] / static_cast<double>(h.count[i]);
        avg.visited[i] = 1;
      }
    }
    out.heads.emplace(key, std::move(avg));
  }
  return out;
}

std::string stats_to_json(const AttentionStats& stats) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = kStatsSchemaVersion;
  doc["examples_seen"] = stats.examples_seen();
  nlohmann::ordered_json heads = nlohmann::ordered_json::array();
  for (const auto& [key, h] : stats.heads()) {
    nlohmann::ordered_json e;
    e["kind"] = std::string(to_string(key.kind));
    e["layer"] = key.layer;
    e["head"] = key.head;
    e["rows"] = h.rows;
    e["cols"] = h.cols;
    e["sum"] = h.sum;
    e["count"] = h.count;
    heads.push_back(std::move(e));
  }
  doc["heads"] = std::move(heads);
  return doc.dump() + "\n";
}

AttentionStats stats_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("stats file is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("schema_version").get<int>() != kStatsSchemaVersion) {
      throw FormatError("unsupported stats schema version");
    }
    std::vector<HeadLayout> layout;
    for (const auto& e : doc.at("heads")) {
      layout.push_back({{parse_kind(e.at("kind").get<std::string>()),
                         e.at("layer").get<std::size_t>(), e.at("head").get<std::size_t>()},
                        e.at("rows").get<std::size_t>(),
                        e.at("cols").get<std::size_t>()});
    }
    AttentionStats stats(layout);
    stats.add_examples(doc.at("examples_seen").get<std::uint64_t>());
    std::size_t idx = 0;
    for (const auto& e : doc.at("heads")) {
      auto& h = stats.heads_.at(layout[idx++].key);
      auto sum = e.at("sum").get<std::vector<double>>();
      auto count = e.at("count").get<std::vector<std::uint64_t>>();
      if (sum.size() != h.sum.size() || count.size() != h.count.size()) {
        throw FormatError("stats file: matrix size disagrees with rows x cols");
      }
      h.sum = std::move(sum);
      h.count = std::move(count);
    }
    return stats;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed stats file: ") + e.what());
  }
}

void save_stats(const AttentionStats& stats, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << stats_to_json(stats);
  if (!out) throw Error("failed writing " + path);
}

AttentionStats load_stats(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return stats_from_json(buf.str());
}

}  // namespace attnprune
