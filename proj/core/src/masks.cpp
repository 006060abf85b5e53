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

#include "attnprune/masks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "attnprune/error.hpp"

namespace attnprune {

namespace {

constexpr int kMaskSchemaVersion = 1;
constexpr double kBandBelow = 5.0;
constexpr double kBandAbove = 1.0;
const double kUnvisited = std::numeric_limits<double>::quiet_NaN();

std::vector<AttentionKind> normalized_kinds(std::vector<AttentionKind> kinds) {
  std::sort(kinds.begin(), kinds.end());
  kinds.erase(std::unique(kinds.begin(), kinds.end()), kinds.end());
  return kinds;
}

HeadMask empty_head(const HeadAverage& h) {
  HeadMask m;
  m.rows = h.rows;
  m.cols = h.cols;
  m.pruned.assign(h.rows * h.cols, 0);
  m.rowkeep.assign(h.rows * h.cols, 0);
  m.scores.resize(h.rows * h.cols);
  for (std::size_t i = 0; i < m.scores.size(); ++i) {
    m.scores[i] = h.visited[i] ? h.mean[i] : kUnvisited;
  }
  return m;
}

// Restores the highest-score visited entry of every visited row that has no
// unpruned visited entry left.
void apply_rowkeep(HeadMask& m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    bool any_visited = false, open = false;
    std::size_t best = m.cols;
    for (std::size_t j = 0; j < m.cols; ++j) {
      if (!m.is_visited(i, j)) continue;
      any_visited = true;
      if (!m.is_pruned(i, j)) open = true;
      if (best == m.cols || m.score(i, j) > m.score(i, best)) best = j;
    }
    if (any_visited && !open) {
      m.pruned[i * m.cols + best] = 0;
      m.rowkeep[i * m.cols + best] = 1;
    }
  }
}

std::vector<double> layer_pool(const AverageAttention& avg, AttentionKind kind,
                               std::size_t layer) {
  std::vector<double> pool;
  for (const auto& [key, h] : avg.heads) {
    if (key.kind != kind || key.layer != layer) continue;
    for (std::size_t i = 0; i < h.mean.size(); ++i) {
      if (h.visited[i]) pool.push_back(h.mean[i]);
    }
  }
  return pool;
}

std::size_t nearest_rank(double p, std::size_t pool_size) {
  const auto idx = static_cast<std::size_t>(std::floor(p * static_cast<double>(pool_size) / 100.0));
  return std::min(pool_size - 1, idx);
}

void finish_metadata(MaskSet& set) { set.meta.achieved_sparsity = mask_sparsity(set).overall; }

}  // namespace

void PruneSpec::validate() const {
  if (!(p >= 0.0 && p <= 100.0)) throw ConfigError("prune percentage must lie in [0, 100]");
}

bool HeadMask::is_visited(std::size_t i, std::size_t j) const {
  return !std::isnan(scores[i * cols + j]);
}

bool HeadMask::operator==(const HeadMask& other) const {
  if (rows != other.rows || cols != other.cols || pruned != other.pruned ||
      rowkeep != other.rowkeep || scores.size() != other.scores.size()) {
    return false;
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool a = std::isnan(scores[i]), b = std::isnan(other.scores[i]);
    if (a != b || (!a && scores[i] != other.scores[i])) return false;
  }
  return true;
}

bool MaskSet::covers(AttentionKind kind) const {
  return std::find(meta.kinds.begin(), meta.kinds.end(), kind) != meta.kinds.end();
}

const HeadMask* MaskSet::find(const HeadKey& key) const {
  auto it = heads.find(key);
  return it == heads.end() ? nullptr : &it->second;
}

std::size_t MaskSet::pruned_count() const {
  std::size_t n = 0;
  for (const auto& [key, h] : heads) n += static_cast<std::size_t>(std::count(h.pruned.begin(), h.pruned.end(), 1));
  return n;
}

double layer_threshold(const AverageAttention& avg, AttentionKind kind, std::size_t layer,
                       double p) {
  if (!(p >= 0.0 && p <= 100.0)) throw ConfigError("prune percentage must lie in [0, 100]");
  std::vector<double> pool = layer_pool(avg, kind, layer);
  if (pool.empty()) {
    throw Error("layer_threshold: no visited entries for " + std::string(to_string(kind)) +
                " layer " + std::to_string(layer));
  }
  std::sort(pool.begin(), pool.end());
  return pool[nearest_rank(p, pool.size())];
}

MaskSet build_masks(const AverageAttention& avg, const PruneSpec& spec) {
  spec.validate();
  MaskSet set;
  set.meta.p = spec.p;
  set.meta.kinds = normalized_kinds(spec.kinds);
  set.meta.baseline = "ap";

  for (AttentionKind kind : set.meta.kinds) {
    const std::size_t layers = avg.num_layers(kind);
    if (layers == 0) {
      throw IncompatibleError("build_masks: no average attention for kind " +
                              std::string(to_string(kind)));
    }
    for (std::size_t l = 0; l < layers; ++l) {
      const double tau = layer_threshold(avg, kind, l, spec.p);
      set.meta.thresholds.push_back({kind, l, tau});
      const std::size_t heads = avg.num_heads(kind, l);
      std::size_t pool_size = 0, candidates = 0;
      for (std::size_t h = 0; h < heads; ++h) {
        const HeadKey key{kind, l, h};
        auto it = avg.heads.find(key);
        if (it == avg.heads.end()) throw IncompatibleError("build_masks: missing head " + to_string(key));
        HeadMask m = empty_head(it->second);
        if (spec.p > 0.0) {
          for (std::size_t e = 0; e < m.pruned.size(); ++e) {
            const bool visited = it->second.visited[e] != 0;
            if (!visited || it->second.mean[e] < tau) m.pruned[e] = 1;
            if (visited) {
              ++pool_size;
              if (it->second.mean[e] < tau) ++candidates;
            }
          }
        } else {
          for (std::uint8_t v : it->second.visited) pool_size += v;
        }
        set.heads.emplace(key, std::move(m));
      }

      if (spec.p > 0.0 && pool_size > 0) {
        // Ties at tau can leave the strict rule far short of the target; complete
        // with tied entries in (head, row, column) order up to the nearest rank.
        const std::size_t target = nearest_rank(spec.p, pool_size);
        const double shortfall_floor = spec.p - kBandBelow;
        if (100.0 * static_cast<double>(candidates) / static_cast<double>(pool_size) <
            shortfall_floor) {
          for (std::size_t h = 0; h < heads && candidates < target; ++h) {
            HeadMask& m = set.heads.at({kind, l, h});
            for (std::size_t e = 0; e < m.pruned.size() && candidates < target; ++e) {
              if (!std::isnan(m.scores[e]) && !m.pruned[e] && m.scores[e] == tau) {
                m.pruned[e] = 1;
                ++candidates;
              }
            }
          }
        }
        const double achieved = 100.0 * static_cast<double>(candidates) / static_cast<double>(pool_size);
        const double granularity = 100.0 / static_cast<double>(pool_size);
        if (achieved < spec.p - kBandBelow - granularity || achieved > spec.p + kBandAbove) {
          throw MaskError("build_masks: " + std::string(to_string(kind)) + " layer " +
                          std::to_string(l) + " reaches " + std::to_string(achieved) +
                          "% before row-keep (target " + std::to_string(spec.p) +
                          "%, tau " + std::to_string(tau) + ", " +
                          std::to_string(pool_size) + " visited entries)");
        }
      }
      for (std::size_t h = 0; h < heads; ++h) apply_rowkeep(set.heads.at({kind, l, h}));
    }
  }
  finish_metadata(set);
  return set;
}

namespace {

MaskSet random_from_layout(const std::map<HeadKey, HeadMask>& layout, double p,
                           std::uint64_t seed, const std::vector<AttentionKind>& kinds) {
  if (!(p >= 0.0 && p <= 100.0)) throw ConfigError("prune percentage must lie in [0, 100]");
  MaskSet set;
  set.meta.p = p;
  set.meta.kinds = kinds;
  set.meta.seed = seed;
  set.meta.baseline = "random";
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const auto& [key, shape] : layout) {
    if (std::find(kinds.begin(), kinds.end(), key.kind) == kinds.end()) continue;
    HeadMask m;
    m.rows = shape.rows;
    m.cols = shape.cols;
    m.pruned.assign(m.rows * m.cols, 0);
    m.rowkeep.assign(m.rows * m.cols, 0);
    m.scores.assign(m.rows * m.cols, kUnvisited);
    std::vector<std::size_t> visited;
    for (std::size_t e = 0; e < m.scores.size(); ++e) {
      if (!std::isnan(shape.scores[e])) {
        visited.push_back(e);
        m.scores[e] = unit(rng);
      } else if (p > 0.0) {
        m.pruned[e] = 1;
      }
    }
    const auto k = static_cast<std::size_t>(
        std::llround(p / 100.0 * static_cast<double>(visited.size())));
    // Partial Fisher-Yates: the first k positions become the pruned sample.
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, visited.size() - 1);
      std::swap(visited[i], visited[pick(rng)]);
      m.pruned[visited[i]] = 1;
    }
    apply_rowkeep(m);
    set.heads.emplace(key, std::move(m));
  }
  finish_metadata(set);
  return set;
}

}  // namespace

MaskSet random_masks(const AverageAttention& shape_like, double p, std::uint64_t seed,
                     std::vector<AttentionKind> kinds) {
  std::map<HeadKey, HeadMask> layout;
  std::set<AttentionKind> present;
  for (const auto& [key, h] : shape_like.heads) {
    layout.emplace(key, empty_head(h));
    present.insert(key.kind);
  }
  if (kinds.empty()) kinds.assign(present.begin(), present.end());
  return random_from_layout(layout, p, seed, normalized_kinds(std::move(kinds)));
}

MaskSet random_masks(const MaskSet& shape_like, double p, std::uint64_t seed) {
  MaskSet set = random_from_layout(shape_like.heads, p, seed, shape_like.meta.kinds);
  set.meta.source_dataset = shape_like.meta.source_dataset;
  return set;
}

AdditiveMask slice_additive(const MaskSet& masks, const HeadKey& key, std::size_t n,
                            std::size_t m, double neg_fill, bool causal) {
  const HeadMask* head = masks.find(key);
  if (!head) throw IncompatibleError("mask set has no head " + to_string(key));
  if (n > head->rows || m > head->cols) {
    throw ShapeError("mask for " + to_string(key) + " is " + std::to_string(head->rows) + "x" +
                     std::to_string(head->cols) + ", smaller than requested " +
                     std::to_string(n) + "x" + std::to_string(m));
  }
  AdditiveMask out(n, m, neg_fill);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t width = causal ? std::min(m, i + 1) : m;
    bool open = false;
    for (std::size_t j = 0; j < m; ++j) {
      const bool pruned = head->is_pruned(i, j);
      out.set_masked(i, j, pruned);
      if (!pruned && j < width) open = true;
    }
    if (open || width == 0) continue;
    std::size_t best = width;
    for (std::size_t j = 0; j < width; ++j) {
      if (!head->is_visited(i, j)) continue;
      if (best == width || head->score(i, j) > head->score(i, best)) best = j;
    }
    if (best == width) best = std::min(i, width - 1);
    out.set_masked(i, best, false);
  }
  return out;
}

SparsityReport mask_sparsity(const MaskSet& masks) {
  SparsityReport report;
  std::map<AttentionKind, std::pair<std::uint64_t, std::uint64_t>> kinds;
  std::map<std::pair<AttentionKind, std::size_t>, std::pair<std::uint64_t, std::uint64_t>> layers;
  for (const auto& [key, h] : masks.heads) {
    std::uint64_t pruned = 0, visited = 0;
    for (std::size_t e = 0; e < h.scores.size(); ++e) {
      if (std::isnan(h.scores[e])) continue;
      ++visited;
      if (h.pruned[e]) ++pruned;
    }
    kinds[key.kind].first += pruned;
    kinds[key.kind].second += visited;
    layers[{key.kind, key.layer}].first += pruned;
    layers[{key.kind, key.layer}].second += visited;
    report.pruned_visited += pruned;
    report.visited += visited;
  }
  auto frac = [](std::uint64_t a, std::uint64_t b) {
    return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0;
  };
  for (const auto& [k, v] : kinds) report.per_kind[k] = frac(v.first, v.second);
  for (const auto& [k, v] : layers) report.per_layer[k] = frac(v.first, v.second);
  report.overall = frac(report.pruned_visited, report.visited);
  return report;
}

void check_mask_compatibility(const MaskSet& masks, const std::vector<HeadLayout>& layout) {
  std::map<HeadKey, const HeadLayout*> index;
  for (const HeadLayout& h : layout) index.emplace(h.key, &h);
  for (const auto& [key, h] : masks.heads) {
    auto it = index.find(key);
    if (it == index.end()) {
      throw IncompatibleError("mask head " + to_string(key) + " does not exist in the model");
    }
    if (it->second->rows != h.rows || it->second->cols != h.cols) {
      throw IncompatibleError("mask head " + to_string(key) + " is " + std::to_string(h.rows) +
                              "x" + std::to_string(h.cols) + " but the model expects " +
                              std::to_string(it->second->rows) + "x" +
                              std::to_string(it->second->cols));
    }
  }
  for (const HeadLayout& h : layout) {
    if (masks.covers(h.key.kind) && !masks.find(h.key)) {
      throw IncompatibleError("mask set lacks model head " + to_string(h.key));
    }
  }
}

std::string masks_to_json(const MaskSet& masks) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = kMaskSchemaVersion;
  doc["p"] = masks.meta.p;
  nlohmann::ordered_json kinds = nlohmann::ordered_json::array();
  for (AttentionKind k : masks.meta.kinds) kinds.push_back(std::string(to_string(k)));
  doc["kinds"] = std::move(kinds);
  doc["source_dataset"] = masks.meta.source_dataset;
  doc["seed"] = masks.meta.seed;
  doc["baseline"] = masks.meta.baseline;
  doc["achieved_sparsity"] = masks.meta.achieved_sparsity;
  nlohmann::ordered_json thresholds = nlohmann::ordered_json::array();
  for (const LayerThreshold& t : masks.meta.thresholds) {
    thresholds.push_back({{"kind", std::string(to_string(t.kind))}, {"layer", t.layer}, {"tau", t.tau}});
  }
  doc["thresholds"] = std::move(thresholds);
  nlohmann::ordered_json heads = nlohmann::ordered_json::array();
  for (const auto& [key, h] : masks.heads) {
    nlohmann::ordered_json e;
    e["kind"] = std::string(to_string(key.kind));
    e["layer"] = key.layer;
    e["head"] = key.head;
    e["n_max"] = h.rows;
    e["m_max"] = h.cols;
    nlohmann::ordered_json pruned = nlohmann::ordered_json::array();
    nlohmann::ordered_json kept = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < h.rows; ++i) {
      for (std::size_t j = 0; j < h.cols; ++j) {
        if (h.is_pruned(i, j)) pruned.push_back({i, j});
        if (h.is_rowkeep(i, j)) kept.push_back({i, j});
      }
    }
    e["pruned_pairs"] = std::move(pruned);
    e["rowkeep_pairs"] = std::move(kept);
    nlohmann::ordered_json scores = nlohmann::ordered_json::array();
    for (double s : h.scores) {
      if (std::isnan(s)) {
        scores.push_back(nullptr);
      } else {
        scores.push_back(s);
      }
    }
    e["scores"] = std::move(scores);
    heads.push_back(std::move(e));
  }
  doc["heads"] = std::move(heads);
  return doc.dump() + "\n";
}

MaskSet masks_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("mask file is not valid JSON: ") + e.what());
  }
  try {
    const int version = doc.at("schema_version").get<int>();
    if (version != kMaskSchemaVersion) {
      throw FormatError("mask file schema version " + std::to_string(version) +
                        " is not supported (expected " + std::to_string(kMaskSchemaVersion) + ")");
    }
    MaskSet set;
    set.meta.p = doc.at("p").get<double>();
    for (const auto& k : doc.at("kinds")) set.meta.kinds.push_back(parse_kind(k.get<std::string>()));
    set.meta.source_dataset = doc.value("source_dataset", std::string());
    set.meta.seed = doc.value("seed", std::uint64_t{0});
    set.meta.baseline = doc.value("baseline", std::string("ap"));
    set.meta.achieved_sparsity = doc.value("achieved_sparsity", 0.0);
    for (const auto& t : doc.at("thresholds")) {
      set.meta.thresholds.push_back({parse_kind(t.at("kind").get<std::string>()),
                                     t.at("layer").get<std::size_t>(), t.at("tau").get<double>()});
    }
    for (const auto& e : doc.at("heads")) {
      HeadKey key{parse_kind(e.at("kind").get<std::string>()), e.at("layer").get<std::size_t>(),
                  e.at("head").get<std::size_t>()};
      HeadMask h;
      h.rows = e.at("n_max").get<std::size_t>();
      h.cols = e.at("m_max").get<std::size_t>();
      h.pruned.assign(h.rows * h.cols, 0);
      h.rowkeep.assign(h.rows * h.cols, 0);
      auto place = [&](const nlohmann::json& list, std::vector<std::uint8_t>& dst) {
        for (const auto& pair : list) {
          const auto i = pair.at(0).get<std::size_t>();
          const auto j = pair.at(1).get<std::size_t>();
          if (i >= h.rows || j >= h.cols) throw FormatError("mask pair out of range in " + to_string(key));
          dst[i * h.cols + j] = 1;
        }
      };
      place(e.at("pruned_pairs"), h.pruned);
      place(e.at("rowkeep_pairs"), h.rowkeep);
      if (e.contains("scores")) {
        const auto& scores = e.at("scores");
        if (scores.size() != h.rows * h.cols) throw FormatError("mask scores size mismatch in " + to_string(key));
        h.scores.reserve(scores.size());
        for (const auto& s : scores) h.scores.push_back(s.is_null() ? kUnvisited : s.get<double>());
      } else {
        h.scores.assign(h.rows * h.cols, 0.0);
      }
      set.heads.emplace(key, std::move(h));
    }
    return set;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed mask file: ") + e.what());
  }
}

void save_masks(const MaskSet& masks, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << masks_to_json(masks);
  if (!out) throw Error("failed writing " + path);
}

MaskSet load_masks(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return masks_from_json(buf.str());
}

const AdditiveMask* MaskSlicer::get(const HeadKey& key, std::size_t n, std::size_t m,
                                    bool causal) {
  if (!masks_ || !masks_->find(key)) return nullptr;
  auto cache_key = std::make_tuple(key, n, m, causal);
  auto it = cache_.find(cache_key);
  if (it == cache_.end()) {
    AdditiveMask mask = slice_additive(*masks_, key, n, m, neg_fill_, causal);
    std::optional<AdditiveMask> entry;
    if (mask.masked_count() > 0) entry = std::move(mask);
    it = cache_.emplace(cache_key, std::move(entry)).first;
  }
  return it->second ? &*it->second : nullptr;
}

}  // namespace attnprune
