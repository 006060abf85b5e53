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

// JSON mappings shared by the file formats. Not installed.

#include <json.hpp>

#include "attnprune/model.hpp"

namespace attnprune::detail {

inline nlohmann::ordered_json config_to_json(const TransformerConfig& c) {
  nlohmann::ordered_json j;
  j["arch"] = std::string(to_string(c.arch));
  j["n_layers"] = c.n_layers;
  j["d_model"] = c.attention.d_model;
  j["n_heads"] = c.attention.n_heads;
  j["d_k"] = c.attention.d_k;
  j["d_v"] = c.attention.d_v;
  j["activation"] = std::string(to_string(c.attention.activation));
  j["neg_fill"] = c.attention.neg_fill;
  j["d_ff"] = c.d_ff;
  j["vocab_size"] = c.vocab_size;
  j["max_src_len"] = c.max_src_len;
  j["max_tgt_len"] = c.max_tgt_len;
  j["tie_embeddings"] = c.tie_embeddings;
  return j;
}

inline TransformerConfig config_from_json(const nlohmann::json& j) {
  TransformerConfig c;
  c.arch = parse_architecture(j.value("arch", std::string("encdec")));
  c.n_layers = j.value("n_layers", std::size_t{1});
  const auto d = j.at("d_model").get<std::size_t>();
  const auto h = j.value("n_heads", std::size_t{1});
  c.attention = AttentionConfig::make(d, h, parse_activation(j.value("activation", std::string("softmax"))));
  c.attention.d_k = j.value("d_k", c.attention.d_k);
  c.attention.d_v = j.value("d_v", c.attention.d_v);
  c.attention.neg_fill = j.value("neg_fill", kDefaultNegFill);
  c.d_ff = j.value("d_ff", 4 * d);
  c.vocab_size = j.value("vocab_size", std::size_t{0});
  c.max_src_len = j.value("max_src_len", std::size_t{2});
  c.max_tgt_len = j.value("max_tgt_len", std::size_t{2});
  c.tie_embeddings = j.value("tie_embeddings", false);
  return c;
}

}  // namespace attnprune::detail
