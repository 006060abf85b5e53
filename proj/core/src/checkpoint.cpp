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

#include "attnprune/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "attnprune/error.hpp"
#include "json_io.hpp"

namespace attnprune {

namespace {

constexpr const char* kFormat = "attnprune-checkpoint";
constexpr int kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in host order, which must be little-endian");

std::uint32_t crc_of(const double* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(
      crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n * sizeof(double))));
}

}  // namespace

std::string checkpoint_payload_path(const std::string& path) {
  const std::string suffix = ".json";
  if (path.size() > suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0) {
    return path.substr(0, path.size() - suffix.size()) + ".bin";
  }
  return path + ".bin";
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::string payload_path = checkpoint_payload_path(path);
  nlohmann::ordered_json doc;
  doc["format"] = kFormat;
  doc["version"] = kVersion;
  doc["config"] = detail::config_to_json(ckpt.config);
  doc["seed"] = ckpt.seed;
  doc["step"] = ckpt.step;
  doc["payload"] = std::filesystem::path(payload_path).filename().string();
  nlohmann::ordered_json weights = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.weights) {
    weights.push_back({{"name", name},
                       {"shape", t.shape()},
                       {"offset", offset},
                       {"count", t.size()},
                       {"crc32", crc_of(t.data().data(), t.size())}});
    offset += t.size();
  }
  doc["payload_doubles"] = offset;
  doc["weights"] = std::move(weights);

  std::ofstream bin(payload_path, std::ios::binary | std::ios::trunc);
  if (!bin) throw Error("cannot write " + payload_path);
  for (const auto& [name, t] : ckpt.weights) {
    bin.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!bin) throw Error("failed writing " + payload_path);
  std::ofstream meta(path, std::ios::binary | std::ios::trunc);
  if (!meta) throw Error("cannot write " + path);
  meta << doc.dump(2) << "\n";
  if (!meta) throw Error("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream meta(path, std::ios::binary);
  if (!meta) throw Error("cannot read checkpoint " + path);
  std::ostringstream buf;
  buf << meta.rdbuf();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt checkpoint metadata " + path + ": " + e.what());
  }
  try {
    if (doc.at("format").get<std::string>() != kFormat) {
      throw FormatError(path + " is not a checkpoint file");
    }
    const int version = doc.at("version").get<int>();
    if (version != kVersion) {
      throw FormatError("checkpoint version " + std::to_string(version) + " is not supported");
    }
    Checkpoint ckpt;
    ckpt.config = detail::config_from_json(doc.at("config"));
    ckpt.config.validate();
    ckpt.seed = doc.at("seed").get<std::uint64_t>();
    ckpt.step = doc.at("step").get<std::uint64_t>();

    const std::string payload_path =
        (std::filesystem::path(path).parent_path() / doc.at("payload").get<std::string>()).string();
    std::ifstream bin(payload_path, std::ios::binary | std::ios::ate);
    if (!bin) throw FormatError("missing checkpoint payload " + payload_path);
    const auto bytes = static_cast<std::size_t>(bin.tellg());
    const auto expected = doc.at("payload_doubles").get<std::size_t>();
    if (bytes != expected * sizeof(double)) {
      throw FormatError("corrupt checkpoint payload " + payload_path + ": " +
                        std::to_string(bytes) + " bytes, expected " +
                        std::to_string(expected * sizeof(double)));
    }
    bin.seekg(0);
    std::vector<double> payload(expected);
    bin.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(bytes));
    if (!bin) throw FormatError("failed reading " + payload_path);

    const auto layout = weight_layout(ckpt.config);
    const auto& entries = doc.at("weights");
    if (entries.size() != layout.size()) {
      throw IncompatibleError("checkpoint holds " + std::to_string(entries.size()) +
                              " weights but its config implies " + std::to_string(layout.size()));
    }
    for (std::size_t w = 0; w < layout.size(); ++w) {
      const auto& e = entries[w];
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      if (name != layout[w].first || shape != layout[w].second) {
        throw IncompatibleError("checkpoint weight '" + name + "' " + shape_str(shape) +
                                " disagrees with config (expected '" + layout[w].first + "' " +
                                shape_str(layout[w].second) + ")");
      }
      const auto offset = e.at("offset").get<std::size_t>();
      const auto count = e.at("count").get<std::size_t>();
      if (count != shape_numel(shape) || offset + count > payload.size()) {
        throw FormatError("checkpoint weight '" + name + "' has an invalid payload range");
      }
      std::vector<double> data(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                               payload.begin() + static_cast<std::ptrdiff_t>(offset + count));
      if (crc_of(data.data(), data.size()) != e.at("crc32").get<std::uint32_t>()) {
        throw FormatError("checksum mismatch for checkpoint weight '" + name + "'");
      }
      ckpt.weights.emplace_back(name, Tensor(shape, std::move(data)));
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed checkpoint metadata " + path + ": " + e.what());
  }
}

}  // namespace attnprune
