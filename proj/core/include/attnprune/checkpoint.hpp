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

#include <string>

#include "attnprune/model.hpp"

namespace attnprune {

// Writes `path` (JSON metadata: config, seed, step, per-weight name, shape,
// offset and CRC-32) and a sibling payload of little-endian doubles. The
// payload file name replaces a trailing ".json" with ".bin", or appends ".bin".
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

// Throws FormatError on version mismatch, truncation or checksum failure and
// IncompatibleError when a weight disagrees with the shape its config implies.
Checkpoint load_checkpoint(const std::string& path);

std::string checkpoint_payload_path(const std::string& path);

}  // namespace attnprune
