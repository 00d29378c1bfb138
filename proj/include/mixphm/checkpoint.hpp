// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mixphm/matrix.hpp"
#include "mixphm/parameter.hpp"

namespace mixphm {

// Binary tensor container. Layout: magic "MXPH", format version u32, then
// per-tensor records (name length u32 + UTF-8 name, rows u64, cols u64,
// little-endian f64 payload). Round-trips are bit-exact.
inline constexpr char kCheckpointMagic[4] = {'M', 'X', 'P', 'H'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Matrix tensor;
};

void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::string& path);

void save_parameters(const std::string& path, const std::vector<ParamPtr>& params);
// Strict restore: every parameter must be present with matching shape.
void load_parameters(const std::string& path, const std::vector<ParamPtr>& params);

}  // namespace mixphm
