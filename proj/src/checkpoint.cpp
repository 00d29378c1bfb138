// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mixphm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "mixphm/errors.hpp"

namespace mixphm {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
 public:
  Reader(std::string bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw IoError("checkpoint: truncated file " + path_);
    }
  }
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  for (const auto& [name, tensor] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u64(out, static_cast<std::uint64_t>(tensor.rows));
    put_u64(out, static_cast<std::uint64_t>(tensor.cols));
    for (double v : tensor.data) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("checkpoint: cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("checkpoint: write failed for " + path);
}

std::vector<NamedTensor> load_tensors(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: missing file " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path);

  const std::string magic = r.str(4);
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
    throw IoError("checkpoint: bad magic in " + path);
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint: unsupported format version " + std::to_string(version) + " in " +
                  path);
  }

  std::vector<NamedTensor> tensors;
  while (!r.done()) {
    const std::uint32_t name_len = r.u32();
    NamedTensor rec;
    rec.name = r.str(name_len);
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 24)) {
      throw IoError("checkpoint: implausible tensor shape in " + path);
    }
    rec.tensor = Matrix(static_cast<int>(rows), static_cast<int>(cols));
    for (auto& v : rec.tensor.data) v = r.f64();
    tensors.push_back(std::move(rec));
  }
  return tensors;
}

void save_parameters(const std::string& path, const std::vector<ParamPtr>& params) {
  std::vector<NamedTensor> tensors;
  tensors.reserve(params.size());
  for (const auto& p : params) tensors.push_back({p->name, p->value});
  save_tensors(path, tensors);
}

void load_parameters(const std::string& path, const std::vector<ParamPtr>& params) {
  const auto tensors = load_tensors(path);
  std::unordered_map<std::string, const Matrix*> by_name;
  for (const auto& rec : tensors) by_name[rec.name] = &rec.tensor;
  for (const auto& p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) {
      throw IoError("checkpoint: tensor '" + p->name + "' not found in " + path);
    }
    if (!it->second->same_shape(p->value)) {
      throw IoError("checkpoint: tensor '" + p->name + "' has shape " + it->second->shape_str() +
                    ", expected " + p->value.shape_str());
    }
    p->value = *it->second;
  }
}

}  // namespace mixphm
