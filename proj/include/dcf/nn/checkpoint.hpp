#pragma once

// Binary checkpoint: versioned header, little-endian 64-bit integers and
// IEEE-754 doubles, parameter table keyed by layer-qualified name.
//
//   "DCFCKPT\0" u32 version
//   spec: u64 input_side in_channels stem_channels stem_stride n_stages {u64 channels blocks}*
//   u64 step, u64 seed
//   u64 n_layers, u8 frozen[n_layers]
//   u64 n_params  { str name, u64 layer, u64 count, f64 value[count] m[count] v[count] }*
//   u64 n_buffers { str name, u64 layer, u64 count, f64 value[count] }*
// where str = u32 length + bytes.

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcf/nn/model.hpp"
#include "dcf/util.hpp"

namespace dcf::nn {

inline constexpr std::array<char, 8> kCheckpointMagic = {'D', 'C', 'F', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckpt_detail {

class Writer {
public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return bytes_; }

private:
  std::vector<char> bytes_;
};

class Reader {
public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    const char* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const char* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    const char* p = take(n);
    return std::string(p, n);
  }
  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint: truncated file");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace ckpt_detail

template <class T>
std::vector<char> serialize(const ModelState<T>& s) {
  ckpt_detail::Writer w;
  w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  w.u64(s.spec.input_side);
  w.u64(s.spec.in_channels);
  w.u64(s.spec.stem_channels);
  w.u64(s.spec.stem_stride);
  w.u64(s.spec.stages.size());
  for (const auto& st : s.spec.stages) {
    w.u64(st.channels);
    w.u64(st.blocks);
  }
  w.u64(s.step);
  w.u64(s.seed);
  w.u64(s.frozen.size());
  for (bool f : s.frozen) w.u8(f ? 1 : 0);
  w.u64(s.params.size());
  for (const auto& p : s.params) {
    w.str(p.name);
    w.u64(p.layer);
    w.u64(p.value.size());
    for (auto v : p.value) w.f64(static_cast<double>(v));
    for (auto v : p.m) w.f64(static_cast<double>(v));
    for (auto v : p.v) w.f64(static_cast<double>(v));
  }
  w.u64(s.buffers.size());
  for (const auto& b : s.buffers) {
    w.str(b.name);
    w.u64(b.layer);
    w.u64(b.value.size());
    for (auto v : b.value) w.f64(static_cast<double>(v));
  }
  return w.bytes();
}

template <class T>
ModelState<T> deserialize(std::vector<char> bytes) {
  ckpt_detail::Reader r(std::move(bytes));
  const char* magic = r.take(kCheckpointMagic.size());
  if (!std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), magic))
    throw std::runtime_error("checkpoint: bad magic");
  if (const auto version = r.u32(); version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  ModelSpec spec;
  spec.input_side = r.u64();
  spec.in_channels = r.u64();
  spec.stem_channels = r.u64();
  spec.stem_stride = r.u64();
  spec.stages.resize(r.u64());
  for (auto& st : spec.stages) {
    st.channels = r.u64();
    st.blocks = r.u64();
  }
  const std::uint64_t step = r.u64();
  const std::uint64_t seed = r.u64();
  ModelState<T> s = make_model<T>(spec, seed);
  s.step = step;
  if (r.u64() != s.frozen.size()) throw std::runtime_error("checkpoint: layer count mismatch");
  for (std::size_t i = 0; i < s.frozen.size(); ++i) s.frozen[i] = r.u8() != 0;

  const std::uint64_t n_params = r.u64();
  if (n_params != s.params.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
  for (std::uint64_t k = 0; k < n_params; ++k) {
    const std::string name = r.str();
    auto& p = s.param(name);
    if (r.u64() != p.layer) throw std::runtime_error("checkpoint: layer mismatch for " + name);
    if (r.u64() != p.value.size()) throw std::runtime_error("checkpoint: size mismatch for " + name);
    for (auto& v : p.value) v = static_cast<T>(r.f64());
    for (auto& v : p.m) v = static_cast<T>(r.f64());
    for (auto& v : p.v) v = static_cast<T>(r.f64());
  }
  const std::uint64_t n_buffers = r.u64();
  if (n_buffers != s.buffers.size()) throw std::runtime_error("checkpoint: buffer count mismatch");
  for (std::uint64_t k = 0; k < n_buffers; ++k) {
    const std::string name = r.str();
    Buffer<T>* buf = nullptr;
    for (auto& b : s.buffers)
      if (b.name == name) buf = &b;
    if (!buf) throw std::runtime_error("checkpoint: unknown buffer " + name);
    if (r.u64() != buf->layer) throw std::runtime_error("checkpoint: layer mismatch for " + name);
    if (r.u64() != buf->value.size()) throw std::runtime_error("checkpoint: size mismatch for " + name);
    for (auto& v : buf->value) v = static_cast<T>(r.f64());
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return s;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ModelState<T>& s) {
  const auto bytes = serialize(s);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

template <class T>
ModelState<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize<T>(std::move(bytes));
}

/// FNV-1a over the raw values of every frozen parameter and BN buffer.
template <class T>
std::uint64_t frozen_checksum(const ModelState<T>& s) {
  std::string bytes;
  auto add = [&](const std::vector<T>& v) {
    bytes.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
  };
  for (const auto& p : s.params)
    if (s.is_frozen(p.layer)) add(p.value);
  for (const auto& b : s.buffers)
    if (s.is_frozen(b.layer)) add(b.value);
  return fnv1a64(bytes);
}

template <class T>
std::uint64_t state_checksum(const ModelState<T>& s) {
  const auto bytes = serialize(s);
  return fnv1a64(std::string_view(bytes.data(), bytes.size()));
}

}  // namespace dcf::nn
