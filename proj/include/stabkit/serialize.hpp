#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stabkit/tensor.hpp"

namespace stabkit {

// Raw little-endian 64-bit float blobs with a JSON manifest next to them.
// This is the on-disk scheme for sequences, model checkpoints, and
// stabilizer checkpoints alike.

inline void write_f64_blob(const std::filesystem::path& path, const double* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  if (!out) throw std::runtime_error("short write: " + path.string());
}

inline std::vector<double> read_f64_blob(const std::filesystem::path& path, std::size_t expect) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::vector<double> v(expect);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(expect * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != expect * sizeof(double))
    throw std::runtime_error("short read: " + path.string());
  return v;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  nlohmann::json j;
  in >> j;
  return j;
}

// ---------------------------------------------------------------------------
// SHA-256, used for the frozen-base contract (parameter bytes must be
// byte-identical across a stabilizer training run)
// ---------------------------------------------------------------------------

namespace sha256_detail {

inline std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

constexpr std::uint32_t K[64] = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};

}  // namespace sha256_detail

inline std::string sha256_hex(const void* bytes, std::size_t len) {
  using namespace sha256_detail;
  std::uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                        0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
  std::vector<std::uint8_t> msg(static_cast<const std::uint8_t*>(bytes),
                                static_cast<const std::uint8_t*>(bytes) + len);
  std::uint64_t bitlen = static_cast<std::uint64_t>(len) * 8;
  msg.push_back(0x80);
  while (msg.size() % 64 != 56) msg.push_back(0x00);
  for (int i = 7; i >= 0; --i) msg.push_back(static_cast<std::uint8_t>(bitlen >> (8 * i)));

  for (std::size_t off = 0; off < msg.size(); off += 64) {
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i)
      w[i] = (msg[off + 4 * i] << 24) | (msg[off + 4 * i + 1] << 16) | (msg[off + 4 * i + 2] << 8) |
             msg[off + 4 * i + 3];
    for (int i = 16; i < 64; ++i) {
      std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4], f = h[5], g = h[6], hh = h[7];
    for (int i = 0; i < 64; ++i) {
      std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      std::uint32_t ch = (e & f) ^ (~e & g);
      std::uint32_t t1 = hh + s1 + ch + K[i] + w[i];
      std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      std::uint32_t t2 = s0 + maj;
      hh = g;
      g = f;
      f = e;
      e = d + t1;
      d = c;
      c = b;
      b = a;
      a = t1 + t2;
    }
    h[0] += a;
    h[1] += b;
    h[2] += c;
    h[3] += d;
    h[4] += e;
    h[5] += f;
    h[6] += g;
    h[7] += hh;
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(64);
  for (std::uint32_t v : h)
    for (int i = 7; i >= 0; --i) out.push_back(hex[(v >> (4 * i)) & 0xf]);
  return out;
}

inline std::string hash_parameters(const std::vector<Tensor>& params) {
  std::vector<std::uint8_t> bytes;
  for (const auto& p : params) {
    const auto* b = reinterpret_cast<const std::uint8_t*>(p.data());
    bytes.insert(bytes.end(), b, b + p.size() * sizeof(double));
  }
  return sha256_hex(bytes.data(), bytes.size());
}

// ---------------------------------------------------------------------------
// named-parameter store: manifest.json + params.bin in one directory
// ---------------------------------------------------------------------------

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

inline void save_tensor_store(const std::filesystem::path& dir,
                              const std::vector<NamedTensor>& tensors,
                              nlohmann::json extra = nlohmann::json::object()) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = std::move(extra);
  manifest["format"] = "f64-le";
  auto& list = manifest["tensors"] = nlohmann::json::array();
  std::vector<double> blob;
  for (const auto& nt : tensors) {
    list.push_back({{"name", nt.name}, {"shape", nt.tensor.shape()},
                    {"offset", blob.size()}, {"count", nt.tensor.size()}});
    blob.insert(blob.end(), nt.tensor.data(), nt.tensor.data() + nt.tensor.size());
  }
  write_f64_blob(dir / "params.bin", blob.data(), blob.size());
  write_json(dir / "manifest.json", manifest);
}

inline nlohmann::json load_tensor_store(const std::filesystem::path& dir,
                                        std::vector<NamedTensor>& out) {
  nlohmann::json manifest = read_json(dir / "manifest.json");
  std::size_t total = 0;
  for (const auto& e : manifest.at("tensors")) total += e.at("count").get<std::size_t>();
  std::vector<double> blob = read_f64_blob(dir / "params.bin", total);
  out.clear();
  for (const auto& e : manifest.at("tensors")) {
    Shape shape = e.at("shape").get<Shape>();
    std::size_t off = e.at("offset").get<std::size_t>();
    std::size_t count = e.at("count").get<std::size_t>();
    std::vector<double> vals(blob.begin() + off, blob.begin() + off + count);
    out.push_back({e.at("name").get<std::string>(), Tensor::from(shape, std::move(vals))});
  }
  return manifest;
}

}  // namespace stabkit
