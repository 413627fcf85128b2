// Copyright (c) 2026, the idedit authors
// SPDX-License-Identifier: Apache-2.0

#include "idedit/container.hpp"

#include "idedit/image.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace idedit {

namespace {

constexpr std::array<char, 8> kMagic{'I', 'D', 'E', 'D', 'I', 'T', 'C', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated container: " + path.string());
  return v;
}

std::string get_bytes(std::istream& in, std::size_t n, const std::filesystem::path& path) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw FormatError("truncated container: " + path.string());
  return s;
}

}  // namespace

const Eigen::MatrixXf& Container::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw FormatError("container (" + kind + ") missing tensor " + name);
  return it->second;
}

namespace {

void write_container(std::ostream& out, const Container& c) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kContainerVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.kind.size()));
  out.write(c.kind.data(), static_cast<std::streamsize>(c.kind.size()));
  const std::string meta = c.meta.dump();
  put<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, m] : c.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  }
}

}  // namespace

std::string container_bytes(const Container& c) {
  std::ostringstream out(std::ios::binary);
  write_container(out, c);
  return std::move(out).str();
}

void save_container(const std::filesystem::path& path, const Container& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write container", path);
  write_container(out, c);
  if (!out.flush()) throw IoError("container write failed", path);
}

Container load_container(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read container", path);
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw FormatError("not a container file: " + path.string());
  const auto version = get<std::uint32_t>(in, path);
  if (version != kContainerVersion)
    throw FormatError("unsupported container version " + std::to_string(version) + " (expected " +
                      std::to_string(kContainerVersion) + "): " + path.string());
  Container c;
  c.kind = get_bytes(in, get<std::uint32_t>(in, path), path);
  if (c.kind != expected_kind)
    throw FormatError("container kind '" + c.kind + "' where '" + expected_kind + "' expected: " + path.string());
  c.meta = nlohmann::json::parse(get_bytes(in, get<std::uint64_t>(in, path), path));
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_bytes(in, get<std::uint32_t>(in, path), path);
    const auto rows = get<std::uint32_t>(in, path);
    const auto cols = get<std::uint32_t>(in, path);
    Eigen::MatrixXf m(rows, cols);
    if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float))))
      throw FormatError("truncated tensor " + name + ": " + path.string());
    c.tensors.emplace(std::move(name), std::move(m));
  }
  return c;
}

std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xf]);
  }
  return hex;
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read for hashing", path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

}  // namespace idedit
