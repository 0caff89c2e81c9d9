#pragma once

#include "mlsm/nn.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

namespace mlsm {

// Binary named-array file. Layout (little-endian):
//   magic "MLSMARRS", u32 version, u32 scalar_bytes,
//   u32 fingerprint_len, fingerprint chars,
//   u32 n_arrays, then per array: u32 name_len, name, u64 rows, u64 cols, data.

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

constexpr char kArrayMagic[8] = {'M', 'L', 'S', 'M', 'A', 'R', 'R', 'S'};

}  // namespace detail

template <class S>
struct NamedArray {
  std::string name;
  Mat<S> value;
};

template <class S>
void write_array_file(const std::string& path, const std::string& fingerprint,
                      const std::vector<NamedArray<S>>& arrays) {
  // Write to a temp file and rename so concurrent readers never see a torn file.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint file: " + path);
    out.write(detail::kArrayMagic, 8);
    detail::write_u32(out, 1);
    detail::write_u32(out, sizeof(S));
    detail::write_u32(out, static_cast<std::uint32_t>(fingerprint.size()));
    out.write(fingerprint.data(), static_cast<std::streamsize>(fingerprint.size()));
    detail::write_u32(out, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
      detail::write_u32(out, static_cast<std::uint32_t>(a.name.size()));
      out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
      detail::write_u64(out, static_cast<std::uint64_t>(a.value.rows()));
      detail::write_u64(out, static_cast<std::uint64_t>(a.value.cols()));
      out.write(reinterpret_cast<const char*>(a.value.data()),
                static_cast<std::streamsize>(a.value.size() * sizeof(S)));
    }
    if (!out) throw std::runtime_error("short write on checkpoint file: " + path);
  }
  std::filesystem::rename(tmp, path);
}

template <class S>
std::vector<NamedArray<S>> read_array_file(const std::string& path, std::string* fingerprint_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, detail::kArrayMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint array file: " + path);
  const std::uint32_t version = detail::read_u32(in);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version in " + path);
  const std::uint32_t scalar_bytes = detail::read_u32(in);
  if (scalar_bytes != sizeof(S))
    throw std::runtime_error("checkpoint scalar width mismatch in " + path + ": file has " +
                             std::to_string(scalar_bytes) + "-byte scalars, expected " +
                             std::to_string(sizeof(S)));
  const std::uint32_t fp_len = detail::read_u32(in);
  std::string fingerprint(fp_len, '\0');
  in.read(fingerprint.data(), fp_len);
  if (fingerprint_out) *fingerprint_out = fingerprint;
  const std::uint32_t n = detail::read_u32(in);
  std::vector<NamedArray<S>> arrays;
  arrays.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t name_len = detail::read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = static_cast<Eigen::Index>(detail::read_u64(in));
    const auto cols = static_cast<Eigen::Index>(detail::read_u64(in));
    Mat<S> m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(S)));
    if (!in) throw std::runtime_error("truncated checkpoint file: " + path);
    arrays.push_back({std::move(name), std::move(m)});
  }
  return arrays;
}

/// Save registered parameters, refusing nothing; load verifies fingerprint,
/// names and shapes and refuses on any mismatch.
template <class S>
void save_params(const std::string& path, const std::string& fingerprint,
                 const std::vector<nn::ParamRef<S>>& refs) {
  std::vector<NamedArray<S>> arrays;
  arrays.reserve(refs.size());
  for (const auto& r : refs) {
    NamedArray<S> a;
    a.name = r.name;
    a.value = Eigen::Map<const Mat<S>>(r.value, r.rows, r.cols);
    arrays.push_back(std::move(a));
  }
  write_array_file(path, fingerprint, arrays);
}

template <class S>
void load_params(const std::string& path, const std::string& expected_fingerprint,
                 std::vector<nn::ParamRef<S>>& refs) {
  std::string fingerprint;
  auto arrays = read_array_file<S>(path, &fingerprint);
  if (!expected_fingerprint.empty() && fingerprint != expected_fingerprint)
    throw std::runtime_error("checkpoint fingerprint mismatch for " + path + ":\n  file:     " +
                             fingerprint + "\n  expected: " + expected_fingerprint);
  std::map<std::string, const NamedArray<S>*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  for (auto& r : refs) {
    auto it = by_name.find(r.name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint " + path + " is missing array " + r.name);
    const auto& a = *it->second;
    if (a.value.rows() != r.rows || a.value.cols() != r.cols)
      throw std::runtime_error("checkpoint array " + r.name + " has shape " +
                               std::to_string(a.value.rows()) + "x" +
                               std::to_string(a.value.cols()) + ", expected " +
                               std::to_string(r.rows) + "x" + std::to_string(r.cols));
    Eigen::Map<Mat<S>>(r.value, r.rows, r.cols) = a.value;
  }
}

/// Fingerprint read without committing to a scalar type (header-only parse).
inline std::string peek_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, detail::kArrayMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint array file: " + path);
  detail::read_u32(in);  // version
  detail::read_u32(in);  // scalar bytes
  const std::uint32_t fp_len = detail::read_u32(in);
  std::string fingerprint(fp_len, '\0');
  in.read(fingerprint.data(), fp_len);
  return fingerprint;
}

/// Adam moment buffers, keyed to the parameter registry by name.
template <class S>
void save_adam(const std::string& path, const std::string& fingerprint,
               const std::vector<nn::ParamRef<S>>& refs, const nn::Adam<S>& adam) {
  require(adam.m.size() == refs.size() || adam.m.empty(),
          "save_adam: moment buffers do not match the registry");
  std::vector<NamedArray<S>> arrays;
  for (std::size_t i = 0; i < adam.m.size(); ++i) {
    if (!refs[i].trainable) continue;
    arrays.push_back({"m:" + refs[i].name, Mat<S>(adam.m[i])});
    arrays.push_back({"v:" + refs[i].name, Mat<S>(adam.v[i])});
  }
  Mat<S> t(1, 1);
  t(0, 0) = static_cast<S>(adam.t);
  arrays.push_back({"t", t});
  write_array_file(path, fingerprint, arrays);
}

template <class S>
void load_adam(const std::string& path, const std::string& expected_fingerprint,
               const std::vector<nn::ParamRef<S>>& refs, nn::Adam<S>& adam) {
  std::string fingerprint;
  auto arrays = read_array_file<S>(path, &fingerprint);
  if (!expected_fingerprint.empty() && fingerprint != expected_fingerprint)
    throw std::runtime_error("optimizer state fingerprint mismatch for " + path);
  std::map<std::string, const NamedArray<S>*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  adam.reset(refs);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (!refs[i].trainable) continue;
    auto mi = by_name.find("m:" + refs[i].name);
    auto vi = by_name.find("v:" + refs[i].name);
    if (mi == by_name.end() || vi == by_name.end())
      throw std::runtime_error("optimizer state missing buffers for " + refs[i].name);
    adam.m[i] = mi->second->value.col(0);
    adam.v[i] = vi->second->value.col(0);
  }
  auto ti = by_name.find("t");
  require(ti != by_name.end(), "optimizer state missing step counter");
  adam.t = static_cast<long>(ti->second->value(0, 0));
}

}  // namespace mlsm
