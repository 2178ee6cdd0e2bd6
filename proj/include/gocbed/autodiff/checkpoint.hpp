#pragma once

// Binary checkpoint: named double arrays with shapes, a format version, the
// training step, and a free-form metadata string (JSON in practice).
//
//   "GOCBEDCK" | u32 version | u64 step | u64 len, metadata bytes | u64 count |
//   count x { u32 len, name | u32 rank | i32 dims[rank] | f64 data[numel] }
//
// Files are written to a sibling temp path and renamed into place, so a crash
// mid-write never replaces the previous checkpoint with a torn one.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "gocbed/autodiff/nn.hpp"
#include "gocbed/autodiff/optim.hpp"

namespace gocbed::ad {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t step = 0;
  std::string metadata;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
};

namespace detail {
template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("checkpoint truncated");
  return v;
}
inline constexpr char kMagic[8] = {'G', 'O', 'C', 'B', 'E', 'D', 'C', 'K'};
}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write " + tmp.string());
    os.write(detail::kMagic, 8);
    detail::put<std::uint32_t>(os, ck.version);
    detail::put<std::uint64_t>(os, ck.step);
    detail::put<std::uint64_t>(os, ck.metadata.size());
    os.write(ck.metadata.data(), static_cast<std::streamsize>(ck.metadata.size()));
    detail::put<std::uint64_t>(os, ck.arrays.size());
    for (const auto& a : ck.arrays) {
      if (numel(a.shape) != a.data.size()) throw CheckpointError("array " + a.name + " has inconsistent shape");
      detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.name.size()));
      os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
      detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.shape.size()));
      for (int dim : a.shape) detail::put<std::int32_t>(os, dim);
      os.write(reinterpret_cast<const char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    }
    os.flush();
    if (!os) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, detail::kMagic, 8) != 0) throw CheckpointError(path.string() + " is not a checkpoint");
  Checkpoint ck;
  ck.version = detail::get<std::uint32_t>(is);
  if (ck.version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(ck.version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  ck.step = detail::get<std::uint64_t>(is);
  ck.metadata.resize(detail::get<std::uint64_t>(is));
  is.read(ck.metadata.data(), static_cast<std::streamsize>(ck.metadata.size()));
  const auto count = detail::get<std::uint64_t>(is);
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedArray a;
    a.name.resize(detail::get<std::uint32_t>(is));
    is.read(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    const auto rank = detail::get<std::uint32_t>(is);
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(detail::get<std::int32_t>(is));
    a.data.resize(numel(a.shape));
    is.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    if (!is) throw CheckpointError("checkpoint truncated in array " + a.name);
    ck.arrays.push_back(std::move(a));
  }
  return ck;
}

inline std::vector<NamedArray> export_params(const ParamStore& store) {
  std::vector<NamedArray> out;
  for (const auto& [name, t] : store.items())
    out.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
  return out;
}

/// Copies checkpoint arrays into the store. Every parameter must be present
/// with a matching shape, and every array outside `ignored_prefixes` must name
/// a parameter of the store.
inline void import_params(ParamStore& store, const std::vector<NamedArray>& arrays,
                          const std::vector<std::string>& ignored_prefixes = {}) {
  std::set<std::string> used;
  for (const auto& a : arrays) {
    bool ignored = false;
    for (const auto& p : ignored_prefixes) ignored = ignored || a.name.rfind(p, 0) == 0;
    if (ignored) continue;
    if (!store.contains(a.name)) throw CheckpointError("checkpoint holds unknown parameter '" + a.name + "'");
    Tensor& t = store.at(a.name);
    if (t.shape() != a.shape)
      throw CheckpointError("shape mismatch for '" + a.name + "': checkpoint " + shape_str(a.shape) + ", model " +
                            shape_str(t.shape()));
    std::copy(a.data.begin(), a.data.end(), t.mutable_data().begin());
    used.insert(a.name);
  }
  for (const auto& [name, t] : store.items())
    if (!used.count(name)) throw CheckpointError("checkpoint is missing parameter '" + name + "'");
}

}  // namespace gocbed::ad
