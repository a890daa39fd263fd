#include "neurotoken/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "neurotoken/error.hpp"

namespace neurotoken {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'F', 'M', 'L', 'M'};

void put_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t get_u32(std::ifstream& in, const std::string& what) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  require(static_cast<bool>(in), ErrorKind::FormatError, "checkpoint truncated reading " + what);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& entries) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::MissingArtifact, "cannot write " + path.string());
  out.write(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(out, 2);
    put_u32(out, static_cast<std::uint32_t>(e.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(e.value.cols()));
    out.write(reinterpret_cast<const char*>(e.value.data()),
              static_cast<std::streamsize>(e.value.size() * static_cast<Eigen::Index>(sizeof(float))));
  }
  require(static_cast<bool>(out), ErrorKind::FormatError, "failed writing " + path.string());
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorKind::MissingArtifact, "no checkpoint at " + path.string());
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  require(in && std::memcmp(magic, kMagic, 4) == 0, ErrorKind::FormatError, path.string() + " is not a checkpoint");
  const auto version = get_u32(in, "version");
  require(version == kCheckpointVersion, ErrorKind::FormatError,
          "checkpoint version " + std::to_string(version) + " is not supported");
  const auto count = get_u32(in, "entry count");
  std::vector<NamedArray> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray e;
    e.name.resize(get_u32(in, "name length"));
    in.read(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    const auto rank = get_u32(in, "rank");
    require(rank >= 1 && rank <= 2, ErrorKind::FormatError, "entry " + e.name + " has rank " + std::to_string(rank));
    const auto rows = rank == 2 ? get_u32(in, "dims") : 1u;
    const auto cols = get_u32(in, "dims");
    e.value.resize(rows, cols);
    in.read(reinterpret_cast<char*>(e.value.data()),
            static_cast<std::streamsize>(e.value.size() * static_cast<Eigen::Index>(sizeof(float))));
    require(static_cast<bool>(in), ErrorKind::FormatError, "checkpoint truncated in entry " + e.name);
    entries.push_back(std::move(e));
  }
  return entries;
}

const NamedArray& find_entry(const std::vector<NamedArray>& entries, const std::string& name) {
  auto it = std::find_if(entries.begin(), entries.end(), [&](const NamedArray& e) { return e.name == name; });
  require(it != entries.end(), ErrorKind::MissingArtifact, "checkpoint has no entry " + name);
  return *it;
}

}  // namespace neurotoken
