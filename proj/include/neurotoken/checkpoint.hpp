#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neurotoken/diff.hpp"

namespace neurotoken {

// On disk: "FMLM", u32 version, u32 entry count, then per entry a u32 name
// length, the UTF-8 name, a u32 rank, u32 dims and little-endian float32 data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  diff::Mat<float> value;
};

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& entries);

// MissingArtifact if the file is absent; FormatError on a bad header, a
// version mismatch or truncation.
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

// Entry by name; MissingArtifact when absent.
const NamedArray& find_entry(const std::vector<NamedArray>& entries, const std::string& name);

}  // namespace neurotoken
