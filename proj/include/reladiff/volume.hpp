#pragma once

// Volume payload and the RDVF file format.
//
// Layout (all integers little-endian):
//   "RDVF" | u8 version (1) | u8 rank | u8 channels | u8 reserved (0)
//   | u32 extent x rank | float32 data, channel-major | u32 n | n bytes UTF-8 JSON

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "reladiff/tensor.hpp"

namespace reladiff {

struct Volume {
  std::vector<std::size_t> dims;  ///< 2 or 3 spatial extents
  std::size_t channels = 1;
  std::vector<float> data;        ///< channel-major: data[c * voxels + i]
  nlohmann::json meta = nlohmann::json::object();

  std::size_t voxels() const;
  /// Throws ShapeError unless dims/channels/data agree and every value is finite.
  void validate() const;
  /// [1, C, *dims] tensor of the values.
  Tensor to_tensor() const;
  /// Single batch element `n` of a [N, C, *dims] tensor, rounded to float32.
  static Volume from_tensor(const Tensor& t, std::size_t n = 0);
};

constexpr std::uint8_t kVolumeVersion = 1;

std::string encode_volume(const Volume& v);
Volume decode_volume(const std::string& bytes);
void write_volume(const std::filesystem::path& path, const Volume& v);
Volume read_volume(const std::filesystem::path& path);

}  // namespace reladiff
