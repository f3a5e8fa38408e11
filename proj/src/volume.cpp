#include "reladiff/volume.hpp"

#include <cmath>

#include "reladiff/errors.hpp"
#include "reladiff/io.hpp"

namespace reladiff {

std::size_t Volume::voxels() const { return numel(dims); }

void Volume::validate() const {
  if (dims.size() != 2 && dims.size() != 3) throw ShapeError("volume rank must be 2 or 3");
  if (channels == 0 || channels > 255) throw ShapeError("volume channel count must be in [1, 255]");
  if (voxels() * channels != data.size())
    throw ShapeError("volume dims " + to_string(dims) + " x " + std::to_string(channels) +
                     " channels do not match " + std::to_string(data.size()) + " values");
  for (float v : data)
    if (!std::isfinite(v)) throw ShapeError("volume holds a non-finite value");
}

Tensor Volume::to_tensor() const {
  Shape s{1, channels};
  s.insert(s.end(), dims.begin(), dims.end());
  return Tensor::constant(std::move(s), std::vector<Real>(data.begin(), data.end()));
}

Volume Volume::from_tensor(const Tensor& t, std::size_t n) {
  if (t.rank() != 4 && t.rank() != 5) throw ShapeError("expected [N, C, *dims], got " + to_string(t.shape()));
  if (n >= t.extent(0)) throw ContractError("batch index out of range");
  Volume v;
  v.channels = t.extent(1);
  v.dims.assign(t.shape().begin() + 2, t.shape().end());
  const std::size_t per = v.channels * v.voxels();
  auto src = t.data().subspan(n * per, per);
  v.data.assign(src.begin(), src.end());
  return v;
}

std::string encode_volume(const Volume& v) {
  v.validate();
  io::ByteWriter w;
  w.bytes("RDVF");
  w.u8(kVolumeVersion);
  w.u8(static_cast<std::uint8_t>(v.dims.size()));
  w.u8(static_cast<std::uint8_t>(v.channels));
  w.u8(0);
  for (auto e : v.dims) w.u32(static_cast<std::uint32_t>(e));
  for (float x : v.data) w.f32(x);
  const std::string meta = v.meta.dump();
  w.u32(static_cast<std::uint32_t>(meta.size()));
  w.bytes(meta);
  return w.take();
}

Volume decode_volume(const std::string& bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(4, "magic") != "RDVF") throw FormatError("bad magic, not an RDVF file", 0);
  const std::size_t version_at = r.offset();
  const auto version = r.u8("version");
  if (version != kVolumeVersion)
    throw UnsupportedVersionError("unsupported RDVF version " + std::to_string(version), version_at);
  Volume v;
  const std::size_t rank_at = r.offset();
  const auto rank = r.u8("rank");
  if (rank != 2 && rank != 3) throw FormatError("rank must be 2 or 3, got " + std::to_string(rank), rank_at);
  const std::size_t channels_at = r.offset();
  v.channels = r.u8("channel count");
  if (v.channels == 0) throw FormatError("zero channels", channels_at);
  r.u8("reserved byte");
  v.dims.resize(rank);
  for (auto& e : v.dims) {
    const std::size_t at = r.offset();
    e = r.u32("extent");
    if (e == 0) throw FormatError("zero extent", at);
  }
  const std::size_t n = v.voxels() * v.channels;
  if (n > r.remaining() / 4) throw FormatError("truncated voxel data", r.offset());
  v.data.resize(n);
  for (auto& x : v.data) x = r.f32("voxel data");
  const auto meta_len = r.u32("metadata length");
  const std::size_t meta_at = r.offset();
  const auto meta = r.bytes(meta_len, "metadata");
  try {
    v.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metadata is not valid JSON: ") + e.what(), meta_at);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after metadata", r.offset());
  return v;
}

void write_volume(const std::filesystem::path& path, const Volume& v) {
  io::write_file_atomic(path, encode_volume(v));
}

Volume read_volume(const std::filesystem::path& path) { return decode_volume(io::read_file(path)); }

}  // namespace reladiff
