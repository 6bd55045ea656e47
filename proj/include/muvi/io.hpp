#pragma once

#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "muvi/errors.hpp"
#include "muvi/volume.hpp"

namespace muvi {

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

/// Gzip-compress a whole buffer. zlib's default gzip header carries mtime 0,
/// so identical input gives identical bytes across runs.
inline std::vector<std::uint8_t> gzip_compress(const std::vector<std::uint8_t>& in) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    throw IoError("deflateInit2 failed");
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(in.size())));
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw IoError("gzip compression failed");
  out.resize(out.size() - zs.avail_out);
  return out;
}

inline std::vector<std::uint8_t> gzip_decompress(const std::vector<std::uint8_t>& in) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw IoError("inflateInit2 failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> chunk{};
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk.data();
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw IoError("gzip decompression failed");
    }
    out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw IoError("truncated gzip stream");
    }
  }
  inflateEnd(&zs);
  return out;
}

inline bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// -- NIfTI-1 ---------------------------------------------------------------

#pragma pack(push, 1)
struct NiftiHeader {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope, scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration, toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must be 348 bytes");

template <typename I>
void bswap(I& v) {
  auto* p = reinterpret_cast<std::uint8_t*>(&v);
  for (std::size_t i = 0; i < sizeof(I) / 2; ++i) std::swap(p[i], p[sizeof(I) - 1 - i]);
}

inline void swap_header(NiftiHeader& h) {
  bswap(h.sizeof_hdr);
  for (auto& d : h.dim) bswap(d);
  bswap(h.datatype);
  bswap(h.bitpix);
  for (auto& p : h.pixdim) bswap(p);
  bswap(h.vox_offset);
  bswap(h.scl_slope);
  bswap(h.scl_inter);
  bswap(h.qform_code);
  bswap(h.sform_code);
}

enum class NiftiDtype : std::int16_t {
  u8 = 2,
  i16 = 4,
  i32 = 8,
  f32 = 16,
  f64 = 64,
};

inline std::vector<std::uint8_t> encode_nifti(const void* data, std::size_t bytes, NiftiDtype dtype,
                                              int bitpix, const Shape3& shape, const Vec3& spacing,
                                              const Vec3& origin) {
  NiftiHeader h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(shape[2]);  // x fastest on disk and in Grid3
  h.dim[2] = static_cast<std::int16_t>(shape[1]);
  h.dim[3] = static_cast<std::int16_t>(shape[0]);
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = static_cast<std::int16_t>(dtype);
  h.bitpix = static_cast<std::int16_t>(bitpix);
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(spacing[2]);
  h.pixdim[2] = static_cast<float>(spacing[1]);
  h.pixdim[3] = static_cast<float>(spacing[0]);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.sform_code = 1;
  h.srow_x[0] = static_cast<float>(spacing[2]);
  h.srow_x[3] = static_cast<float>(origin[2]);
  h.srow_y[1] = static_cast<float>(spacing[1]);
  h.srow_y[3] = static_cast<float>(origin[1]);
  h.srow_z[2] = static_cast<float>(spacing[0]);
  h.srow_z[3] = static_cast<float>(origin[0]);
  std::memcpy(h.magic, "n+1", 4);
  std::vector<std::uint8_t> out(352 + bytes, 0);
  std::memcpy(out.data(), &h, sizeof(h));
  std::memcpy(out.data() + 352, data, bytes);
  return out;
}

template <typename Src, typename Dst>
void convert_block(const std::uint8_t* raw, std::int64_t n, bool swapped, Dst* out) {
  for (std::int64_t i = 0; i < n; ++i) {
    Src v;
    std::memcpy(&v, raw + static_cast<std::size_t>(i) * sizeof(Src), sizeof(Src));
    if (swapped) bswap(v);
    out[i] = static_cast<Dst>(v);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Volume / mask file IO: .nii, .nii.gz, or raw float32 + JSON sidecar
// ---------------------------------------------------------------------------

inline void write_volume(const std::filesystem::path& path, const Volume& vol) {
  const std::string name = path.string();
  if (detail::has_suffix(name, ".nii") || detail::has_suffix(name, ".nii.gz")) {
    auto bytes = detail::encode_nifti(vol.grid.data.data(), vol.grid.data.size() * sizeof(float),
                                      detail::NiftiDtype::f32, 32, vol.shape(), vol.spacing, vol.origin);
    if (detail::has_suffix(name, ".gz")) bytes = detail::gzip_compress(bytes);
    detail::write_file_bytes(path, bytes);
    return;
  }
  if (detail::has_suffix(name, ".raw")) {
    std::vector<std::uint8_t> bytes(vol.grid.data.size() * sizeof(float));
    std::memcpy(bytes.data(), vol.grid.data.data(), bytes.size());
    detail::write_file_bytes(path, bytes);
    nlohmann::json sidecar{{"shape", vol.shape()},
                           {"spacing", vol.spacing},
                           {"origin", vol.origin},
                           {"dtype", "float32"}};
    std::filesystem::path sp = path;
    sp.replace_extension(".json");
    std::ofstream out(sp);
    if (!out) throw IoError("cannot write " + sp.string());
    out << sidecar.dump(2) << "\n";
    return;
  }
  throw IoError("unsupported volume extension: " + name);
}

inline void write_mask(const std::filesystem::path& path, const LabelVolume& mask) {
  const std::string name = path.string();
  if (detail::has_suffix(name, ".nii") || detail::has_suffix(name, ".nii.gz")) {
    auto bytes = detail::encode_nifti(mask.grid.data.data(), mask.grid.data.size(), detail::NiftiDtype::u8,
                                      8, mask.shape(), mask.spacing, {0.0, 0.0, 0.0});
    if (detail::has_suffix(name, ".gz")) bytes = detail::gzip_compress(bytes);
    detail::write_file_bytes(path, bytes);
    return;
  }
  if (detail::has_suffix(name, ".raw")) {
    std::vector<std::uint8_t> bytes(mask.grid.data.begin(), mask.grid.data.end());
    detail::write_file_bytes(path, bytes);
    nlohmann::json sidecar{{"shape", mask.shape()}, {"spacing", mask.spacing}, {"dtype", "uint8"}};
    std::filesystem::path sp = path;
    sp.replace_extension(".json");
    std::ofstream out(sp);
    if (!out) throw IoError("cannot write " + sp.string());
    out << sidecar.dump(2) << "\n";
    return;
  }
  throw IoError("unsupported mask extension: " + name);
}

namespace detail {

struct DecodedNifti {
  Shape3 shape;
  Vec3 spacing;
  Vec3 origin;
  std::vector<float> values;
};

inline DecodedNifti decode_nifti(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) bytes = gzip_decompress(bytes);
  if (bytes.size() < 352) throw IoError("truncated NIfTI file: " + path.string());
  NiftiHeader h{};
  std::memcpy(&h, bytes.data(), sizeof(h));
  bool swapped = false;
  if (h.sizeof_hdr != 348) {
    swap_header(h);
    swapped = true;
    if (h.sizeof_hdr != 348) throw IoError("not a NIfTI-1 file: " + path.string());
  }
  if (std::memcmp(h.magic, "n+1", 3) != 0 && std::memcmp(h.magic, "ni1", 3) != 0)
    throw IoError("bad NIfTI magic in " + path.string());
  if (h.dim[0] < 3) throw IoError("need a 3D NIfTI, got dim[0]=" + std::to_string(h.dim[0]));
  for (int d = 4; d <= h.dim[0]; ++d)
    if (h.dim[d] > 1) throw IoError("only singleton trailing dimensions supported: " + path.string());
  DecodedNifti out;
  out.shape = {h.dim[3], h.dim[2], h.dim[1]};
  out.spacing = {h.pixdim[3], h.pixdim[2], h.pixdim[1]};
  out.origin = {h.srow_z[3], h.srow_y[3], h.srow_x[3]};
  const std::int64_t n = voxel_count(out.shape);
  const std::size_t offset = static_cast<std::size_t>(h.vox_offset);
  const std::uint8_t* raw = bytes.data() + offset;
  out.values.resize(static_cast<std::size_t>(n));
  const auto need = [&](std::size_t elem) {
    if (bytes.size() < offset + static_cast<std::size_t>(n) * elem)
      throw IoError("NIfTI data block truncated: " + path.string());
  };
  switch (static_cast<NiftiDtype>(h.datatype)) {
    case NiftiDtype::u8:
      need(1);
      convert_block<std::uint8_t>(raw, n, false, out.values.data());
      break;
    case NiftiDtype::i16:
      need(2);
      convert_block<std::int16_t>(raw, n, swapped, out.values.data());
      break;
    case NiftiDtype::i32:
      need(4);
      convert_block<std::int32_t>(raw, n, swapped, out.values.data());
      break;
    case NiftiDtype::f32:
      need(4);
      convert_block<float>(raw, n, swapped, out.values.data());
      break;
    case NiftiDtype::f64:
      need(8);
      convert_block<double>(raw, n, swapped, out.values.data());
      break;
    default:
      throw IoError("unsupported NIfTI datatype " + std::to_string(h.datatype));
  }
  const float slope = h.scl_slope;
  const float inter = h.scl_inter;
  if (slope != 0.0f && (slope != 1.0f || inter != 0.0f))
    for (float& v : out.values) v = v * slope + inter;
  return out;
}

inline DecodedNifti decode_raw(const std::filesystem::path& path) {
  std::filesystem::path sp = path;
  sp.replace_extension(".json");
  std::ifstream in(sp);
  if (!in) throw IoError("missing sidecar " + sp.string());
  nlohmann::json sidecar = nlohmann::json::parse(in, nullptr, true);
  DecodedNifti out;
  const auto shape = sidecar.at("shape").get<std::vector<int>>();
  const auto spacing = sidecar.at("spacing").get<std::vector<double>>();
  if (shape.size() != 3 || spacing.size() != 3) throw IoError("sidecar needs 3D shape/spacing");
  out.shape = {shape[0], shape[1], shape[2]};
  out.spacing = {spacing[0], spacing[1], spacing[2]};
  out.origin = {0.0, 0.0, 0.0};
  const std::string dtype = sidecar.value("dtype", "float32");
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  const std::int64_t n = voxel_count(out.shape);
  out.values.resize(static_cast<std::size_t>(n));
  if (dtype == "float32") {
    if (bytes.size() != static_cast<std::size_t>(n) * 4) throw IoError("raw size mismatch: " + path.string());
    convert_block<float>(bytes.data(), n, false, out.values.data());
  } else if (dtype == "uint8") {
    if (bytes.size() != static_cast<std::size_t>(n)) throw IoError("raw size mismatch: " + path.string());
    convert_block<std::uint8_t>(bytes.data(), n, false, out.values.data());
  } else {
    throw IoError("unsupported raw dtype " + dtype);
  }
  return out;
}

inline DecodedNifti decode_any(const std::filesystem::path& path) {
  const std::string name = path.string();
  if (has_suffix(name, ".nii") || has_suffix(name, ".nii.gz")) return decode_nifti(path);
  if (has_suffix(name, ".raw")) return decode_raw(path);
  throw IoError("unsupported volume extension: " + name);
}

}  // namespace detail

inline Volume read_volume(const std::filesystem::path& path) {
  detail::DecodedNifti d = detail::decode_any(path);
  Volume vol;
  vol.grid = Grid3<float>(d.shape);
  std::copy(d.values.begin(), d.values.end(), vol.grid.data.begin());
  vol.spacing = d.spacing;
  vol.origin = d.origin;
  validate_volume(vol);
  return vol;
}

inline LabelVolume read_mask(const std::filesystem::path& path) {
  detail::DecodedNifti d = detail::decode_any(path);
  LabelVolume mask;
  mask.grid = Grid3<std::uint8_t>(d.shape, 0);
  for (std::size_t i = 0; i < d.values.size(); ++i)
    mask.grid[static_cast<std::int64_t>(i)] = d.values[i] != 0.0f ? 1 : 0;
  mask.spacing = d.spacing;
  return mask;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

}  // namespace muvi
