#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddspseg/volume.hpp"

namespace ddspseg::io {

enum class VoxelType { u8, f32 };

/// Distinct failure kinds for volume file parsing. Each maps to its own
/// diagnostic so callers (and tests) can tell them apart.
enum class ErrorKind {
  io,                 // cannot open, read or write
  malformed_header,   // magic, line structure, numbers
  payload_length,     // payload byte count disagrees with dims
  unknown_dtype,      // dtype token not u8/f32
  non_integral_u8,    // u8 requested for a non-integer or out-of-range voxel
  unsupported_type,   // MHD ElementType outside the subset
  compressed_data,    // MHD CompressedData = True
  missing_raw_file,   // MHD ElementDataFile not found
};

const char* to_string(ErrorKind k);

class FormatError : public std::runtime_error {
 public:
  FormatError(ErrorKind kind, const std::string& what);
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// VVF: "VVF1\n" "dims nx ny nz\n" "spacing sx sy sz\n" "dtype u8|f32\n" "\n"
// followed by the raw little-endian payload, x-fastest.
std::vector<std::uint8_t> encode_vvf(const Volume& v, VoxelType dtype);
Volume decode_vvf(std::span<const std::uint8_t> bytes);

void write_vvf(const Volume& v, VoxelType dtype, const std::filesystem::path& path);
Volume read_vvf(const std::filesystem::path& path);

/// Reads the supported MetaImage subset: ObjectType = Image, NDims = 3,
/// DimSize, ElementSpacing, ElementType MET_UCHAR|MET_FLOAT, a local
/// ElementDataFile and CompressedData = False. Little-endian payloads only.
Volume read_mhd_subset(const std::filesystem::path& header_path);

/// Reads VVF or MHD by extension (.mhd -> MHD, anything else -> VVF).
Volume read_volume(const std::filesystem::path& path);

/// Little-endian float32 helpers shared by the binary containers.
void append_f32_le(std::vector<std::uint8_t>& out, float f);
float load_f32_le(const std::uint8_t* p);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace ddspseg::io
