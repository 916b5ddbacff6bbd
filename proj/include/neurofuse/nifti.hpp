#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "neurofuse/volume.hpp"

namespace neurofuse {

using Bytes = std::vector<std::uint8_t>;

// NIfTI-1 datatype codes accepted by the reader.
enum class NiftiDatatype : std::int16_t {
  UInt8 = 2,
  Int16 = 4,
  Int32 = 8,
  Float32 = 16,
  Float64 = 64,
};

/// Parses a single-file NIfTI-1 image (".nii"), gzip-compressed or not.
/// For 4D inputs `frame` selects the volume along dim[4].
/// Throws BadMagic, UnsupportedDatatype, TruncatedData, NonPositiveDim.
Volume3D read_nifti(std::span<const std::uint8_t> bytes, int frame = 0);

/// Number of 3D frames stored in the image (dim[4], at least 1).
int nifti_frame_count(std::span<const std::uint8_t> bytes);

/// Emits float32 NIfTI-1 with vox_offset 352 and sform_code 1.
Bytes write_nifti(const Volume3D& vol);

Bytes gzip_compress(std::span<const std::uint8_t> raw);
Bytes gzip_decompress(std::span<const std::uint8_t> gz);
bool is_gzip(std::span<const std::uint8_t> bytes);

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

Volume3D load_nifti(const std::filesystem::path& path, int frame = 0);
/// Compresses when the path ends in ".gz".
void save_nifti(const Volume3D& vol, const std::filesystem::path& path);

}  // namespace neurofuse
