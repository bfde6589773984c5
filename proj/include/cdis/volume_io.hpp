#pragma once

#include "cdis/volume.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cdis {

// On-disk layout (little-endian):
//   char[8]  magic "CDISVOL\0"
//   u32      format version (1)
//   u32      voxel type (1 = float32, 2 = float64)
//   u32      channel count
//   u32      metadata length in bytes
//   u64 x3   nx, ny, nz
//   f64 x3   sx, sy, sz (mm)
//   metadata (UTF-8, typically a JSON object)
//   voxels   channels x nz x ny x nx, x fastest

enum class VoxelType : std::uint32_t { float32 = 1, float64 = 2 };

struct VolumeHeader {
    std::uint32_t channels = 1;
    GridDims dims;
    Spacing spacing;
    VoxelType type = VoxelType::float64;
    std::string metadata;

    std::size_t voxel_count() const { return channels * dims.count(); }
};

struct RawVolume {
    VolumeHeader header;
    std::vector<double> voxels;
};

void write_raw_volume(const std::filesystem::path& path, const VolumeHeader& header, std::span<const double> voxels);
void write_raw_volume(const std::filesystem::path& path, const VolumeHeader& header, std::span<const float> voxels);
RawVolume read_raw_volume(const std::filesystem::path& path);
/// Header and metadata only; voxels are not read.
VolumeHeader read_volume_header(const std::filesystem::path& path);

/// Writes a single-channel float64 volume.
void write_volume(const std::filesystem::path& path, const Volume3D& volume, std::string_view metadata = {});

/// Reads a single-channel volume. Files ending in `.nii` are parsed as
/// uncompressed NIfTI-1; everything else must be the native format.
Volume3D read_volume(const std::filesystem::path& path);

Volume3D read_nifti(const std::filesystem::path& path);

} // namespace cdis
