#pragma once

#include "cdis/volume.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cdis {

inline constexpr std::size_t kCubeWidth = 224;
inline constexpr std::size_t kCubeHeight = 224;
inline constexpr std::size_t kCubeSlices = 25;
inline constexpr std::size_t kCubeVoxels = kCubeWidth * kCubeHeight * kCubeSlices;

struct ChannelNormalization {
    double mean = 0.0;
    double scale = 1.0;   ///< divisor applied after centering
    bool constant = false; ///< channel was zeroed by the constant-channel rule

    bool operator==(const ChannelNormalization&) const = default;
};

/// Network input: `channels` x 25 x 224 x 224 intensities, x fastest within
/// a channel.
struct DataCube {
    std::size_t channels = 0;
    std::vector<float> data;
    std::vector<ChannelNormalization> normalization;

    std::span<const float> channel(std::size_t c) const
    {
        return std::span<const float>(data).subspan(c * kCubeVoxels, kCubeVoxels);
    }

    bool operator==(const DataCube&) const = default;
};

/// Per-slice bilinear resampling of the x/y plane (pixel-centre alignment,
/// edge clamping). Spacing is rescaled to keep the field of view.
Volume3D resample_inplane(const Volume3D& volume, std::size_t nx, std::size_t ny);

/// Centre crop or symmetric zero pad along z. With an odd difference the
/// extra slice goes after the data.
Volume3D fit_slices(const Volume3D& volume, std::size_t nz);

/// Resample to 224x224, crop/pad to 25 slices, then z-score.
///
/// Centering uses the mean of the voxels that came from the input; padded
/// slices stay exactly zero. The scale is chosen so that the whole cube has
/// mean 0 and standard deviation 1. Channels whose spread is below 1e-12
/// become all zeros.
DataCube standardize_cube(const Volume3D& volume);

/// Concatenates single-channel cubes in order.
DataCube stack_channels(std::span<const DataCube> cubes);

void write_cube(const std::filesystem::path& path, const DataCube& cube, std::string_view metadata = {});
DataCube read_cube(const std::filesystem::path& path);

} // namespace cdis
