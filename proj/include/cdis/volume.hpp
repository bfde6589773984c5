#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cdis {

struct GridDims {
    std::size_t nx = 1;
    std::size_t ny = 1;
    std::size_t nz = 1;

    std::size_t count() const { return nx * ny * nz; }
    bool operator==(const GridDims&) const = default;
};

/// Voxel size in mm.
struct Spacing {
    double sx = 1.0;
    double sy = 1.0;
    double sz = 1.0;

    bool operator==(const Spacing&) const = default;
};

/// Real-valued scalar volume. Voxels are stored x-fastest, then y, then z.
///
/// The constructor enforces the invariants (positive dims and spacing, finite
/// intensities, matching buffer size) and throws DataError otherwise.
class Volume3D {
public:
    Volume3D(GridDims dims, Spacing spacing, std::vector<double> data);

    static Volume3D filled(GridDims dims, Spacing spacing, double value);

    const GridDims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    std::size_t size() const { return data_.size(); }

    std::span<const double> data() const { return data_; }
    // Writers are responsible for keeping intensities finite.
    std::span<double> mutable_data() { return data_; }

    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const
    {
        return x + dims_.nx * (y + dims_.ny * z);
    }
    double at(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }
    double& at(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }

    bool same_grid(const Volume3D& other) const
    {
        return dims_ == other.dims_ && spacing_ == other.spacing_;
    }

    bool operator==(const Volume3D&) const = default;

private:
    GridDims dims_;
    Spacing spacing_;
    std::vector<double> data_;
};

} // namespace cdis
