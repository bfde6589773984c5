#include "cdis/volume.hpp"

#include "cdis/common.hpp"

#include <cmath>
#include <string>

namespace cdis {

Volume3D::Volume3D(GridDims dims, Spacing spacing, std::vector<double> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data))
{
    if (dims_.nx == 0 || dims_.ny == 0 || dims_.nz == 0) {
        throw DataError("volume dims must all be >= 1");
    }
    if (!(spacing_.sx > 0.0) || !(spacing_.sy > 0.0) || !(spacing_.sz > 0.0)
        || !std::isfinite(spacing_.sx) || !std::isfinite(spacing_.sy) || !std::isfinite(spacing_.sz)) {
        throw DataError("volume spacing must be positive and finite");
    }
    if (data_.size() != dims_.count()) {
        throw DataError("volume buffer holds " + std::to_string(data_.size()) + " voxels, dims require "
                        + std::to_string(dims_.count()));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i])) {
            throw DataError("non-finite voxel at linear index " + std::to_string(i));
        }
    }
}

Volume3D Volume3D::filled(GridDims dims, Spacing spacing, double value)
{
    return Volume3D(dims, spacing, std::vector<double>(dims.count(), value));
}

} // namespace cdis
