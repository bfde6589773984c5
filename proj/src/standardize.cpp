#include "cdis/standardize.hpp"

#include "cdis/common.hpp"
#include "cdis/volume_io.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace cdis {

namespace {

struct Taps {
    std::size_t lo;
    std::size_t hi;
    double w; ///< weight of `hi`
};

std::vector<Taps> linear_taps(std::size_t in, std::size_t out)
{
    std::vector<Taps> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    const double last = static_cast<double>(in - 1);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, last);
        const auto lo = static_cast<std::size_t>(std::floor(src));
        const std::size_t hi = std::min(lo + 1, in - 1);
        taps[i] = Taps{lo, hi, src - static_cast<double>(lo)};
    }
    return taps;
}

} // namespace

Volume3D resample_inplane(const Volume3D& volume, std::size_t nx, std::size_t ny)
{
    const GridDims& d = volume.dims();
    const auto tx = linear_taps(d.nx, nx);
    const auto ty = linear_taps(d.ny, ny);
    std::vector<double> out(nx * ny * d.nz);
    const auto in = volume.data();
    for (std::size_t z = 0; z < d.nz; ++z) {
        const double* slice = in.data() + z * d.nx * d.ny;
        for (std::size_t y = 0; y < ny; ++y) {
            const double* row0 = slice + ty[y].lo * d.nx;
            const double* row1 = slice + ty[y].hi * d.nx;
            const double wy = ty[y].w;
            double* dst = out.data() + (z * ny + y) * nx;
            for (std::size_t x = 0; x < nx; ++x) {
                const Taps& t = tx[x];
                const double top = row0[t.lo] + t.w * (row0[t.hi] - row0[t.lo]);
                const double bottom = row1[t.lo] + t.w * (row1[t.hi] - row1[t.lo]);
                dst[x] = top + wy * (bottom - top);
            }
        }
    }
    const Spacing& s = volume.spacing();
    const Spacing spacing{s.sx * static_cast<double>(d.nx) / static_cast<double>(nx),
                          s.sy * static_cast<double>(d.ny) / static_cast<double>(ny), s.sz};
    return Volume3D(GridDims{nx, ny, d.nz}, spacing, std::move(out));
}

Volume3D fit_slices(const Volume3D& volume, std::size_t nz)
{
    const GridDims& d = volume.dims();
    const std::size_t plane = d.nx * d.ny;
    std::vector<double> out(plane * nz, 0.0);
    const auto in = volume.data();
    if (d.nz >= nz) {
        const std::size_t start = (d.nz - nz) / 2;
        std::copy(in.begin() + static_cast<std::ptrdiff_t>(start * plane),
                  in.begin() + static_cast<std::ptrdiff_t>((start + nz) * plane), out.begin());
    } else {
        const std::size_t before = (nz - d.nz) / 2;
        std::copy(in.begin(), in.end(), out.begin() + static_cast<std::ptrdiff_t>(before * plane));
    }
    return Volume3D(GridDims{d.nx, d.ny, nz}, volume.spacing(), std::move(out));
}

DataCube standardize_cube(const Volume3D& volume)
{
    const Volume3D fitted = fit_slices(resample_inplane(volume, kCubeWidth, kCubeHeight), kCubeSlices);
    const auto values = fitted.data();
    const std::size_t plane = kCubeWidth * kCubeHeight;

    // slices [z0, z1) hold data; the rest is padding
    const std::size_t real_slices = std::min(volume.dims().nz, kCubeSlices);
    const std::size_t z0 = volume.dims().nz >= kCubeSlices ? 0 : (kCubeSlices - volume.dims().nz) / 2;
    const std::size_t begin = z0 * plane;
    const std::size_t end = (z0 + real_slices) * plane;

    double mean = 0.0;
    for (std::size_t i = begin; i < end; ++i) mean += values[i];
    mean /= static_cast<double>(end - begin);
    double ss = 0.0;
    for (std::size_t i = begin; i < end; ++i) ss += (values[i] - mean) * (values[i] - mean);
    const double scale = std::sqrt(ss / static_cast<double>(kCubeVoxels));

    DataCube cube;
    cube.channels = 1;
    cube.data.assign(kCubeVoxels, 0.0f);
    ChannelNormalization norm{mean, scale, false};
    if (scale < 1e-12) {
        norm = ChannelNormalization{mean, 1.0, true};
    } else {
        for (std::size_t i = begin; i < end; ++i) {
            cube.data[i] = static_cast<float>((values[i] - mean) / scale);
        }
    }
    cube.normalization.push_back(norm);
    return cube;
}

DataCube stack_channels(std::span<const DataCube> cubes)
{
    if (cubes.empty()) {
        throw DataError("cannot stack an empty list of cubes");
    }
    DataCube out;
    for (const auto& c : cubes) {
        if (c.channels != 1 || c.data.size() != kCubeVoxels) {
            throw DataError("stack_channels expects single-channel 224x224x25 cubes");
        }
        out.data.insert(out.data.end(), c.data.begin(), c.data.end());
        out.normalization.push_back(c.normalization.front());
    }
    out.channels = cubes.size();
    return out;
}

void write_cube(const std::filesystem::path& path, const DataCube& cube, std::string_view metadata)
{
    nlohmann::json meta = metadata.empty() ? nlohmann::json::object() : nlohmann::json::parse(metadata);
    auto& norm = meta["normalization"] = nlohmann::json::array();
    for (const auto& n : cube.normalization) {
        norm.push_back({{"mean", n.mean}, {"scale", n.scale}, {"constant", n.constant}});
    }
    VolumeHeader h;
    h.channels = static_cast<std::uint32_t>(cube.channels);
    h.dims = GridDims{kCubeWidth, kCubeHeight, kCubeSlices};
    h.type = VoxelType::float32;
    h.metadata = meta.dump();
    write_raw_volume(path, h, std::span<const float>(cube.data));
}

DataCube read_cube(const std::filesystem::path& path)
{
    RawVolume raw = read_raw_volume(path);
    if (raw.header.dims != GridDims{kCubeWidth, kCubeHeight, kCubeSlices}) {
        throw DataError(path.string() + " is not a 224x224x25 data cube");
    }
    DataCube cube;
    cube.channels = raw.header.channels;
    cube.data.assign(raw.voxels.begin(), raw.voxels.end());
    try {
        const auto meta = nlohmann::json::parse(raw.header.metadata);
        for (const auto& n : meta.at("normalization")) {
            cube.normalization.push_back(
                {n.at("mean").get<double>(), n.at("scale").get<double>(), n.at("constant").get<bool>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": bad cube metadata: " + e.what());
    }
    if (cube.normalization.size() != cube.channels) {
        throw DataError(path.string() + ": normalization records do not match channel count");
    }
    return cube;
}

} // namespace cdis
