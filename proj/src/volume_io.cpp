#include "cdis/volume_io.hpp"

#include "cdis/common.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace cdis {

static_assert(std::endian::native == std::endian::little, "volume I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'D', 'I', 'S', 'V', 'O', 'L', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void put(std::ostream& os, const T& value)
{
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path)
{
    T value{};
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!is) {
        throw DataError("truncated volume header in " + path.string());
    }
    return value;
}

void validate_header(const VolumeHeader& h, const std::filesystem::path& path)
{
    if (h.channels == 0 || h.dims.nx == 0 || h.dims.ny == 0 || h.dims.nz == 0) {
        throw DataError("volume " + path.string() + " has a zero dimension");
    }
    if (!(h.spacing.sx > 0) || !(h.spacing.sy > 0) || !(h.spacing.sz > 0)) {
        throw DataError("volume " + path.string() + " has non-positive spacing");
    }
    if (h.type != VoxelType::float32 && h.type != VoxelType::float64) {
        throw DataError("volume " + path.string() + " has unknown voxel type");
    }
}

void write_header(std::ostream& os, const VolumeHeader& h)
{
    os.write(kMagic.data(), kMagic.size());
    put(os, kFormatVersion);
    put(os, static_cast<std::uint32_t>(h.type));
    put(os, h.channels);
    put(os, static_cast<std::uint32_t>(h.metadata.size()));
    put(os, static_cast<std::uint64_t>(h.dims.nx));
    put(os, static_cast<std::uint64_t>(h.dims.ny));
    put(os, static_cast<std::uint64_t>(h.dims.nz));
    put(os, h.spacing.sx);
    put(os, h.spacing.sy);
    put(os, h.spacing.sz);
    os.write(h.metadata.data(), static_cast<std::streamsize>(h.metadata.size()));
}

// Writes to a sibling temp file and renames, so readers never observe a
// half-written cache entry.
template <typename Src>
void write_impl(const std::filesystem::path& path, const VolumeHeader& header, std::span<const Src> voxels)
{
    validate_header(header, path);
    if (voxels.size() != header.voxel_count()) {
        throw DataError("voxel buffer size does not match header for " + path.string());
    }
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) {
            throw DataError("cannot open " + tmp.string() + " for writing");
        }
        write_header(os, header);
        if (header.type == VoxelType::float64) {
            std::vector<double> buf(voxels.begin(), voxels.end());
            os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
        } else {
            std::vector<float> buf(voxels.size());
            for (std::size_t i = 0; i < voxels.size(); ++i) {
                buf[i] = static_cast<float>(voxels[i]);
            }
            os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
        }
        if (!os) {
            throw DataError("write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

} // namespace

void write_raw_volume(const std::filesystem::path& path, const VolumeHeader& header, std::span<const double> voxels)
{
    write_impl(path, header, voxels);
}

void write_raw_volume(const std::filesystem::path& path, const VolumeHeader& header, std::span<const float> voxels)
{
    write_impl(path, header, voxels);
}

namespace {

VolumeHeader read_header(std::istream& is, const std::filesystem::path& path)
{
    std::array<char, 8> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != kMagic) {
        throw DataError(path.string() + " is not a CDISVOL file");
    }
    const auto version = get<std::uint32_t>(is, path);
    if (version != kFormatVersion) {
        throw DataError(path.string() + ": unsupported volume format version " + std::to_string(version));
    }
    VolumeHeader h;
    h.type = static_cast<VoxelType>(get<std::uint32_t>(is, path));
    h.channels = get<std::uint32_t>(is, path);
    const auto meta_len = get<std::uint32_t>(is, path);
    h.dims.nx = get<std::uint64_t>(is, path);
    h.dims.ny = get<std::uint64_t>(is, path);
    h.dims.nz = get<std::uint64_t>(is, path);
    h.spacing.sx = get<double>(is, path);
    h.spacing.sy = get<double>(is, path);
    h.spacing.sz = get<double>(is, path);
    validate_header(h, path);
    h.metadata.resize(meta_len);
    is.read(h.metadata.data(), meta_len);
    if (!is) {
        throw DataError("truncated header in " + path.string());
    }
    return h;
}

} // namespace

VolumeHeader read_volume_header(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw DataError("cannot open volume " + path.string());
    }
    return read_header(is, path);
}

RawVolume read_raw_volume(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw DataError("cannot open volume " + path.string());
    }
    RawVolume out;
    out.header = read_header(is, path);
    const VolumeHeader& h = out.header;

    const std::size_t n = h.voxel_count();
    out.voxels.resize(n);
    if (h.type == VoxelType::float64) {
        is.read(reinterpret_cast<char*>(out.voxels.data()), static_cast<std::streamsize>(n * sizeof(double)));
    } else {
        std::vector<float> buf(n);
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
        std::copy(buf.begin(), buf.end(), out.voxels.begin());
    }
    if (!is) {
        throw DataError("truncated voxel data in " + path.string());
    }
    return out;
}

void write_volume(const std::filesystem::path& path, const Volume3D& volume, std::string_view metadata)
{
    VolumeHeader h;
    h.dims = volume.dims();
    h.spacing = volume.spacing();
    h.type = VoxelType::float64;
    h.metadata = std::string(metadata);
    write_raw_volume(path, h, volume.data());
}

Volume3D read_volume(const std::filesystem::path& path)
{
    if (path.extension() == ".nii") {
        return read_nifti(path);
    }
    RawVolume raw = read_raw_volume(path);
    if (raw.header.channels != 1) {
        throw DataError(path.string() + " holds " + std::to_string(raw.header.channels)
                        + " channels; a single-channel volume was expected");
    }
    try {
        return Volume3D(raw.header.dims, raw.header.spacing, std::move(raw.voxels));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

namespace {

template <typename T>
void convert_voxels(const std::vector<char>& bytes, std::vector<double>& out)
{
    for (std::size_t i = 0; i < out.size(); ++i) {
        T v;
        std::memcpy(&v, bytes.data() + i * sizeof(T), sizeof(T));
        out[i] = static_cast<double>(v);
    }
}

} // namespace

Volume3D read_nifti(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw DataError("cannot open volume " + path.string());
    }
    std::array<char, 348> hdr{};
    is.read(hdr.data(), hdr.size());
    if (!is) {
        throw DataError(path.string() + ": truncated NIfTI header");
    }
    auto field = [&]<typename T>(std::size_t offset, T) {
        T v;
        std::memcpy(&v, hdr.data() + offset, sizeof(T));
        return v;
    };
    if (field(0, std::int32_t{}) != 348) {
        throw DataError(path.string() + ": not a little-endian NIfTI-1 file");
    }
    if (std::memcmp(hdr.data() + 344, "n+1", 4) != 0) {
        throw DataError(path.string() + ": only single-file NIfTI-1 (.nii) is supported");
    }
    const auto ndim = field(40, std::int16_t{});
    if (ndim < 1 || ndim > 7) {
        throw DataError(path.string() + ": invalid NIfTI dim[0]");
    }
    std::array<std::int64_t, 7> dim{1, 1, 1, 1, 1, 1, 1};
    for (int i = 0; i < ndim; ++i) {
        dim[static_cast<std::size_t>(i)] = field(42 + 2 * static_cast<std::size_t>(i), std::int16_t{});
    }
    for (std::size_t i = 3; i < 7; ++i) {
        if (dim[i] != 1) {
            throw DataError(path.string() + ": NIfTI volume has more than three non-trivial dimensions");
        }
    }
    for (std::size_t i = 0; i < 3; ++i) {
        if (dim[i] < 1) {
            throw DataError(path.string() + ": NIfTI volume has a non-positive dimension");
        }
    }
    const auto datatype = field(70, std::int16_t{});
    const auto pixdim = [&](std::size_t i) {
        const float p = field(76 + 4 * i, float{});
        return p > 0.0f ? static_cast<double>(p) : 1.0;
    };
    const auto vox_offset = static_cast<std::streamoff>(field(108, float{}));
    float slope = field(112, float{});
    const float inter = field(116, float{});
    if (slope == 0.0f || !std::isfinite(slope)) {
        slope = 1.0f;
    }

    const GridDims dims{static_cast<std::size_t>(dim[0]), static_cast<std::size_t>(dim[1]),
                        static_cast<std::size_t>(dim[2])};
    std::size_t bytes_per_voxel = 0;
    switch (datatype) {
    case 2: case 256: bytes_per_voxel = 1; break;
    case 4: case 512: bytes_per_voxel = 2; break;
    case 8: case 768: case 16: bytes_per_voxel = 4; break;
    case 64: bytes_per_voxel = 8; break;
    default: throw DataError(path.string() + ": unsupported NIfTI datatype " + std::to_string(datatype));
    }
    std::vector<char> bytes(dims.count() * bytes_per_voxel);
    is.seekg(vox_offset);
    is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!is) {
        throw DataError(path.string() + ": truncated NIfTI voxel data");
    }
    std::vector<double> data(dims.count());
    switch (datatype) {
    case 2: convert_voxels<std::uint8_t>(bytes, data); break;
    case 256: convert_voxels<std::int8_t>(bytes, data); break;
    case 4: convert_voxels<std::int16_t>(bytes, data); break;
    case 512: convert_voxels<std::uint16_t>(bytes, data); break;
    case 8: convert_voxels<std::int32_t>(bytes, data); break;
    case 768: convert_voxels<std::uint32_t>(bytes, data); break;
    case 16: convert_voxels<float>(bytes, data); break;
    case 64: convert_voxels<double>(bytes, data); break;
    }
    for (double& v : data) {
        v = v * static_cast<double>(slope) + static_cast<double>(inter);
    }
    try {
        return Volume3D(dims, Spacing{pixdim(1), pixdim(2), pixdim(3)}, std::move(data));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

} // namespace cdis
