#include "cdis/common.hpp"
#include "cdis/standardize.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace cdis;

namespace {

struct Stats {
    double mean;
    double std;
};

Stats stats(std::span<const float> v)
{
    double s = 0.0;
    for (float x : v) s += x;
    const double mean = s / static_cast<double>(v.size());
    double ss = 0.0;
    for (float x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
}

Volume3D random_volume(GridDims g, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<double> d(g.count());
    for (auto& v : d) v = rng.uniform(0, 500);
    return Volume3D(g, {0.8, 0.8, 3.0}, std::move(d));
}

// Pixel-centre mapping from output index to source coordinate, clamped.
double source_coord(std::size_t i, std::size_t n_in, std::size_t n_out)
{
    const double u = (static_cast<double>(i) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
    return std::clamp(u, 0.0, static_cast<double>(n_in - 1));
}

} // namespace

TEST_CASE("cubes are always 224x224x25")
{
    for (GridDims g : {GridDims{1, 1, 1}, GridDims{10, 7, 3}, GridDims{300, 250, 40}, GridDims{224, 224, 25}}) {
        const DataCube c = standardize_cube(random_volume(g, g.count()));
        CHECK(c.channels == 1);
        CHECK(c.data.size() == kCubeVoxels);
        CHECK(c.normalization.size() == 1);
    }
}

TEST_CASE("bilinear resampling of a linear ramp matches the closed form")
{
    const GridDims g{112, 112, 25};
    const double a = 0.75, b = -1.25, c = 3.0;
    std::vector<double> d(g.count());
    for (std::size_t z = 0; z < g.nz; ++z)
        for (std::size_t y = 0; y < g.ny; ++y)
            for (std::size_t x = 0; x < g.nx; ++x) d[x + g.nx * (y + g.ny * z)] = a * x + b * y + c * z;
    const Volume3D ramp(g, {1.0, 1.0, 2.0}, d);

    const Volume3D up = resample_inplane(ramp, 224, 224);
    CHECK(up.spacing() == Spacing{0.5, 0.5, 2.0});
    std::vector<double> expect(kCubeVoxels);
    for (std::size_t z = 0; z < 25; ++z)
        for (std::size_t y = 0; y < 224; ++y)
            for (std::size_t x = 0; x < 224; ++x) {
                const double e = a * source_coord(x, 112, 224) + b * source_coord(y, 112, 224) + c * z;
                expect[x + 224 * (y + 224 * z)] = e;
                REQUIRE(std::abs(up.at(x, y, z) - e) <= 1e-9);
            }

    // and after z-scoring, against statistics computed here
    double mean = 0.0;
    for (double e : expect) mean += e;
    mean /= static_cast<double>(expect.size());
    double ss = 0.0;
    for (double e : expect) ss += (e - mean) * (e - mean);
    const double sd = std::sqrt(ss / static_cast<double>(expect.size()));
    const DataCube cube = standardize_cube(ramp);
    double worst = 0.0;
    for (std::size_t i = 0; i < expect.size(); ++i) worst = std::max(worst, std::abs(cube.data[i] - (expect[i] - mean) / sd));
    CHECK(worst <= 1e-6);
}

TEST_CASE("downsampling keeps constants and averages neighbours")
{
    const Volume3D flat = Volume3D::filled({17, 9, 2}, {}, 4.25);
    const Volume3D r = resample_inplane(flat, 5, 31);
    for (double v : r.data()) CHECK(v == doctest::Approx(4.25).epsilon(1e-14));
    // 2 -> 1 samples the midpoint
    const Volume3D pair({2, 1, 1}, {}, {1.0, 3.0});
    CHECK(resample_inplane(pair, 1, 1).data()[0] == doctest::Approx(2.0));
}

TEST_CASE("slice axis: centre crop and zero pad, extra slice after")
{
    const GridDims g{2, 1, 30};
    std::vector<double> d(g.count());
    for (std::size_t z = 0; z < 30; ++z) d[2 * z] = d[2 * z + 1] = static_cast<double>(z);
    const Volume3D tall(g, {}, d);
    const Volume3D cropped = fit_slices(tall, 25);
    CHECK(cropped.at(0, 0, 0) == 2.0);
    CHECK(cropped.at(1, 0, 24) == 26.0);

    const Volume3D shortv = fit_slices(Volume3D::filled({2, 1, 20}, {}, 1.0), 25);
    for (std::size_t z = 0; z < 25; ++z) CHECK(shortv.at(0, 0, z) == (z >= 2 && z < 22 ? 1.0 : 0.0));
}

TEST_CASE("normalization: whole-cube moments and exact zero padding")
{
    const Volume3D v = random_volume({40, 30, 11}, 9);
    const DataCube c = standardize_cube(v);
    const Stats s = stats(c.data);
    CHECK(std::abs(s.mean) <= 1e-5);
    CHECK(std::abs(s.std - 1.0) <= 1e-5);
    // 11 slices -> 7 before, 7 after
    const std::size_t plane = kCubeWidth * kCubeHeight;
    for (std::size_t z : {0, 6, 18, 24}) {
        for (std::size_t i = 0; i < plane; ++i) REQUIRE(c.data[z * plane + i] == 0.0f);
    }
    CHECK(c.data[7 * plane + 100] != 0.0f);
    CHECK_FALSE(c.normalization[0].constant);

    const DataCube again = standardize_cube(v);
    CHECK(again == c);
}

TEST_CASE("normalized input is left unchanged")
{
    Rng rng(4);
    std::vector<double> d(kCubeVoxels);
    for (auto& x : d) x = rng.normal();
    double mean = 0;
    for (double x : d) mean += x;
    mean /= static_cast<double>(d.size());
    double ss = 0;
    for (double& x : d) {
        x -= mean;
        ss += x * x;
    }
    const double sd = std::sqrt(ss / static_cast<double>(d.size()));
    for (double& x : d) x /= sd;
    const Volume3D v({224, 224, 25}, {}, d);
    const DataCube c = standardize_cube(v);
    double worst = 0;
    for (std::size_t i = 0; i < d.size(); ++i) worst = std::max(worst, std::abs(c.data[i] - d[i]));
    CHECK(worst <= 1e-6);
}

TEST_CASE("constant volumes become all-zero cubes")
{
    const DataCube c = standardize_cube(Volume3D::filled({50, 60, 30}, {}, 123.0));
    CHECK(c.normalization[0].constant);
    CHECK(std::all_of(c.data.begin(), c.data.end(), [](float x) { return x == 0.0f; }));
}

TEST_CASE("channel stacking")
{
    std::vector<DataCube> cubes;
    for (int k = 0; k < 4; ++k) cubes.push_back(standardize_cube(random_volume({20, 20, 5}, 100 + k)));
    const DataCube s = stack_channels(cubes);
    CHECK(s.channels == 4);
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(std::ranges::equal(s.channel(k), cubes[k].data));
        CHECK(s.normalization[k] == cubes[k].normalization[0]);
    }
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    std::vector<DataCube> permuted;
    for (auto i : perm) permuted.push_back(cubes[i]);
    const DataCube p = stack_channels(permuted);
    for (std::size_t k = 0; k < 4; ++k) CHECK(std::ranges::equal(p.channel(k), s.channel(perm[k])));

    CHECK(stack_channels(std::span(cubes.data(), 1)) == cubes[0]);
    CHECK_THROWS_AS(stack_channels({}), DataError);
    const std::vector<DataCube> nested{s, cubes[0]};
    CHECK_THROWS_AS(stack_channels(nested), DataError);
}

TEST_CASE("cubes round-trip through the cache format")
{
    testutil::TempDir dir("cube");
    std::vector<DataCube> cubes{standardize_cube(random_volume({9, 9, 4}, 1)), standardize_cube(random_volume({9, 9, 4}, 2))};
    const DataCube s = stack_channels(cubes);
    write_cube(dir / "s.cube", s, R"({"patient_id":"X"})");
    CHECK(read_cube(dir / "s.cube") == s);
}
