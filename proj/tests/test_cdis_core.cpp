#include "cdis/cdis_core.hpp"
#include "cdis/common.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace cdis;
using testutil::rel_diff;

namespace {

const std::vector<double> kNative{0, 100, 600, 800};

DwiStudy mono_study(GridDims g, const std::vector<double>& s0, const std::vector<double>& adc,
                    const std::vector<double>& bvalues = kNative)
{
    std::vector<Volume3D> vols;
    for (double b : bvalues) {
        std::vector<double> d(g.count());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = s0[i] * std::exp(-b * adc[i]);
        vols.emplace_back(g, Spacing{}, std::move(d));
    }
    return make_dwi_study(bvalues, std::move(vols));
}

// Closed-form simple regression through Cramer's rule on the raw sums.
struct LineFit {
    double intercept;
    double slope;
};

LineFit cramer_fit(const std::vector<double>& x, const std::vector<double>& y)
{
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        sx += x[k];
        sy += y[k];
        sxx += x[k] * x[k];
        sxy += x[k] * y[k];
    }
    const double det = n * sxx - sx * sx;
    return {(sy * sxx - sx * sxy) / det, (n * sxy - sx * sy) / det};
}

} // namespace

TEST_CASE("fit_adc: constant signal")
{
    const GridDims g{3, 2, 2};
    const auto fit = fit_adc(mono_study(g, std::vector<double>(12, 1.0), std::vector<double>(12, 0.0)));
    for (std::size_t i = 0; i < g.count(); ++i) {
        CHECK(std::abs(fit.adc.data()[i]) <= 1e-15);
        CHECK(std::abs(fit.s0.data()[i] - 1.0) <= 1e-12);
        CHECK(std::abs(fit.residual.data()[i]) <= 1e-12);
    }
}

TEST_CASE("fit_adc: exact monoexponential")
{
    const GridDims g{2, 2, 1};
    const auto fit = fit_adc(mono_study(g, std::vector<double>(4, 2.0), std::vector<double>(4, 0.002)));
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::abs(fit.s0.data()[i] - 2.0) <= 1e-12);
        CHECK(std::abs(fit.adc.data()[i] - 0.002) <= 1e-15);
        CHECK(fit.residual.data()[i] <= 1e-9);
    }

    Rng rng(5);
    const GridDims h{5, 4, 3};
    std::vector<double> s0(h.count()), adc(h.count());
    for (std::size_t i = 0; i < s0.size(); ++i) {
        s0[i] = rng.uniform(50, 2000);
        adc[i] = rng.uniform(0.0002, 0.003);
    }
    const auto study = mono_study(h, s0, adc);
    const auto f = fit_adc(study);
    for (std::size_t i = 0; i < s0.size(); ++i) {
        CHECK(std::abs(f.adc.data()[i] - adc[i]) <= 1e-12);
        CHECK(rel_diff(f.s0.data()[i], s0[i]) <= 1e-10);
        CHECK(f.residual.data()[i] <= 1e-9);
    }
    // synthesizing at a native b reproduces the native volume
    for (double b : kNative) {
        const auto syn = synthesize_signal(f, b);
        for (std::size_t i = 0; i < s0.size(); ++i) CHECK(rel_diff(syn.data()[i], study.at_bvalue(b).data()[i]) <= 1e-9);
    }
}

TEST_CASE("fit_adc matches the normal-equation oracle on noisy data")
{
    Rng rng(17);
    const GridDims g{6, 5, 4};
    std::vector<Volume3D> vols;
    for (double b : kNative) {
        std::vector<double> d(g.count());
        for (auto& v : d) v = std::max(0.0, 800.0 * std::exp(-b * 0.0015) + 40.0 * rng.normal());
        vols.emplace_back(g, Spacing{}, std::move(d));
    }
    // a few all-zero columns exercise the floor
    for (auto& v : vols) v.mutable_data()[7] = 0.0;
    const DwiStudy study = make_dwi_study(kNative, vols);
    const double eps = default_log_floor(study);
    const auto fit = fit_adc(study);
    CHECK(fit.epsilon == eps);
    for (std::size_t i = 0; i < g.count(); ++i) {
        std::vector<double> y;
        for (const auto& v : study.volumes) y.push_back(std::log(std::max(v.data()[i], eps)));
        const LineFit ref = cramer_fit(kNative, y);
        CHECK(rel_diff(fit.adc.data()[i], -ref.slope) <= 1e-10);
        CHECK(rel_diff(std::log(fit.s0.data()[i]), ref.intercept) <= 1e-10);
    }
    CHECK(fit.adc.data()[7] == 0.0);
    CHECK(fit.s0.data()[7] == doctest::Approx(eps));
}

TEST_CASE("fit_adc: floors, clamping and preconditions")
{
    const GridDims g{2, 1, 1};
    std::vector<Volume3D> vols{Volume3D(g, {}, {-5.0, 100.0}), Volume3D(g, {}, {10.0, 50.0})};
    const auto fit = fit_adc(make_dwi_study({0, 500}, vols));
    CHECK(fit.clamped_negatives == 1);

    CHECK_THROWS_AS(fit_adc(make_dwi_study({0}, {Volume3D::filled(g, {}, 1.0)})), DataError);
    CHECK_THROWS_AS(fit_adc(make_dwi_study({0, 500}, vols), 0.0), UsageError);

    // nearest-rank 99th percentile; all-zero data falls back to 1e-6
    const DwiStudy zeros = make_dwi_study({0, 100}, {Volume3D::filled(g, {}, 0.0), Volume3D::filled(g, {}, 0.0)});
    CHECK(default_log_floor(zeros) == 1e-6);
    std::vector<double> ramp(100);
    std::iota(ramp.begin(), ramp.end(), 1.0);
    const DwiStudy r = make_dwi_study({0}, {Volume3D({100, 1, 1}, {}, ramp)});
    CHECK(default_log_floor(r) == doctest::Approx(99e-6));
}

TEST_CASE("synthesize_signal closed forms")
{
    const GridDims g{2, 1, 1};
    AdcFit fit{Volume3D(g, {}, {2.0, 3.0}), Volume3D(g, {}, {0.002, 0.0}), Volume3D::filled(g, {}, 0.0), 1e-6, 0};
    CHECK(synthesize_signal(fit, 0.0) == fit.s0);
    const auto s = synthesize_signal(fit, 1000.0);
    CHECK(s.data()[0] == doctest::Approx(0.27067056647322535).epsilon(1e-14));
    CHECK(s.data()[1] == 3.0);
    CHECK_THROWS_AS(synthesize_signal(fit, -1.0), UsageError);
}

TEST_CASE("mixing config validation")
{
    auto m = MixingConfig::uniform(kNative, {1000, 1500, 2000});
    CHECK(m.all_bvalues().size() == 7);
    CHECK(m.coefficient_sum() == doctest::Approx(1.0));
    m.validate();
    auto missing = m;
    missing.coefficients.erase(1500.0);
    CHECK_THROWS_AS(missing.validate(), UsageError);
    auto extra = m;
    extra.coefficients[3000.0] = 0.1;
    CHECK_THROWS_AS(extra.validate(), UsageError);
    auto bad_eps = m;
    bad_eps.epsilon = 0.0;
    CHECK_THROWS_AS(bad_eps.validate(), UsageError);
}

TEST_CASE("compute_cdis: identities")
{
    Rng rng(3);
    const GridDims g{4, 3, 2};
    std::vector<double> s0(g.count()), adc(g.count());
    for (std::size_t i = 0; i < s0.size(); ++i) {
        s0[i] = rng.uniform(100, 1000);
        adc[i] = rng.uniform(0.0005, 0.0025);
    }
    const DwiStudy study = mono_study(g, s0, adc);

    SUBCASE("single b-value with weight 1 returns the native signal")
    {
        MixingConfig m;
        m.native_bvalues = {800};
        m.synthetic_bvalues = {};
        m.coefficients = {{800.0, 1.0}};
        const auto out = compute_cdis(study, m);
        for (std::size_t i = 0; i < s0.size(); ++i) CHECK(rel_diff(out.data()[i], study.at_bvalue(800).data()[i]) <= 1e-12);
    }
    SUBCASE("constant signal is a fixed point")
    {
        const DwiStudy c = mono_study(g, std::vector<double>(g.count(), 7.5), std::vector<double>(g.count(), 0.0));
        const auto out = compute_cdis(c, MixingConfig::uniform(kNative, {1000, 1500, 2000}));
        for (double v : out.data()) CHECK(rel_diff(v, 7.5) <= 1e-12);
    }
    SUBCASE("native b-value absent from the study")
    {
        const auto m = MixingConfig::uniform({0, 100, 600, 900}, {1000});
        CHECK_THROWS_AS(compute_cdis(study, m), DataError);
    }
    SUBCASE("missing coefficient")
    {
        auto m = MixingConfig::uniform(kNative, {1000});
        m.coefficients.erase(1000.0);
        CHECK_THROWS_AS(compute_cdis(study, m), UsageError);
    }
}

TEST_CASE("compute_cdis on a 2x2x1 grid matches a scalar per-voxel product")
{
    // S0 and ADC given per voxel; DWI generated from them.
    const GridDims g{2, 2, 1};
    const std::vector<double> s0{1000.0, 450.0, 1.0, 0.0};
    const std::vector<double> adc{0.0011, 0.0023, 0.0, 0.0015};
    const DwiStudy study = mono_study(g, s0, adc);
    const auto cfg = MixingConfig::uniform(kNative, {1000, 1500, 2000});
    const auto out = compute_cdis(study, cfg);
    const double eps = default_log_floor(study);

    const std::vector<double> bs{0, 100, 600, 800, 1000, 1500, 2000};
    for (std::size_t v = 0; v < 4; ++v) {
        std::vector<double> y;
        for (double b : kNative) y.push_back(std::log(std::max(s0[v] * std::exp(-b * adc[v]), eps)));
        const LineFit line = cramer_fit(kNative, y);
        double prod = 1.0;
        for (double b : bs) {
            double s;
            if (b <= 800) s = s0[v] * std::exp(-b * adc[v]);
            else s = std::exp(line.intercept + line.slope * b);
            prod *= std::pow(std::max(s, eps), 1.0 / 7.0);
        }
        CHECK(rel_diff(out.data()[v], prod) <= 1e-9);
    }
    CHECK(out.data()[0] == doctest::Approx(1000.0 * std::exp(-0.0011 * 6000.0 / 7.0)).epsilon(1e-9));
}

TEST_CASE("compute_cdis properties")
{
    Rng rng(23);
    const GridDims g{5, 4, 3};
    std::vector<Volume3D> vols;
    for (double b : kNative) {
        std::vector<double> d(g.count());
        for (auto& v : d) v = std::max(0.0, 500.0 * std::exp(-b * 0.0014) + 30.0 * rng.normal());
        vols.emplace_back(g, Spacing{}, std::move(d));
    }
    const DwiStudy study = make_dwi_study(kNative, vols);
    auto cfg = MixingConfig::uniform(kNative, {1000, 1500, 2000});
    cfg.epsilon = 1e-4;
    const auto base = compute_cdis(study, cfg);

    SUBCASE("k-scaling equivariance")
    {
        // the derived floor is a percentile of the data, so it scales too
        auto derived = cfg;
        derived.epsilon.reset();
        const auto ref = compute_cdis(study, derived);
        for (double k : {0.37, 3.0, 1234.5}) {
            std::vector<Volume3D> scaled = vols;
            for (auto& v : scaled)
                for (double& x : v.mutable_data()) x *= k;
            const auto out = compute_cdis(make_dwi_study(kNative, scaled), derived);
            for (std::size_t i = 0; i < g.count(); ++i) CHECK(rel_diff(out.data()[i], k * ref.data()[i]) <= 1e-9);
        }
    }
    SUBCASE("voxel permutation")
    {
        std::vector<std::size_t> perm(g.count());
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm.begin(), perm.end());
        std::vector<Volume3D> permuted;
        for (const auto& v : vols) {
            std::vector<double> d(g.count());
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = v.data()[perm[i]];
            permuted.emplace_back(g, Spacing{}, std::move(d));
        }
        const auto out = compute_cdis(make_dwi_study(kNative, permuted), cfg);
        for (std::size_t i = 0; i < g.count(); ++i) CHECK(out.data()[i] == base.data()[perm[i]]);
    }
    SUBCASE("bounded below by the floor and finite")
    {
        const double bound = std::pow(*cfg.epsilon, cfg.coefficient_sum());
        for (double v : base.data()) {
            CHECK(std::isfinite(v));
            CHECK(v >= bound * (1 - 1e-12));
        }
    }
}
