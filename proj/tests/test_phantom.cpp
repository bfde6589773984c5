#include "cdis/cdis_core.hpp"
#include "cdis/common.hpp"
#include "cdis/phantom.hpp"
#include "cdis/volume_io.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

using namespace cdis;

TEST_CASE("phantom spec validation")
{
    PhantomSpec s;
    s.validate();
    s.noise_sigma = -0.1;
    CHECK_THROWS_AS(s.validate(), UsageError);
    s = PhantomSpec{};
    s.class_separation = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(s.validate(), UsageError);
    s = PhantomSpec{};
    s.grid.nz = 0;
    CHECK_THROWS_AS(s.validate(), UsageError);
}

TEST_CASE("labels are balanced and reproducible")
{
    for (std::size_t n : {0u, 1u, 2u, 7u, 20u, 51u}) {
        PhantomSpec s;
        s.n_patients = n;
        s.seed = n * 3;
        const auto labels = phantom_labels(s);
        CHECK(labels.size() == n);
        std::size_t pos = 0;
        for (auto l : labels) pos += l == BinaryLabel::positive;
        CHECK(2 * pos + 1 >= n);
        CHECK(2 * pos <= n + 1);
        if (n % 2 == 0) CHECK(2 * pos == n);
        CHECK(phantom_labels(s) == labels);
    }
}

TEST_CASE("class-conditional lesion ADC difference matches the separation")
{
    PhantomSpec s;
    s.n_patients = 50;
    s.seed = 2024;
    s.class_separation = 0.0006;
    s.lesion_adc_jitter = 1e-4;
    s.grid = {16, 16, 6};
    const auto labels = phantom_labels(s);
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < s.n_patients; ++i) {
        const PhantomPatient p = generate_phantom_patient(s, i, labels[i]);
        (p.label == BinaryLabel::positive ? pos : neg).push_back(p.lesion_mean_adc);
        // the mask-based mean agrees with the planted map
        double sum = 0;
        std::size_t count = 0;
        for (std::size_t v = 0; v < p.adc.size(); ++v) {
            if (p.lesion_mask[v]) {
                sum += p.adc.data()[v];
                ++count;
            }
        }
        REQUIRE(count > 0);
        CHECK(sum / static_cast<double>(count) == doctest::Approx(p.lesion_mean_adc));
    }
    auto mean_var = [](const std::vector<double>& v) {
        double m = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double ss = 0;
        for (double x : v) ss += (x - m) * (x - m);
        return std::pair{m, ss / static_cast<double>(v.size() - 1)};
    };
    const auto [mp, vp] = mean_var(pos);
    const auto [mn, vn] = mean_var(neg);
    const double se = std::sqrt(vp / static_cast<double>(pos.size()) + vn / static_cast<double>(neg.size()));
    CHECK(se > 0.0);
    CHECK(std::abs((mn - mp) - s.class_separation) <= 3.0 * se);
    CHECK(mp < s.lesion_adc_center);
    CHECK(mn > s.lesion_adc_center);
}

TEST_CASE("noiseless phantoms: the fit recovers the planted lesion ADC")
{
    PhantomSpec s;
    s.noise_sigma = 0.0;
    s.seed = 5;
    s.grid = {24, 20, 8};
    for (std::size_t i = 0; i < 4; ++i) {
        const PhantomPatient p = generate_phantom_patient(s, i, i % 2 ? BinaryLabel::positive : BinaryLabel::negative);
        const AdcFit fit = fit_adc(make_dwi_study(s.native_bvalues, p.dwi));
        double worst = 0;
        for (std::size_t v = 0; v < p.adc.size(); ++v) {
            if (p.lesion_mask[v]) worst = std::max(worst, std::abs(fit.adc.data()[v] - p.adc.data()[v]));
        }
        CHECK(worst <= 1e-9);
    }
}

TEST_CASE("cohort on disk round-trips through cohort_io")
{
    testutil::TempDir dir("phantom");
    PhantomSpec s;
    s.n_patients = 5;
    s.seed = 7;
    s.grid = {12, 10, 4};
    const PhantomCohort c = generate_phantom_cohort(s, dir.path(), R"({"tag":1})");
    REQUIRE(c.patients.size() == 5);

    const auto grading = load_manifest(c.manifest_path, Task::grading);
    CHECK(grading.records == c.manifest.records);
    const auto pcr = load_manifest(c.manifest_path, Task::pcr);
    CHECK(pcr.records.size() == 5);
    CHECK(validate_cohort(grading).excluded.empty());

    for (std::size_t i = 0; i < 5; ++i) {
        const auto& rec = grading.records[i];
        const auto& p = c.patients[i];
        CHECK(task_label(rec, Task::grading) == p.label);
        CHECK(task_label(rec, Task::pcr) == p.label);
        const DwiStudy study = load_patient_dwi(grading, rec);
        for (std::size_t k = 0; k < s.native_bvalues.size(); ++k) CHECK(study.volumes[k] == p.dwi[k]);
        CHECK(read_volume(grading.resolve(rec.modality_paths.at("ADC")[0].path)) == p.adc);
        CHECK(read_volume(grading.resolve(rec.modality_paths.at("T2w")[0].path)) == p.s0);
        CHECK(read_volume_header(grading.resolve(rec.modality_paths.at("ADC")[0].path)).metadata == R"({"tag":1})");
    }

    std::ifstream is(c.ground_truth_path);
    const auto truth = nlohmann::json::parse(is);
    REQUIRE(truth.at("patients").size() == 5);
    const auto& first = truth.at("patients")[0];
    CHECK(first.at("patient_id") == c.patients[0].patient_id);
    CHECK(first.at("lesion_mean_adc").get<double>() == c.patients[0].lesion_mean_adc);
    CHECK(read_volume(dir.path() / first.at("truth_adc").get<std::string>()) == c.patients[0].adc);
}

TEST_CASE("same spec, same bytes")
{
    testutil::TempDir a("ph_a"), b("ph_b");
    PhantomSpec s;
    s.n_patients = 3;
    s.seed = 7;
    s.grid = {8, 8, 3};
    generate_phantom_cohort(s, a.path());
    generate_phantom_cohort(s, b.path());
    for (const auto& e : std::filesystem::recursive_directory_iterator(a.path())) {
        if (!e.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(e.path(), a.path());
        std::ifstream fa(e.path(), std::ios::binary), fb(b.path() / rel, std::ios::binary);
        const std::string ca((std::istreambuf_iterator<char>(fa)), {}), cb((std::istreambuf_iterator<char>(fb)), {});
        CHECK_MESSAGE(ca == cb, rel.string());
    }

    testutil::TempDir empty("ph_empty");
    s.n_patients = 0;
    const auto c = generate_phantom_cohort(s, empty.path());
    CHECK(c.manifest.records.empty());
    CHECK(std::filesystem::exists(c.manifest_path));
}
