#pragma once

#include "cdis/cohort.hpp"
#include "cdis/volume.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cdis {

struct PhantomSpec {
    std::size_t n_patients = 20;
    GridDims grid{32, 32, 12};
    Spacing spacing{1.5, 1.5, 4.0};
    std::vector<double> native_bvalues{0.0, 100.0, 600.0, 800.0};
    /// Difference between the class lesion mean ADCs (mm^2/s).
    double class_separation = 0.0012;
    /// Midpoint of the two class lesion means; positives sit below it.
    double lesion_adc_center = 0.0014;
    /// Per-patient spread of the lesion mean ADC (mm^2/s).
    double lesion_adc_jitter = 5e-5;
    double tissue_adc = 0.0015;
    double tissue_s0 = 1000.0;
    /// Gaussian noise standard deviation as a fraction of tissue_s0.
    double noise_sigma = 0.02;
    std::uint64_t seed = 0;

    /// Throws UsageError.
    void validate() const;
};

struct PhantomPatient {
    std::string patient_id;
    BinaryLabel label = BinaryLabel::negative;
    SbrGrade sbr_grade = SbrGrade::II;
    std::array<double, 3> lesion_center{}; ///< voxel coordinates (x, y, z)
    std::array<double, 3> lesion_radii{};  ///< voxels
    double lesion_mean_adc = 0.0;          ///< mean planted ADC over lesion voxels
    Volume3D s0;
    Volume3D adc;
    std::vector<Volume3D> dwi;             ///< one per native b-value
    std::vector<std::uint8_t> lesion_mask; ///< 1 inside the lesion

    PhantomPatient();
};

/// Class labels for the cohort: floor(n/2) positives, one extra coin flip
/// for odd n, shuffled.
std::vector<BinaryLabel> phantom_labels(const PhantomSpec& spec);

/// Builds patient `index` in memory. Noise is additive Gaussian on the
/// magnitude, clamped at 0.
PhantomPatient generate_phantom_patient(const PhantomSpec& spec, std::size_t index, BinaryLabel label);

struct PhantomCohort {
    CohortManifest manifest; ///< task = grading; every record also has a pCR label
    std::vector<PhantomPatient> patients;
    std::filesystem::path manifest_path;
    std::filesystem::path ground_truth_path;
};

/// Writes volumes, `manifest.csv` and `ground_truth.json` under `out_dir`.
/// DWI, planted ADC (as the ADC modality) and S0 (as T2w) are exported for
/// every patient. `metadata` is embedded in every volume file.
PhantomCohort generate_phantom_cohort(const PhantomSpec& spec, const std::filesystem::path& out_dir,
                                      const std::string& metadata = {});

/// Stable hash of the phantom parameters, used to tag generated files.
std::string phantom_fingerprint(const PhantomSpec& spec);

} // namespace cdis
