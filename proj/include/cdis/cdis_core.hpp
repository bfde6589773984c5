#pragma once

#include "cdis/cohort.hpp"
#include "cdis/volume.hpp"

#include <cstddef>
#include <map>
#include <optional>
#include <vector>

namespace cdis {

/// Per-voxel monoexponential fit S(b) = S0 * exp(-b * ADC).
struct AdcFit {
    Volume3D s0;       ///< baseline signal, intensity units
    Volume3D adc;      ///< mm^2/s
    Volume3D residual; ///< RMS of the log-domain fit error
    double epsilon = 0.0;             ///< log-domain floor that was applied
    std::size_t clamped_negatives = 0; ///< negative input voxels clamped to 0
};

struct MixingConfig {
    std::vector<double> native_bvalues{0.0, 100.0, 600.0, 800.0};
    std::vector<double> synthetic_bvalues{1000.0, 1500.0, 2000.0};
    /// Weight per b-value; must cover exactly native U synthetic.
    std::map<double, double> coefficients;
    /// Log-domain floor. When unset it is derived from the study
    /// (see default_log_floor).
    std::optional<double> epsilon;

    /// Native and synthetic b-values merged, sorted, unique.
    std::vector<double> all_bvalues() const;
    double coefficient_sum() const;
    /// Throws UsageError on a malformed config.
    void validate() const;

    /// Equal weights 1/|B| over native U synthetic.
    static MixingConfig uniform(std::vector<double> native, std::vector<double> synthetic);
};

/// 1e-6 of the 99th-percentile intensity over the given volumes; 1e-6 if
/// that percentile is not positive.
double default_log_floor(const DwiStudy& study);

/// Log-linear least-squares fit of ln max(S, epsilon) against b at every
/// voxel. Negative intensities are clamped to 0 first. Requires at least two
/// b-values.
AdcFit fit_adc(const DwiStudy& study, std::optional<double> epsilon = std::nullopt);

/// S0 * exp(-b * ADC) per voxel; b must be non-negative.
Volume3D synthesize_signal(const AdcFit& fit, double b);

/// Fits the native b-values, synthesizes the configured synthetic b-values,
/// and returns the per-voxel product of max(S_b, epsilon)^rho_b over every
/// native and synthetic b-value. Negative native intensities are clamped to
/// 0; their count is stored in `clamped_negatives` when given.
Volume3D compute_cdis(const DwiStudy& study, const MixingConfig& config, std::size_t* clamped_negatives = nullptr);

/// Keeps only the listed b-values of a study (all must be present).
DwiStudy select_bvalues(const DwiStudy& study, const std::vector<double>& bvalues);

} // namespace cdis
