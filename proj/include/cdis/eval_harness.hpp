#pragma once

#include "cdis/cohort.hpp"
#include "cdis/radiomic_net.hpp"
#include "cdis/standardize.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cdis {

/// Which image series feeds the network.
struct ModalitySelection {
    enum class Kind { cdis, adc, t2w, dwi_stacked, dwi_single };

    Kind kind = Kind::cdis;
    double bvalue = 0.0; ///< dwi_single only

    /// Command-line key: CDIs, ADC, T2w, DWI-stacked, DWI-b<value>.
    std::string key() const;
    /// Table label, e.g. "DWI (b=800)". `stacked_bvalues` fills in the
    /// stacked DWI label.
    std::string label(std::span<const double> stacked_bvalues = {}) const;

    static ModalitySelection parse(std::string_view key);
    bool operator==(const ModalitySelection&) const = default;
};

struct FoldResult {
    std::string patient_id;
    BinaryLabel true_label = BinaryLabel::negative;
    BinaryLabel predicted_label = BinaryLabel::negative;
    double probability = 0.0;
};

/// What a fold trained on, for leakage auditing.
struct FoldAudit {
    std::string held_out;
    std::vector<std::string> training_ids;
    std::uint64_t weights_checksum = 0;
    std::vector<double> loss_trajectory;
    bool single_class_training = false;
};

struct MetricsReport {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;
    double accuracy = 0.0;              ///< percent
    std::optional<double> sensitivity;  ///< percent; absent when tp + fn == 0
    std::optional<double> specificity;  ///< percent; absent when tn + fp == 0
    Task task = Task::grading;
    std::string modality;               ///< table label
    std::string config_fingerprint;

    std::size_t total() const { return tp + fp + tn + fn; }
    std::size_t positives() const { return tp + fn; }
    std::size_t negatives() const { return tn + fp; }
};

/// Percentage with two decimals, or "N/A".
std::string format_percent(std::optional<double> value);

/// Confusion counts and rates (positive class = label positive).
MetricsReport compute_metrics(std::span<const FoldResult> results, Task task = Task::grading,
                              std::string modality = {}, std::string config_fingerprint = {});

struct Sample {
    std::string patient_id;
    DataCube cube;
    BinaryLabel label = BinaryLabel::negative;
};

struct LoocvSettings {
    Task task = Task::grading;
    std::string modality_label;
    NetworkConfig net;
    TrainConfig train;
    std::uint64_t seed = 0;
    double threshold = 0.5;
    std::size_t jobs = 1;
    std::string config_fingerprint;
};

struct FoldOutcome {
    FoldResult result;
    FoldAudit audit;
};

/// Trains on every sample except `held_out` and predicts it. Network and
/// training seeds are `settings.seed ^ held_out`.
FoldOutcome run_fold(std::span<const Sample> samples, std::size_t held_out, const LoocvSettings& settings);

struct LoocvResult {
    std::vector<FoldResult> folds;  ///< in sample order
    std::vector<FoldAudit> audits;  ///< in sample order
    MetricsReport report;
};

/// Leave-one-out cross-validation; requires >= 2 samples covering both
/// classes. Folds run on up to `settings.jobs` threads.
LoocvResult run_loocv(std::span<const Sample> samples, const LoocvSettings& settings);

struct ComparisonRow {
    MetricsReport report;
    bool best = false;
};

struct ComparisonTable {
    Task task = Task::grading;
    std::vector<ComparisonRow> rows; ///< accuracy descending, ties in input order; first row flagged
};

/// Throws DataError on an empty list or mixed tasks.
ComparisonTable compare_modalities(std::span<const MetricsReport> reports);

/// Human-readable table. Grading tables list accuracy, sensitivity and
/// specificity; pCR tables list accuracy only.
std::string render_table(const ComparisonTable& table);

/// One JSON object per row.
std::string render_table_jsonl(const ComparisonTable& table);

} // namespace cdis
