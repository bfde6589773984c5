#pragma once

#include "cdis/cdis_core.hpp"
#include "cdis/cohort.hpp"
#include "cdis/eval_harness.hpp"
#include "cdis/phantom.hpp"
#include "cdis/radiomic_net.hpp"

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace cdis {

/// Environment variable that overrides the configured cache directory.
inline constexpr const char* kCacheDirEnv = "CDIS_CACHE_DIR";

struct PipelineConfig {
    std::filesystem::path manifest = "manifest.csv";
    std::filesystem::path cache_dir = "cache";
    std::filesystem::path output_dir = "output";
    MixingConfig mixing = MixingConfig::uniform({0.0, 100.0, 600.0, 800.0}, {1000.0, 1500.0, 2000.0});
    NetworkConfig net;
    TrainConfig train;
    std::vector<Task> tasks{Task::grading};
    std::vector<ModalitySelection> modalities{ModalitySelection{}};
    std::uint64_t seed = 0;
    double threshold = 0.5;
    std::size_t jobs = 1;

    /// Throws UsageError.
    void validate() const;

    nlohmann::json to_json() const;
    /// Missing keys keep their defaults; relative paths resolve against
    /// `base_dir`. Throws UsageError on unknown keys or bad values.
    static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

    /// Stable hash of everything that affects results (paths and job count
    /// excluded).
    std::string fingerprint() const;
};

PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Applies CDIS_CACHE_DIR when set. Flags are applied afterwards by the
/// caller so that they win.
void apply_environment(PipelineConfig& config);

/// Progress lines go to stderr unless silenced.
void set_quiet(bool quiet);
void log_line(const std::string& line);

struct StageSummary {
    std::size_t computed = 0;
    std::size_t cached = 0;
    std::vector<Exclusion> excluded;
};

/// Writes `<cache>/cdis/<patient>.vol` for every retained patient.
StageSummary cmd_synth(const PipelineConfig& config, bool force = false);

/// Writes `<cache>/cubes/<modality>/<patient>.cube` for every configured
/// modality.
StageSummary cmd_cube(const PipelineConfig& config, bool force = false);

struct LoocvRun {
    MetricsReport report;
    std::filesystem::path report_path;
};

struct LoocvSummary {
    std::vector<LoocvRun> runs;
    std::vector<ComparisonTable> tables;
};

/// Runs LOOCV for every task x modality. Writes
/// `<output>/loocv_<task>_<modality>.jsonl` and `<output>/comparison_<task>.{md,jsonl}`.
LoocvSummary cmd_loocv(const PipelineConfig& config, bool force = false);

/// Rebuilds the comparison tables from existing LOOCV reports.
std::vector<ComparisonTable> cmd_report(const PipelineConfig& config);

PhantomCohort cmd_phantom(const PipelineConfig& config, const PhantomSpec& spec, const std::filesystem::path& out_dir);

/// Manifest modalities a selection reads.
std::string required_modality(const ModalitySelection& selection);

std::filesystem::path report_path(const PipelineConfig& config, Task task, const ModalitySelection& selection);

} // namespace cdis
