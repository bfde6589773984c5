#pragma once

#include "cdis/volume.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cdis {

enum class Task { grading, pcr };
enum class SbrGrade { I, II, III };
enum class Timepoint { T0 };
enum class BinaryLabel { negative = 0, positive = 1 };

std::string_view to_string(Task task);
Task parse_task(std::string_view text);
std::string_view to_string(SbrGrade grade);

inline int as_int(BinaryLabel label) { return label == BinaryLabel::positive ? 1 : 0; }
inline BinaryLabel flip(BinaryLabel label)
{
    return label == BinaryLabel::positive ? BinaryLabel::negative : BinaryLabel::positive;
}

/// Modality names used in manifests.
namespace modality {
inline constexpr std::string_view dwi = "DWI";
inline constexpr std::string_view adc = "ADC";
inline constexpr std::string_view t2w = "T2w";
inline constexpr std::string_view cdis = "CDIs";
} // namespace modality

struct ModalityFile {
    std::optional<double> bvalue; ///< set for DWI entries only
    std::string path;             ///< as written in the manifest, relative to its directory

    bool operator==(const ModalityFile&) const = default;
};

struct PatientRecord {
    std::string patient_id;
    std::map<std::string, std::vector<ModalityFile>, std::less<>> modality_paths;
    std::optional<SbrGrade> sbr_grade;
    std::optional<bool> pcr;
    Timepoint timepoint = Timepoint::T0;

    bool has_label(Task task) const { return task == Task::grading ? sbr_grade.has_value() : pcr.has_value(); }
    bool has_modality(std::string_view name) const;

    bool operator==(const PatientRecord&) const = default;
};

struct CohortManifest {
    std::vector<PatientRecord> records;
    Task task = Task::grading;
    /// Directory that relative modality paths are resolved against.
    std::filesystem::path base_dir;

    std::filesystem::path resolve(const std::string& relative) const { return base_dir / relative; }
    const PatientRecord* find(std::string_view patient_id) const;
};

/// Loads a manifest and keeps exactly the records that carry a label for
/// `task`, in file order.
///
/// Format: UTF-8 CSV with the header
/// `patient_id,modality,bvalue,path,sbr_grade,pcr` and one row per modality
/// file. A patient's rows must be contiguous and repeat the same labels.
/// Absent labels are written as `NA`; `bvalue` is blank except for DWI rows.
CohortManifest load_manifest(const std::filesystem::path& path, Task task);

void write_manifest(const CohortManifest& manifest, const std::filesystem::path& path);

struct Exclusion {
    std::string patient_id;
    std::vector<std::string> reasons; ///< every failing check is listed
};

struct ValidationResult {
    CohortManifest retained;
    std::vector<Exclusion> excluded;
};

/// {"DWI"}: every downstream modality is derivable from, or paired with, DWI.
std::span<const std::string> default_required_modalities();

/// Drops records that lack the task label or an entry for any required
/// modality. File existence is not checked here; loaders report missing
/// files with patient context.
ValidationResult validate_cohort(const CohortManifest& manifest,
                                 std::span<const std::string> required_modalities = default_required_modalities());

/// Grade III is positive; grades I and II merge into the negative class.
BinaryLabel binarize_grade(std::optional<SbrGrade> grade);

/// Binary target for `task`; throws DataError when the label is absent.
BinaryLabel task_label(const PatientRecord& record, Task task);

struct DwiStudy {
    std::vector<double> bvalues; ///< strictly increasing, s/mm^2
    std::vector<Volume3D> volumes;

    const Volume3D& at_bvalue(double b) const;
    bool has_bvalue(double b) const;
};

/// Sorts by b-value and checks uniqueness, non-negativity and that every
/// volume shares one grid.
DwiStudy make_dwi_study(std::vector<double> bvalues, std::vector<Volume3D> volumes);

DwiStudy load_dwi_study(std::span<const std::filesystem::path> paths, std::span<const double> bvalues);

/// Loads the DWI entries of one manifest record; errors name the patient.
DwiStudy load_patient_dwi(const CohortManifest& manifest, const PatientRecord& record);

} // namespace cdis
