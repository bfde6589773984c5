#include "cdis/cohort.hpp"

#include "cdis/common.hpp"
#include "cdis/volume_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace cdis {

namespace {

constexpr std::string_view kHeader = "patient_id,modality,bvalue,path,sbr_grade,pcr";
constexpr std::string_view kAbsent = "NA";

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

std::vector<std::string_view> split_row(std::string_view line)
{
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return cells;
}

std::string format_double(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::optional<double> parse_double(std::string_view s)
{
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        return std::nullopt;
    }
    return v;
}

struct ParsedLabel {
    bool ok = true;
    std::optional<SbrGrade> grade;
};

ParsedLabel parse_grade(std::string_view s)
{
    if (s == kAbsent) return {true, std::nullopt};
    if (s == "I" || s == "1") return {true, SbrGrade::I};
    if (s == "II" || s == "2") return {true, SbrGrade::II};
    if (s == "III" || s == "3") return {true, SbrGrade::III};
    return {false, std::nullopt};
}

std::optional<std::optional<bool>> parse_pcr(std::string_view s)
{
    if (s == kAbsent) return std::optional<bool>{};
    if (s == "1" || s == "true" || s == "yes") return std::optional<bool>{true};
    if (s == "0" || s == "false" || s == "no") return std::optional<bool>{false};
    return std::nullopt;
}

[[noreturn]] void row_error(const std::filesystem::path& path, std::size_t row, const std::string& what)
{
    throw DataError(path.string() + ": malformed row " + std::to_string(row) + ": " + what);
}

} // namespace

std::string_view to_string(Task task)
{
    return task == Task::grading ? "grading" : "pcr";
}

Task parse_task(std::string_view text)
{
    if (text == "grading") return Task::grading;
    if (text == "pcr") return Task::pcr;
    throw UsageError("unknown task '" + std::string(text) + "' (expected grading or pcr)");
}

std::string_view to_string(SbrGrade grade)
{
    switch (grade) {
    case SbrGrade::I: return "I";
    case SbrGrade::II: return "II";
    case SbrGrade::III: return "III";
    }
    return "?";
}

bool PatientRecord::has_modality(std::string_view name) const
{
    const auto it = modality_paths.find(name);
    return it != modality_paths.end() && !it->second.empty();
}

const PatientRecord* CohortManifest::find(std::string_view patient_id) const
{
    const auto it = std::find_if(records.begin(), records.end(),
                                 [&](const PatientRecord& r) { return r.patient_id == patient_id; });
    return it == records.end() ? nullptr : &*it;
}

CohortManifest load_manifest(const std::filesystem::path& path, Task task)
{
    std::ifstream is(path);
    if (!is) {
        throw DataError("manifest not found: " + path.string());
    }
    std::string line;
    std::size_t row = 0;
    bool have_header = false;
    std::vector<PatientRecord> all;
    std::set<std::string, std::less<>> closed_ids;

    while (std::getline(is, line)) {
        ++row;
        const std::string_view text = trim(line);
        if (text.empty()) {
            continue;
        }
        if (!have_header) {
            if (text != kHeader) {
                row_error(path, row, "expected header '" + std::string(kHeader) + "'");
            }
            have_header = true;
            continue;
        }
        const auto cells = split_row(text);
        if (cells.size() != 6) {
            row_error(path, row, "expected 6 columns, found " + std::to_string(cells.size()));
        }
        const std::string_view id = cells[0];
        const std::string_view mod = cells[1];
        if (id.empty()) row_error(path, row, "empty patient_id");
        if (mod.empty()) row_error(path, row, "empty modality");
        if (cells[3].empty()) row_error(path, row, "empty path");

        ModalityFile file;
        file.path = std::string(cells[3]);
        if (!cells[2].empty()) {
            const auto b = parse_double(cells[2]);
            if (!b || *b < 0.0) row_error(path, row, "invalid b-value '" + std::string(cells[2]) + "'");
            file.bvalue = *b;
        }
        if (mod == modality::dwi && !file.bvalue) {
            row_error(path, row, "DWI row requires a b-value");
        }
        if (mod != modality::dwi && file.bvalue) {
            row_error(path, row, "b-value given for non-DWI modality " + std::string(mod));
        }
        const ParsedLabel grade = parse_grade(cells[4]);
        if (!grade.ok) row_error(path, row, "invalid sbr_grade '" + std::string(cells[4]) + "'");
        const auto pcr = parse_pcr(cells[5]);
        if (!pcr) row_error(path, row, "invalid pcr '" + std::string(cells[5]) + "'");

        if (all.empty() || all.back().patient_id != id) {
            if (closed_ids.contains(id)) {
                throw DataError(path.string() + ": duplicate patient_id '" + std::string(id) + "' at row "
                                + std::to_string(row) + " (rows of a patient must be contiguous)");
            }
            if (!all.empty()) {
                closed_ids.insert(all.back().patient_id);
            }
            PatientRecord rec;
            rec.patient_id = std::string(id);
            rec.sbr_grade = grade.grade;
            rec.pcr = *pcr;
            all.push_back(std::move(rec));
        } else if (all.back().sbr_grade != grade.grade || all.back().pcr != *pcr) {
            row_error(path, row, "labels disagree with earlier rows of patient " + std::string(id));
        }
        auto& files = all.back().modality_paths[std::string(mod)];
        const bool dup = std::any_of(files.begin(), files.end(),
                                     [&](const ModalityFile& f) { return f.bvalue == file.bvalue; });
        if (dup) {
            row_error(path, row, "repeated " + std::string(mod) + " entry for patient " + std::string(id));
        }
        files.push_back(std::move(file));
    }
    if (!have_header || all.empty()) {
        throw DataError(path.string() + ": no records");
    }

    CohortManifest out;
    out.task = task;
    out.base_dir = path.parent_path();
    for (auto& rec : all) {
        if (rec.has_label(task)) {
            out.records.push_back(std::move(rec));
        }
    }
    return out;
}

void write_manifest(const CohortManifest& manifest, const std::filesystem::path& path)
{
    std::ostringstream os;
    os << kHeader << '\n';
    for (const auto& rec : manifest.records) {
        const std::string grade = rec.sbr_grade ? std::string(to_string(*rec.sbr_grade)) : std::string(kAbsent);
        const std::string pcr = rec.pcr ? (*rec.pcr ? "1" : "0") : std::string(kAbsent);
        for (const auto& [mod, files] : rec.modality_paths) {
            for (const auto& f : files) {
                if (f.path.find(',') != std::string::npos) {
                    throw DataError("path contains the manifest delimiter: " + f.path);
                }
                os << rec.patient_id << ',' << mod << ',' << (f.bvalue ? format_double(*f.bvalue) : "") << ','
                   << f.path << ',' << grade << ',' << pcr << '\n';
            }
        }
    }
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw DataError("cannot write manifest " + path.string());
    }
    out << os.str();
}

std::span<const std::string> default_required_modalities()
{
    static const std::vector<std::string> required{std::string(modality::dwi)};
    return required;
}

ValidationResult validate_cohort(const CohortManifest& manifest, std::span<const std::string> required_modalities)
{
    ValidationResult result;
    result.retained.task = manifest.task;
    result.retained.base_dir = manifest.base_dir;
    for (const auto& rec : manifest.records) {
        Exclusion ex{rec.patient_id, {}};
        if (!rec.has_label(manifest.task)) {
            ex.reasons.push_back(manifest.task == Task::grading ? "missing label: sbr_grade" : "missing label: pcr");
        }
        for (const auto& mod : required_modalities) {
            if (!rec.has_modality(mod)) {
                ex.reasons.push_back("missing modality: " + mod);
            }
        }
        if (ex.reasons.empty()) {
            result.retained.records.push_back(rec);
        } else {
            result.excluded.push_back(std::move(ex));
        }
    }
    return result;
}

BinaryLabel binarize_grade(std::optional<SbrGrade> grade)
{
    if (!grade) {
        throw DataError("cannot binarize an absent SBR grade");
    }
    return *grade == SbrGrade::III ? BinaryLabel::positive : BinaryLabel::negative;
}

BinaryLabel task_label(const PatientRecord& record, Task task)
{
    if (task == Task::grading) {
        if (!record.sbr_grade) {
            throw DataError("patient " + record.patient_id + " has no SBR grade");
        }
        return binarize_grade(record.sbr_grade);
    }
    if (!record.pcr) {
        throw DataError("patient " + record.patient_id + " has no pCR label");
    }
    return *record.pcr ? BinaryLabel::positive : BinaryLabel::negative;
}

const Volume3D& DwiStudy::at_bvalue(double b) const
{
    for (std::size_t i = 0; i < bvalues.size(); ++i) {
        if (bvalues[i] == b) {
            return volumes[i];
        }
    }
    throw DataError("b-value " + format_double(b) + " not present in DWI study");
}

bool DwiStudy::has_bvalue(double b) const
{
    return std::find(bvalues.begin(), bvalues.end(), b) != bvalues.end();
}

DwiStudy make_dwi_study(std::vector<double> bvalues, std::vector<Volume3D> volumes)
{
    if (bvalues.size() != volumes.size()) {
        throw DataError("DWI study needs one volume per b-value");
    }
    if (bvalues.empty()) {
        throw DataError("DWI study needs at least one volume");
    }
    for (double b : bvalues) {
        if (!(b >= 0.0) || !std::isfinite(b)) {
            throw DataError("b-values must be finite and non-negative");
        }
    }
    std::vector<std::size_t> order(bvalues.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return bvalues[a] < bvalues[b]; });

    DwiStudy study;
    for (std::size_t idx : order) {
        if (!study.bvalues.empty() && study.bvalues.back() == bvalues[idx]) {
            throw DataError("duplicate b-value " + format_double(bvalues[idx]) + " in DWI study");
        }
        if (!study.volumes.empty() && !study.volumes.front().same_grid(volumes[idx])) {
            throw DataError("grid mismatch between DWI volumes at b=" + format_double(study.bvalues.front())
                            + " and b=" + format_double(bvalues[idx]));
        }
        study.bvalues.push_back(bvalues[idx]);
        study.volumes.push_back(std::move(volumes[idx]));
    }
    return study;
}

DwiStudy load_dwi_study(std::span<const std::filesystem::path> paths, std::span<const double> bvalues)
{
    if (paths.size() != bvalues.size()) {
        throw DataError("load_dwi_study: " + std::to_string(paths.size()) + " paths but "
                        + std::to_string(bvalues.size()) + " b-values");
    }
    std::vector<Volume3D> volumes;
    volumes.reserve(paths.size());
    for (const auto& p : paths) {
        volumes.push_back(read_volume(p));
    }
    return make_dwi_study(std::vector<double>(bvalues.begin(), bvalues.end()), std::move(volumes));
}

DwiStudy load_patient_dwi(const CohortManifest& manifest, const PatientRecord& record)
{
    const auto it = record.modality_paths.find(modality::dwi);
    if (it == record.modality_paths.end() || it->second.empty()) {
        throw DataError("patient " + record.patient_id + ": no DWI entries in manifest");
    }
    std::vector<std::filesystem::path> paths;
    std::vector<double> bvalues;
    for (const auto& f : it->second) {
        paths.push_back(manifest.resolve(f.path));
        bvalues.push_back(f.bvalue.value_or(0.0));
    }
    try {
        return load_dwi_study(paths, bvalues);
    } catch (const DataError& e) {
        throw DataError("patient " + record.patient_id + ": " + e.what());
    }
}

} // namespace cdis
