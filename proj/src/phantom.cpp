#include "cdis/phantom.hpp"

#include "cdis/common.hpp"
#include "cdis/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace cdis {

namespace {

std::string patient_id(std::size_t index)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "PH%04zu", index + 1);
    return buf;
}

std::string bname(double b)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", b);
    return buf;
}

nlohmann::json spec_json(const PhantomSpec& s)
{
    return {{"n_patients", s.n_patients},
            {"grid", {s.grid.nx, s.grid.ny, s.grid.nz}},
            {"spacing", {s.spacing.sx, s.spacing.sy, s.spacing.sz}},
            {"native_bvalues", s.native_bvalues},
            {"class_separation", s.class_separation},
            {"lesion_adc_center", s.lesion_adc_center},
            {"lesion_adc_jitter", s.lesion_adc_jitter},
            {"tissue_adc", s.tissue_adc},
            {"tissue_s0", s.tissue_s0},
            {"noise_sigma", s.noise_sigma},
            {"seed", s.seed}};
}

} // namespace

void PhantomSpec::validate() const
{
    if (grid.nx == 0 || grid.ny == 0 || grid.nz == 0) throw UsageError("phantom grid dims must be >= 1");
    if (native_bvalues.empty()) throw UsageError("phantom needs at least one b-value");
    const auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
    if (!finite_nonneg(class_separation)) throw UsageError("class_separation must be finite and >= 0");
    if (!finite_nonneg(noise_sigma)) throw UsageError("noise_sigma must be finite and >= 0");
    if (!finite_nonneg(lesion_adc_jitter)) throw UsageError("lesion_adc_jitter must be finite and >= 0");
    if (!finite_nonneg(tissue_adc) || !finite_nonneg(lesion_adc_center)) throw UsageError("ADC values must be >= 0");
    if (!(tissue_s0 > 0.0) || !std::isfinite(tissue_s0)) throw UsageError("tissue_s0 must be positive");
    for (double b : native_bvalues) {
        if (!finite_nonneg(b)) throw UsageError("phantom b-values must be finite and >= 0");
    }
}

PhantomPatient::PhantomPatient()
    : s0(Volume3D::filled({1, 1, 1}, {}, 0.0)), adc(Volume3D::filled({1, 1, 1}, {}, 0.0))
{
}

std::vector<BinaryLabel> phantom_labels(const PhantomSpec& spec)
{
    Rng rng(splitmix64(spec.seed ^ 0x6c6162656c73ULL));
    const std::size_t n = spec.n_patients;
    std::size_t positives = n / 2;
    if (n % 2 == 1 && rng.uniform() < 0.5) ++positives;
    std::vector<BinaryLabel> labels(n, BinaryLabel::negative);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(positives), BinaryLabel::positive);
    rng.shuffle(labels.begin(), labels.end());
    return labels;
}

PhantomPatient generate_phantom_patient(const PhantomSpec& spec, std::size_t index, BinaryLabel label)
{
    spec.validate();
    Rng rng(splitmix64(spec.seed ^ splitmix64(static_cast<std::uint64_t>(index) + 1)));
    const GridDims g = spec.grid;
    const auto fx = static_cast<double>(g.nx);
    const auto fy = static_cast<double>(g.ny);
    const auto fz = static_cast<double>(g.nz);

    PhantomPatient p;
    p.patient_id = patient_id(index);
    p.label = label;
    p.sbr_grade = label == BinaryLabel::positive ? SbrGrade::III : (rng.uniform() < 5.0 / 77.0 ? SbrGrade::I : SbrGrade::II);

    p.lesion_center = {rng.uniform(0.35, 0.65) * fx, rng.uniform(0.35, 0.65) * fy, rng.uniform(0.4, 0.6) * fz};
    p.lesion_radii = {std::max(1.5, rng.uniform(0.12, 0.2) * fx), std::max(1.5, rng.uniform(0.12, 0.2) * fy),
                      std::max(1.0, rng.uniform(0.25, 0.35) * fz)};
    const double sign = label == BinaryLabel::positive ? -1.0 : 1.0;
    const double lesion_adc =
        std::max(0.0, spec.lesion_adc_center + sign * 0.5 * spec.class_separation + spec.lesion_adc_jitter * rng.normal());
    const double body_phase = rng.uniform(0.0, 6.283185307179586);

    std::vector<double> s0(g.count(), 0.0);
    std::vector<double> adc(g.count(), 0.0);
    p.lesion_mask.assign(g.count(), 0);
    double lesion_sum = 0.0;
    std::size_t lesion_count = 0;
    for (std::size_t z = 0; z < g.nz; ++z) {
        for (std::size_t y = 0; y < g.ny; ++y) {
            for (std::size_t x = 0; x < g.nx; ++x) {
                const double cx = static_cast<double>(x) + 0.5;
                const double cy = static_cast<double>(y) + 0.5;
                const double cz = static_cast<double>(z) + 0.5;
                const std::size_t i = x + g.nx * (y + g.ny * z);
                // body: elliptic cylinder filling most of the slice
                const double bx = (cx - 0.5 * fx) / (0.46 * fx);
                const double by = (cy - 0.5 * fy) / (0.46 * fy);
                if (bx * bx + by * by > 1.0) continue;
                s0[i] = spec.tissue_s0 * (1.0 + 0.05 * std::sin(6.0 * cx / fx + body_phase) * std::cos(5.0 * cy / fy));
                adc[i] = spec.tissue_adc;
                const double lx = (cx - p.lesion_center[0]) / p.lesion_radii[0];
                const double ly = (cy - p.lesion_center[1]) / p.lesion_radii[1];
                const double lz = (cz - p.lesion_center[2]) / p.lesion_radii[2];
                if (lx * lx + ly * ly + lz * lz <= 1.0) {
                    s0[i] = 1.2 * spec.tissue_s0;
                    adc[i] = lesion_adc;
                    p.lesion_mask[i] = 1;
                    lesion_sum += lesion_adc;
                    ++lesion_count;
                }
            }
        }
    }
    p.lesion_mean_adc = lesion_count ? lesion_sum / static_cast<double>(lesion_count) : lesion_adc;
    p.s0 = Volume3D(g, spec.spacing, std::move(s0));
    p.adc = Volume3D(g, spec.spacing, std::move(adc));

    const double sigma = spec.noise_sigma * spec.tissue_s0;
    for (double b : spec.native_bvalues) {
        std::vector<double> s(g.count());
        for (std::size_t i = 0; i < s.size(); ++i) {
            double v = p.s0.data()[i] * std::exp(-b * p.adc.data()[i]);
            if (sigma > 0.0) v += sigma * rng.normal();
            s[i] = std::max(v, 0.0);
        }
        p.dwi.emplace_back(g, spec.spacing, std::move(s));
    }
    return p;
}

std::string phantom_fingerprint(const PhantomSpec& spec)
{
    return to_hex(fnv1a64(spec_json(spec).dump()));
}

PhantomCohort generate_phantom_cohort(const PhantomSpec& spec, const std::filesystem::path& out_dir,
                                      const std::string& metadata)
{
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    PhantomCohort cohort;
    cohort.manifest.task = Task::grading;
    cohort.manifest.base_dir = out_dir;
    cohort.manifest_path = out_dir / "manifest.csv";
    cohort.ground_truth_path = out_dir / "ground_truth.json";

    nlohmann::json truth{{"tool_version", kToolVersion},
                         {"phantom_fingerprint", phantom_fingerprint(spec)},
                         {"spec", spec_json(spec)},
                         {"patients", nlohmann::json::array()}};

    const auto labels = phantom_labels(spec);
    for (std::size_t i = 0; i < spec.n_patients; ++i) {
        PhantomPatient p = generate_phantom_patient(spec, i, labels[i]);
        const std::string dir = "volumes/" + p.patient_id + "/";
        PatientRecord rec;
        rec.patient_id = p.patient_id;
        rec.sbr_grade = p.sbr_grade;
        rec.pcr = p.label == BinaryLabel::positive;
        for (std::size_t k = 0; k < spec.native_bvalues.size(); ++k) {
            const std::string rel = dir + "dwi_b" + bname(spec.native_bvalues[k]) + ".vol";
            write_volume(out_dir / rel, p.dwi[k], metadata);
            rec.modality_paths[std::string(modality::dwi)].push_back({spec.native_bvalues[k], rel});
        }
        write_volume(out_dir / (dir + "adc.vol"), p.adc, metadata);
        rec.modality_paths[std::string(modality::adc)].push_back({std::nullopt, dir + "adc.vol"});
        write_volume(out_dir / (dir + "t2w.vol"), p.s0, metadata);
        rec.modality_paths[std::string(modality::t2w)].push_back({std::nullopt, dir + "t2w.vol"});
        write_volume(out_dir / (dir + "truth_s0.vol"), p.s0, metadata);
        write_volume(out_dir / (dir + "truth_adc.vol"), p.adc, metadata);

        truth["patients"].push_back({{"patient_id", p.patient_id},
                                     {"label", as_int(p.label)},
                                     {"sbr_grade", to_string(p.sbr_grade)},
                                     {"pcr", p.label == BinaryLabel::positive},
                                     {"lesion_center", p.lesion_center},
                                     {"lesion_radii", p.lesion_radii},
                                     {"lesion_mean_adc", p.lesion_mean_adc},
                                     {"truth_s0", dir + "truth_s0.vol"},
                                     {"truth_adc", dir + "truth_adc.vol"}});
        cohort.manifest.records.push_back(std::move(rec));
        cohort.patients.push_back(std::move(p));
    }

    if (cohort.manifest.records.empty()) {
        std::ofstream(cohort.manifest_path, std::ios::trunc) << "patient_id,modality,bvalue,path,sbr_grade,pcr\n";
    } else {
        write_manifest(cohort.manifest, cohort.manifest_path);
    }
    std::ofstream(cohort.ground_truth_path, std::ios::trunc) << truth.dump(2) << '\n';
    return cohort;
}

} // namespace cdis
