// Acceptance checks. Run with --criterion N; prints one verdict line.

#include "cdis/cdis_core.hpp"
#include "cdis/common.hpp"
#include "cdis/eval_harness.hpp"
#include "cdis/phantom.hpp"
#include "cdis/pipeline.hpp"
#include "cdis/radiomic_net.hpp"
#include "cdis/standardize.hpp"
#include "cli.hpp"
#include "test_util.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

using namespace cdis;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

const std::vector<double> kNative{0, 100, 600, 800};

DwiStudy mono_study(GridDims g, const std::vector<double>& s0, const std::vector<double>& adc)
{
    std::vector<Volume3D> vols;
    for (double b : kNative) {
        std::vector<double> d(g.count());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = s0[i] * std::exp(-b * adc[i]);
        vols.emplace_back(g, Spacing{}, std::move(d));
    }
    return make_dwi_study(kNative, std::move(vols));
}

std::string slurp(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

std::string fmt(double v, int prec = 4)
{
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

// 1: ADC fit recovers planted maps.
Verdict adc_fit()
{
    Rng rng(101);
    const std::size_t n = 100;
    std::vector<double> s0(n), adc(n);
    for (std::size_t i = 0; i < n; ++i) {
        s0[i] = rng.uniform(100.0, 2000.0);
        adc[i] = rng.uniform(0.0003, 0.003);
    }
    const AdcFit clean = fit_adc(mono_study({n, 1, 1}, s0, adc));
    double worst_s0 = 0, worst_adc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        worst_s0 = std::max(worst_s0, std::abs(clean.s0.data()[i] - s0[i]));
        worst_adc = std::max(worst_adc, std::abs(clean.adc.data()[i] - adc[i]));
    }
    const bool clean_ok = worst_s0 <= 1e-9 && worst_adc <= 1e-9;

    // lesion voxels of noiseless phantoms, then sigma = 5% of each voxel's S0
    PhantomSpec spec;
    spec.noise_sigma = 0.0;
    spec.seed = 5;
    std::vector<double> ls0, ladc;
    for (std::size_t p = 0; p < 10; ++p) {
        const PhantomPatient pat = generate_phantom_patient(spec, p, p % 2 ? BinaryLabel::positive : BinaryLabel::negative);
        for (std::size_t i = 0; i < pat.lesion_mask.size(); ++i) {
            if (!pat.lesion_mask[i]) continue;
            ls0.push_back(pat.s0.data()[i]);
            ladc.push_back(pat.adc.data()[i]);
        }
    }
    const std::size_t m = ls0.size();
    std::vector<Volume3D> vols;
    for (double b : kNative) {
        std::vector<double> d(m);
        for (std::size_t i = 0; i < m; ++i) d[i] = ls0[i] * std::exp(-b * ladc[i]) + 0.05 * ls0[i] * rng.normal();
        vols.emplace_back(GridDims{m, 1, 1}, Spacing{}, std::move(d));
    }
    const AdcFit noisy = fit_adc(make_dwi_study(kNative, std::move(vols)));
    std::size_t within = 0;
    for (std::size_t i = 0; i < m; ++i) within += std::abs(noisy.adc.data()[i] - ladc[i]) <= 0.10 * ladc[i];
    const double frac = static_cast<double>(within) / static_cast<double>(m);

    return {clean_ok && frac >= 0.95,
            "noiseless max |dS0| " + fmt(worst_s0) + ", max |dADC| " + fmt(worst_adc) + " (<= 1e-9); noisy " +
                std::to_string(within) + "/" + std::to_string(m) + " lesion voxels within 10% = " + fmt(100 * frac) +
                "% (>= 95%)"};
}

// 2: mixing identities.
Verdict mixing_identities()
{
    Rng rng(202);
    const GridDims g{16, 16, 4};
    std::vector<double> s0(g.count()), adc(g.count());
    for (std::size_t i = 0; i < s0.size(); ++i) {
        s0[i] = rng.uniform(50.0, 1500.0);
        adc[i] = rng.uniform(0.0003, 0.003);
    }
    const DwiStudy study = mono_study(g, s0, adc);
    double single = 0, fixed = 0, scaling = 0;

    MixingConfig one;
    one.native_bvalues = {600};
    one.synthetic_bvalues = {};
    one.coefficients = {{600.0, 1.0}};
    const Volume3D a = compute_cdis(study, one);
    for (std::size_t i = 0; i < g.count(); ++i)
        single = std::max(single, testutil::rel_diff(a.data()[i], study.at_bvalue(600).data()[i]));

    const auto uniform = MixingConfig::uniform(kNative, {1000, 1500, 2000});
    const Volume3D c = compute_cdis(mono_study(g, std::vector<double>(g.count(), 321.0), std::vector<double>(g.count(), 0.0)), uniform);
    for (double v : c.data()) fixed = std::max(fixed, testutil::rel_diff(v, 321.0));

    const double k = 3.7;
    std::vector<double> ks0(s0);
    for (auto& v : ks0) v *= k;
    const Volume3D base = compute_cdis(study, uniform);
    const Volume3D scaled = compute_cdis(mono_study(g, ks0, adc), uniform);
    for (std::size_t i = 0; i < g.count(); ++i)
        scaling = std::max(scaling, testutil::rel_diff(scaled.data()[i], k * base.data()[i]));

    return {single <= 1e-9 && fixed <= 1e-9 && scaling <= 1e-9,
            "max rel error: single-b " + fmt(single) + ", fixed point " + fmt(fixed) + ", k-scaling " + fmt(scaling) +
                " (<= 1e-9)"};
}

// 3: all-positive classifier over 175/77.
Verdict metric_anchor()
{
    std::vector<FoldResult> folds;
    for (int i = 0; i < 252; ++i) {
        FoldResult f;
        f.patient_id = "P" + std::to_string(i);
        f.true_label = i < 175 ? BinaryLabel::positive : BinaryLabel::negative;
        f.predicted_label = BinaryLabel::positive;
        f.probability = 1.0;
        folds.push_back(f);
    }
    const auto r = compute_metrics(folds);
    const std::string acc = format_percent(r.accuracy);
    const std::string sen = format_percent(r.sensitivity);
    const std::string spe = format_percent(r.specificity);
    return {acc == "69.44" && sen == "100.00" && spe == "0.00",
            "accuracy " + acc + ", sensitivity " + sen + ", specificity " + spe + " (69.44 / 100.00 / 0.00)"};
}

std::vector<Sample> phantom_samples(const PhantomSpec& spec)
{
    const auto labels = phantom_labels(spec);
    const auto mixing = MixingConfig::uniform(spec.native_bvalues, {1000, 1500, 2000});
    std::vector<Sample> out;
    for (std::size_t i = 0; i < spec.n_patients; ++i) {
        const PhantomPatient p = generate_phantom_patient(spec, i, labels[i]);
        Sample s;
        s.patient_id = p.patient_id;
        s.label = p.label;
        s.cube = standardize_cube(compute_cdis(make_dwi_study(spec.native_bvalues, p.dwi), mixing));
        out.push_back(std::move(s));
    }
    return out;
}

// 4: LOOCV integrity and the held-out label oracle on every fold.
Verdict loocv_integrity()
{
    PhantomSpec spec;
    spec.n_patients = 12;
    spec.seed = 4;
    const auto samples = phantom_samples(spec);
    LoocvSettings st;
    st.net = NetworkConfig::miniature();
    st.train.epochs = 2;
    st.train.batch_size = 4;
    st.seed = 17;
    st.modality_label = "CDIs";
    const LoocvResult r = run_loocv(samples, st);

    bool structure = r.folds.size() == 12 && r.audits.size() == 12;
    for (std::size_t i = 0; structure && i < 12; ++i) {
        const auto& ids = r.audits[i].training_ids;
        structure = r.audits[i].held_out == samples[i].patient_id && ids.size() == 11 &&
                    std::find(ids.begin(), ids.end(), samples[i].patient_id) == ids.end();
    }
    std::size_t same = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto flipped = samples;
        flipped[i].label = flipped[i].label == BinaryLabel::positive ? BinaryLabel::negative : BinaryLabel::positive;
        same += run_fold(flipped, i, st).audit.weights_checksum == r.audits[i].weights_checksum;
    }
    return {structure && same == 12,
            std::to_string(r.folds.size()) + " folds, held-out id absent from training: " + (structure ? "yes" : "no") +
                ", checksum unchanged under held-out label flip: " + std::to_string(same) + "/12"};
}

// 5: analytic vs central-difference gradients, double precision.
Verdict gradient_check()
{
    NetworkConfig cfg = NetworkConfig::miniature();
    cfg.seed = 9;
    RadiomicModel<double> model(cfg);
    net::Tensor<double> x(net::Shape{1, 5, 8, 8});
    Rng rng(55);
    for (auto& v : x.v) v = rng.normal();
    const BinaryLabel y = BinaryLabel::positive;

    model.zero_grad();
    accumulate_example(model, x, y, 1.0, 1.0);

    std::vector<std::pair<net::Param<double>*, std::size_t>> entries;
    model.for_each_param([&](net::Param<double>& p) {
        for (std::size_t i = 0; i < p.size(); ++i) entries.emplace_back(&p, i);
    });
    rng.shuffle(entries.begin(), entries.end());

    const double h = 1e-5;
    int agree = 0;
    std::string worst;
    double worst_rel = 0;
    for (int k = 0; k < 10; ++k) {
        auto [p, i] = entries[static_cast<std::size_t>(k)];
        const double analytic = p->grad[i];
        const double orig = p->value[i];
        p->value[i] = orig + h;
        const double up = example_loss(model, x, y);
        p->value[i] = orig - h;
        const double down = example_loss(model, x, y);
        p->value[i] = orig;
        const double numeric = (up - down) / (2 * h);
        const double scale = std::max(std::abs(analytic), std::abs(numeric));
        const double rel = scale == 0 ? 0.0 : std::abs(analytic - numeric) / scale;
        agree += rel <= 1e-3;
        if (rel >= worst_rel) {
            worst_rel = rel;
            worst = p->name + "[" + std::to_string(i) + "]";
        }
    }
    return {agree >= 10 * 0.95,
            std::to_string(agree) + "/10 sampled parameters within 1e-3 relative (>= 95%); worst " + worst + " at " +
                fmt(worst_rel)};
}

// 6: separable phantoms through the whole pipeline.
Verdict separability()
{
    testutil::TempDir dir("accept_c6");
    set_quiet(true);
    PipelineConfig cfg;
    cfg.cache_dir = dir / "cache";
    cfg.output_dir = dir / "out";
    cfg.net = NetworkConfig::miniature();
    cfg.train.epochs = 20;
    cfg.seed = 0;
    PhantomSpec spec;
    spec.n_patients = 20;
    spec.class_separation = 0.0012; // means 0.0008 vs 0.0020
    spec.lesion_adc_center = 0.0014;
    spec.noise_sigma = 0.02;
    spec.seed = 11;
    cfg.manifest = cmd_phantom(cfg, spec, dir / "cohort").manifest_path;
    cmd_synth(cfg);
    cmd_cube(cfg);
    const auto summary = cmd_loocv(cfg);
    const MetricsReport& r = summary.runs.at(0).report;
    const std::size_t correct = r.tp + r.tn;
    return {r.total() == 20 && correct >= 18,
            "CDIs LOOCV " + std::to_string(correct) + "/" + std::to_string(r.total()) + " correct, accuracy " +
                format_percent(r.accuracy) + "% (>= 18/20)"};
}

// 7: shape contracts.
Verdict shapes()
{
    bool ok = true;
    std::string detail;
    for (GridDims g : {GridDims{512, 512, 60}, GridDims{100, 80, 10}, GridDims{7, 300, 25}, GridDims{1, 1, 1}}) {
        std::vector<double> d(g.count());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<double>(i % 97);
        const DataCube c = standardize_cube(Volume3D(g, Spacing{}, std::move(d)));
        ok = ok && c.channels == 1 && c.data.size() == kCubeVoxels;
    }
    detail += std::string("cubes 224x224x25: ") + (ok ? "yes" : "no");

    const auto extractor = build_extractor(NetworkConfig{});
    DataCube zero;
    zero.channels = 1;
    zero.data.assign(kCubeVoxels, 0.f);
    zero.normalization.assign(1, {});
    const auto f = extract_features(extractor, zero);
    const bool net_ok = f.values.size() == 512 && extractor.weighted_layers() == 34;
    detail += ", features " + std::to_string(f.values.size()) + ", weighted layers " +
              std::to_string(extractor.weighted_layers());

    std::vector<DataCube> dwi;
    for (int b = 0; b < 4; ++b) {
        std::vector<double> d(20 * 20 * 5, 100.0 / (b + 1));
        d[b] = 0;
        dwi.push_back(standardize_cube(Volume3D({20, 20, 5}, Spacing{}, std::move(d))));
    }
    const DataCube stacked = stack_channels(dwi);
    const bool stack_ok = stacked.channels == 4 && stacked.data.size() == 4 * kCubeVoxels;
    detail += ", stacked channels " + std::to_string(stacked.channels);
    return {ok && net_ok && stack_ok, detail};
}

// 8: CLI replay is byte identical.
Verdict determinism()
{
    testutil::TempDir dir("accept_c8");
    const std::vector<std::string> files{"loocv_grading_CDIs.jsonl", "loocv_grading_ADC.jsonl",
                                         "comparison_grading.jsonl", "comparison_grading.md",
                                         "exclusions_grading.jsonl"};
    auto replay = [&](const std::string& run) -> int {
        const fs::path root = dir / run;
        const std::string manifest = (root / "cohort" / "manifest.csv").string();
        const std::vector<std::vector<std::string>> steps{
            {"phantom", "--n", "8", "--grid", "16,16,6", "--out", (root / "cohort").string()},
            {"synth"},
            {"cube"},
            {"loocv"}};
        for (const auto& step : steps) {
            std::vector<std::string> args{"cdis", "-q", "--seed", "23", "--manifest", manifest, "--cache-dir",
                                          (root / "cache").string(), "--output-dir", (root / "out").string(),
                                          "--net", "miniature", "--epochs", "2", "--modality", "CDIs,ADC"};
            args.insert(args.end(), step.begin(), step.end());
            std::vector<const char*> argv;
            for (const auto& a : args) argv.push_back(a.c_str());
            std::ostringstream out, err;
            const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
            if (code != 0) {
                std::cerr << err.str();
                return code;
            }
        }
        return 0;
    };
    if (replay("a") != 0 || replay("b") != 0) return {false, "pipeline run failed"};
    std::size_t same = 0;
    for (const auto& f : files) {
        const std::string a = slurp(dir / "a" / "out" / f);
        same += !a.empty() && a == slurp(dir / "b" / "out" / f);
    }
    return {same == files.size(),
            std::to_string(same) + "/" + std::to_string(files.size()) + " report files byte identical"};
}

struct Criterion {
    std::string name;
    std::function<Verdict()> run;
    double budget_s; ///< 0 = no runtime bound
};

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"acceptance checks"};
    int which = 0;
    app.add_option("--criterion", which, "criterion number, 1-8")->required()->check(CLI::Range(1, 8));
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> all{
        {"ADC fit oracle", adc_fit, 10},
        {"mixing identities", mixing_identities, 5},
        {"metric anchor", metric_anchor, 0},
        {"LOOCV integrity", loocv_integrity, 20 * 60},
        {"gradient check", gradient_check, 2 * 60},
        {"phantom separability", separability, 60 * 60},
        {"shape contracts", shapes, 60},
        {"determinism", determinism, 0},
    };
    const Criterion& c = all[static_cast<std::size_t>(which - 1)];
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
        v = c.run();
    } catch (const std::exception& e) {
        v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.budget_s == 0 || secs < c.budget_s;
    std::string timing = "runtime " + fmt(secs, 3) + " s";
    if (c.budget_s > 0) timing += " (< " + fmt(c.budget_s, 6) + " s)";
    std::cout << (v.pass && in_time ? "PASS" : "FAIL") << " criterion " << which << " " << c.name << ": " << v.detail
              << "; " << timing << std::endl;
    return v.pass && in_time ? 0 : 1;
}
