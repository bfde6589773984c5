#include "cli.hpp"

#include "cdis/common.hpp"
#include "cdis/pipeline.hpp"

#include <CLI11.hpp>

#include <optional>
#include <sstream>

namespace cdis::cli {

namespace {

struct Overrides {
    std::string config;
    std::optional<std::string> manifest;
    std::optional<std::string> cache_dir;
    std::optional<std::string> output_dir;
    std::vector<std::string> tasks;
    std::vector<std::string> modalities;
    std::optional<std::uint64_t> seed;
    std::optional<long long> jobs;
    std::optional<int> epochs;
    std::optional<int> batch_size;
    std::optional<double> learning_rate;
    std::optional<std::string> class_weight;
    std::optional<std::string> net_preset;
    std::optional<double> threshold;
    bool force = false;
    bool quiet = false;
};

struct PhantomFlags {
    std::string out;
    long long n = 20;
    std::vector<std::size_t> grid;
    std::vector<double> bvalues;
    std::optional<double> separation;
    std::optional<double> adc_center;
    std::optional<double> jitter;
    std::optional<double> tissue_adc;
    std::optional<double> noise;
};

// Precedence: defaults < config file < CDIS_CACHE_DIR < flags.
PipelineConfig build_config(const Overrides& o)
{
    PipelineConfig c = o.config.empty() ? PipelineConfig{} : load_pipeline_config(o.config);
    apply_environment(c);
    if (o.manifest) c.manifest = *o.manifest;
    if (o.cache_dir) c.cache_dir = *o.cache_dir;
    if (o.output_dir) c.output_dir = *o.output_dir;
    if (!o.tasks.empty()) {
        c.tasks.clear();
        for (const auto& t : o.tasks) c.tasks.push_back(parse_task(t));
    }
    if (!o.modalities.empty()) {
        c.modalities.clear();
        for (const auto& m : o.modalities) c.modalities.push_back(ModalitySelection::parse(m));
    }
    if (o.seed) c.seed = *o.seed;
    if (o.jobs) {
        if (*o.jobs < 1) throw UsageError("--jobs must be >= 1");
        c.jobs = static_cast<std::size_t>(*o.jobs);
    }
    if (o.net_preset) {
        if (*o.net_preset == "miniature") c.net = NetworkConfig::miniature();
        else if (*o.net_preset == "default") c.net = NetworkConfig{};
        else throw UsageError("unknown --net preset '" + *o.net_preset + "'");
    }
    if (o.epochs) c.train.epochs = *o.epochs;
    if (o.batch_size) c.train.batch_size = *o.batch_size;
    if (o.learning_rate) c.train.learning_rate = *o.learning_rate;
    if (o.class_weight) c.train.class_weight = parse_class_weight_policy(*o.class_weight);
    if (o.threshold) c.threshold = *o.threshold;
    c.validate();
    return c;
}

void print_tables(const std::vector<ComparisonTable>& tables, std::ostream& out)
{
    for (const auto& t : tables) out << render_table(t) << '\n';
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"CDI^s radiomics pipeline: synthesis, standardization, LOOCV evaluation", "cdis"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", std::string(kToolVersion));

    Overrides o;
    app.add_option("-c,--config", o.config, "JSON pipeline config");
    app.add_option("--manifest", o.manifest, "cohort manifest (CSV)");
    app.add_option("--cache-dir", o.cache_dir, "cache directory (overrides CDIS_CACHE_DIR)");
    app.add_option("--output-dir", o.output_dir, "report directory");
    app.add_option("--task", o.tasks, "grading and/or pcr")->delimiter(',');
    app.add_option("--modality", o.modalities, "CDIs, ADC, T2w, DWI-stacked, DWI-b<value>")->delimiter(',');
    app.add_option("--seed", o.seed, "global seed");
    app.add_option("--jobs", o.jobs, "worker threads");
    app.add_option("--epochs", o.epochs);
    app.add_option("--batch-size", o.batch_size);
    app.add_option("--lr", o.learning_rate, "Adam learning rate");
    app.add_option("--class-weight", o.class_weight, "none or balanced");
    app.add_option("--net", o.net_preset, "network preset: default or miniature");
    app.add_option("--threshold", o.threshold, "decision threshold on the predicted probability");
    app.add_flag("--force", o.force, "recompute cached artifacts");
    app.add_flag("-q,--quiet", o.quiet, "no progress lines on stderr");

    auto* synth = app.add_subcommand("synth", "compute CDI^s volumes for every retained patient");
    auto* cube = app.add_subcommand("cube", "standardize volumes into 224x224x25 cubes");
    auto* loocv = app.add_subcommand("loocv", "leave-one-out evaluation and comparison tables");
    auto* report = app.add_subcommand("report", "re-render comparison tables from LOOCV reports");
    auto* phantom = app.add_subcommand("phantom", "generate a synthetic cohort with known ground truth");

    PhantomFlags pf;
    phantom->add_option("--out", pf.out, "output directory")->required();
    phantom->add_option("--n", pf.n, "number of patients");
    phantom->add_option("--grid", pf.grid, "nx,ny,nz")->delimiter(',')->expected(3);
    phantom->add_option("--bvalues", pf.bvalues, "native b-values")->delimiter(',');
    phantom->add_option("--separation", pf.separation, "class difference in lesion mean ADC (mm^2/s)");
    phantom->add_option("--adc-center", pf.adc_center, "midpoint of the class lesion ADCs");
    phantom->add_option("--jitter", pf.jitter, "per-patient lesion ADC spread");
    phantom->add_option("--tissue-adc", pf.tissue_adc);
    phantom->add_option("--noise", pf.noise, "noise sigma as a fraction of tissue S0");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        std::ostringstream tmp_out;
        std::ostringstream tmp_err;
        const int code = app.exit(e, tmp_out, tmp_err);
        out << tmp_out.str();
        err << tmp_err.str();
        return code == 0 ? kSuccess : kUsage;
    }

    try {
        set_quiet(o.quiet);
        const PipelineConfig config = build_config(o);
        if (synth->parsed()) {
            const auto s = cmd_synth(config, o.force);
            out << "{\"computed\":" << s.computed << ",\"cached\":" << s.cached << ",\"excluded\":" << s.excluded.size()
                << "}\n";
        } else if (cube->parsed()) {
            const auto s = cmd_cube(config, o.force);
            out << "{\"computed\":" << s.computed << ",\"cached\":" << s.cached << ",\"excluded\":" << s.excluded.size()
                << "}\n";
        } else if (loocv->parsed()) {
            print_tables(cmd_loocv(config, o.force).tables, out);
        } else if (report->parsed()) {
            print_tables(cmd_report(config), out);
        } else if (phantom->parsed()) {
            if (pf.n < 0) throw UsageError("--n must be >= 0");
            PhantomSpec spec;
            spec.n_patients = static_cast<std::size_t>(pf.n);
            spec.seed = config.seed;
            if (!pf.grid.empty()) spec.grid = {pf.grid[0], pf.grid[1], pf.grid[2]};
            if (!pf.bvalues.empty()) spec.native_bvalues = pf.bvalues;
            if (pf.separation) spec.class_separation = *pf.separation;
            if (pf.adc_center) spec.lesion_adc_center = *pf.adc_center;
            if (pf.jitter) spec.lesion_adc_jitter = *pf.jitter;
            if (pf.tissue_adc) spec.tissue_adc = *pf.tissue_adc;
            if (pf.noise) spec.noise_sigma = *pf.noise;
            const auto cohort = cmd_phantom(config, spec, pf.out);
            out << cohort.manifest_path.string() << '\n';
        }
        return kSuccess;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return kData;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return kInternal;
    }
}

} // namespace cdis::cli
