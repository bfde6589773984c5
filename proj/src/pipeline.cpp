#include "cdis/pipeline.hpp"

#include "cdis/common.hpp"
#include "cdis/standardize.hpp"
#include "cdis/volume_io.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>

namespace cdis {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::atomic<bool> g_quiet{false};
std::mutex g_log_mutex;

std::string bkey(double b)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, b);
    return std::string(buf, r.ptr);
}

double parse_bkey(const std::string& s)
{
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
        throw UsageError("bad b-value key in mixing coefficients: '" + s + "'");
    }
    return v;
}

json mixing_json(const MixingConfig& m)
{
    json coeff = json::object();
    for (const auto& [b, rho] : m.coefficients) coeff[bkey(b)] = rho;
    json j{{"native_bvalues", m.native_bvalues}, {"synthetic_bvalues", m.synthetic_bvalues}, {"coefficients", coeff}};
    j["epsilon"] = m.epsilon ? json(*m.epsilon) : json(nullptr);
    return j;
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where)
{
    if (!j.is_object()) throw UsageError(std::string(where) + " must be a JSON object");
    for (const auto& item : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
            throw UsageError("unknown key '" + item.key() + "' in " + std::string(where));
        }
    }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out)
{
    if (j.contains(key)) out = j.at(key).get<T>();
}

fs::path resolve_path(const fs::path& base, const fs::path& p)
{
    return p.is_absolute() || base.empty() ? p : base / p;
}

std::string source_fingerprint(const PipelineConfig& config, const ModalitySelection* selection)
{
    json j{{"kind", selection ? selection->key() : std::string("CDIs-volume")}};
    if (!selection || selection->kind == ModalitySelection::Kind::cdis) j["mixing"] = mixing_json(config.mixing);
    if (selection && selection->kind == ModalitySelection::Kind::dwi_stacked) {
        j["bvalues"] = config.mixing.native_bvalues;
    }
    return to_hex(fnv1a64(j.dump()));
}

json artifact_meta(const PipelineConfig& config)
{
    return {{"tool_version", kToolVersion}, {"config_fingerprint", config.fingerprint()}};
}

bool cache_valid(const fs::path& path, const std::string& source_fp)
{
    if (!fs::exists(path)) return false;
    try {
        const auto meta = json::parse(read_volume_header(path).metadata);
        return meta.value("source_fingerprint", std::string()) == source_fp;
    } catch (const std::exception&) {
        return false;
    }
}

fs::path cdis_path(const PipelineConfig& config, const std::string& patient_id)
{
    return config.cache_dir / "cdis" / (patient_id + ".vol");
}

fs::path cube_path(const PipelineConfig& config, const ModalitySelection& sel, const std::string& patient_id)
{
    return config.cache_dir / "cubes" / sel.key() / (patient_id + ".cube");
}

struct CacheOutcome {
    bool computed = false;
};

// Returns the CDIs volume for one patient, computing it when the cache is
// missing, stale or `force` is set.
Volume3D ensure_cdis(const PipelineConfig& config, const CohortManifest& manifest, const PatientRecord& record,
                     bool force, CacheOutcome& outcome)
{
    const fs::path path = cdis_path(config, record.patient_id);
    const std::string fp = source_fingerprint(config, nullptr);
    if (!force && cache_valid(path, fp)) {
        log_line("synth " + record.patient_id + ": cache hit");
        return read_volume(path);
    }
    const DwiStudy study = load_patient_dwi(manifest, record);
    std::size_t clamped = 0;
    Volume3D out = [&] {
        try {
            return compute_cdis(study, config.mixing, &clamped);
        } catch (const DataError& e) {
            throw DataError("patient " + record.patient_id + ": " + e.what());
        }
    }();
    json meta = artifact_meta(config);
    meta["source_fingerprint"] = fp;
    meta["patient_id"] = record.patient_id;
    meta["modality"] = modality::cdis;
    meta["clamped_negatives"] = clamped;
    fs::create_directories(path.parent_path());
    write_volume(path, out, meta.dump());
    outcome.computed = true;
    log_line("synth " + record.patient_id + ": wrote " + path.string() +
             (clamped ? " (" + std::to_string(clamped) + " negative voxels clamped)" : ""));
    return out;
}

Volume3D load_single(const CohortManifest& manifest, const PatientRecord& record, std::string_view name)
{
    const auto it = record.modality_paths.find(name);
    if (it == record.modality_paths.end() || it->second.empty()) {
        throw DataError("patient " + record.patient_id + ": no " + std::string(name) + " entry");
    }
    try {
        return read_volume(manifest.resolve(it->second.front().path));
    } catch (const DataError& e) {
        throw DataError("patient " + record.patient_id + ": " + e.what());
    }
}

DataCube make_cube(const PipelineConfig& config, const CohortManifest& manifest, const PatientRecord& record,
                   const ModalitySelection& sel, bool force, CacheOutcome& cdis_outcome)
{
    using Kind = ModalitySelection::Kind;
    switch (sel.kind) {
    case Kind::cdis:
        return standardize_cube(ensure_cdis(config, manifest, record, force, cdis_outcome));
    case Kind::adc:
        return standardize_cube(load_single(manifest, record, modality::adc));
    case Kind::t2w:
        return standardize_cube(load_single(manifest, record, modality::t2w));
    case Kind::dwi_stacked: {
        const DwiStudy study = load_patient_dwi(manifest, record);
        std::vector<DataCube> cubes;
        for (double b : config.mixing.native_bvalues) {
            if (!study.has_bvalue(b)) {
                throw DataError("patient " + record.patient_id + ": no DWI at b=" + bkey(b));
            }
            cubes.push_back(standardize_cube(study.at_bvalue(b)));
        }
        return stack_channels(cubes);
    }
    case Kind::dwi_single: {
        const DwiStudy study = load_patient_dwi(manifest, record);
        if (!study.has_bvalue(sel.bvalue)) {
            throw DataError("patient " + record.patient_id + ": no DWI at b=" + bkey(sel.bvalue));
        }
        return standardize_cube(study.at_bvalue(sel.bvalue));
    }
    }
    throw Error("unhandled modality kind");
}

DataCube ensure_cube(const PipelineConfig& config, const CohortManifest& manifest, const PatientRecord& record,
                     const ModalitySelection& sel, bool force, CacheOutcome& outcome)
{
    const fs::path path = cube_path(config, sel, record.patient_id);
    const std::string fp = source_fingerprint(config, &sel);
    if (!force && cache_valid(path, fp)) {
        log_line("cube " + sel.key() + " " + record.patient_id + ": cache hit");
        return read_cube(path);
    }
    CacheOutcome cdis_outcome;
    DataCube cube = make_cube(config, manifest, record, sel, force, cdis_outcome);
    json meta = artifact_meta(config);
    meta["source_fingerprint"] = fp;
    meta["patient_id"] = record.patient_id;
    meta["modality"] = sel.key();
    fs::create_directories(path.parent_path());
    write_cube(path, cube, meta.dump());
    outcome.computed = true;
    log_line("cube " + sel.key() + " " + record.patient_id + ": wrote " + path.string());
    return cube;
}

void write_text(const fs::path& path, const std::string& text)
{
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw DataError("cannot write " + path.string());
        os << text;
        if (!os) throw DataError("write failed for " + path.string());
    }
    fs::rename(tmp, path);
}

std::vector<std::string> required_modalities(const PipelineConfig& config, bool synth_only)
{
    std::vector<std::string> out;
    auto add = [&](const std::string& m) {
        if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    };
    if (synth_only) {
        add(std::string(modality::dwi));
    } else {
        for (const auto& sel : config.modalities) add(required_modality(sel));
    }
    return out;
}

struct TaskCohort {
    Task task;
    CohortManifest retained;
    std::vector<Exclusion> excluded;
};

TaskCohort load_task_cohort(const PipelineConfig& config, Task task, bool synth_only)
{
    const CohortManifest manifest = load_manifest(config.manifest, task);
    const auto required = required_modalities(config, synth_only);
    ValidationResult vr = validate_cohort(manifest, required);
    for (const auto& ex : vr.excluded) {
        std::string reasons;
        for (const auto& r : ex.reasons) reasons += (reasons.empty() ? "" : "; ") + r;
        log_line("excluded " + ex.patient_id + " (" + std::string(to_string(task)) + "): " + reasons);
    }
    return {task, std::move(vr.retained), std::move(vr.excluded)};
}

void merge_exclusions(std::vector<Exclusion>& into, const std::vector<Exclusion>& from)
{
    for (const auto& ex : from) {
        const auto it = std::find_if(into.begin(), into.end(), [&](const Exclusion& e) { return e.patient_id == ex.patient_id; });
        if (it == into.end()) into.push_back(ex);
    }
}

void write_comparison(const PipelineConfig& config, const ComparisonTable& table)
{
    const std::string task(to_string(table.task));
    const json meta = artifact_meta(config);
    write_text(config.output_dir / ("comparison_" + task + ".md"),
               render_table(table) + "\n<!-- tool_version " + std::string(kToolVersion) + ", config " +
                   config.fingerprint() + " -->\n");
    json head = meta;
    head["record"] = "meta";
    head["task"] = task;
    write_text(config.output_dir / ("comparison_" + task + ".jsonl"), head.dump() + "\n" + render_table_jsonl(table));
}

json optional_percent(const std::optional<double>& v)
{
    return v ? json(*v) : json(nullptr);
}

} // namespace

void set_quiet(bool quiet)
{
    g_quiet = quiet;
}

void log_line(const std::string& line)
{
    if (g_quiet) return;
    std::lock_guard lock(g_log_mutex);
    std::cerr << "[cdis] " << line << '\n';
}

std::string required_modality(const ModalitySelection& selection)
{
    switch (selection.kind) {
    case ModalitySelection::Kind::adc:
        return std::string(modality::adc);
    case ModalitySelection::Kind::t2w:
        return std::string(modality::t2w);
    default:
        return std::string(modality::dwi);
    }
}

void PipelineConfig::validate() const
{
    mixing.validate();
    net.validate();
    train.validate();
    if (tasks.empty()) throw UsageError("config needs at least one task");
    if (modalities.empty()) throw UsageError("config needs at least one modality");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw UsageError("threshold must lie in [0, 1]");
    if (jobs < 1) throw UsageError("jobs must be >= 1");
}

json PipelineConfig::to_json() const
{
    json task_list = json::array();
    for (Task t : tasks) task_list.push_back(std::string(to_string(t)));
    json mods = json::array();
    for (const auto& m : modalities) mods.push_back(m.key());
    return {{"manifest", manifest.string()},
            {"cache_dir", cache_dir.string()},
            {"output_dir", output_dir.string()},
            {"tasks", task_list},
            {"modalities", mods},
            {"seed", seed},
            {"threshold", threshold},
            {"jobs", jobs},
            {"mixing", mixing_json(mixing)},
            {"net",
             {{"stage_blocks", net.stage_blocks},
              {"base_width", net.base_width},
              {"feature_dim", net.feature_dim},
              {"norm_groups", net.norm_groups},
              {"predictor_hidden", net.predictor_hidden}}},
            {"train",
             {{"epochs", train.epochs},
              {"batch_size", train.batch_size},
              {"learning_rate", train.learning_rate},
              {"class_weight", std::string(to_string(train.class_weight))}}}};
}

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir)
{
    PipelineConfig c;
    try {
        check_keys(j,
                   {"manifest", "cache_dir", "output_dir", "task", "tasks", "modalities", "seed", "threshold", "jobs",
                    "mixing", "net", "train"},
                   "config");
        if (j.contains("manifest")) c.manifest = resolve_path(base_dir, j.at("manifest").get<std::string>());
        else c.manifest = resolve_path(base_dir, c.manifest);
        if (j.contains("cache_dir")) c.cache_dir = resolve_path(base_dir, j.at("cache_dir").get<std::string>());
        else c.cache_dir = resolve_path(base_dir, c.cache_dir);
        if (j.contains("output_dir")) c.output_dir = resolve_path(base_dir, j.at("output_dir").get<std::string>());
        else c.output_dir = resolve_path(base_dir, c.output_dir);

        if (j.contains("task") && j.contains("tasks")) throw UsageError("config: give either 'task' or 'tasks'");
        if (j.contains("task")) c.tasks = {parse_task(j.at("task").get<std::string>())};
        if (j.contains("tasks")) {
            c.tasks.clear();
            for (const auto& t : j.at("tasks")) c.tasks.push_back(parse_task(t.get<std::string>()));
        }
        if (j.contains("modalities")) {
            c.modalities.clear();
            for (const auto& m : j.at("modalities")) c.modalities.push_back(ModalitySelection::parse(m.get<std::string>()));
        }
        read_opt(j, "seed", c.seed);
        read_opt(j, "threshold", c.threshold);
        if (j.contains("jobs")) {
            const auto jobs = j.at("jobs").get<long long>();
            if (jobs < 1) throw UsageError("jobs must be >= 1");
            c.jobs = static_cast<std::size_t>(jobs);
        }

        if (j.contains("mixing")) {
            const json& m = j.at("mixing");
            check_keys(m, {"native_bvalues", "synthetic_bvalues", "coefficients", "epsilon"}, "mixing");
            std::vector<double> native = c.mixing.native_bvalues;
            std::vector<double> synthetic = c.mixing.synthetic_bvalues;
            read_opt(m, "native_bvalues", native);
            read_opt(m, "synthetic_bvalues", synthetic);
            c.mixing = MixingConfig::uniform(native, synthetic);
            if (m.contains("coefficients")) {
                const json& co = m.at("coefficients");
                if (co.is_string()) {
                    if (co.get<std::string>() != "uniform") throw UsageError("mixing coefficients must be 'uniform' or an object");
                } else {
                    c.mixing.coefficients.clear();
                    for (const auto& item : co.items()) c.mixing.coefficients[parse_bkey(item.key())] = item.value().get<double>();
                }
            }
            if (m.contains("epsilon") && !m.at("epsilon").is_null()) c.mixing.epsilon = m.at("epsilon").get<double>();
        }

        if (j.contains("net")) {
            const json& n = j.at("net");
            check_keys(n, {"preset", "stage_blocks", "base_width", "feature_dim", "norm_groups", "predictor_hidden"}, "net");
            if (n.contains("preset")) {
                const auto preset = n.at("preset").get<std::string>();
                if (preset == "miniature") c.net = NetworkConfig::miniature();
                else if (preset != "default") throw UsageError("unknown net preset '" + preset + "'");
            }
            read_opt(n, "stage_blocks", c.net.stage_blocks);
            read_opt(n, "base_width", c.net.base_width);
            read_opt(n, "feature_dim", c.net.feature_dim);
            read_opt(n, "norm_groups", c.net.norm_groups);
            read_opt(n, "predictor_hidden", c.net.predictor_hidden);
        }

        if (j.contains("train")) {
            const json& t = j.at("train");
            check_keys(t, {"epochs", "batch_size", "learning_rate", "class_weight"}, "train");
            read_opt(t, "epochs", c.train.epochs);
            read_opt(t, "batch_size", c.train.batch_size);
            read_opt(t, "learning_rate", c.train.learning_rate);
            if (t.contains("class_weight")) c.train.class_weight = parse_class_weight_policy(t.at("class_weight").get<std::string>());
        }
    } catch (const json::exception& e) {
        throw UsageError(std::string("bad config value: ") + e.what());
    }
    return c;
}

std::string PipelineConfig::fingerprint() const
{
    json j = to_json();
    for (const char* key : {"manifest", "cache_dir", "output_dir", "jobs"}) j.erase(key);
    return to_hex(fnv1a64(j.dump()));
}

PipelineConfig load_pipeline_config(const fs::path& path)
{
    std::ifstream is(path);
    if (!is) throw UsageError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw UsageError(path.string() + ": " + e.what());
    }
    return PipelineConfig::from_json(j, path.parent_path());
}

void apply_environment(PipelineConfig& config)
{
    if (const char* env = std::getenv(kCacheDirEnv); env && *env) config.cache_dir = env;
}

StageSummary cmd_synth(const PipelineConfig& config, bool force)
{
    config.validate();
    // One volume per patient retained for any configured task.
    std::vector<const PatientRecord*> patients;
    std::vector<TaskCohort> cohorts;
    StageSummary summary;
    for (Task t : config.tasks) {
        cohorts.push_back(load_task_cohort(config, t, true));
        merge_exclusions(summary.excluded, cohorts.back().excluded);
    }
    std::vector<std::pair<const CohortManifest*, const PatientRecord*>> work;
    std::set<std::string> seen;
    for (const auto& c : cohorts) {
        for (const auto& r : c.retained.records) {
            if (seen.insert(r.patient_id).second) work.emplace_back(&c.retained, &r);
        }
    }
    std::erase_if(summary.excluded, [&](const Exclusion& e) { return seen.contains(e.patient_id); });
    std::vector<char> computed(work.size(), 0);
    parallel_for(work.size(), config.jobs, [&](std::size_t i) {
        CacheOutcome outcome;
        ensure_cdis(config, *work[i].first, *work[i].second, force, outcome);
        computed[i] = outcome.computed;
    });
    summary.computed = static_cast<std::size_t>(std::count(computed.begin(), computed.end(), 1));
    summary.cached = work.size() - summary.computed;
    log_line("synth: " + std::to_string(summary.computed) + " computed, " + std::to_string(summary.cached) + " cached, " +
             std::to_string(summary.excluded.size()) + " excluded");
    return summary;
}

StageSummary cmd_cube(const PipelineConfig& config, bool force)
{
    config.validate();
    StageSummary summary;
    std::vector<TaskCohort> cohorts;
    for (Task t : config.tasks) {
        cohorts.push_back(load_task_cohort(config, t, false));
        merge_exclusions(summary.excluded, cohorts.back().excluded);
    }
    std::vector<std::pair<const CohortManifest*, const PatientRecord*>> work;
    std::set<std::string> seen;
    for (const auto& c : cohorts) {
        for (const auto& r : c.retained.records) {
            if (seen.insert(r.patient_id).second) work.emplace_back(&c.retained, &r);
        }
    }
    std::erase_if(summary.excluded, [&](const Exclusion& e) { return seen.contains(e.patient_id); });
    for (const auto& sel : config.modalities) {
        std::vector<char> computed(work.size(), 0);
        parallel_for(work.size(), config.jobs, [&](std::size_t i) {
            CacheOutcome outcome;
            ensure_cube(config, *work[i].first, *work[i].second, sel, force, outcome);
            computed[i] = outcome.computed;
        });
        const auto n = static_cast<std::size_t>(std::count(computed.begin(), computed.end(), 1));
        summary.computed += n;
        summary.cached += work.size() - n;
    }
    log_line("cube: " + std::to_string(summary.computed) + " computed, " + std::to_string(summary.cached) + " cached");
    return summary;
}

fs::path report_path(const PipelineConfig& config, Task task, const ModalitySelection& selection)
{
    return config.output_dir / ("loocv_" + std::string(to_string(task)) + "_" + selection.key() + ".jsonl");
}

LoocvSummary cmd_loocv(const PipelineConfig& config, bool force)
{
    config.validate();
    LoocvSummary summary;
    const std::string fp = config.fingerprint();
    for (Task task : config.tasks) {
        const TaskCohort cohort = load_task_cohort(config, task, false);
        const auto& records = cohort.retained.records;
        {
            json head = artifact_meta(config);
            head["record"] = "meta";
            head["task"] = std::string(to_string(task));
            std::string text = head.dump() + "\n";
            for (const auto& ex : cohort.excluded) {
                text += json{{"record", "excluded"}, {"patient_id", ex.patient_id}, {"reasons", ex.reasons}}.dump() + "\n";
            }
            write_text(config.output_dir / ("exclusions_" + std::string(to_string(task)) + ".jsonl"), text);
        }

        std::vector<MetricsReport> reports;
        for (const auto& sel : config.modalities) {
            const std::string label = sel.label(config.mixing.native_bvalues);
            log_line("loocv " + std::string(to_string(task)) + " " + sel.key() + ": preparing " +
                     std::to_string(records.size()) + " cubes");
            std::vector<Sample> samples(records.size());
            parallel_for(records.size(), config.jobs, [&](std::size_t i) {
                CacheOutcome outcome;
                samples[i].patient_id = records[i].patient_id;
                samples[i].cube = ensure_cube(config, cohort.retained, records[i], sel, force, outcome);
                samples[i].label = task_label(records[i], task);
            });

            LoocvSettings settings;
            settings.task = task;
            settings.modality_label = label;
            settings.net = config.net;
            settings.net.in_channels = samples.empty() ? 1 : static_cast<int>(samples.front().cube.channels);
            settings.train = config.train;
            settings.seed = config.seed;
            settings.threshold = config.threshold;
            settings.jobs = config.jobs;
            settings.config_fingerprint = fp;
            log_line("loocv " + std::string(to_string(task)) + " " + sel.key() + ": " + std::to_string(samples.size()) +
                     " folds");
            const LoocvResult result = run_loocv(samples, settings);

            json meta = artifact_meta(config);
            meta["record"] = "meta";
            meta["task"] = std::string(to_string(task));
            meta["modality"] = label;
            meta["modality_key"] = sel.key();
            meta["cohort_size"] = samples.size();
            meta["excluded"] = cohort.excluded.size();
            meta["threshold"] = config.threshold;
            meta["seed"] = config.seed;
            meta["training"] = "joint end-to-end (extractor + predictor)";
            std::string text = meta.dump() + "\n";
            for (std::size_t i = 0; i < result.folds.size(); ++i) {
                const auto& f = result.folds[i];
                const auto& a = result.audits[i];
                json fold{{"record", "fold"},
                          {"patient_id", f.patient_id},
                          {"true_label", as_int(f.true_label)},
                          {"predicted_label", as_int(f.predicted_label)},
                          {"probability", f.probability},
                          {"training_size", a.training_ids.size()},
                          {"weights_checksum", to_hex(a.weights_checksum)},
                          {"single_class_training", a.single_class_training}};
                fold["final_loss"] = a.loss_trajectory.empty() ? json(nullptr) : json(a.loss_trajectory.back());
                text += fold.dump() + "\n";
            }
            const MetricsReport& r = result.report;
            json sum{{"record", "summary"},
                     {"tp", r.tp},
                     {"fp", r.fp},
                     {"tn", r.tn},
                     {"fn", r.fn},
                     {"accuracy", r.accuracy},
                     {"sensitivity", optional_percent(r.sensitivity)},
                     {"specificity", optional_percent(r.specificity)},
                     {"accuracy_display", format_percent(r.accuracy)},
                     {"sensitivity_display", format_percent(r.sensitivity)},
                     {"specificity_display", format_percent(r.specificity)}};
            text += sum.dump() + "\n";
            const fs::path path = report_path(config, task, sel);
            write_text(path, text);
            log_line("loocv " + std::string(to_string(task)) + " " + sel.key() + ": accuracy " + format_percent(r.accuracy) +
                     "% -> " + path.string());
            summary.runs.push_back({r, path});
            reports.push_back(r);
        }
        ComparisonTable table = compare_modalities(reports);
        write_comparison(config, table);
        summary.tables.push_back(std::move(table));
    }
    return summary;
}

std::vector<ComparisonTable> cmd_report(const PipelineConfig& config)
{
    config.validate();
    std::vector<ComparisonTable> tables;
    for (Task task : config.tasks) {
        std::vector<MetricsReport> reports;
        for (const auto& sel : config.modalities) {
            const fs::path path = report_path(config, task, sel);
            std::ifstream is(path);
            if (!is) {
                throw DataError("no LOOCV report at " + path.string() + "; run `loocv` first");
            }
            std::vector<FoldResult> folds;
            std::string fingerprint;
            std::string label = sel.label(config.mixing.native_bvalues);
            std::string line;
            try {
                while (std::getline(is, line)) {
                    if (line.empty()) continue;
                    const json j = json::parse(line);
                    const auto kind = j.at("record").get<std::string>();
                    if (kind == "meta") {
                        fingerprint = j.at("config_fingerprint").get<std::string>();
                        label = j.value("modality", label);
                    } else if (kind == "fold") {
                        FoldResult f;
                        f.patient_id = j.at("patient_id").get<std::string>();
                        f.true_label = j.at("true_label").get<int>() ? BinaryLabel::positive : BinaryLabel::negative;
                        f.predicted_label = j.at("predicted_label").get<int>() ? BinaryLabel::positive : BinaryLabel::negative;
                        f.probability = j.at("probability").get<double>();
                        folds.push_back(std::move(f));
                    }
                }
            } catch (const json::exception& e) {
                throw DataError(path.string() + ": malformed report: " + e.what());
            }
            if (fingerprint != config.fingerprint()) {
                log_line("warning: " + path.string() + " was produced by config " + fingerprint + ", current is " +
                         config.fingerprint());
            }
            reports.push_back(compute_metrics(folds, task, label, fingerprint));
        }
        ComparisonTable table = compare_modalities(reports);
        write_comparison(config, table);
        tables.push_back(std::move(table));
    }
    return tables;
}

PhantomCohort cmd_phantom(const PipelineConfig& config, const PhantomSpec& spec, const fs::path& out_dir)
{
    spec.validate();
    json meta = artifact_meta(config);
    meta["phantom_fingerprint"] = phantom_fingerprint(spec);
    PhantomCohort cohort = generate_phantom_cohort(spec, out_dir, meta.dump());
    log_line("phantom: " + std::to_string(spec.n_patients) + " patients -> " + cohort.manifest_path.string());
    return cohort;
}

} // namespace cdis
