#include "cdis/eval_harness.hpp"

#include "cdis/common.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <sstream>

#include <json.hpp>

namespace cdis {

namespace {

std::string format_b(double b)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), b);
    return std::string(buf, res.ptr);
}

} // namespace

std::string ModalitySelection::key() const
{
    switch (kind) {
    case Kind::cdis: return "CDIs";
    case Kind::adc: return "ADC";
    case Kind::t2w: return "T2w";
    case Kind::dwi_stacked: return "DWI-stacked";
    case Kind::dwi_single: return "DWI-b" + format_b(bvalue);
    }
    return "?";
}

std::string ModalitySelection::label(std::span<const double> stacked_bvalues) const
{
    switch (kind) {
    case Kind::cdis: return "CDIs";
    case Kind::adc: return "ADC";
    case Kind::t2w: return "T2w";
    case Kind::dwi_stacked: {
        if (stacked_bvalues.empty()) return "DWI";
        std::string out = "DWI (b=";
        for (std::size_t i = 0; i < stacked_bvalues.size(); ++i) {
            out += (i ? ", " : "") + format_b(stacked_bvalues[i]);
        }
        return out + ")";
    }
    case Kind::dwi_single: return "DWI (b=" + format_b(bvalue) + ")";
    }
    return "?";
}

ModalitySelection ModalitySelection::parse(std::string_view key)
{
    if (key == "CDIs") return {Kind::cdis, 0.0};
    if (key == "ADC") return {Kind::adc, 0.0};
    if (key == "T2w") return {Kind::t2w, 0.0};
    if (key == "DWI-stacked" || key == "DWI") return {Kind::dwi_stacked, 0.0};
    if (key.starts_with("DWI-b")) {
        auto rest = key.substr(5);
        if (!rest.empty() && rest.front() == '=') rest.remove_prefix(1);
        double b = 0.0;
        const auto res = std::from_chars(rest.data(), rest.data() + rest.size(), b);
        if (res.ec == std::errc() && res.ptr == rest.data() + rest.size() && b >= 0.0 && !rest.empty()) {
            return {Kind::dwi_single, b};
        }
    }
    throw UsageError("unknown modality '" + std::string(key)
                     + "' (expected CDIs, ADC, T2w, DWI-stacked or DWI-b<value>)");
}

std::string format_percent(std::optional<double> value)
{
    if (!value) return "N/A";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *value);
    return buf;
}

MetricsReport compute_metrics(std::span<const FoldResult> results, Task task, std::string modality,
                              std::string config_fingerprint)
{
    if (results.empty()) {
        throw DataError("cannot compute metrics on an empty result list");
    }
    MetricsReport r;
    r.task = task;
    r.modality = std::move(modality);
    r.config_fingerprint = std::move(config_fingerprint);
    for (const auto& f : results) {
        const bool truth = f.true_label == BinaryLabel::positive;
        const bool pred = f.predicted_label == BinaryLabel::positive;
        if (truth && pred) ++r.tp;
        else if (!truth && pred) ++r.fp;
        else if (!truth && !pred) ++r.tn;
        else ++r.fn;
    }
    r.accuracy = 100.0 * static_cast<double>(r.tp + r.tn) / static_cast<double>(r.total());
    if (r.positives() > 0) r.sensitivity = 100.0 * static_cast<double>(r.tp) / static_cast<double>(r.positives());
    if (r.negatives() > 0) r.specificity = 100.0 * static_cast<double>(r.tn) / static_cast<double>(r.negatives());
    return r;
}

FoldOutcome run_fold(std::span<const Sample> samples, std::size_t held_out, const LoocvSettings& settings)
{
    if (held_out >= samples.size()) {
        throw UsageError("held-out index out of range");
    }
    const std::uint64_t fold_seed = settings.seed ^ static_cast<std::uint64_t>(held_out);
    NetworkConfig net = settings.net;
    net.seed = fold_seed;
    TrainConfig train_cfg = settings.train;
    train_cfg.seed = fold_seed;

    FoldOutcome out;
    std::vector<LabeledCube> training;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (i == held_out) continue;
        training.push_back({&samples[i].cube, samples[i].label});
        out.audit.training_ids.push_back(samples[i].patient_id);
    }
    CubeModel model = build_model(net);
    const TrainResult tr = train(model, training, train_cfg);

    const Sample& test = samples[held_out];
    const Prediction p = predict(model.predictor, extract_features(model.extractor, test.cube), settings.threshold);
    out.result = FoldResult{test.patient_id, test.label, p.label, p.probability};
    out.audit.held_out = test.patient_id;
    out.audit.weights_checksum = model.checksum();
    out.audit.loss_trajectory = tr.loss_trajectory;
    out.audit.single_class_training = tr.single_class;
    return out;
}

LoocvResult run_loocv(std::span<const Sample> samples, const LoocvSettings& settings)
{
    if (samples.size() < 2) {
        throw DataError("LOOCV needs at least 2 patients, cohort has " + std::to_string(samples.size()));
    }
    const bool has_pos = std::any_of(samples.begin(), samples.end(), [](const Sample& s) { return s.label == BinaryLabel::positive; });
    const bool has_neg = std::any_of(samples.begin(), samples.end(), [](const Sample& s) { return s.label == BinaryLabel::negative; });
    if (!has_pos || !has_neg) {
        throw DataError("LOOCV needs both classes in the cohort");
    }
    settings.net.validate();
    settings.train.validate();

    std::vector<FoldOutcome> outcomes(samples.size());
    parallel_for(samples.size(), settings.jobs, [&](std::size_t i) { outcomes[i] = run_fold(samples, i, settings); });

    LoocvResult result;
    for (auto& o : outcomes) {
        result.folds.push_back(std::move(o.result));
        result.audits.push_back(std::move(o.audit));
    }
    result.report = compute_metrics(result.folds, settings.task, settings.modality_label, settings.config_fingerprint);
    return result;
}

ComparisonTable compare_modalities(std::span<const MetricsReport> reports)
{
    if (reports.empty()) {
        throw DataError("nothing to compare");
    }
    ComparisonTable table;
    table.task = reports.front().task;
    for (const auto& r : reports) {
        if (r.task != table.task) {
            throw DataError("cannot compare reports from different tasks");
        }
        table.rows.push_back({r, false});
    }
    std::stable_sort(table.rows.begin(), table.rows.end(),
                     [](const ComparisonRow& a, const ComparisonRow& b) { return a.report.accuracy > b.report.accuracy; });
    table.rows.front().best = true;
    return table;
}

std::string render_table(const ComparisonTable& table)
{
    std::ostringstream os;
    const auto cell = [](const std::string& text, bool bold) { return bold ? "**" + text + "**" : text; };
    if (table.task == Task::grading) {
        os << "SBR grade prediction accuracy using LOOCV for different imaging modalities.\n\n";
        os << "| Modality | Accuracy | Sensitivity | Specificity |\n";
        os << "|---|---|---|---|\n";
        for (const auto& row : table.rows) {
            const auto pct = [](std::optional<double> v) { return v ? format_percent(v) + "%" : format_percent(v); };
            os << "| " << cell(row.report.modality, row.best) << " | " << cell(pct(row.report.accuracy), row.best)
               << " | " << cell(pct(row.report.sensitivity), row.best) << " | "
               << cell(pct(row.report.specificity), row.best) << " |\n";
        }
    } else {
        os << "pCR prediction accuracy using LOOCV for different imaging modalities.\n\n";
        os << "| Imaging Modality | Accuracy (%) |\n";
        os << "|---|---|\n";
        for (const auto& row : table.rows) {
            os << "| " << cell(row.report.modality, row.best) << " | "
               << cell(format_percent(row.report.accuracy), row.best) << " |\n";
        }
    }
    return os.str();
}

std::string render_table_jsonl(const ComparisonTable& table)
{
    std::string out;
    for (const auto& row : table.rows) {
        const auto& r = row.report;
        nlohmann::json j{{"task", to_string(table.task)},
                         {"modality", r.modality},
                         {"best", row.best},
                         {"tp", r.tp},
                         {"fp", r.fp},
                         {"tn", r.tn},
                         {"fn", r.fn},
                         {"accuracy", format_percent(r.accuracy)},
                         {"sensitivity", format_percent(r.sensitivity)},
                         {"specificity", format_percent(r.specificity)},
                         {"config_fingerprint", r.config_fingerprint}};
        out += j.dump() + "\n";
    }
    return out;
}

} // namespace cdis
