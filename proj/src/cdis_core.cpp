#include "cdis/cdis_core.hpp"

#include "cdis/common.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace cdis {

namespace {

std::string bstr(double b)
{
    std::ostringstream os;
    os << b;
    return os.str();
}

double floor_log(double s, double eps)
{
    return std::log(std::max(s, eps));
}

} // namespace

std::vector<double> MixingConfig::all_bvalues() const
{
    std::set<double> all(native_bvalues.begin(), native_bvalues.end());
    all.insert(synthetic_bvalues.begin(), synthetic_bvalues.end());
    return {all.begin(), all.end()};
}

double MixingConfig::coefficient_sum() const
{
    double sum = 0.0;
    for (const auto& [b, rho] : coefficients) {
        sum += rho;
    }
    return sum;
}

void MixingConfig::validate() const
{
    if (native_bvalues.empty()) {
        throw UsageError("mixing config needs at least one native b-value");
    }
    for (double b : native_bvalues) {
        if (!(b >= 0.0) || !std::isfinite(b)) throw UsageError("native b-values must be finite and non-negative");
    }
    for (double b : synthetic_bvalues) {
        if (!(b >= 0.0) || !std::isfinite(b)) throw UsageError("synthetic b-values must be finite and non-negative");
    }
    const auto all = all_bvalues();
    for (double b : all) {
        if (!coefficients.contains(b)) {
            throw UsageError("mixing coefficient missing for b=" + bstr(b));
        }
    }
    for (const auto& [b, rho] : coefficients) {
        if (!std::binary_search(all.begin(), all.end(), b)) {
            throw UsageError("mixing coefficient given for unused b=" + bstr(b));
        }
        if (!std::isfinite(rho)) {
            throw UsageError("mixing coefficient for b=" + bstr(b) + " is not finite");
        }
    }
    if (epsilon && !(*epsilon > 0.0)) {
        throw UsageError("mixing epsilon must be positive");
    }
}

MixingConfig MixingConfig::uniform(std::vector<double> native, std::vector<double> synthetic)
{
    MixingConfig cfg;
    cfg.native_bvalues = std::move(native);
    cfg.synthetic_bvalues = std::move(synthetic);
    const auto all = cfg.all_bvalues();
    for (double b : all) {
        cfg.coefficients[b] = 1.0 / static_cast<double>(all.size());
    }
    return cfg;
}

double default_log_floor(const DwiStudy& study)
{
    std::vector<double> pooled;
    for (const auto& v : study.volumes) {
        pooled.insert(pooled.end(), v.data().begin(), v.data().end());
    }
    if (pooled.empty()) {
        return 1e-6;
    }
    // nearest-rank percentile
    const auto rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(pooled.size())));
    const auto k = rank == 0 ? 0 : rank - 1;
    std::nth_element(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(k), pooled.end());
    const double p99 = pooled[k];
    return p99 > 0.0 ? 1e-6 * p99 : 1e-6;
}

AdcFit fit_adc(const DwiStudy& study, std::optional<double> epsilon)
{
    const std::size_t nb = study.bvalues.size();
    if (nb < 2) {
        throw DataError("ADC fit needs at least 2 distinct b-values, study has " + std::to_string(nb));
    }
    const double eps = epsilon.value_or(default_log_floor(study));
    if (!(eps > 0.0)) {
        throw UsageError("log-domain floor must be positive");
    }

    double bmean = 0.0;
    for (double b : study.bvalues) bmean += b;
    bmean /= static_cast<double>(nb);
    double sxx = 0.0;
    for (double b : study.bvalues) sxx += (b - bmean) * (b - bmean);

    const Volume3D& ref = study.volumes.front();
    const std::size_t n = ref.size();
    std::vector<double> s0(n), adc(n), resid(n);
    std::vector<double> y(nb);
    std::size_t clamped = 0;

    for (std::size_t i = 0; i < n; ++i) {
        double ymean = 0.0;
        for (std::size_t k = 0; k < nb; ++k) {
            double s = study.volumes[k].data()[i];
            if (s < 0.0) {
                ++clamped;
                s = 0.0;
            }
            y[k] = floor_log(s, eps);
            ymean += y[k];
        }
        ymean /= static_cast<double>(nb);
        double sxy = 0.0;
        for (std::size_t k = 0; k < nb; ++k) {
            sxy += (study.bvalues[k] - bmean) * (y[k] - ymean);
        }
        const double slope = sxy / sxx;
        const double intercept = ymean - slope * bmean;
        double sse = 0.0;
        for (std::size_t k = 0; k < nb; ++k) {
            const double e = y[k] - (intercept + slope * study.bvalues[k]);
            sse += e * e;
        }
        s0[i] = std::exp(intercept);
        adc[i] = -slope;
        resid[i] = std::sqrt(sse / static_cast<double>(nb));
    }

    return AdcFit{Volume3D(ref.dims(), ref.spacing(), std::move(s0)), Volume3D(ref.dims(), ref.spacing(), std::move(adc)),
                  Volume3D(ref.dims(), ref.spacing(), std::move(resid)), eps, clamped};
}

Volume3D synthesize_signal(const AdcFit& fit, double b)
{
    if (!(b >= 0.0) || !std::isfinite(b)) {
        throw UsageError("synthetic b-value must be finite and non-negative");
    }
    std::vector<double> out(fit.s0.size());
    const auto s0 = fit.s0.data();
    const auto adc = fit.adc.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = s0[i] * std::exp(-b * adc[i]);
    }
    return Volume3D(fit.s0.dims(), fit.s0.spacing(), std::move(out));
}

DwiStudy select_bvalues(const DwiStudy& study, const std::vector<double>& bvalues)
{
    std::vector<Volume3D> volumes;
    for (double b : bvalues) {
        if (!study.has_bvalue(b)) {
            throw DataError("native b-value " + bstr(b) + " absent from DWI study");
        }
        volumes.push_back(study.at_bvalue(b));
    }
    return make_dwi_study(bvalues, std::move(volumes));
}

Volume3D compute_cdis(const DwiStudy& study, const MixingConfig& config, std::size_t* clamped_negatives)
{
    config.validate();
    const DwiStudy native = select_bvalues(study, config.native_bvalues);
    const double eps = config.epsilon.value_or(default_log_floor(native));

    const Volume3D& ref = native.volumes.front();
    std::vector<double> log_mix(ref.size(), 0.0);
    std::size_t clamped = 0;

    for (std::size_t k = 0; k < native.bvalues.size(); ++k) {
        const double rho = config.coefficients.at(native.bvalues[k]);
        const auto s = native.volumes[k].data();
        for (std::size_t i = 0; i < log_mix.size(); ++i) {
            if (s[i] < 0.0) {
                ++clamped;
            }
            log_mix[i] += rho * floor_log(std::max(s[i], 0.0), eps);
        }
    }

    std::vector<double> synthetic;
    for (double b : config.synthetic_bvalues) {
        if (!native.has_bvalue(b)) {
            synthetic.push_back(b);
        }
    }
    if (!synthetic.empty()) {
        const AdcFit fit = fit_adc(native, eps);
        for (double b : synthetic) {
            const double rho = config.coefficients.at(b);
            const Volume3D sb = synthesize_signal(fit, b);
            const auto s = sb.data();
            for (std::size_t i = 0; i < log_mix.size(); ++i) {
                log_mix[i] += rho * floor_log(s[i], eps);
            }
        }
    }

    for (double& v : log_mix) {
        v = std::exp(v);
    }
    if (clamped_negatives) {
        *clamped_negatives = clamped;
    }
    return Volume3D(ref.dims(), ref.spacing(), std::move(log_mix));
}

} // namespace cdis
