#pragma once

#include "cdis/cohort.hpp"
#include "cdis/common.hpp"
#include "cdis/net/resnet.hpp"
#include "cdis/standardize.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cdis {

using net::NetworkConfig;

enum class ClassWeightPolicy { none, balanced };

std::string_view to_string(ClassWeightPolicy policy);
ClassWeightPolicy parse_class_weight_policy(std::string_view text);

struct TrainConfig {
    int epochs = 12;
    int batch_size = 4;
    double learning_rate = 1e-3;
    ClassWeightPolicy class_weight = ClassWeightPolicy::balanced;
    std::uint64_t seed = 0;

    /// Throws UsageError.
    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

struct DeepFeatureVector {
    std::vector<double> values;
};

struct Prediction {
    BinaryLabel label = BinaryLabel::negative;
    double probability = 0.0;
};

/// Feature extractor and predictor head trained jointly.
template <typename T>
struct RadiomicModel {
    explicit RadiomicModel(const NetworkConfig& cfg)
        : extractor(cfg), predictor(cfg.feature_dim, cfg.predictor_hidden, cfg.seed)
    {
    }

    net::Extractor<T> extractor;
    net::Predictor<T> predictor;

    const NetworkConfig& config() const { return extractor.config(); }

    template <typename F>
    void for_each_param(F&& fn)
    {
        extractor.for_each_param(fn);
        predictor.for_each_param(fn);
    }

    template <typename F>
    void for_each_param(F&& fn) const
    {
        extractor.for_each_param(fn);
        predictor.for_each_param(fn);
    }

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for_each_param([&](const net::Param<T>& p) { n += p.size(); });
        return n;
    }

    void zero_grad()
    {
        for_each_param([](net::Param<T>& p) { p.zero_grad(); });
    }

    /// FNV-1a over every parameter value, in declaration order.
    std::uint64_t checksum() const
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for_each_param([&](const net::Param<T>& p) {
            h = fnv1a64(std::as_bytes(std::span(p.value.data(), p.value.size())), h);
        });
        return h;
    }
};

template <typename T>
struct Example {
    const net::Tensor<T>* input = nullptr;
    BinaryLabel label = BinaryLabel::negative;
};

inline double sigmoid(double z)
{
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// Binary cross-entropy on a logit, numerically stable.
inline double bce_with_logit(double z, BinaryLabel label)
{
    const double y = as_int(label);
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

/// Per-class loss weights indexed by as_int(label). "balanced" gives
/// N / (2 N_c); a class absent from `labels` gets weight 0.
std::array<double, 2> class_weights(std::span<const BinaryLabel> labels, ClassWeightPolicy policy);

/// Forward + backward for one example; accumulates `scale * weight *
/// dBCE/dtheta` into the parameter gradients and returns the unscaled BCE.
template <typename T>
double accumulate_example(RadiomicModel<T>& model, const net::Tensor<T>& input, BinaryLabel label, double weight,
                          double scale)
{
    net::ExtractorCache<T> ecache;
    net::PredictorCache<T> pcache;
    const std::vector<T> feat = model.extractor.forward(input, &ecache);
    const double z = model.predictor.logit(feat, &pcache);
    const double loss = bce_with_logit(z, label);
    const T dz = static_cast<T>(scale * weight * (sigmoid(z) - as_int(label)));
    model.extractor.backward(model.predictor.backward(dz, pcache), ecache);
    return loss;
}

/// Weighted loss of a single example at the current weights (no gradients).
template <typename T>
double example_loss(const RadiomicModel<T>& model, const net::Tensor<T>& input, BinaryLabel label)
{
    const std::vector<T> feat = model.extractor.forward(input, nullptr);
    return bce_with_logit(model.predictor.logit(feat, nullptr), label);
}

template <typename T>
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps)
    {
    }

    void step(RadiomicModel<T>& model)
    {
        ++t_;
        std::size_t idx = 0;
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        model.for_each_param([&](net::Param<T>& p) {
            if (m_.size() <= idx) {
                m_.emplace_back(p.size(), 0.0);
                v_.emplace_back(p.size(), 0.0);
            }
            auto& m = m_[idx];
            auto& v = v_[idx];
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double g = p.grad[i];
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
                p.value[i] -= static_cast<T>(lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
            }
            ++idx;
        });
    }

private:
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    int t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

struct StepStats {
    double loss = 0.0;                      ///< (1/B) sum of weighted BCE
    std::array<double, 2> class_loss{0, 0}; ///< the same sum split by class
};

/// One optimizer update on a mini-batch. The batch loss is the mean of
/// class-weighted BCE terms.
template <typename T>
StepStats train_step(RadiomicModel<T>& model, std::span<const Example<T>> batch, const std::array<double, 2>& weights,
                     Adam<T>& optimizer)
{
    model.zero_grad();
    StepStats stats;
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (const auto& ex : batch) {
        const double w = weights[static_cast<std::size_t>(as_int(ex.label))];
        const double l = accumulate_example(model, *ex.input, ex.label, w, scale);
        stats.loss += scale * w * l;
        stats.class_loss[static_cast<std::size_t>(as_int(ex.label))] += scale * w * l;
    }
    optimizer.step(model);
    return stats;
}

struct TrainResult {
    std::vector<double> loss_trajectory; ///< mean weighted loss per epoch
    bool single_class = false;
};

/// Shuffled mini-batch Adam over `data`; deterministic for a given
/// TrainConfig::seed.
template <typename T>
TrainResult train(RadiomicModel<T>& model, std::span<const Example<T>> data, const TrainConfig& cfg)
{
    cfg.validate();
    if (data.empty()) {
        throw DataError("cannot train on an empty dataset");
    }
    std::vector<BinaryLabel> labels;
    for (const auto& ex : data) labels.push_back(ex.label);
    TrainResult result;
    result.single_class = std::all_of(labels.begin(), labels.end(), [&](BinaryLabel l) { return l == labels.front(); });
    auto weights = class_weights(labels, cfg.class_weight);

    Adam<T> optimizer(cfg.learning_rate);
    Rng rng(splitmix64(cfg.seed ^ 0x747261696eULL));
    std::vector<std::size_t> order(data.size());
    std::vector<Example<T>> batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order.begin(), order.end());
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            batch.clear();
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
            const StepStats s = train_step<T>(model, batch, weights, optimizer);
            total += s.loss * static_cast<double>(batch.size());
        }
        result.loss_trajectory.push_back(total / static_cast<double>(data.size()));
    }
    return result;
}

using CubeModel = RadiomicModel<float>;

/// Copies a cube into the network's activation layout.
net::Tensor<float> cube_tensor(const DataCube& cube);

CubeModel build_model(const NetworkConfig& config);
net::Extractor<float> build_extractor(const NetworkConfig& config);
net::Predictor<float> build_predictor(int feature_dim, int hidden = 64, std::uint64_t seed = 0);

/// Throws DataError when the cube's channel count differs from the model's.
DeepFeatureVector extract_features(const net::Extractor<float>& extractor, const DataCube& cube);

double predict_probability(const net::Predictor<float>& predictor, const DeepFeatureVector& features);

/// label = probability >= threshold.
Prediction apply_threshold(double probability, double threshold);
Prediction predict(const net::Predictor<float>& predictor, const DeepFeatureVector& features, double threshold = 0.5);

struct LabeledCube {
    const DataCube* cube = nullptr;
    BinaryLabel label = BinaryLabel::negative;
};

TrainResult train(CubeModel& model, std::span<const LabeledCube> data, const TrainConfig& config);

/// Checkpoint archive: format string, JSON network config, then named
/// float32 tensors.
inline constexpr std::string_view kCheckpointFormat = "cdis-radiomic-net/1";
void save_checkpoint(const std::filesystem::path& path, const CubeModel& model);
CubeModel load_checkpoint(const std::filesystem::path& path);

} // namespace cdis
