#include "cdis/radiomic_net.hpp"

#include <algorithm>

namespace cdis {

std::string_view to_string(ClassWeightPolicy policy)
{
    return policy == ClassWeightPolicy::balanced ? "balanced" : "none";
}

ClassWeightPolicy parse_class_weight_policy(std::string_view text)
{
    if (text == "balanced") return ClassWeightPolicy::balanced;
    if (text == "none") return ClassWeightPolicy::none;
    throw UsageError("unknown class_weight policy '" + std::string(text) + "' (expected balanced or none)");
}

void TrainConfig::validate() const
{
    if (epochs < 0) throw UsageError("epochs must be >= 0");
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw UsageError("learning_rate must be > 0");
}

std::array<double, 2> class_weights(std::span<const BinaryLabel> labels, ClassWeightPolicy policy)
{
    if (policy == ClassWeightPolicy::none) {
        return {1.0, 1.0};
    }
    std::array<double, 2> counts{0.0, 0.0};
    for (BinaryLabel l : labels) counts[static_cast<std::size_t>(as_int(l))] += 1.0;
    const double n = counts[0] + counts[1];
    if (counts[0] == 0.0 || counts[1] == 0.0) {
        // single-class data: nothing to balance
        return {counts[0] > 0 ? 1.0 : 0.0, counts[1] > 0 ? 1.0 : 0.0};
    }
    return {n / (2.0 * counts[0]), n / (2.0 * counts[1])};
}

net::Tensor<float> cube_tensor(const DataCube& cube)
{
    net::Tensor<float> t;
    t.shape = net::Shape{static_cast<int>(cube.channels), static_cast<int>(kCubeSlices), static_cast<int>(kCubeHeight),
                         static_cast<int>(kCubeWidth)};
    if (cube.data.size() != t.shape.size()) {
        throw DataError("cube buffer does not match its channel count");
    }
    t.v = cube.data;
    return t;
}

CubeModel build_model(const NetworkConfig& config)
{
    return CubeModel(config);
}

net::Extractor<float> build_extractor(const NetworkConfig& config)
{
    return net::Extractor<float>(config);
}

net::Predictor<float> build_predictor(int feature_dim, int hidden, std::uint64_t seed)
{
    return net::Predictor<float>(feature_dim, hidden, seed);
}

DeepFeatureVector extract_features(const net::Extractor<float>& extractor, const DataCube& cube)
{
    if (static_cast<int>(cube.channels) != extractor.config().in_channels) {
        throw DataError("cube has " + std::to_string(cube.channels) + " channels, extractor expects "
                        + std::to_string(extractor.config().in_channels));
    }
    const auto f = extractor.forward(cube_tensor(cube), nullptr);
    return DeepFeatureVector{std::vector<double>(f.begin(), f.end())};
}

double predict_probability(const net::Predictor<float>& predictor, const DeepFeatureVector& features)
{
    const std::vector<float> f(features.values.begin(), features.values.end());
    return sigmoid(predictor.logit(f, nullptr));
}

Prediction apply_threshold(double probability, double threshold)
{
    return Prediction{probability >= threshold ? BinaryLabel::positive : BinaryLabel::negative, probability};
}

Prediction predict(const net::Predictor<float>& predictor, const DeepFeatureVector& features, double threshold)
{
    return apply_threshold(predict_probability(predictor, features), threshold);
}

TrainResult train(CubeModel& model, std::span<const LabeledCube> data, const TrainConfig& config)
{
    std::vector<net::Tensor<float>> tensors;
    tensors.reserve(data.size());
    for (const auto& item : data) {
        if (static_cast<int>(item.cube->channels) != model.config().in_channels) {
            throw DataError("training cube channel count does not match the network");
        }
        tensors.push_back(cube_tensor(*item.cube));
    }
    std::vector<Example<float>> examples;
    for (std::size_t i = 0; i < data.size(); ++i) examples.push_back({&tensors[i], data[i].label});
    return train<float>(model, examples, config);
}

} // namespace cdis
