#pragma once

#include "cdis/common.hpp"
#include "cdis/net/layers.hpp"

#include <array>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace cdis::net {

struct NetworkConfig {
    int in_channels = 1;
    std::array<int, 4> stage_blocks{3, 4, 6, 3};
    int base_width = 64;
    int feature_dim = 512;
    int norm_groups = 32;
    int predictor_hidden = 64;
    std::uint64_t seed = 0;

    /// stage_blocks (1,1,1,1), width 4, 32 features.
    static NetworkConfig miniature();

    /// Throws UsageError.
    void validate() const;

    /// Stem convolution + two per residual block + the embedding layer.
    /// Projection shortcuts are not counted, as in the usual depth naming.
    int weighted_layers() const
    {
        return 1 + 2 * std::accumulate(stage_blocks.begin(), stage_blocks.end(), 0) + 1;
    }

    bool operator==(const NetworkConfig&) const = default;
};

inline NetworkConfig NetworkConfig::miniature()
{
    NetworkConfig cfg;
    cfg.stage_blocks = {1, 1, 1, 1};
    cfg.base_width = 4;
    cfg.feature_dim = 32;
    cfg.norm_groups = 2;
    cfg.predictor_hidden = 16;
    return cfg;
}

inline void NetworkConfig::validate() const
{
    if (in_channels < 1) throw UsageError("network in_channels must be >= 1");
    for (int b : stage_blocks) {
        if (b < 1) throw UsageError("every stage needs at least one residual block");
    }
    if (base_width < 1) throw UsageError("network base_width must be >= 1");
    if (feature_dim < 1) throw UsageError("network feature_dim must be >= 1");
    if (norm_groups < 1) throw UsageError("network norm_groups must be >= 1");
    if (predictor_hidden < 1) throw UsageError("predictor_hidden must be >= 1");
}

/// In-plane stride 2 from the second stage on; the slice axis is halved only
/// entering stages 2 and 3 so that 25 slices survive.
inline Triple stage_stride(int stage)
{
    return Triple{(stage == 1 || stage == 2) ? 2 : 1, stage > 0 ? 2 : 1, stage > 0 ? 2 : 1};
}

template <typename T>
struct BlockCache {
    Tensor<T> x;
    Tensor<T> a1;
    GroupNormCache<T> n1;
    GroupNormCache<T> n2;
    GroupNormCache<T> ns;
    Tensor<T> y;
};

template <typename T>
class BasicBlock {
public:
    BasicBlock(const std::string& name, int cin, int cout, Triple stride, int groups)
        : conv1(name + ".conv1", ConvSpec{cin, cout, {3, 3, 3}, stride, {1, 1, 1}}),
          norm1(name + ".norm1", cout, groups),
          conv2(name + ".conv2", ConvSpec{cout, cout, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}}),
          norm2(name + ".norm2", cout, groups),
          projection(cin != cout || stride != Triple{1, 1, 1})
    {
        if (projection) {
            shortcut = Conv3d<T>(name + ".shortcut", ConvSpec{cin, cout, {1, 1, 1}, stride, {0, 0, 0}});
            shortcut_norm = GroupNorm<T>(name + ".shortcut_norm", cout, groups);
        }
    }

    void init(Rng& rng)
    {
        conv1.init(rng);
        conv2.init(rng);
        if (projection) shortcut.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& x, BlockCache<T>* cache) const
    {
        Tensor<T> h = norm1.forward(conv1.forward(x), cache ? &cache->n1 : nullptr);
        relu_inplace(h);
        Tensor<T> out = norm2.forward(conv2.forward(h), cache ? &cache->n2 : nullptr);
        if (projection) {
            const Tensor<T> s = shortcut_norm.forward(shortcut.forward(x), cache ? &cache->ns : nullptr);
            for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += s.v[i];
        } else {
            for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += x.v[i];
        }
        relu_inplace(out);
        if (cache) {
            cache->x = x;
            cache->a1 = std::move(h);
            cache->y = out;
        }
        return out;
    }

    Tensor<T> backward(Tensor<T> gy, const BlockCache<T>& c)
    {
        relu_backward_inplace(gy, c.y);
        Tensor<T> g = norm2.backward(gy, c.n2);
        g = conv2.backward(c.a1, g, true);
        relu_backward_inplace(g, c.a1);
        g = norm1.backward(g, c.n1);
        Tensor<T> gx = conv1.backward(c.x, g, true);
        if (projection) {
            const Tensor<T> gs = shortcut.backward(c.x, shortcut_norm.backward(gy, c.ns), true);
            for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += gs.v[i];
        } else {
            for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += gy.v[i];
        }
        return gx;
    }

    template <typename F>
    void for_each_param(F&& fn)
    {
        fn(conv1.weight);
        fn(norm1.gamma);
        fn(norm1.beta);
        fn(conv2.weight);
        fn(norm2.gamma);
        fn(norm2.beta);
        if (projection) {
            fn(shortcut.weight);
            fn(shortcut_norm.gamma);
            fn(shortcut_norm.beta);
        }
    }

    Conv3d<T> conv1;
    GroupNorm<T> norm1;
    Conv3d<T> conv2;
    GroupNorm<T> norm2;
    bool projection = false;
    Conv3d<T> shortcut;
    GroupNorm<T> shortcut_norm;
};

template <typename T>
struct ExtractorCache {
    Tensor<T> input;
    GroupNormCache<T> stem_norm;
    Tensor<T> stem_act;
    std::vector<std::uint32_t> pool_argmax;
    std::vector<BlockCache<T>> blocks;
    Shape last_shape;
    std::vector<T> pooled;
};

/// Volumetric residual feature extractor: 7x7x7 stem, max pool, four
/// residual stages, global average pooling and a linear embedding to
/// `feature_dim`.
template <typename T>
class Extractor {
public:
    explicit Extractor(const NetworkConfig& cfg) : config_(cfg)
    {
        cfg.validate();
        const int w = cfg.base_width;
        stem = Conv3d<T>("stem.conv", ConvSpec{cfg.in_channels, w, {7, 7, 7}, {1, 2, 2}, {3, 3, 3}});
        stem_norm = GroupNorm<T>("stem.norm", w, cfg.norm_groups);
        pool = MaxPool3d<T>({3, 3, 3}, {1, 2, 2}, {1, 1, 1});
        int cin = w;
        for (int s = 0; s < 4; ++s) {
            const int cout = w << s;
            for (int b = 0; b < cfg.stage_blocks[static_cast<std::size_t>(s)]; ++b) {
                const std::string name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1);
                blocks.emplace_back(name, cin, cout, b == 0 ? stage_stride(s) : Triple{1, 1, 1}, cfg.norm_groups);
                cin = cout;
            }
        }
        embed = Linear<T>("embed", cin, cfg.feature_dim);
        Rng rng(splitmix64(cfg.seed ^ 0x65787472ULL));
        stem.init(rng);
        for (auto& b : blocks) b.init(rng);
        embed.init(rng);
    }

    const NetworkConfig& config() const { return config_; }
    int weighted_layers() const { return config_.weighted_layers(); }

    std::vector<T> forward(const Tensor<T>& x, ExtractorCache<T>* cache) const
    {
        if (x.shape.c != config_.in_channels) {
            throw DataError("extractor expects " + std::to_string(config_.in_channels) + " input channels, got "
                            + std::to_string(x.shape.c));
        }
        Tensor<T> h = stem_norm.forward(stem.forward(x), cache ? &cache->stem_norm : nullptr);
        relu_inplace(h);
        Tensor<T> p = pool.forward(h, cache ? &cache->pool_argmax : nullptr);
        if (cache) {
            cache->input = x;
            cache->stem_act = std::move(h);
            cache->blocks.resize(blocks.size());
        }
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            p = blocks[i].forward(p, cache ? &cache->blocks[i] : nullptr);
        }
        std::vector<T> pooled(static_cast<std::size_t>(p.shape.c));
        const std::size_t S = p.shape.spatial();
        for (int c = 0; c < p.shape.c; ++c) {
            double acc = 0.0;
            const T* pc = p.channel(c);
            for (std::size_t i = 0; i < S; ++i) acc += pc[i];
            pooled[static_cast<std::size_t>(c)] = static_cast<T>(acc / static_cast<double>(S));
        }
        if (cache) {
            cache->last_shape = p.shape;
            cache->pooled = pooled;
        }
        return embed.forward(pooled);
    }

    void backward(const std::vector<T>& gfeat, const ExtractorCache<T>& cache)
    {
        const std::vector<T> gpooled = embed.backward(cache.pooled, gfeat);
        Tensor<T> g(cache.last_shape);
        const std::size_t S = g.shape.spatial();
        for (int c = 0; c < g.shape.c; ++c) {
            const T v = static_cast<T>(gpooled[static_cast<std::size_t>(c)] / static_cast<double>(S));
            std::fill(g.channel(c), g.channel(c) + S, v);
        }
        for (std::size_t i = blocks.size(); i-- > 0;) {
            g = blocks[i].backward(std::move(g), cache.blocks[i]);
        }
        g = pool.backward(cache.stem_act.shape, g, cache.pool_argmax);
        relu_backward_inplace(g, cache.stem_act);
        g = stem_norm.backward(g, cache.stem_norm);
        stem.backward(cache.input, g, false);
    }

    template <typename F>
    void for_each_param(F&& fn)
    {
        fn(stem.weight);
        fn(stem_norm.gamma);
        fn(stem_norm.beta);
        for (auto& b : blocks) b.for_each_param(fn);
        fn(embed.weight);
        fn(embed.bias);
    }

    template <typename F>
    void for_each_param(F&& fn) const
    {
        const_cast<Extractor*>(this)->for_each_param([&](const Param<T>& p) { fn(p); });
    }

    Conv3d<T> stem;
    GroupNorm<T> stem_norm;
    MaxPool3d<T> pool;
    std::vector<BasicBlock<T>> blocks;
    Linear<T> embed;

private:
    NetworkConfig config_;
};

template <typename T>
struct PredictorCache {
    std::vector<T> input;
    std::vector<T> hidden;
};

/// Fully connected head: feature -> hidden (ReLU) -> logit.
template <typename T>
class Predictor {
public:
    Predictor(int feature_dim, int hidden, std::uint64_t seed)
        : fc1("predictor.fc1", feature_dim, hidden), fc2("predictor.fc2", hidden, 1)
    {
        if (feature_dim < 1 || hidden < 1) throw UsageError("predictor dimensions must be >= 1");
        Rng rng(splitmix64(seed ^ 0x70726564ULL));
        fc1.init(rng);
        fc2.init(rng);
    }

    int feature_dim() const { return fc1.in_features(); }

    T logit(const std::vector<T>& features, PredictorCache<T>* cache) const
    {
        std::vector<T> h = fc1.forward(features);
        relu_vector(h);
        const T z = fc2.forward(h)[0];
        if (cache) {
            cache->input = features;
            cache->hidden = std::move(h);
        }
        return z;
    }

    std::vector<T> backward(T glogit, const PredictorCache<T>& c)
    {
        std::vector<T> gh = fc2.backward(c.hidden, std::vector<T>{glogit});
        for (std::size_t i = 0; i < gh.size(); ++i) {
            if (!(c.hidden[i] > T(0))) gh[i] = T(0);
        }
        return fc1.backward(c.input, gh);
    }

    template <typename F>
    void for_each_param(F&& fn)
    {
        fn(fc1.weight);
        fn(fc1.bias);
        fn(fc2.weight);
        fn(fc2.bias);
    }

    template <typename F>
    void for_each_param(F&& fn) const
    {
        const_cast<Predictor*>(this)->for_each_param([&](const Param<T>& p) { fn(p); });
    }

    Linear<T> fc1;
    Linear<T> fc2;

private:
    static void relu_vector(std::vector<T>& v)
    {
        for (auto& x : v) x = x > T(0) ? x : T(0);
    }
};

} // namespace cdis::net
