#pragma once

#include "cdis/common.hpp"
#include "cdis/net/tensor.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace cdis::net {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Axis order everywhere is (depth/slice, height, width).
using Triple = std::array<int, 3>;

inline int out_extent(int in, int kernel, int stride, int pad)
{
    return (in + 2 * pad - kernel) / stride + 1;
}

struct ConvSpec {
    int cin = 1;
    int cout = 1;
    Triple kernel{3, 3, 3};
    Triple stride{1, 1, 1};
    Triple pad{1, 1, 1};

    int patch() const { return cin * kernel[0] * kernel[1] * kernel[2]; }
};

/// Bias-free 3D convolution lowered to im2col + GEMM over blocks of output
/// rows.
template <typename T>
class Conv3d {
public:
    Conv3d() = default;
    Conv3d(std::string name, ConvSpec spec)
        : weight(std::move(name), {static_cast<std::size_t>(spec.cout), static_cast<std::size_t>(spec.patch())}), spec_(spec)
    {
    }

    const ConvSpec& spec() const { return spec_; }

    Shape output_shape(const Shape& in) const
    {
        return Shape{spec_.cout, out_extent(in.d, spec_.kernel[0], spec_.stride[0], spec_.pad[0]),
                     out_extent(in.h, spec_.kernel[1], spec_.stride[1], spec_.pad[1]),
                     out_extent(in.w, spec_.kernel[2], spec_.stride[2], spec_.pad[2])};
    }

    /// He-normal over fan-out.
    void init(Rng& rng)
    {
        const double fan_out = static_cast<double>(spec_.cout) * spec_.kernel[0] * spec_.kernel[1] * spec_.kernel[2];
        const double sd = std::sqrt(2.0 / fan_out);
        for (auto& w : weight.value) w = static_cast<T>(sd * rng.normal());
    }

    Tensor<T> forward(const Tensor<T>& x) const
    {
        check_input(x.shape);
        const Shape os = output_shape(x.shape);
        if (os.d < 1 || os.h < 1 || os.w < 1) {
            throw DataError("input " + x.shape.str() + " too small for convolution " + weight.name);
        }
        Tensor<T> y(os);
        const int K = spec_.patch();
        const Eigen::Map<const RowMatrix<T>> W(weight.value.data(), spec_.cout, K);
        std::vector<T> col;
        const std::vector<T> src = prepare_source(x);
        for_row_blocks(os, [&](int r0, int r1) {
            const int P = (r1 - r0) * os.w;
            col.resize(static_cast<std::size_t>(K) * P);
            im2col(src.data(), x.shape, os, r0, r1, col.data());
            const Eigen::Map<const RowMatrix<T>> C(col.data(), K, P);
            Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>> Y(y.v.data() + static_cast<std::size_t>(r0) * os.w,
                                                                 spec_.cout, P,
                                                                 Eigen::OuterStride<>(static_cast<Eigen::Index>(os.spatial())));
            Y.noalias() = W * C;
        });
        return y;
    }

    /// Accumulates the weight gradient; returns dL/dx when requested (an
    /// empty tensor otherwise).
    Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& gy, bool need_input_grad)
    {
        const Shape os = output_shape(x.shape);
        const int K = spec_.patch();
        const Eigen::Map<const RowMatrix<T>> W(weight.value.data(), spec_.cout, K);
        Eigen::Map<RowMatrix<T>> dW(weight.grad.data(), spec_.cout, K);
        std::vector<T> gsrc;
        if (need_input_grad) gsrc.assign(x.shape.size(), T(0));
        std::vector<T> col;
        std::vector<T> dcol;
        const std::vector<T> src = prepare_source(x);
        for_row_blocks(os, [&](int r0, int r1) {
            const int P = (r1 - r0) * os.w;
            col.resize(static_cast<std::size_t>(K) * P);
            im2col(src.data(), x.shape, os, r0, r1, col.data());
            const Eigen::Map<const RowMatrix<T>> C(col.data(), K, P);
            const Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>> dY(
                gy.v.data() + static_cast<std::size_t>(r0) * os.w, spec_.cout, P,
                Eigen::OuterStride<>(static_cast<Eigen::Index>(os.spatial())));
            dW.noalias() += dY * C.transpose();
            if (need_input_grad) {
                dcol.resize(col.size());
                Eigen::Map<RowMatrix<T>> dC(dcol.data(), K, P);
                dC.noalias() = W.transpose() * dY;
                col2im(dcol.data(), os, r0, r1, x.shape, gsrc.data());
            }
        });
        Tensor<T> gx;
        if (need_input_grad) gx = restore_layout(std::move(gsrc), x.shape);
        return gx;
    }

    Param<T> weight;

private:
    void check_input(const Shape& s) const
    {
        if (s.c != spec_.cin) {
            throw DataError(weight.name + ": expected " + std::to_string(spec_.cin) + " input channels, got "
                            + std::to_string(s.c));
        }
    }

    template <typename F>
    void for_row_blocks(const Shape& os, F&& fn) const
    {
        constexpr std::size_t kTargetColumn = std::size_t{1} << 18;
        const int rows = os.d * os.h;
        const std::size_t per_row = static_cast<std::size_t>(spec_.patch()) * os.w;
        const int block = std::max(1, static_cast<int>(kTargetColumn / std::max<std::size_t>(per_row, 1)));
        for (int r0 = 0; r0 < rows; r0 += block) {
            fn(r0, std::min(rows, r0 + block));
        }
    }

    // With stride 2 along x, each input row is stored even samples first,
    // then odd ones, so that every kernel tap reads a contiguous run.
    bool split_rows() const { return spec_.stride[2] == 2; }

    std::vector<T> prepare_source(const Tensor<T>& x) const
    {
        if (!split_rows()) return x.v;
        std::vector<T> out(x.v.size());
        const int W = x.shape.w;
        const int even = (W + 1) / 2;
        const std::size_t rows = x.v.size() / static_cast<std::size_t>(W);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* in = x.v.data() + r * W;
            T* o = out.data() + r * W;
            for (int i = 0; i < W; ++i) o[(i & 1) ? even + i / 2 : i / 2] = in[i];
        }
        return out;
    }

    Tensor<T> restore_layout(std::vector<T> buf, const Shape& shape) const
    {
        Tensor<T> t;
        t.shape = shape;
        if (!split_rows()) {
            t.v = std::move(buf);
            return t;
        }
        t.v.resize(buf.size());
        const int W = shape.w;
        const int even = (W + 1) / 2;
        const std::size_t rows = buf.size() / static_cast<std::size_t>(W);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* in = buf.data() + r * W;
            T* o = t.v.data() + r * W;
            for (int i = 0; i < W; ++i) o[i] = in[(i & 1) ? even + i / 2 : i / 2];
        }
        return t;
    }

    static int floor_div2(int v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }

    // Valid output x range [lo, hi) for kernel tap kx.
    void valid_range(int kx, int in_w, int out_w, int& lo, int& hi) const
    {
        const int sw = spec_.stride[2];
        const int pw = spec_.pad[2];
        lo = 0;
        while (lo < out_w && lo * sw - pw + kx < 0) ++lo;
        hi = out_w;
        while (hi > lo && (hi - 1) * sw - pw + kx >= in_w) --hi;
    }

    // Offset inside a (possibly split) row of input sample 0 for tap kx:
    // input sample ox*sw + kx - pw lives at row[ox * step + offset].
    void tap_layout(int kx, int in_w, int& step, int& offset) const
    {
        const int off = kx - spec_.pad[2];
        if (split_rows()) {
            step = 1;
            offset = ((off & 1) ? (in_w + 1) / 2 : 0) + floor_div2(off);
        } else {
            step = spec_.stride[2];
            offset = off;
        }
    }

    void im2col(const T* src, const Shape& is, const Shape& os, int r0, int r1, T* col) const
    {
        const int P = (r1 - r0) * os.w;
        const auto [kd, kh, kw] = spec_.kernel;
        const int sd = spec_.stride[0];
        const int sh = spec_.stride[1];
        const int pd = spec_.pad[0];
        const int ph = spec_.pad[1];
        int k = 0;
        for (int ci = 0; ci < spec_.cin; ++ci) {
            const T* xc = src + static_cast<std::size_t>(ci) * is.spatial();
            for (int kz = 0; kz < kd; ++kz) {
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx, ++k) {
                        int lo = 0;
                        int hi = 0;
                        valid_range(kx, is.w, os.w, lo, hi);
                        int step = 1;
                        int offset = 0;
                        tap_layout(kx, is.w, step, offset);
                        T* dst = col + static_cast<std::size_t>(k) * P;
                        for (int r = r0; r < r1; ++r, dst += os.w) {
                            const int oz = r / os.h;
                            const int oy = r % os.h;
                            const int iz = oz * sd - pd + kz;
                            const int iy = oy * sh - ph + ky;
                            if (iz < 0 || iz >= is.d || iy < 0 || iy >= is.h) {
                                std::fill(dst, dst + os.w, T(0));
                                continue;
                            }
                            const T* row = xc + (static_cast<std::size_t>(iz) * is.h + iy) * is.w;
                            std::fill(dst, dst + lo, T(0));
                            if (step == 1) {
                                std::copy(row + lo + offset, row + hi + offset, dst + lo);
                            } else {
                                for (int ox = lo; ox < hi; ++ox) dst[ox] = row[ox * step + offset];
                            }
                            std::fill(dst + hi, dst + os.w, T(0));
                        }
                    }
                }
            }
        }
    }

    void col2im(const T* col, const Shape& os, int r0, int r1, const Shape& is, T* gsrc) const
    {
        const int P = (r1 - r0) * os.w;
        const auto [kd, kh, kw] = spec_.kernel;
        const int sd = spec_.stride[0];
        const int sh = spec_.stride[1];
        const int pd = spec_.pad[0];
        const int ph = spec_.pad[1];
        int k = 0;
        for (int ci = 0; ci < spec_.cin; ++ci) {
            T* xc = gsrc + static_cast<std::size_t>(ci) * is.spatial();
            for (int kz = 0; kz < kd; ++kz) {
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx, ++k) {
                        int lo = 0;
                        int hi = 0;
                        valid_range(kx, is.w, os.w, lo, hi);
                        int step = 1;
                        int offset = 0;
                        tap_layout(kx, is.w, step, offset);
                        const T* s = col + static_cast<std::size_t>(k) * P;
                        for (int r = r0; r < r1; ++r, s += os.w) {
                            const int oz = r / os.h;
                            const int oy = r % os.h;
                            const int iz = oz * sd - pd + kz;
                            const int iy = oy * sh - ph + ky;
                            if (iz < 0 || iz >= is.d || iy < 0 || iy >= is.h) continue;
                            T* row = xc + (static_cast<std::size_t>(iz) * is.h + iy) * is.w;
                            for (int ox = lo; ox < hi; ++ox) row[ox * step + offset] += s[ox];
                        }
                    }
                }
            }
        }
    }

    ConvSpec spec_;
};

template <typename T>
struct GroupNormCache {
    Tensor<T> xhat;
    std::vector<T> inv_std; ///< one per group
};

/// Group normalization with per-channel affine parameters. Statistics are
/// per sample, so training and inference behave identically.
template <typename T>
class GroupNorm {
public:
    static constexpr double kEps = 1e-5;

    GroupNorm() = default;
    GroupNorm(const std::string& name, int channels, int groups)
        : gamma(name + ".gamma", {static_cast<std::size_t>(channels)}, T(1)),
          beta(name + ".beta", {static_cast<std::size_t>(channels)}, T(0)), channels_(channels),
          groups_(std::gcd(channels, std::max(groups, 1)))
    {
    }

    int groups() const { return groups_; }

    Tensor<T> forward(const Tensor<T>& x, GroupNormCache<T>* cache) const
    {
        const std::size_t S = x.shape.spatial();
        const int cpg = channels_ / groups_;
        Tensor<T> y(x.shape);
        if (cache) {
            cache->xhat = Tensor<T>(x.shape);
            cache->inv_std.assign(static_cast<std::size_t>(groups_), T(0));
        }
        for (int g = 0; g < groups_; ++g) {
            const std::size_t begin = static_cast<std::size_t>(g) * cpg * S;
            const std::size_t end = begin + static_cast<std::size_t>(cpg) * S;
            double mean = 0.0;
            for (std::size_t i = begin; i < end; ++i) mean += x.v[i];
            mean /= static_cast<double>(end - begin);
            double var = 0.0;
            for (std::size_t i = begin; i < end; ++i) {
                const double d = x.v[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(end - begin);
            const double inv = 1.0 / std::sqrt(var + kEps);
            if (cache) cache->inv_std[static_cast<std::size_t>(g)] = static_cast<T>(inv);
            for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
                const T gm = gamma.value[static_cast<std::size_t>(c)];
                const T bt = beta.value[static_cast<std::size_t>(c)];
                const T* xc = x.channel(c);
                T* yc = y.channel(c);
                T* hc = cache ? cache->xhat.channel(c) : nullptr;
                for (std::size_t i = 0; i < S; ++i) {
                    const T h = static_cast<T>((xc[i] - mean) * inv);
                    if (hc) hc[i] = h;
                    yc[i] = gm * h + bt;
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy, const GroupNormCache<T>& cache)
    {
        const std::size_t S = gy.shape.spatial();
        const int cpg = channels_ / groups_;
        const double M = static_cast<double>(S) * cpg;
        Tensor<T> gx(gy.shape);
        for (int g = 0; g < groups_; ++g) {
            double sum_dh = 0.0;
            double sum_dh_h = 0.0;
            for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
                const T* gc = gy.channel(c);
                const T* hc = cache.xhat.channel(c);
                const double gm = gamma.value[static_cast<std::size_t>(c)];
                double dg = 0.0;
                double db = 0.0;
                for (std::size_t i = 0; i < S; ++i) {
                    dg += static_cast<double>(gc[i]) * hc[i];
                    db += gc[i];
                }
                gamma.grad[static_cast<std::size_t>(c)] += static_cast<T>(dg);
                beta.grad[static_cast<std::size_t>(c)] += static_cast<T>(db);
                sum_dh += gm * db;
                sum_dh_h += gm * dg;
            }
            const double inv = cache.inv_std[static_cast<std::size_t>(g)];
            const double a = sum_dh / M;
            const double b = sum_dh_h / M;
            for (int c = g * cpg; c < (g + 1) * cpg; ++c) {
                const T* gc = gy.channel(c);
                const T* hc = cache.xhat.channel(c);
                T* out = gx.channel(c);
                const double gm = gamma.value[static_cast<std::size_t>(c)];
                for (std::size_t i = 0; i < S; ++i) {
                    out[i] = static_cast<T>(inv * (gm * gc[i] - a - hc[i] * b));
                }
            }
        }
        return gx;
    }

    Param<T> gamma;
    Param<T> beta;

private:
    int channels_ = 0;
    int groups_ = 1;
};

template <typename T>
void relu_inplace(Tensor<T>& x)
{
    for (auto& v : x.v) v = v > T(0) ? v : T(0);
}

/// Masks `g` where the ReLU output was zero.
template <typename T>
void relu_backward_inplace(Tensor<T>& g, const Tensor<T>& relu_out)
{
    for (std::size_t i = 0; i < g.v.size(); ++i) {
        if (!(relu_out.v[i] > T(0))) g.v[i] = T(0);
    }
}

/// Max pooling; the cache keeps the winning input index of every output.
template <typename T>
class MaxPool3d {
public:
    MaxPool3d() = default;
    MaxPool3d(Triple kernel, Triple stride, Triple pad) : kernel_(kernel), stride_(stride), pad_(pad) {}

    Shape output_shape(const Shape& in) const
    {
        return Shape{in.c, out_extent(in.d, kernel_[0], stride_[0], pad_[0]),
                     out_extent(in.h, kernel_[1], stride_[1], pad_[1]), out_extent(in.w, kernel_[2], stride_[2], pad_[2])};
    }

    Tensor<T> forward(const Tensor<T>& x, std::vector<std::uint32_t>* argmax) const
    {
        const Shape is = x.shape;
        const Shape os = output_shape(is);
        Tensor<T> y(os);
        if (argmax) argmax->assign(os.size(), 0);
        std::size_t o = 0;
        for (int c = 0; c < is.c; ++c) {
            const std::size_t base = static_cast<std::size_t>(c) * is.spatial();
            for (int oz = 0; oz < os.d; ++oz) {
                for (int oy = 0; oy < os.h; ++oy) {
                    for (int ox = 0; ox < os.w; ++ox, ++o) {
                        T best = -std::numeric_limits<T>::infinity();
                        std::size_t best_i = base;
                        for (int kz = 0; kz < kernel_[0]; ++kz) {
                            const int iz = oz * stride_[0] - pad_[0] + kz;
                            if (iz < 0 || iz >= is.d) continue;
                            for (int ky = 0; ky < kernel_[1]; ++ky) {
                                const int iy = oy * stride_[1] - pad_[1] + ky;
                                if (iy < 0 || iy >= is.h) continue;
                                for (int kx = 0; kx < kernel_[2]; ++kx) {
                                    const int ix = ox * stride_[2] - pad_[2] + kx;
                                    if (ix < 0 || ix >= is.w) continue;
                                    const std::size_t i = base + (static_cast<std::size_t>(iz) * is.h + iy) * is.w + ix;
                                    if (x.v[i] > best) {
                                        best = x.v[i];
                                        best_i = i;
                                    }
                                }
                            }
                        }
                        y.v[o] = best;
                        if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best_i);
                    }
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Shape& in_shape, const Tensor<T>& gy, const std::vector<std::uint32_t>& argmax) const
    {
        Tensor<T> gx(in_shape);
        for (std::size_t o = 0; o < gy.v.size(); ++o) gx.v[argmax[o]] += gy.v[o];
        return gx;
    }

private:
    Triple kernel_{3, 3, 3};
    Triple stride_{1, 2, 2};
    Triple pad_{1, 1, 1};
};

/// Fully connected layer y = W x + b.
template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, int in, int out)
        : weight(name + ".weight", {static_cast<std::size_t>(out), static_cast<std::size_t>(in)}),
          bias(name + ".bias", {static_cast<std::size_t>(out)}), in_(in), out_(out)
    {
    }

    int in_features() const { return in_; }
    int out_features() const { return out_; }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and bias.
    void init(Rng& rng)
    {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
        for (auto& w : weight.value) w = static_cast<T>(rng.uniform(-bound, bound));
        for (auto& b : bias.value) b = static_cast<T>(rng.uniform(-bound, bound));
    }

    std::vector<T> forward(const std::vector<T>& x) const
    {
        if (static_cast<int>(x.size()) != in_) {
            throw DataError(weight.name + ": expected input length " + std::to_string(in_) + ", got "
                            + std::to_string(x.size()));
        }
        std::vector<T> y(static_cast<std::size_t>(out_));
        for (int o = 0; o < out_; ++o) {
            double acc = bias.value[static_cast<std::size_t>(o)];
            const T* row = weight.value.data() + static_cast<std::size_t>(o) * in_;
            for (int i = 0; i < in_; ++i) acc += static_cast<double>(row[i]) * x[static_cast<std::size_t>(i)];
            y[static_cast<std::size_t>(o)] = static_cast<T>(acc);
        }
        return y;
    }

    std::vector<T> backward(const std::vector<T>& x, const std::vector<T>& gy)
    {
        std::vector<T> gx(static_cast<std::size_t>(in_), T(0));
        for (int o = 0; o < out_; ++o) {
            const T g = gy[static_cast<std::size_t>(o)];
            bias.grad[static_cast<std::size_t>(o)] += g;
            T* grow = weight.grad.data() + static_cast<std::size_t>(o) * in_;
            const T* row = weight.value.data() + static_cast<std::size_t>(o) * in_;
            for (int i = 0; i < in_; ++i) {
                grow[i] += g * x[static_cast<std::size_t>(i)];
                gx[static_cast<std::size_t>(i)] += g * row[i];
            }
        }
        return gx;
    }

    Param<T> weight;
    Param<T> bias;

private:
    int in_ = 0;
    int out_ = 0;
};

} // namespace cdis::net
