#pragma once

#include <cstddef>
#include <vector>

#include "eegldm/nd/autograd.hpp"

// Differentiable tensor operations. Layouts are channels-first:
// 1D signals are [N, C, L], 2D grids are [N, C, H, W].
namespace eegldm::nd {

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
template <typename T> Var<T> exp(const Var<T>& a);
// Gradient is passed through only where lo < a < hi.
template <typename T> Var<T> clamp(const Var<T>& a, T lo, T hi);
template <typename T> Var<T> silu(const Var<T>& a);

template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
// mean((a - b)^2) over every element.
template <typename T> Var<T> mse(const Var<T>& a, const Var<T>& b);
// mean over the leading (batch) axis of 0.5 * sum(mu^2 + exp(lv) - lv - 1).
template <typename T> Var<T> gaussian_kl(const Var<T>& mu, const Var<T>& logvar);

template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);

// x: [N, in], weight: [out, in], bias: [out] or undefined.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

// Output extent of the project-wide "same-style" padding rule: ceil(in / stride).
std::size_t same_out_extent(std::size_t in, std::size_t stride);
// Leading pad for that rule; trailing pad absorbs the odd element.
std::size_t same_pad_before(std::size_t in, std::size_t kernel, std::size_t stride);

// x: [N, C, H, W], weight: [O, C, KH, KW], bias: [O] or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride_h,
              std::size_t stride_w);
// x: [N, C, L], weight: [O, C, K], bias: [O] or undefined.
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride);

// x: [N, C, ...], gamma/beta: [C].
template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, std::size_t groups,
                  T eps = T(1e-5));

// x: [N, C, ...] plus v: [N, C] broadcast over trailing axes.
template <typename T> Var<T> add_channel_bias(const Var<T>& x, const Var<T>& v);
template <typename T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
// Nearest-neighbour upsampling by integer factors, cropped to out_h x out_w.
template <typename T>
Var<T> upsample_nearest(const Var<T>& x, std::size_t fh, std::size_t fw, std::size_t out_h,
                        std::size_t out_w);
// Nearest-neighbour x2 upsampling of [N, C, H, W], cropped to out_h x out_w.
template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x, std::size_t out_h, std::size_t out_w);

// y: [N, C, L], mixers: [S, C, C]; sample n is mixed by mixers[ids[n]].
template <typename T>
Var<T> mix_channels(const Var<T>& y, const Var<T>& mixers, const std::vector<std::size_t>& ids);

}  // namespace eegldm::nd
