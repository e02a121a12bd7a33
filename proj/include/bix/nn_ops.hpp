#pragma once

#include <cstdint>
#include <vector>

#include "bix/tensor.hpp"

namespace bix {

// Convolution parameters. Regular convs store weight as [out, in, kh, kw];
// transposed convs (made by make_conv_transpose_params) store [in, out, kh, kw].
struct ConvParams {
    Tensor weight;
    Tensor bias;
    int stride = 1;
    int padding = 0;
    bool transposed = false;

    int64_t out_channels() const {
        return transposed ? weight.dim(1) : weight.dim(0);
    }
    int64_t in_channels() const {
        return transposed ? weight.dim(0) : weight.dim(1);
    }
    int64_t param_count() const { return weight.numel() + bias.numel(); }
};

// Kaiming-uniform weights (relu gain), zero bias.
ConvParams make_conv_params(int64_t out_ch, int64_t in_ch, int64_t kh, int64_t kw,
                            int stride, int padding, Rng& rng);
ConvParams make_conv_transpose_params(int64_t in_ch, int64_t out_ch, int64_t k,
                                      int stride, Rng& rng);

struct BatchNormState {
    Tensor gamma;  // [C]
    Tensor beta;   // [C]
    std::vector<real> running_mean;
    std::vector<real> running_var;
    real momentum = 0.1;
    real eps = 1e-5;

    int64_t channels() const { return gamma.numel(); }
    int64_t param_count() const { return gamma.numel() + beta.numel(); }
};

BatchNormState make_batch_norm(int64_t channels);

// x: [B, C, H, W]; standard cross-correlation.
Tensor conv2d(const Tensor& x, const ConvParams& p);

// Adjoint of the matching strided conv; spatial extents scale by the stride
// (kernel 2x2 stride 2 in all architectures here).
Tensor conv_transpose2d(const Tensor& x, const ConvParams& p);

// 2x2 window, stride 2; backward routes to the argmax (first index on ties).
Tensor max_pool2d(const Tensor& x);

// align_corners = false sampling; exact pass-through when sizes match.
Tensor bilinear_resize(const Tensor& x, int64_t target_h, int64_t target_w);

// Training mode normalizes with batch statistics and updates running stats;
// eval mode applies the running-stat affine transform.
Tensor batch_norm(const Tensor& x, BatchNormState& state, bool training);

enum class FuseMode { concat, average };

// concat stacks along channels; average is the element-wise mean.
Tensor fuse(const std::vector<Tensor>& streams, FuseMode mode);

// Mean per-pixel cross-entropy over B*H*W pixels; target holds class indices.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int32_t>& target);

// Per-pixel argmax over the channel axis of [B, K, H, W] logits.
std::vector<int32_t> argmax_channel(const Tensor& logits);

}  // namespace bix
