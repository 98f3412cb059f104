#pragma once

#include <vector>

#include "sky/ops.hpp"
#include "sky/rng.hpp"
#include "sky/tensor.hpp"

namespace sky {

inline constexpr std::int64_t kDefaultAttentionBudgetBytes = 512ll << 20;

/// Channel attention: a C*C affinity map built from channel-wise inner
/// products of a shared 1x1 projection, blended back residually through the
/// learnable scalar `lambda` (zero-initialized, so the block starts as the
/// identity).
struct ChannelAttentionParams {
    Tensor reduce_weight;  // C x C x 1 x 1
    Tensor reduce_bias;    // C
    Tensor lambda;         // single element
};

/// Spatial attention: an HW*HW affinity map over pixel embeddings from three
/// independent 1x1 projections (query/key reduced to C/8 channels, value kept
/// at C), blended residually through the learnable scalar `mu`.
struct SpatialAttentionParams {
    Tensor query_weight, query_bias;  // Cr x C x 1 x 1, Cr  (S1)
    Tensor key_weight, key_bias;      // Cr x C x 1 x 1, Cr  (S2)
    Tensor value_weight, value_bias;  // C x C x 1 x 1, C    (S3)
    Tensor mu;                        // single element
};

struct AttentionParams {
    ChannelAttentionParams channel;
    SpatialAttentionParams spatial;
};

enum class AttentionArrangement {
    None,
    SpatialOnly,
    ChannelOnly,
    Parallel,
    SpatialThenChannel,
    ChannelThenSpatial,  // default; best configuration in the ablation
};

const char* to_string(AttentionArrangement a);
AttentionArrangement attention_arrangement_from_string(const std::string& s);

/// Scale pyramid: parallel dilated 3x3 branches over the same input, channel
/// concatenation, then a 1x1 fusion back to the input channel count.
struct SpmParams {
    std::vector<int> rates;  // dilation per branch
    std::vector<Tensor> branch_weights;  // each Cb x C x 3 x 3
    std::vector<Tensor> branch_biases;   // each Cb
    Tensor fuse_weight;  // C x (n*Cb) x 1 x 1
    Tensor fuse_bias;    // C
};

/// Deformable 3x3 convolution, stride 1, padding 1: per-location fractional
/// offsets are predicted by a companion 3x3 convolution (zero-initialized, so
/// the layer starts as a standard convolution).
struct DeformableConvParams {
    Tensor weight, bias;                // O x C x 3 x 3, O
    Tensor offset_weight, offset_bias;  // 18 x C x 3 x 3, 18
};

// ---- layer forwards; inputs are C*H*W feature maps ----

Tensor channel_attention(const Tensor& f, const ChannelAttentionParams& p);

Tensor spatial_attention(const Tensor& f, const SpatialAttentionParams& p,
                         std::int64_t budget_bytes = kDefaultAttentionBudgetBytes);

Tensor attention_block(const Tensor& f, AttentionArrangement arrangement,
                       const AttentionParams& p,
                       std::int64_t budget_bytes = kDefaultAttentionBudgetBytes);

Tensor spm_forward(const Tensor& f, const SpmParams& p);

Tensor deformable_conv2d(const Tensor& x, const DeformableConvParams& p);

/// Reduced channel count used by the spatial-attention projections.
std::int64_t spatial_reduced_channels(std::int64_t c);

// ---- parameter initialization ----

/// Trainable weights draw from N(0, 0.01^2); flat row-major draw order.
Tensor init_weight(Shape shape, Rng& rng);
/// Biases start at zero.
Tensor init_bias(std::int64_t n);
/// Offset predictors start at exactly zero.
Tensor init_offset_weight(Shape shape);
/// He-scaled init, N(0, sqrt(2/fan_in)); used for backbone convs trained
/// from scratch (imported pretrained weights replace them when available).
Tensor init_he_weight(Shape shape, Rng& rng);

ChannelAttentionParams make_channel_attention_params(std::int64_t c, Rng& rng);
SpatialAttentionParams make_spatial_attention_params(std::int64_t c, Rng& rng);
SpmParams make_spm_params(std::int64_t c_in, std::int64_t c_branch, std::vector<int> rates, Rng& rng);
DeformableConvParams make_deformable_params(std::int64_t c_in, std::int64_t c_out, Rng& rng);

}  // namespace sky
