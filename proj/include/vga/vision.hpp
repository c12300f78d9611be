#pragma once

#include <array>
#include <cstddef>

#include "vga/tensor.hpp"

namespace vga {

/// Integer stencil and normalization of one fixed residual kernel.
struct SrmStencil {
    std::array<std::array<int, 5>, 5> taps;
    double scale;
};

/// The three high-pass residual stencils (second-order derivative, 5×5
/// square residual, 3×3 square residual) with normalizations 1/4, 1/12, 1/2.
/// Every stencil sums to zero.
const std::array<SrmStencil, 3>& srm_stencils();

/// Constant kernel bank {3,5,5,3}: each stencil replicated over the three
/// color channels. No gradient ever flows into these.
const Tensor& srm_kernels();

/// Valid cross-correlation of an H×W×3 image against the fixed bank; output
/// (H-4)×(W-4)×3, one channel per kernel.
Tensor srm_residual(Tape& tape, const Tensor& image);

enum class EncoderKind { TinyPatch, Precomputed };
const char* to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& s);

/// Minimal trainable image encoder: non-overlapping p×p patches, a linear
/// projection per patch, mean over patches.
struct PatchEncoder {
    std::size_t patch = 8;
    Tensor projection;  // (patch·patch·C) × width
};

Tensor encode_patches(Tape& tape, const Tensor& image, const PatchEncoder& enc);

struct VisualBranchParams {
    EncoderKind encoder = EncoderKind::TinyPatch;
    bool noise_enabled = true;
    std::size_t tokens = 1;  // how many attention tokens a width-d vector splits into
    double leaky_slope = 0.01;
    PatchEncoder semantic_encoder;
    PatchEncoder noise_encoder;  // separate instance from the semantic one
    Tensor semantic_fc_w;  // encoder width × d/2
    Tensor semantic_fc_b;
    Tensor noise_fc_w;
    Tensor noise_fc_b;
    MultiHeadParams attention;  // width d/tokens
};

/// Semantic half: encoder output through the semantic FC + LeakyReLU.
/// visual_input is a raw H×W×3 image for the tiny-patch encoder or a rank-1
/// precomputed embedding; a mismatch with the configured kind is a
/// configuration error.
Tensor encode_semantic(Tape& tape, const Tensor& visual_input, const VisualBranchParams& params);

/// Tampering half: SRM residual through its own encoder, FC and LeakyReLU.
/// Requires a raw image.
Tensor encode_noise(Tape& tape, const Tensor& image, const VisualBranchParams& params);

/// Concat(semantic, noise) split into `tokens` tokens, multi-head
/// self-attention, flattened back to a width-d row.
Tensor visual_self_attention(Tape& tape, const Tensor& semantic, const Tensor& noise,
                             const VisualBranchParams& params);

/// Full visual branch. With the noise branch disabled the tampering half is a
/// constant zero vector of width d/2 (semantic parameter shapes unchanged).
Tensor visual_branch(Tape& tape, const Tensor& visual_input, const VisualBranchParams& params);

}  // namespace vga
