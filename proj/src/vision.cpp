#include "vga/vision.hpp"

#include <string>

namespace vga {

const std::array<SrmStencil, 3>& srm_stencils() {
    using Taps = std::array<std::array<int, 5>, 5>;
    static const std::array<SrmStencil, 3> stencils = {{
        // second-order derivative
        {Taps{{{0, 0, 0, 0, 0},
               {0, -1, 2, -1, 0},
               {0, 2, -4, 2, 0},
               {0, -1, 2, -1, 0},
               {0, 0, 0, 0, 0}}},
         1.0 / 4.0},
        // 5×5 square residual
        {Taps{{{-1, 2, -2, 2, -1},
               {2, -6, 8, -6, 2},
               {-2, 8, -12, 8, -2},
               {2, -6, 8, -6, 2},
               {-1, 2, -2, 2, -1}}},
         1.0 / 12.0},
        // 3×3 square residual embedded in the 5×5 window
        {Taps{{{0, 0, 0, 0, 0},
               {0, 1, -2, 1, 0},
               {0, -2, 4, -2, 0},
               {0, 1, -2, 1, 0},
               {0, 0, 0, 0, 0}}},
         1.0 / 2.0},
    }};
    return stencils;
}

const Tensor& srm_kernels() {
    static const Tensor bank = [] {
        Tensor t = Tensor::zeros({3, 5, 5, 3});
        auto v = t.values();
        const auto& stencils = srm_stencils();
        for (std::size_t k = 0; k < 3; ++k) {
            for (std::size_t y = 0; y < 5; ++y)
                for (std::size_t x = 0; x < 5; ++x) {
                    const double tap = stencils[k].taps[y][x] * stencils[k].scale;
                    for (std::size_t c = 0; c < 3; ++c) v[((k * 5 + y) * 5 + x) * 3 + c] = tap;
                }
        }
        return t;
    }();
    return bank;
}

Tensor srm_residual(Tape& tape, const Tensor& image) {
    if (image.rank() != 3 || image.shape()[2] != 3) {
        throw DimensionError("srm_residual: image must be H×W×3, got " + shape_string(image));
    }
    return conv2d_valid(tape, image, srm_kernels());
}

const char* to_string(EncoderKind kind) {
    return kind == EncoderKind::TinyPatch ? "tiny_patch" : "precomputed";
}

EncoderKind encoder_kind_from_string(const std::string& s) {
    if (s == "tiny_patch" || s == "tiny-patch") return EncoderKind::TinyPatch;
    if (s == "precomputed") return EncoderKind::Precomputed;
    throw ConfigError("unknown encoder kind '" + s + "' (tiny_patch|precomputed)");
}

Tensor encode_patches(Tape& tape, const Tensor& image, const PatchEncoder& enc) {
    Tensor patches = extract_patches(tape, image, enc.patch);
    if (patches.cols() != enc.projection.rows()) {
        throw DimensionError("encode_patches: patch width " + std::to_string(patches.cols()) +
                             " vs projection " + shape_string(enc.projection));
    }
    Tensor projected = matmul(tape, patches, enc.projection);
    Tensor pooled = mean_rows(tape, projected);
    return reshape(tape, pooled, {1, pooled.size()});
}

Tensor encode_semantic(Tape& tape, const Tensor& visual_input, const VisualBranchParams& params) {
    Tensor encoded;  // {1, enc_width}
    if (params.encoder == EncoderKind::TinyPatch) {
        if (visual_input.rank() != 3) {
            throw ConfigError(
                "encode_semantic: the tiny-patch encoder needs a raw image, got a precomputed "
                "embedding (switch --encoder)");
        }
        encoded = encode_patches(tape, visual_input, params.semantic_encoder);
    } else {
        if (visual_input.rank() != 1) {
            throw ConfigError(
                "encode_semantic: the precomputed encoder expects a stored embedding, got a raw "
                "image (switch --encoder)");
        }
        encoded = reshape(tape, visual_input, {1, visual_input.size()});
    }
    return leaky_relu(tape, affine(tape, encoded, params.semantic_fc_w, params.semantic_fc_b),
                      params.leaky_slope);
}

Tensor encode_noise(Tape& tape, const Tensor& image, const VisualBranchParams& params) {
    if (image.rank() != 3) {
        throw ConfigError(
            "encode_noise: the noise branch needs a raw image; rerun with --no-noise for "
            "precomputed visual embeddings");
    }
    Tensor residual = srm_residual(tape, image);
    Tensor encoded = encode_patches(tape, residual, params.noise_encoder);
    return leaky_relu(tape, affine(tape, encoded, params.noise_fc_w, params.noise_fc_b),
                      params.leaky_slope);
}

Tensor visual_self_attention(Tape& tape, const Tensor& semantic, const Tensor& noise,
                             const VisualBranchParams& params) {
    Tensor joined = concat_cols(tape, semantic, noise);  // {1, d}
    const std::size_t d = joined.cols();
    if (params.tokens == 0 || d % params.tokens != 0) {
        throw ConfigError("visual_self_attention: width " + std::to_string(d) +
                          " not divisible by " + std::to_string(params.tokens) + " tokens");
    }
    Tensor tokens = reshape(tape, joined, {params.tokens, d / params.tokens});
    Tensor attended = multi_head_attention(tape, tokens, tokens, params.attention);
    return reshape(tape, attended, {1, d});
}

Tensor visual_branch(Tape& tape, const Tensor& visual_input, const VisualBranchParams& params) {
    Tensor semantic = encode_semantic(tape, visual_input, params);
    Tensor noise;
    if (params.noise_enabled) {
        noise = encode_noise(tape, visual_input, params);
    } else {
        noise = Tensor::zeros({1, semantic.cols()});
    }
    return visual_self_attention(tape, semantic, noise, params);
}

}  // namespace vga
