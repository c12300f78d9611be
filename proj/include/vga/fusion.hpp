#pragma once

#include <string>

#include "vga/tensor.hpp"

namespace vga {

/// Two affine layers with a LeakyReLU between; maps a width-d representation
/// into the shared similarity space.
struct ProjectionHead {
    Tensor w1, b1;  // d × d
    Tensor w2, b2;  // d × d_p
    double leaky_slope = 0.01;
};

/// Accepts a rank-1 [d] vector or a {1,d} row; returns rank-1 [d_p].
Tensor project(Tape& tape, const Tensor& x, const ProjectionHead& head);

enum class SimMode { Cosine, Euclidean, Mse, Off };
const char* to_string(SimMode mode);
SimMode sim_mode_from_string(const std::string& s);

/// −(t·log p + (1−t)·log(1−p)) with clamped logs, for a scalar probability.
Tensor binary_cross_entropy(Tape& tape, const Tensor& p, int target);

/// Cross-entropy on the sigmoid-mapped cosine: low similarity is rewarded for
/// label 1, high similarity for label 0.
Tensor similarity_loss_from_cosine(Tape& tape, const Tensor& cosine, int label);

/// Full similarity objective for the configured mode; Off returns a constant
/// zero. mse_margin only matters in Mse mode.
Tensor similarity_loss(Tape& tape, const Tensor& z_graph, const Tensor& z_vis, int label,
                       SimMode mode, double mse_margin);

enum class FusionMode { CoAttention, Concat, Weighted, SelfAttention };
const char* to_string(FusionMode mode);
FusionMode fusion_mode_from_string(const std::string& s);

struct FusionParams {
    FusionMode mode = FusionMode::CoAttention;
    std::size_t tokens = 1;  // token count per modality vector
    // Co-attention: two swapped-query passes, named by where the values come from.
    MultiHeadParams vis_values;    // queries graph tokens, keys/values vis tokens
    MultiHeadParams graph_values;  // queries vis tokens, keys/values graph tokens
    MultiHeadParams self_attention;  // SelfAttention mode, width 2d/tokens
    Tensor graph_weight, vis_weight;  // learned scalars, Weighted mode
};

/// Fused multimodal representation, always a {1, 2d} row.
Tensor fuse(Tape& tape, const Tensor& graph_vec, const Tensor& vis_vec, const FusionParams& params);

struct Classifier {
    Tensor w;  // 2d × 2
    Tensor b;  // [2]
};

struct Classification {
    Tensor probabilities;  // rank-1 [2]
    Tensor y_hat;          // scalar, probability of class 1
};

Classification classify(Tape& tape, const Tensor& fused, const Classifier& classifier);

Tensor classification_loss(Tape& tape, const Tensor& y_hat, int label);

/// alpha·cls + (1−alpha)·sim; alpha outside [0,1] is a configuration error.
Tensor joint_loss(Tape& tape, const Tensor& cls_loss, const Tensor& sim_loss, double alpha);

}  // namespace vga
