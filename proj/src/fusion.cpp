#include "vga/fusion.hpp"

#include <cmath>

namespace vga {

namespace {

Tensor as_row(Tape& tape, const Tensor& x, const char* what) {
    if (x.rank() == 1) return reshape(tape, x, {1, x.size()});
    if (x.rank() == 2 && x.rows() == 1) return x;
    throw DimensionError(std::string(what) + ": expected a vector, got " + shape_string(x));
}

}  // namespace

Tensor project(Tape& tape, const Tensor& x, const ProjectionHead& head) {
    Tensor row = as_row(tape, x, "project");
    if (row.cols() != head.w1.rows()) {
        throw DimensionError("project: input width " + std::to_string(row.cols()) +
                             " vs head " + shape_string(head.w1));
    }
    Tensor hidden = leaky_relu(tape, affine(tape, row, head.w1, head.b1), head.leaky_slope);
    Tensor out = affine(tape, hidden, head.w2, head.b2);
    return reshape(tape, out, {out.cols()});
}

const char* to_string(SimMode mode) {
    switch (mode) {
        case SimMode::Cosine: return "cosine";
        case SimMode::Euclidean: return "euclidean";
        case SimMode::Mse: return "mse";
        case SimMode::Off: return "off";
    }
    return "?";
}

SimMode sim_mode_from_string(const std::string& s) {
    if (s == "cosine") return SimMode::Cosine;
    if (s == "euclidean") return SimMode::Euclidean;
    if (s == "mse") return SimMode::Mse;
    if (s == "off") return SimMode::Off;
    throw ConfigError("unknown similarity mode '" + s + "' (cosine|euclidean|mse|off)");
}

Tensor binary_cross_entropy(Tape& tape, const Tensor& p, int target) {
    if (p.size() != 1) {
        throw DimensionError("binary_cross_entropy: probability must be scalar, got " +
                             shape_string(p));
    }
    if (target != 0 && target != 1) {
        throw ContractError("binary_cross_entropy: target must be 0 or 1");
    }
    if (target == 1) return scale(tape, log_clamped(tape, p), -1.0);
    Tensor one_minus = add_scalar(tape, scale(tape, p, -1.0), 1.0);
    return scale(tape, log_clamped(tape, one_minus), -1.0);
}

Tensor similarity_loss_from_cosine(Tape& tape, const Tensor& cosine, int label) {
    Tensor s = sigmoid(tape, cosine);
    // Eq pattern: -(y·log(1-s) + (1-y)·log s) == BCE of s against the flipped label.
    return binary_cross_entropy(tape, s, 1 - label);
}

Tensor similarity_loss(Tape& tape, const Tensor& z_graph, const Tensor& z_vis, int label,
                       SimMode mode, double mse_margin) {
    switch (mode) {
        case SimMode::Off:
            return Tensor::scalar(0.0);
        case SimMode::Cosine: {
            Tensor cosv = cosine_similarity(tape, z_graph, z_vis);
            return similarity_loss_from_cosine(tape, cosv, label);
        }
        case SimMode::Euclidean: {
            Tensor s = sigmoid(tape, scale(tape, norm_distance(tape, z_graph, z_vis), -1.0));
            return binary_cross_entropy(tape, s, 1 - label);
        }
        case SimMode::Mse: {
            if (label == 0) return squared_distance_mean(tape, z_graph, z_vis);
            const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(z_graph.size()));
            Tensor dist = scale(tape, norm_distance(tape, z_graph, z_vis), inv_sqrt_d);
            return hinge_squared(tape, dist, mse_margin);
        }
    }
    throw ConfigError("similarity_loss: unhandled mode");
}

const char* to_string(FusionMode mode) {
    switch (mode) {
        case FusionMode::CoAttention: return "coattention";
        case FusionMode::Concat: return "concat";
        case FusionMode::Weighted: return "weighted";
        case FusionMode::SelfAttention: return "self_attention";
    }
    return "?";
}

FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "coattention") return FusionMode::CoAttention;
    if (s == "concat") return FusionMode::Concat;
    if (s == "weighted") return FusionMode::Weighted;
    if (s == "self_attention" || s == "self-attention") return FusionMode::SelfAttention;
    throw ConfigError("unknown fusion mode '" + s +
                      "' (coattention|concat|weighted|self_attention)");
}

Tensor fuse(Tape& tape, const Tensor& graph_vec, const Tensor& vis_vec,
            const FusionParams& params) {
    Tensor graph_row = as_row(tape, graph_vec, "fuse");
    Tensor vis_row = as_row(tape, vis_vec, "fuse");
    const std::size_t d = graph_row.cols();
    if (vis_row.cols() != d) {
        throw DimensionError("fuse: modality widths differ, " + shape_string(graph_row) + " vs " +
                             shape_string(vis_row));
    }
    switch (params.mode) {
        case FusionMode::Concat:
            return concat_cols(tape, graph_row, vis_row);
        case FusionMode::Weighted:
            return concat_cols(tape, scale_by(tape, graph_row, params.graph_weight),
                               scale_by(tape, vis_row, params.vis_weight));
        case FusionMode::CoAttention: {
            if (params.tokens == 0 || d % params.tokens != 0) {
                throw ConfigError("fuse: width " + std::to_string(d) + " not divisible by " +
                                  std::to_string(params.tokens) + " tokens");
            }
            const std::size_t tw = d / params.tokens;
            Tensor g_tok = reshape(tape, graph_row, {params.tokens, tw});
            Tensor v_tok = reshape(tape, vis_row, {params.tokens, tw});
            Tensor vis_enh = multi_head_attention(tape, g_tok, v_tok, params.vis_values);
            Tensor graph_enh = multi_head_attention(tape, v_tok, g_tok, params.graph_values);
            return concat_cols(tape, reshape(tape, vis_enh, {1, d}),
                               reshape(tape, graph_enh, {1, d}));
        }
        case FusionMode::SelfAttention: {
            Tensor joined = concat_cols(tape, graph_row, vis_row);  // {1, 2d}
            const std::size_t width = joined.cols();
            if (params.tokens == 0 || width % params.tokens != 0) {
                throw ConfigError("fuse: width " + std::to_string(width) + " not divisible by " +
                                  std::to_string(params.tokens) + " tokens");
            }
            Tensor tokens = reshape(tape, joined, {params.tokens, width / params.tokens});
            Tensor attended = multi_head_attention(tape, tokens, tokens, params.self_attention);
            return reshape(tape, attended, {1, width});
        }
    }
    throw ConfigError("fuse: unhandled mode");
}

Classification classify(Tape& tape, const Tensor& fused, const Classifier& classifier) {
    Tensor row = as_row(tape, fused, "classify");
    if (row.cols() != classifier.w.rows()) {
        throw DimensionError("classify: input width " + std::to_string(row.cols()) + " vs weights " +
                             shape_string(classifier.w));
    }
    Tensor probs = softmax_rows(tape, affine(tape, row, classifier.w, classifier.b));
    Classification out;
    out.y_hat = select(tape, probs, 1);
    out.probabilities = reshape(tape, probs, {2});
    return out;
}

Tensor classification_loss(Tape& tape, const Tensor& y_hat, int label) {
    if (label != 0 && label != 1) throw ContractError("classification_loss: label must be 0 or 1");
    return binary_cross_entropy(tape, y_hat, label);
}

Tensor joint_loss(Tape& tape, const Tensor& cls_loss, const Tensor& sim_loss, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw ConfigError("joint_loss: alpha outside [0,1]: " + std::to_string(alpha));
    }
    return add(tape, scale(tape, cls_loss, alpha), scale(tape, sim_loss, 1.0 - alpha));
}

}  // namespace vga
