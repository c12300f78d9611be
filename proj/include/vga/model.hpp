#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vga/data.hpp"
#include "vga/fusion.hpp"
#include "vga/graphnet.hpp"
#include "vga/rng.hpp"
#include "vga/tensor.hpp"
#include "vga/vision.hpp"

namespace vga {

struct ModelConfig {
    std::size_t input_dim = 768;   // D, the node-embedding width (set from the dataset)
    std::size_t hidden_dim = 64;   // d
    std::size_t heads = 8;         // h
    std::size_t vis_tokens = 1;    // t
    std::size_t fusion_tokens = 1; // t_f
    std::size_t projection_dim = 0;  // d_p; 0 means hidden_dim/2
    std::size_t gcn_layers = 1;
    double aug_prob = 0.2;
    double alpha = 0.5;
    double leaky_slope = 0.01;
    double mse_margin = 1.0;
    EncoderKind encoder = EncoderKind::TinyPatch;
    std::size_t patch_size = 8;
    std::size_t encoder_dim = 32;  // width of the tiny-patch encoder (or of stored embeddings)
    SimMode sim_mode = SimMode::Cosine;
    FusionMode fusion_mode = FusionMode::CoAttention;
    bool no_sim = false;
    bool no_re = false;
    bool no_da = false;
    bool no_noise = false;
    bool no_ocr = false;
    double learning_rate = 1e-3;
    std::size_t batch_size = 8;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    std::size_t folds = 5;
    std::uint64_t seed = 0;
    std::size_t threads = 1;  // parallel folds in cross-validation

    std::size_t proj_dim() const { return projection_dim ? projection_dim : hidden_dim / 2; }
    SimMode effective_sim_mode() const { return no_sim ? SimMode::Off : sim_mode; }
    double effective_aug_prob() const { return no_da ? 0.0 : aug_prob; }

    void validate() const;
};

struct ClaimOutput {
    Tensor probabilities;  // rank-1 [2]
    Tensor y_hat;          // scalar
    Tensor cls_loss;
    Tensor sim_loss;
    Tensor joint;
    double cosine = 0.0;  // only meaningful in cosine mode
    int predicted = 0;
};

/// The assembled network: graph branch, visual branch, similarity heads,
/// fusion and classifier. Parameter initialization derives one stream per
/// parameter name from the config seed, so ablated variants share identical
/// values for every parameter they have in common.
class VgaModel {
public:
    explicit VgaModel(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }

    std::span<Parameter> parameters() { return params_; }
    std::span<const Parameter> parameters() const { return params_; }
    const Parameter* find_parameter(const std::string& name) const;

    /// One claim through the whole network. `training` enables node
    /// augmentation (drawing from rng); evaluation never touches rng.
    ClaimOutput forward(Tape& tape, const Claim& claim, bool training, Rng& rng) const;

    /// Evaluation-mode prediction on a fresh tape.
    int predict(const Claim& claim) const;

    void zero_grads();

    /// Named-parameter archive (manifest + VGT1 blobs). Values narrow to f32
    /// on save.
    void save(const std::filesystem::path& path) const;
    static VgaModel load(const std::filesystem::path& path);

private:
    ModelConfig cfg_;
    std::vector<Parameter> params_;
    VisualBranchParams vision_;
    GraphBranchParams graph_;
    ProjectionHead graph_head_;
    ProjectionHead vis_head_;
    FusionParams fusion_;
    Classifier classifier_;

    Tensor new_param(const std::string& name, std::vector<std::size_t> shape);
    Tensor new_param_zero(const std::string& name, std::vector<std::size_t> shape);
    Tensor new_param_const(const std::string& name, std::vector<std::size_t> shape, double value);
    MultiHeadParams make_attention(const std::string& prefix, std::size_t width);
    void build();
};

}  // namespace vga
