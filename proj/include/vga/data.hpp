#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vga/tensor.hpp"

namespace vga {

/// One social-media post event: root text embedding plus comment embeddings
/// (row 0 is the root), reply/repost edges forming a tree rooted at node 0,
/// an optional OCR embedding and either a raw RGB image or a precomputed
/// visual embedding.
struct Claim {
    std::string id;
    int label = 0;  // 0 = non-rumor, 1 = false rumor
    Tensor node_embeddings;  // (n+1) × D, row 0 = root
    std::vector<std::pair<std::size_t, std::size_t>> edges;  // (parent, child)
    std::optional<Tensor> ocr;               // rank-1 [D]
    std::optional<Tensor> image;             // H × W × 3, values in [0,1]
    std::optional<Tensor> visual_embedding;  // rank-1

    // Serialization references (relative paths); empty means inline.
    std::string embeddings_ref;
    std::string ocr_ref;
    std::string image_ref;
    std::string visual_ref;

    std::size_t node_count() const { return node_embeddings.rows(); }
    std::size_t comment_count() const { return node_count() - 1; }
    std::size_t embedding_dim() const { return node_embeddings.cols(); }
};

/// Structural validation: label domain, edge ranges, exactly one parent per
/// non-root, connectivity, and consistent auxiliary dimensions.
void validate_claim(const Claim& claim);

struct Dataset {
    std::vector<Claim> claims;
    std::string source;
    std::uint64_t synth_seed = 0;

    std::size_t size() const { return claims.size(); }
    std::size_t embedding_dim() const;
};

/// Symmetrically normalized adjacency with self-loops for a propagation
/// tree: symmetrize the edges, add the identity, then scale by the inverse
/// square-root degree on both sides. The result is exactly symmetric.
Tensor normalized_adjacency(const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                            std::size_t n_plus_1);

struct PropagationGraph {
    std::size_t n_plus_1 = 0;
    Tensor adjacency;       // binary, zero diagonal, symmetric
    Tensor norm_adjacency;  // normalized, self-loops included
    Tensor node_features;   // (n+1) × D (root possibly OCR-supplemented)
};

/// Builds the propagation graph for a claim. When use_ocr is set and the
/// claim carries an OCR embedding, row 0 becomes the elementwise mean of the
/// root embedding and the OCR embedding.
PropagationGraph build_propagation_graph(const Claim& claim, bool use_ocr);

/// Elementwise mean of root and OCR embedding; identity when OCR is absent.
std::vector<double> supplement_root(std::span<const double> root,
                                    const std::optional<std::vector<double>>& ocr);

// --- folds -------------------------------------------------------------------

struct FoldPlan {
    std::size_t fold_count = 0;
    std::vector<std::size_t> fold_of;  // claim index -> fold
    struct Split {
        std::vector<std::size_t> train;  // indices into Dataset::claims
        std::vector<std::size_t> validation;
        std::vector<std::size_t> test;
    };
    std::vector<Split> folds;
};

/// Seeded shuffle into k near-equal folds; each fold's complement is further
/// split 8:2 (by count, ±1) into train and validation for early stopping.
FoldPlan make_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed);

// --- synthetic data ------------------------------------------------------------

/// Desk-scale two-class generator. Label couples to cross-modal agreement:
/// non-rumor claims share one latent between the propagation tree and the
/// image, false rumors draw an unrelated visual latent. The separability knob
/// scales the unimodal label cues on top of that.
struct SynthConfig {
    std::size_t claims = 40;
    double rumor_fraction = 0.5;
    std::size_t min_nodes = 3;  // total nodes including the root
    std::size_t max_nodes = 6;
    std::size_t embedding_dim = 16;  // D
    std::size_t image_size = 16;     // H = W; 0 emits precomputed visual embeddings
    std::size_t visual_dim = 12;
    double separability = 1.0;
    double agreement_noise = 0.15;
    bool with_ocr = true;
};

Dataset synth_generate(const SynthConfig& config, std::uint64_t seed);

// --- binary formats ------------------------------------------------------------

/// "VGT1" container: magic, u32 LE rank, u32 LE extents, f32 LE row-major
/// values. Loading widens to double; saving narrows to f32.
void save_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_tensor(const std::filesystem::path& path);

/// Stream variants of the VGT1 container (used by the model archive).
void write_tensor(std::ostream& os, const Tensor& tensor);
Tensor read_tensor(std::istream& is, const std::string& context);

/// Binary PPM (P6, maxval 255); values scaled to [0,1]. Header comments are
/// handled.
Tensor load_ppm(const std::filesystem::path& path);
void save_ppm(const std::filesystem::path& path, const Tensor& image);

/// Loads an H×W×3 image from either format, sniffing the magic bytes.
Tensor load_image(const std::filesystem::path& path);

// --- claims files ----------------------------------------------------------------

/// Line-delimited JSON records; see the repository README for the frozen
/// field names. Referenced tensor/image files are resolved relative to the
/// claims file.
Dataset load_dataset(const std::filesystem::path& path);

/// Writes a claims file next to any referenced tensor/image files. Inline
/// fields stay inline; referenced files are re-emitted bit-exactly.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace vga
