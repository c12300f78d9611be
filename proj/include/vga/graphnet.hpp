#pragma once

#include <utility>
#include <vector>

#include "vga/rng.hpp"
#include "vga/tensor.hpp"

namespace vga {

struct GraphBranchParams {
    std::vector<Tensor> gcn_weights;  // first layer D×(d/2), deeper layers (d/2)×(d/2)
    bool root_enhancement = true;
    MultiHeadParams root_from_nodes;  // queries from node features, keys/values from root copies
    MultiHeadParams nodes_from_root;  // queries from root copies, keys/values from node features
    double leaky_slope = 0.01;
};

/// Denoising-style node corruption: during training each row (root included)
/// is zeroed independently with probability p; no inverse-probability
/// rescaling. At evaluation, or with p == 0, this is the exact identity.
Tensor augment_nodes(Tape& tape, const Tensor& features, double p, Rng& rng, bool training);

/// One graph convolution: LeakyReLU(Â · features · weight).
Tensor gcn_layer(Tape& tape, const Tensor& norm_adjacency, const Tensor& features,
                 const Tensor& weight, double slope);

/// Matrix with every row equal to the root (index 0) feature row.
Tensor root_broadcast(Tape& tape, const Tensor& node_features);

/// Two attention passes with swapped queries. Returns (root-side enhanced,
/// node-side enhanced): the first output attends node queries over root
/// copies, the second attends root queries over node features.
std::pair<Tensor, Tensor> mutual_coattention(Tape& tape, const Tensor& nodes, const Tensor& root,
                                             const GraphBranchParams& params);

/// Mean pooling over Concat(root_enhanced, nodes_enhanced); rank-1 [d].
Tensor graph_readout(Tape& tape, const Tensor& root_enhanced, const Tensor& nodes_enhanced);

/// Full graph branch: augmentation, GCN stack, root enhancement + mutual
/// co-attention (or plain feature duplication when disabled), readout.
/// Returns a {1, d} row.
Tensor graph_branch(Tape& tape, const Tensor& norm_adjacency, const Tensor& features,
                    const GraphBranchParams& params, double aug_prob, Rng& rng, bool training);

}  // namespace vga
