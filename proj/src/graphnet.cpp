#include "vga/graphnet.hpp"

namespace vga {

Tensor augment_nodes(Tape& tape, const Tensor& features, double p, Rng& rng, bool training) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw ConfigError("augment_nodes: probability outside [0,1]: " + std::to_string(p));
    }
    if (!training || p == 0.0) return features;
    std::vector<double> mask(features.rows());
    for (double& m : mask) m = rng.bernoulli(p) ? 0.0 : 1.0;
    return scale_rows(tape, features, mask);
}

Tensor gcn_layer(Tape& tape, const Tensor& norm_adjacency, const Tensor& features,
                 const Tensor& weight, double slope) {
    return leaky_relu(tape, matmul(tape, matmul(tape, norm_adjacency, features), weight), slope);
}

Tensor root_broadcast(Tape& tape, const Tensor& node_features) {
    return repeat_row(tape, node_features, 0);
}

std::pair<Tensor, Tensor> mutual_coattention(Tape& tape, const Tensor& nodes, const Tensor& root,
                                             const GraphBranchParams& params) {
    Tensor root_enhanced = multi_head_attention(tape, nodes, root, params.root_from_nodes);
    Tensor nodes_enhanced = multi_head_attention(tape, root, nodes, params.nodes_from_root);
    return {root_enhanced, nodes_enhanced};
}

Tensor graph_readout(Tape& tape, const Tensor& root_enhanced, const Tensor& nodes_enhanced) {
    return mean_rows(tape, concat_cols(tape, root_enhanced, nodes_enhanced));
}

Tensor graph_branch(Tape& tape, const Tensor& norm_adjacency, const Tensor& features,
                    const GraphBranchParams& params, double aug_prob, Rng& rng, bool training) {
    if (params.gcn_weights.empty()) throw ConfigError("graph_branch: no GCN layers configured");
    Tensor h = augment_nodes(tape, features, aug_prob, rng, training);
    for (const Tensor& w : params.gcn_weights) {
        h = gcn_layer(tape, norm_adjacency, h, w, params.leaky_slope);
    }
    Tensor pooled;
    if (params.root_enhancement) {
        Tensor root = root_broadcast(tape, h);
        auto [root_enhanced, nodes_enhanced] = mutual_coattention(tape, h, root, params);
        pooled = graph_readout(tape, root_enhanced, nodes_enhanced);
    } else {
        pooled = graph_readout(tape, h, h);  // duplicate to keep the downstream width
    }
    return reshape(tape, pooled, {1, pooled.size()});
}

}  // namespace vga
