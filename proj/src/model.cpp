#include "vga/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace vga {

using nlohmann::json;

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
    if (input_dim == 0) fail("input dim must be positive");
    if (hidden_dim < 2 || hidden_dim % 2 != 0) fail("hidden dim must be even and >= 2");
    if (heads == 0) fail("head count must be positive");
    if (hidden_dim % heads != 0) fail("hidden dim must be divisible by the head count");
    if ((hidden_dim / 2) % heads != 0) {
        fail("half hidden dim must be divisible by the head count (graph co-attention)");
    }
    if (vis_tokens == 0 || hidden_dim % vis_tokens != 0) {
        fail("hidden dim must be divisible by the visual token count");
    }
    if ((hidden_dim / vis_tokens) % heads != 0) {
        fail("visual token width must be divisible by the head count");
    }
    if (fusion_mode == FusionMode::CoAttention) {
        if (fusion_tokens == 0 || hidden_dim % fusion_tokens != 0) {
            fail("hidden dim must be divisible by the fusion token count");
        }
        if ((hidden_dim / fusion_tokens) % heads != 0) {
            fail("fusion token width must be divisible by the head count");
        }
    }
    if (fusion_mode == FusionMode::SelfAttention) {
        if (fusion_tokens == 0 || (2 * hidden_dim) % fusion_tokens != 0) {
            fail("twice the hidden dim must be divisible by the fusion token count");
        }
        if ((2 * hidden_dim / fusion_tokens) % heads != 0) {
            fail("fusion token width must be divisible by the head count");
        }
    }
    if (proj_dim() == 0) fail("projection dim must be positive");
    if (gcn_layers == 0) fail("at least one GCN layer is required");
    if (!(aug_prob >= 0.0 && aug_prob <= 1.0)) fail("augmentation probability outside [0,1]");
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha outside [0,1]");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) fail("leaky slope outside (0,1)");
    if (!(mse_margin > 0.0)) fail("mse margin must be positive");
    if (patch_size == 0) fail("patch size must be positive");
    if (encoder_dim == 0) fail("encoder dim must be positive");
    if (!(learning_rate > 0.0)) fail("learning rate must be positive");
    if (batch_size == 0) fail("batch size must be positive");
    if (max_epochs == 0) fail("max epochs must be positive");
    if (patience == 0) fail("patience must be at least 1");
    if (folds < 2) fail("fold count must be at least 2");
    if (threads == 0) fail("thread count must be positive");
}

// --- parameter construction ------------------------------------------------------

Tensor VgaModel::new_param(const std::string& name, std::vector<std::size_t> shape) {
    // Per-name stream: parameters shared between model variants initialize
    // identically no matter which other parameters exist.
    Rng rng(hash_combine(hash_combine(cfg_.seed, hash_str("param-init")), hash_str(name)));
    Tensor t = Tensor::zeros(shape, /*requires_grad=*/true);
    const std::size_t fan_in = shape.size() >= 2 ? shape[0] : shape[0];
    const std::size_t fan_out = shape.size() >= 2 ? shape[1] : shape[0];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    params_.push_back({name, t});
    return t;
}

Tensor VgaModel::new_param_zero(const std::string& name, std::vector<std::size_t> shape) {
    Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
    params_.push_back({name, t});
    return t;
}

Tensor VgaModel::new_param_const(const std::string& name, std::vector<std::size_t> shape,
                                 double value) {
    Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
    for (double& v : t.values()) v = value;
    params_.push_back({name, t});
    return t;
}

MultiHeadParams VgaModel::make_attention(const std::string& prefix, std::size_t width) {
    MultiHeadParams mha;
    const std::size_t dh = width / cfg_.heads;
    for (std::size_t i = 0; i < cfg_.heads; ++i) {
        const std::string hp = prefix + ".head" + std::to_string(i);
        mha.heads.push_back({new_param(hp + ".query", {width, dh}),
                             new_param(hp + ".key", {width, dh}),
                             new_param(hp + ".value", {width, dh})});
    }
    mha.wo = new_param(prefix + ".out", {width, width});
    return mha;
}

VgaModel::VgaModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build();
}

void VgaModel::build() {
    const std::size_t d = cfg_.hidden_dim;
    const std::size_t half = d / 2;

    // graph branch
    graph_.leaky_slope = cfg_.leaky_slope;
    graph_.root_enhancement = !cfg_.no_re;
    graph_.gcn_weights.push_back(new_param("graph.gcn0.weight", {cfg_.input_dim, half}));
    for (std::size_t l = 1; l < cfg_.gcn_layers; ++l) {
        graph_.gcn_weights.push_back(
            new_param("graph.gcn" + std::to_string(l) + ".weight", {half, half}));
    }
    if (graph_.root_enhancement) {
        graph_.root_from_nodes = make_attention("graph.coattn.root_values", half);
        graph_.nodes_from_root = make_attention("graph.coattn.node_values", half);
    }

    // visual branch
    vision_.encoder = cfg_.encoder;
    vision_.noise_enabled = !cfg_.no_noise;
    vision_.tokens = cfg_.vis_tokens;
    vision_.leaky_slope = cfg_.leaky_slope;
    if (cfg_.encoder == EncoderKind::TinyPatch) {
        vision_.semantic_encoder.patch = cfg_.patch_size;
        vision_.semantic_encoder.projection = new_param(
            "vision.semantic_encoder.projection",
            {cfg_.patch_size * cfg_.patch_size * 3, cfg_.encoder_dim});
    }
    vision_.semantic_fc_w = new_param("vision.semantic_fc.weight", {cfg_.encoder_dim, half});
    vision_.semantic_fc_b = new_param_zero("vision.semantic_fc.bias", {half});
    if (vision_.noise_enabled) {
        vision_.noise_encoder.patch = cfg_.patch_size;
        vision_.noise_encoder.projection = new_param(
            "vision.noise_encoder.projection",
            {cfg_.patch_size * cfg_.patch_size * 3, cfg_.encoder_dim});
        vision_.noise_fc_w = new_param("vision.noise_fc.weight", {cfg_.encoder_dim, half});
        vision_.noise_fc_b = new_param_zero("vision.noise_fc.bias", {half});
    }
    vision_.attention = make_attention("vision.attn", d / cfg_.vis_tokens);

    // similarity heads
    if (cfg_.effective_sim_mode() != SimMode::Off) {
        const std::size_t dp = cfg_.proj_dim();
        graph_head_.leaky_slope = cfg_.leaky_slope;
        graph_head_.w1 = new_param("sim.graph_head.fc1.weight", {d, d});
        graph_head_.b1 = new_param_zero("sim.graph_head.fc1.bias", {d});
        graph_head_.w2 = new_param("sim.graph_head.fc2.weight", {d, dp});
        graph_head_.b2 = new_param_zero("sim.graph_head.fc2.bias", {dp});
        vis_head_.leaky_slope = cfg_.leaky_slope;
        vis_head_.w1 = new_param("sim.vis_head.fc1.weight", {d, d});
        vis_head_.b1 = new_param_zero("sim.vis_head.fc1.bias", {d});
        vis_head_.w2 = new_param("sim.vis_head.fc2.weight", {d, dp});
        vis_head_.b2 = new_param_zero("sim.vis_head.fc2.bias", {dp});
    }

    // fusion
    fusion_.mode = cfg_.fusion_mode;
    fusion_.tokens = cfg_.fusion_tokens;
    switch (cfg_.fusion_mode) {
        case FusionMode::CoAttention:
            fusion_.vis_values = make_attention("fusion.coattn.vis_values", d / cfg_.fusion_tokens);
            fusion_.graph_values =
                make_attention("fusion.coattn.graph_values", d / cfg_.fusion_tokens);
            break;
        case FusionMode::SelfAttention:
            fusion_.self_attention =
                make_attention("fusion.self_attn", 2 * d / cfg_.fusion_tokens);
            break;
        case FusionMode::Weighted:
            fusion_.graph_weight = new_param_const("fusion.graph_weight", {1}, 1.0);
            fusion_.vis_weight = new_param_const("fusion.vis_weight", {1}, 1.0);
            break;
        case FusionMode::Concat:
            break;
    }

    classifier_.w = new_param("classifier.weight", {2 * d, 2});
    classifier_.b = new_param_zero("classifier.bias", {2});
}

const Parameter* VgaModel::find_parameter(const std::string& name) const {
    for (const Parameter& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

void VgaModel::zero_grads() {
    for (Parameter& p : params_) p.tensor.zero_grad();
}

ClaimOutput VgaModel::forward(Tape& tape, const Claim& claim, bool training, Rng& rng) const {
    if (claim.embedding_dim() != cfg_.input_dim) {
        throw DimensionError("claim " + claim.id + ": embedding dim " +
                             std::to_string(claim.embedding_dim()) + " vs configured input dim " +
                             std::to_string(cfg_.input_dim));
    }

    // graph side
    PropagationGraph pg = build_propagation_graph(claim, !cfg_.no_ocr);
    Tensor graph_row = graph_branch(tape, pg.norm_adjacency, pg.node_features, graph_,
                                    cfg_.effective_aug_prob(), rng, training);

    // visual side
    const Tensor* visual_input = nullptr;
    if (claim.image) {
        visual_input = &*claim.image;
    } else if (claim.visual_embedding) {
        visual_input = &*claim.visual_embedding;
    } else {
        throw ConfigError("claim " + claim.id + ": no image or visual embedding");
    }
    if (vision_.noise_enabled && !claim.image) {
        throw ConfigError("claim " + claim.id +
                          ": the noise branch needs a raw image; rerun with --no-noise");
    }
    Tensor vis_row = visual_branch(tape, *visual_input, vision_);

    ClaimOutput out;

    // similarity
    const SimMode sim = cfg_.effective_sim_mode();
    if (sim == SimMode::Off) {
        out.sim_loss = Tensor::scalar(0.0);
    } else {
        Tensor z_graph = project(tape, graph_row, graph_head_);
        Tensor z_vis = project(tape, vis_row, vis_head_);
        if (sim == SimMode::Cosine) {
            Tensor cosv = cosine_similarity(tape, z_graph, z_vis);
            out.cosine = cosv.value();
            out.sim_loss = similarity_loss_from_cosine(tape, cosv, claim.label);
        } else {
            out.sim_loss = similarity_loss(tape, z_graph, z_vis, claim.label, sim, cfg_.mse_margin);
        }
    }

    // fusion + classification
    Tensor fused = fuse(tape, graph_row, vis_row, fusion_);
    Classification cls = classify(tape, fused, classifier_);
    out.probabilities = cls.probabilities;
    out.y_hat = cls.y_hat;
    out.cls_loss = classification_loss(tape, cls.y_hat, claim.label);
    out.joint = joint_loss(tape, out.cls_loss, out.sim_loss, cfg_.alpha);
    out.predicted = cls.probabilities.values()[1] > cls.probabilities.values()[0] ? 1 : 0;
    return out;
}

int VgaModel::predict(const Claim& claim) const {
    Tape tape;
    Rng rng(0);
    return forward(tape, claim, /*training=*/false, rng).predicted;
}

// --- archive ---------------------------------------------------------------------

namespace {

json config_to_json(const ModelConfig& c) {
    json j;
    j["input_dim"] = c.input_dim;
    j["hidden_dim"] = c.hidden_dim;
    j["heads"] = c.heads;
    j["vis_tokens"] = c.vis_tokens;
    j["fusion_tokens"] = c.fusion_tokens;
    j["projection_dim"] = c.projection_dim;
    j["gcn_layers"] = c.gcn_layers;
    j["aug_prob"] = c.aug_prob;
    j["alpha"] = c.alpha;
    j["leaky_slope"] = c.leaky_slope;
    j["mse_margin"] = c.mse_margin;
    j["encoder"] = to_string(c.encoder);
    j["patch_size"] = c.patch_size;
    j["encoder_dim"] = c.encoder_dim;
    j["sim_mode"] = to_string(c.sim_mode);
    j["fusion_mode"] = to_string(c.fusion_mode);
    j["no_sim"] = c.no_sim;
    j["no_re"] = c.no_re;
    j["no_da"] = c.no_da;
    j["no_noise"] = c.no_noise;
    j["no_ocr"] = c.no_ocr;
    j["learning_rate"] = c.learning_rate;
    j["batch_size"] = c.batch_size;
    j["max_epochs"] = c.max_epochs;
    j["patience"] = c.patience;
    j["folds"] = c.folds;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    return j;
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.vis_tokens = j.at("vis_tokens").get<std::size_t>();
    c.fusion_tokens = j.at("fusion_tokens").get<std::size_t>();
    c.projection_dim = j.at("projection_dim").get<std::size_t>();
    c.gcn_layers = j.at("gcn_layers").get<std::size_t>();
    c.aug_prob = j.at("aug_prob").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.mse_margin = j.at("mse_margin").get<double>();
    c.encoder = encoder_kind_from_string(j.at("encoder").get<std::string>());
    c.patch_size = j.at("patch_size").get<std::size_t>();
    c.encoder_dim = j.at("encoder_dim").get<std::size_t>();
    c.sim_mode = sim_mode_from_string(j.at("sim_mode").get<std::string>());
    c.fusion_mode = fusion_mode_from_string(j.at("fusion_mode").get<std::string>());
    c.no_sim = j.at("no_sim").get<bool>();
    c.no_re = j.at("no_re").get<bool>();
    c.no_da = j.at("no_da").get<bool>();
    c.no_noise = j.at("no_noise").get<bool>();
    c.no_ocr = j.at("no_ocr").get<bool>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.max_epochs = j.at("max_epochs").get<std::size_t>();
    c.patience = j.at("patience").get<std::size_t>();
    c.folds = j.at("folds").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.threads = j.at("threads").get<std::size_t>();
    return c;
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

bool get_u64(std::istream& is, std::uint64_t& v) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
    v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return true;
}

}  // namespace

void VgaModel::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");

    json manifest;
    manifest["config"] = config_to_json(cfg_);
    json names = json::array();
    for (const Parameter& p : params_) names.push_back(p.name);
    manifest["parameters"] = names;
    const std::string mtext = manifest.dump();

    os.write("VGAM", 4);
    put_u64(os, 1);  // version
    put_u64(os, mtext.size());
    os.write(mtext.data(), static_cast<long>(mtext.size()));
    for (const Parameter& p : params_) write_tensor(os, p.tensor);
    if (!os) throw FormatError("short write to " + path.string());
}

VgaModel VgaModel::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open model archive " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "VGAM", 4) != 0) {
        throw FormatError(path.string() + ": not a model archive");
    }
    std::uint64_t version = 0, mlen = 0;
    if (!get_u64(is, version) || version != 1) {
        throw FormatError(path.string() + ": unsupported archive version");
    }
    if (!get_u64(is, mlen) || mlen == 0 || mlen > (1u << 20)) {
        throw FormatError(path.string() + ": bad manifest length");
    }
    std::string mtext(mlen, '\0');
    if (!is.read(mtext.data(), static_cast<long>(mlen))) {
        throw FormatError(path.string() + ": truncated manifest");
    }
    json manifest;
    try {
        manifest = json::parse(mtext);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": manifest parse failure: " + e.what());
    }

    VgaModel model(config_from_json(manifest.at("config")));
    const auto& names = manifest.at("parameters");
    if (names.size() != model.params_.size()) {
        throw FormatError(path.string() + ": archive holds " + std::to_string(names.size()) +
                          " parameters, model expects " + std::to_string(model.params_.size()));
    }
    for (std::size_t i = 0; i < model.params_.size(); ++i) {
        const std::string name = names[i].get<std::string>();
        if (name != model.params_[i].name) {
            throw FormatError(path.string() + ": parameter order mismatch at " + name);
        }
        Tensor stored = read_tensor(is, path.string() + ":" + name);
        if (stored.shape() != model.params_[i].tensor.shape()) {
            throw FormatError(path.string() + ": parameter " + name + " has shape " +
                              shape_string(stored) + ", expected " +
                              shape_string(model.params_[i].tensor));
        }
        auto dst = model.params_[i].tensor.values();
        auto src = stored.values();
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return model;
}

}  // namespace vga
