#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "vga/data.hpp"
#include "vga/gradcheck.hpp"
#include "vga/model.hpp"
#include "vga/train.hpp"

namespace {

struct ModelOptions {
    vga::ModelConfig cfg;
    std::string sim_mode = "cosine";
    std::string fusion_mode = "coattention";
    std::string encoder = "auto";
};

void add_model_flags(CLI::App* cmd, ModelOptions& opt) {
    auto& c = opt.cfg;
    cmd->add_option("--alpha", c.alpha, "joint loss weight")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--dim", c.hidden_dim, "hidden dimension d");
    cmd->add_option("--heads", c.heads, "attention heads h");
    cmd->add_option("--lr", c.learning_rate, "learning rate");
    cmd->add_option("--epochs", c.max_epochs, "maximum epochs");
    cmd->add_option("--patience", c.patience, "early-stopping patience");
    cmd->add_option("--folds", c.folds, "cross-validation folds");
    cmd->add_option("--seed", c.seed, "master seed");
    cmd->add_option("--p-aug", c.aug_prob, "node augmentation probability")
        ->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--sim-mode", opt.sim_mode, "cosine|euclidean|mse|off");
    cmd->add_option("--fusion-mode", opt.fusion_mode, "coattention|concat|weighted|self_attention");
    cmd->add_option("--encoder", opt.encoder, "auto|tiny_patch|precomputed");
    cmd->add_option("--tokens", c.vis_tokens, "visual attention tokens t");
    cmd->add_option("--fusion-tokens", c.fusion_tokens, "fusion attention tokens");
    cmd->add_option("--batch", c.batch_size, "claims per optimizer step");
    cmd->add_option("--proj-dim", c.projection_dim, "projection head output width (0 = d/2)");
    cmd->add_option("--patch", c.patch_size, "tiny-patch encoder patch size");
    cmd->add_option("--encoder-dim", c.encoder_dim, "encoder output width");
    cmd->add_option("--gcn-layers", c.gcn_layers, "graph convolution layers");
    cmd->add_option("--mse-margin", c.mse_margin, "margin of the mse similarity variant");
    cmd->add_option("--threads", c.threads, "parallel folds");
    cmd->add_flag("--no-sim", c.no_sim, "disable similarity measurement");
    cmd->add_flag("--no-re", c.no_re, "disable root enhancement");
    cmd->add_flag("--no-da", c.no_da, "disable node data augmentation");
    cmd->add_flag("--no-noise", c.no_noise, "disable the noise image branch");
    cmd->add_flag("--no-ocr", c.no_ocr, "disable OCR root supplementation");
}

/// Fills the data-dependent config fields and resolves string-valued modes.
vga::ModelConfig resolve_config(ModelOptions& opt, const vga::Dataset& ds) {
    vga::ModelConfig cfg = opt.cfg;
    cfg.sim_mode = vga::sim_mode_from_string(opt.sim_mode);
    cfg.fusion_mode = vga::fusion_mode_from_string(opt.fusion_mode);
    if (ds.claims.empty()) throw vga::ContractError("dataset is empty");
    cfg.input_dim = ds.embedding_dim();
    if (opt.encoder == "auto") {
        const vga::Claim& first = ds.claims.front();
        if (first.visual_embedding) {
            cfg.encoder = vga::EncoderKind::Precomputed;
            cfg.encoder_dim = first.visual_embedding->size();
            cfg.no_noise = true;  // the noise branch needs raw images
        } else {
            cfg.encoder = vga::EncoderKind::TinyPatch;
        }
    } else {
        cfg.encoder = vga::encoder_kind_from_string(opt.encoder);
        if (cfg.encoder == vga::EncoderKind::Precomputed && ds.claims.front().visual_embedding) {
            cfg.encoder_dim = ds.claims.front().visual_embedding->size();
        }
    }
    cfg.validate();
    return cfg;
}

std::string metrics_line(const std::string& fold, const vga::Metrics& m, double alpha,
                         std::uint64_t seed) {
    std::ostringstream os;
    os << std::setprecision(10) << "fold=" << fold << " accuracy=" << m.accuracy
       << " precision=" << m.precision << " recall=" << m.recall << " f1=" << m.f1
       << " alpha=" << alpha << " seed=" << seed;
    return os.str();
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream os(path);
    if (!os) throw vga::FormatError("cannot open " + path + " for writing");
    for (const std::string& l : lines) os << l << "\n";
}

int cmd_train(ModelOptions& opt, const std::string& data_path, const std::string& out_path,
              const std::string& save_model) {
    vga::Dataset ds = vga::load_dataset(data_path);
    vga::ModelConfig cfg = resolve_config(opt, ds);
    vga::CrossValResult cv = vga::cross_validate(cfg, ds);

    std::vector<std::string> lines;
    for (std::size_t f = 0; f < cv.fold_metrics.size(); ++f) {
        lines.push_back(metrics_line(std::to_string(f), cv.fold_metrics[f], cfg.alpha, cfg.seed));
    }
    lines.push_back(metrics_line("mean", cv.mean, cfg.alpha, cfg.seed));
    for (const std::string& l : lines) std::cout << l << "\n";
    write_lines(out_path, lines);

    if (!save_model.empty()) {
        // final model on a seeded 8:2 split of the full dataset
        std::vector<std::size_t> order(ds.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        vga::Rng rng = vga::derived_rng(cfg.seed, "final-split");
        rng.shuffle(order);
        std::size_t val = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                       std::llround(0.2 * double(order.size()))));
        if (val >= order.size()) val = order.size() - 1;
        std::vector<std::size_t> val_idx(order.begin(), order.begin() + long(val));
        std::vector<std::size_t> train_idx(order.begin() + long(val), order.end());
        vga::VgaModel model(cfg);
        vga::train_model(model, vga::claim_refs(ds, train_idx), vga::claim_refs(ds, val_idx),
                         vga::hash_combine(cfg.seed, vga::hash_str("final-train")));
        model.save(save_model);
        std::cout << "model=" << save_model << "\n";
    }
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path) {
    vga::VgaModel model = vga::VgaModel::load(model_path);
    vga::Dataset ds = vga::load_dataset(data_path);
    if (ds.claims.empty()) throw vga::ContractError("dataset is empty");
    vga::Metrics m = vga::evaluate(model, vga::claim_refs(ds));
    std::cout << std::setprecision(10) << "claims=" << ds.size() << " accuracy=" << m.accuracy
              << " precision=" << m.precision << " recall=" << m.recall << " f1=" << m.f1 << "\n";
    return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
    bool ok = true;
    double overall = 0.0;
    for (const vga::OpCheckResult& r : vga::run_op_gradchecks(seed)) {
        const bool pass = r.report.passed;
        ok = ok && pass;
        overall = std::max(overall, r.report.max_rel_error);
        std::cout << "op=" << r.op << " max_rel_error=" << std::setprecision(6)
                  << r.report.max_rel_error << " tol=" << r.tol
                  << " status=" << (pass ? "ok" : "FAIL") << "\n";
    }
    vga::GradCheckReport model_report = vga::run_model_gradcheck(seed);
    ok = ok && model_report.passed;
    overall = std::max(overall, model_report.max_rel_error);
    std::cout << "op=full_model max_rel_error=" << std::setprecision(6)
              << model_report.max_rel_error << " tol=" << model_report.tol
              << " status=" << (model_report.passed ? "ok" : "FAIL");
    if (!model_report.worst_parameter.empty()) {
        std::cout << " worst=" << model_report.worst_parameter;
    }
    std::cout << "\n";
    std::cout << "overall_max_rel_error=" << overall << " result=" << (ok ? "pass" : "fail")
              << "\n";
    return ok ? 0 : 1;
}

int cmd_gridsearch(ModelOptions& opt, const std::string& data_path, const std::string& out_path) {
    vga::Dataset ds = vga::load_dataset(data_path);
    vga::ModelConfig cfg = resolve_config(opt, ds);
    vga::GridSearchResult gs = vga::grid_search_alpha(cfg, ds);
    std::vector<std::string> lines;
    for (const auto& [alpha, m] : gs.table) {
        std::ostringstream os;
        os << std::setprecision(10) << "alpha=" << alpha << " accuracy=" << m.accuracy
           << " f1=" << m.f1;
        lines.push_back(os.str());
    }
    {
        std::ostringstream os;
        os << "best_alpha=" << gs.best_alpha;
        lines.push_back(os.str());
    }
    for (const std::string& l : lines) std::cout << l << "\n";
    write_lines(out_path, lines);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vision + propagation-graph rumor detection workbench"};
    app.require_subcommand(1);

    ModelOptions train_opt;
    std::string train_data, train_out = "vga_summary.txt", train_save;
    CLI::App* train = app.add_subcommand("train", "cross-validated training on a claims file");
    train->add_option("--data", train_data, "claims file")->required()->check(CLI::ExistingFile);
    train->add_option("--out", train_out, "metrics summary file");
    train->add_option("--save-model", train_save, "write the final model archive here");
    add_model_flags(train, train_opt);

    std::string eval_model, eval_data;
    CLI::App* eval = app.add_subcommand("eval", "score a saved model on a claims file");
    eval->add_option("--model", eval_model, "model archive")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", eval_data, "claims file")->required()->check(CLI::ExistingFile);

    std::uint64_t gc_seed = 7;
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gradcheck->add_option("--seed", gc_seed, "seed for the randomized checks");

    vga::SynthConfig synth_cfg;
    std::uint64_t synth_seed = 7;
    std::string synth_out = "synth_claims.jsonl";
    bool synth_no_ocr = false;
    CLI::App* synth = app.add_subcommand("synth", "write a synthetic dataset");
    synth->add_option("--claims", synth_cfg.claims, "number of claims");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--out", synth_out, "claims file to write");
    synth->add_option("--rumor-fraction", synth_cfg.rumor_fraction, "share of label-1 claims")
        ->check(CLI::Range(0.0, 1.0));
    synth->add_option("--min-nodes", synth_cfg.min_nodes, "smallest tree (nodes incl. root)");
    synth->add_option("--max-nodes", synth_cfg.max_nodes, "largest tree");
    synth->add_option("--dim", synth_cfg.embedding_dim, "node embedding dimension D");
    synth->add_option("--image-size", synth_cfg.image_size,
                      "square image size (0 = precomputed visual embeddings)");
    synth->add_option("--visual-dim", synth_cfg.visual_dim, "visual latent dimension");
    synth->add_option("--separability", synth_cfg.separability, "unimodal label cue strength");
    synth->add_option("--agreement-noise", synth_cfg.agreement_noise,
                      "cross-modal agreement jitter for non-rumors");
    synth->add_flag("--no-ocr", synth_no_ocr, "omit OCR embeddings");

    std::string srm_image, srm_out;
    CLI::App* srm = app.add_subcommand("srm-extract", "write the noise residual of an image");
    srm->add_option("--image", srm_image, "PPM or VGT1 image")->required()->check(CLI::ExistingFile);
    srm->add_option("--out", srm_out, "output tensor file")->required();

    ModelOptions grid_opt;
    std::string grid_data, grid_out = "vga_gridsearch.txt";
    CLI::App* grid = app.add_subcommand("gridsearch", "alpha grid search over cross-validation");
    grid->add_option("--data", grid_data, "claims file")->required()->check(CLI::ExistingFile);
    grid->add_option("--out", grid_out, "results file");
    add_model_flags(grid, grid_opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train->parsed()) return cmd_train(train_opt, train_data, train_out, train_save);
        if (eval->parsed()) return cmd_eval(eval_model, eval_data);
        if (gradcheck->parsed()) return cmd_gradcheck(gc_seed);
        if (synth->parsed()) {
            synth_cfg.with_ocr = !synth_no_ocr;
            vga::Dataset ds = vga::synth_generate(synth_cfg, synth_seed);
            vga::save_dataset(ds, synth_out);
            std::cout << "claims=" << ds.size() << " out=" << synth_out << "\n";
            return 0;
        }
        if (srm->parsed()) {
            vga::Tensor image = vga::load_image(srm_image);
            vga::Tape tape;
            vga::Tensor residual = vga::srm_residual(tape, image);
            vga::save_tensor(srm_out, residual);
            std::cout << "residual=" << vga::shape_string(residual) << " out=" << srm_out << "\n";
            return 0;
        }
        if (grid->parsed()) return cmd_gridsearch(grid_opt, grid_data, grid_out);
    } catch (const vga::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
