#include "vga/train.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>

namespace vga {

// --- Adam ---------------------------------------------------------------------

Adam::Adam(std::span<Parameter> params, AdamConfig cfg) : params_(params), cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Parameter& p : params_) {
        m_.emplace_back(p.tensor.size(), 0.0);
        v_.emplace_back(p.tensor.size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        auto grads = params_[pi].tensor.grad();
        auto vals = params_[pi].tensor.values();
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (std::size_t i = 0; i < grads.size(); ++i) {
            const double g = grads[i];
            if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient in parameter " + params_[pi].name);
            }
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            vals[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        params_[pi].tensor.zero_grad();
    }
}

// --- early stopping ---------------------------------------------------------------

EarlyStopper::EarlyStopper(std::size_t patience) : patience_(patience) {
    if (patience == 0) throw ConfigError("EarlyStopper: patience must be at least 1");
}

bool EarlyStopper::update(double validation_loss) {
    ++epoch_;
    if (epoch_ == 1 || validation_loss < best_loss_) {
        best_loss_ = validation_loss;
        best_epoch_ = epoch_;
        since_improvement_ = 0;
        return true;
    }
    ++since_improvement_;
    return false;
}

// --- metrics -----------------------------------------------------------------------

Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size()) {
        throw ContractError("compute_metrics: " + std::to_string(predictions.size()) +
                            " predictions vs " + std::to_string(labels.size()) + " labels");
    }
    if (predictions.empty()) throw ContractError("compute_metrics: empty input");

    Metrics m;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if ((predictions[i] != 0 && predictions[i] != 1) || (labels[i] != 0 && labels[i] != 1)) {
            throw ContractError("compute_metrics: entries must be 0 or 1");
        }
        m.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predictions[i])]++;
    }
    const double total = static_cast<double>(predictions.size());
    m.accuracy = (static_cast<double>(m.confusion[0][0]) + static_cast<double>(m.confusion[1][1])) /
                 total;
    double prec_sum = 0.0, rec_sum = 0.0, f1_sum = 0.0;
    for (std::size_t cls = 0; cls < 2; ++cls) {
        const double tp = static_cast<double>(m.confusion[cls][cls]);
        const double fp = static_cast<double>(m.confusion[1 - cls][cls]);
        const double fn = static_cast<double>(m.confusion[cls][1 - cls]);
        const double prec = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
        const double rec = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
        const double f1 = prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        prec_sum += prec;
        rec_sum += rec;
        f1_sum += f1;
    }
    m.precision = prec_sum / 2.0;
    m.recall = rec_sum / 2.0;
    m.f1 = f1_sum / 2.0;
    return m;
}

ClaimRefs claim_refs(const Dataset& dataset, const std::vector<std::size_t>& indices) {
    ClaimRefs refs;
    refs.reserve(indices.size());
    for (std::size_t i : indices) refs.push_back(&dataset.claims[i]);
    return refs;
}

ClaimRefs claim_refs(const Dataset& dataset) {
    ClaimRefs refs;
    refs.reserve(dataset.claims.size());
    for (const Claim& c : dataset.claims) refs.push_back(&c);
    return refs;
}

// --- evaluation -----------------------------------------------------------------------

double mean_joint_loss(const VgaModel& model, const ClaimRefs& claims) {
    if (claims.empty()) throw ContractError("mean_joint_loss: no claims");
    Rng dummy(0);
    double sum = 0.0;
    for (const Claim* c : claims) {
        Tape tape;
        sum += model.forward(tape, *c, /*training=*/false, dummy).joint.value();
    }
    return sum / static_cast<double>(claims.size());
}

Metrics evaluate(const VgaModel& model, const ClaimRefs& claims) {
    if (claims.empty()) throw ContractError("evaluate: no claims");
    std::vector<int> predictions, labels;
    predictions.reserve(claims.size());
    labels.reserve(claims.size());
    Rng dummy(0);
    for (const Claim* c : claims) {
        Tape tape;
        predictions.push_back(model.forward(tape, *c, /*training=*/false, dummy).predicted);
        labels.push_back(c->label);
    }
    return compute_metrics(predictions, labels);
}

namespace {

std::pair<double, double> eval_loss_and_accuracy(const VgaModel& model, const ClaimRefs& claims) {
    Rng dummy(0);
    double sum = 0.0;
    std::size_t correct = 0;
    for (const Claim* c : claims) {
        Tape tape;
        ClaimOutput out = model.forward(tape, *c, /*training=*/false, dummy);
        sum += out.joint.value();
        if (out.predicted == c->label) ++correct;
    }
    return {sum / static_cast<double>(claims.size()),
            static_cast<double>(correct) / static_cast<double>(claims.size())};
}

std::vector<std::vector<double>> snapshot_values(std::span<const Parameter> params) {
    std::vector<std::vector<double>> snap;
    snap.reserve(params.size());
    for (const Parameter& p : params) {
        snap.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    }
    return snap;
}

void restore_values(std::span<Parameter> params, const std::vector<std::vector<double>>& snap) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].tensor.values();
        std::copy(snap[i].begin(), snap[i].end(), dst.begin());
    }
}

}  // namespace

// --- training loop -----------------------------------------------------------------------

TrainResult train_model(VgaModel& model, const ClaimRefs& train, const ClaimRefs& validation,
                        std::uint64_t seed) {
    if (train.empty() || validation.empty()) {
        throw ContractError("train_model: train and validation sets must be nonempty");
    }
    const ModelConfig& cfg = model.config();
    Adam adam(model.parameters(), {cfg.learning_rate, 0.9, 0.999, 1e-8});
    EarlyStopper stopper(cfg.patience);
    Rng shuffle_rng = derived_rng(seed, "batch-shuffle");
    Rng aug_rng = derived_rng(seed, "augmentation");

    model.zero_grads();
    TrainResult result;
    std::vector<std::vector<double>> best = snapshot_values(model.parameters());

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double train_loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            for (std::size_t i = start; i < end; ++i) {
                Tape tape;
                ClaimOutput out = model.forward(tape, *train[order[i]], /*training=*/true, aug_rng);
                if (!std::isfinite(out.joint.value())) {
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                       ", claim " + train[order[i]]->id);
                }
                train_loss_sum += out.joint.value();
                Tensor batch_loss = scale(tape, out.joint, inv_batch);
                tape.backward(batch_loss);
            }
            adam.step();
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = train_loss_sum / static_cast<double>(train.size());
        auto [tl_eval, ta] = eval_loss_and_accuracy(model, train);
        (void)tl_eval;
        stats.train_accuracy = ta;
        auto [vl, va] = eval_loss_and_accuracy(model, validation);
        stats.val_loss = vl;
        stats.val_accuracy = va;
        result.history.push_back(stats);
        result.epochs_run = epoch;

        if (stopper.update(vl)) best = snapshot_values(model.parameters());
        if (stopper.should_stop()) break;
    }

    restore_values(model.parameters(), best);
    result.best_epoch = stopper.best_epoch();
    result.best_val_loss = stopper.best_loss();
    return result;
}

// --- cross-validation -----------------------------------------------------------------------

namespace {

std::uint64_t fold_seed(std::uint64_t master, std::size_t fold) {
    return hash_combine(hash_combine(master, hash_str("fold")), fold);
}

Metrics run_fold(const ModelConfig& cfg, const Dataset& dataset, const FoldPlan::Split& split,
                 std::uint64_t seed) {
    ModelConfig fold_cfg = cfg;
    fold_cfg.seed = seed;
    VgaModel model(fold_cfg);
    train_model(model, claim_refs(dataset, split.train), claim_refs(dataset, split.validation),
                seed);
    return evaluate(model, claim_refs(dataset, split.test));
}

}  // namespace

CrossValResult cross_validate(const ModelConfig& cfg, const Dataset& dataset) {
    cfg.validate();
    if (dataset.claims.empty()) throw ContractError("cross_validate: empty dataset");
    CrossValResult result;
    result.plan = make_folds(dataset, cfg.folds, cfg.seed);
    const std::size_t k = cfg.folds;
    result.fold_metrics.resize(k);

    if (cfg.threads <= 1) {
        for (std::size_t f = 0; f < k; ++f) {
            result.fold_metrics[f] =
                run_fold(cfg, dataset, result.plan.folds[f], fold_seed(cfg.seed, f));
        }
    } else {
        std::vector<std::exception_ptr> errors(k);
        std::vector<std::thread> workers;
        std::size_t next = 0;
        while (next < k) {
            const std::size_t batch = std::min(cfg.threads, k - next);
            workers.clear();
            for (std::size_t j = 0; j < batch; ++j) {
                const std::size_t f = next + j;
                workers.emplace_back([&, f] {
                    try {
                        result.fold_metrics[f] =
                            run_fold(cfg, dataset, result.plan.folds[f], fold_seed(cfg.seed, f));
                    } catch (...) {
                        errors[f] = std::current_exception();
                    }
                });
            }
            for (std::thread& w : workers) w.join();
            next += batch;
        }
        for (const std::exception_ptr& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    Metrics& mean = result.mean;
    for (const Metrics& m : result.fold_metrics) {
        mean.accuracy += m.accuracy;
        mean.precision += m.precision;
        mean.recall += m.recall;
        mean.f1 += m.f1;
        for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) mean.confusion[a][b] += m.confusion[a][b];
    }
    const double inv = 1.0 / static_cast<double>(k);
    mean.accuracy *= inv;
    mean.precision *= inv;
    mean.recall *= inv;
    mean.f1 *= inv;
    return result;
}

GridSearchResult grid_search_alpha(ModelConfig cfg, const Dataset& dataset,
                                   const std::vector<double>& grid) {
    if (grid.empty()) throw ConfigError("grid_search_alpha: empty grid");
    GridSearchResult result;
    bool have_best = false;
    double best_acc = -1.0;
    for (double alpha : grid) {
        cfg.alpha = alpha;
        CrossValResult cv = cross_validate(cfg, dataset);
        result.table.emplace_back(alpha, cv.mean);
        if (!have_best || cv.mean.accuracy > best_acc) {  // strict: ties keep the lower alpha
            have_best = true;
            best_acc = cv.mean.accuracy;
            result.best_alpha = alpha;
        }
    }
    return result;
}

// --- full-model gradient verification ---------------------------------------------------------

GradCheckReport run_model_gradcheck(std::uint64_t seed) {
    SynthConfig synth;
    synth.claims = 3;
    synth.min_nodes = 2;
    synth.max_nodes = 4;
    synth.embedding_dim = 12;
    synth.image_size = 12;
    synth.visual_dim = 12;
    synth.separability = 1.0;
    const Dataset dataset = synth_generate(synth, hash_combine(seed, hash_str("gradcheck-data")));

    ModelConfig cfg;
    cfg.input_dim = 12;
    cfg.hidden_dim = 16;
    cfg.heads = 2;
    cfg.vis_tokens = 1;
    cfg.fusion_tokens = 1;
    cfg.gcn_layers = 1;
    cfg.aug_prob = 0.0;  // deterministic forward for finite differences
    cfg.alpha = 0.5;
    cfg.encoder = EncoderKind::TinyPatch;
    cfg.patch_size = 4;
    cfg.encoder_dim = 8;
    cfg.sim_mode = SimMode::Cosine;
    cfg.fusion_mode = FusionMode::CoAttention;
    cfg.seed = seed;
    VgaModel model(cfg);

    Rng dummy(0);
    auto batch_loss = [&model, &dataset, &dummy](bool with_grads) {
        Tape tape;
        Tensor total;
        for (const Claim& c : dataset.claims) {
            Tensor joint = model.forward(tape, c, /*training=*/false, dummy).joint;
            total = total.defined() ? add(tape, total, joint) : joint;
        }
        Tensor loss = scale(tape, total, 1.0 / static_cast<double>(dataset.claims.size()));
        if (with_grads) tape.backward(loss);
        return loss.value();
    };

    return grad_check([&batch_loss] { return batch_loss(false); },
                      [&batch_loss] { return batch_loss(true); }, model.parameters(),
                      /*h=*/1e-5, /*tol=*/1e-4);
}

}  // namespace vga
