#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "vga/data.hpp"
#include "vga/gradcheck.hpp"
#include "vga/model.hpp"

namespace vga {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adaptive-moment optimizer with bias correction. step() consumes the
/// accumulated gradients and clears them.
class Adam {
public:
    Adam(std::span<Parameter> params, AdamConfig cfg);

    void step();
    std::size_t steps_taken() const { return t_; }

private:
    std::span<Parameter> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t t_ = 0;
};

/// Stopping rule: track the best (strictly lowest) validation loss; stop once
/// `patience` consecutive epochs fail to improve it.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience);

    /// Feeds one epoch's validation loss; returns true when it improved the best.
    bool update(double validation_loss);
    bool should_stop() const { return since_improvement_ >= patience_; }
    std::size_t best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_loss_; }
    std::size_t epochs_seen() const { return epoch_; }
    std::size_t epochs_since_improvement() const { return since_improvement_; }

private:
    std::size_t patience_;
    std::size_t epoch_ = 0;
    std::size_t best_epoch_ = 0;
    std::size_t since_improvement_ = 0;
    double best_loss_ = 0.0;
};

struct Metrics {
    double accuracy = 0.0;
    double precision = 0.0;  // macro
    double recall = 0.0;     // macro
    double f1 = 0.0;         // macro
    std::array<std::array<std::size_t, 2>, 2> confusion{};  // [label][prediction]
};

/// Confusion counts plus macro-averaged precision/recall/F1. A class absent
/// from both predictions and labels contributes zero-valued terms.
Metrics compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels);

using ClaimRefs = std::vector<const Claim*>;
ClaimRefs claim_refs(const Dataset& dataset, const std::vector<std::size_t>& indices);
ClaimRefs claim_refs(const Dataset& dataset);

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
};

/// Mini-batch training with early stopping on validation loss; the model is
/// left holding the best-validation parameters.
TrainResult train_model(VgaModel& model, const ClaimRefs& train, const ClaimRefs& validation,
                        std::uint64_t seed);

double mean_joint_loss(const VgaModel& model, const ClaimRefs& claims);
Metrics evaluate(const VgaModel& model, const ClaimRefs& claims);

struct CrossValResult {
    FoldPlan plan;
    std::vector<Metrics> fold_metrics;
    Metrics mean;  // metric fields averaged over folds, confusion summed
};

/// K-fold cross-validation; fold models and rng streams derive from the
/// master seed by fold index, so results are independent of `threads`.
CrossValResult cross_validate(const ModelConfig& cfg, const Dataset& dataset);

struct GridSearchResult {
    std::vector<std::pair<double, Metrics>> table;  // one row per grid value
    double best_alpha = 0.0;
};

/// Cross-validates each alpha in the grid and picks the best mean accuracy;
/// ties go to the lower alpha.
GridSearchResult grid_search_alpha(ModelConfig cfg, const Dataset& dataset,
                                   const std::vector<double>& grid = {0.1, 0.3, 0.5, 0.7, 0.9});

/// Finite-difference verification of the full joint loss on a 3-claim
/// synthetic batch (hidden dim 16, 2 heads).
GradCheckReport run_model_gradcheck(std::uint64_t seed);

}  // namespace vga
