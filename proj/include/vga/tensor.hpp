#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vga/error.hpp"

namespace vga {

class Tape;

/// Dense double-precision tensor with a same-shape gradient buffer.
///
/// A Tensor is a cheap shared handle: copies alias the same storage. That is
/// what lets recorded operations accumulate gradients into the buffers a
/// model keeps across training steps.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor from_values(std::vector<std::size_t> shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                         bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(d_); }
    const std::vector<std::size_t>& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    std::size_t rows() const;  ///< rank-2 only
    std::size_t cols() const;  ///< rank-2 only

    std::span<double> values();
    std::span<const double> values() const;
    std::span<double> grad();
    std::span<const double> grad() const;

    /// Value of a single-element tensor.
    double value() const;
    double at(std::size_t r, std::size_t c) const;
    double& at(std::size_t r, std::size_t c);

    bool requires_grad() const;
    /// True when this tensor was produced by an operation recorded on a tape.
    bool on_tape() const;
    /// True when backward passes should accumulate into this tensor's grad.
    bool needs_grad() const { return requires_grad() || on_tape(); }

    void zero_grad();

    /// Deep copy of the value buffer (fresh leaf, grads zeroed).
    Tensor clone_values(bool requires_grad = false) const;

    /// Handle identity (same underlying storage).
    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

private:
    struct Data {
        std::vector<std::size_t> shape;
        std::vector<double> values;
        std::vector<double> grad;
        bool requires_grad = false;
        const Tape* tape = nullptr;
    };
    std::shared_ptr<Data> d_;

    Data& data();
    const Data& data() const;

    friend class Tape;
};

/// Named trainable tensor. Parameter names are unique within a model and
/// determine the per-parameter initialization stream.
struct Parameter {
    std::string name;
    Tensor tensor;
};

std::string shape_string(const Tensor& t);
std::string shape_string(const std::vector<std::size_t>& shape);

/// Records the forward pass of differentiable operations and replays it in
/// exact reverse order on backward(). One tape per forward computation;
/// parameters are leaves and keep their gradients across tapes until cleared.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::size_t steps() const { return backs_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and replays the tape backwards. Gradients of
    /// intermediate (op-output) tensors are reset first; leaf gradients
    /// accumulate, so calling backward twice doubles parameter grads.
    void backward(const Tensor& loss);

    void clear();

    // --- used by op implementations ---
    Tensor make_output(std::vector<std::size_t> shape);
    void record(std::function<void()> back);

private:
    std::vector<std::function<void()>> backs_;
    std::vector<Tensor> outputs_;
};

// --- primitive operations -------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
/// x·w + b with b broadcast over rows. x: m×p, w: p×q, b: rank-1 [q].
Tensor affine(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b);
Tensor leaky_relu(Tape& tape, const Tensor& x, double slope = 0.01);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor softmax_rows(Tape& tape, const Tensor& x);
Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b);
/// Columnwise mean over rows; m×n -> rank-1 [n].
Tensor mean_rows(Tape& tape, const Tensor& x);
/// Valid cross-correlation. image: H×W×C, kernels: K×kh×kw×C (constants:
/// no gradient flows into the kernels; image gradient is supported).
Tensor conv2d_valid(Tape& tape, const Tensor& image, const Tensor& kernels);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);  ///< elementwise
/// factor·x. A factor of exactly 0 records no gradient flow, which keeps an
/// alpha=1 joint loss bitwise identical to a similarity-off run.
Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor add_scalar(Tape& tape, const Tensor& x, double shift);
/// s·x where s is a single-element tensor (both sides receive gradients).
Tensor scale_by(Tape& tape, const Tensor& x, const Tensor& s);
Tensor transpose(Tape& tape, const Tensor& x);
Tensor reshape(Tape& tape, const Tensor& x, std::vector<std::size_t> shape);
Tensor sum_all(Tape& tape, const Tensor& x);
Tensor select(Tape& tape, const Tensor& x, std::size_t flat_index);
/// Matrix whose every row equals x[source_row].
Tensor repeat_row(Tape& tape, const Tensor& x, std::size_t source_row);
/// Row i scaled by factors[i] (factors are constants).
Tensor scale_rows(Tape& tape, const Tensor& x, const std::vector<double>& factors);
/// Non-overlapping p×p patches of an H×W×C image, one flattened patch per
/// row. Trailing rows/cols that do not fill a patch are dropped.
Tensor extract_patches(Tape& tape, const Tensor& image, std::size_t patch);
/// log(clamp(x, eps, 1-eps)); the gradient is zero where the clamp is active.
Tensor log_clamped(Tape& tape, const Tensor& x, double eps = 1e-7);
/// Scalar cosine similarity of two equally-sized tensors (flattened). A
/// degenerate input (norm < 1e-12) yields similarity 0 with a logged warning.
Tensor cosine_similarity(Tape& tape, const Tensor& a, const Tensor& b);
/// mean((a-b)^2) as a scalar.
Tensor squared_distance_mean(Tape& tape, const Tensor& a, const Tensor& b);
/// Euclidean distance ||a-b|| as a scalar (zero gradient at coincidence).
Tensor norm_distance(Tape& tape, const Tensor& a, const Tensor& b);
/// max(0, margin - x)^2 for a scalar x.
Tensor hinge_squared(Tape& tape, const Tensor& x, double margin);

// --- multi-head attention ---------------------------------------------------

struct AttentionHead {
    Tensor wq, wk, wv;  // each d_in × (d_in/h)
};

struct MultiHeadParams {
    std::vector<AttentionHead> heads;
    Tensor wo;  // d_in × d_in
};

/// softmax(Q·K^T / sqrt(d_in/h))·V per head, heads concatenated and projected
/// by wo. Self-attention is the queries == keys_values case.
Tensor multi_head_attention(Tape& tape, const Tensor& queries, const Tensor& keys_values,
                            const MultiHeadParams& params);

}  // namespace vga
