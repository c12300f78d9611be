#include "vga/tensor.hpp"

#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>
#include <utility>

namespace vga {

namespace {

std::size_t checked_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
        n *= e;
    }
    return n;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                             shape_string(b));
    }
}

void check_rank2(const char* op, const Tensor& t) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " + shape_string(t));
    }
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

std::string shape_string(const Tensor& t) {
    return t.defined() ? shape_string(t.shape()) : std::string("[undefined]");
}

// --- Tensor -----------------------------------------------------------------

Tensor::Data& Tensor::data() {
    if (!d_) throw ContractError("use of an undefined tensor");
    return *d_;
}

const Tensor::Data& Tensor::data() const {
    if (!d_) throw ContractError("use of an undefined tensor");
    return *d_;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    const std::size_t n = checked_size(shape);
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->values.assign(n, 0.0);
    t.d_->grad.assign(n, 0.0);
    t.d_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::from_values(std::vector<std::size_t> shape, std::vector<double> values,
                           bool requires_grad) {
    const std::size_t n = checked_size(shape);
    if (values.size() != n) {
        throw DimensionError("from_values: " + std::to_string(values.size()) +
                             " values for shape " + shape_string(shape));
    }
    Tensor t;
    t.d_ = std::make_shared<Data>();
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    t.d_->grad.assign(n, 0.0);
    t.d_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_values({1}, {value}, requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
    return from_values({rows, cols}, std::move(values), requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    return from_values({values.size()}, std::move(values), requires_grad);
}

const std::vector<std::size_t>& Tensor::shape() const { return data().shape; }
std::size_t Tensor::size() const { return data().values.size(); }

std::size_t Tensor::rows() const {
    check_rank2("rows", *this);
    return shape()[0];
}

std::size_t Tensor::cols() const {
    check_rank2("cols", *this);
    return shape()[1];
}

std::span<double> Tensor::values() { return data().values; }
std::span<const double> Tensor::values() const { return data().values; }
std::span<double> Tensor::grad() { return data().grad; }
std::span<const double> Tensor::grad() const { return data().grad; }

double Tensor::value() const {
    if (size() != 1) throw ContractError("value(): tensor is not scalar, shape " + shape_string(*this));
    return data().values[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    check_rank2("at", *this);
    if (r >= shape()[0] || c >= shape()[1]) throw ContractError("at(): index out of range");
    return data().values[r * shape()[1] + c];
}

double& Tensor::at(std::size_t r, std::size_t c) {
    check_rank2("at", *this);
    if (r >= shape()[0] || c >= shape()[1]) throw ContractError("at(): index out of range");
    return data().values[r * shape()[1] + c];
}

bool Tensor::requires_grad() const { return data().requires_grad; }
bool Tensor::on_tape() const { return data().tape != nullptr; }

void Tensor::zero_grad() {
    auto& g = data().grad;
    std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::clone_values(bool requires_grad) const {
    return from_values(shape(), std::vector<double>(values().begin(), values().end()), requires_grad);
}

// --- Tape -------------------------------------------------------------------

Tensor Tape::make_output(std::vector<std::size_t> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.d_->tape = this;
    outputs_.push_back(t);
    return t;
}

void Tape::record(std::function<void()> back) { backs_.push_back(std::move(back)); }

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_string(loss));
    }
    if (!loss.on_tape() || loss.d_->tape != this) {
        throw ContractError("backward: loss was not produced by an operation on this tape");
    }
    for (Tensor& t : outputs_) t.zero_grad();
    loss.d_->grad[0] += 1.0;
    for (auto it = backs_.rbegin(); it != backs_.rend(); ++it) (*it)();
}

void Tape::clear() {
    backs_.clear();
    outputs_.clear();
}

// --- elementwise / structural ops --------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    check_rank2("matmul", a);
    check_rank2("matmul", b);
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner extents differ, " + shape_string(a) + " vs " +
                             shape_string(b));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = tape.make_output({m, n});
    {
        auto av = a.values();
        auto bv = b.values();
        auto ov = out.values();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = av[i * k + p];
                if (aip == 0.0) continue;
                for (std::size_t j = 0; j < n; ++j) ov[i * n + j] += aip * bv[p * n + j];
            }
        }
    }
    tape.record([a, b, out, m, k, n]() mutable {
        auto og = out.grad();
        if (a.needs_grad()) {
            auto ag = a.grad();
            auto bv = b.values();
            // dA += dC·B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += og[i * n + j] * bv[p * n + j];
                    ag[i * k + p] += s;
                }
        }
        if (b.needs_grad()) {
            auto bg = b.grad();
            auto av = a.values();
            // dB += A^T·dC
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t i = 0; i < m; ++i) {
                    const double aip = av[i * k + p];
                    if (aip == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) bg[p * n + j] += aip * og[i * n + j];
                }
        }
    });
    return out;
}

Tensor affine(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
    check_rank2("affine", x);
    check_rank2("affine", w);
    if (b.rank() != 1) throw DimensionError("affine: bias must be rank-1, got " + shape_string(b));
    if (x.cols() != w.rows() || w.cols() != b.size()) {
        throw DimensionError("affine: incompatible shapes x" + shape_string(x) + " w" +
                             shape_string(w) + " b" + shape_string(b));
    }
    const std::size_t m = x.rows(), p = x.cols(), q = w.cols();
    Tensor out = tape.make_output({m, q});
    {
        auto xv = x.values();
        auto wv = w.values();
        auto bv = b.values();
        auto ov = out.values();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < q; ++j) ov[i * q + j] = bv[j];
            for (std::size_t r = 0; r < p; ++r) {
                const double xir = xv[i * p + r];
                if (xir == 0.0) continue;
                for (std::size_t j = 0; j < q; ++j) ov[i * q + j] += xir * wv[r * q + j];
            }
        }
    }
    tape.record([x, w, b, out, m, p, q]() mutable {
        auto og = out.grad();
        if (x.needs_grad()) {
            auto xg = x.grad();
            auto wv = w.values();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t r = 0; r < p; ++r) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < q; ++j) s += og[i * q + j] * wv[r * q + j];
                    xg[i * p + r] += s;
                }
        }
        if (w.needs_grad()) {
            auto wg = w.grad();
            auto xv = x.values();
            for (std::size_t r = 0; r < p; ++r)
                for (std::size_t i = 0; i < m; ++i) {
                    const double xir = xv[i * p + r];
                    if (xir == 0.0) continue;
                    for (std::size_t j = 0; j < q; ++j) wg[r * q + j] += xir * og[i * q + j];
                }
        }
        if (b.needs_grad()) {
            auto bg = b.grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < q; ++j) bg[j] += og[i * q + j];
        }
    });
    return out;
}

Tensor leaky_relu(Tape& tape, const Tensor& x, double slope) {
    if (!(slope > 0.0 && slope < 1.0)) {
        throw ConfigError("leaky_relu: slope must be in (0,1), got " + std::to_string(slope));
    }
    Tensor out = tape.make_output(x.shape());
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = xv[i] >= 0.0 ? xv[i] : slope * xv[i];
    tape.record([x, out, slope]() mutable {
        if (!x.needs_grad()) return;
        auto xg = x.grad();
        auto og = out.grad();
        auto xv = x.values();
        // gradient at the kink uses the positive branch
        for (std::size_t i = 0; i < xv.size(); ++i) xg[i] += og[i] * (xv[i] >= 0.0 ? 1.0 : slope);
    });
    return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
    Tensor out = tape.make_output(x.shape());
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const double v = xv[i];
        if (v >= 0.0) {
            ov[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            ov[i] = e / (1.0 + e);
        }
    }
    tape.record([x, out]() mutable {
        if (!x.needs_grad()) return;
        auto xg = x.grad();
        auto og = out.grad();
        auto ov = out.values();
        for (std::size_t i = 0; i < ov.size(); ++i) xg[i] += og[i] * ov[i] * (1.0 - ov[i]);
    });
    return out;
}

Tensor softmax_rows(Tape& tape, const Tensor& x) {
    check_rank2("softmax_rows", x);
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = tape.make_output({m, n});
    {
        auto xv = x.values();
        auto ov = out.values();
        for (std::size_t i = 0; i < m; ++i) {
            double mx = xv[i * n];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[i * n + j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double e = std::exp(xv[i * n + j] - mx);
                ov[i * n + j] = e;
                sum += e;
            }
            for (std::size_t j = 0; j < n; ++j) ov[i * n + j] /= sum;
        }
    }
    tape.record([x, out, m, n]() mutable {
        if (!x.needs_grad()) return;
        auto xg = x.grad();
        auto og = out.grad();
        auto ov = out.values();
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += og[i * n + j] * ov[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                xg[i * n + j] += ov[i * n + j] * (og[i * n + j] - dot);
        }
    });
    return out;
}

Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b) {
    check_rank2("concat_cols", a);
    check_rank2("concat_cols", b);
    if (a.rows() != b.rows()) {
        throw DimensionError("concat_cols: row counts differ, " + shape_string(a) + " vs " +
                             shape_string(b));
    }
    const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
    Tensor out = tape.make_output({m, p + q});
    {
        auto av = a.values();
        auto bv = b.values();
        auto ov = out.values();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < p; ++j) ov[i * (p + q) + j] = av[i * p + j];
            for (std::size_t j = 0; j < q; ++j) ov[i * (p + q) + p + j] = bv[i * q + j];
        }
    }
    tape.record([a, b, out, m, p, q]() mutable {
        auto og = out.grad();
        if (a.needs_grad()) {
            auto ag = a.grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < p; ++j) ag[i * p + j] += og[i * (p + q) + j];
        }
        if (b.needs_grad()) {
            auto bg = b.grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < q; ++j) bg[i * q + j] += og[i * (p + q) + p + j];
        }
    });
    return out;
}

Tensor mean_rows(Tape& tape, const Tensor& x) {
    check_rank2("mean_rows", x);
    const std::size_t m = x.rows(), n = x.cols();
    if (m == 0) throw DimensionError("mean_rows: empty input (no rows)");
    Tensor out = tape.make_output({n});
    {
        auto xv = x.values();
        auto ov = out.values();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ov[j] += xv[i * n + j];
        for (std::size_t j = 0; j < n; ++j) ov[j] /= static_cast<double>(m);
    }
    tape.record([x, out, m, n]() mutable {
        if (!x.needs_grad()) return;
        auto xg = x.grad();
        auto og = out.grad();
        const double inv = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) xg[i * n + j] += og[j] * inv;
    });
    return out;
}

Tensor conv2d_valid(Tape& tape, const Tensor& image, const Tensor& kernels) {
    if (image.rank() != 3) {
        throw DimensionError("conv2d_valid: image must be H×W×C, got " + shape_string(image));
    }
    if (kernels.rank() != 4) {
        throw DimensionError("conv2d_valid: kernels must be K×kh×kw×C, got " + shape_string(kernels));
    }
    const std::size_t H = image.shape()[0], W = image.shape()[1], C = image.shape()[2];
    const std::size_t K = kernels.shape()[0], kh = kernels.shape()[1], kw = kernels.shape()[2];
    if (kernels.shape()[3] != C) {
        throw DimensionError("conv2d_valid: channel mismatch, image " + shape_string(image) +
                             " vs kernels " + shape_string(kernels));
    }
    if (H < kh || W < kw) {
        throw DimensionError("conv2d_valid: image " + shape_string(image) +
                             " smaller than kernel window " + shape_string(kernels));
    }
    const std::size_t oh = H - kh + 1, ow = W - kw + 1;
    Tensor out = tape.make_output({oh, ow, K});
    {
        auto iv = image.values();
        auto kv = kernels.values();
        auto ov = out.values();
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x)
                for (std::size_t k = 0; k < K; ++k) {
                    double s = 0.0;
                    for (std::size_t dy = 0; dy < kh; ++dy)
                        for (std::size_t dx = 0; dx < kw; ++dx)
                            for (std::size_t c = 0; c < C; ++c)
                                s += iv[((y + dy) * W + (x + dx)) * C + c] *
                                     kv[((k * kh + dy) * kw + dx) * C + c];
                    ov[(y * ow + x) * K + k] = s;
                }
    }
    tape.record([image, kernels, out, H, W, C, K, kh, kw, oh, ow]() mutable {
        (void)H;
        if (!image.needs_grad()) return;  // kernels are constants by contract
        auto ig = image.grad();
        auto kv = kernels.values();
        auto og = out.grad();
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x)
                for (std::size_t k = 0; k < K; ++k) {
                    const double g = og[(y * ow + x) * K + k];
                    if (g == 0.0) continue;
                    for (std::size_t dy = 0; dy < kh; ++dy)
                        for (std::size_t dx = 0; dx < kw; ++dx)
                            for (std::size_t c = 0; c < C; ++c)
                                ig[((y + dy) * W + (x + dx)) * C + c] +=
                                    g * kv[((k * kh + dy) * kw + dx) * C + c];
                }
    });
    return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    Tensor out = tape.make_output(a.shape());
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    tape.record([a, b, out]() mutable {
        auto og = out.grad();
        if (a.needs_grad()) {
            auto ag = a.grad();
            for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
        }
        if (b.needs_grad()) {
            auto bg = b.grad();
            for (std::size_t i = 0; i < og.size(); ++i) bg[i] += og[i];
        }
    });
    return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    Tensor out = tape.make_output(a.shape());
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    tape.record([a, b, out]() mutable {
        auto og = out.grad();
        if (a.needs_grad()) {
            auto ag = a.grad();
            for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
        }
        if (b.needs_grad()) {
            auto bg = b.grad();
            for (std::size_t i = 0; i < og.size(); ++i) bg[i] -= og[i];
        }
    });
    return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    Tensor out = tape.make_output(a.shape());
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    tape.record([a, b, out]() mutable {
        auto og = out.grad();
        if (a.needs_grad()) {
            auto ag = a.grad();
            auto bv = b.values();
            for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * bv[i];
        }
        if (b.needs_grad()) {
            auto bg = b.grad();
            auto av = a.values();
            for (std::size_t i = 0; i < og.size(); ++i) bg[i] += og[i] * av[i];
        }
    });
    return out;
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
    Tensor out = tape.make_output(x.shape());
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = factor * xv[i];
    tape.record([x, out, factor]() mutable {
        if (factor == 0.0 || !x.needs_grad()) return;
        auto xg = x.grad();
        auto og = out.grad();
        for (std::size_t i = 0; i < og.size(); ++i) xg[i] += factor * og[i];
    });
    return out;
}

Tensor add_scalar(Tape& tape, const Tensor& x, double shift) {
    Tensor out = tape.make_output(x.shape());
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] + shift;
    tape.record([x, out]() mutable {
        if (!x.needs_grad()) return;
        auto xg = x.grad();
        auto og = out.grad();
        for (std::size_t i = 0; i < og.size(); ++i) xg[i] += og[i];
    });
    return out;
}

Tensor scale_by(Tape& tape, const Tensor& x, const Tensor& s) {
    if (s.size() != 1) throw DimensionError("scale_by: scale must be scalar, got " + shape_string(s));
    Tensor out = tape.make_output(x.shape());
    const double sv = s.values()[0];
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = sv * xv[i];
    tape.record([x, s, out]() mutable {
        auto og = out.grad();
        if (x.needs_grad()) {
            const double sv = s.values()[0];
            auto xg = x.grad();
            for (std::size_t i = 0; i < og.size(); ++i) xg[i] += sv * og[i];
        }
        if (s.needs_grad()) {
            auto xv = x.values();
            double acc = 0.0;
            for (std::size_t i = 0; i < og.size(); ++i) acc += og[i] * xv[i];
            s.grad()[0] += acc;
        }
    });
    return out;
}

Tensor transpose(Tape& tape, const Tensor& x) {
    check_rank2("transpose", x);
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out = tape.make_output({n, m});
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ov[j * m + i] = xv[i * n + j];
    tape.record([x, out, m, n]() mutable {
        if (!x.needs_grad()) return;
        auto xg = x.grad();
        auto og = out.grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) xg[i * n + j] += og[j * m + i];
    });
    return out;
}

Tensor reshape(Tape& tape, const Tensor& x, std::vector<std::size_t> shape) {
    const std::size_t n = checked_size(shape);
    if (n != x.size()) {
        throw DimensionError("reshape: cannot view " + shape_string(x) + " as " + shape_string(shape));
    }
    Tensor out = tape.make_output(std::move(shape));
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < n; ++i) ov[i] = xv[i];
    tape.record([x, out]() mutable {
        if (!x.needs_grad()) return;
        auto xg = x.grad();
        auto og = out.grad();
        for (std::size_t i = 0; i < og.size(); ++i) xg[i] += og[i];
    });
    return out;
}

Tensor sum_all(Tape& tape, const Tensor& x) {
    Tensor out = tape.make_output({1});
    auto xv = x.values();
    double s = 0.0;
    for (double v : xv) s += v;
    out.values()[0] = s;
    tape.record([x, out]() mutable {
        if (!x.needs_grad()) return;
        const double g = out.grad()[0];
        auto xg = x.grad();
        for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += g;
    });
    return out;
}

Tensor select(Tape& tape, const Tensor& x, std::size_t flat_index) {
    if (flat_index >= x.size()) {
        throw DimensionError("select: index " + std::to_string(flat_index) + " out of range for " +
                             shape_string(x));
    }
    Tensor out = tape.make_output({1});
    out.values()[0] = x.values()[flat_index];
    tape.record([x, out, flat_index]() mutable {
        if (!x.needs_grad()) return;
        x.grad()[flat_index] += out.grad()[0];
    });
    return out;
}

Tensor repeat_row(Tape& tape, const Tensor& x, std::size_t source_row) {
    check_rank2("repeat_row", x);
    const std::size_t m = x.rows(), n = x.cols();
    if (source_row >= m) {
        throw DimensionError("repeat_row: row " + std::to_string(source_row) + " out of range for " +
                             shape_string(x));
    }
    Tensor out = tape.make_output({m, n});
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = xv[source_row * n + j];
    tape.record([x, out, m, n, source_row]() mutable {
        if (!x.needs_grad()) return;
        auto xg = x.grad();
        auto og = out.grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) xg[source_row * n + j] += og[i * n + j];
    });
    return out;
}

Tensor scale_rows(Tape& tape, const Tensor& x, const std::vector<double>& factors) {
    check_rank2("scale_rows", x);
    const std::size_t m = x.rows(), n = x.cols();
    if (factors.size() != m) {
        throw DimensionError("scale_rows: " + std::to_string(factors.size()) + " factors for " +
                             shape_string(x));
    }
    Tensor out = tape.make_output({m, n});
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = factors[i] * xv[i * n + j];
    tape.record([x, out, factors, m, n]() mutable {
        if (!x.needs_grad()) return;
        auto xg = x.grad();
        auto og = out.grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) xg[i * n + j] += factors[i] * og[i * n + j];
    });
    return out;
}

Tensor extract_patches(Tape& tape, const Tensor& image, std::size_t patch) {
    if (image.rank() != 3) {
        throw DimensionError("extract_patches: image must be H×W×C, got " + shape_string(image));
    }
    if (patch == 0) throw ConfigError("extract_patches: patch size must be positive");
    const std::size_t H = image.shape()[0], W = image.shape()[1], C = image.shape()[2];
    const std::size_t py = H / patch, px = W / patch;
    if (py == 0 || px == 0) {
        throw DimensionError("extract_patches: image " + shape_string(image) +
                             " smaller than patch " + std::to_string(patch));
    }
    const std::size_t cols = patch * patch * C;
    Tensor out = tape.make_output({py * px, cols});
    auto iv = image.values();
    auto ov = out.values();
    for (std::size_t gy = 0; gy < py; ++gy)
        for (std::size_t gx = 0; gx < px; ++gx) {
            const std::size_t row = gy * px + gx;
            for (std::size_t dy = 0; dy < patch; ++dy)
                for (std::size_t dx = 0; dx < patch; ++dx)
                    for (std::size_t c = 0; c < C; ++c)
                        ov[row * cols + (dy * patch + dx) * C + c] =
                            iv[((gy * patch + dy) * W + (gx * patch + dx)) * C + c];
        }
    tape.record([image, out, patch, W, C, py, px, cols]() mutable {
        if (!image.needs_grad()) return;
        auto ig = image.grad();
        auto og = out.grad();
        for (std::size_t gy = 0; gy < py; ++gy)
            for (std::size_t gx = 0; gx < px; ++gx) {
                const std::size_t row = gy * px + gx;
                for (std::size_t dy = 0; dy < patch; ++dy)
                    for (std::size_t dx = 0; dx < patch; ++dx)
                        for (std::size_t c = 0; c < C; ++c)
                            ig[((gy * patch + dy) * W + (gx * patch + dx)) * C + c] +=
                                og[row * cols + (dy * patch + dx) * C + c];
            }
    });
    return out;
}

Tensor log_clamped(Tape& tape, const Tensor& x, double eps) {
    Tensor out = tape.make_output(x.shape());
    auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        const double v = std::min(std::max(xv[i], eps), 1.0 - eps);
        ov[i] = std::log(v);
    }
    tape.record([x, out, eps]() mutable {
        if (!x.needs_grad()) return;
        auto xg = x.grad();
        auto og = out.grad();
        auto xv = x.values();
        for (std::size_t i = 0; i < og.size(); ++i) {
            if (xv[i] > eps && xv[i] < 1.0 - eps) xg[i] += og[i] / xv[i];
        }
    });
    return out;
}

Tensor cosine_similarity(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) {
        throw DimensionError("cosine_similarity: sizes differ, " + shape_string(a) + " vs " +
                             shape_string(b));
    }
    auto av = a.values();
    auto bv = b.values();
    double na = 0.0, nb = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        na += av[i] * av[i];
        nb += bv[i] * bv[i];
        dot += av[i] * bv[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    Tensor out = tape.make_output({1});
    if (na < 1e-12 || nb < 1e-12) {
        std::cerr << "warning: cosine_similarity on a zero-norm vector, treating similarity as 0\n";
        out.values()[0] = 0.0;
        return out;  // constant: no gradient flows
    }
    const double cosv = dot / (na * nb);
    out.values()[0] = cosv;
    tape.record([a, b, out, na, nb, cosv]() mutable {
        const double g = out.grad()[0];
        auto av = a.values();
        auto bv = b.values();
        if (a.needs_grad()) {
            auto ag = a.grad();
            for (std::size_t i = 0; i < av.size(); ++i)
                ag[i] += g * (bv[i] / (na * nb) - cosv * av[i] / (na * na));
        }
        if (b.needs_grad()) {
            auto bg = b.grad();
            for (std::size_t i = 0; i < bv.size(); ++i)
                bg[i] += g * (av[i] / (na * nb) - cosv * bv[i] / (nb * nb));
        }
    });
    return out;
}

Tensor squared_distance_mean(Tape& tape, const Tensor& a, const Tensor& b) {
    check_same_shape("squared_distance_mean", a, b);
    auto av = a.values();
    auto bv = b.values();
    const double inv = 1.0 / static_cast<double>(av.size());
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - bv[i];
        s += d * d;
    }
    Tensor out = tape.make_output({1});
    out.values()[0] = s * inv;
    tape.record([a, b, out, inv]() mutable {
        const double g = out.grad()[0];
        auto av = a.values();
        auto bv = b.values();
        for (std::size_t i = 0; i < av.size(); ++i) {
            const double d = 2.0 * inv * (av[i] - bv[i]) * g;
            if (a.needs_grad()) a.grad()[i] += d;
            if (b.needs_grad()) b.grad()[i] -= d;
        }
    });
    return out;
}

Tensor norm_distance(Tape& tape, const Tensor& a, const Tensor& b) {
    check_same_shape("norm_distance", a, b);
    auto av = a.values();
    auto bv = b.values();
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av[i] - bv[i];
        s += d * d;
    }
    const double dist = std::sqrt(s);
    Tensor out = tape.make_output({1});
    out.values()[0] = dist;
    tape.record([a, b, out, dist]() mutable {
        if (dist < 1e-12) return;  // subgradient 0 at coincidence
        const double g = out.grad()[0] / dist;
        auto av = a.values();
        auto bv = b.values();
        for (std::size_t i = 0; i < av.size(); ++i) {
            const double d = g * (av[i] - bv[i]);
            if (a.needs_grad()) a.grad()[i] += d;
            if (b.needs_grad()) b.grad()[i] -= d;
        }
    });
    return out;
}

Tensor hinge_squared(Tape& tape, const Tensor& x, double margin) {
    if (x.size() != 1) throw DimensionError("hinge_squared: x must be scalar, got " + shape_string(x));
    const double v = std::max(0.0, margin - x.values()[0]);
    Tensor out = tape.make_output({1});
    out.values()[0] = v * v;
    tape.record([x, out, v]() mutable {
        if (!x.needs_grad()) return;
        x.grad()[0] += -2.0 * v * out.grad()[0];
    });
    return out;
}

// --- multi-head attention -----------------------------------------------------

Tensor multi_head_attention(Tape& tape, const Tensor& queries, const Tensor& keys_values,
                            const MultiHeadParams& params) {
    check_rank2("multi_head_attention", queries);
    check_rank2("multi_head_attention", keys_values);
    if (params.heads.empty()) throw ConfigError("multi_head_attention: no heads configured");
    const std::size_t d_in = queries.cols();
    if (keys_values.cols() != d_in) {
        throw DimensionError("multi_head_attention: query width " + shape_string(queries) +
                             " vs key/value width " + shape_string(keys_values));
    }
    const std::size_t h = params.heads.size();
    if (d_in % h != 0) {
        throw ConfigError("multi_head_attention: width " + std::to_string(d_in) +
                          " not divisible by " + std::to_string(h) + " heads");
    }
    const std::size_t dh = d_in / h;
    for (const AttentionHead& head : params.heads) {
        for (const Tensor* w : {&head.wq, &head.wk, &head.wv}) {
            if (w->rank() != 2 || w->rows() != d_in || w->cols() != dh) {
                throw ConfigError("multi_head_attention: head weight shape " + shape_string(*w) +
                                  ", expected [" + std::to_string(d_in) + "x" + std::to_string(dh) +
                                  "]");
            }
        }
    }
    if (params.wo.rank() != 2 || params.wo.rows() != d_in) {
        throw ConfigError("multi_head_attention: output projection shape " + shape_string(params.wo) +
                          ", expected rows " + std::to_string(d_in));
    }

    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d_in) / static_cast<double>(h));
    Tensor merged;
    for (std::size_t i = 0; i < h; ++i) {
        const AttentionHead& head = params.heads[i];
        Tensor q = matmul(tape, queries, head.wq);
        Tensor k = matmul(tape, keys_values, head.wk);
        Tensor v = matmul(tape, keys_values, head.wv);
        Tensor scores = scale(tape, matmul(tape, q, transpose(tape, k)), inv_scale);
        Tensor attended = matmul(tape, softmax_rows(tape, scores), v);
        merged = i == 0 ? attended : concat_cols(tape, merged, attended);
    }
    return matmul(tape, merged, params.wo);
}

}  // namespace vga
