#include "vga/gradcheck.hpp"

#include <cmath>

#include "vga/rng.hpp"

namespace vga {

GradCheckReport grad_check(const std::function<double()>& value,
                           const std::function<double()>& compute_with_grads,
                           std::span<Parameter> params, double h, double tol) {
    GradCheckReport report;
    report.tol = tol;

    for (Parameter& p : params) p.tensor.zero_grad();
    const double base = compute_with_grads();
    if (!std::isfinite(base)) {
        report.finite = false;
        return report;
    }

    // Snapshot analytic gradients before perturbing anything.
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const Parameter& p : params) {
        analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
    }

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto vals = params[pi].tensor.values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double keep = vals[i];
            vals[i] = keep + h;
            const double up = value();
            vals[i] = keep - h;
            const double down = value();
            vals[i] = keep;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                report.finite = false;
                report.worst_parameter = params[pi].name;
                report.worst_index = i;
                return report;
            }
            const double numeric = (up - down) / (2.0 * h);
            const double a = analytic[pi][i];
            const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_parameter = params[pi].name;
                report.worst_index = i;
            }
        }
    }
    report.passed = report.finite && report.max_rel_error <= tol;
    return report;
}

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, bool requires_grad = true,
                     double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

/// Avoid the leaky-relu kink: keep magnitudes away from the non-smooth point
/// so central differences stay valid.
void nudge_off_zero(Tensor& t, double margin = 0.05) {
    for (double& v : t.values()) {
        if (std::abs(v) < margin) v = v < 0.0 ? v - margin : v + margin;
    }
}

struct OpCase {
    std::string name;
    double tol = 1e-6;
    std::vector<Parameter> params;
    // Rebuilds the scalar loss from the current parameter values.
    std::function<Tensor(Tape&, std::vector<Parameter>&)> fwd;
};

OpCheckResult check_case(OpCase& c, double h) {
    auto run = [&c](bool with_grads) {
        Tape tape;
        Tensor loss = c.fwd(tape, c.params);
        if (with_grads) tape.backward(loss);
        return loss.value();
    };
    OpCheckResult res;
    res.op = c.name;
    res.tol = c.tol;
    res.report = grad_check([&run] { return run(false); }, [&run] { return run(true); },
                            c.params, h, c.tol);
    return res;
}

}  // namespace

std::vector<OpCheckResult> run_op_gradchecks(std::uint64_t seed) {
    constexpr double kLinearTol = 1e-6;
    constexpr double kNonlinearTol = 1e-4;
    Rng rng(hash_combine(seed, hash_str("op-gradcheck")));
    std::vector<OpCase> cases;

    // Fixed random weighting reduces any op output to a scalar so that every
    // output entry influences the loss. The weight tensor is frozen per case.
    auto weighted = [&rng](std::vector<std::size_t> out_shape,
                           std::function<Tensor(Tape&, std::vector<Parameter>&)> op) {
        Tensor w = random_tensor(std::move(out_shape), rng, /*requires_grad=*/false);
        return [w, op = std::move(op)](Tape& t, std::vector<Parameter>& p) {
            return sum_all(t, mul(t, op(t, p), w));
        };
    };

    {
        OpCase c;
        c.name = "matmul";
        c.tol = kLinearTol;
        c.params = {{"a", random_tensor({3, 4}, rng)}, {"b", random_tensor({4, 2}, rng)}};
        c.fwd = weighted({3, 2}, [](Tape& t, std::vector<Parameter>& p) {
            return matmul(t, p[0].tensor, p[1].tensor);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "affine";
        c.tol = kLinearTol;
        c.params = {{"x", random_tensor({2, 3}, rng)},
                    {"w", random_tensor({3, 2}, rng)},
                    {"b", random_tensor({2}, rng)}};
        c.fwd = weighted({2, 2}, [](Tape& t, std::vector<Parameter>& p) {
            return affine(t, p[0].tensor, p[1].tensor, p[2].tensor);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "leaky_relu";
        c.tol = kNonlinearTol;
        Tensor x = random_tensor({3, 3}, rng);
        nudge_off_zero(x);
        c.params = {{"x", x}};
        c.fwd = weighted({3, 3}, [](Tape& t, std::vector<Parameter>& p) {
            return leaky_relu(t, p[0].tensor, 0.01);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "sigmoid";
        c.tol = kNonlinearTol;
        c.params = {{"x", random_tensor({2, 4}, rng, true, -2.0, 2.0)}};
        c.fwd = weighted({2, 4}, [](Tape& t, std::vector<Parameter>& p) {
            return sigmoid(t, p[0].tensor);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "softmax_rows";
        c.tol = kNonlinearTol;
        c.params = {{"x", random_tensor({3, 4}, rng, true, -2.0, 2.0)}};
        c.fwd = weighted({3, 4}, [](Tape& t, std::vector<Parameter>& p) {
            return softmax_rows(t, p[0].tensor);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "concat_cols";
        c.tol = kLinearTol;
        c.params = {{"a", random_tensor({3, 2}, rng)}, {"b", random_tensor({3, 3}, rng)}};
        c.fwd = weighted({3, 5}, [](Tape& t, std::vector<Parameter>& p) {
            return concat_cols(t, p[0].tensor, p[1].tensor);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "mean_rows";
        c.tol = kLinearTol;
        c.params = {{"x", random_tensor({4, 3}, rng)}};
        c.fwd = weighted({3}, [](Tape& t, std::vector<Parameter>& p) {
            return mean_rows(t, p[0].tensor);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "conv2d_valid";
        c.tol = kLinearTol;
        Tensor kernels = random_tensor({2, 5, 5, 3}, rng, /*requires_grad=*/false);
        c.params = {{"image", random_tensor({7, 6, 3}, rng)}};
        c.fwd = weighted({3, 2, 2}, [kernels](Tape& t, std::vector<Parameter>& p) {
            return conv2d_valid(t, p[0].tensor, kernels);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "add";
        c.tol = kLinearTol;
        c.params = {{"a", random_tensor({2, 5}, rng)}, {"b", random_tensor({2, 5}, rng)}};
        c.fwd = weighted({2, 5}, [](Tape& t, std::vector<Parameter>& p) {
            return add(t, p[0].tensor, p[1].tensor);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "sub";
        c.tol = kLinearTol;
        c.params = {{"a", random_tensor({2, 5}, rng)}, {"b", random_tensor({2, 5}, rng)}};
        c.fwd = weighted({2, 5}, [](Tape& t, std::vector<Parameter>& p) {
            return sub(t, p[0].tensor, p[1].tensor);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "mul";
        c.tol = kLinearTol;
        c.params = {{"a", random_tensor({3, 3}, rng)}, {"b", random_tensor({3, 3}, rng)}};
        c.fwd = weighted({3, 3}, [](Tape& t, std::vector<Parameter>& p) {
            return mul(t, p[0].tensor, p[1].tensor);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "scale";
        c.tol = kLinearTol;
        c.params = {{"x", random_tensor({2, 3}, rng)}};
        c.fwd = weighted({2, 3}, [](Tape& t, std::vector<Parameter>& p) {
            return scale(t, p[0].tensor, -1.7);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "add_scalar";
        c.tol = kLinearTol;
        c.params = {{"x", random_tensor({2, 3}, rng)}};
        c.fwd = weighted({2, 3}, [](Tape& t, std::vector<Parameter>& p) {
            return add_scalar(t, p[0].tensor, 0.37);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "scale_by";
        c.tol = kLinearTol;
        c.params = {{"x", random_tensor({2, 3}, rng)}, {"s", random_tensor({1}, rng)}};
        c.fwd = weighted({2, 3}, [](Tape& t, std::vector<Parameter>& p) {
            return scale_by(t, p[0].tensor, p[1].tensor);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "transpose";
        c.tol = kLinearTol;
        c.params = {{"x", random_tensor({3, 4}, rng)}};
        c.fwd = weighted({4, 3}, [](Tape& t, std::vector<Parameter>& p) {
            return transpose(t, p[0].tensor);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "reshape";
        c.tol = kLinearTol;
        c.params = {{"x", random_tensor({2, 6}, rng)}};
        c.fwd = weighted({3, 4}, [](Tape& t, std::vector<Parameter>& p) {
            return reshape(t, p[0].tensor, {3, 4});
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "sum_all";
        c.tol = kLinearTol;
        c.params = {{"x", random_tensor({3, 3}, rng)}};
        c.fwd = [](Tape& t, std::vector<Parameter>& p) { return sum_all(t, p[0].tensor); };
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "select";
        c.tol = kLinearTol;
        c.params = {{"x", random_tensor({2, 4}, rng)}};
        c.fwd = [](Tape& t, std::vector<Parameter>& p) { return select(t, p[0].tensor, 5); };
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "repeat_row";
        c.tol = kLinearTol;
        c.params = {{"x", random_tensor({4, 3}, rng)}};
        c.fwd = weighted({4, 3}, [](Tape& t, std::vector<Parameter>& p) {
            return repeat_row(t, p[0].tensor, 0);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "scale_rows";
        c.tol = kLinearTol;
        std::vector<double> factors{0.0, 1.0, -0.5, 2.0};
        c.params = {{"x", random_tensor({4, 3}, rng)}};
        c.fwd = weighted({4, 3}, [factors](Tape& t, std::vector<Parameter>& p) {
            return scale_rows(t, p[0].tensor, factors);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "extract_patches";
        c.tol = kLinearTol;
        c.params = {{"image", random_tensor({6, 9, 2}, rng)}};
        c.fwd = weighted({6, 18}, [](Tape& t, std::vector<Parameter>& p) {
            return extract_patches(t, p[0].tensor, 3);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "log_clamped";
        c.tol = kNonlinearTol;
        c.params = {{"x", random_tensor({2, 3}, rng, true, 0.1, 0.9)}};  // clamp interior
        c.fwd = weighted({2, 3}, [](Tape& t, std::vector<Parameter>& p) {
            return log_clamped(t, p[0].tensor);
        });
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "cosine_similarity";
        c.tol = kNonlinearTol;
        c.params = {{"a", random_tensor({5}, rng, true, 0.2, 1.0)},
                    {"b", random_tensor({5}, rng, true, -1.0, -0.2)}};
        c.fwd = [](Tape& t, std::vector<Parameter>& p) {
            return cosine_similarity(t, p[0].tensor, p[1].tensor);
        };
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "squared_distance_mean";
        c.tol = kLinearTol;
        c.params = {{"a", random_tensor({6}, rng)}, {"b", random_tensor({6}, rng)}};
        c.fwd = [](Tape& t, std::vector<Parameter>& p) {
            return squared_distance_mean(t, p[0].tensor, p[1].tensor);
        };
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "norm_distance";
        c.tol = kNonlinearTol;
        c.params = {{"a", random_tensor({6}, rng, true, 0.5, 1.5)},
                    {"b", random_tensor({6}, rng, true, -1.5, -0.5)}};
        c.fwd = [](Tape& t, std::vector<Parameter>& p) {
            return norm_distance(t, p[0].tensor, p[1].tensor);
        };
        cases.push_back(std::move(c));
    }
    {
        OpCase c;
        c.name = "hinge_squared";
        c.tol = kNonlinearTol;
        c.params = {{"x", Tensor::scalar(0.4, true)}};  // margin-x stays off the kink
        c.fwd = [](Tape& t, std::vector<Parameter>& p) {
            return hinge_squared(t, p[0].tensor, 1.0);
        };
        cases.push_back(std::move(c));
    }
    {
        // full attention block: 3×8 inputs, 2 heads
        const std::size_t d_in = 8, h = 2, dh = d_in / h;
        OpCase c;
        c.name = "multi_head_attention";
        c.tol = kNonlinearTol;
        c.params.push_back({"q_in", random_tensor({3, d_in}, rng)});
        c.params.push_back({"kv_in", random_tensor({3, d_in}, rng)});
        MultiHeadParams mha;
        for (std::size_t i = 0; i < h; ++i) {
            AttentionHead head{random_tensor({d_in, dh}, rng), random_tensor({d_in, dh}, rng),
                               random_tensor({d_in, dh}, rng)};
            c.params.push_back({"wq" + std::to_string(i), head.wq});
            c.params.push_back({"wk" + std::to_string(i), head.wk});
            c.params.push_back({"wv" + std::to_string(i), head.wv});
            mha.heads.push_back(head);
        }
        mha.wo = random_tensor({d_in, d_in}, rng);
        c.params.push_back({"wo", mha.wo});
        c.fwd = weighted({3, d_in}, [mha](Tape& t, std::vector<Parameter>& p) {
            return multi_head_attention(t, p[0].tensor, p[1].tensor, mha);
        });
        cases.push_back(std::move(c));
    }

    std::vector<OpCheckResult> results;
    results.reserve(cases.size());
    for (OpCase& c : cases) results.push_back(check_case(c, 1e-5));
    return results;
}

}  // namespace vga
