#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vga/fusion.hpp"
#include "vga/gradcheck.hpp"
#include "vga/rng.hpp"

using namespace vga;

namespace {

constexpr double kLn2 = 0.6931471805599453;

Tensor rand_tensor(std::vector<std::size_t> shape, Rng& rng, bool grad = false) {
    Tensor t = Tensor::zeros(std::move(shape), grad);
    for (double& v : t.values()) v = rng.uniform(-1.0, 1.0);
    return t;
}

MultiHeadParams rand_mha(Rng& rng, std::size_t width, std::size_t heads, bool grad = false) {
    MultiHeadParams m;
    for (std::size_t i = 0; i < heads; ++i) {
        m.heads.push_back({rand_tensor({width, width / heads}, rng, grad),
                           rand_tensor({width, width / heads}, rng, grad),
                           rand_tensor({width, width / heads}, rng, grad)});
    }
    m.wo = rand_tensor({width, width}, rng, grad);
    return m;
}

ProjectionHead rand_head(Rng& rng, std::size_t d, std::size_t dp, bool grad = false) {
    ProjectionHead h;
    h.w1 = rand_tensor({d, d}, rng, grad);
    h.b1 = rand_tensor({d}, rng, grad);
    h.w2 = rand_tensor({d, dp}, rng, grad);
    h.b2 = rand_tensor({dp}, rng, grad);
    return h;
}

}  // namespace

TEST_CASE("projection head") {
    Rng rng(3);
    SUBCASE("all zeros maps to zero") {
        Tape tape;
        ProjectionHead h;
        h.w1 = Tensor::zeros({4, 4});
        h.b1 = Tensor::zeros({4});
        h.w2 = Tensor::zeros({4, 2});
        h.b2 = Tensor::zeros({2});
        Tensor out = project(tape, Tensor::vector({1, 2, 3, 4}), h);
        REQUIRE(out.shape() == std::vector<std::size_t>{2});
        for (double v : out.values()) CHECK(v == 0.0);
    }
    SUBCASE("identity weights pass a positive input through") {
        Tape tape;
        ProjectionHead h;
        h.w1 = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
        h.b1 = Tensor::zeros({3});
        h.w2 = Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
        h.b2 = Tensor::zeros({3});
        Tensor out = project(tape, Tensor::vector({0.5, 1.0, 2.0}), h);
        CHECK(out.values()[0] == 0.5);
        CHECK(out.values()[1] == 1.0);
        CHECK(out.values()[2] == 2.0);
    }
    SUBCASE("gradcheck within rel 1e-5") {
        ProjectionHead h = rand_head(rng, 5, 3, true);
        Tensor x = rand_tensor({5}, rng);
        std::vector<Parameter> params{{"w1", h.w1}, {"b1", h.b1}, {"w2", h.w2}, {"b2", h.b2}};
        Tensor weights = rand_tensor({3}, rng);
        auto run = [&](bool grads) {
            Tape tape;
            Tensor loss = sum_all(tape, mul(tape, project(tape, x, h), weights));
            if (grads) tape.backward(loss);
            return loss.value();
        };
        GradCheckReport r = grad_check([&run] { return run(false); }, [&run] { return run(true); },
                                       params, 1e-5, 1e-5);
        INFO("max rel error: ", r.max_rel_error);
        CHECK(r.passed);
    }
    SUBCASE("width mismatch") {
        Tape tape;
        ProjectionHead h = rand_head(rng, 4, 2);
        CHECK_THROWS_AS(project(tape, Tensor::vector({1, 2, 3}), h), DimensionError);
    }
}

TEST_CASE("cosine similarity properties") {
    Tape tape;
    Rng rng(5);
    SUBCASE("scale invariance") {
        for (int trial = 0; trial < 10; ++trial) {
            Tensor a = rand_tensor({6}, rng);
            Tensor b = rand_tensor({6}, rng);
            const double base = cosine_similarity(tape, a, b).value();
            Tensor a2 = Tensor::zeros({6});
            Tensor b2 = Tensor::zeros({6});
            const double sa = rng.uniform(0.1, 7.0), sb = rng.uniform(0.1, 7.0);
            for (std::size_t i = 0; i < 6; ++i) {
                a2.values()[i] = sa * a.values()[i];
                b2.values()[i] = sb * b.values()[i];
            }
            CHECK(std::abs(cosine_similarity(tape, a2, b2).value() - base) <= 1e-9);
        }
    }
}

TEST_CASE("similarity loss") {
    SUBCASE("cosine 0 gives ln 2 for either label") {
        for (int label : {0, 1}) {
            Tape tape;
            Tensor zg = Tensor::vector({1.0, 0.0});
            Tensor zv = Tensor::vector({0.0, 1.0});
            Tensor loss = similarity_loss(tape, zg, zv, label, SimMode::Cosine, 1.0);
            CHECK(loss.value() == doctest::Approx(kLn2).epsilon(1e-9));
        }
    }
    SUBCASE("monotone in the cosine: increasing for label 1, decreasing for label 0") {
        double prev1 = -1.0, prev0 = 1e9;
        for (double c = -1.0; c <= 1.0 + 1e-12; c += 0.125) {
            Tape tape;
            Tensor cosv = Tensor::scalar(c);
            const double l1 = similarity_loss_from_cosine(tape, cosv, 1).value();
            const double l0 = similarity_loss_from_cosine(tape, cosv, 0).value();
            if (c > -1.0) {
                CHECK(l1 > prev1);
                CHECK(l0 < prev0);
            }
            prev1 = l1;
            prev0 = l0;
        }
    }
    SUBCASE("off mode is a constant zero") {
        Tape tape;
        Rng rng(7);
        Tensor zg = rand_tensor({4}, rng);
        Tensor zv = rand_tensor({4}, rng);
        CHECK(similarity_loss(tape, zg, zv, 1, SimMode::Off, 1.0).value() == 0.0);
    }
    SUBCASE("euclidean mode: coincident projections give ln 2") {
        Tape tape;
        Tensor z = Tensor::vector({0.3, -0.4});
        Tensor loss = similarity_loss(tape, z, z, 0, SimMode::Euclidean, 1.0);
        CHECK(loss.value() == doctest::Approx(kLn2).epsilon(1e-9));
    }
    SUBCASE("mse mode closed forms") {
        Tape tape;
        Tensor zg = Tensor::vector({1.0, 0.0});
        Tensor zv = Tensor::vector({0.0, 1.0});
        // label 0: mean squared difference = (1 + 1)/2 = 1
        CHECK(similarity_loss(tape, zg, zv, 0, SimMode::Mse, 1.0).value() ==
              doctest::Approx(1.0).epsilon(1e-12));
        // label 1: ||diff|| = sqrt(2), scaled by 1/sqrt(2) -> 1, hinge(1 - 1)^2 = 0
        CHECK(similarity_loss(tape, zg, zv, 1, SimMode::Mse, 1.0).value() ==
              doctest::Approx(0.0).epsilon(1e-12));
        // label 1 with coincident vectors: hinge(1 - 0)^2 = 1
        CHECK(similarity_loss(tape, zg, zg, 1, SimMode::Mse, 1.0).value() ==
              doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("fusion modes") {
    Rng rng(11);
    const std::size_t d = 6;
    FusionParams params;
    params.tokens = 1;
    params.vis_values = rand_mha(rng, d, 2);
    params.graph_values = rand_mha(rng, d, 2);
    params.self_attention = rand_mha(rng, 2 * d, 2);
    params.graph_weight = Tensor::scalar(0.25);
    params.vis_weight = Tensor::scalar(-2.0);

    Tensor g = rand_tensor({1, d}, rng);
    Tensor v = rand_tensor({1, d}, rng);

    SUBCASE("concat is the exact juxtaposition, graph first") {
        Tape tape;
        params.mode = FusionMode::Concat;
        Tensor out = fuse(tape, g, v, params);
        REQUIRE(out.shape() == std::vector<std::size_t>{1, 2 * d});
        for (std::size_t j = 0; j < d; ++j) {
            CHECK(out.values()[j] == g.values()[j]);
            CHECK(out.values()[d + j] == v.values()[j]);
        }
    }
    SUBCASE("weighted applies the learned scalars") {
        Tape tape;
        params.mode = FusionMode::Weighted;
        Tensor out = fuse(tape, g, v, params);
        for (std::size_t j = 0; j < d; ++j) {
            CHECK(out.values()[j] == doctest::Approx(0.25 * g.values()[j]).epsilon(1e-15));
            CHECK(out.values()[d + j] == doctest::Approx(-2.0 * v.values()[j]).epsilon(1e-15));
        }
    }
    SUBCASE("single-token co-attention closed form") {
        Tape tape;
        params.mode = FusionMode::CoAttention;
        Tensor out = fuse(tape, g, v, params);
        REQUIRE(out.shape() == std::vector<std::size_t>{1, 2 * d});
        auto closed = [d](const Tensor& value_src, const MultiHeadParams& m) {
            const std::size_t h = m.heads.size(), dh = d / h;
            std::vector<double> merged(d, 0.0);
            for (std::size_t head = 0; head < h; ++head)
                for (std::size_t j = 0; j < dh; ++j) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < d; ++k)
                        s += value_src.values()[k] * m.heads[head].wv.at(k, j);
                    merged[head * dh + j] = s;
                }
            std::vector<double> out_row(d, 0.0);
            for (std::size_t j = 0; j < d; ++j)
                for (std::size_t k = 0; k < d; ++k) out_row[j] += merged[k] * m.wo.at(k, j);
            return out_row;
        };
        const auto slot_a = closed(v, params.vis_values);    // values from the visual side
        const auto slot_b = closed(g, params.graph_values);  // values from the graph side
        for (std::size_t j = 0; j < d; ++j) {
            CHECK(out.values()[j] == doctest::Approx(slot_a[j]).epsilon(1e-12));
            CHECK(out.values()[d + j] == doctest::Approx(slot_b[j]).epsilon(1e-12));
        }
    }
    SUBCASE("every mode yields width 2d") {
        for (FusionMode mode : {FusionMode::CoAttention, FusionMode::Concat, FusionMode::Weighted,
                                FusionMode::SelfAttention}) {
            Tape tape;
            params.mode = mode;
            Tensor out = fuse(tape, g, v, params);
            CHECK(out.shape() == std::vector<std::size_t>{1, 2 * d});
        }
    }
    SUBCASE("width mismatch") {
        Tape tape;
        params.mode = FusionMode::Concat;
        Tensor narrow = rand_tensor({1, d - 1}, rng);
        CHECK_THROWS_AS(fuse(tape, g, narrow, params), DimensionError);
    }
}

TEST_CASE("classifier") {
    SUBCASE("zero weights: maximal uncertainty") {
        Tape tape;
        Classifier c;
        c.w = Tensor::zeros({4, 2});
        c.b = Tensor::zeros({2});
        Classification out = classify(tape, Tensor::vector({1, 2, 3, 4}), c);
        CHECK(out.probabilities.values()[0] == 0.5);
        CHECK(out.probabilities.values()[1] == 0.5);
        CHECK(out.y_hat.value() == 0.5);
    }
    SUBCASE("logits [0, ln 3] give y_hat 0.75") {
        Tape tape;
        Classifier c;
        c.w = Tensor::zeros({2, 2});
        c.b = Tensor::vector({0.0, std::log(3.0)});
        Classification out = classify(tape, Tensor::vector({0, 0}), c);
        CHECK(out.y_hat.value() == doctest::Approx(0.75).epsilon(1e-12));
    }
    SUBCASE("probabilities sum to one; argmax invariant to a common logit shift") {
        Rng rng(13);
        Classifier c;
        c.w = rand_tensor({4, 2}, rng);
        c.b = Tensor::vector({0.2, -0.1});
        Tensor x = rand_tensor({4}, rng);
        Tape tape;
        Classification out = classify(tape, x, c);
        CHECK(out.probabilities.values()[0] + out.probabilities.values()[1] ==
              doctest::Approx(1.0).epsilon(1e-9));
        const bool argmax1 = out.probabilities.values()[1] > out.probabilities.values()[0];

        Classifier shifted = c;
        shifted.b = Tensor::vector({0.2 + 5.0, -0.1 + 5.0});
        Tape tape2;
        Classification out2 = classify(tape2, x, shifted);
        const bool argmax2 = out2.probabilities.values()[1] > out2.probabilities.values()[0];
        CHECK(argmax1 == argmax2);
    }
}

TEST_CASE("classification loss") {
    SUBCASE("y_hat 0.5 gives ln 2 for either label") {
        for (int label : {0, 1}) {
            Tape tape;
            Tensor y_hat = Tensor::scalar(0.5);
            CHECK(classification_loss(tape, y_hat, label).value() ==
                  doctest::Approx(kLn2).epsilon(1e-9));
        }
    }
    SUBCASE("label 1, y_hat 0.75") {
        Tape tape;
        CHECK(classification_loss(tape, Tensor::scalar(0.75), 1).value() ==
              doctest::Approx(0.2876820724517809).epsilon(1e-12));
    }
    SUBCASE("label 1: loss decreases monotonically to 0 as y_hat -> 1") {
        double prev = 1e9;
        for (double p = 0.5; p < 0.9999; p += 0.05) {
            Tape tape;
            const double l = classification_loss(tape, Tensor::scalar(p), 1).value();
            CHECK(l < prev);
            prev = l;
        }
        Tape tape;
        CHECK(classification_loss(tape, Tensor::scalar(1.0 - 1e-9), 1).value() <= 1e-6);
    }
}

TEST_CASE("joint loss") {
    Tape tape;
    Tensor cls = Tensor::scalar(1.0);
    Tensor sim = Tensor::scalar(0.5);
    CHECK(joint_loss(tape, cls, sim, 1.0).value() == 1.0);
    CHECK(joint_loss(tape, cls, sim, 0.0).value() == 0.5);
    CHECK(joint_loss(tape, cls, sim, 0.5).value() == 0.75);
    CHECK_THROWS_AS(joint_loss(tape, cls, sim, 1.5), ConfigError);
    CHECK_THROWS_AS(joint_loss(tape, cls, sim, -0.1), ConfigError);
}

TEST_CASE("end-to-end gradchecks through the fusion module") {
    Rng rng(17);
    SUBCASE("project -> cosine -> similarity loss at rel 1e-4") {
        const std::size_t d = 6, dp = 3;
        ProjectionHead hg = rand_head(rng, d, dp, true);
        ProjectionHead hv = rand_head(rng, d, dp, true);
        Tensor g = rand_tensor({d}, rng);
        Tensor v = rand_tensor({d}, rng);
        std::vector<Parameter> params{{"g.w1", hg.w1}, {"g.b1", hg.b1}, {"g.w2", hg.w2},
                                      {"g.b2", hg.b2}, {"v.w1", hv.w1}, {"v.b1", hv.b1},
                                      {"v.w2", hv.w2}, {"v.b2", hv.b2}};
        auto run = [&](bool grads) {
            Tape tape;
            Tensor zg = project(tape, g, hg);
            Tensor zv = project(tape, v, hv);
            Tensor loss = similarity_loss(tape, zg, zv, 1, SimMode::Cosine, 1.0);
            if (grads) tape.backward(loss);
            return loss.value();
        };
        GradCheckReport r = grad_check([&run] { return run(false); }, [&run] { return run(true); },
                                       params, 1e-5, 1e-4);
        INFO("max rel error: ", r.max_rel_error);
        CHECK(r.passed);
    }
    SUBCASE("fuse -> classify -> classification loss at rel 1e-4") {
        const std::size_t d = 8;
        FusionParams fp;
        fp.mode = FusionMode::CoAttention;
        fp.tokens = 1;
        fp.vis_values = rand_mha(rng, d, 2, true);
        fp.graph_values = rand_mha(rng, d, 2, true);
        Classifier cls;
        cls.w = rand_tensor({2 * d, 2}, rng, true);
        cls.b = rand_tensor({2}, rng, true);
        Tensor g = rand_tensor({1, d}, rng);
        Tensor v = rand_tensor({1, d}, rng);
        std::vector<Parameter> params;
        auto push_mha = [&params](const std::string& tag, MultiHeadParams& m) {
            for (std::size_t i = 0; i < m.heads.size(); ++i) {
                params.push_back({tag + ".q" + std::to_string(i), m.heads[i].wq});
                params.push_back({tag + ".k" + std::to_string(i), m.heads[i].wk});
                params.push_back({tag + ".v" + std::to_string(i), m.heads[i].wv});
            }
            params.push_back({tag + ".o", m.wo});
        };
        push_mha("a", fp.vis_values);
        push_mha("b", fp.graph_values);
        params.push_back({"cls.w", cls.w});
        params.push_back({"cls.b", cls.b});
        auto run = [&](bool grads) {
            Tape tape;
            Tensor fused = fuse(tape, g, v, fp);
            Classification out = classify(tape, fused, cls);
            Tensor loss = classification_loss(tape, out.y_hat, 1);
            if (grads) tape.backward(loss);
            return loss.value();
        };
        GradCheckReport r = grad_check([&run] { return run(false); }, [&run] { return run(true); },
                                       params, 1e-5, 1e-4);
        INFO("max rel error: ", r.max_rel_error);
        CHECK(r.passed);
    }
}
