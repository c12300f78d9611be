#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "testutil.hpp"
#include "vga/data.hpp"
#include "vga/rng.hpp"

using namespace vga;

namespace {

Claim make_claim(std::string id, int label, std::size_t nodes, std::size_t dim, Rng& rng) {
    Claim c;
    c.id = std::move(id);
    c.label = label;
    std::vector<double> emb(nodes * dim);
    for (double& v : emb) v = rng.uniform(-1.0, 1.0);
    c.node_embeddings = Tensor::matrix(nodes, dim, std::move(emb));
    for (std::size_t i = 1; i < nodes; ++i) c.edges.emplace_back(rng.uniform_index(i), i);
    return c;
}

bool tensors_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.values()[i] != b.values()[i]) return false;
    }
    return true;
}

std::vector<std::pair<std::size_t, std::size_t>> random_tree(std::size_t nodes, Rng& rng) {
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 1; i < nodes; ++i) edges.emplace_back(rng.uniform_index(i), i);
    return edges;
}

}  // namespace

TEST_CASE("normalized adjacency: single node") {
    Tensor a = normalized_adjacency({}, 1);
    CHECK(a.shape() == std::vector<std::size_t>{1, 1});
    CHECK(a.values()[0] == 1.0);
}

TEST_CASE("normalized adjacency: hand-derived 3-node path") {
    Tensor a = normalized_adjacency({{0, 1}, {1, 2}}, 3);
    const double inv_sqrt6 = 1.0 / std::sqrt(6.0);  // 0.4082482904638631
    CHECK(a.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(a.at(0, 1) == doctest::Approx(inv_sqrt6).epsilon(1e-12));
    CHECK(a.at(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(a.at(0, 2) == 0.0);
    CHECK(a.at(2, 2) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(a.at(1, 0) == a.at(0, 1));
}

TEST_CASE("normalized adjacency: star and random trees") {
    SUBCASE("star with 3 leaves: symmetric, finite, eigenvalues in [-1,1]") {
        Tensor a = normalized_adjacency({{0, 1}, {0, 2}, {0, 3}}, 4);
        for (double v : a.values()) CHECK(std::isfinite(v));
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) CHECK(a.at(i, j) == a.at(j, i));
        auto eig = testutil::jacobi_eigenvalues(
            {a.values().begin(), a.values().end()}, 4);
        for (double l : eig) {
            CHECK(l <= 1.0 + 1e-9);
            CHECK(l >= -1.0 - 1e-9);
        }
    }
    SUBCASE("random trees: exact symmetry, nonneg entries, degree+1 nonzeros per row") {
        Rng rng(99);
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t n = 2 + rng.uniform_index(20);
            auto edges = random_tree(n, rng);
            Tensor a = normalized_adjacency(edges, n);
            std::vector<std::size_t> degree(n, 0);
            for (auto [p, c] : edges) {
                degree[p]++;
                degree[c]++;
            }
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t nonzeros = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    CHECK(a.at(i, j) == a.at(j, i));  // max |A - A^T| = 0
                    CHECK(a.at(i, j) >= 0.0);
                    if (a.at(i, j) != 0.0) ++nonzeros;
                }
                CHECK(nonzeros == degree[i] + 1);
            }
        }
    }
    SUBCASE("isolated non-root node") {
        CHECK_THROWS_AS(normalized_adjacency({{0, 1}}, 3), StructureError);
    }
}

TEST_CASE("supplement_root") {
    std::vector<double> root{2.0, 0.0};
    SUBCASE("absent OCR is the identity") {
        auto out = supplement_root(root, std::nullopt);
        CHECK(out == root);
    }
    SUBCASE("mean of the two vectors") {
        auto out = supplement_root(root, std::vector<double>{0.0, 2.0});
        CHECK(out[0] == 1.0);
        CHECK(out[1] == 1.0);
    }
    SUBCASE("idempotent when equal") {
        auto out = supplement_root(root, std::vector<double>{2.0, 0.0});
        CHECK(out == root);
    }
    SUBCASE("dimension mismatch") {
        CHECK_THROWS_AS(supplement_root(root, std::vector<double>{1.0}), DimensionError);
    }
}

TEST_CASE("claim validation") {
    Rng rng(7);
    SUBCASE("duplicate parent") {
        Claim c = make_claim("c", 0, 3, 4, rng);
        c.edges = {{0, 2}, {1, 2}};
        CHECK_THROWS_AS(validate_claim(c), StructureError);
    }
    SUBCASE("cycle without root attachment") {
        Claim c = make_claim("c", 0, 3, 4, rng);
        c.edges = {{1, 2}, {2, 1}};
        CHECK_THROWS_AS(validate_claim(c), StructureError);
    }
    SUBCASE("bad label") {
        Claim c = make_claim("c", 0, 2, 4, rng);
        c.label = 2;
        CHECK_THROWS_AS(validate_claim(c), StructureError);
    }
    SUBCASE("ocr dimension") {
        Claim c = make_claim("c", 0, 2, 4, rng);
        c.ocr = Tensor::vector({1.0, 2.0});
        CHECK_THROWS_AS(validate_claim(c), DimensionError);
    }
}

TEST_CASE("fold plans") {
    Rng rng(13);
    Dataset ds;
    for (int i = 0; i < 10; ++i) ds.claims.push_back(make_claim("c" + std::to_string(i), i % 2, 3, 4, rng));

    SUBCASE("10 claims, 5 folds: disjoint size-2 folds covering everything") {
        FoldPlan plan = make_folds(ds, 5, 42);
        std::set<std::size_t> seen;
        for (const auto& f : plan.folds) {
            CHECK(f.test.size() == 2);
            for (std::size_t i : f.test) CHECK(seen.insert(i).second);
        }
        CHECK(seen.size() == 10);
    }
    SUBCASE("same seed, same plan") {
        FoldPlan a = make_folds(ds, 5, 42);
        FoldPlan b = make_folds(ds, 5, 42);
        CHECK(a.fold_of == b.fold_of);
        for (std::size_t f = 0; f < 5; ++f) {
            CHECK(a.folds[f].train == b.folds[f].train);
            CHECK(a.folds[f].validation == b.folds[f].validation);
            CHECK(a.folds[f].test == b.folds[f].test);
        }
    }
    SUBCASE("remainder distribution for 11 claims") {
        ds.claims.push_back(make_claim("c10", 0, 3, 4, rng));
        FoldPlan plan = make_folds(ds, 5, 1);
        std::multiset<std::size_t> sizes;
        for (const auto& f : plan.folds) sizes.insert(f.test.size());
        CHECK(sizes == std::multiset<std::size_t>{2, 2, 2, 2, 3});
    }
    SUBCASE("8:2 split within each complement (count within ±1)") {
        FoldPlan plan = make_folds(ds, 5, 42);
        for (const auto& f : plan.folds) {
            const double m = static_cast<double>(f.train.size() + f.validation.size());
            CHECK(std::abs(static_cast<double>(f.validation.size()) - 0.2 * m) <= 1.0);
            // train/validation/test partition the dataset
            std::set<std::size_t> all(f.train.begin(), f.train.end());
            for (std::size_t i : f.validation) CHECK(all.insert(i).second);
            for (std::size_t i : f.test) CHECK(all.insert(i).second);
            CHECK(all.size() == 10);
        }
    }
    SUBCASE("too many folds") {
        CHECK_THROWS_AS(make_folds(ds, 11, 0), ConfigError);
    }
}

TEST_CASE("synthetic generator") {
    SUBCASE("seeded determinism") {
        SynthConfig cfg;
        cfg.claims = 6;
        cfg.image_size = 8;
        Dataset a = synth_generate(cfg, 77);
        Dataset b = synth_generate(cfg, 77);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a.claims[i].id == b.claims[i].id);
            CHECK(a.claims[i].label == b.claims[i].label);
            CHECK(tensors_equal(a.claims[i].node_embeddings, b.claims[i].node_embeddings));
            CHECK(a.claims[i].edges == b.claims[i].edges);
            REQUIRE(a.claims[i].image.has_value());
            CHECK(tensors_equal(*a.claims[i].image, *b.claims[i].image));
        }
    }
    SUBCASE("fixed tree size") {
        SynthConfig cfg;
        cfg.claims = 5;
        cfg.min_nodes = 3;
        cfg.max_nodes = 3;
        cfg.image_size = 8;
        Dataset ds = synth_generate(cfg, 3);
        for (const Claim& c : ds.claims) CHECK(c.node_count() == 3);
    }
    SUBCASE("zero claims is a configuration error") {
        SynthConfig cfg;
        cfg.claims = 0;
        CHECK_THROWS_AS(synth_generate(cfg, 1), ConfigError);
    }
    SUBCASE("precomputed visual embeddings when image size is 0") {
        SynthConfig cfg;
        cfg.claims = 3;
        cfg.image_size = 0;
        cfg.visual_dim = 5;
        Dataset ds = synth_generate(cfg, 4);
        for (const Claim& c : ds.claims) {
            CHECK_FALSE(c.image.has_value());
            REQUIRE(c.visual_embedding.has_value());
            CHECK(c.visual_embedding->size() == 5);
        }
    }
}

TEST_CASE("VGT1 tensor container") {
    testutil::TempDir tmp("vgt");
    SUBCASE("round trip is bitwise") {
        Tensor t = Tensor::matrix(2, 3, {1.0, -2.5, 0.125, 3.0, 4.5, -0.75});
        const auto p1 = tmp.path() / "a.vgt";
        const auto p2 = tmp.path() / "b.vgt";
        save_tensor(p1, t);
        Tensor back = load_tensor(p1);
        CHECK(tensors_equal(t, back));
        save_tensor(p2, back);
        CHECK(testutil::read_file_bytes(p1) == testutil::read_file_bytes(p2));
    }
    SUBCASE("rank-3 image tensor") {
        Rng rng(5);
        Tensor t = Tensor::zeros({4, 5, 3});
        for (double& v : t.values()) v = static_cast<double>(static_cast<float>(rng.uniform()));
        const auto p = tmp.path() / "img.vgt";
        save_tensor(p, t);
        CHECK(tensors_equal(t, load_tensor(p)));
    }
    SUBCASE("wrong magic") {
        const auto p = tmp.path() / "bad.vgt";
        testutil::write_file_bytes(p, "NOPE\x01\x00\x00\x00");
        CHECK_THROWS_AS(load_tensor(p), FormatError);
    }
    SUBCASE("truncated data") {
        Tensor t = Tensor::matrix(2, 2, {1, 2, 3, 4});
        const auto p = tmp.path() / "trunc.vgt";
        save_tensor(p, t);
        auto bytes = testutil::read_file_bytes(p);
        bytes.resize(bytes.size() - 3);
        std::ofstream os(p, std::ios::binary);
        os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
        os.close();
        CHECK_THROWS_AS(load_tensor(p), FormatError);
    }
}

TEST_CASE("PPM decoding") {
    testutil::TempDir tmp("ppm");
    SUBCASE("1x1 white pixel") {
        const auto p = tmp.path() / "white.ppm";
        testutil::write_file_bytes(p, std::string("P6\n1 1\n255\n") + "\xff\xff\xff");
        Tensor t = load_ppm(p);
        CHECK(t.shape() == std::vector<std::size_t>{1, 1, 3});
        for (double v : t.values()) CHECK(v == 1.0);
    }
    SUBCASE("2x2 black image") {
        const auto p = tmp.path() / "black.ppm";
        testutil::write_file_bytes(p, std::string("P6\n2 2\n255\n") + std::string(12, '\0'));
        Tensor t = load_ppm(p);
        CHECK(t.shape() == std::vector<std::size_t>{2, 2, 3});
        for (double v : t.values()) CHECK(v == 0.0);
    }
    SUBCASE("header comments") {
        const auto p = tmp.path() / "comment.ppm";
        testutil::write_file_bytes(
            p, std::string("P6\n# a comment\n1 # inline\n1\n# again\n255\n") + "\x80\x40\x20");
        Tensor t = load_ppm(p);
        CHECK(t.shape() == std::vector<std::size_t>{1, 1, 3});
        CHECK(t.values()[0] == doctest::Approx(128.0 / 255.0));
    }
    SUBCASE("wrong maxval") {
        const auto p = tmp.path() / "maxval.ppm";
        testutil::write_file_bytes(p, std::string("P6\n1 1\n65535\n") + "\xff\xff\xff\xff\xff\xff");
        CHECK_THROWS_AS(load_ppm(p), FormatError);
    }
    SUBCASE("not P6") {
        const auto p = tmp.path() / "p3.ppm";
        testutil::write_file_bytes(p, "P3\n1 1\n255\n255 255 255\n");
        CHECK_THROWS_AS(load_ppm(p), FormatError);
    }
}

TEST_CASE("claims files") {
    testutil::TempDir tmp("claims");
    SUBCASE("fixture round trip: bitwise embeddings, stable bytes") {
        Rng rng(31);
        Dataset ds;
        ds.claims.push_back(make_claim("first", 0, 3, 4, rng));
        ds.claims.push_back(make_claim("second", 1, 2, 4, rng));
        ds.claims[0].ocr = Tensor::vector({0.25, -0.5, 0.75, 1.0});
        const auto p1 = tmp.path() / "claims.jsonl";
        save_dataset(ds, p1);
        Dataset back = load_dataset(p1);
        REQUIRE(back.size() == 2);
        for (std::size_t i = 0; i < 2; ++i) {
            CHECK(back.claims[i].id == ds.claims[i].id);
            CHECK(back.claims[i].label == ds.claims[i].label);
            CHECK(tensors_equal(back.claims[i].node_embeddings, ds.claims[i].node_embeddings));
            CHECK(back.claims[i].edges == ds.claims[i].edges);
        }
        CHECK(tensors_equal(*back.claims[0].ocr, *ds.claims[0].ocr));
        const auto p2 = tmp.path() / "again.jsonl";
        save_dataset(back, p2);
        CHECK(testutil::read_file_bytes(p1) == testutil::read_file_bytes(p2));
    }
    SUBCASE("synthetic dataset with images survives save/load field-for-field") {
        SynthConfig cfg;
        cfg.claims = 4;
        cfg.image_size = 8;
        Dataset ds = synth_generate(cfg, 11);
        const auto p = tmp.path() / "synth.jsonl";
        save_dataset(ds, p);
        Dataset back = load_dataset(p);
        REQUIRE(back.size() == ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) {
            CHECK(tensors_equal(back.claims[i].node_embeddings, ds.claims[i].node_embeddings));
            CHECK(tensors_equal(*back.claims[i].image, *ds.claims[i].image));
            CHECK(tensors_equal(*back.claims[i].ocr, *ds.claims[i].ocr));
        }
    }
    SUBCASE("malformed record carries the line number") {
        const auto p = tmp.path() / "bad.jsonl";
        testutil::write_file_bytes(p, "{\"id\": \"a\", \"label\": 0, \"embeddings\": {\"rows\": 1, \"dim\": 2, \"data\": [0, 0]}, \"edges\": []}\nnot json\n");
        try {
            load_dataset(p);
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find(":2") != std::string::npos);
        }
    }
    SUBCASE("duplicated parent is a structure error") {
        const auto p = tmp.path() / "dup.jsonl";
        testutil::write_file_bytes(
            p,
            "{\"id\": \"a\", \"label\": 0, \"embeddings\": {\"rows\": 3, \"dim\": 2, \"data\": "
            "[0,0,0,0,0,0]}, \"edges\": [[0,2],[1,2]]}\n");
        CHECK_THROWS_AS(load_dataset(p), StructureError);
    }
    SUBCASE("mixed embedding dims across claims") {
        const auto p = tmp.path() / "mixed.jsonl";
        testutil::write_file_bytes(
            p,
            "{\"id\": \"a\", \"label\": 0, \"embeddings\": {\"rows\": 1, \"dim\": 2, \"data\": "
            "[0,0]}, \"edges\": []}\n"
            "{\"id\": \"b\", \"label\": 1, \"embeddings\": {\"rows\": 1, \"dim\": 3, \"data\": "
            "[0,0,0]}, \"edges\": []}\n");
        CHECK_THROWS_AS(load_dataset(p), DimensionError);
    }
    SUBCASE("inline data length mismatch") {
        const auto p = tmp.path() / "len.jsonl";
        testutil::write_file_bytes(
            p,
            "{\"id\": \"a\", \"label\": 0, \"embeddings\": {\"rows\": 2, \"dim\": 2, \"data\": "
            "[0,0,0]}, \"edges\": [[0,1]]}\n");
        CHECK_THROWS_AS(load_dataset(p), DimensionError);
    }
    SUBCASE("duplicate ids") {
        const auto p = tmp.path() / "dupid.jsonl";
        const std::string rec =
            "{\"id\": \"a\", \"label\": 0, \"embeddings\": {\"rows\": 1, \"dim\": 2, \"data\": "
            "[0,0]}, \"edges\": []}\n";
        testutil::write_file_bytes(p, rec + rec);
        CHECK_THROWS_AS(load_dataset(p), StructureError);
    }
}

TEST_CASE("propagation graph build uses OCR supplementation") {
    Rng rng(17);
    Claim c = make_claim("c", 0, 2, 3, rng);
    c.ocr = Tensor::vector({1.0, 1.0, 1.0});
    PropagationGraph with = build_propagation_graph(c, true);
    PropagationGraph without = build_propagation_graph(c, false);
    for (std::size_t j = 0; j < 3; ++j) {
        const double root = c.node_embeddings.at(0, j);
        CHECK(with.node_features.at(0, j) == doctest::Approx(0.5 * (root + 1.0)).epsilon(1e-15));
        CHECK(without.node_features.at(0, j) == root);
        // comment rows untouched either way
        CHECK(with.node_features.at(1, j) == c.node_embeddings.at(1, j));
    }
}
