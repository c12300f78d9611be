#include "vga/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <queue>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "vga/rng.hpp"

namespace vga {

namespace {

using nlohmann::json;

// --- little-endian primitives -------------------------------------------------

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff),
                                static_cast<unsigned char>((v >> 16) & 0xff),
                                static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

bool get_u32(std::istream& is, std::uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
        (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    return true;
}

void put_f32(std::ostream& os, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(os, v);
}

bool get_f32(std::istream& is, float& f) {
    std::uint32_t v;
    if (!get_u32(is, v)) return false;
    std::memcpy(&f, &v, 4);
    return true;
}

void check_tree(const Claim& c) {
    const std::size_t n = c.node_count();
    if (c.edges.size() != n - 1) {
        throw StructureError("claim " + c.id + ": " + std::to_string(c.edges.size()) +
                             " edges for " + std::to_string(n) + " nodes (a tree needs " +
                             std::to_string(n - 1) + ")");
    }
    std::vector<int> parent_count(n, 0);
    std::vector<std::vector<std::size_t>> children(n);
    for (auto [p, ch] : c.edges) {
        if (p >= n || ch >= n) {
            throw StructureError("claim " + c.id + ": edge (" + std::to_string(p) + "," +
                                 std::to_string(ch) + ") out of range for " + std::to_string(n) +
                                 " nodes");
        }
        if (ch == 0) throw StructureError("claim " + c.id + ": root node has a parent");
        if (ch == p) throw StructureError("claim " + c.id + ": self-loop edge");
        if (++parent_count[ch] > 1) {
            throw StructureError("claim " + c.id + ": node " + std::to_string(ch) +
                                 " has more than one parent");
        }
        children[p].push_back(ch);
    }
    // reachability from the root
    std::vector<char> seen(n, 0);
    std::queue<std::size_t> q;
    q.push(0);
    seen[0] = 1;
    std::size_t visited = 1;
    while (!q.empty()) {
        const std::size_t u = q.front();
        q.pop();
        for (std::size_t ch : children[u]) {
            if (!seen[ch]) {
                seen[ch] = 1;
                ++visited;
                q.push(ch);
            }
        }
    }
    if (visited != n) {
        throw StructureError("claim " + c.id + ": propagation edges are disconnected or cyclic");
    }
}

}  // namespace

void validate_claim(const Claim& c) {
    if (c.label != 0 && c.label != 1) {
        throw StructureError("claim " + c.id + ": label must be 0 or 1, got " +
                             std::to_string(c.label));
    }
    if (!c.node_embeddings.defined() || c.node_embeddings.rank() != 2) {
        throw DimensionError("claim " + c.id + ": node embeddings must be a (n+1)×D matrix");
    }
    check_tree(c);
    if (c.ocr) {
        if (c.ocr->rank() != 1 || c.ocr->size() != c.embedding_dim()) {
            throw DimensionError("claim " + c.id + ": OCR embedding size " +
                                 std::to_string(c.ocr->size()) + " vs embedding dim " +
                                 std::to_string(c.embedding_dim()));
        }
    }
    if (c.image && c.visual_embedding) {
        throw StructureError("claim " + c.id + ": both a raw image and a visual embedding present");
    }
    if (c.image) {
        if (c.image->rank() != 3 || c.image->shape()[2] != 3) {
            throw DimensionError("claim " + c.id + ": image must be H×W×3, got " +
                                 shape_string(*c.image));
        }
    }
    if (c.visual_embedding && c.visual_embedding->rank() != 1) {
        throw DimensionError("claim " + c.id + ": visual embedding must be rank-1");
    }
}

std::size_t Dataset::embedding_dim() const {
    if (claims.empty()) throw ContractError("embedding_dim on an empty dataset");
    return claims.front().embedding_dim();
}

// --- adjacency -----------------------------------------------------------------

Tensor normalized_adjacency(const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                            std::size_t n_plus_1) {
    if (n_plus_1 == 0) throw StructureError("normalized_adjacency: empty graph");
    const std::size_t n = n_plus_1;
    std::vector<double> a(n * n, 0.0);
    for (auto [p, c] : edges) {
        if (p >= n || c >= n) {
            throw StructureError("normalized_adjacency: edge (" + std::to_string(p) + "," +
                                 std::to_string(c) + ") out of range");
        }
        if (p == c) throw StructureError("normalized_adjacency: self-loop edge");
        a[p * n + c] = 1.0;
        a[c * n + p] = 1.0;
    }
    std::vector<double> inv_sqrt_deg(n);
    for (std::size_t i = 0; i < n; ++i) {
        double deg = 1.0;  // self-loop
        for (std::size_t j = 0; j < n; ++j) deg += a[i * n + j];
        if (n > 1 && deg == 1.0 && i != 0) {
            throw StructureError("normalized_adjacency: isolated non-root node " +
                                 std::to_string(i));
        }
        inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
    }
    Tensor a_hat = Tensor::zeros({n, n});
    auto hv = a_hat.values();
    for (std::size_t i = 0; i < n; ++i) {
        hv[i * n + i] = inv_sqrt_deg[i] * inv_sqrt_deg[i];
        for (std::size_t j = i + 1; j < n; ++j) {
            if (a[i * n + j] == 0.0) continue;
            const double v = inv_sqrt_deg[i] * inv_sqrt_deg[j];
            hv[i * n + j] = v;  // assigned once, mirrored: exact symmetry
            hv[j * n + i] = v;
        }
    }
    return a_hat;
}

std::vector<double> supplement_root(std::span<const double> root,
                                    const std::optional<std::vector<double>>& ocr) {
    std::vector<double> out(root.begin(), root.end());
    if (!ocr) return out;
    if (ocr->size() != root.size()) {
        throw DimensionError("supplement_root: OCR size " + std::to_string(ocr->size()) +
                             " vs root size " + std::to_string(root.size()));
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (out[i] + (*ocr)[i]);
    return out;
}

PropagationGraph build_propagation_graph(const Claim& claim, bool use_ocr) {
    PropagationGraph g;
    g.n_plus_1 = claim.node_count();
    const std::size_t n = g.n_plus_1;
    g.adjacency = Tensor::zeros({n, n});
    auto av = g.adjacency.values();
    for (auto [p, c] : claim.edges) {
        av[p * n + c] = 1.0;
        av[c * n + p] = 1.0;
    }
    g.norm_adjacency = normalized_adjacency(claim.edges, n);
    g.node_features = claim.node_embeddings.clone_values();
    if (use_ocr && claim.ocr) {
        auto ocr = claim.ocr->values();
        const std::vector<double> supplemented = supplement_root(
            std::span<const double>(claim.node_embeddings.values().data(), claim.embedding_dim()),
            std::optional<std::vector<double>>(std::vector<double>(ocr.begin(), ocr.end())));
        auto fv = g.node_features.values();
        std::copy(supplemented.begin(), supplemented.end(), fv.begin());
    }
    return g;
}

// --- folds ----------------------------------------------------------------------

FoldPlan make_folds(const Dataset& dataset, std::size_t k, std::uint64_t seed) {
    const std::size_t n = dataset.size();
    if (k < 2) throw ConfigError("make_folds: need at least 2 folds, got " + std::to_string(k));
    if (k > n) {
        throw ConfigError("make_folds: " + std::to_string(k) + " folds for " + std::to_string(n) +
                          " claims");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng = derived_rng(seed, "fold-shuffle");
    shuffle_rng.shuffle(order);

    FoldPlan plan;
    plan.fold_count = k;
    plan.fold_of.assign(n, 0);
    plan.folds.resize(k);

    const std::size_t base = n / k, rem = n % k;
    std::size_t cursor = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const std::size_t sz = base + (f < rem ? 1 : 0);
        for (std::size_t i = 0; i < sz; ++i) {
            plan.fold_of[order[cursor]] = f;
            plan.folds[f].test.push_back(order[cursor]);
            ++cursor;
        }
    }
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::size_t> rest;
        rest.reserve(n - plan.folds[f].test.size());
        for (std::size_t i = 0; i < n; ++i) {
            if (plan.fold_of[i] != f) rest.push_back(i);
        }
        Rng split_rng = derived_rng(seed, "fold-split", f);
        split_rng.shuffle(rest);
        const std::size_t m = rest.size();
        std::size_t val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(m)));
        val = std::max<std::size_t>(val, 1);
        if (val >= m) val = m - 1;  // keep the training side nonempty
        plan.folds[f].validation.assign(rest.begin(), rest.begin() + static_cast<long>(val));
        plan.folds[f].train.assign(rest.begin() + static_cast<long>(val), rest.end());
    }
    return plan;
}

// --- synthetic generator ----------------------------------------------------------

namespace {

std::vector<double> unit_direction(std::size_t dim, Rng& rng) {
    std::vector<double> v(dim);
    double norm = 0.0;
    for (double& x : v) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

double snap_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

Dataset synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
    if (cfg.claims == 0) throw ConfigError("synth_generate: zero claims requested");
    if (cfg.min_nodes < 1 || cfg.max_nodes < cfg.min_nodes) {
        throw ConfigError("synth_generate: bad tree-size range [" + std::to_string(cfg.min_nodes) +
                          "," + std::to_string(cfg.max_nodes) + "]");
    }
    if (cfg.embedding_dim == 0) throw ConfigError("synth_generate: embedding dim must be positive");
    if (cfg.image_size != 0 && cfg.image_size < 5) {
        throw ConfigError("synth_generate: image size must be 0 or at least 5");
    }
    if (cfg.visual_dim == 0) throw ConfigError("synth_generate: visual dim must be positive");
    if (!(cfg.rumor_fraction >= 0.0 && cfg.rumor_fraction <= 1.0)) {
        throw ConfigError("synth_generate: rumor fraction outside [0,1]");
    }

    const std::size_t D = cfg.embedding_dim;
    const std::size_t vd = cfg.visual_dim;

    Rng dir_rng = derived_rng(seed, "directions");
    const std::vector<double> root_dir = unit_direction(D, dir_rng);
    const std::vector<double> comment_dir = unit_direction(D, dir_rng);
    // visual projection: vd rows of D gaussian entries scaled 1/sqrt(D)
    std::vector<double> proj(vd * D);
    {
        Rng proj_rng = derived_rng(seed, "visual-projection");
        const double s = 1.0 / std::sqrt(static_cast<double>(D));
        for (double& x : proj) x = proj_rng.normal() * s;
    }

    std::vector<int> labels(cfg.claims, 0);
    {
        const std::size_t rumors = std::min<std::size_t>(
            cfg.claims,
            static_cast<std::size_t>(std::llround(cfg.rumor_fraction * cfg.claims)));
        for (std::size_t i = 0; i < rumors; ++i) labels[i] = 1;
        Rng label_rng = derived_rng(seed, "labels");
        label_rng.shuffle(labels);
    }

    Dataset ds;
    ds.source = "synth";
    ds.synth_seed = seed;
    ds.claims.reserve(cfg.claims);

    for (std::size_t i = 0; i < cfg.claims; ++i) {
        Rng rng = derived_rng(seed, "claim", i);
        Claim c;
        {
            std::ostringstream os;
            os << "synth-" << seed << "-" << i;
            c.id = os.str();
        }
        c.label = labels[i];
        const double sign = c.label == 1 ? 1.0 : -1.0;
        const double sep = cfg.separability;

        std::vector<double> event(D);
        for (double& x : event) x = rng.normal();

        const std::size_t nodes =
            cfg.min_nodes + rng.uniform_index(cfg.max_nodes - cfg.min_nodes + 1);
        std::vector<double> emb(nodes * D);
        for (std::size_t j = 0; j < D; ++j) {
            emb[j] = event[j] + sep * 0.8 * sign * root_dir[j] + 0.3 * rng.normal();
        }
        for (std::size_t r = 1; r < nodes; ++r) {
            for (std::size_t j = 0; j < D; ++j) {
                emb[r * D + j] =
                    0.6 * event[j] + sep * 0.8 * sign * comment_dir[j] + 0.5 * rng.normal();
            }
        }
        c.node_embeddings = Tensor::matrix(nodes, D, std::move(emb));

        // random recursive tree
        for (std::size_t r = 1; r < nodes; ++r) {
            c.edges.emplace_back(rng.uniform_index(r), r);
        }

        // visual latent: shared with the event for non-rumors, fresh otherwise
        std::vector<double> visual(vd);
        if (c.label == 0) {
            for (std::size_t k = 0; k < vd; ++k) {
                double s = 0.0;
                for (std::size_t j = 0; j < D; ++j) s += proj[k * D + j] * event[j];
                visual[k] = s + cfg.agreement_noise * rng.normal();
            }
        } else {
            for (double& x : visual) x = rng.normal();
        }

        if (cfg.image_size == 0) {
            std::vector<double> ve(vd);
            for (std::size_t k = 0; k < vd; ++k) ve[k] = snap_f32(visual[k]);
            c.visual_embedding = Tensor::vector(std::move(ve));
            c.visual_ref.clear();
        } else {
            const std::size_t hw = cfg.image_size;
            const std::size_t cells = 4;  // 4×4 intensity grid carries the visual latent
            std::vector<double> img(hw * hw * 3);
            const double tamper_amp = c.label == 1 ? 0.05 * sep : 0.0;
            for (std::size_t y = 0; y < hw; ++y) {
                for (std::size_t x = 0; x < hw; ++x) {
                    const std::size_t cell = (y * cells / hw) * cells + (x * cells / hw);
                    const double checker = ((x + y) % 2 == 0) ? tamper_amp : -tamper_amp;
                    for (std::size_t ch = 0; ch < 3; ++ch) {
                        const double latent = visual[(cell * 3 + ch) % vd];
                        double v = 0.5 + 0.35 * std::tanh(latent) + checker +
                                   0.02 * (rng.uniform() - 0.5);
                        v = std::min(1.0, std::max(0.0, v));
                        img[(y * hw + x) * 3 + ch] = snap_f32(v);
                    }
                }
            }
            c.image = Tensor::from_values({hw, hw, 3}, std::move(img));
            c.image_ref = "images/" + c.id + ".vgt";
        }

        if (cfg.with_ocr) {
            // OCR reflects what is written in the image, so it derives from the
            // visual latent lifted back into embedding space.
            std::vector<double> ocr(D);
            for (std::size_t j = 0; j < D; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < vd; ++k) s += proj[k * D + j] * visual[k];
                ocr[j] = s + 0.3 * rng.normal();
            }
            c.ocr = Tensor::vector(std::move(ocr));
        }

        validate_claim(c);
        ds.claims.push_back(std::move(c));
    }
    return ds;
}

// --- VGT1 tensor container ----------------------------------------------------------

void write_tensor(std::ostream& os, const Tensor& tensor) {
    os.write("VGT1", 4);
    put_u32(os, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t e : tensor.shape()) put_u32(os, static_cast<std::uint32_t>(e));
    for (double v : tensor.values()) put_f32(os, static_cast<float>(v));
}

Tensor read_tensor(std::istream& is, const std::string& context) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "VGT1", 4) != 0) {
        throw FormatError(context + ": not a VGT1 tensor");
    }
    std::uint32_t rank;
    if (!get_u32(is, rank) || rank == 0 || rank > 8) {
        throw FormatError(context + ": bad tensor rank");
    }
    std::vector<std::size_t> shape(rank);
    std::size_t total = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        std::uint32_t e;
        if (!get_u32(is, e) || e == 0) throw FormatError(context + ": bad tensor extent");
        shape[i] = e;
        total *= e;
    }
    std::vector<double> values(total);
    for (std::size_t i = 0; i < total; ++i) {
        float f;
        if (!get_f32(is, f)) throw FormatError(context + ": truncated tensor data");
        values[i] = static_cast<double>(f);
    }
    return Tensor::from_values(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    write_tensor(os, tensor);
    if (!os) throw FormatError("short write to " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open tensor file " + path.string());
    return read_tensor(is, path.string());
}

// --- PPM images ------------------------------------------------------------------------

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string ppm_token(std::istream& is) {
    std::string tok;
    int ch;
    while ((ch = is.get()) != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = is.get();
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

}  // namespace

Tensor load_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open image " + path.string());
    if (ppm_token(is) != "P6") throw FormatError(path.string() + ": not a binary P6 PPM");
    const std::string ws = ppm_token(is), hs = ppm_token(is), ms = ppm_token(is);
    std::size_t w = 0, h = 0;
    long maxval = -1;
    try {
        w = std::stoul(ws);
        h = std::stoul(hs);
        maxval = std::stol(ms);
    } catch (const std::exception&) {
        throw FormatError(path.string() + ": malformed PPM header");
    }
    if (w == 0 || h == 0) throw FormatError(path.string() + ": zero PPM dimensions");
    if (maxval != 255) {
        throw FormatError(path.string() + ": unsupported PPM maxval " + std::to_string(maxval));
    }
    std::vector<unsigned char> raw(w * h * 3);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<long>(raw.size()))) {
        throw FormatError(path.string() + ": truncated PPM pixel data");
    }
    std::vector<double> values(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) values[i] = raw[i] / 255.0;
    return Tensor::from_values({h, w, 3}, std::move(values));
}

void save_ppm(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || image.shape()[2] != 3) {
        throw DimensionError("save_ppm: image must be H×W×3, got " + shape_string(image));
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    os << "P6\n" << image.shape()[1] << " " << image.shape()[0] << "\n255\n";
    for (double v : image.values()) {
        const long b = std::lround(std::min(1.0, std::max(0.0, v)) * 255.0);
        os.put(static_cast<char>(static_cast<unsigned char>(b)));
    }
    if (!os) throw FormatError("short write to " + path.string());
}

// --- claims files -------------------------------------------------------------------------

namespace {

Tensor parse_inline_matrix(const json& j, const std::string& where) {
    const std::size_t rows = j.at("rows").get<std::size_t>();
    const std::size_t dim = j.at("dim").get<std::size_t>();
    const auto& data = j.at("data");
    if (!data.is_array() || data.size() != rows * dim) {
        throw DimensionError(where + ": data length " + std::to_string(data.size()) + " for " +
                             std::to_string(rows) + "x" + std::to_string(dim));
    }
    std::vector<double> values;
    values.reserve(data.size());
    for (const auto& v : data) values.push_back(v.get<double>());
    return Tensor::matrix(rows, dim, std::move(values));
}

Tensor parse_inline_vector(const json& j, const std::string& where) {
    const std::size_t dim = j.at("dim").get<std::size_t>();
    const auto& data = j.at("data");
    if (!data.is_array() || data.size() != dim) {
        throw DimensionError(where + ": data length " + std::to_string(data.size()) +
                             " for dim " + std::to_string(dim));
    }
    std::vector<double> values;
    values.reserve(dim);
    for (const auto& v : data) values.push_back(v.get<double>());
    return Tensor::vector(std::move(values));
}

json dump_matrix(const Tensor& t) {
    json j;
    j["rows"] = t.rows();
    j["dim"] = t.cols();
    j["data"] = std::vector<double>(t.values().begin(), t.values().end());
    return j;
}

json dump_vector(const Tensor& t) {
    json j;
    j["dim"] = t.size();
    j["data"] = std::vector<double>(t.values().begin(), t.values().end());
    return j;
}

bool file_is_ppm(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    char magic[2] = {0, 0};
    is.read(magic, 2);
    return is && magic[0] == 'P' && magic[1] == '6';
}

}  // namespace

Tensor load_image(const std::filesystem::path& path) {
    Tensor t = file_is_ppm(path) ? load_ppm(path) : load_tensor(path);
    if (t.rank() != 3 || t.shape()[2] != 3) {
        throw FormatError(path.string() + ": expected an H×W×3 image, got " + shape_string(t));
    }
    return t;
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open claims file " + path.string());
    const std::filesystem::path dir = path.parent_path();

    Dataset ds;
    ds.source = path.string();
    std::unordered_set<std::string> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string at = path.filename().string() + ":" + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError(at + ": " + e.what());
        }
        Claim c;
        try {
            c.id = j.at("id").get<std::string>();
            c.label = j.at("label").get<int>();

            const json& emb = j.at("embeddings");
            if (emb.contains("path")) {
                c.embeddings_ref = emb.at("path").get<std::string>();
                c.node_embeddings = load_tensor(dir / c.embeddings_ref);
                if (c.node_embeddings.rank() != 2) {
                    throw DimensionError("claim " + c.id + ": embeddings tensor must be rank-2");
                }
            } else {
                c.node_embeddings = parse_inline_matrix(emb, "claim " + c.id + " embeddings");
            }

            for (const auto& e : j.at("edges")) {
                if (!e.is_array() || e.size() != 2) {
                    throw ParseError("claim " + c.id + ": edge entries must be [parent, child]");
                }
                c.edges.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>());
            }

            if (j.contains("ocr")) {
                const json& o = j.at("ocr");
                if (o.contains("path")) {
                    c.ocr_ref = o.at("path").get<std::string>();
                    Tensor t = load_tensor(dir / c.ocr_ref);
                    if (t.rank() != 1) {
                        throw DimensionError("claim " + c.id + ": OCR tensor must be rank-1");
                    }
                    c.ocr = t;
                } else {
                    c.ocr = parse_inline_vector(o, "claim " + c.id + " ocr");
                }
            }
            if (j.contains("image")) {
                c.image_ref = j.at("image").get<std::string>();
                const std::filesystem::path ip = dir / c.image_ref;
                c.image = file_is_ppm(ip) ? load_ppm(ip) : load_tensor(ip);
            }
            if (j.contains("visual_embedding")) {
                const json& v = j.at("visual_embedding");
                if (v.contains("path")) {
                    c.visual_ref = v.at("path").get<std::string>();
                    Tensor t = load_tensor(dir / c.visual_ref);
                    if (t.rank() != 1) {
                        throw DimensionError("claim " + c.id + ": visual tensor must be rank-1");
                    }
                    c.visual_embedding = t;
                } else {
                    c.visual_embedding = parse_inline_vector(v, "claim " + c.id + " visual_embedding");
                }
            }
        } catch (const json::exception& e) {
            throw ParseError(at + ": " + e.what());
        }

        try {
            validate_claim(c);
        } catch (const Error&) {
            throw;  // already carries the claim id
        }
        if (!ids.insert(c.id).second) {
            throw StructureError(at + ": duplicate claim id " + c.id);
        }
        if (!ds.claims.empty() && c.embedding_dim() != ds.claims.front().embedding_dim()) {
            throw DimensionError(at + ": claim " + c.id + " has embedding dim " +
                                 std::to_string(c.embedding_dim()) + " but the dataset uses " +
                                 std::to_string(ds.claims.front().embedding_dim()));
        }
        ds.claims.push_back(std::move(c));
    }
    return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path dir = path.parent_path();
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    for (const Claim& c : dataset.claims) {
        json j;
        j["id"] = c.id;
        j["label"] = c.label;
        if (!c.embeddings_ref.empty()) {
            save_tensor(dir / c.embeddings_ref, c.node_embeddings);
            j["embeddings"] = json{{"path", c.embeddings_ref}};
        } else {
            j["embeddings"] = dump_matrix(c.node_embeddings);
        }
        json edges = json::array();
        for (auto [p, ch] : c.edges) edges.push_back(json::array({p, ch}));
        j["edges"] = edges;
        if (c.ocr) {
            if (!c.ocr_ref.empty()) {
                save_tensor(dir / c.ocr_ref, *c.ocr);
                j["ocr"] = json{{"path", c.ocr_ref}};
            } else {
                j["ocr"] = dump_vector(*c.ocr);
            }
        }
        if (c.image) {
            std::string ref = c.image_ref.empty() ? ("images/" + c.id + ".vgt") : c.image_ref;
            if (ref.size() > 4 && ref.substr(ref.size() - 4) == ".ppm") {
                save_ppm(dir / ref, *c.image);
            } else {
                save_tensor(dir / ref, *c.image);
            }
            j["image"] = ref;
        }
        if (c.visual_embedding) {
            if (!c.visual_ref.empty()) {
                save_tensor(dir / c.visual_ref, *c.visual_embedding);
                j["visual_embedding"] = json{{"path", c.visual_ref}};
            } else {
                j["visual_embedding"] = dump_vector(*c.visual_embedding);
            }
        }
        os << j.dump() << "\n";
    }
    if (!os) throw FormatError("short write to " + path.string());
}

}  // namespace vga
