#include "crossmodal/model.hpp"

#include <cmath>

#include "crossmodal/error.hpp"
#include "crossmodal/rng.hpp"

namespace crossmodal {
namespace {

// fan-in-scaled normal init; biases start at zero
Tensor init_weight(const std::string& name, std::size_t rows, std::size_t cols,
                   std::uint64_t seed) {
    Rng rng(hash_name_seed(name, seed));
    std::vector<double> w(rows * cols);
    const double sigma = 1.0 / std::sqrt(static_cast<double>(rows));
    for (double& v : w) v = rng.normal() * sigma;
    return Tensor::from_values({rows, cols}, std::move(w), true);
}

Tensor init_bias(std::size_t cols) { return Tensor::zeros({1, cols}, true); }

}  // namespace

void ModelConfig::validate() const {
    if (num_classes == 0) throw ConfigError("model: empty vocabulary");
    if (embed_dim == 0 || feature_dim == 0) throw ConfigError("model: zero dimension");
    if (image_channels.size() != 2) throw ConfigError("model: image extractor needs 2 mixing layers");
    if (point_hidden.size() != 2) throw ConfigError("model: point extractor needs 2 hidden layers");
    if (vpm_heads == 0 || embed_dim % vpm_heads != 0)
        throw ConfigError("model: vpm heads (" + std::to_string(vpm_heads) +
                          ") must divide embed dim (" + std::to_string(embed_dim) + ")");
}

Model Model::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    const std::size_t c1 = cfg.image_channels[0], c2 = cfg.image_channels[1];
    m.conv1_w = init_weight("image.conv1.w", 9 * cfg.image_in_channels, c1, seed);
    m.conv1_b = init_bias(c1);
    m.conv2_w = init_weight("image.conv2.w", 9 * c1, c2, seed);
    m.conv2_b = init_bias(c2);
    m.img_out_w = init_weight("image.out.w", c2, cfg.feature_dim, seed);
    m.img_out_b = init_bias(cfg.feature_dim);
    m.w_i2t = init_weight("head.i2t.w", cfg.feature_dim, cfg.embed_dim, seed);

    const std::size_t h1 = cfg.point_hidden[0], h2 = cfg.point_hidden[1];
    m.pt_w1 = init_weight("point.l1.w", cfg.point_in_features, h1, seed);
    m.pt_b1 = init_bias(h1);
    m.pt_w2 = init_weight("point.l2.w", h1, h2, seed);
    m.pt_b2 = init_bias(h2);
    m.pt_w3 = init_weight("point.l3.w", h2, cfg.feature_dim, seed);
    m.pt_b3 = init_bias(cfg.feature_dim);
    m.w_p2t = init_weight("head.p2t.w", cfg.feature_dim, cfg.embed_dim, seed);

    const std::size_t d = cfg.embed_dim;
    const std::size_t dh = d / cfg.vpm_heads;
    for (std::size_t i = 0; i < cfg.vpm_heads; ++i) {
        const std::string s = "vpm.self." + std::to_string(i) + ".";
        m.vpm.self_heads.push_back({init_weight(s + "q", d, dh, seed),
                                    init_weight(s + "k", d, dh, seed),
                                    init_weight(s + "v", d, dh, seed)});
        const std::string x = "vpm.cross." + std::to_string(i) + ".";
        m.vpm.cross_heads.push_back({init_weight(x + "q", d, dh, seed),
                                     init_weight(x + "k", d, dh, seed),
                                     init_weight(x + "v", d, dh, seed)});
    }
    m.vpm.ffn_w1 = init_weight("vpm.ffn.w1", d, 2 * d, seed);
    m.vpm.ffn_b1 = init_bias(2 * d);
    m.vpm.ffn_w2 = init_weight("vpm.ffn.w2", 2 * d, d, seed);
    m.vpm.ffn_b2 = init_bias(d);
    m.vpm.cls_w1 = init_weight("vpm.cls.w1", d, d, seed);
    m.vpm.cls_b1 = init_bias(d);
    m.vpm.cls_w2 = init_weight("vpm.cls.w2", d, 2, seed);
    m.vpm.cls_b2 = init_bias(2);
    return m;
}

std::vector<std::pair<std::string, Tensor>> Model::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out = {
        {"image.conv1.w", conv1_w}, {"image.conv1.b", conv1_b},
        {"image.conv2.w", conv2_w}, {"image.conv2.b", conv2_b},
        {"image.out.w", img_out_w}, {"image.out.b", img_out_b},
        {"head.i2t.w", w_i2t},
        {"point.l1.w", pt_w1},      {"point.l1.b", pt_b1},
        {"point.l2.w", pt_w2},      {"point.l2.b", pt_b2},
        {"point.l3.w", pt_w3},      {"point.l3.b", pt_b3},
        {"head.p2t.w", w_p2t},
    };
    for (std::size_t i = 0; i < vpm.self_heads.size(); ++i) {
        const std::string s = "vpm.self." + std::to_string(i) + ".";
        out.emplace_back(s + "q", vpm.self_heads[i].q);
        out.emplace_back(s + "k", vpm.self_heads[i].k);
        out.emplace_back(s + "v", vpm.self_heads[i].v);
    }
    for (std::size_t i = 0; i < vpm.cross_heads.size(); ++i) {
        const std::string x = "vpm.cross." + std::to_string(i) + ".";
        out.emplace_back(x + "q", vpm.cross_heads[i].q);
        out.emplace_back(x + "k", vpm.cross_heads[i].k);
        out.emplace_back(x + "v", vpm.cross_heads[i].v);
    }
    out.emplace_back("vpm.ffn.w1", vpm.ffn_w1);
    out.emplace_back("vpm.ffn.b1", vpm.ffn_b1);
    out.emplace_back("vpm.ffn.w2", vpm.ffn_w2);
    out.emplace_back("vpm.ffn.b2", vpm.ffn_b2);
    out.emplace_back("vpm.cls.w1", vpm.cls_w1);
    out.emplace_back("vpm.cls.b1", vpm.cls_b1);
    out.emplace_back("vpm.cls.w2", vpm.cls_w2);
    out.emplace_back("vpm.cls.b2", vpm.cls_b2);
    return out;
}

std::vector<Tensor> Model::image_params() const {
    return {conv1_w, conv1_b, conv2_w, conv2_b, img_out_w, img_out_b, w_i2t};
}

std::vector<Tensor> Model::vpm_params() const {
    std::vector<Tensor> out;
    for (const VpmHead& h : vpm.self_heads) {
        out.push_back(h.q);
        out.push_back(h.k);
        out.push_back(h.v);
    }
    for (const VpmHead& h : vpm.cross_heads) {
        out.push_back(h.q);
        out.push_back(h.k);
        out.push_back(h.v);
    }
    out.insert(out.end(), {vpm.ffn_w1, vpm.ffn_b1, vpm.ffn_w2, vpm.ffn_b2, vpm.cls_w1,
                           vpm.cls_b1, vpm.cls_w2, vpm.cls_b2});
    return out;
}

std::vector<Tensor> Model::point_params(bool include_vpm) const {
    std::vector<Tensor> out = {pt_w1, pt_b1, pt_w2, pt_b2, pt_w3, pt_b3, w_p2t};
    if (include_vpm) {
        const std::vector<Tensor> v = vpm_params();
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

Tensor Model::image_features(const Tensor& channels, std::size_t height,
                             std::size_t width) const {
    Tensor x = tanh_act(add_rowvec(matmul(unfold_3x3(channels, height, width), conv1_w), conv1_b));
    x = tanh_act(add_rowvec(matmul(unfold_3x3(x, height, width), conv2_w), conv2_b));
    return tanh_act(add_rowvec(matmul(x, img_out_w), img_out_b));
}

Tensor Model::point_features(const Tensor& feats) const {
    Tensor x = tanh_act(add_rowvec(matmul(feats, pt_w1), pt_b1));
    x = tanh_act(add_rowvec(matmul(x, pt_w2), pt_b2));
    return tanh_act(add_rowvec(matmul(x, pt_w3), pt_b3));
}

namespace {

Tensor attention(const Tensor& queries, const Tensor& keys_values, const VpmHead& head) {
    const double dh = static_cast<double>(head.q.cols());
    const Tensor q = matmul(queries, head.q);
    const Tensor k = matmul(keys_values, head.k);
    const Tensor v = matmul(keys_values, head.v);
    const Tensor weights = softmax_rows(scale(matmul_nt(q, k), 1.0 / std::sqrt(dh)));
    return matmul(weights, v);
}

}  // namespace

Tensor Model::vpm_forward(const Tensor& image_rows, const Tensor& point_rows) const {
    if (image_rows.rows() == 0) throw ShapeError("vpm_forward: no pairs");
    if (image_rows.shape() != point_rows.shape() || image_rows.cols() != cfg.embed_dim)
        throw ShapeError("vpm_forward: expected matching r×" + std::to_string(cfg.embed_dim) +
                         " inputs");
    std::vector<Tensor> heads;
    for (const VpmHead& h : vpm.self_heads) heads.push_back(attention(image_rows, image_rows, h));
    const Tensor q_atten = concat_cols(heads);
    heads.clear();
    for (const VpmHead& h : vpm.cross_heads) heads.push_back(attention(q_atten, point_rows, h));
    const Tensor cat = concat_cols(heads);
    const Tensor ffn =
        add_rowvec(matmul(tanh_act(add_rowvec(matmul(cat, vpm.ffn_w1), vpm.ffn_b1)), vpm.ffn_w2),
                   vpm.ffn_b2);
    const Tensor hidden = tanh_act(add_rowvec(matmul(ffn, vpm.cls_w1), vpm.cls_b1));
    return add_rowvec(matmul(hidden, vpm.cls_w2), vpm.cls_b2);
}

}  // namespace crossmodal
