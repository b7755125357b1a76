#include "dmvt/backbone.hpp"

#include <cmath>

namespace dmvt {

namespace {

void fill_uniform(Tensor &t, Rng &rng, double bound) {
    for (auto &v : t.data_mut()) v = rng.uniform(-bound, bound);
}

void fill_normal(Tensor &t, Rng &rng, double sigma) {
    for (auto &v : t.data_mut()) v = rng.normal(0.0, sigma);
}

}  // namespace

void check_geometry(const Volume &v, const ModelConfig &cfg) {
    cfg.validate();
    if (v.h != cfg.dim_h || v.w != cfg.dim_w || v.d != cfg.dim_d) {
        throw ConfigError("volume " + std::to_string(v.h) + "x" + std::to_string(v.w) + "x" +
                          std::to_string(v.d) + " does not match configured " +
                          std::to_string(cfg.dim_h) + "x" + std::to_string(cfg.dim_w) + "x" +
                          std::to_string(cfg.dim_d));
    }
}

BackboneParams make_backbone_params(const ModelConfig &cfg, Rng &rng) {
    BackboneParams p;
    p.patch_projection = Tensor::zeros({cfg.patch_len(), cfg.embed});
    fill_uniform(p.patch_projection, rng, 1.0 / std::sqrt(static_cast<double>(cfg.patch_len())));
    p.patch_bias = Tensor::zeros({cfg.embed});
    p.patch_pos = Tensor::zeros({cfg.tokens_per_block() + 1, cfg.embed});
    fill_normal(p.patch_pos, rng, 0.02);
    p.block_pos = Tensor::zeros({cfg.n_blocks(), cfg.embed});
    fill_normal(p.block_pos, rng, 0.02);
    p.class_token = Tensor::zeros({cfg.embed});
    fill_normal(p.class_token, rng, 0.02);
    for (Tensor *t : {&p.patch_projection, &p.patch_bias, &p.patch_pos, &p.block_pos,
                      &p.class_token})
        t->set_requires_grad(true);
    return p;
}

TransformerLayerParams make_layer_params(const ModelConfig &cfg, Rng &rng) {
    int64_t f = cfg.embed, hidden = 4 * cfg.embed;
    TransformerLayerParams p;
    p.ln1 = {Tensor::full({f}, 1.0), Tensor::zeros({f})};
    p.ln2 = {Tensor::full({f}, 1.0), Tensor::zeros({f})};
    p.ffn.w1 = Tensor::zeros({f, hidden});
    fill_uniform(p.ffn.w1, rng, 1.0 / std::sqrt(static_cast<double>(f)));
    p.ffn.b1 = Tensor::zeros({hidden});
    p.ffn.w2 = Tensor::zeros({hidden, f});
    fill_uniform(p.ffn.w2, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
    p.ffn.b2 = Tensor::zeros({f});
    for (Tensor *t : {&p.ln1.gain, &p.ln1.bias, &p.ln2.gain, &p.ln2.bias, &p.ffn.w1, &p.ffn.b1,
                      &p.ffn.w2, &p.ffn.b2})
        t->set_requires_grad(true);
    return p;
}

Tensor extract_patches(const Volume &v, const ModelConfig &cfg) {
    check_geometry(v, cfg);
    int64_t b = cfg.block, p = cfg.patch;
    int64_t nbh = cfg.dim_h / b, nbw = cfg.dim_w / b, nbd = cfg.dim_d / b;
    int64_t ppb = b / p;  // patches per block edge
    int64_t nb = cfg.n_blocks(), tpb = cfg.tokens_per_block(), plen = cfg.patch_len();

    std::vector<double> out(static_cast<size_t>(nb * tpb * plen));
    int64_t idx = 0;
    for (int64_t bi = 0; bi < nbh; ++bi)
        for (int64_t bj = 0; bj < nbw; ++bj)
            for (int64_t bk = 0; bk < nbd; ++bk)
                for (int64_t pi = 0; pi < ppb; ++pi)
                    for (int64_t pj = 0; pj < ppb; ++pj)
                        for (int64_t pk = 0; pk < ppb; ++pk)
                            for (int64_t vi = 0; vi < p; ++vi)
                                for (int64_t vj = 0; vj < p; ++vj)
                                    for (int64_t vk = 0; vk < p; ++vk)
                                        out[static_cast<size_t>(idx++)] = v.at(
                                            bi * b + pi * p + vi, bj * b + pj * p + vj,
                                            bk * b + pk * p + vk);
    return Tensor::from_data({nb, tpb, plen}, std::move(out));
}

Volume reassemble_volume(const Tensor &patches, const ModelConfig &cfg) {
    cfg.validate();
    Shape expect{cfg.n_blocks(), cfg.tokens_per_block(), cfg.patch_len()};
    if (patches.shape() != expect) {
        throw ShapeError("patch tensor " + shape_str(patches.shape()) + " does not match " +
                         shape_str(expect));
    }
    int64_t b = cfg.block, p = cfg.patch;
    int64_t nbh = cfg.dim_h / b, nbw = cfg.dim_w / b, nbd = cfg.dim_d / b;
    int64_t ppb = b / p;

    Volume v = Volume::filled(cfg.dim_h, cfg.dim_w, cfg.dim_d, 0.0f);
    const auto &data = patches.data();
    int64_t idx = 0;
    for (int64_t bi = 0; bi < nbh; ++bi)
        for (int64_t bj = 0; bj < nbw; ++bj)
            for (int64_t bk = 0; bk < nbd; ++bk)
                for (int64_t pi = 0; pi < ppb; ++pi)
                    for (int64_t pj = 0; pj < ppb; ++pj)
                        for (int64_t pk = 0; pk < ppb; ++pk)
                            for (int64_t vi = 0; vi < p; ++vi)
                                for (int64_t vj = 0; vj < p; ++vj)
                                    for (int64_t vk = 0; vk < p; ++vk)
                                        v.at(bi * b + pi * p + vi, bj * b + pj * p + vj,
                                             bk * b + pk * p + vk) =
                                            static_cast<float>(data[static_cast<size_t>(idx++)]);
    return v;
}

Tensor tokenize(const Volume &v, const ModelConfig &cfg, const BackboneParams &params) {
    Tensor raw = extract_patches(v, cfg);
    Tensor proj = add(matmul(raw, params.patch_projection), params.patch_bias);
    int64_t nb = cfg.n_blocks(), f = cfg.embed;
    Tensor cls = broadcast_to(reshape(params.class_token, {1, 1, f}), {nb, 1, f});
    Tensor tokens = concat({cls, proj}, 1);
    tokens = add(tokens, params.patch_pos);  // broadcasts over blocks
    tokens = add(tokens, reshape(params.block_pos, {nb, 1, f}));
    return tokens;
}

Tensor ffn_forward(const Tensor &h, const FfnParams &params, double dropout_rate,
                   Rng *dropout_rng) {
    Tensor f = gelu(add(matmul(h, params.w1), params.b1));
    if (dropout_rate > 0.0 && dropout_rng) f = apply_dropout(f, dropout_rate, *dropout_rng);
    return add(matmul(f, params.w2), params.b2);
}

Tensor transformer_layer(const Tensor &x, const AttnFn &attn,
                         const TransformerLayerParams &params, double dropout_rate,
                         Rng *dropout_rng) {
    Tensor a = attn(layer_norm(x, params.ln1.gain, params.ln1.bias, 1e-5));
    if (dropout_rate > 0.0 && dropout_rng) a = apply_dropout(a, dropout_rate, *dropout_rng);
    Tensor y = add(x, a);

    Tensor h = layer_norm(y, params.ln2.gain, params.ln2.bias, 1e-5);
    Tensor f = ffn_forward(h, params.ffn, dropout_rate, dropout_rng);
    return add(y, f);
}

Tensor pool_class_tokens(const Tensor &tokens) {
    if (tokens.ndim() < 3) {
        throw ShapeError("pool expects [..., blocks, tokens, features], got " +
                         shape_str(tokens.shape()));
    }
    Tensor cls = slice(tokens, tokens.ndim() - 2, 0, 1);  // [..., N_b, 1, f]
    Shape squeezed = cls.shape();
    squeezed.erase(squeezed.end() - 2);
    cls = reshape(cls, squeezed);                       // [..., N_b, f]
    return mean_axis(cls, cls.ndim() - 2);              // [..., f]
}

Tensor apply_dropout(const Tensor &x, double rate, Rng &rng) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
    Tensor mask = Tensor::zeros(x.shape());
    auto &m = mask.data_mut();
    for (auto &v : m) v = rng.uniform() < rate ? 0.0 : 1.0;
    return scale(masked_scale(x, mask), 1.0 / (1.0 - rate));
}

}  // namespace dmvt
