#include "dmvt/attention.hpp"

#include <cmath>

namespace dmvt {

namespace {

void fill_uniform(Tensor &t, Rng &rng, double bound) {
    for (auto &v : t.data_mut()) v = rng.uniform(-bound, bound);
}

// [..., n, f] -> [..., h, n, f/h]
Tensor split_heads(const Tensor &t, int64_t h) {
    Shape s = t.shape();
    int64_t nd = t.ndim();
    int64_t n = s[static_cast<size_t>(nd - 2)], f = s[static_cast<size_t>(nd - 1)];
    Shape split(s.begin(), s.end() - 2);
    split.insert(split.end(), {n, h, f / h});
    Tensor r = reshape(t, split);
    std::vector<int64_t> axes;
    for (int64_t i = 0; i < nd - 2; ++i) axes.push_back(i);
    axes.push_back(nd - 1);  // heads
    axes.push_back(nd - 2);  // tokens
    axes.push_back(nd);      // head dim
    return permute(r, axes);
}

// [..., h, n, f/h] -> [..., n, f]
Tensor merge_heads(const Tensor &t) {
    int64_t nd = t.ndim();
    std::vector<int64_t> axes;
    for (int64_t i = 0; i < nd - 3; ++i) axes.push_back(i);
    axes.push_back(nd - 2);  // tokens
    axes.push_back(nd - 3);  // heads
    axes.push_back(nd - 1);  // head dim
    Tensor r = permute(t, axes);
    Shape s = r.shape();
    Shape merged(s.begin(), s.end() - 2);
    merged.push_back(s[static_cast<size_t>(nd - 2)] * s[static_cast<size_t>(nd - 1)]);
    return reshape(r, merged);
}

void check_attention_input(const Tensor &x, const AttentionParams &p, const char *op) {
    if (x.ndim() < 2) throw ShapeError(std::string(op) + " expects [..., tokens, features]");
    int64_t f = p.wq.shape()[0];
    if (x.shape().back() != f) {
        throw ShapeError(std::string(op) + ": feature extent " +
                         std::to_string(x.shape().back()) + " does not match weights " +
                         shape_str(p.wq.shape()));
    }
    if (p.n_heads <= 0 || f % p.n_heads != 0) {
        throw ConfigError(std::string(op) + ": feature dim " + std::to_string(f) +
                          " not divisible by " + std::to_string(p.n_heads) + " heads");
    }
}

double logit_scale(int64_t embed, int64_t heads, ScalingMode mode) {
    int64_t denom = mode == ScalingMode::per_head ? embed / heads : embed;
    return 1.0 / std::sqrt(static_cast<double>(denom));
}

}  // namespace

AttentionParams make_attention_params(int64_t embed, int64_t n_heads, Rng &rng) {
    AttentionParams p;
    double bound = 1.0 / std::sqrt(static_cast<double>(embed));
    p.wq = Tensor::zeros({embed, embed});
    p.wk = Tensor::zeros({embed, embed});
    p.wv = Tensor::zeros({embed, embed});
    fill_uniform(p.wq, rng, bound);
    fill_uniform(p.wk, rng, bound);
    fill_uniform(p.wv, rng, bound);
    p.wo = Tensor::zeros({embed, embed});
    p.n_heads = n_heads;
    for (Tensor *t : {&p.wq, &p.wk, &p.wv, &p.wo}) t->set_requires_grad(true);
    return p;
}

Tensor self_attention(const Tensor &x, const AttentionParams &p, ScalingMode mode) {
    check_attention_input(x, p, "self_attention");
    Tensor q = split_heads(matmul(x, p.wq), p.n_heads);
    Tensor k = split_heads(matmul(x, p.wk), p.n_heads);
    Tensor v = split_heads(matmul(x, p.wv), p.n_heads);
    double s = logit_scale(x.shape().back(), p.n_heads, mode);
    Tensor attn = softmax_lastaxis(scale(matmul(q, transpose_last2(k)), s));
    return matmul(merge_heads(matmul(attn, v)), p.wo);
}

Tensor bi_attention_scores(const Tensor &x_q, const Tensor &x_kv,
                           const AttentionParams &q_params, const AttentionParams &kv_params,
                           ScalingMode mode) {
    check_attention_input(x_q, q_params, "bi_attention");
    check_attention_input(x_kv, kv_params, "bi_attention");
    if (q_params.n_heads != kv_params.n_heads) {
        throw ConfigError("bi_attention: query and key/value head counts differ");
    }
    Tensor q = split_heads(matmul(x_q, q_params.wq), q_params.n_heads);
    Tensor k = split_heads(matmul(x_kv, kv_params.wk), kv_params.n_heads);
    double s = logit_scale(x_q.shape().back(), q_params.n_heads, mode);
    return softmax_lastaxis(scale(matmul(q, transpose_last2(k)), s));
}

Tensor bi_attention(const Tensor &x_q, const Tensor &x_kv, const AttentionParams &q_params,
                    const AttentionParams &kv_params, double tau, ScalingMode mode) {
    if (tau < 0.0) throw ConfigError("bi_attention: tau must be >= 0, got " + std::to_string(tau));
    Tensor z = bi_attention_scores(x_q, x_kv, q_params, kv_params, mode);
    Tensor v = split_heads(matmul(x_kv, kv_params.wv), kv_params.n_heads);

    // Indicator 1(Z >= tau), recomputed every forward pass, constant in backward.
    Tensor mask = Tensor::zeros(z.shape());
    {
        auto &m = mask.data_mut();
        const auto &zd = z.data();
        for (size_t i = 0; i < m.size(); ++i) m[i] = zd[i] >= tau ? 1.0 : 0.0;
    }
    Tensor thresholded = masked_scale(z, mask);
    return matmul(merge_heads(matmul(thresholded, v)), q_params.wo);
}

double mask_sparsity(const Tensor &z, double tau) {
    if (!z.defined() || z.numel() == 0) throw ContractError("mask_sparsity: empty input");
    int64_t below = 0;
    for (double v : z.data()) {
        if (v < 0.0 || v > 1.0) {
            throw ContractError("mask_sparsity: entry " + std::to_string(v) +
                                " outside [0,1]");
        }
        if (v < tau) ++below;
    }
    return static_cast<double>(below) / static_cast<double>(z.numel());
}

}  // namespace dmvt
