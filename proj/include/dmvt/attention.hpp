#pragma once

#include "dmvt/config.hpp"
#include "dmvt/rng.hpp"
#include "dmvt/tensor.hpp"

namespace dmvt {

// Projection weights for one modality role. Self-attention uses a single set;
// bi-attention draws Q (and the output projection) from the query role and
// K/V from the key/value role.
struct AttentionParams {
    Tensor wq, wk, wv;  // [f_e, f_e]
    Tensor wo;          // [f_e, f_e], zero-initialized so residuals start as identity
    int64_t n_heads = 1;
};

AttentionParams make_attention_params(int64_t embed, int64_t n_heads, Rng &rng);

// softmax(Q K^T * s) V per head, heads concatenated, projected by wo.
// x: [..., n, f_e]; leading axes are independent instances.
Tensor self_attention(const Tensor &x, const AttentionParams &p,
                      ScalingMode mode = ScalingMode::per_head);

// Thresholded cross-modal attention: Z = softmax(Q_q K_kv^T * s), entries below
// tau zeroed through a stop-gradient {0,1} mask (no renormalization), then
// applied to V_kv. Asymmetric in its arguments by construction.
Tensor bi_attention(const Tensor &x_q, const Tensor &x_kv, const AttentionParams &q_params,
                    const AttentionParams &kv_params, double tau,
                    ScalingMode mode = ScalingMode::per_head);

// The pre-threshold softmax matrix Z (per head): [..., heads, n_q, n_kv].
// Exposed for sparsity diagnostics.
Tensor bi_attention_scores(const Tensor &x_q, const Tensor &x_kv,
                           const AttentionParams &q_params, const AttentionParams &kv_params,
                           ScalingMode mode = ScalingMode::per_head);

// Fraction of entries that fall below tau (the zeroed fraction). Z must hold
// values in [0, 1].
double mask_sparsity(const Tensor &z, double tau);

}  // namespace dmvt
