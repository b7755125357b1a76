#pragma once

#include <functional>

#include "dmvt/config.hpp"
#include "dmvt/rng.hpp"
#include "dmvt/tensor.hpp"
#include "dmvt/volume.hpp"

namespace dmvt {

struct LayerNormParams {
    Tensor gain;  // [f_e], init 1
    Tensor bias;  // [f_e], init 0
};

struct FfnParams {
    Tensor w1;  // [f_e, 4*f_e]
    Tensor b1;  // [4*f_e]
    Tensor w2;  // [4*f_e, f_e]
    Tensor b2;  // [f_e]
};

struct TransformerLayerParams {
    LayerNormParams ln1, ln2;
    FfnParams ffn;
};

// Everything needed to turn one volume into a token sequence.
struct BackboneParams {
    Tensor patch_projection;  // [p^3, f_e]
    Tensor patch_bias;        // [f_e]
    Tensor patch_pos;         // [tokens_per_block + 1, f_e]; row 0 = class slot
    Tensor block_pos;         // [N_b, f_e]
    Tensor class_token;       // [f_e]
};

BackboneParams make_backbone_params(const ModelConfig &cfg, Rng &rng);
TransformerLayerParams make_layer_params(const ModelConfig &cfg, Rng &rng);

// Validates cfg and that the volume's extents match it; throws ConfigError.
void check_geometry(const Volume &v, const ModelConfig &cfg);

// Raw voxel patches, pre-projection: [N_b, tokens_per_block, p^3]. Blocks are
// ordered lexicographically by (block_x, block_y, block_z), patches within a
// block likewise, voxels within a patch row-major.
Tensor extract_patches(const Volume &v, const ModelConfig &cfg);

// Inverse of extract_patches on raw patch data (tokenization bijection check).
Volume reassemble_volume(const Tensor &patches, const ModelConfig &cfg);

// Full embedding: project patches, prepend a class token per block, add patch
// and block positional offsets. Result [N_b, tokens_per_block + 1, f_e].
Tensor tokenize(const Volume &v, const ModelConfig &cfg, const BackboneParams &params);

// Attention callable: maps [..., tokens, f_e] -> same shape; leading axes are
// independent instances.
using AttnFn = std::function<Tensor(const Tensor &)>;

// Linear(f -> 4f), GELU, Linear(4f -> f); dropout after the activation when
// rate > 0 and rng given.
Tensor ffn_forward(const Tensor &h, const FfnParams &params, double dropout_rate = 0.0,
                   Rng *dropout_rng = nullptr);

// Pre-LN residual layer: y = x + attn(LN(x)); out = y + FFN(LN(y)). Dropout
// (when rate > 0 and rng given) applies after attention and after the FFN
// activation.
Tensor transformer_layer(const Tensor &x, const AttnFn &attn,
                         const TransformerLayerParams &params, double dropout_rate = 0.0,
                         Rng *dropout_rng = nullptr);

// Mean of the per-block class tokens: [..., N_b, tokens+1, f_e] -> [..., f_e].
Tensor pool_class_tokens(const Tensor &tokens);

// Inverted dropout with a {0,1} keep mask drawn from rng.
Tensor apply_dropout(const Tensor &x, double rate, Rng &rng);

}  // namespace dmvt
