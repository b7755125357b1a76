#pragma once

#include <string>
#include <vector>

#include "dmvt/attention.hpp"
#include "dmvt/backbone.hpp"
#include "dmvt/config.hpp"
#include "dmvt/regbn.hpp"
#include "dmvt/volume.hpp"

namespace dmvt {

// One self-attention encoder path: tokenizer + depth transformer layers.
struct SelfBranch {
    BackboneParams backbone;
    std::vector<AttentionParams> attn;           // per layer
    std::vector<TransformerLayerParams> layers;  // per layer
};

// The cross-modal path: two token streams with private tokenizers; each layer
// cross-attends m<-p and p<-m, then per-stream FFN.
struct BiBranch {
    BackboneParams backbone_m, backbone_p;
    std::vector<AttentionParams> attn_m, attn_p;
    std::vector<TransformerLayerParams> layers_m, layers_p;
};

struct HeadParams {
    Tensor w1, b1;  // [f, f], [f]
    Tensor w2, b2;  // [f, L], [L]
};

// Pooled per-branch encodings for a batch; undefined tensors for disabled
// branches.
struct Latents {
    Tensor z_m, z_p, z_mp;  // [B, f] each when present
};

class Model {
  public:
    Model(const ModelConfig &cfg, uint64_t seed);

    const ModelConfig &config() const { return cfg_; }

    // Named trainable leaves of the enabled branches plus the head. RegBN's
    // omega is excluded (it is fitted, not optimized).
    std::vector<Parameter> parameters();

    RegBNState &regbn_state() { return regbn_; }
    const RegBNState &regbn_state() const { return regbn_; }
    RegBNState &regbn_state_pm() { return regbn_pm_; }

    // Encode a batch of paired volumes to branch latents. dropout_rng enables
    // dropout (training mode) when cfg.dropout > 0.
    Latents encode(const std::vector<const Volume *> &mri,
                   const std::vector<const Volume *> &pet, Rng *dropout_rng = nullptr) const;

    // Dependency removal + latent summation + MLP head -> logits [B, L].
    Tensor fuse(const Latents &lat) const;

    // encode + fuse.
    Tensor forward(const std::vector<const Volume *> &mri,
                   const std::vector<const Volume *> &pet, Rng *dropout_rng = nullptr) const;
    Tensor forward_pair(const Volume &mri, const Volume &pet) const;  // B = 1

    SelfBranch &branch_m() { return m_; }
    SelfBranch &branch_p() { return p_; }
    BiBranch &branch_mp() { return mp_; }

  private:
    ModelConfig cfg_;
    SelfBranch m_, p_;
    BiBranch mp_;
    HeadParams head_;
    RegBNState regbn_;     // removes z_p's span from z_m
    RegBNState regbn_pm_;  // experimental reverse direction
};

// Closed-form total parameter count for a configuration (enabled branches +
// head); matches the sum over Model::parameters() exactly.
int64_t count_parameters(const ModelConfig &cfg);

// The 7 branch combinations, single -> full: M, P, MP, M+P, M+MP, P+MP, M+P+MP.
std::vector<ModelConfig> ablation_variants(const ModelConfig &base);

// Full model with dependency removal off, then on.
std::vector<ModelConfig> regbn_variants(const ModelConfig &base);

// Threshold sweep grid for the bi-attention ablation.
std::vector<double> tau_sweep_grid();

// Checkpoint container (DMCKPT1): config block, named tensor manifest, raw
// little-endian float64 payload; includes the RegBN state.
void save_checkpoint(Model &model, const std::string &path);
Model load_checkpoint(const std::string &path);

}  // namespace dmvt
