#pragma once

#include <cstdint>
#include <string>

#include "dmvt/errors.hpp"

namespace dmvt {

// Which encoder branches participate: the two self-attention branches and the
// cross-modal bi-attention branch.
struct BranchSet {
    bool use_m = true;
    bool use_p = true;
    bool use_mp = true;

    int enabled_count() const { return int(use_m) + int(use_p) + int(use_mp); }
    std::string label() const;  // "M", "P", "MP", "M+P", ... "M+P+MP"
};

// Attention logit scaling: conventional per-head 1/sqrt(head_dim), or the
// whole-embedding 1/sqrt(f_e) reading; identical when n_heads == 1.
enum class ScalingMode { per_head, whole_embedding };

struct ModelConfig {
    // Input geometry (full-scale defaults; desk-scale runs override these).
    int64_t dim_h = 128, dim_w = 128, dim_d = 128;
    int64_t block = 32;   // instance block edge b
    int64_t patch = 8;    // token patch edge p

    int64_t embed = 512;  // f_e
    int64_t depth = 4;    // Transformer layers per branch
    int64_t heads = 8;
    double tau = 0.01;    // bi-attention threshold
    double dropout = 0.0;
    int64_t labels = 2;   // L

    BranchSet branches;
    bool regbn_enabled = true;
    bool regbn_symmetric = false;  // experimental: also remove z_M from z_P
    ScalingMode scaling = ScalingMode::per_head;

    int64_t n_blocks() const {
        return (dim_h / block) * (dim_w / block) * (dim_d / block);
    }
    int64_t tokens_per_block() const {
        int64_t r = block / patch;
        return r * r * r;
    }
    int64_t patch_len() const { return patch * patch * patch; }
    int64_t head_dim() const { return embed / heads; }

    // Throws ConfigError naming the offending field/extent.
    void validate() const;
};

}  // namespace dmvt
