#include "dmvt/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace dmvt {

namespace {

constexpr double kLnEps = 1e-5;

void fill_uniform(Tensor &t, Rng &rng, double bound) {
    for (auto &v : t.data_mut()) v = rng.uniform(-bound, bound);
}

SelfBranch make_self_branch(const ModelConfig &cfg, Rng rng) {
    SelfBranch b;
    b.backbone = make_backbone_params(cfg, rng);
    for (int64_t i = 0; i < cfg.depth; ++i) {
        b.attn.push_back(make_attention_params(cfg.embed, cfg.heads, rng));
        b.layers.push_back(make_layer_params(cfg, rng));
    }
    return b;
}

BiBranch make_bi_branch(const ModelConfig &cfg, Rng rng) {
    BiBranch b;
    b.backbone_m = make_backbone_params(cfg, rng);
    b.backbone_p = make_backbone_params(cfg, rng);
    for (int64_t i = 0; i < cfg.depth; ++i) {
        b.attn_m.push_back(make_attention_params(cfg.embed, cfg.heads, rng));
        b.attn_p.push_back(make_attention_params(cfg.embed, cfg.heads, rng));
        b.layers_m.push_back(make_layer_params(cfg, rng));
        b.layers_p.push_back(make_layer_params(cfg, rng));
    }
    return b;
}

HeadParams make_head(const ModelConfig &cfg, Rng rng) {
    const int64_t f = cfg.embed;
    HeadParams h;
    double bound = 1.0 / std::sqrt(double(f));
    h.w1 = Tensor::zeros({f, f});
    fill_uniform(h.w1, rng, bound);
    h.b1 = Tensor::zeros({f});
    h.w2 = Tensor::zeros({f, cfg.labels});
    fill_uniform(h.w2, rng, bound);
    h.b2 = Tensor::zeros({cfg.labels});
    for (Tensor *t : {&h.w1, &h.b1, &h.w2, &h.b2}) t->set_requires_grad(true);
    return h;
}

// Stack per-volume token grids into one [B, N_b, tokens+1, f_e] batch.
Tensor embed_batch(const std::vector<const Volume *> &batch, const ModelConfig &cfg,
                   const BackboneParams &params) {
    std::vector<Tensor> rows;
    rows.reserve(batch.size());
    for (const Volume *v : batch) {
        Tensor t = tokenize(*v, cfg, params);
        Shape s = t.shape();
        s.insert(s.begin(), 1);
        rows.push_back(reshape(t, s));
    }
    return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

Tensor run_self_branch(const std::vector<const Volume *> &batch, const ModelConfig &cfg,
                       const SelfBranch &branch, Rng *dropout_rng) {
    Tensor x = embed_batch(batch, cfg, branch.backbone);
    for (int64_t i = 0; i < cfg.depth; ++i) {
        const AttentionParams &ap = branch.attn[size_t(i)];
        auto attn = [&](const Tensor &h) { return self_attention(h, ap, cfg.scaling); };
        x = transformer_layer(x, attn, branch.layers[size_t(i)], cfg.dropout, dropout_rng);
    }
    return pool_class_tokens(x);
}

// Both streams update in parallel from the pre-layer values: each cross-attends
// into the other's normalized tokens, then applies its own FFN sublayer.
Tensor run_bi_branch(const std::vector<const Volume *> &mri,
                     const std::vector<const Volume *> &pet, const ModelConfig &cfg,
                     const BiBranch &branch, Rng *dropout_rng) {
    Tensor xm = embed_batch(mri, cfg, branch.backbone_m);
    Tensor xp = embed_batch(pet, cfg, branch.backbone_p);
    for (int64_t i = 0; i < cfg.depth; ++i) {
        const auto &lm = branch.layers_m[size_t(i)];
        const auto &lp = branch.layers_p[size_t(i)];
        const auto &am = branch.attn_m[size_t(i)];
        const auto &ap = branch.attn_p[size_t(i)];

        Tensor hm = layer_norm(xm, lm.ln1.gain, lm.ln1.bias, kLnEps);
        Tensor hp = layer_norm(xp, lp.ln1.gain, lp.ln1.bias, kLnEps);
        Tensor cm = bi_attention(hm, hp, am, ap, cfg.tau, cfg.scaling);
        Tensor cp = bi_attention(hp, hm, ap, am, cfg.tau, cfg.scaling);
        if (cfg.dropout > 0.0 && dropout_rng) {
            cm = apply_dropout(cm, cfg.dropout, *dropout_rng);
            cp = apply_dropout(cp, cfg.dropout, *dropout_rng);
        }
        Tensor ym = add(xm, cm);
        Tensor yp = add(xp, cp);
        xm = add(ym, ffn_forward(layer_norm(ym, lm.ln2.gain, lm.ln2.bias, kLnEps), lm.ffn,
                                 cfg.dropout, dropout_rng));
        xp = add(yp, ffn_forward(layer_norm(yp, lp.ln2.gain, lp.ln2.bias, kLnEps), lp.ffn,
                                 cfg.dropout, dropout_rng));
    }
    return scale(add(pool_class_tokens(xm), pool_class_tokens(xp)), 0.5);
}

void collect_backbone(std::vector<Parameter> &out, const std::string &prefix,
                      const BackboneParams &b) {
    out.push_back({prefix + ".patch_projection", b.patch_projection});
    out.push_back({prefix + ".patch_bias", b.patch_bias});
    out.push_back({prefix + ".patch_pos", b.patch_pos});
    out.push_back({prefix + ".block_pos", b.block_pos});
    out.push_back({prefix + ".class_token", b.class_token});
}

void collect_layer(std::vector<Parameter> &out, const std::string &prefix,
                   const AttentionParams &a, const TransformerLayerParams &l) {
    out.push_back({prefix + ".attn.wq", a.wq});
    out.push_back({prefix + ".attn.wk", a.wk});
    out.push_back({prefix + ".attn.wv", a.wv});
    out.push_back({prefix + ".attn.wo", a.wo});
    out.push_back({prefix + ".ln1.gain", l.ln1.gain});
    out.push_back({prefix + ".ln1.bias", l.ln1.bias});
    out.push_back({prefix + ".ln2.gain", l.ln2.gain});
    out.push_back({prefix + ".ln2.bias", l.ln2.bias});
    out.push_back({prefix + ".ffn.w1", l.ffn.w1});
    out.push_back({prefix + ".ffn.b1", l.ffn.b1});
    out.push_back({prefix + ".ffn.w2", l.ffn.w2});
    out.push_back({prefix + ".ffn.b2", l.ffn.b2});
}

void check_batch(const std::vector<const Volume *> &mri, const std::vector<const Volume *> &pet,
                 const ModelConfig &cfg) {
    if (mri.empty() || mri.size() != pet.size()) {
        throw ContractError("batch needs matching, non-empty volume lists (got " +
                            std::to_string(mri.size()) + " and " + std::to_string(pet.size()) +
                            ")");
    }
    for (const auto *list : {&mri, &pet}) {
        for (const Volume *v : *list) {
            if (!v) throw ContractError("null volume in batch");
            check_geometry(*v, cfg);
        }
    }
}

}  // namespace

Model::Model(const ModelConfig &cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng root(seed);
    // Each branch draws from its own forked stream, so a branch's initial
    // weights do not depend on which other branches are enabled.
    if (cfg_.branches.use_m) m_ = make_self_branch(cfg_, root.fork(0));
    if (cfg_.branches.use_p) p_ = make_self_branch(cfg_, root.fork(1));
    if (cfg_.branches.use_mp) mp_ = make_bi_branch(cfg_, root.fork(2));
    head_ = make_head(cfg_, root.fork(3));
    regbn_ = RegBNState::init(cfg_.embed);
    regbn_pm_ = RegBNState::init(cfg_.embed);
}

std::vector<Parameter> Model::parameters() {
    std::vector<Parameter> out;
    if (cfg_.branches.use_m) {
        collect_backbone(out, "m", m_.backbone);
        for (int64_t i = 0; i < cfg_.depth; ++i)
            collect_layer(out, "m.layer" + std::to_string(i), m_.attn[size_t(i)],
                          m_.layers[size_t(i)]);
    }
    if (cfg_.branches.use_p) {
        collect_backbone(out, "p", p_.backbone);
        for (int64_t i = 0; i < cfg_.depth; ++i)
            collect_layer(out, "p.layer" + std::to_string(i), p_.attn[size_t(i)],
                          p_.layers[size_t(i)]);
    }
    if (cfg_.branches.use_mp) {
        collect_backbone(out, "mp.m", mp_.backbone_m);
        collect_backbone(out, "mp.p", mp_.backbone_p);
        for (int64_t i = 0; i < cfg_.depth; ++i) {
            collect_layer(out, "mp.m.layer" + std::to_string(i), mp_.attn_m[size_t(i)],
                          mp_.layers_m[size_t(i)]);
            collect_layer(out, "mp.p.layer" + std::to_string(i), mp_.attn_p[size_t(i)],
                          mp_.layers_p[size_t(i)]);
        }
    }
    out.push_back({"head.w1", head_.w1});
    out.push_back({"head.b1", head_.b1});
    out.push_back({"head.w2", head_.w2});
    out.push_back({"head.b2", head_.b2});
    return out;
}

Latents Model::encode(const std::vector<const Volume *> &mri,
                      const std::vector<const Volume *> &pet, Rng *dropout_rng) const {
    check_batch(mri, pet, cfg_);
    Latents lat;
    if (cfg_.branches.use_m) lat.z_m = run_self_branch(mri, cfg_, m_, dropout_rng);
    if (cfg_.branches.use_p) lat.z_p = run_self_branch(pet, cfg_, p_, dropout_rng);
    if (cfg_.branches.use_mp) lat.z_mp = run_bi_branch(mri, pet, cfg_, mp_, dropout_rng);
    return lat;
}

Tensor Model::fuse(const Latents &lat) const {
    std::vector<Tensor> parts;
    if (cfg_.branches.use_m) {
        if (!lat.z_m.defined()) throw ContractError("latents missing z_m for enabled branch");
        Tensor zm = lat.z_m;
        if (cfg_.regbn_enabled && cfg_.branches.use_p) {
            if (!lat.z_p.defined()) throw ContractError("latents missing z_p for enabled branch");
            zm = regbn_apply(regbn_, lat.z_m, lat.z_p);
        }
        parts.push_back(zm);
    }
    if (cfg_.branches.use_p) {
        if (!lat.z_p.defined()) throw ContractError("latents missing z_p for enabled branch");
        Tensor zp = lat.z_p;
        if (cfg_.regbn_enabled && cfg_.regbn_symmetric && cfg_.branches.use_m) {
            zp = regbn_apply(regbn_pm_, lat.z_p, lat.z_m);
        }
        parts.push_back(zp);
    }
    if (cfg_.branches.use_mp) {
        if (!lat.z_mp.defined()) throw ContractError("latents missing z_mp for enabled branch");
        parts.push_back(lat.z_mp);
    }
    Tensor acc = parts[0];
    for (size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
    Tensor hidden = gelu(add(matmul(acc, head_.w1), head_.b1));
    return add(matmul(hidden, head_.w2), head_.b2);
}

Tensor Model::forward(const std::vector<const Volume *> &mri,
                      const std::vector<const Volume *> &pet, Rng *dropout_rng) const {
    return fuse(encode(mri, pet, dropout_rng));
}

Tensor Model::forward_pair(const Volume &mri, const Volume &pet) const {
    return forward({&mri}, {&pet});
}

int64_t count_parameters(const ModelConfig &cfg) {
    const int64_t f = cfg.embed;
    const int64_t t = cfg.tokens_per_block();
    const int64_t nb = cfg.n_blocks();
    const int64_t backbone = cfg.patch_len() * f + f  // patch projection + bias
                             + (t + 1) * f            // patch positions (incl. class slot)
                             + nb * f                 // block positions
                             + f;                     // class token
    const int64_t layer = 4 * f * f                   // wq wk wv wo
                          + 4 * f                     // two layer norms
                          + (f * 4 * f + 4 * f) + (4 * f * f + f);  // ffn
    const int64_t self_branch = backbone + cfg.depth * layer;
    const int64_t head = f * f + f + f * cfg.labels + cfg.labels;

    int64_t total = head;
    if (cfg.branches.use_m) total += self_branch;
    if (cfg.branches.use_p) total += self_branch;
    if (cfg.branches.use_mp) total += 2 * self_branch;  // two private streams
    return total;
}

std::vector<ModelConfig> ablation_variants(const ModelConfig &base) {
    // Single branches first, then pairs, then the full model.
    const bool combos[7][3] = {
        {true, false, false},  {false, true, false}, {false, false, true}, {true, true, false},
        {true, false, true},   {false, true, true},  {true, true, true},
    };
    std::vector<ModelConfig> out;
    for (const auto &c : combos) {
        ModelConfig v = base;
        v.branches = BranchSet{c[0], c[1], c[2]};
        out.push_back(v);
    }
    return out;
}

std::vector<ModelConfig> regbn_variants(const ModelConfig &base) {
    ModelConfig off = base, on = base;
    off.regbn_enabled = false;
    on.regbn_enabled = true;
    return {off, on};
}

std::vector<double> tau_sweep_grid() { return {0.0, 0.005, 0.01, 0.05, 0.1}; }

// ---------------------------------------------------------------------------
// Checkpoint serialization.

namespace {

constexpr char kCkptMagic[7] = {'D', 'M', 'C', 'K', 'P', 'T', '1'};

void put_u8(std::string &out, uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string &out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string &out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_i64(std::string &out, int64_t v) { put_u64(out, static_cast<uint64_t>(v)); }

void put_f64(std::string &out, double d) {
    uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(out, bits);
}

// Bounds-checked little-endian reader.
struct ByteReader {
    const unsigned char *p;
    size_t size;
    size_t pos = 0;
    std::string path;

    void need(size_t n, const char *what) {
        if (pos + n > size) {
            throw FormatError(path + ": truncated checkpoint while reading " + what);
        }
    }
    uint8_t u8(const char *what) {
        need(1, what);
        return p[pos++];
    }
    uint32_t u32(const char *what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[pos + size_t(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64(const char *what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[pos + size_t(i)]) << (8 * i);
        pos += 8;
        return v;
    }
    int64_t i64(const char *what) { return static_cast<int64_t>(u64(what)); }
    double f64(const char *what) {
        uint64_t bits = u64(what);
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    }
    std::string str(uint32_t len, const char *what) {
        need(len, what);
        std::string s(reinterpret_cast<const char *>(p + pos), len);
        pos += len;
        return s;
    }
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Everything persisted: trainable parameters plus the fitted projection
// matrices, which are state but not optimizer-visible.
std::vector<NamedTensor> checkpoint_tensors(Model &model) {
    std::vector<NamedTensor> out;
    for (const Parameter &p : model.parameters()) out.push_back({p.name, p.tensor});
    out.push_back({"regbn.omega", model.regbn_state().omega});
    out.push_back({"regbn_pm.omega", model.regbn_state_pm().omega});
    return out;
}

}  // namespace

void save_checkpoint(Model &model, const std::string &path) {
    const ModelConfig &cfg = model.config();
    std::string out;
    out.append(kCkptMagic, sizeof(kCkptMagic));
    put_u8(out, 0);

    put_i64(out, cfg.dim_h);
    put_i64(out, cfg.dim_w);
    put_i64(out, cfg.dim_d);
    put_i64(out, cfg.block);
    put_i64(out, cfg.patch);
    put_i64(out, cfg.embed);
    put_i64(out, cfg.depth);
    put_i64(out, cfg.heads);
    put_i64(out, cfg.labels);
    put_f64(out, cfg.tau);
    put_f64(out, cfg.dropout);
    put_u8(out, cfg.branches.use_m ? 1 : 0);
    put_u8(out, cfg.branches.use_p ? 1 : 0);
    put_u8(out, cfg.branches.use_mp ? 1 : 0);
    put_u8(out, cfg.regbn_enabled ? 1 : 0);
    put_u8(out, cfg.regbn_symmetric ? 1 : 0);
    put_u8(out, cfg.scaling == ScalingMode::whole_embedding ? 1 : 0);

    for (const RegBNState *s : {&model.regbn_state(), &model.regbn_state_pm()}) {
        put_u8(out, s->fitted ? 1 : 0);
        put_f64(out, s->ema_decay);
        put_f64(out, s->update_lr);
    }

    std::vector<NamedTensor> entries = checkpoint_tensors(model);
    put_u32(out, static_cast<uint32_t>(entries.size()));
    uint64_t offset = 0;
    for (const NamedTensor &e : entries) {
        put_u32(out, static_cast<uint32_t>(e.name.size()));
        out.append(e.name);
        put_u32(out, static_cast<uint32_t>(e.tensor.ndim()));
        for (int64_t a = 0; a < e.tensor.ndim(); ++a) put_i64(out, e.tensor.extent(a));
        put_u64(out, offset);
        offset += static_cast<uint64_t>(e.tensor.numel());
    }
    put_u64(out, offset);
    for (const NamedTensor &e : entries) {
        for (double v : e.tensor.data()) put_f64(out, v);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open checkpoint file for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    f.flush();
    if (!f) throw IoError("write failure on " + path);
}

Model load_checkpoint(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint file: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure on " + path);

    ByteReader r{reinterpret_cast<const unsigned char *>(bytes.data()), bytes.size(), 0, path};
    r.need(8, "magic");
    if (std::memcmp(r.p, kCkptMagic, sizeof(kCkptMagic)) != 0) {
        throw FormatError(path + ": bad magic");
    }
    if (r.p[7] != 0) throw FormatError(path + ": nonzero pad byte");
    r.pos = 8;

    ModelConfig cfg;
    cfg.dim_h = r.i64("config");
    cfg.dim_w = r.i64("config");
    cfg.dim_d = r.i64("config");
    cfg.block = r.i64("config");
    cfg.patch = r.i64("config");
    cfg.embed = r.i64("config");
    cfg.depth = r.i64("config");
    cfg.heads = r.i64("config");
    cfg.labels = r.i64("config");
    cfg.tau = r.f64("config");
    cfg.dropout = r.f64("config");
    cfg.branches.use_m = r.u8("config") != 0;
    cfg.branches.use_p = r.u8("config") != 0;
    cfg.branches.use_mp = r.u8("config") != 0;
    cfg.regbn_enabled = r.u8("config") != 0;
    cfg.regbn_symmetric = r.u8("config") != 0;
    cfg.scaling = r.u8("config") != 0 ? ScalingMode::whole_embedding : ScalingMode::per_head;
    cfg.validate();  // ConfigError on corrupt geometry before any allocation

    struct ManifestEntry {
        std::string name;
        Shape shape;
        uint64_t offset;
    };

    Model model(cfg, 0);
    for (RegBNState *s : {&model.regbn_state(), &model.regbn_state_pm()}) {
        s->fitted = r.u8("regbn state") != 0;
        s->ema_decay = r.f64("regbn state");
        s->update_lr = r.f64("regbn state");
    }

    uint32_t count = r.u32("manifest count");
    std::vector<ManifestEntry> manifest;
    uint64_t expected_offset = 0;
    for (uint32_t i = 0; i < count; ++i) {
        ManifestEntry e;
        uint32_t name_len = r.u32("manifest name length");
        e.name = r.str(name_len, "manifest name");
        uint32_t ndim = r.u32("manifest rank");
        if (ndim > 8) throw FormatError(path + ": implausible tensor rank for " + e.name);
        for (uint32_t a = 0; a < ndim; ++a) e.shape.push_back(r.i64("manifest dims"));
        e.offset = r.u64("manifest offset");
        if (e.offset != expected_offset) {
            throw FormatError(path + ": non-contiguous payload offset for " + e.name);
        }
        for (int64_t d : e.shape) {
            if (d <= 0) throw FormatError(path + ": non-positive dimension for " + e.name);
        }
        expected_offset += static_cast<uint64_t>(shape_numel(e.shape));
        manifest.push_back(std::move(e));
    }

    uint64_t total = r.u64("payload size");
    if (total != expected_offset) {
        throw FormatError(path + ": payload size " + std::to_string(total) +
                          " does not match manifest total " + std::to_string(expected_offset));
    }
    r.need(size_t(total) * 8, "payload");

    std::map<std::string, Tensor> targets;
    for (const NamedTensor &e : checkpoint_tensors(model)) targets.emplace(e.name, e.tensor);
    if (manifest.size() != targets.size()) {
        throw FormatError(path + ": manifest holds " + std::to_string(manifest.size()) +
                          " tensors, model defines " + std::to_string(targets.size()));
    }
    for (const ManifestEntry &e : manifest) {
        auto it = targets.find(e.name);
        if (it == targets.end()) throw FormatError(path + ": unknown tensor " + e.name);
        Tensor &t = it->second;
        if (e.shape != t.shape()) {
            throw FormatError(path + ": shape " + shape_str(e.shape) + " for " + e.name +
                              " does not match model shape " + shape_str(t.shape()));
        }
        std::vector<double> &dst = t.data_mut();
        for (size_t k = 0; k < dst.size(); ++k) {
            double v = r.f64("payload");
            if (!std::isfinite(v)) throw FormatError(path + ": non-finite value in " + e.name);
            dst[k] = v;
        }
    }
    if (r.pos != r.size) throw FormatError(path + ": trailing bytes after payload");
    return model;
}

}  // namespace dmvt
