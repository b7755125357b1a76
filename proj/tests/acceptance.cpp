// Acceptance gate: one functional or property check per shipping requirement,
// each printed as a [PASS]/[FAIL] line. Exit code = number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "dmvt/ablation.hpp"
#include "dmvt/attention.hpp"
#include "dmvt/metrics.hpp"
#include "dmvt/model.hpp"
#include "dmvt/regbn.hpp"
#include "dmvt/rng.hpp"
#include "dmvt/split.hpp"
#include "dmvt/synth.hpp"
#include "dmvt/tensor.hpp"
#include "dmvt/train.hpp"
#include "dmvt/volume.hpp"

using namespace dmvt;

namespace {

namespace fs = std::filesystem;

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string &msg) {
    if (!ok) throw Failure(msg);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

fs::path scratch(const std::string &name) {
    fs::path dir = fs::temp_directory_path() / "dmvt_acceptance" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// ---- criterion 1: finite-difference gradient suite -------------------------

Tensor rand_leaf(const Shape &shape, Rng &rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(shape);
    for (auto &v : t.data_mut()) v = rng.uniform(lo, hi);
    t.set_requires_grad(true);
    return t;
}

// Checks d loss / d input for every coordinate of every input against central
// differences. `build` must rebuild the graph from the current leaf values and
// be deterministic; its output is reduced to a scalar through weights fixed at
// entry so every coordinate influences the loss.
void fd_check(const std::string &op, std::vector<Tensor> inputs,
              const std::function<Tensor()> &build, double eps = 1e-5) {
    Tensor w;
    {
        NoGradGuard guard;
        Tensor probe = build();
        w = Tensor::zeros(probe.shape());
        Rng wr(std::hash<std::string>{}(op));
        for (auto &v : w.data_mut()) v = wr.uniform(-1.0, 1.0);
    }
    auto loss = [&] { return sum_all(mul(build(), w)); };
    Tensor l = loss();
    require(l.numel() == 1, op + ": loss is not scalar");
    for (Tensor &t : inputs) t.zero_grad();
    backward(l);
    for (size_t which = 0; which < inputs.size(); ++which) {
        Tensor &t = inputs[which];
        const std::vector<double> *g = t.grad();
        require(g != nullptr, op + ": input " + std::to_string(which) + " got no gradient");
        for (size_t i = 0; i < g->size(); ++i) {
            double saved = t.data()[i];
            double plus, minus;
            {
                NoGradGuard guard;
                t.data_mut()[i] = saved + eps;
                plus = loss().item();
                t.data_mut()[i] = saved - eps;
                minus = loss().item();
                t.data_mut()[i] = saved;
            }
            double numeric = (plus - minus) / (2 * eps);
            double analytic = (*g)[i];
            double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-2});
            if (std::abs(numeric - analytic) > 1e-3 * denom) {
                throw Failure(op + ": input " + std::to_string(which) + " coord " +
                              std::to_string(i) + ": analytic " + fmt(analytic) +
                              " vs numeric " + fmt(numeric));
            }
        }
    }
}

void criterion_gradients() {
    Rng rng(2024);

    {
        Tensor a = rand_leaf({2, 3}, rng), b = rand_leaf({3}, rng);
        fd_check("add", {a, b}, [&] { return add(a, b); });
        fd_check("sub", {a, b}, [&] { return sub(a, b); });
        fd_check("mul", {a, b}, [&] { return mul(a, b); });
        fd_check("scale", {a}, [&] { return scale(a, 1.7); });
        fd_check("neg", {a}, [&] { return neg(a); });
    }
    {
        Tensor a = rand_leaf({2, 3, 4}, rng), b = rand_leaf({4, 5}, rng);
        fd_check("matmul", {a, b}, [&] { return matmul(a, b); });
    }
    {
        Tensor x = rand_leaf({2, 5}, rng, -2.0, 2.0);
        fd_check("softmax_lastaxis", {x}, [&] { return softmax_lastaxis(x); });
        fd_check("log_softmax_lastaxis", {x}, [&] { return log_softmax_lastaxis(x); });
        fd_check("gelu", {x}, [&] { return gelu(x); });
    }
    {
        Tensor x = rand_leaf({2, 6}, rng), g = rand_leaf({6}, rng, 0.5, 1.5),
               b = rand_leaf({6}, rng);
        fd_check("layer_norm", {x, g, b}, [&] { return layer_norm(x, g, b, 1e-5); });
    }
    {
        Tensor x = rand_leaf({2, 4}, rng);
        Tensor mask = Tensor::from_data({2, 4}, {1, 0, 1, 1, 0, 1, 0, 1});
        fd_check("masked_scale", {x}, [&] { return masked_scale(x, mask); });
    }
    {
        Tensor x = rand_leaf({2, 6}, rng);
        fd_check("reshape", {x}, [&] { return reshape(x, {3, 4}); });
        fd_check("slice", {x}, [&] { return slice(x, 1, 2, 3); });
        fd_check("broadcast_to", {x},
                 [&] { return broadcast_to(reshape(x, {2, 1, 6}), {2, 4, 6}); });
    }
    {
        Tensor x = rand_leaf({2, 3, 4}, rng);
        fd_check("permute", {x}, [&] { return permute(x, {2, 0, 1}); });
        fd_check("transpose_last2", {x}, [&] { return transpose_last2(x); });
        fd_check("mean_axis", {x}, [&] { return mean_axis(x, 1); });
        fd_check("sum_all", {x}, [&] { return sum_all(x); });
    }
    {
        Tensor a = rand_leaf({2, 3}, rng), b = rand_leaf({2, 2}, rng);
        fd_check("concat", {a, b}, [&] { return concat({a, b}, 1); });
    }
    {
        Tensor x = rand_leaf({3, 4}, rng);
        std::vector<int64_t> idx = {1, 0, 3};
        fd_check("take_lastaxis", {x}, [&] { return take_lastaxis(x, idx); });
    }
    {
        Tensor logits = rand_leaf({3, 4}, rng, -2.0, 2.0);
        std::vector<int64_t> labels = {0, 3, 2};
        fd_check("cross_entropy_mean", {logits},
                 [&] { return cross_entropy_mean(logits, labels); });
        std::vector<double> weights = {1.0, 2.0, 1.5, 0.5};
        fd_check("cross_entropy_mean weighted", {logits},
                 [&] { return cross_entropy_mean(logits, labels, weights); });
    }

    // Full two-sample forward: every parameter tensor spot-checked on a few
    // coordinates against the same central differences.
    ModelConfig cfg;
    cfg.dim_h = cfg.dim_w = cfg.dim_d = 16;
    cfg.block = 8;
    cfg.patch = 4;
    cfg.embed = 32;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.labels = 2;
    cfg.validate();
    Model model(cfg, 77);
    for (const Parameter &p : model.parameters()) {
        if (p.name.size() >= 3 && p.name.compare(p.name.size() - 3, 3, ".wo") == 0) {
            Tensor t = p.tensor;
            for (auto &v : t.data_mut()) v = rng.uniform(-0.3, 0.3);
        }
    }
    auto make_volume = [&](uint64_t salt) {
        Volume v;
        v.h = v.w = v.d = 16;
        Rng vr(salt);
        v.voxels.resize(16 * 16 * 16);
        for (auto &x : v.voxels) x = static_cast<float>(vr.uniform(0.0, 1.0));
        return v;
    };
    Volume m0 = make_volume(1), m1 = make_volume(2), p0 = make_volume(3), p1 = make_volume(4);
    std::vector<const Volume *> mris = {&m0, &m1}, pets = {&p0, &p1};
    std::vector<int64_t> labels = {0, 1};
    auto loss = [&] { return cross_entropy_mean(model.forward(mris, pets), labels); };

    Tensor l = loss();
    for (Parameter &p : model.parameters()) p.tensor.zero_grad();
    backward(l);
    Rng pick(31);
    int checked = 0;
    for (const Parameter &p : model.parameters()) {
        const std::vector<double> *g = p.tensor.grad();
        require(g != nullptr, "model: parameter " + p.name + " got no gradient");
        int64_t n = p.tensor.numel();
        int64_t probes = std::min<int64_t>(n, 3);
        for (int64_t k = 0; k < probes; ++k) {
            size_t i = static_cast<size_t>(pick.uniform_u64(static_cast<uint64_t>(n)));
            Tensor t = p.tensor;
            double saved = t.data()[i];
            double eps = 1e-4, plus, minus;
            {
                NoGradGuard guard;
                t.data_mut()[i] = saved + eps;
                plus = loss().item();
                t.data_mut()[i] = saved - eps;
                minus = loss().item();
                t.data_mut()[i] = saved;
            }
            double numeric = (plus - minus) / (2 * eps);
            double analytic = (*g)[i];
            double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-2});
            if (std::abs(numeric - analytic) > 1e-3 * denom) {
                throw Failure("model parameter " + p.name + " coord " + std::to_string(i) +
                              ": analytic " + fmt(analytic) + " vs numeric " + fmt(numeric));
            }
            ++checked;
        }
    }
    require(checked > 200, "model spot-check covered too few coordinates");
}

// ---- criterion 2/3: bi-attention semantics ----------------------------------

AttentionParams random_attention(int64_t embed, int64_t heads, Rng &rng) {
    AttentionParams p = make_attention_params(embed, heads, rng);
    Tensor wo = p.wo;
    for (auto &v : wo.data_mut()) v = rng.uniform(-0.5, 0.5);
    return p;
}

// Plain-loop cross-attention with no thresholding: queries from xq, keys and
// values from xkv, output projected by the query-side wo.
std::vector<double> naive_cross_attention(const Tensor &xq, const Tensor &xkv,
                                          const AttentionParams &qp, const AttentionParams &kp,
                                          ScalingMode mode) {
    int64_t n = xq.shape()[0], m = xkv.shape()[0], f = xq.shape()[1];
    int64_t h = qp.n_heads, dh = f / h;
    double s = 1.0 / std::sqrt(double(mode == ScalingMode::per_head ? dh : f));
    auto cell = [f](const Tensor &t, int64_t r, int64_t c) {
        return t.data()[static_cast<size_t>(r * f + c)];
    };
    std::vector<double> merged(static_cast<size_t>(n * f), 0.0);
    for (int64_t head = 0; head < h; ++head) {
        std::vector<double> q(static_cast<size_t>(n * dh)), k(static_cast<size_t>(m * dh)),
            v(static_cast<size_t>(m * dh));
        for (int64_t i = 0; i < n; ++i)
            for (int64_t d = 0; d < dh; ++d) {
                double acc = 0;
                for (int64_t c = 0; c < f; ++c) acc += cell(xq, i, c) * cell(qp.wq, c, head * dh + d);
                q[static_cast<size_t>(i * dh + d)] = acc;
            }
        for (int64_t j = 0; j < m; ++j)
            for (int64_t d = 0; d < dh; ++d) {
                double ak = 0, av = 0;
                for (int64_t c = 0; c < f; ++c) {
                    ak += cell(xkv, j, c) * cell(kp.wk, c, head * dh + d);
                    av += cell(xkv, j, c) * cell(kp.wv, c, head * dh + d);
                }
                k[static_cast<size_t>(j * dh + d)] = ak;
                v[static_cast<size_t>(j * dh + d)] = av;
            }
        for (int64_t i = 0; i < n; ++i) {
            std::vector<double> logits(static_cast<size_t>(m));
            double mx = -1e300;
            for (int64_t j = 0; j < m; ++j) {
                double acc = 0;
                for (int64_t d = 0; d < dh; ++d)
                    acc += q[static_cast<size_t>(i * dh + d)] * k[static_cast<size_t>(j * dh + d)];
                logits[static_cast<size_t>(j)] = acc * s;
                mx = std::max(mx, logits[static_cast<size_t>(j)]);
            }
            double z = 0;
            for (auto &lv : logits) {
                lv = std::exp(lv - mx);
                z += lv;
            }
            for (auto &lv : logits) lv /= z;
            for (int64_t d = 0; d < dh; ++d) {
                double acc = 0;
                for (int64_t j = 0; j < m; ++j)
                    acc += logits[static_cast<size_t>(j)] * v[static_cast<size_t>(j * dh + d)];
                merged[static_cast<size_t>(i * f + head * dh + d)] = acc;
            }
        }
    }
    std::vector<double> out(static_cast<size_t>(n * f), 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < f; ++c) {
            double acc = 0;
            for (int64_t cc = 0; cc < f; ++cc)
                acc += merged[static_cast<size_t>(i * f + cc)] * cell(qp.wo, cc, c);
            out[static_cast<size_t>(i * f + c)] = acc;
        }
    return out;
}

void criterion_bi_attention() {
    Rng rng(99);
    int64_t f = 8, heads = 2;
    AttentionParams qp = random_attention(f, heads, rng);
    AttentionParams kp = random_attention(f, heads, rng);
    Tensor xq = rand_leaf({6, f}, rng), xkv = rand_leaf({5, f}, rng);

    for (ScalingMode mode : {ScalingMode::per_head, ScalingMode::whole_embedding}) {
        Tensor got = bi_attention(xq, xkv, qp, kp, 0.0, mode);
        std::vector<double> want = naive_cross_attention(xq, xkv, qp, kp, mode);
        double worst = 0;
        for (size_t i = 0; i < want.size(); ++i)
            worst = std::max(worst, std::abs(got.data()[i] - want[i]));
        require(worst <= 1e-10,
                "tau=0 deviates from the naive oracle by " + fmt(worst));
    }

    Tensor blocked = bi_attention(xq, xkv, qp, kp, 1.01);
    for (double v : blocked.data())
        require(v == 0.0, "tau>1 output is not exactly zero: " + fmt(v));

    Tensor z = bi_attention_scores(xq, xkv, qp, kp);
    double prev = -1;
    for (double tau : {0.0, 0.01, 0.1, 0.5, 1.01}) {
        double sp = mask_sparsity(z, tau);
        require(sp >= prev, "sparsity decreased at tau=" + fmt(tau));
        prev = sp;
    }
    require(mask_sparsity(z, 0.0) == 0.0, "sparsity at tau=0 should be 0");
    require(mask_sparsity(z, 1.01) == 1.0, "sparsity at tau>1 should be 1");
}

void criterion_asymmetry() {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed * 7919 + 13);
        int64_t f = 8, heads = 2;
        AttentionParams qp = random_attention(f, heads, rng);
        AttentionParams kp = random_attention(f, heads, rng);
        Tensor x = rand_leaf({5, f}, rng), y = rand_leaf({5, f}, rng);
        Tensor xy = bi_attention(x, y, qp, kp, 0.01);
        Tensor yx = bi_attention(y, x, qp, kp, 0.01);
        double diff = 0;
        for (size_t i = 0; i < xy.data().size(); ++i)
            diff = std::max(diff, std::abs(xy.data()[i] - yx.data()[i]));
        require(diff > 1e-6, "seed " + std::to_string(seed) +
                                 ": swapped arguments differ by only " + fmt(diff));
    }
}

// ---- criterion 4: dependency-removal recovery -------------------------------

void criterion_regbn_recovery() {
    Rng rng(314);
    int64_t f = 16, b = 32;
    std::vector<double> a(static_cast<size_t>(f * f));
    for (auto &v : a) v = rng.uniform(-0.5, 0.5);
    Tensor zp = Tensor::zeros({b, f});
    for (auto &v : zp.data_mut()) v = rng.uniform(-1.0, 1.0);
    Tensor zm = Tensor::zeros({b, f});
    for (int64_t r = 0; r < b; ++r)
        for (int64_t i = 0; i < f; ++i) {
            double acc = 0;
            for (int64_t j = 0; j < f; ++j)
                acc += a[static_cast<size_t>(i * f + j)] *
                       zp.data()[static_cast<size_t>(r * f + j)];
            zm.data_mut()[static_cast<size_t>(r * f + i)] = acc;
        }

    RegBNState st = RegBNState::init(f);
    st.ema_decay = 0.0;
    for (int i = 0; i < 30000; ++i) regbn_fit_step(st, zm, zp);

    double worst = 0;
    for (size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(st.omega.data()[i] - a[i]));
    require(worst <= 1e-3, "omega misses the mixing matrix by " + fmt(worst));

    Tensor residual = regbn_apply(st, zm, zp);
    double cross = 0;
    for (int64_t i = 0; i < f; ++i)
        for (int64_t j = 0; j < f; ++j) {
            double acc = 0;
            for (int64_t r = 0; r < b; ++r)
                acc += zp.data()[static_cast<size_t>(r * f + i)] *
                       residual.data()[static_cast<size_t>(r * f + j)];
            cross = std::max(cross, std::abs(acc) / double(b));
        }
    require(cross <= 1e-2, "residual cross-covariance " + fmt(cross) + " above 1e-2");
}

// ---- criterion 5: reference-config parameter count --------------------------

void criterion_parameter_count() {
    ModelConfig cfg;  // defaults are the reference config
    cfg.validate();
    int64_t count = count_parameters(cfg);
    int64_t lo = 25'500'000, hi = 34'500'000;
    require(count >= lo && count <= hi,
            "count " + std::to_string(count) + " outside [" + std::to_string(lo) + ", " +
                std::to_string(hi) + "]");
}

// ---- criteria 6-8: functional training probes --------------------------------

ModelConfig tiny_model(int64_t labels = 2) {
    ModelConfig cfg;
    cfg.dim_h = cfg.dim_w = cfg.dim_d = 16;
    cfg.block = 8;
    cfg.patch = 4;
    cfg.embed = 32;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.labels = labels;
    cfg.validate();
    return cfg;
}

TrainConfig quick_train(int64_t iterations, uint64_t seed) {
    TrainConfig tc;
    tc.lr_max = 1e-3;
    tc.batch_size = 16;
    tc.total_iterations = iterations;
    tc.val_interval = 50;
    tc.early_stop_patience = 10;
    tc.seed = seed;
    return tc;
}

Dataset synth_dataset(const SynthConfig &cfg, const std::string &name) {
    return load_dataset(generate_synthetic(cfg, scratch(name).string()));
}

void criterion_overfit() {
    SynthConfig sc;
    sc.n_subjects = 20;
    sc.shared_signal_strength = 0.4;
    sc.unique_m_strength = 0.4;
    sc.unique_p_strength = 0.4;
    sc.noise_sigma = 0.02;
    sc.seed = 11;
    Dataset train_set = synth_dataset(sc, "overfit");

    Model model(tiny_model(), 11);
    TrainConfig tc = quick_train(300, 11);
    tc.batch_size = 8;
    TrainResult res = train(model, train_set, Dataset{}, tc);
    require(res.iterations_run <= 300, "ran past the iteration budget");
    double bacc = evaluate(model, train_set).bacc;
    require(bacc >= 0.95, "training bacc " + fmt(bacc) + " below 0.95");
}

void criterion_shared_signal() {
    SynthConfig sc;
    sc.n_subjects = 200;
    sc.shared_signal_strength = 0.5;
    sc.unique_m_strength = 0.0;
    sc.unique_p_strength = 0.0;
    sc.noise_sigma = 0.05;
    sc.seed = 3;
    Dataset full = synth_dataset(sc, "shared_signal");
    SplitAssignment split = propensity_split(full.records, SplitRatios{}, 25, 3);
    Dataset train_set = dataset_subset(full, split.assignment, SplitSet::train);
    Dataset val_set = dataset_subset(full, split.assignment, SplitSet::val);
    Dataset test_set = dataset_subset(full, split.assignment, SplitSet::test);

    ModelConfig mc = tiny_model();
    mc.branches.use_m = false;
    mc.branches.use_p = false;
    mc.branches.use_mp = true;
    Model model(mc, 3);
    train(model, train_set, val_set, quick_train(400, 3));
    double bacc = evaluate(model, test_set).bacc;
    require(bacc >= 0.80, "cross-modal-only test bacc " + fmt(bacc) + " below 0.80");

    SynthConfig noise = sc;
    noise.shared_signal_strength = 0.0;
    Dataset noise_full = synth_dataset(noise, "noise_control");
    SplitAssignment nsplit = propensity_split(noise_full.records, SplitRatios{}, 25, 3);
    Dataset ntrain = dataset_subset(noise_full, nsplit.assignment, SplitSet::train);
    Dataset nval = dataset_subset(noise_full, nsplit.assignment, SplitSet::val);
    Dataset ntest = dataset_subset(noise_full, nsplit.assignment, SplitSet::test);
    Model control(mc, 3);
    train(control, ntrain, nval, quick_train(400, 3));
    // Chance level on everything the control never trained on.
    Dataset held;
    for (const Dataset *part : {&nval, &ntest}) {
        held.mri.insert(held.mri.end(), part->mri.begin(), part->mri.end());
        held.pet.insert(held.pet.end(), part->pet.begin(), part->pet.end());
        held.labels.insert(held.labels.end(), part->labels.begin(), part->labels.end());
        held.records.insert(held.records.end(), part->records.begin(), part->records.end());
    }
    double control_bacc = evaluate(control, held).bacc;
    require(std::abs(control_bacc - 0.5) <= 0.1,
            "noise control bacc " + fmt(control_bacc) + " outside 0.5 +/- 0.1");
}

void criterion_branch_ordering() {
    SynthConfig sc;
    sc.n_subjects = 120;
    sc.shared_signal_strength = 0.35;
    sc.unique_m_strength = 0.35;
    sc.unique_p_strength = 0.35;
    sc.noise_sigma = 0.05;
    sc.seed = 7;
    Dataset full = synth_dataset(sc, "branch_ordering");
    SplitAssignment split = propensity_split(full.records, SplitRatios{}, 25, 7);
    Dataset train_set = dataset_subset(full, split.assignment, SplitSet::train);
    Dataset val_set = dataset_subset(full, split.assignment, SplitSet::val);
    Dataset test_set = dataset_subset(full, split.assignment, SplitSet::test);

    std::map<std::string, double> means;
    for (const AblationVariant &variant : axis_variants(AblationAxis::branches, tiny_model())) {
        if (variant.name != "M" && variant.name != "P" && variant.name != "MP" &&
            variant.name != "M+P+MP")
            continue;
        double sum = 0;
        for (uint64_t s = 0; s < 3; ++s) {
            Model model(variant.cfg, 100 + s);
            train(model, train_set, val_set, quick_train(300, 100 + s));
            sum += evaluate(model, test_set).bacc;
        }
        means[variant.name] = sum / 3.0;
    }
    for (const char *single : {"M", "P", "MP"}) {
        require(means["M+P+MP"] >= means[single],
                std::string("all-branch mean ") + fmt(means["M+P+MP"]) + " below " + single +
                    " mean " + fmt(means[single]));
    }
}

// ---- criterion 9: metrics against a brute-force recount ---------------------

struct BruteForce {
    double bacc, macro_p, macro_r, macro_f, auc;
    bool has_auc, warning;
};

BruteForce brute_force(const std::vector<int64_t> &labels,
                       const std::vector<std::vector<double>> &scores) {
    size_t L = scores.front().size(), n = labels.size();
    std::vector<int64_t> preds(n);
    for (size_t i = 0; i < n; ++i) {
        int64_t best = 0;
        for (size_t c = 1; c < L; ++c)
            if (scores[i][c] > scores[i][size_t(best)]) best = int64_t(c);
        preds[i] = best;
    }
    BruteForce out{0, 0, 0, 0, 0, false, false};
    int64_t present = 0;
    for (size_t c = 0; c < L; ++c) {
        int64_t tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < n; ++i) {
            bool is_c = labels[i] == int64_t(c), pred_c = preds[i] == int64_t(c);
            if (is_c && pred_c) ++tp;
            if (!is_c && pred_c) ++fp;
            if (is_c && !pred_c) ++fn;
        }
        double p = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
        double r = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
        double f = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
        out.macro_p += p;
        out.macro_r += r;
        out.macro_f += f;
        if (tp + fn > 0) {
            out.bacc += r;
            ++present;
        } else {
            out.warning = true;
        }
    }
    out.bacc /= double(present);
    out.macro_p /= double(L);
    out.macro_r /= double(L);
    out.macro_f /= double(L);
    if (L == 2 && !out.warning) {
        double conc = 0, pairs = 0;
        for (size_t i = 0; i < n; ++i) {
            if (labels[i] != 1) continue;
            for (size_t j = 0; j < n; ++j) {
                if (labels[j] != 0) continue;
                pairs += 1;
                if (scores[i][1] > scores[j][1]) conc += 1.0;
                else if (scores[i][1] == scores[j][1]) conc += 0.5;
            }
        }
        out.auc = conc / pairs;
        out.has_auc = true;
    }
    return out;
}

void criterion_metrics() {
    Rng rng(555);
    for (int trial = 0; trial < 200; ++trial) {
        size_t n_classes = 2 + size_t(rng.uniform_u64(3));
        size_t n = 1 + size_t(rng.uniform_u64(60));
        size_t usable = (rng.uniform() < 0.3 && n_classes > 2) ? n_classes - 1 : n_classes;
        std::vector<int64_t> labels;
        std::vector<std::vector<double>> scores;
        for (size_t i = 0; i < n; ++i) {
            labels.push_back(int64_t(rng.uniform_u64(usable)));
            std::vector<double> row(n_classes);
            if (rng.uniform() < 0.1) {
                for (auto &v : row) v = 1.0 / double(n_classes);
            } else {
                double sum = 0;
                for (auto &v : row) {
                    v = rng.uniform(0.01, 1.0);
                    sum += v;
                }
                for (auto &v : row) v /= sum;
            }
            scores.push_back(std::move(row));
        }
        MetricsReport got = compute_metrics(labels, scores);
        BruteForce want = brute_force(labels, scores);
        require(got.bacc == want.bacc, "trial " + std::to_string(trial) + ": bacc mismatch");
        require(got.macro_precision == want.macro_p,
                "trial " + std::to_string(trial) + ": macro precision mismatch");
        require(got.macro_recall == want.macro_r,
                "trial " + std::to_string(trial) + ": macro recall mismatch");
        require(got.macro_f1 == want.macro_f,
                "trial " + std::to_string(trial) + ": macro f1 mismatch");
        require(got.has_auc == want.has_auc,
                "trial " + std::to_string(trial) + ": auc availability mismatch");
        if (got.has_auc)
            require(got.auc == want.auc, "trial " + std::to_string(trial) + ": auc mismatch");
        require(got.absent_class_warning == want.warning,
                "trial " + std::to_string(trial) + ": warning mismatch");
    }

    // Hand case: recalls 0.9 and 0.8 average to bacc 0.85.
    std::vector<int64_t> labels;
    std::vector<std::vector<double>> scores;
    auto add = [&](int64_t truth, int64_t pred, int count) {
        for (int i = 0; i < count; ++i) {
            labels.push_back(truth);
            scores.push_back(pred == 1 ? std::vector<double>{0.3, 0.7}
                                       : std::vector<double>{0.7, 0.3});
        }
    };
    add(0, 0, 9);
    add(0, 1, 1);
    add(1, 1, 8);
    add(1, 0, 2);
    MetricsReport hand = compute_metrics(labels, scores);
    double want_bacc = (9.0 / 10.0 + 8.0 / 10.0) / 2.0;  // 0.85
    require(hand.bacc == want_bacc, "hand bacc " + fmt(hand.bacc) + " != 0.85");

    // Perfectly separated scores give auc 1; constant scores give auc 0.5.
    std::vector<int64_t> sep_labels = {0, 0, 1, 1};
    std::vector<std::vector<double>> sep = {{0.9, 0.1}, {0.8, 0.2}, {0.2, 0.8}, {0.1, 0.9}};
    require(compute_metrics(sep_labels, sep).auc == 1.0, "separable auc != 1.0");
    std::vector<std::vector<double>> flat = {{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}};
    require(compute_metrics(sep_labels, flat).auc == 0.5, "constant auc != 0.5");
}

// ---- criterion 10: confounded-manifest splitting -----------------------------

void criterion_splitter() {
    SynthConfig sc;
    sc.n_subjects = 120;
    sc.dim_h = sc.dim_w = sc.dim_d = 8;
    sc.seed = 9;
    sc.age_means = {64.0, 76.0};
    sc.age_sigmas = {3.0, 3.0};
    sc.female_rates = {0.65, 0.35};
    std::vector<SubjectRecord> records =
        generate_synthetic(sc, scratch("splitter").string());

    SplitRatios ratios;
    SplitAssignment first = propensity_split(records, ratios, 200, 4);
    SplitAssignment second = propensity_split(records, ratios, 200, 4);
    require(first.assignment == second.assignment, "repeated split differs");
    require(first.imbalance == second.imbalance, "repeated imbalance differs");

    std::vector<double> imbalances;
    for (int64_t j = 0; j < 200; ++j) {
        Rng root(4);
        Rng cand = root.fork(static_cast<uint64_t>(j));
        std::vector<SplitSet> sets = stratified_candidate(records, ratios, cand);
        imbalances.push_back(propensity_imbalance(records, sets));
    }
    std::vector<double> sorted = imbalances;
    std::sort(sorted.begin(), sorted.end());
    double median = 0.5 * (sorted[99] + sorted[100]);
    require(first.imbalance <= median, "selected imbalance " + fmt(first.imbalance) +
                                           " above candidate median " + fmt(median));
    require(first.imbalance == sorted.front(),
            "selected imbalance is not the candidate minimum");

    std::map<int64_t, std::map<SplitSet, int64_t>> counts;
    std::map<int64_t, int64_t> totals;
    for (const SubjectRecord &r : records) {
        ++counts[r.diagnosis][first.assignment.at(r.id)];
        ++totals[r.diagnosis];
    }
    for (const auto &[cls, per_set] : counts) {
        for (auto [set, ratio] : std::initializer_list<std::pair<SplitSet, double>>{
                 {SplitSet::train, ratios.train},
                 {SplitSet::val, ratios.val},
                 {SplitSet::test, ratios.test}}) {
            auto it = per_set.find(set);
            double got = it == per_set.end() ? 0.0 : double(it->second);
            double want = double(totals[cls]) * ratio;
            require(std::abs(got - want) <= 1.0 + 1e-9,
                    "class " + std::to_string(cls) + " deviates by " + fmt(got - want) +
                        " subjects from its quota");
        }
    }
}

// ---- criterion 11: on-disk formats -------------------------------------------

std::string slurp_bytes(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit_bytes(const fs::path &p, const std::string &bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void criterion_formats() {
    fs::path dir = scratch("formats");

    Volume v;
    v.h = 5;
    v.w = 4;
    v.d = 3;
    Rng rng(8);
    v.voxels.resize(60);
    for (auto &x : v.voxels) x = static_cast<float>(rng.uniform(0.0, 1.0));
    fs::path vol_path = dir / "v.dmvol";
    save_volume(v, vol_path.string());
    std::string bytes1 = slurp_bytes(vol_path);
    Volume loaded = load_volume(vol_path.string());
    require(loaded.voxels == v.voxels && loaded.h == v.h && loaded.w == v.w && loaded.d == v.d,
            "volume round trip changed the payload");
    save_volume(loaded, vol_path.string());
    require(slurp_bytes(vol_path) == bytes1, "volume re-save is not byte-identical");

    std::string corrupt = bytes1;
    corrupt[0] ^= 0x5a;
    spit_bytes(dir / "bad_magic.dmvol", corrupt);
    bool threw = false;
    try {
        load_volume((dir / "bad_magic.dmvol").string());
    } catch (const FormatError &e) {
        threw = std::string(e.what()).find("magic") != std::string::npos;
    }
    require(threw, "corrupted magic did not raise the format error");
    spit_bytes(dir / "short.dmvol", bytes1.substr(0, 10));
    threw = false;
    try {
        load_volume((dir / "short.dmvol").string());
    } catch (const FormatError &) {
        threw = true;
    }
    require(threw, "truncated header did not raise the format error");
    spit_bytes(dir / "cut.dmvol", bytes1.substr(0, bytes1.size() - 7));
    threw = false;
    try {
        load_volume((dir / "cut.dmvol").string());
    } catch (const FormatError &e) {
        threw = std::string(e.what()).find("truncated") != std::string::npos;
    }
    require(threw, "truncated payload did not raise the format error");

    ModelConfig mc;
    mc.dim_h = mc.dim_w = mc.dim_d = 8;
    mc.block = 8;
    mc.patch = 4;
    mc.embed = 16;
    mc.depth = 1;
    mc.heads = 2;
    mc.validate();
    Model model(mc, 21);
    Rng wr(22);
    for (const Parameter &p : model.parameters()) {
        if (p.name.size() >= 3 && p.name.compare(p.name.size() - 3, 3, ".wo") == 0) {
            Tensor t = p.tensor;
            for (auto &x : t.data_mut()) x = wr.uniform(-0.3, 0.3);
        }
    }
    Tensor zm = rand_leaf({4, mc.embed}, wr).detach();
    Tensor zp = rand_leaf({4, mc.embed}, wr).detach();
    for (int i = 0; i < 20; ++i) regbn_fit_step(model.regbn_state(), zm, zp);

    fs::path ckpt = dir / "m.ckpt";
    save_checkpoint(model, ckpt.string());
    std::string cbytes1 = slurp_bytes(ckpt);
    Model restored = load_checkpoint(ckpt.string());
    auto orig = model.parameters();
    auto back = restored.parameters();
    require(orig.size() == back.size(), "restored model has a different parameter list");
    for (size_t i = 0; i < orig.size(); ++i) {
        require(orig[i].name == back[i].name, "parameter order changed across the round trip");
        require(orig[i].tensor.data() == back[i].tensor.data(),
                "parameter " + orig[i].name + " changed across the round trip");
    }
    require(restored.regbn_state().omega.data() == model.regbn_state().omega.data(),
            "fitted omega changed across the round trip");
    save_checkpoint(restored, ckpt.string());
    require(slurp_bytes(ckpt) == cbytes1, "checkpoint re-save is not byte-identical");

    std::string cbad = cbytes1;
    cbad[2] ^= 0x11;
    spit_bytes(dir / "bad.ckpt", cbad);
    threw = false;
    try {
        load_checkpoint((dir / "bad.ckpt").string());
    } catch (const FormatError &e) {
        threw = std::string(e.what()).find("magic") != std::string::npos;
    }
    require(threw, "corrupted checkpoint magic did not raise the format error");
    spit_bytes(dir / "cut.ckpt", cbytes1.substr(0, cbytes1.size() / 2));
    threw = false;
    try {
        load_checkpoint((dir / "cut.ckpt").string());
    } catch (const FormatError &e) {
        threw = std::string(e.what()).find("truncated") != std::string::npos;
    }
    require(threw, "truncated checkpoint did not raise the format error");
}

struct Criterion {
    int id;
    const char *title;
    std::function<void()> body;
};

}  // namespace

int main() {
    std::vector<Criterion> criteria = {
        {1, "op and full-model gradients match central finite differences", criterion_gradients},
        {2, "thresholded cross-attention matches the naive oracle and mask semantics",
         criterion_bi_attention},
        {3, "cross-attention is asymmetric in its arguments", criterion_asymmetry},
        {4, "dependency removal recovers a planted linear mixing", criterion_regbn_recovery},
        {5, "reference config lands within 30M +/- 15% parameters", criterion_parameter_count},
        {6, "tiny model overfits 20 subjects within 300 iterations", criterion_overfit},
        {7, "cross-modal branch alone separates a shared-signal task", criterion_shared_signal},
        {8, "all branches together at least match every single branch", criterion_branch_ordering},
        {9, "metrics match a brute-force recount plus hand cases", criterion_metrics},
        {10, "splitter balances a deliberately confounded manifest", criterion_splitter},
        {11, "volume and checkpoint formats round-trip bit-exactly", criterion_formats},
    };

    int failures = 0;
    for (const Criterion &c : criteria) {
        auto start = std::chrono::steady_clock::now();
        std::string verdict = "PASS", detail;
        try {
            c.body();
        } catch (const Failure &e) {
            verdict = "FAIL";
            detail = e.what();
        } catch (const std::exception &e) {
            verdict = "FAIL";
            detail = std::string("unexpected error: ") + e.what();
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (verdict == "PASS") {
            std::printf("[PASS] %2d. %s (%.1fs)\n", c.id, c.title, secs);
        } else {
            std::printf("[FAIL] %2d. %s (%.1fs): %s\n", c.id, c.title, secs, detail.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", int(criteria.size()) - failures, criteria.size());
    return failures;
}
