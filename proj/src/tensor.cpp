#include "dmvt/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace dmvt {

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<Precision> g_precision{Precision::f64};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapConst = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

using BackFn = std::function<void(const TensorImpl &,
                                  const std::vector<std::shared_ptr<TensorImpl>> &)>;

std::vector<int64_t> row_major_strides(const Shape &s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (int64_t i = static_cast<int64_t>(s.size()) - 1; i >= 0; --i) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

// Strides of `shape` viewed inside `out` (trailing-aligned); 0 where broadcast.
std::vector<int64_t> broadcast_strides(const Shape &shape, const Shape &out) {
    auto own = row_major_strides(shape);
    std::vector<int64_t> st(out.size(), 0);
    size_t off = out.size() - shape.size();
    for (size_t i = 0; i < shape.size(); ++i) {
        st[off + i] = (shape[i] == 1 && out[off + i] != 1) ? 0 : own[i];
    }
    return st;
}

Shape broadcast_shapes(const Shape &a, const Shape &b, const char *op) {
    size_t n = std::max(a.size(), b.size());
    Shape out(n);
    for (size_t i = 0; i < n; ++i) {
        int64_t ea = i < n - a.size() ? 1 : a[i - (n - a.size())];
        int64_t eb = i < n - b.size() ? 1 : b[i - (n - b.size())];
        if (ea != eb && ea != 1 && eb != 1) {
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                             shape_str(b) + " are not broadcastable");
        }
        out[i] = std::max(ea, eb);
    }
    return out;
}

// Walk the output index space once, handing flat offsets into two broadcast
// inputs to fn(out_i, a_off, b_off).
template <class F>
void for_each_bcast2(const Shape &out, const Shape &as, const Shape &bs, F fn) {
    int64_t total = shape_numel(out);
    if (total == 0) return;
    size_t nd = out.size();
    if (nd == 0) {
        fn(0, 0, 0);
        return;
    }
    auto sa = broadcast_strides(as, out);
    auto sb = broadcast_strides(bs, out);
    std::vector<int64_t> idx(nd, 0);
    int64_t ao = 0, bo = 0;
    for (int64_t i = 0; i < total; ++i) {
        fn(i, ao, bo);
        for (int64_t d = static_cast<int64_t>(nd) - 1; d >= 0; --d) {
            ++idx[d];
            ao += sa[d];
            bo += sb[d];
            if (idx[d] < out[d]) break;
            idx[d] = 0;
            ao -= sa[d] * out[d];
            bo -= sb[d] * out[d];
        }
    }
}

// Sum `g` (laid out as gshape) down to `target` (broadcastable into gshape).
std::vector<double> reduce_to_shape(const std::vector<double> &g, const Shape &gshape,
                                    const Shape &target) {
    if (gshape == target) return g;
    std::vector<double> out(static_cast<size_t>(shape_numel(target)), 0.0);
    size_t nd = gshape.size();
    auto st = broadcast_strides(target, gshape);
    std::vector<int64_t> idx(nd, 0);
    int64_t to = 0;
    for (size_t i = 0; i < g.size(); ++i) {
        out[static_cast<size_t>(to)] += g[i];
        for (int64_t d = static_cast<int64_t>(nd) - 1; d >= 0; --d) {
            ++idx[d];
            to += st[d];
            if (idx[d] < gshape[d]) break;
            idx[d] = 0;
            to -= st[d] * gshape[d];
        }
    }
    return out;
}

void accumulate(const std::shared_ptr<TensorImpl> &t, const std::vector<double> &g) {
    if (!t->grad) t->grad = std::make_unique<std::vector<double>>(t->data.size(), 0.0);
    auto &dst = *t->grad;
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

std::vector<double> &grad_of(const TensorImpl &t) { return *t.grad; }

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   BackFn fn) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    if (g_precision.load() == Precision::f32) {
        for (auto &v : impl->data) v = static_cast<double>(static_cast<float>(v));
    }
    bool rec = false;
    if (g_grad_enabled) {
        for (const auto &in : inputs) rec = rec || in.requires_grad();
    }
    if (rec) {
        impl->requires_grad = true;
        impl->parents.reserve(inputs.size());
        for (const auto &in : inputs) impl->parents.push_back(in.impl_ptr());
        impl->backward_fn = std::move(fn);
    }
    return Tensor(impl);
}

void check_defined(const Tensor &t, const char *op) {
    if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void check_finite_data(const Tensor &t, const char *op) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": non-finite input value");
        }
    }
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

std::string shape_str(const Shape &s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

int64_t shape_numel(const Shape &s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

void set_compute_precision(Precision p) { g_precision.store(p); }
Precision compute_precision() { return g_precision.load(); }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(const Shape &shape) { return full(shape, 0.0); }

Tensor Tensor::full(const Shape &shape, double value) {
    for (int64_t e : shape) {
        if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data.assign(static_cast<size_t>(shape_numel(shape)), value);
    return Tensor(impl);
}

Tensor Tensor::from_data(const Shape &shape, std::vector<double> data) {
    for (int64_t e : shape) {
        if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data = std::move(data);
    return Tensor(impl);
}

Tensor Tensor::scalar(double value) {
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(1, value);
    return Tensor(impl);
}

const Shape &Tensor::shape() const { return impl_->shape; }
int64_t Tensor::ndim() const { return static_cast<int64_t>(impl_->shape.size()); }
int64_t Tensor::numel() const { return shape_numel(impl_->shape); }

int64_t Tensor::extent(int64_t axis) const {
    int64_t n = ndim();
    if (axis < 0) axis += n;
    if (axis < 0 || axis >= n) throw ShapeError("axis out of range for " + shape_str(shape()));
    return impl_->shape[static_cast<size_t>(axis)];
}

const std::vector<double> &Tensor::data() const { return impl_->data; }
std::vector<double> &Tensor::data_mut() { return impl_->data; }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor &Tensor::set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    return *this;
}

const std::vector<double> *Tensor::grad() const {
    return impl_->grad ? impl_->grad.get() : nullptr;
}

std::vector<double> &Tensor::grad_mut() {
    if (!impl_->grad) impl_->grad = std::make_unique<std::vector<double>>(impl_->data.size(), 0.0);
    return *impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), 0.0);
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return Tensor(impl);
}

Tensor Tensor::clone_values() const { return detach(); }

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor &a, const Tensor &b) {
    check_defined(a, "add");
    check_defined(b, "add");
    Shape out = broadcast_shapes(a.shape(), b.shape(), "add");
    std::vector<double> data(static_cast<size_t>(shape_numel(out)));
    const auto &ad = a.data();
    const auto &bd = b.data();
    if (a.shape() == b.shape()) {
        for (size_t i = 0; i < data.size(); ++i) data[i] = ad[i] + bd[i];
    } else {
        for_each_bcast2(out, a.shape(), b.shape(), [&](int64_t i, int64_t ao, int64_t bo) {
            data[static_cast<size_t>(i)] = ad[static_cast<size_t>(ao)] + bd[static_cast<size_t>(bo)];
        });
    }
    Shape as = a.shape(), bs = b.shape();
    return make_result(out, std::move(data), {a, b},
                       [as, bs, out](const TensorImpl &self, const auto &parents) {
                           const auto &g = grad_of(self);
                           if (parents[0]->requires_grad)
                               accumulate(parents[0], reduce_to_shape(g, out, as));
                           if (parents[1]->requires_grad)
                               accumulate(parents[1], reduce_to_shape(g, out, bs));
                       });
}

Tensor sub(const Tensor &a, const Tensor &b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor &a, const Tensor &b) {
    check_defined(a, "mul");
    check_defined(b, "mul");
    Shape out = broadcast_shapes(a.shape(), b.shape(), "mul");
    std::vector<double> data(static_cast<size_t>(shape_numel(out)));
    const auto &ad = a.data();
    const auto &bd = b.data();
    if (a.shape() == b.shape()) {
        for (size_t i = 0; i < data.size(); ++i) data[i] = ad[i] * bd[i];
    } else {
        for_each_bcast2(out, a.shape(), b.shape(), [&](int64_t i, int64_t ao, int64_t bo) {
            data[static_cast<size_t>(i)] = ad[static_cast<size_t>(ao)] * bd[static_cast<size_t>(bo)];
        });
    }
    Shape as = a.shape(), bs = b.shape();
    return make_result(out, std::move(data), {a, b},
                       [as, bs, out](const TensorImpl &self, const auto &parents) {
                           const auto &g = grad_of(self);
                           const auto &av = parents[0]->data;
                           const auto &bv = parents[1]->data;
                           if (parents[0]->requires_grad) {
                               std::vector<double> ga(g.size());
                               for_each_bcast2(out, as, bs, [&](int64_t i, int64_t, int64_t bo) {
                                   ga[static_cast<size_t>(i)] =
                                       g[static_cast<size_t>(i)] * bv[static_cast<size_t>(bo)];
                               });
                               accumulate(parents[0], reduce_to_shape(ga, out, as));
                           }
                           if (parents[1]->requires_grad) {
                               std::vector<double> gb(g.size());
                               for_each_bcast2(out, as, bs, [&](int64_t i, int64_t ao, int64_t) {
                                   gb[static_cast<size_t>(i)] =
                                       g[static_cast<size_t>(i)] * av[static_cast<size_t>(ao)];
                               });
                               accumulate(parents[1], reduce_to_shape(gb, out, bs));
                           }
                       });
}

Tensor scale(const Tensor &a, double c) {
    check_defined(a, "scale");
    std::vector<double> data(a.data().size());
    for (size_t i = 0; i < data.size(); ++i) data[i] = a.data()[i] * c;
    return make_result(a.shape(), std::move(data), {a},
                       [c](const TensorImpl &self, const auto &parents) {
                           const auto &g = grad_of(self);
                           std::vector<double> ga(g.size());
                           for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * c;
                           accumulate(parents[0], ga);
                       });
}

Tensor neg(const Tensor &a) { return scale(a, -1.0); }

// ---- matmul ----------------------------------------------------------------

namespace {

struct MatmulPlan {
    Shape batch;            // broadcast batch extents
    Shape out;              // batch + {i, j}
    int64_t i, k, j;
    std::vector<int64_t> a_boffs, b_boffs;  // flat base offset per batch element
};

MatmulPlan plan_matmul(const Shape &as, const Shape &bs) {
    if (as.size() < 2 || bs.size() < 2) {
        throw ShapeError("matmul requires rank >= 2, got " + shape_str(as) + " and " +
                         shape_str(bs));
    }
    MatmulPlan p;
    p.i = as[as.size() - 2];
    p.k = as[as.size() - 1];
    p.j = bs[bs.size() - 1];
    if (bs[bs.size() - 2] != p.k) {
        throw ShapeError("matmul: inner extents differ between " + shape_str(as) + " and " +
                         shape_str(bs));
    }
    Shape abatch(as.begin(), as.end() - 2);
    Shape bbatch(bs.begin(), bs.end() - 2);
    p.batch = broadcast_shapes(abatch, bbatch, "matmul");
    p.out = p.batch;
    p.out.push_back(p.i);
    p.out.push_back(p.j);

    int64_t nb = shape_numel(p.batch);
    p.a_boffs.resize(static_cast<size_t>(nb));
    p.b_boffs.resize(static_cast<size_t>(nb));
    int64_t amat = p.i * p.k, bmat = p.k * p.j;
    size_t idx = 0;
    for_each_bcast2(p.batch, abatch, bbatch, [&](int64_t, int64_t ao, int64_t bo) {
        p.a_boffs[idx] = ao * amat;
        p.b_boffs[idx] = bo * bmat;
        ++idx;
    });
    return p;
}

}  // namespace

Tensor matmul(const Tensor &a, const Tensor &b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    MatmulPlan p = plan_matmul(a.shape(), b.shape());
    std::vector<double> data(static_cast<size_t>(shape_numel(p.out)));
    const double *ad = a.data().data();
    const double *bd = b.data().data();
    int64_t omat = p.i * p.j;
    for (size_t n = 0; n < p.a_boffs.size(); ++n) {
        MapConst A(ad + p.a_boffs[n], p.i, p.k);
        MapConst B(bd + p.b_boffs[n], p.k, p.j);
        Map C(data.data() + static_cast<int64_t>(n) * omat, p.i, p.j);
        C.noalias() = A * B;
    }
    Shape as = a.shape(), bs = b.shape();
    return make_result(p.out, std::move(data), {a, b},
                       [p, as, bs](const TensorImpl &self, const auto &parents) {
                           const auto &g = grad_of(self);
                           int64_t omat = p.i * p.j;
                           if (parents[0]->requires_grad) {
                               Shape fa = p.batch;
                               fa.push_back(p.i);
                               fa.push_back(p.k);
                               std::vector<double> da(static_cast<size_t>(shape_numel(fa)), 0.0);
                               int64_t amat = p.i * p.k;
                               for (size_t n = 0; n < p.a_boffs.size(); ++n) {
                                   MapConst G(g.data() + static_cast<int64_t>(n) * omat, p.i, p.j);
                                   MapConst B(parents[1]->data.data() + p.b_boffs[n], p.k, p.j);
                                   Map DA(da.data() + static_cast<int64_t>(n) * amat, p.i, p.k);
                                   DA.noalias() += G * B.transpose();
                               }
                               accumulate(parents[0], reduce_to_shape(da, fa, as));
                           }
                           if (parents[1]->requires_grad) {
                               Shape fb = p.batch;
                               fb.push_back(p.k);
                               fb.push_back(p.j);
                               std::vector<double> db(static_cast<size_t>(shape_numel(fb)), 0.0);
                               int64_t bmat = p.k * p.j;
                               for (size_t n = 0; n < p.b_boffs.size(); ++n) {
                                   MapConst G(g.data() + static_cast<int64_t>(n) * omat, p.i, p.j);
                                   MapConst A(parents[0]->data.data() + p.a_boffs[n], p.i, p.k);
                                   Map DB(db.data() + static_cast<int64_t>(n) * bmat, p.k, p.j);
                                   DB.noalias() += A.transpose() * G;
                               }
                               accumulate(parents[1], reduce_to_shape(db, fb, bs));
                           }
                       });
}

// ---- softmax / log-softmax -------------------------------------------------

Tensor softmax_lastaxis(const Tensor &x) {
    check_defined(x, "softmax");
    if (x.ndim() < 1) throw ShapeError("softmax requires rank >= 1");
    check_finite_data(x, "softmax");
    int64_t m = x.shape().back();
    int64_t rows = x.numel() / m;
    std::vector<double> data(x.data().size());
    const auto &xd = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double *src = xd.data() + r * m;
        double *dst = data.data() + r * m;
        double mx = src[0];
        for (int64_t i = 1; i < m; ++i) mx = std::max(mx, src[i]);
        double sum = 0.0;
        for (int64_t i = 0; i < m; ++i) {
            dst[i] = std::exp(src[i] - mx);
            sum += dst[i];
        }
        for (int64_t i = 0; i < m; ++i) dst[i] /= sum;
    }
    return make_result(x.shape(), std::move(data), {x},
                       [m](const TensorImpl &self, const auto &parents) {
                           const auto &g = grad_of(self);
                           const auto &s = self.data;
                           std::vector<double> gx(g.size());
                           int64_t rows = static_cast<int64_t>(g.size()) / m;
                           for (int64_t r = 0; r < rows; ++r) {
                               const double *gp = g.data() + r * m;
                               const double *sp = s.data() + r * m;
                               double dot = 0.0;
                               for (int64_t i = 0; i < m; ++i) dot += gp[i] * sp[i];
                               double *out = gx.data() + r * m;
                               for (int64_t i = 0; i < m; ++i) out[i] = sp[i] * (gp[i] - dot);
                           }
                           accumulate(parents[0], gx);
                       });
}

Tensor log_softmax_lastaxis(const Tensor &x) {
    check_defined(x, "log_softmax");
    if (x.ndim() < 1) throw ShapeError("log_softmax requires rank >= 1");
    check_finite_data(x, "log_softmax");
    int64_t m = x.shape().back();
    int64_t rows = x.numel() / m;
    std::vector<double> data(x.data().size());
    const auto &xd = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double *src = xd.data() + r * m;
        double *dst = data.data() + r * m;
        double mx = src[0];
        for (int64_t i = 1; i < m; ++i) mx = std::max(mx, src[i]);
        double sum = 0.0;
        for (int64_t i = 0; i < m; ++i) sum += std::exp(src[i] - mx);
        double lse = mx + std::log(sum);
        for (int64_t i = 0; i < m; ++i) dst[i] = src[i] - lse;
    }
    return make_result(x.shape(), std::move(data), {x},
                       [m](const TensorImpl &self, const auto &parents) {
                           const auto &g = grad_of(self);
                           const auto &ls = self.data;
                           std::vector<double> gx(g.size());
                           int64_t rows = static_cast<int64_t>(g.size()) / m;
                           for (int64_t r = 0; r < rows; ++r) {
                               const double *gp = g.data() + r * m;
                               const double *lp = ls.data() + r * m;
                               double gs = 0.0;
                               for (int64_t i = 0; i < m; ++i) gs += gp[i];
                               double *out = gx.data() + r * m;
                               for (int64_t i = 0; i < m; ++i)
                                   out[i] = gp[i] - std::exp(lp[i]) * gs;
                           }
                           accumulate(parents[0], gx);
                       });
}

// ---- layer norm ------------------------------------------------------------

Tensor layer_norm(const Tensor &x, const Tensor &gain, const Tensor &bias, double eps) {
    check_defined(x, "layer_norm");
    check_defined(gain, "layer_norm");
    check_defined(bias, "layer_norm");
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    if (x.ndim() < 1) throw ShapeError("layer_norm requires rank >= 1");
    int64_t m = x.shape().back();
    if (gain.shape() != Shape{m} || bias.shape() != Shape{m}) {
        throw ShapeError("layer_norm: gain/bias must be " + shape_str({m}) + ", got " +
                         shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    }
    int64_t rows = x.numel() / m;
    std::vector<double> data(x.data().size());
    std::vector<double> xhat(x.data().size());
    std::vector<double> inv(static_cast<size_t>(rows));
    const auto &xd = x.data();
    const auto &gd = gain.data();
    const auto &bd = bias.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double *src = xd.data() + r * m;
        double mu = 0.0;
        for (int64_t i = 0; i < m; ++i) mu += src[i];
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (int64_t i = 0; i < m; ++i) {
            double d = src[i] - mu;
            var += d * d;
        }
        var /= static_cast<double>(m);
        double iv = 1.0 / std::sqrt(var + eps);
        inv[static_cast<size_t>(r)] = iv;
        for (int64_t i = 0; i < m; ++i) {
            double xh = (src[i] - mu) * iv;
            xhat[static_cast<size_t>(r * m + i)] = xh;
            data[static_cast<size_t>(r * m + i)] = xh * gd[static_cast<size_t>(i)] +
                                                   bd[static_cast<size_t>(i)];
        }
    }
    return make_result(
        x.shape(), std::move(data), {x, gain, bias},
        [m, xhat = std::move(xhat), inv = std::move(inv)](const TensorImpl &self,
                                                          const auto &parents) {
            const auto &g = grad_of(self);
            const auto &gd = parents[1]->data;
            int64_t rows = static_cast<int64_t>(g.size()) / m;
            if (parents[0]->requires_grad) {
                std::vector<double> gx(g.size());
                for (int64_t r = 0; r < rows; ++r) {
                    const double *gp = g.data() + r * m;
                    const double *xh = xhat.data() + r * m;
                    double mw = 0.0, mwx = 0.0;
                    for (int64_t i = 0; i < m; ++i) {
                        double w = gp[i] * gd[static_cast<size_t>(i)];
                        mw += w;
                        mwx += w * xh[i];
                    }
                    mw /= static_cast<double>(m);
                    mwx /= static_cast<double>(m);
                    double iv = inv[static_cast<size_t>(r)];
                    double *out = gx.data() + r * m;
                    for (int64_t i = 0; i < m; ++i) {
                        double w = gp[i] * gd[static_cast<size_t>(i)];
                        out[i] = iv * (w - mw - xh[i] * mwx);
                    }
                }
                accumulate(parents[0], gx);
            }
            if (parents[1]->requires_grad) {
                std::vector<double> gg(static_cast<size_t>(m), 0.0);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t i = 0; i < m; ++i)
                        gg[static_cast<size_t>(i)] +=
                            g[static_cast<size_t>(r * m + i)] * xhat[static_cast<size_t>(r * m + i)];
                accumulate(parents[1], gg);
            }
            if (parents[2]->requires_grad) {
                std::vector<double> gb(static_cast<size_t>(m), 0.0);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t i = 0; i < m; ++i)
                        gb[static_cast<size_t>(i)] += g[static_cast<size_t>(r * m + i)];
                accumulate(parents[2], gb);
            }
        });
}

// ---- gelu (exact erf form) -------------------------------------------------

Tensor gelu(const Tensor &x) {
    check_defined(x, "gelu");
    std::vector<double> data(x.data().size());
    const auto &xd = x.data();
    for (size_t i = 0; i < data.size(); ++i) {
        double v = xd[i];
        data[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    return make_result(x.shape(), std::move(data), {x},
                       [](const TensorImpl &self, const auto &parents) {
                           const auto &g = grad_of(self);
                           const auto &xv = parents[0]->data;
                           std::vector<double> gx(g.size());
                           for (size_t i = 0; i < g.size(); ++i) {
                               double v = xv[i];
                               double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                               double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                               gx[i] = g[i] * (cdf + v * pdf);
                           }
                           accumulate(parents[0], gx);
                       });
}

// ---- masked scale ----------------------------------------------------------

Tensor masked_scale(const Tensor &x, const Tensor &mask) {
    check_defined(x, "masked_scale");
    check_defined(mask, "masked_scale");
    if (x.shape() != mask.shape()) {
        throw ShapeError("masked_scale: mask shape " + shape_str(mask.shape()) +
                         " must equal input shape " + shape_str(x.shape()));
    }
    if (mask.requires_grad()) throw ContractError("masked_scale: mask must not carry gradient");
    const auto &md = mask.data();
    for (double v : md) {
        if (v != 0.0 && v != 1.0)
            throw ContractError("masked_scale: mask entries must be 0 or 1");
    }
    std::vector<double> data(x.data().size());
    const auto &xd = x.data();
    for (size_t i = 0; i < data.size(); ++i) data[i] = xd[i] * md[i];
    // The mask is a constant in the graph; only x receives gradient.
    Tensor mask_copy = mask.detach();
    return make_result(x.shape(), std::move(data), {x},
                       [mask_copy](const TensorImpl &self, const auto &parents) {
                           const auto &g = grad_of(self);
                           const auto &md = mask_copy.data();
                           std::vector<double> gx(g.size());
                           for (size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * md[i];
                           accumulate(parents[0], gx);
                       });
}

// ---- shape ops -------------------------------------------------------------

Tensor reshape(const Tensor &x, const Shape &shape) {
    check_defined(x, "reshape");
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    }
    return make_result(shape, x.data(), {x},
                       [](const TensorImpl &self, const auto &parents) {
                           accumulate(parents[0], grad_of(self));
                       });
}

Tensor permute(const Tensor &x, const std::vector<int64_t> &axes) {
    check_defined(x, "permute");
    size_t nd = x.shape().size();
    if (axes.size() != nd) throw ShapeError("permute: axes rank mismatch");
    std::vector<bool> seen(nd, false);
    for (int64_t a : axes) {
        if (a < 0 || a >= static_cast<int64_t>(nd) || seen[static_cast<size_t>(a)])
            throw ShapeError("permute: axes must be a permutation");
        seen[static_cast<size_t>(a)] = true;
    }
    Shape out(nd);
    for (size_t i = 0; i < nd; ++i) out[i] = x.shape()[static_cast<size_t>(axes[i])];
    auto in_strides = row_major_strides(x.shape());
    // stride of output axis i in the input buffer
    std::vector<int64_t> src_strides(nd);
    for (size_t i = 0; i < nd; ++i) src_strides[i] = in_strides[static_cast<size_t>(axes[i])];

    std::vector<double> data(x.data().size());
    const auto &xd = x.data();
    std::vector<int64_t> idx(nd, 0);
    int64_t so = 0;
    for (size_t i = 0; i < data.size(); ++i) {
        data[i] = xd[static_cast<size_t>(so)];
        for (int64_t d = static_cast<int64_t>(nd) - 1; d >= 0; --d) {
            ++idx[d];
            so += src_strides[d];
            if (idx[d] < out[d]) break;
            idx[d] = 0;
            so -= src_strides[d] * out[d];
        }
    }
    std::vector<int64_t> inverse(nd);
    for (size_t i = 0; i < nd; ++i) inverse[static_cast<size_t>(axes[i])] = static_cast<int64_t>(i);
    return make_result(out, std::move(data), {x},
                       [inverse, out, nd](const TensorImpl &self, const auto &parents) {
                           const auto &g = grad_of(self);
                           auto g_strides = row_major_strides(out);
                           std::vector<int64_t> src_strides(nd);
                           for (size_t i = 0; i < nd; ++i)
                               src_strides[i] = g_strides[static_cast<size_t>(inverse[i])];
                           const Shape &in_shape = parents[0]->shape;
                           std::vector<double> gx(g.size());
                           std::vector<int64_t> idx(nd, 0);
                           int64_t so = 0;
                           for (size_t i = 0; i < gx.size(); ++i) {
                               gx[i] = g[static_cast<size_t>(so)];
                               for (int64_t d = static_cast<int64_t>(nd) - 1; d >= 0; --d) {
                                   ++idx[d];
                                   so += src_strides[d];
                                   if (idx[d] < in_shape[d]) break;
                                   idx[d] = 0;
                                   so -= src_strides[d] * in_shape[d];
                               }
                           }
                           accumulate(parents[0], gx);
                       });
}

Tensor transpose_last2(const Tensor &x) {
    size_t nd = x.shape().size();
    if (nd < 2) throw ShapeError("transpose_last2 requires rank >= 2");
    std::vector<int64_t> axes(nd);
    for (size_t i = 0; i < nd; ++i) axes[i] = static_cast<int64_t>(i);
    std::swap(axes[nd - 1], axes[nd - 2]);
    return permute(x, axes);
}

Tensor slice(const Tensor &x, int64_t axis, int64_t start, int64_t len) {
    check_defined(x, "slice");
    int64_t nd = x.ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw ShapeError("slice: axis out of range");
    int64_t ext = x.shape()[static_cast<size_t>(axis)];
    if (start < 0 || len <= 0 || start + len > ext) {
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of extent " + std::to_string(ext));
    }
    Shape out = x.shape();
    out[static_cast<size_t>(axis)] = len;
    int64_t outer = 1, inner = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= x.shape()[static_cast<size_t>(d)];
    for (int64_t d = axis + 1; d < nd; ++d) inner *= x.shape()[static_cast<size_t>(d)];
    std::vector<double> data(static_cast<size_t>(outer * len * inner));
    const auto &xd = x.data();
    for (int64_t o = 0; o < outer; ++o) {
        const double *src = xd.data() + (o * ext + start) * inner;
        double *dst = data.data() + o * len * inner;
        std::memcpy(dst, src, static_cast<size_t>(len * inner) * sizeof(double));
    }
    return make_result(out, std::move(data), {x},
                       [outer, inner, ext, start, len](const TensorImpl &self, const auto &parents) {
                           const auto &g = grad_of(self);
                           std::vector<double> gx(parents[0]->data.size(), 0.0);
                           for (int64_t o = 0; o < outer; ++o) {
                               const double *src = g.data() + o * len * inner;
                               double *dst = gx.data() + (o * ext + start) * inner;
                               for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                           }
                           accumulate(parents[0], gx);
                       });
}

Tensor concat(const std::vector<Tensor> &parts, int64_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    int64_t nd = parts[0].ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw ShapeError("concat: axis out of range");
    Shape out = parts[0].shape();
    int64_t total_axis = 0;
    for (const auto &p : parts) {
        check_defined(p, "concat");
        if (p.ndim() != nd) throw ShapeError("concat: rank mismatch");
        for (int64_t d = 0; d < nd; ++d) {
            if (d != axis && p.shape()[static_cast<size_t>(d)] != out[static_cast<size_t>(d)])
                throw ShapeError("concat: shape mismatch between " + shape_str(out) + " and " +
                                 shape_str(p.shape()));
        }
        total_axis += p.shape()[static_cast<size_t>(axis)];
    }
    out[static_cast<size_t>(axis)] = total_axis;
    int64_t outer = 1, inner = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= out[static_cast<size_t>(d)];
    for (int64_t d = axis + 1; d < nd; ++d) inner *= out[static_cast<size_t>(d)];

    std::vector<double> data(static_cast<size_t>(shape_numel(out)));
    int64_t written = 0;
    std::vector<int64_t> lens;
    for (const auto &p : parts) {
        int64_t len = p.shape()[static_cast<size_t>(axis)];
        lens.push_back(len);
        const auto &pd = p.data();
        for (int64_t o = 0; o < outer; ++o) {
            std::memcpy(data.data() + (o * total_axis + written) * inner,
                        pd.data() + o * len * inner,
                        static_cast<size_t>(len * inner) * sizeof(double));
        }
        written += len;
    }
    return make_result(out, std::move(data), std::vector<Tensor>(parts),
                       [outer, inner, total_axis, lens](const TensorImpl &self, const auto &parents) {
                           const auto &g = grad_of(self);
                           int64_t off = 0;
                           for (size_t n = 0; n < parents.size(); ++n) {
                               int64_t len = lens[n];
                               if (parents[n]->requires_grad) {
                                   std::vector<double> gp(static_cast<size_t>(outer * len * inner));
                                   for (int64_t o = 0; o < outer; ++o) {
                                       std::memcpy(gp.data() + o * len * inner,
                                                   g.data() + (o * total_axis + off) * inner,
                                                   static_cast<size_t>(len * inner) * sizeof(double));
                                   }
                                   accumulate(parents[n], gp);
                               }
                               off += len;
                           }
                       });
}

Tensor broadcast_to(const Tensor &x, const Shape &shape) {
    check_defined(x, "broadcast_to");
    Shape merged = broadcast_shapes(x.shape(), shape, "broadcast_to");
    if (merged != shape) {
        throw ShapeError("broadcast_to: cannot expand " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
    }
    std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
    const auto &xd = x.data();
    for_each_bcast2(shape, x.shape(), x.shape(), [&](int64_t i, int64_t ao, int64_t) {
        data[static_cast<size_t>(i)] = xd[static_cast<size_t>(ao)];
    });
    Shape xs = x.shape();
    return make_result(shape, std::move(data), {x},
                       [xs, shape](const TensorImpl &self, const auto &parents) {
                           accumulate(parents[0], reduce_to_shape(grad_of(self), shape, xs));
                       });
}

// ---- reductions ------------------------------------------------------------

Tensor sum_all(const Tensor &x) {
    check_defined(x, "sum_all");
    double s = 0.0;
    for (double v : x.data()) s += v;
    return make_result({}, {s}, {x}, [](const TensorImpl &self, const auto &parents) {
        double g = grad_of(self)[0];
        std::vector<double> gx(parents[0]->data.size(), g);
        accumulate(parents[0], gx);
    });
}

Tensor mean_axis(const Tensor &x, int64_t axis) {
    check_defined(x, "mean_axis");
    int64_t nd = x.ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw ShapeError("mean_axis: axis out of range");
    int64_t ext = x.shape()[static_cast<size_t>(axis)];
    Shape out;
    for (int64_t d = 0; d < nd; ++d)
        if (d != axis) out.push_back(x.shape()[static_cast<size_t>(d)]);
    int64_t outer = 1, inner = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= x.shape()[static_cast<size_t>(d)];
    for (int64_t d = axis + 1; d < nd; ++d) inner *= x.shape()[static_cast<size_t>(d)];
    std::vector<double> data(static_cast<size_t>(outer * inner), 0.0);
    const auto &xd = x.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t e = 0; e < ext; ++e)
            for (int64_t i = 0; i < inner; ++i)
                data[static_cast<size_t>(o * inner + i)] +=
                    xd[static_cast<size_t>((o * ext + e) * inner + i)];
    double invn = 1.0 / static_cast<double>(ext);
    for (auto &v : data) v *= invn;
    return make_result(out, std::move(data), {x},
                       [outer, inner, ext, invn](const TensorImpl &self, const auto &parents) {
                           const auto &g = grad_of(self);
                           std::vector<double> gx(parents[0]->data.size());
                           for (int64_t o = 0; o < outer; ++o)
                               for (int64_t e = 0; e < ext; ++e)
                                   for (int64_t i = 0; i < inner; ++i)
                                       gx[static_cast<size_t>((o * ext + e) * inner + i)] =
                                           g[static_cast<size_t>(o * inner + i)] * invn;
                           accumulate(parents[0], gx);
                       });
}

Tensor take_lastaxis(const Tensor &x, const std::vector<int64_t> &index) {
    check_defined(x, "take_lastaxis");
    if (x.ndim() != 2) throw ShapeError("take_lastaxis requires a rank-2 tensor");
    int64_t rows = x.shape()[0], cols = x.shape()[1];
    if (static_cast<int64_t>(index.size()) != rows)
        throw ShapeError("take_lastaxis: index length must match row count");
    for (int64_t i : index) {
        if (i < 0 || i >= cols) throw ContractError("take_lastaxis: index out of range");
    }
    std::vector<double> data(static_cast<size_t>(rows));
    const auto &xd = x.data();
    for (int64_t r = 0; r < rows; ++r)
        data[static_cast<size_t>(r)] = xd[static_cast<size_t>(r * cols + index[static_cast<size_t>(r)])];
    return make_result({rows}, std::move(data), {x},
                       [index, cols](const TensorImpl &self, const auto &parents) {
                           const auto &g = grad_of(self);
                           std::vector<double> gx(parents[0]->data.size(), 0.0);
                           for (size_t r = 0; r < g.size(); ++r)
                               gx[r * static_cast<size_t>(cols) + static_cast<size_t>(index[r])] += g[r];
                           accumulate(parents[0], gx);
                       });
}

Tensor cross_entropy_mean(const Tensor &logits, const std::vector<int64_t> &labels,
                          const std::vector<double> &class_weights) {
    check_defined(logits, "cross_entropy");
    if (logits.ndim() != 2) throw ShapeError("cross_entropy expects [batch, labels] logits");
    int64_t rows = logits.shape()[0];
    if (static_cast<int64_t>(labels.size()) != rows)
        throw ShapeError("cross_entropy: label count must match batch size");
    Tensor ls = log_softmax_lastaxis(logits);
    Tensor picked = take_lastaxis(ls, labels);
    if (class_weights.empty()) {
        return scale(sum_all(picked), -1.0 / static_cast<double>(rows));
    }
    if (static_cast<int64_t>(class_weights.size()) != logits.shape()[1])
        throw ShapeError("cross_entropy: class weight count must match label count");
    std::vector<double> w(static_cast<size_t>(rows));
    double total = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        w[static_cast<size_t>(r)] = class_weights[static_cast<size_t>(labels[static_cast<size_t>(r)])];
        total += w[static_cast<size_t>(r)];
    }
    if (total <= 0.0) throw ContractError("cross_entropy: class weights sum to zero over batch");
    Tensor weights = Tensor::from_data({rows}, std::move(w));
    return scale(sum_all(mul(picked, weights)), -1.0 / total);
}

// ---- reverse pass ----------------------------------------------------------

void backward(const Tensor &loss) {
    check_defined(loss, "backward");
    if (loss.numel() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " +
                            shape_str(loss.shape()));
    }
    TensorImpl *root = loss.impl();
    if (!root->requires_grad) return;

    // Post-order DFS; reversal gives a valid execution order for the tape.
    std::vector<TensorImpl *> order;
    std::unordered_set<TensorImpl *> seen;
    std::vector<std::pair<TensorImpl *, size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto &[node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl *p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    if (!root->grad) root->grad = std::make_unique<std::vector<double>>(1, 0.0);
    (*root->grad)[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl *node = *it;
        if (node->backward_fn && node->grad) node->backward_fn(*node, node->parents);
    }
}

}  // namespace dmvt
