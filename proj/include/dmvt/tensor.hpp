#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dmvt/errors.hpp"

namespace dmvt {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape &s);
int64_t shape_numel(const Shape &s);

// Compute precision for op outputs. f32 rounds every op result through float
// precision (storage stays double); gradients are kept in double either way.
enum class Precision { f64, f32 };
void set_compute_precision(Precision p);
Precision compute_precision();

struct TensorImpl;

// Dense row-major n-d tensor with reverse-mode autodiff. The handle has value
// semantics; the payload is shared and treated as immutable once an op has
// consumed it. Rank-0 tensors (shape {}) are scalars with one element.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(const Shape &shape);
    static Tensor full(const Shape &shape, double value);
    static Tensor from_data(const Shape &shape, std::vector<double> data);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const Shape &shape() const;
    int64_t ndim() const;
    int64_t numel() const;
    int64_t extent(int64_t axis) const;  // negative axis counts from the back

    const std::vector<double> &data() const;
    // Mutable access to a leaf's storage, for initializers and optimizer
    // updates between passes. Never call on a tensor already recorded as an
    // op input in a live graph.
    std::vector<double> &data_mut();

    double item() const;  // requires numel() == 1

    bool requires_grad() const;
    Tensor &set_requires_grad(bool flag);

    // Null until a backward pass has reached this tensor.
    const std::vector<double> *grad() const;
    std::vector<double> &grad_mut();
    void zero_grad();

    // Same storage, detached from the graph, requires_grad = false.
    Tensor detach() const;

    // Deep copy of the values (no graph, no grad).
    Tensor clone_values() const;

    TensorImpl *impl() const { return impl_.get(); }
    const std::shared_ptr<TensorImpl> &impl_ptr() const { return impl_; }

    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  private:
    std::shared_ptr<TensorImpl> impl_;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::unique_ptr<std::vector<double>> grad;

    // Tape: parents plus a closure that routes this node's grad to them.
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(const TensorImpl &self,
                       const std::vector<std::shared_ptr<TensorImpl>> &parents)>
        backward_fn;
};

// RAII guard that disables tape recording (inference / detached updates).
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard &) = delete;
    NoGradGuard &operator=(const NoGradGuard &) = delete;

  private:
    bool prev_;
};
bool grad_enabled();

// A named trainable leaf. Names are path-like ("m.layer0.attn.wq"), unique
// within one model, and stable across save/load.
struct Parameter {
    std::string name;
    Tensor tensor;
};

// ---- differentiable ops ----------------------------------------------------
// None of these mutate their inputs. Broadcasting follows the usual trailing-
// axis alignment rules; gradients are sum-reduced over broadcast axes.

Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, double c);
Tensor neg(const Tensor &a);

// Batched matrix product: a [..., i, k] x b [..., k, j] -> [..., i, j], with
// leading batch extents broadcast.
Tensor matmul(const Tensor &a, const Tensor &b);

Tensor softmax_lastaxis(const Tensor &x);
Tensor log_softmax_lastaxis(const Tensor &x);

Tensor layer_norm(const Tensor &x, const Tensor &gain, const Tensor &bias, double eps);

Tensor gelu(const Tensor &x);

// Elementwise product with a constant {0,1} mask; the mask never carries
// gradient and the backward pass multiplies by the same mask.
Tensor masked_scale(const Tensor &x, const Tensor &mask);

Tensor reshape(const Tensor &x, const Shape &shape);
Tensor permute(const Tensor &x, const std::vector<int64_t> &axes);
Tensor transpose_last2(const Tensor &x);
Tensor slice(const Tensor &x, int64_t axis, int64_t start, int64_t len);
Tensor concat(const std::vector<Tensor> &parts, int64_t axis);
Tensor broadcast_to(const Tensor &x, const Shape &shape);

Tensor sum_all(const Tensor &x);           // rank-0 result
Tensor mean_axis(const Tensor &x, int64_t axis);

// out[i] = x[i, index[i]] for a 2-d x; backward scatters into the picked slots.
Tensor take_lastaxis(const Tensor &x, const std::vector<int64_t> &index);

// Mean softmax cross-entropy over rows of logits [B, L]. When class_weights is
// non-empty (size L) the per-row losses are weighted by the label's weight and
// normalized by the total weight in the batch.
Tensor cross_entropy_mean(const Tensor &logits, const std::vector<int64_t> &labels,
                          const std::vector<double> &class_weights = {});

// Reverse-mode pass from a scalar loss. Accumulates into every reachable
// tensor's grad buffer; leaves keep accumulating across calls until zeroed.
void backward(const Tensor &loss);

}  // namespace dmvt
