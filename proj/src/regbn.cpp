#include "dmvt/regbn.hpp"

#include <cmath>

namespace dmvt {

namespace {

void check_latents(const Tensor &z_m, const Tensor &z_p, const Tensor &omega, const char *op) {
    if (z_m.ndim() != 2 || z_p.ndim() != 2) {
        throw ShapeError(std::string(op) + " expects [batch, features] latents");
    }
    if (z_m.shape() != z_p.shape()) {
        throw ShapeError(std::string(op) + ": latent shapes " + shape_str(z_m.shape()) +
                         " and " + shape_str(z_p.shape()) + " differ");
    }
    if (z_m.shape()[1] != omega.shape()[0]) {
        throw ShapeError(std::string(op) + ": feature extent " +
                         std::to_string(z_m.shape()[1]) + " does not match omega " +
                         shape_str(omega.shape()));
    }
}

}  // namespace

RegBNState RegBNState::init(int64_t f) {
    RegBNState s;
    s.omega = Tensor::zeros({f, f});
    return s;
}

void regbn_fit_step(RegBNState &state, const Tensor &z_m, const Tensor &z_p) {
    check_latents(z_m, z_p, state.omega, "regbn_fit_step");
    if (z_m.requires_grad() || z_p.requires_grad()) {
        throw ContractError("regbn_fit_step: latents must be detached");
    }
    for (const Tensor *t : {&z_m, &z_p}) {
        for (double v : t->data()) {
            if (!std::isfinite(v)) throw NumericError("regbn_fit_step: non-finite latent");
        }
    }
    NoGradGuard ng;
    double batch = static_cast<double>(z_m.shape()[0]);
    // residual R = Z_m - Z_p w^T; dL/dw = -2 R^T Z_p / B
    Tensor residual = sub(z_m, matmul(z_p, transpose_last2(state.omega)));
    Tensor grad = scale(matmul(transpose_last2(residual), z_p), -2.0 / batch);
    // step then EMA blend collapses to a single damped step
    double eff = (1.0 - state.ema_decay) * state.update_lr;
    state.omega = sub(state.omega, scale(grad, eff));
    state.fitted = true;
}

Tensor regbn_apply(const RegBNState &state, const Tensor &z_m, const Tensor &z_p) {
    check_latents(z_m, z_p, state.omega, "regbn_apply");
    return sub(z_m, matmul(z_p, transpose_last2(state.omega.detach())));
}

}  // namespace dmvt
