#pragma once

#include <functional>
#include <string>
#include <vector>

#include "omnixfer/attention.hpp"
#include "omnixfer/rope.hpp"
#include "omnixfer/tensor.hpp"

namespace omnixfer::grad {

struct GradReport {
    std::string param;
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    double fd_step = 0.0;
    bool pass = false;
};

/// One decoupled-attention instance: x_tgt provides the queries and the
/// first key/value segment, x_ref (possibly empty) the cached second
/// segment, both projected through the same weights. With x_ref empty and
/// biased coords this is exactly ref_self_attn.
template <typename T>
struct DecoupledAttnProblem {
    Tensor<T> x_tgt;       // [N_tgt, D]
    Tensor<T> x_ref;       // [N_ref, D] or empty
    Tensor<T> tgt_coords;  // [N_tgt, 3]
    Tensor<T> ref_coords;  // [N_ref, 3]
    attn::ProjectionSet<T> proj;
    rope::RopeConfig rope;

    int64_t n_ref() const { return x_ref.rank() == 2 ? x_ref.dim(0) : 0; }
};

/// Saved forward intermediates for the analytic backward pass.
template <typename T>
struct AttnTape {
    Tensor<T> out;                  // [N_tgt, D]
    Tensor<T> merged;               // pre-output-projection
    Tensor<T> q_rot, k_all, v_all;  // head layout; k_all/v_all are [tgt; ref]
    std::vector<Tensor<T>> probs;   // per head, [N_tgt, N_tgt+N_ref]
};

/// Gradients of a scalar loss through the decoupled attention op.
template <typename T>
struct AttnGrads {
    Tensor<T> x_tgt, x_ref;
    Tensor<T> wq, wk, wv, wo;
    Tensor<T> q, k, v;  // wrt the projected (pre-rotation) matrices
};

template <typename T>
AttnTape<T> attn_forward_tape(const DecoupledAttnProblem<T>& p);

/// Exact analytic gradients of sum-style losses (dOut supplied by the
/// caller) through scores, softmax and both rotations. The rotations are
/// orthogonal, so their backward is the transpose rotation.
template <typename T>
AttnGrads<T> attn_backward(const DecoupledAttnProblem<T>& p, const AttnTape<T>& tape,
                           const Tensor<T>& d_out);

/// Central difference (L(p+h) - L(p-h)) / 2h per coordinate of `param`,
/// which is perturbed in place and restored.
template <typename T>
Tensor<T> finite_diff(const std::function<double()>& loss, Tensor<T>& param, double h);

/// Elementwise comparison; relative error is evaluated on entries whose
/// magnitude exceeds `floor`.
GradReport verify(const std::string& name, const Tensor<double>& analytic,
                  const Tensor<double>& fd, double tol = 1e-4, double floor = 1e-8,
                  double h = 1e-5);

/// Runs the full analytic-vs-FD comparison for every parameter of the
/// problem (weights and both inputs).
std::vector<GradReport> check_problem(DecoupledAttnProblem<double> p, double h = 1e-5,
                                      double tol = 1e-4);

}  // namespace omnixfer::grad
