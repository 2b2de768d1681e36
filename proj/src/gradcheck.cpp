#include "omnixfer/gradcheck.hpp"

#include <cmath>

#include "omnixfer/kernels.hpp"

namespace omnixfer::grad {

namespace {

template <typename T>
Tensor<T> head_slice(const Tensor<T>& x, int64_t head) {
    const int64_t n = x.dim(0), heads = x.dim(1), d = x.dim(2);
    Tensor<T> out({n, d});
    for (int64_t i = 0; i < n; ++i) {
        std::memcpy(out.data() + i * d, x.data() + (i * heads + head) * d,
                    static_cast<size_t>(d) * sizeof(T));
    }
    return out;
}

template <typename T>
void head_write(Tensor<T>& dst, const Tensor<T>& src, int64_t head) {
    const int64_t n = dst.dim(0), heads = dst.dim(1), d = dst.dim(2);
    for (int64_t i = 0; i < n; ++i) {
        std::memcpy(dst.data() + (i * heads + head) * d, src.data() + i * d,
                    static_cast<size_t>(d) * sizeof(T));
    }
    (void)heads;
}

// A^T * B via explicit transpose; fine at gradcheck scale.
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    return kernels::matmul(transpose2d(a), b);
}

}  // namespace

template <typename T>
AttnTape<T> attn_forward_tape(const DecoupledAttnProblem<T>& p) {
    p.proj.validate();
    p.rope.validate();
    const int heads = p.proj.heads;
    const int64_t d = p.proj.head_dim();
    const int64_t n_tgt = p.x_tgt.dim(0);

    AttnTape<T> tape;
    tape.q_rot = rope::apply_rope(attn::split_heads(kernels::matmul(p.x_tgt, p.proj.wq), heads),
                                  p.tgt_coords, p.rope);
    Tensor<T> k = rope::apply_rope(attn::split_heads(kernels::matmul(p.x_tgt, p.proj.wk), heads),
                                   p.tgt_coords, p.rope);
    Tensor<T> v = attn::split_heads(kernels::matmul(p.x_tgt, p.proj.wv), heads);
    if (p.n_ref() > 0) {
        k = concat(0, k,
                   rope::apply_rope(attn::split_heads(kernels::matmul(p.x_ref, p.proj.wk), heads),
                                    p.ref_coords, p.rope));
        v = concat(0, v, attn::split_heads(kernels::matmul(p.x_ref, p.proj.wv), heads));
    }
    tape.k_all = k;
    tape.v_all = v;

    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    tape.merged = Tensor<T>({n_tgt, static_cast<int64_t>(heads) * d});
    tape.probs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const Tensor<T> qh = head_slice(tape.q_rot, h);
        const Tensor<T> kh = head_slice(tape.k_all, h);
        const Tensor<T> vh = head_slice(tape.v_all, h);
        const Tensor<T> probs = kernels::softmax_rows(scale(kernels::matmul_nt(qh, kh), inv_sqrt_d));
        const Tensor<T> oh = kernels::matmul(probs, vh);
        for (int64_t i = 0; i < n_tgt; ++i) {
            std::memcpy(tape.merged.data() + i * heads * d + h * d, oh.data() + i * d,
                        static_cast<size_t>(d) * sizeof(T));
        }
        tape.probs.push_back(probs);
    }
    tape.out = kernels::matmul(tape.merged, p.proj.wo);
    return tape;
}

template <typename T>
AttnGrads<T> attn_backward(const DecoupledAttnProblem<T>& p, const AttnTape<T>& tape,
                           const Tensor<T>& d_out) {
    if (tape.probs.empty()) {
        throw std::invalid_argument("attn_backward: tape has no saved intermediates");
    }
    check_same_shape(d_out, tape.out, "attn_backward(d_out)");
    const int heads = p.proj.heads;
    const int64_t d = p.proj.head_dim();
    const int64_t n_tgt = p.x_tgt.dim(0);
    const int64_t n_all = tape.k_all.dim(0);
    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));

    AttnGrads<T> g;
    g.wo = matmul_tn(tape.merged, d_out);
    const Tensor<T> d_merged = kernels::matmul(d_out, transpose2d(p.proj.wo));

    Tensor<T> d_q_rot({n_tgt, static_cast<int64_t>(heads), d});
    Tensor<T> d_k_rot({n_all, static_cast<int64_t>(heads), d});
    Tensor<T> d_v_all({n_all, static_cast<int64_t>(heads), d});
    for (int h = 0; h < heads; ++h) {
        Tensor<T> d_oh({n_tgt, d});
        for (int64_t i = 0; i < n_tgt; ++i) {
            std::memcpy(d_oh.data() + i * d, d_merged.data() + i * heads * d + h * d,
                        static_cast<size_t>(d) * sizeof(T));
        }
        const Tensor<T>& probs = tape.probs[static_cast<size_t>(h)];
        const Tensor<T> kh = head_slice(tape.k_all, h);
        const Tensor<T> vh = head_slice(tape.v_all, h);
        const Tensor<T> qh = head_slice(tape.q_rot, h);

        const Tensor<T> d_probs = kernels::matmul_nt(d_oh, vh);  // d_oh * vh^T
        head_write(d_v_all, matmul_tn(probs, d_oh), h);

        // Softmax backward: dS = P .* (dP - rowsum(dP .* P)).
        Tensor<T> d_scores(probs.shape());
        for (int64_t i = 0; i < n_tgt; ++i) {
            T dot = T(0);
            for (int64_t j = 0; j < n_all; ++j) dot += d_probs(i, j) * probs(i, j);
            for (int64_t j = 0; j < n_all; ++j) {
                d_scores(i, j) = probs(i, j) * (d_probs(i, j) - dot) * inv_sqrt_d;
            }
        }
        head_write(d_q_rot, kernels::matmul(d_scores, kh), h);
        head_write(d_k_rot, matmul_tn(d_scores, qh), h);
    }

    const Tensor<T> d_q = attn::merge_heads(rope::rope_backward(d_q_rot, p.tgt_coords, p.rope));
    const Tensor<T> d_kt =
        attn::merge_heads(rope::rope_backward(slice(d_k_rot, 0, 0, n_tgt), p.tgt_coords, p.rope));
    const Tensor<T> d_vt = attn::merge_heads(slice(d_v_all, 0, 0, n_tgt));

    g.q = d_q;
    g.wq = matmul_tn(p.x_tgt, d_q);
    g.x_tgt = kernels::matmul(d_q, transpose2d(p.proj.wq));
    g.x_tgt = add(g.x_tgt, kernels::matmul(d_kt, transpose2d(p.proj.wk)));
    g.x_tgt = add(g.x_tgt, kernels::matmul(d_vt, transpose2d(p.proj.wv)));
    g.wk = matmul_tn(p.x_tgt, d_kt);
    g.wv = matmul_tn(p.x_tgt, d_vt);
    g.k = d_kt;
    g.v = d_vt;

    if (p.n_ref() > 0) {
        const int64_t n_ref = p.n_ref();
        const Tensor<T> d_kr = attn::merge_heads(
            rope::rope_backward(slice(d_k_rot, 0, n_tgt, n_ref), p.ref_coords, p.rope));
        const Tensor<T> d_vr = attn::merge_heads(slice(d_v_all, 0, n_tgt, n_ref));
        g.wk = add(g.wk, matmul_tn(p.x_ref, d_kr));
        g.wv = add(g.wv, matmul_tn(p.x_ref, d_vr));
        g.x_ref = add(kernels::matmul(d_kr, transpose2d(p.proj.wk)),
                      kernels::matmul(d_vr, transpose2d(p.proj.wv)));
        g.k = concat(0, g.k, d_kr);
        g.v = concat(0, g.v, d_vr);
    }
    return g;
}

template <typename T>
Tensor<T> finite_diff(const std::function<double()>& loss, Tensor<T>& param, double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff: h must be positive");
    Tensor<T> grad(param.shape());
    for (int64_t i = 0; i < param.numel(); ++i) {
        const T saved = param[i];
        param[i] = saved + static_cast<T>(h);
        const double up = loss();
        param[i] = saved - static_cast<T>(h);
        const double down = loss();
        param[i] = saved;
        grad[i] = static_cast<T>((up - down) / (2.0 * h));
    }
    return grad;
}

GradReport verify(const std::string& name, const Tensor<double>& analytic,
                  const Tensor<double>& fd, double tol, double floor, double h) {
    check_same_shape(analytic, fd, "gradcheck verify");
    GradReport report;
    report.param = name;
    report.fd_step = h;
    for (int64_t i = 0; i < analytic.numel(); ++i) {
        const double a = analytic[i];
        const double f = fd[i];
        const double abs_err = std::abs(a - f);
        report.max_abs_err = std::max(report.max_abs_err, abs_err);
        const double mag = std::max(std::abs(a), std::abs(f));
        if (mag > floor) {
            report.max_rel_err = std::max(report.max_rel_err, abs_err / mag);
        }
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

namespace {

double sum_loss(const DecoupledAttnProblem<double>& p) {
    const AttnTape<double> tape = attn_forward_tape(p);
    double s = 0.0;
    for (int64_t i = 0; i < tape.out.numel(); ++i) s += tape.out[i];
    return s;
}

}  // namespace

std::vector<GradReport> check_problem(DecoupledAttnProblem<double> p, double h, double tol) {
    const AttnTape<double> tape = attn_forward_tape(p);
    const Tensor<double> d_out = Tensor<double>::full(tape.out.shape(), 1.0);
    const AttnGrads<double> g = attn_backward(p, tape, d_out);

    const auto loss = [&p]() { return sum_loss(p); };
    std::vector<GradReport> reports;
    auto run = [&](const std::string& name, const Tensor<double>& analytic, Tensor<double>& param) {
        reports.push_back(verify(name, analytic, finite_diff(loss, param, h), tol, 1e-8, h));
    };
    run("W_Q", g.wq, p.proj.wq);
    run("W_K", g.wk, p.proj.wk);
    run("W_V", g.wv, p.proj.wv);
    run("W_O", g.wo, p.proj.wo);
    run("x_tgt", g.x_tgt, p.x_tgt);
    if (p.n_ref() > 0) run("x_ref", g.x_ref, p.x_ref);
    return reports;
}

#define OMNIXFER_INSTANTIATE_GRAD(T)                                                        \
    template struct DecoupledAttnProblem<T>;                                                \
    template AttnTape<T> attn_forward_tape<T>(const DecoupledAttnProblem<T>&);              \
    template AttnGrads<T> attn_backward<T>(const DecoupledAttnProblem<T>&,                  \
                                           const AttnTape<T>&, const Tensor<T>&);           \
    template Tensor<T> finite_diff<T>(const std::function<double()>&, Tensor<T>&, double);

OMNIXFER_INSTANTIATE_GRAD(double)

}  // namespace omnixfer::grad
