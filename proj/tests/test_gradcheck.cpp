#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "omnixfer/gradcheck.hpp"
#include "omnixfer/kernels.hpp"
#include "omnixfer/rng.hpp"

using namespace omnixfer;
using grad::AttnGrads;
using grad::AttnTape;
using grad::DecoupledAttnProblem;

namespace {

Tensor<double> identity(int64_t n) {
    Tensor<double> eye({n, n});
    for (int64_t i = 0; i < n; ++i) eye(i, i) = 1.0;
    return eye;
}

DecoupledAttnProblem<double> random_problem(uint64_t seed, int64_t n_tgt, int64_t n_ref,
                                            int heads, int64_t d) {
    Rng rng(seed);
    DecoupledAttnProblem<double> p;
    const int64_t dim = heads * d;
    p.proj = attn::ProjectionSet<double>::seeded(dim, heads, rng);
    p.rope = rope::RopeConfig::split_even(static_cast<int>(d));
    p.x_tgt = seeded_normal<double>({n_tgt, dim}, rng);
    p.tgt_coords = rope::position_grid<double>(n_tgt, 1, 1);
    if (n_ref > 0) {
        p.x_ref = seeded_normal<double>({n_ref, dim}, rng);
        p.ref_coords = rope::position_grid<double>(n_ref, 1, 1, rope::PositionBias{n_tgt, 0, 0});
    }
    return p;
}

}  // namespace

TEST_CASE("finite_diff is exact for quadratics") {
    Tensor<double> p({1}, {3.0});
    const auto loss = [&p]() { return p[0] * p[0]; };
    const Tensor<double> g = grad::finite_diff(loss, p, 1e-5);
    CHECK(std::abs(g[0] - 6.0) < 1e-9);
    CHECK(p[0] == 3.0);  // restored
}

TEST_CASE("finite_diff is exact for linear losses at any step") {
    Tensor<double> p({3}, {1.0, -2.0, 0.5});
    const auto loss = [&p]() { return 2.0 * p[0] - 7.0 * p[1] + 0.25 * p[2]; };
    for (double h : {1e-7, 1e-3, 0.5}) {
        const Tensor<double> g = grad::finite_diff(loss, p, h);
        CHECK(std::abs(g[0] - 2.0) < 1e-7);
        CHECK(std::abs(g[1] + 7.0) < 1e-7);
        CHECK(std::abs(g[2] - 0.25) < 1e-7);
    }
    CHECK_THROWS_AS(grad::finite_diff([] { return 0.0; }, p, 0.0), std::invalid_argument);
}

TEST_CASE("verify passes identical inputs and fails a 10% perturbation") {
    Rng rng(3);
    const Tensor<double> g = seeded_normal<double>({4, 4}, rng);
    const grad::GradReport ok = grad::verify("same", g, g);
    CHECK(ok.pass);
    CHECK(ok.max_rel_err == 0.0);

    Tensor<double> bad = g;
    bad[5] *= 1.10;
    const grad::GradReport fail = grad::verify("perturbed", g, bad);
    CHECK_FALSE(fail.pass);
    CHECK(fail.max_rel_err > 1e-2);
}

TEST_CASE("tape forward equals the attention op bit-for-bit") {
    DecoupledAttnProblem<double> p = random_problem(11, 4, 3, 2, 4);
    const AttnTape<double> tape = grad::attn_forward_tape(p);

    attn::RefCacheLayer<double> cache;
    cache.k_rot = rope::apply_rope(
        attn::split_heads(kernels::matmul(p.x_ref, p.proj.wk), p.proj.heads), p.ref_coords,
        p.rope);
    cache.v = attn::split_heads(kernels::matmul(p.x_ref, p.proj.wv), p.proj.heads);
    const Tensor<double> op_out =
        attn::tgt_causal_attn(p.x_tgt, p.tgt_coords, cache, p.proj, p.rope);
    CHECK(bit_equal(tape.out, op_out));
}

TEST_CASE("zero cotangent yields all-zero gradients") {
    DecoupledAttnProblem<double> p = random_problem(13, 3, 2, 2, 4);
    const AttnTape<double> tape = grad::attn_forward_tape(p);
    const AttnGrads<double> g =
        grad::attn_backward(p, tape, Tensor<double>(tape.out.shape()));
    for (const Tensor<double>* t : {&g.wq, &g.wk, &g.wv, &g.wo, &g.x_tgt, &g.x_ref}) {
        for (int64_t i = 0; i < t->numel(); ++i) CHECK((*t)[i] == 0.0);
    }
}

TEST_CASE("attn_backward rejects an empty tape") {
    DecoupledAttnProblem<double> p = random_problem(17, 2, 1, 1, 4);
    AttnTape<double> empty;
    empty.out = Tensor<double>({2, 4});
    CHECK_THROWS_WITH_AS(grad::attn_backward(p, empty, Tensor<double>({2, 4})),
                         doctest::Contains("intermediates"), std::invalid_argument);
}

TEST_CASE("identity projections, single token: dV equals dOut through W_O") {
    DecoupledAttnProblem<double> p;
    p.proj.wq = identity(4);
    p.proj.wk = identity(4);
    p.proj.wv = identity(4);
    p.proj.wo = identity(4);
    p.proj.heads = 1;
    p.rope = rope::RopeConfig::split_even(4);
    Rng rng(19);
    p.x_tgt = seeded_normal<double>({1, 4}, rng);
    p.tgt_coords = Tensor<double>({1, 3});

    const AttnTape<double> tape = grad::attn_forward_tape(p);
    Rng rng2(23);
    const Tensor<double> d_out = seeded_normal<double>({1, 4}, rng2);
    const AttnGrads<double> g = grad::attn_backward(p, tape, d_out);
    // Softmax over a single key is exactly one, W_O = I: dV = dOut.
    CHECK(max_abs_diff(g.v.reshaped({1, 4}), d_out) < 1e-12);
}

TEST_CASE("analytic gradients match finite differences on a random instance") {
    for (const grad::GradReport& r : grad::check_problem(random_problem(29, 3, 2, 2, 4))) {
        INFO(r.param, " max_rel=", r.max_rel_err);
        CHECK(r.pass);
        CHECK(r.max_rel_err < 1e-4);
    }
}

TEST_CASE("pure self-attention case (ref_self_attn) also checks out") {
    DecoupledAttnProblem<double> p = random_problem(31, 4, 0, 2, 4);
    // Biased coordinates, as the reference branch uses.
    p.tgt_coords = rope::position_grid<double>(4, 1, 1, rope::PositionBias{0, 6, 0});
    for (const grad::GradReport& r : grad::check_problem(p)) {
        INFO(r.param, " max_rel=", r.max_rel_err);
        CHECK(r.pass);
    }
}

TEST_CASE("rotation backward equals forward at the negated angle") {
    Rng rng(37);
    const rope::RopeConfig rc = rope::RopeConfig::split_even(8);
    const Tensor<double> g = seeded_normal<double>({5, 2, 8}, rng);
    Tensor<double> coords({5, 3});
    for (int64_t i = 0; i < coords.numel(); ++i) coords[i] = rng.normal() * 3.0;
    Tensor<double> neg = coords;
    for (int64_t i = 0; i < neg.numel(); ++i) neg[i] = -neg[i];
    CHECK(max_abs_diff(rope::rope_backward(g, coords, rc), rope::apply_rope(g, neg, rc)) < 1e-10);
}
