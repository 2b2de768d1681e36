#include "omnixfer/attention.hpp"

#include <cmath>

#include "omnixfer/hash.hpp"
#include "omnixfer/kernels.hpp"

namespace omnixfer::attn {

template <typename T>
void ProjectionSet<T>::validate() const {
    const Tensor<T>* mats[] = {&wq, &wk, &wv, &wo};
    for (const Tensor<T>* m : mats) {
        if (m->rank() != 2 || m->dim(0) != m->dim(1) || m->dim(0) != wq.dim(0)) {
            throw std::invalid_argument("ProjectionSet: weights must be square [D,D], got " +
                                        shape_str(m->shape()));
        }
    }
    if (heads < 1 || wq.dim(0) % heads != 0) {
        throw std::invalid_argument("ProjectionSet: model_dim " + std::to_string(wq.dim(0)) +
                                    " not divisible by heads " + std::to_string(heads));
    }
}

template <typename T>
ProjectionSet<T> ProjectionSet<T>::seeded(int64_t model_dim, int heads, Rng& rng) {
    const T s = static_cast<T>(1.0 / std::sqrt(static_cast<double>(model_dim)));
    auto w = [&] { return scale(seeded_normal<T>({model_dim, model_dim}, rng), s); };
    ProjectionSet<T> p;
    p.wq = w();
    p.wk = w();
    p.wv = w();
    p.wo = w();
    p.heads = heads;
    p.validate();
    return p;
}

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int heads) {
    if (x.rank() != 2 || heads < 1 || x.dim(1) % heads != 0) {
        throw std::invalid_argument("split_heads: cannot split " + shape_str(x.shape()) + " into " +
                                    std::to_string(heads) + " heads");
    }
    return x.reshaped({x.dim(0), heads, x.dim(1) / heads});
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
    if (x.rank() != 3) throw std::invalid_argument("merge_heads: need [N,H,d]");
    return x.reshaped({x.dim(0), x.dim(1) * x.dim(2)});
}

namespace {

template <typename T>
Tensor<T> head_slice(const Tensor<T>& x, int64_t head) {
    const int64_t n = x.dim(0), heads = x.dim(1), d = x.dim(2);
    Tensor<T> out({n, d});
    for (int64_t i = 0; i < n; ++i) {
        const T* src = x.data() + (i * heads + head) * d;
        std::memcpy(out.data() + i * d, src, static_cast<size_t>(d) * sizeof(T));
    }
    return out;
}

template <typename T>
void check_head_layout(const Tensor<T>& t, const char* name) {
    if (t.rank() != 3) {
        throw std::invalid_argument(std::string(name) + ": expected [tokens, heads, head_dim], got " +
                                    shape_str(t.shape()));
    }
}

}  // namespace

template <typename T>
Tensor<T> attn(const Tensor<T>& q_rot, const Tensor<T>& k_rot, const Tensor<T>& v,
               const Tensor<T>& wo) {
    check_head_layout(q_rot, "attn(q)");
    check_head_layout(k_rot, "attn(k)");
    check_head_layout(v, "attn(v)");
    const int64_t heads = q_rot.dim(1), d = q_rot.dim(2);
    if (k_rot.dim(1) != heads || v.dim(1) != heads || k_rot.dim(2) != d || v.dim(2) != d) {
        throw std::invalid_argument("attn: head_dim/heads mismatch, q " + shape_str(q_rot.shape()) +
                                    " k " + shape_str(k_rot.shape()) + " v " +
                                    shape_str(v.shape()));
    }
    if (k_rot.dim(0) != v.dim(0)) {
        throw std::invalid_argument("attn: key/value token counts differ");
    }
    const int64_t n_q = q_rot.dim(0);
    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));

    Tensor<T> merged({n_q, heads * d});
    for (int64_t h = 0; h < heads; ++h) {
        const Tensor<T> qh = head_slice(q_rot, h);
        const Tensor<T> kh = head_slice(k_rot, h);
        const Tensor<T> vh = head_slice(v, h);
        const Tensor<T> scores = scale(kernels::matmul_nt(qh, kh), inv_sqrt_d);
        const Tensor<T> probs = kernels::softmax_rows(scores);
        const Tensor<T> oh = kernels::matmul(probs, vh);
        for (int64_t i = 0; i < n_q; ++i) {
            std::memcpy(merged.data() + i * heads * d + h * d, oh.data() + i * d,
                        static_cast<size_t>(d) * sizeof(T));
        }
    }
    return kernels::matmul(merged, wo);
}

template <typename T>
Tensor<T> ref_self_attn(const Tensor<T>& x_ref, const Tensor<T>& ref_coords,
                        const ProjectionSet<T>& proj, const rope::RopeConfig& cfg) {
    proj.validate();
    const Tensor<T> q = rope::apply_rope(split_heads(kernels::matmul(x_ref, proj.wq), proj.heads),
                                         ref_coords, cfg);
    const Tensor<T> k = rope::apply_rope(split_heads(kernels::matmul(x_ref, proj.wk), proj.heads),
                                         ref_coords, cfg);
    const Tensor<T> v = split_heads(kernels::matmul(x_ref, proj.wv), proj.heads);
    return attn(q, k, v, proj.wo);
}

template <typename T>
Tensor<T> tgt_causal_attn(const Tensor<T>& x_tgt, const Tensor<T>& tgt_coords,
                          const RefCacheLayer<T>& cache, const ProjectionSet<T>& proj,
                          const rope::RopeConfig& cfg) {
    proj.validate();
    const Tensor<T> q = rope::apply_rope(split_heads(kernels::matmul(x_tgt, proj.wq), proj.heads),
                                         tgt_coords, cfg);
    Tensor<T> k = rope::apply_rope(split_heads(kernels::matmul(x_tgt, proj.wk), proj.heads),
                                   tgt_coords, cfg);
    Tensor<T> v = split_heads(kernels::matmul(x_tgt, proj.wv), proj.heads);
    if (cache.tokens() > 0) {
        if (cache.k_rot.dim(1) != proj.heads || cache.k_rot.dim(2) != proj.head_dim()) {
            throw std::invalid_argument("tgt_causal_attn: cache layer built for heads=" +
                                        std::to_string(cache.k_rot.dim(1)) + ", d=" +
                                        std::to_string(cache.k_rot.dim(2)) +
                                        " does not match projections");
        }
        k = concat(0, k, cache.k_rot);  // target-first ordering
        v = concat(0, v, cache.v);
    }
    return attn(q, k, v, proj.wo);
}

void AttnMask::validate(int64_t tokens) const {
    if (n != tokens || allow.size() != static_cast<size_t>(n) * static_cast<size_t>(n)) {
        throw std::invalid_argument("mask: size " + std::to_string(n) + " does not cover " +
                                    std::to_string(tokens) + " tokens");
    }
    for (int64_t i = 0; i < n; ++i) {
        bool any = false;
        for (int64_t j = 0; j < n; ++j) any = any || allowed(i, j);
        if (!any) {
            throw std::invalid_argument("mask: query row " + std::to_string(i) +
                                        " has no allowed keys");
        }
    }
}

AttnMask AttnMask::all(int64_t n) {
    AttnMask m;
    m.n = n;
    m.allow.assign(static_cast<size_t>(n) * static_cast<size_t>(n), 1);
    return m;
}

AttnMask AttnMask::block_causal(int64_t n_tgt, int64_t n_ref) {
    const int64_t n = n_tgt + n_ref;
    AttnMask m;
    m.n = n;
    m.allow.assign(static_cast<size_t>(n) * static_cast<size_t>(n), 0);
    for (int64_t i = 0; i < n; ++i) {
        const bool is_ref_query = i >= n_tgt;
        for (int64_t j = 0; j < n; ++j) {
            const bool is_ref_key = j >= n_tgt;
            if (!is_ref_query || is_ref_key) m.allow[static_cast<size_t>(i * n + j)] = 1;
        }
    }
    return m;
}

template <typename T>
Tensor<T> joint_baseline(const Tensor<T>& x_all, const Tensor<T>& coords_all, const AttnMask& mask,
                         const ProjectionSet<T>& proj, const rope::RopeConfig& cfg) {
    proj.validate();
    if (x_all.rank() != 2) throw std::invalid_argument("joint_baseline: x must be [N, D]");
    const int64_t n = x_all.dim(0);
    mask.validate(n);

    const Tensor<T> q = rope::apply_rope(split_heads(kernels::matmul(x_all, proj.wq), proj.heads),
                                         coords_all, cfg);
    const Tensor<T> k = rope::apply_rope(split_heads(kernels::matmul(x_all, proj.wk), proj.heads),
                                         coords_all, cfg);
    const Tensor<T> v = split_heads(kernels::matmul(x_all, proj.wv), proj.heads);

    const int64_t heads = proj.heads, d = proj.head_dim();
    const T scale_v = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));

    // Explicit masked attention, one (head, query) row at a time.
    Tensor<T> merged({n, heads * d});
    std::vector<T> logits(static_cast<size_t>(n));
    for (int64_t h = 0; h < heads; ++h) {
        for (int64_t i = 0; i < n; ++i) {
            T mx = T(0);
            bool first = true;
            for (int64_t j = 0; j < n; ++j) {
                if (!mask.allowed(i, j)) continue;
                T acc = T(0);
                for (int64_t c = 0; c < d; ++c) acc += q(i, h, c) * k(j, h, c);
                acc *= scale_v;
                logits[static_cast<size_t>(j)] = acc;
                if (first || acc > mx) mx = acc;
                first = false;
            }
            T denom = T(0);
            for (int64_t j = 0; j < n; ++j) {
                if (!mask.allowed(i, j)) continue;
                logits[static_cast<size_t>(j)] = std::exp(logits[static_cast<size_t>(j)] - mx);
                denom += logits[static_cast<size_t>(j)];
            }
            for (int64_t c = 0; c < d; ++c) {
                T acc = T(0);
                for (int64_t j = 0; j < n; ++j) {
                    if (!mask.allowed(i, j)) continue;
                    acc += (logits[static_cast<size_t>(j)] / denom) * v(j, h, c);
                }
                merged(i, h * d + c) = acc;
            }
        }
    }
    return kernels::matmul(merged, proj.wo);
}

template <typename T>
Tensor<T> cross_attn(const Tensor<T>& x_tgt, const Tensor<T>& k_ext, const Tensor<T>& v_ext,
                     const Tensor<T>& wq, const Tensor<T>& wo) {
    check_head_layout(k_ext, "cross_attn(k)");
    const int heads = static_cast<int>(k_ext.dim(1));
    const Tensor<T> q = split_heads(kernels::matmul(x_tgt, wq), heads);
    return attn(q, k_ext, v_ext, wo);
}

uint64_t cache_fingerprint(uint64_t model_fingerprint, const std::vector<CachePart>& parts,
                           int64_t tgt_frames, int64_t tgt_width) {
    Hasher h;
    h.mix(model_fingerprint).mix(tgt_frames).mix(tgt_width);
    for (const CachePart& p : parts) {
        h.mix(static_cast<int32_t>(p.task))
            .mix(p.bias.delta_t)
            .mix(p.bias.delta_w)
            .mix(p.bias.delta_h)
            .mix(p.tokens);
        for (int64_t dim : p.ref_shape) h.mix(dim);
    }
    return h.value();
}

#define OMNIXFER_INSTANTIATE_ATTN(T)                                                              \
    template struct ProjectionSet<T>;                                                             \
    template Tensor<T> split_heads<T>(const Tensor<T>&, int);                                     \
    template Tensor<T> merge_heads<T>(const Tensor<T>&);                                          \
    template Tensor<T> attn<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                               const Tensor<T>&);                                                 \
    template Tensor<T> ref_self_attn<T>(const Tensor<T>&, const Tensor<T>&,                       \
                                        const ProjectionSet<T>&, const rope::RopeConfig&);        \
    template Tensor<T> tgt_causal_attn<T>(const Tensor<T>&, const Tensor<T>&,                     \
                                          const RefCacheLayer<T>&, const ProjectionSet<T>&,       \
                                          const rope::RopeConfig&);                               \
    template Tensor<T> joint_baseline<T>(const Tensor<T>&, const Tensor<T>&, const AttnMask&,     \
                                         const ProjectionSet<T>&, const rope::RopeConfig&);       \
    template Tensor<T> cross_attn<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                     const Tensor<T>&, const Tensor<T>&);

OMNIXFER_INSTANTIATE_ATTN(float)
OMNIXFER_INSTANTIATE_ATTN(double)

}  // namespace omnixfer::attn
