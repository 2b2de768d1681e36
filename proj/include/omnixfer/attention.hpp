#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "omnixfer/rng.hpp"
#include "omnixfer/rope.hpp"
#include "omnixfer/task.hpp"
#include "omnixfer/tensor.hpp"

namespace omnixfer::attn {

template <typename T>
struct ProjectionSet {
    Tensor<T> wq, wk, wv, wo;  // each [model_dim, model_dim]
    int heads = 1;

    int64_t model_dim() const { return wq.rank() == 2 ? wq.dim(0) : 0; }
    int64_t head_dim() const { return model_dim() / heads; }

    void validate() const;

    static ProjectionSet seeded(int64_t model_dim, int heads, Rng& rng);
};

/// [N, D] -> [N, heads, D/heads]; contiguous per-head column blocks, so this
/// is a pure reshape.
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int heads);

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x);

/// Scaled dot-product attention over already-rotated queries/keys in
/// [tokens, heads, head_dim] layout, followed by head merge and the output
/// projection.
template <typename T>
Tensor<T> attn(const Tensor<T>& q_rot, const Tensor<T>& k_rot, const Tensor<T>& v,
               const Tensor<T>& wo);

/// Intra-reference self-attention (Attn over reference tokens only, with the
/// task-biased rotation already folded into ref_coords).
template <typename T>
Tensor<T> ref_self_attn(const Tensor<T>& x_ref, const Tensor<T>& ref_coords,
                        const ProjectionSet<T>& proj, const rope::RopeConfig& cfg);

/// One layer's slice of the reference cache: keys stored post-rotation.
template <typename T>
struct RefCacheLayer {
    Tensor<T> k_rot;  // [N_ref, heads, head_dim]
    Tensor<T> v;      // [N_ref, heads, head_dim]

    int64_t tokens() const { return k_rot.rank() == 3 ? k_rot.dim(0) : 0; }
};

/// Target causal attention: target queries over target-then-reference keys
/// and values. An empty cache layer degenerates to plain self-attention.
template <typename T>
Tensor<T> tgt_causal_attn(const Tensor<T>& x_tgt, const Tensor<T>& tgt_coords,
                          const RefCacheLayer<T>& cache, const ProjectionSet<T>& proj,
                          const rope::RopeConfig& cfg);

/// Dense boolean attention mask over a concatenated token set.
struct AttnMask {
    int64_t n = 0;
    std::vector<uint8_t> allow;  // row-major [n, n], 1 = query i may attend key j

    bool allowed(int64_t i, int64_t j) const {
        return allow[static_cast<size_t>(i * n + j)] != 0;
    }
    void validate(int64_t tokens) const;

    static AttnMask all(int64_t n);
    /// Token order [target; reference]: target rows attend everything,
    /// reference rows attend only reference columns.
    static AttnMask block_causal(int64_t n_tgt, int64_t n_ref);
};

/// Masked full attention over the concatenated token set, with per-branch
/// rotations folded into coords_all. The score/softmax/mix stage is written
/// as explicit per-element loops so decoupled attention can be checked
/// against a second route.
template <typename T>
Tensor<T> joint_baseline(const Tensor<T>& x_all, const Tensor<T>& coords_all, const AttnMask& mask,
                         const ProjectionSet<T>& proj, const rope::RopeConfig& cfg);

/// External (prompt / semantic-provider) keys and values in head layout.
template <typename T>
struct ExternalKV {
    Tensor<T> k;  // [M, heads, head_dim]
    Tensor<T> v;

    int64_t tokens() const { return k.rank() == 3 ? k.dim(0) : 0; }
};

/// Target queries over an external sequence; no positional rotation on
/// either side.
template <typename T>
Tensor<T> cross_attn(const Tensor<T>& x_tgt, const Tensor<T>& k_ext, const Tensor<T>& v_ext,
                     const Tensor<T>& wq, const Tensor<T>& wo);

/// One composed task's contribution to a reference cache.
struct CachePart {
    TaskKind task = TaskKind::Motion;
    rope::PositionBias bias;
    int64_t tokens = 0;
    std::array<int64_t, 4> ref_shape{0, 0, 0, 0};
};

/// Per-layer reference keys/values plus the reference-branch hidden states,
/// built once at t = 0 and reused across all sampling steps. Immutable after
/// construction.
template <typename T>
struct RefCache {
    std::vector<RefCacheLayer<T>> layers;
    std::vector<Tensor<T>> hidden;  // state entering each layer (hidden[0] = embedded tokens)
    std::vector<CachePart> parts;
    int64_t tgt_frames = 0;
    int64_t tgt_width = 0;
    uint64_t model_fingerprint = 0;
    uint64_t fingerprint = 0;

    int64_t total_tokens() const {
        int64_t n = 0;
        for (const CachePart& p : parts) n += p.tokens;
        return n;
    }
};

uint64_t cache_fingerprint(uint64_t model_fingerprint, const std::vector<CachePart>& parts,
                           int64_t tgt_frames, int64_t tgt_width);

}  // namespace omnixfer::attn
