#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "omnixfer/attention.hpp"
#include "omnixfer/latents.hpp"
#include "omnixfer/rng.hpp"
#include "omnixfer/rope.hpp"

namespace omnixfer::dit {

struct DitConfig {
    int layers = 4;
    int64_t model_dim = 128;
    int heads = 4;
    int64_t ffn_dim = 512;
    int latent_channels = kDefaultLatentChannels;  // n
    int64_t time_embed_dim = 128;
    uint64_t seed = 0;
    bool ref_cross_attention = false;
    double rope_base = 10000.0;

    int64_t head_dim() const { return model_dim / heads; }
    rope::RopeConfig rope() const {
        return rope::RopeConfig::split_even(static_cast<int>(head_dim()), rope_base);
    }
    void validate() const;
};

template <typename T>
struct TimeEmbedding {
    double t = 0.0;
    Tensor<T> vector;  // [1, time_embed_dim]
};

template <typename T>
struct SampleResult {
    Tensor<T> latent;  // [f, h, w, n]
    int target_forwards = 0;
    int reference_forwards = 0;
};

// Non-affine layer norm and the DiT-style shift/scale modulation, shared
// with the verification code.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, double eps = 1e-6);
template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scale);

/// Toy DiT: patch embedding, L blocks of (decoupled self-attention,
/// cross-attention, FFN) under time modulation, and a linear velocity head.
/// Weights are seeded at construction and immutable afterwards; forwards are
/// pure, so runs may share one model (and one RefCache) concurrently.
template <typename T>
class Model {
public:
    explicit Model(const DitConfig& cfg);

    const DitConfig& config() const { return cfg_; }
    /// Covers every config field plus the element type.
    uint64_t fingerprint() const { return fingerprint_; }

    Tensor<T> sinusoid_features(double t) const;  // [1, time_embed_dim]
    TimeEmbedding<T> time_embed(double t) const;

    Tensor<T> patch_embed(const LatentBlock<T>& l) const;  // [f*h*w, model_dim]

    /// Runs the reference branch once at t = 0, recording each layer's
    /// rotated keys/values and the hidden state entering each layer. The
    /// task bias is derived from the given target extents.
    attn::RefCache<T> build_ref_cache(const LatentBlock<T>& l_ref, const TaskSpec& task,
                                      int64_t tgt_frames, int64_t tgt_width,
                                      const attn::ExternalKV<T>* ref_ext = nullptr) const;

    /// A cache with no reference tokens (plain self-attention runs).
    attn::RefCache<T> empty_cache(int64_t tgt_frames, int64_t tgt_width) const;

    /// Target-branch forward against a prebuilt cache.
    Tensor<T> forward(const LatentBlock<T>& l_tgt, const attn::RefCache<T>& cache, double t,
                      const attn::ExternalKV<T>* ext = nullptr) const;

    /// Full-attention topology over the concatenated token set under the
    /// block-causal mask, with per-branch time embeddings and rotations.
    /// Used as the cost/equivalence baseline.
    Tensor<T> forward_joint(const LatentBlock<T>& l_tgt, const LatentBlock<T>& l_ref,
                            const TaskSpec& task, double t,
                            const attn::ExternalKV<T>* ext = nullptr) const;

    /// Euler rectified-flow sampling from t = 1 down to 0 in `steps` uniform
    /// steps. The condition channels of l_tgt_init are kept; the noise slice
    /// is drawn from rng.
    SampleResult<T> sample(const LatentBlock<T>& l_tgt_init, const attn::RefCache<T>& cache,
                           int steps, Rng& rng, const attn::ExternalKV<T>* ext = nullptr) const;

    SampleResult<T> sample_joint(const LatentBlock<T>& l_tgt_init, const LatentBlock<T>& l_ref,
                                 const TaskSpec& task, int steps, Rng& rng,
                                 const attn::ExternalKV<T>* ext = nullptr) const;

    Tensor<T> block_forward(int layer, const Tensor<T>& x, const Tensor<T>& tgt_coords,
                            const attn::RefCacheLayer<T>& cache, const Tensor<T>& temb_vec,
                            const attn::ExternalKV<T>* ext = nullptr) const;

    std::vector<std::pair<std::string, const Tensor<T>*>> named_parameters() const;
    std::vector<std::pair<std::string, Tensor<T>*>> named_parameters_mut();

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

private:
    struct Block {
        attn::ProjectionSet<T> self_proj;
        Tensor<T> cross_wq, cross_wo;
        Tensor<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
        Tensor<T> mod_w, mod_b;  // time_embed -> (shift, scale, gate) x (attn, ffn)
    };

    struct Modulation {
        Tensor<T> shift_attn, scale_attn, gate_attn;
        Tensor<T> shift_ffn, scale_ffn, gate_ffn;
    };

    Modulation modulation(const Tensor<T>& temb_vec, const Block& b) const;
    Tensor<T> ffn(const Block& b, const Tensor<T>& x) const;
    void check_cache(const attn::RefCache<T>& cache, const LatentBlock<T>& l_tgt) const;
    uint64_t compute_fingerprint() const;

    DitConfig cfg_;
    uint64_t fingerprint_ = 0;
    Tensor<T> patch_w_;  // [2n+4, model_dim], no bias
    Tensor<T> time_w1_, time_b1_, time_w2_, time_b2_;
    std::vector<Block> blocks_;
    Tensor<T> head_w_;  // [model_dim, n], no bias
};

inline constexpr uint32_t kCheckpointMagic = 0x5043584Fu;  // "OXCP"
inline constexpr uint32_t kCheckpointVersion = 1;

}  // namespace omnixfer::dit
