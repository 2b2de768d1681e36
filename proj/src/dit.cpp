#include "omnixfer/dit.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "omnixfer/hash.hpp"
#include "omnixfer/kernels.hpp"

namespace omnixfer::dit {

void DitConfig::validate() const {
    if (layers < 1 || model_dim < 1 || heads < 1 || ffn_dim < 1 || latent_channels < 1 ||
        time_embed_dim < 1) {
        throw std::invalid_argument("DitConfig: all counts must be >= 1");
    }
    if (model_dim % heads != 0) {
        throw std::invalid_argument("DitConfig: model_dim " + std::to_string(model_dim) +
                                    " not divisible by heads " + std::to_string(heads));
    }
    if (time_embed_dim % 2 != 0) {
        throw std::invalid_argument("DitConfig: time_embed_dim must be even");
    }
    rope().validate();
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, double eps) {
    if (x.rank() != 2) throw std::invalid_argument("layer_norm: need [N, D]");
    const int64_t n = x.dim(0), d = x.dim(1);
    Tensor<T> out(x.shape());
    for (int64_t i = 0; i < n; ++i) {
        const T* row = x.data() + i * d;
        T* orow = out.data() + i * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += static_cast<double>(row[j]);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = static_cast<double>(row[j]) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t j = 0; j < d; ++j) {
            orow[j] = static_cast<T>((static_cast<double>(row[j]) - mean) * inv);
        }
    }
    return out;
}

template <typename T>
Tensor<T> modulate(const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scale) {
    const int64_t n = x.dim(0), d = x.dim(1);
    if (shift.numel() != d || scale.numel() != d) {
        throw std::invalid_argument("modulate: shift/scale length must equal feature dim");
    }
    Tensor<T> out(x.shape());
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < d; ++j) {
            out(i, j) = x(i, j) * (T(1) + scale[j]) + shift[j];
        }
    }
    return out;
}

namespace {

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double v = static_cast<double>(x[i]);
        out[i] = static_cast<T>(v / (1.0 + std::exp(-v)));
    }
    return out;
}

template <typename T>
Tensor<T> gelu_tanh(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double v = static_cast<double>(x[i]);
        const double inner = 0.7978845608028654 * (v + 0.044715 * v * v * v);
        out[i] = static_cast<T>(0.5 * v * (1.0 + std::tanh(inner)));
    }
    return out;
}

template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    const int64_t n = x.dim(0), d = x.dim(1);
    Tensor<T> out(x.shape());
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < d; ++j) out(i, j) = x(i, j) + bias[j];
    }
    return out;
}

/// x += gate (broadcast over rows) * delta, in place on a copy.
template <typename T>
void add_gated(Tensor<T>& x, const Tensor<T>& gate, const Tensor<T>& delta) {
    const int64_t n = x.dim(0), d = x.dim(1);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < d; ++j) x(i, j) += gate[j] * delta(i, j);
    }
}

template <typename T>
Tensor<T> row_range(const Tensor<T>& x, int64_t start, int64_t len) {
    return slice(x, 0, start, len);
}

template <typename T>
void write_rows(Tensor<T>& dst, const Tensor<T>& src, int64_t start) {
    const int64_t d = dst.dim(1);
    std::memcpy(dst.data() + start * d, src.data(),
                static_cast<size_t>(src.numel()) * sizeof(T));
}

}  // namespace

template <typename T>
Model<T>::Model(const DitConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const int64_t d = cfg_.model_dim;
    const int64_t in_ch = assembled_channels(cfg_.latent_channels);
    const int64_t td = cfg_.time_embed_dim;

    auto mat = [&rng](int64_t rows, int64_t cols) {
        return scale(seeded_normal<T>({rows, cols}, rng),
                     static_cast<T>(1.0 / std::sqrt(static_cast<double>(rows))));
    };

    patch_w_ = mat(in_ch, d);
    time_w1_ = mat(td, td);
    time_b1_ = Tensor<T>({td});
    time_w2_ = mat(td, td);
    time_b2_ = Tensor<T>({td});

    blocks_.reserve(static_cast<size_t>(cfg_.layers));
    for (int l = 0; l < cfg_.layers; ++l) {
        Block b;
        b.self_proj = attn::ProjectionSet<T>::seeded(d, cfg_.heads, rng);
        b.cross_wq = mat(d, d);
        b.cross_wo = mat(d, d);
        b.ffn_w1 = mat(d, cfg_.ffn_dim);
        b.ffn_b1 = Tensor<T>({cfg_.ffn_dim});
        b.ffn_w2 = mat(cfg_.ffn_dim, d);
        b.ffn_b2 = Tensor<T>({d});
        b.mod_w = mat(td, 6 * d);
        b.mod_b = Tensor<T>({6 * d});
        blocks_.push_back(std::move(b));
    }
    head_w_ = mat(d, cfg_.latent_channels);
    fingerprint_ = compute_fingerprint();
}

template <typename T>
uint64_t Model<T>::compute_fingerprint() const {
    Hasher h;
    h.mix(cfg_.layers)
        .mix(cfg_.model_dim)
        .mix(cfg_.heads)
        .mix(cfg_.ffn_dim)
        .mix(cfg_.latent_channels)
        .mix(cfg_.time_embed_dim)
        .mix(cfg_.seed)
        .mix(cfg_.ref_cross_attention)
        .mix(cfg_.rope_base)
        .mix(static_cast<uint32_t>(sizeof(T)));
    return h.value();
}

template <typename T>
Tensor<T> Model<T>::sinusoid_features(double t) const {
    if (t < 0.0 || t > 1.0) {
        throw std::invalid_argument("time_embed: t = " + std::to_string(t) + " outside [0,1]");
    }
    const int64_t half = cfg_.time_embed_dim / 2;
    Tensor<T> feats({1, cfg_.time_embed_dim});
    // Log-spaced frequencies; t is scaled to a nominal 1000-step range.
    for (int64_t k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) /
                                     static_cast<double>(half));
        const double angle = 1000.0 * t * freq;
        feats(0, k) = static_cast<T>(std::sin(angle));
        feats(0, half + k) = static_cast<T>(std::cos(angle));
    }
    return feats;
}

template <typename T>
TimeEmbedding<T> Model<T>::time_embed(double t) const {
    const Tensor<T> feats = sinusoid_features(t);
    const Tensor<T> h1 = silu(add_row_bias(kernels::matmul(feats, time_w1_), time_b1_));
    TimeEmbedding<T> out;
    out.t = t;
    out.vector = add_row_bias(kernels::matmul(h1, time_w2_), time_b2_);
    return out;
}

template <typename T>
Tensor<T> Model<T>::patch_embed(const LatentBlock<T>& l) const {
    l.validate();
    const int64_t expect = assembled_channels(cfg_.latent_channels);
    if (l.channels != expect) {
        throw std::invalid_argument("patch_embed: latent has " + std::to_string(l.channels) +
                                    " channels, model expects " + std::to_string(expect));
    }
    return kernels::matmul(l.data.reshaped({l.tokens(), l.channels}), patch_w_);
}

template <typename T>
typename Model<T>::Modulation Model<T>::modulation(const Tensor<T>& temb_vec,
                                                   const Block& b) const {
    const Tensor<T> m = add_row_bias(kernels::matmul(silu(temb_vec), b.mod_w), b.mod_b);
    const int64_t d = cfg_.model_dim;
    auto chunk = [&](int64_t idx) {
        Tensor<T> out({d});
        std::memcpy(out.data(), m.data() + idx * d, static_cast<size_t>(d) * sizeof(T));
        return out;
    };
    Modulation mod;
    mod.shift_attn = chunk(0);
    mod.scale_attn = chunk(1);
    mod.gate_attn = chunk(2);
    mod.shift_ffn = chunk(3);
    mod.scale_ffn = chunk(4);
    mod.gate_ffn = chunk(5);
    return mod;
}

template <typename T>
Tensor<T> Model<T>::ffn(const Block& b, const Tensor<T>& x) const {
    const Tensor<T> h = gelu_tanh(add_row_bias(kernels::matmul(x, b.ffn_w1), b.ffn_b1));
    return add_row_bias(kernels::matmul(h, b.ffn_w2), b.ffn_b2);
}

template <typename T>
Tensor<T> Model<T>::block_forward(int layer, const Tensor<T>& x, const Tensor<T>& tgt_coords,
                                  const attn::RefCacheLayer<T>& cache, const Tensor<T>& temb_vec,
                                  const attn::ExternalKV<T>* ext) const {
    const Block& b = blocks_.at(static_cast<size_t>(layer));
    const Modulation mod = modulation(temb_vec, b);

    Tensor<T> out = x;
    const Tensor<T> h_attn = modulate(layer_norm(x), mod.shift_attn, mod.scale_attn);
    add_gated(out, mod.gate_attn, attn::tgt_causal_attn(h_attn, tgt_coords, cache, b.self_proj,
                                                        cfg_.rope()));
    if (ext != nullptr && ext->tokens() > 0) {
        const Tensor<T> h_cross = layer_norm(out);
        out = add(out, attn::cross_attn(h_cross, ext->k, ext->v, b.cross_wq, b.cross_wo));
    }
    const Tensor<T> h_ffn = modulate(layer_norm(out), mod.shift_ffn, mod.scale_ffn);
    add_gated(out, mod.gate_ffn, ffn(b, h_ffn));
    return out;
}

template <typename T>
attn::RefCache<T> Model<T>::build_ref_cache(const LatentBlock<T>& l_ref, const TaskSpec& task,
                                            int64_t tgt_frames, int64_t tgt_width,
                                            const attn::ExternalKV<T>* ref_ext) const {
    if (ref_ext != nullptr && !cfg_.ref_cross_attention) {
        throw std::invalid_argument(
            "build_ref_cache: external KV supplied but ref_cross_attention is off");
    }
    const rope::PositionBias bias = rope::task_bias(task, tgt_frames, tgt_width);
    const Tensor<T> coords =
        rope::position_grid<T>(l_ref.frames, l_ref.height, l_ref.width, bias);
    const Tensor<T> temb0 = time_embed(0.0).vector;

    attn::RefCache<T> cache;
    cache.layers.reserve(static_cast<size_t>(cfg_.layers));
    cache.hidden.reserve(static_cast<size_t>(cfg_.layers));

    Tensor<T> x = patch_embed(l_ref);
    for (int l = 0; l < cfg_.layers; ++l) {
        const Block& b = blocks_[static_cast<size_t>(l)];
        const Modulation mod = modulation(temb0, b);
        cache.hidden.push_back(x);

        const Tensor<T> h = modulate(layer_norm(x), mod.shift_attn, mod.scale_attn);
        const Tensor<T> q = rope::apply_rope(
            attn::split_heads(kernels::matmul(h, b.self_proj.wq), cfg_.heads), coords, cfg_.rope());
        const Tensor<T> k = rope::apply_rope(
            attn::split_heads(kernels::matmul(h, b.self_proj.wk), cfg_.heads), coords, cfg_.rope());
        const Tensor<T> v = attn::split_heads(kernels::matmul(h, b.self_proj.wv), cfg_.heads);
        cache.layers.push_back(attn::RefCacheLayer<T>{k, v});

        add_gated(x, mod.gate_attn, attn::attn(q, k, v, b.self_proj.wo));
        if (cfg_.ref_cross_attention && ref_ext != nullptr && ref_ext->tokens() > 0) {
            const Tensor<T> h_cross = layer_norm(x);
            x = add(x, attn::cross_attn(h_cross, ref_ext->k, ref_ext->v, b.cross_wq, b.cross_wo));
        }
        const Tensor<T> h_ffn = modulate(layer_norm(x), mod.shift_ffn, mod.scale_ffn);
        add_gated(x, mod.gate_ffn, ffn(b, h_ffn));
    }

    attn::CachePart part;
    part.task = task.kind;
    part.bias = bias;
    part.tokens = l_ref.tokens();
    part.ref_shape = {l_ref.frames, l_ref.height, l_ref.width, l_ref.channels};
    cache.parts.push_back(part);
    cache.tgt_frames = tgt_frames;
    cache.tgt_width = tgt_width;
    cache.model_fingerprint = fingerprint_;
    cache.fingerprint = attn::cache_fingerprint(fingerprint_, cache.parts, tgt_frames, tgt_width);
    return cache;
}

template <typename T>
attn::RefCache<T> Model<T>::empty_cache(int64_t tgt_frames, int64_t tgt_width) const {
    attn::RefCache<T> cache;
    cache.layers.assign(static_cast<size_t>(cfg_.layers), attn::RefCacheLayer<T>{});
    cache.tgt_frames = tgt_frames;
    cache.tgt_width = tgt_width;
    cache.model_fingerprint = fingerprint_;
    cache.fingerprint = attn::cache_fingerprint(fingerprint_, cache.parts, tgt_frames, tgt_width);
    return cache;
}

template <typename T>
void Model<T>::check_cache(const attn::RefCache<T>& cache, const LatentBlock<T>& l_tgt) const {
    if (cache.model_fingerprint != fingerprint_) {
        throw std::invalid_argument("cache fingerprint mismatch: cache was built by a different "
                                    "model configuration");
    }
    if (cache.layers.size() != static_cast<size_t>(cfg_.layers)) {
        throw std::invalid_argument("cache fingerprint mismatch: layer count " +
                                    std::to_string(cache.layers.size()) + " vs model " +
                                    std::to_string(cfg_.layers));
    }
    if (cache.tgt_frames != l_tgt.frames || cache.tgt_width != l_tgt.width) {
        throw std::invalid_argument(
            "cache fingerprint mismatch: cache biases were derived for target grid (f=" +
            std::to_string(cache.tgt_frames) + ", w=" + std::to_string(cache.tgt_width) +
            "), got (f=" + std::to_string(l_tgt.frames) + ", w=" + std::to_string(l_tgt.width) +
            ")");
    }
    const uint64_t expect =
        attn::cache_fingerprint(fingerprint_, cache.parts, cache.tgt_frames, cache.tgt_width);
    if (cache.fingerprint != expect) {
        throw std::invalid_argument("cache fingerprint mismatch: cache contents were altered");
    }
}

template <typename T>
Tensor<T> Model<T>::forward(const LatentBlock<T>& l_tgt, const attn::RefCache<T>& cache, double t,
                            const attn::ExternalKV<T>* ext) const {
    check_cache(cache, l_tgt);
    const rope::PositionBias origin{l_tgt.grid_origin[0], l_tgt.grid_origin[1],
                                    l_tgt.grid_origin[2]};
    const Tensor<T> coords =
        rope::position_grid<T>(l_tgt.frames, l_tgt.height, l_tgt.width, origin);
    const Tensor<T> temb = time_embed(t).vector;

    Tensor<T> x = patch_embed(l_tgt);
    for (int l = 0; l < cfg_.layers; ++l) {
        x = block_forward(l, x, coords, cache.layers[static_cast<size_t>(l)], temb, ext);
    }
    x = kernels::matmul(layer_norm(x), head_w_);
    return x.reshaped({l_tgt.frames, l_tgt.height, l_tgt.width,
                       static_cast<int64_t>(cfg_.latent_channels)});
}

template <typename T>
Tensor<T> Model<T>::forward_joint(const LatentBlock<T>& l_tgt, const LatentBlock<T>& l_ref,
                                  const TaskSpec& task, double t,
                                  const attn::ExternalKV<T>* ext) const {
    const int64_t n_tgt = l_tgt.tokens();
    const int64_t n_ref = l_ref.tokens();
    const rope::PositionBias bias = rope::task_bias(task, l_tgt.frames, l_tgt.width);
    const Tensor<T> coords = concat(
        0, rope::position_grid<T>(l_tgt.frames, l_tgt.height, l_tgt.width),
        rope::position_grid<T>(l_ref.frames, l_ref.height, l_ref.width, bias));
    const attn::AttnMask mask = attn::AttnMask::block_causal(n_tgt, n_ref);

    const Tensor<T> temb_tgt = time_embed(t).vector;
    const Tensor<T> temb_ref = time_embed(0.0).vector;

    Tensor<T> x = concat(0, patch_embed(l_tgt), patch_embed(l_ref));
    for (int l = 0; l < cfg_.layers; ++l) {
        const Block& b = blocks_[static_cast<size_t>(l)];
        const Modulation mt = modulation(temb_tgt, b);
        const Modulation mr = modulation(temb_ref, b);

        // Per-branch modulation, shared attention under the mask.
        Tensor<T> h = layer_norm(x);
        Tensor<T> h_mod(h.shape());
        write_rows(h_mod, modulate(row_range(h, 0, n_tgt), mt.shift_attn, mt.scale_attn), 0);
        write_rows(h_mod, modulate(row_range(h, n_tgt, n_ref), mr.shift_attn, mr.scale_attn),
                   n_tgt);
        const Tensor<T> a = attn::joint_baseline(h_mod, coords, mask, b.self_proj, cfg_.rope());
        Tensor<T> x_t = row_range(x, 0, n_tgt);
        Tensor<T> x_r = row_range(x, n_tgt, n_ref);
        add_gated(x_t, mt.gate_attn, row_range(a, 0, n_tgt));
        add_gated(x_r, mr.gate_attn, row_range(a, n_tgt, n_ref));

        if (ext != nullptr && ext->tokens() > 0) {
            x_t = add(x_t, attn::cross_attn(layer_norm(x_t), ext->k, ext->v, b.cross_wq,
                                            b.cross_wo));
            if (cfg_.ref_cross_attention) {
                x_r = add(x_r, attn::cross_attn(layer_norm(x_r), ext->k, ext->v, b.cross_wq,
                                                b.cross_wo));
            }
        }

        const Tensor<T> ft = ffn(b, modulate(layer_norm(x_t), mt.shift_ffn, mt.scale_ffn));
        const Tensor<T> fr = ffn(b, modulate(layer_norm(x_r), mr.shift_ffn, mr.scale_ffn));
        add_gated(x_t, mt.gate_ffn, ft);
        add_gated(x_r, mr.gate_ffn, fr);
        x = concat(0, x_t, x_r);
    }

    const Tensor<T> x_t = row_range(x, 0, n_tgt);
    const Tensor<T> out = kernels::matmul(layer_norm(x_t), head_w_);
    return out.reshaped({l_tgt.frames, l_tgt.height, l_tgt.width,
                         static_cast<int64_t>(cfg_.latent_channels)});
}

namespace {

template <typename T>
Tensor<T> cond_frame0(const LatentBlock<T>& l_tgt_init) {
    return slice(cond_slice(l_tgt_init), 0, 0, 1);  // [1,h,w,n]
}

}  // namespace

template <typename T>
SampleResult<T> Model<T>::sample(const LatentBlock<T>& l_tgt_init, const attn::RefCache<T>& cache,
                                 int steps, Rng& rng, const attn::ExternalKV<T>* ext) const {
    if (steps < 1) throw std::invalid_argument("sample: steps must be >= 1");
    check_cache(cache, l_tgt_init);
    const Tensor<T> cond = cond_frame0(l_tgt_init);
    const int64_t n = latent_channels(l_tgt_init);

    Tensor<T> z = seeded_normal<T>({l_tgt_init.frames, l_tgt_init.height, l_tgt_init.width, n},
                                   rng);
    SampleResult<T> result;
    const T dt = static_cast<T>(1.0 / static_cast<double>(steps));
    for (int k = steps; k >= 1; --k) {
        const double t = static_cast<double>(k) / static_cast<double>(steps);
        LatentBlock<T> l = build_target_latent(cond, z);
        l.grid_origin = l_tgt_init.grid_origin;
        const Tensor<T> velocity = forward(l, cache, t, ext);
        ++result.target_forwards;
        z = sub(z, scale(velocity, dt));
    }
    result.latent = std::move(z);
    return result;
}

template <typename T>
SampleResult<T> Model<T>::sample_joint(const LatentBlock<T>& l_tgt_init,
                                       const LatentBlock<T>& l_ref, const TaskSpec& task,
                                       int steps, Rng& rng,
                                       const attn::ExternalKV<T>* ext) const {
    if (steps < 1) throw std::invalid_argument("sample_joint: steps must be >= 1");
    const Tensor<T> cond = cond_frame0(l_tgt_init);
    const int64_t n = latent_channels(l_tgt_init);

    Tensor<T> z = seeded_normal<T>({l_tgt_init.frames, l_tgt_init.height, l_tgt_init.width, n},
                                   rng);
    SampleResult<T> result;
    const T dt = static_cast<T>(1.0 / static_cast<double>(steps));
    for (int k = steps; k >= 1; --k) {
        const double t = static_cast<double>(k) / static_cast<double>(steps);
        LatentBlock<T> l = build_target_latent(cond, z);
        l.grid_origin = l_tgt_init.grid_origin;
        const Tensor<T> velocity = forward_joint(l, l_ref, task, t, ext);
        ++result.target_forwards;
        ++result.reference_forwards;  // reference tokens re-processed this step
        z = sub(z, scale(velocity, dt));
    }
    result.latent = std::move(z);
    return result;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Model<T>::named_parameters() const {
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    for (auto& [name, t] : const_cast<Model<T>*>(this)->named_parameters_mut()) {
        out.emplace_back(name, t);
    }
    return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Model<T>::named_parameters_mut() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    out.emplace_back("patch_embed.w", &patch_w_);
    out.emplace_back("time_embed.w1", &time_w1_);
    out.emplace_back("time_embed.b1", &time_b1_);
    out.emplace_back("time_embed.w2", &time_w2_);
    out.emplace_back("time_embed.b2", &time_b2_);
    for (size_t l = 0; l < blocks_.size(); ++l) {
        const std::string p = "blocks." + std::to_string(l) + ".";
        Block& b = blocks_[l];
        out.emplace_back(p + "self.wq", &b.self_proj.wq);
        out.emplace_back(p + "self.wk", &b.self_proj.wk);
        out.emplace_back(p + "self.wv", &b.self_proj.wv);
        out.emplace_back(p + "self.wo", &b.self_proj.wo);
        out.emplace_back(p + "cross.wq", &b.cross_wq);
        out.emplace_back(p + "cross.wo", &b.cross_wo);
        out.emplace_back(p + "ffn.w1", &b.ffn_w1);
        out.emplace_back(p + "ffn.b1", &b.ffn_b1);
        out.emplace_back(p + "ffn.w2", &b.ffn_w2);
        out.emplace_back(p + "ffn.b2", &b.ffn_b2);
        out.emplace_back(p + "mod.w", &b.mod_w);
        out.emplace_back(p + "mod.b", &b.mod_b);
    }
    out.emplace_back("head.w", &head_w_);
    return out;
}

template <typename T>
void Model<T>::save_checkpoint(const std::string& path) const {
    nlohmann::json manifest = nlohmann::json::array();
    uint64_t offset = 0;
    const auto params = named_parameters();
    for (const auto& [name, t] : params) {
        nlohmann::json entry;
        entry["name"] = name;
        entry["shape"] = t->shape();
        entry["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
        entry["offset"] = offset;
        manifest.push_back(entry);
        offset += static_cast<uint64_t>(t->numel()) * sizeof(T);
    }
    const std::string mstr = manifest.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open '" + path + "'");
    const uint32_t magic = kCheckpointMagic, version = kCheckpointVersion;
    const uint64_t mlen = mstr.size();
    out.write(reinterpret_cast<const char*>(&magic), sizeof(magic));
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    out.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
    for (const auto& [name, t] : params) {
        out.write(reinterpret_cast<const char*>(t->data()),
                  static_cast<std::streamsize>(t->numel() * sizeof(T)));
    }
    if (!out) throw std::runtime_error("save_checkpoint: short write to '" + path + "'");
}

template <typename T>
void Model<T>::load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");
    uint32_t magic = 0, version = 0;
    uint64_t mlen = 0;
    in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    if (!in || magic != kCheckpointMagic) {
        throw std::runtime_error("load_checkpoint: '" + path + "' is not a checkpoint");
    }
    if (version != kCheckpointVersion) {
        throw std::runtime_error("load_checkpoint: unsupported version");
    }
    std::string mstr(mlen, '\0');
    in.read(mstr.data(), static_cast<std::streamsize>(mlen));
    const nlohmann::json manifest = nlohmann::json::parse(mstr);

    auto params = named_parameters_mut();
    if (manifest.size() != params.size()) {
        throw std::runtime_error("load_checkpoint: manifest has " +
                                 std::to_string(manifest.size()) + " tensors, model has " +
                                 std::to_string(params.size()));
    }
    const char* want_dtype = sizeof(T) == 4 ? "f32" : "f64";
    for (size_t i = 0; i < params.size(); ++i) {
        const nlohmann::json& entry = manifest[i];
        auto& [name, tensor] = params[i];
        if (entry.at("name").get<std::string>() != name) {
            throw std::runtime_error("load_checkpoint: tensor order mismatch at '" + name + "'");
        }
        if (entry.at("dtype").get<std::string>() != want_dtype) {
            throw std::runtime_error("load_checkpoint: dtype mismatch for '" + name + "'");
        }
        const Shape shape = entry.at("shape").get<Shape>();
        if (shape != tensor->shape()) {
            throw std::runtime_error("load_checkpoint: shape mismatch for '" + name + "'");
        }
        in.read(reinterpret_cast<char*>(tensor->data()),
                static_cast<std::streamsize>(tensor->numel() * sizeof(T)));
    }
    if (!in) throw std::runtime_error("load_checkpoint: truncated payload");
}

#define OMNIXFER_INSTANTIATE_DIT(T)                                       \
    template Tensor<T> layer_norm<T>(const Tensor<T>&, double);           \
    template Tensor<T> modulate<T>(const Tensor<T>&, const Tensor<T>&,    \
                                   const Tensor<T>&);                     \
    template class Model<T>;

OMNIXFER_INSTANTIATE_DIT(float)
OMNIXFER_INSTANTIATE_DIT(double)

}  // namespace omnixfer::dit
