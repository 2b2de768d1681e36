#include "omnixfer/latents.hpp"

#include <cstdio>
#include <fstream>

#include "omnixfer/rng.hpp"

namespace omnixfer {

template <typename T>
Tensor<T> encode_lift_matrix(int n_channels, uint64_t seed) {
    Rng rng(seed);
    Tensor<T> w = seeded_normal<T>({3, n_channels}, rng);
    const T s = static_cast<T>(1.0 / std::sqrt(3.0));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] *= s;
    return w;
}

template <typename T>
Tensor<T> encode_stub(const Tensor<T>& clip, int temporal_factor, int spatial_factor,
                      int n_channels, uint64_t seed) {
    if (clip.rank() != 4 || clip.dim(3) != 3) {
        throw std::invalid_argument("encode_stub: expected clip [F,H,W,3], got " +
                                    shape_str(clip.shape()));
    }
    if (clip.numel() == 0) throw std::invalid_argument("encode_stub: zero-sized clip");
    if (temporal_factor < 1 || spatial_factor < 1 || n_channels < 1) {
        throw std::invalid_argument("encode_stub: factors and channel count must be >= 1");
    }
    const int64_t F = clip.dim(0), H = clip.dim(1), W = clip.dim(2);
    const int64_t f = (F + temporal_factor - 1) / temporal_factor;
    const int64_t h = (H + spatial_factor - 1) / spatial_factor;
    const int64_t w = (W + spatial_factor - 1) / spatial_factor;

    // Block mean with clamped (edge-replicating) source indices.
    Tensor<T> pooled({f, h, w, 3});
    const double inv = 1.0 / (static_cast<double>(temporal_factor) * spatial_factor * spatial_factor);
    for (int64_t ft = 0; ft < f; ++ft) {
        for (int64_t fy = 0; fy < h; ++fy) {
            for (int64_t fx = 0; fx < w; ++fx) {
                for (int c = 0; c < 3; ++c) {
                    double acc = 0.0;
                    for (int dt = 0; dt < temporal_factor; ++dt) {
                        const int64_t sf = std::min(ft * temporal_factor + dt, F - 1);
                        for (int dy = 0; dy < spatial_factor; ++dy) {
                            const int64_t sy = std::min(fy * spatial_factor + dy, H - 1);
                            for (int dx = 0; dx < spatial_factor; ++dx) {
                                const int64_t sx = std::min(fx * spatial_factor + dx, W - 1);
                                acc += static_cast<double>(clip(sf, sy, sx, c));
                            }
                        }
                    }
                    pooled(ft, fy, fx, c) = static_cast<T>(acc * inv);
                }
            }
        }
    }

    const Tensor<T> lift = encode_lift_matrix<T>(n_channels, seed);
    Tensor<T> out({f, h, w, static_cast<int64_t>(n_channels)});
    for (int64_t i = 0; i < f * h * w; ++i) {
        const T* p = pooled.data() + i * 3;
        T* q = out.data() + i * n_channels;
        for (int c = 0; c < n_channels; ++c) {
            q[c] = p[0] * lift(0, c) + p[1] * lift(1, c) + p[2] * lift(2, c);
        }
    }
    check_finite(out, "encode_stub");
    return out;
}

template <typename T>
Tensor<T> add_noise(const Tensor<T>& z0, double t, const Tensor<T>& eps) {
    check_same_shape(z0, eps, "add_noise");
    if (t < 0.0 || t > 1.0) {
        throw std::invalid_argument("add_noise: t = " + std::to_string(t) + " outside [0,1]");
    }
    if (t == 0.0) return z0;
    if (t == 1.0) return eps;
    Tensor<T> out(z0.shape());
    const T tt = static_cast<T>(t);
    const T omt = static_cast<T>(1.0 - t);
    for (int64_t i = 0; i < z0.numel(); ++i) out[i] = omt * z0[i] + tt * eps[i];
    return out;
}

template <typename T>
LatentBlock<T> build_target_latent(const Tensor<T>& cond_image_latent, const Tensor<T>& z_t) {
    if (cond_image_latent.rank() != 4 || cond_image_latent.dim(0) != 1) {
        throw std::invalid_argument("build_target_latent: condition image must be [1,h,w,n], got " +
                                    shape_str(cond_image_latent.shape()));
    }
    if (z_t.rank() != 4) {
        throw std::invalid_argument("build_target_latent: z_t must be [f,h,w,n]");
    }
    const int64_t f = z_t.dim(0), h = z_t.dim(1), w = z_t.dim(2), n = z_t.dim(3);
    if (cond_image_latent.dim(1) != h || cond_image_latent.dim(2) != w ||
        cond_image_latent.dim(3) != n) {
        throw std::invalid_argument("build_target_latent: condition " +
                                    shape_str(cond_image_latent.shape()) + " does not match z_t " +
                                    shape_str(z_t.shape()));
    }

    Tensor<T> c({f, h, w, n});
    std::memcpy(c.data(), cond_image_latent.data(),
                static_cast<size_t>(h * w * n) * sizeof(T));  // frame 0; rest stays zero

    Tensor<T> m({f, h, w, static_cast<int64_t>(kMaskChannels)});
    for (int64_t i = 0; i < h * w * kMaskChannels; ++i) m[i] = T(1);  // preserved frame 0

    return LatentBlock<T>::wrap(concat(3, concat(3, c, m), z_t));
}

template <typename T>
LatentBlock<T> build_reference_latent(const Tensor<T>& ref_latent, const TaskSpec& task) {
    if (ref_latent.rank() != 4) {
        throw std::invalid_argument("build_reference_latent: latent must be [f,h,w,n], got " +
                                    shape_str(ref_latent.shape()));
    }
    const int64_t f = ref_latent.dim(0), h = ref_latent.dim(1), w = ref_latent.dim(2);
    Tensor<T> m = Tensor<T>::full({f, h, w, static_cast<int64_t>(kMaskChannels)},
                                  static_cast<T>(task.mask_flag));
    return LatentBlock<T>::wrap(concat(3, concat(3, ref_latent, m), ref_latent));
}

template <typename T>
int64_t latent_channels(const LatentBlock<T>& l) {
    const int64_t n = (l.channels - kMaskChannels) / 2;
    if (assembled_channels(n) != l.channels) {
        throw std::invalid_argument("latent block channel count " + std::to_string(l.channels) +
                                    " is not of the form 2n+4");
    }
    return n;
}

template <typename T>
Tensor<T> cond_slice(const LatentBlock<T>& l) {
    return slice(l.data, 3, 0, latent_channels(l));
}

template <typename T>
Tensor<T> mask_slice(const LatentBlock<T>& l) {
    return slice(l.data, 3, latent_channels(l), kMaskChannels);
}

template <typename T>
Tensor<T> noise_slice(const LatentBlock<T>& l) {
    const int64_t n = latent_channels(l);
    return slice(l.data, 3, n + kMaskChannels, n);
}

namespace {

struct LatentHeader {
    uint32_t magic;
    uint32_t version;
    uint32_t f, h, w, channels;
    uint32_t dtype;  // 0 = f32, 1 = f64
};

template <typename T>
constexpr uint32_t dtype_tag() {
    return sizeof(T) == 4 ? 0u : 1u;
}

}  // namespace

template <typename T>
void write_latent(const std::string& path, const LatentBlock<T>& block) {
    block.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("write_latent: cannot open '" + path + "'");
    LatentHeader hdr{kLatentMagic,
                     kLatentVersion,
                     static_cast<uint32_t>(block.frames),
                     static_cast<uint32_t>(block.height),
                     static_cast<uint32_t>(block.width),
                     static_cast<uint32_t>(block.channels),
                     dtype_tag<T>()};
    out.write(reinterpret_cast<const char*>(&hdr), sizeof(hdr));
    out.write(reinterpret_cast<const char*>(block.data.data()),
              static_cast<std::streamsize>(block.data.numel() * sizeof(T)));
    if (!out) throw std::runtime_error("write_latent: short write to '" + path + "'");
}

template <typename T>
LatentBlock<T> read_latent(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_latent: cannot open '" + path + "'");
    LatentHeader hdr{};
    in.read(reinterpret_cast<char*>(&hdr), sizeof(hdr));
    if (!in || hdr.magic != kLatentMagic) {
        throw std::runtime_error("read_latent: '" + path + "' is not a latent container");
    }
    if (hdr.version != kLatentVersion) {
        throw std::runtime_error("read_latent: unsupported version " + std::to_string(hdr.version));
    }
    const Shape shape{static_cast<int64_t>(hdr.f), static_cast<int64_t>(hdr.h),
                      static_cast<int64_t>(hdr.w), static_cast<int64_t>(hdr.channels)};
    const int64_t count = shape_numel(shape);

    Tensor<T> data(shape);
    if (hdr.dtype == dtype_tag<T>()) {
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(count * sizeof(T)));
    } else if (hdr.dtype == 0) {
        std::vector<float> tmp(static_cast<size_t>(count));
        in.read(reinterpret_cast<char*>(tmp.data()),
                static_cast<std::streamsize>(count * sizeof(float)));
        for (int64_t i = 0; i < count; ++i) data[i] = static_cast<T>(tmp[static_cast<size_t>(i)]);
    } else if (hdr.dtype == 1) {
        std::vector<double> tmp(static_cast<size_t>(count));
        in.read(reinterpret_cast<char*>(tmp.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        for (int64_t i = 0; i < count; ++i) data[i] = static_cast<T>(tmp[static_cast<size_t>(i)]);
    } else {
        throw std::runtime_error("read_latent: unknown dtype tag " + std::to_string(hdr.dtype));
    }
    if (!in) throw std::runtime_error("read_latent: truncated payload in '" + path + "'");
    return LatentBlock<T>::wrap(std::move(data));
}

#define OMNIXFER_INSTANTIATE_LATENTS(T)                                                          \
    template Tensor<T> encode_lift_matrix<T>(int, uint64_t);                                     \
    template Tensor<T> encode_stub<T>(const Tensor<T>&, int, int, int, uint64_t);                \
    template Tensor<T> add_noise<T>(const Tensor<T>&, double, const Tensor<T>&);                 \
    template LatentBlock<T> build_target_latent<T>(const Tensor<T>&, const Tensor<T>&);          \
    template LatentBlock<T> build_reference_latent<T>(const Tensor<T>&, const TaskSpec&);        \
    template int64_t latent_channels<T>(const LatentBlock<T>&);                                  \
    template Tensor<T> cond_slice<T>(const LatentBlock<T>&);                                     \
    template Tensor<T> mask_slice<T>(const LatentBlock<T>&);                                     \
    template Tensor<T> noise_slice<T>(const LatentBlock<T>&);                                    \
    template void write_latent<T>(const std::string&, const LatentBlock<T>&);                    \
    template LatentBlock<T> read_latent<T>(const std::string&);

OMNIXFER_INSTANTIATE_LATENTS(float)
OMNIXFER_INSTANTIATE_LATENTS(double)

}  // namespace omnixfer
