#pragma once

#include <cmath>
#include <cstdint>

#include "omnixfer/kernels.hpp"
#include "omnixfer/task.hpp"
#include "omnixfer/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace omnixfer::rope {

/// Partition of the d/2 rotary pairs across the (frame, height, width) axes.
struct RopeConfig {
    int head_dim = 0;
    int pairs_t = 0;
    int pairs_h = 0;
    int pairs_w = 0;
    double base = 10000.0;

    /// Equal thirds of d/2, remainder to the temporal axis.
    static RopeConfig split_even(int head_dim, double base = 10000.0) {
        if (head_dim <= 0 || head_dim % 2 != 0) {
            throw std::invalid_argument("rope: head_dim must be positive and even, got " +
                                        std::to_string(head_dim));
        }
        const int pairs = head_dim / 2;
        const int third = pairs / 3;
        RopeConfig cfg;
        cfg.head_dim = head_dim;
        cfg.pairs_h = third;
        cfg.pairs_w = third;
        cfg.pairs_t = pairs - 2 * third;
        cfg.base = base;
        return cfg;
    }

    void validate() const {
        if (head_dim <= 0 || head_dim % 2 != 0) {
            throw std::invalid_argument("rope: head_dim must be positive and even");
        }
        if (pairs_t < 0 || pairs_h < 0 || pairs_w < 0 ||
            pairs_t + pairs_h + pairs_w != head_dim / 2) {
            throw std::invalid_argument("rope: pair partition (" + std::to_string(pairs_t) + "," +
                                        std::to_string(pairs_h) + "," + std::to_string(pairs_w) +
                                        ") does not cover head_dim/2 = " +
                                        std::to_string(head_dim / 2));
        }
    }
};

/// Integer grid offsets (delta_t, delta_w, delta_h), in latent-grid units.
/// The target branch always uses the zero bias.
struct PositionBias {
    int64_t delta_t = 0;
    int64_t delta_w = 0;
    int64_t delta_h = 0;

    bool operator==(const PositionBias&) const = default;
};

/// Temporal tasks shift the reference grid sideways by the target width;
/// appearance tasks shift it forward by the target frame count.
inline PositionBias task_bias(const TaskSpec& task, int64_t tgt_frames, int64_t tgt_width) {
    if (task.is_appearance()) return PositionBias{tgt_frames, 0, 0};
    return PositionBias{0, tgt_width, 0};
}

/// Token i of a row-major (frame, height, width) grid maps to coordinates
/// (t + delta_t, h + delta_h, w + delta_w). Output rows are (t, h, w).
template <typename T>
Tensor<T> position_grid(int64_t f, int64_t h, int64_t w, const PositionBias& bias = {}) {
    if (f < 1 || h < 1 || w < 1) {
        throw std::invalid_argument("position_grid: extents must be positive");
    }
    Tensor<T> coords({f * h * w, 3});
    int64_t i = 0;
    for (int64_t t = 0; t < f; ++t) {
        for (int64_t y = 0; y < h; ++y) {
            for (int64_t x = 0; x < w; ++x) {
                coords(i, 0) = static_cast<T>(t + bias.delta_t);
                coords(i, 1) = static_cast<T>(y + bias.delta_h);
                coords(i, 2) = static_cast<T>(x + bias.delta_w);
                ++i;
            }
        }
    }
    return coords;
}

namespace detail {

/// Axis and per-axis frequency for rotary pair p. The pair block order is
/// temporal, then height, then width; pair j of axis a rotates at
/// pos_a * base^(-j / P_a).
inline void pair_axis_freq(const RopeConfig& cfg, int pair, int* axis, double* freq) {
    int j = pair;
    if (j < cfg.pairs_t) {
        *axis = 0;
        *freq = std::pow(cfg.base, -static_cast<double>(j) / cfg.pairs_t);
        return;
    }
    j -= cfg.pairs_t;
    if (j < cfg.pairs_h) {
        *axis = 1;
        *freq = std::pow(cfg.base, -static_cast<double>(j) / cfg.pairs_h);
        return;
    }
    j -= cfg.pairs_h;
    *axis = 2;
    *freq = std::pow(cfg.base, -static_cast<double>(j) / cfg.pairs_w);
}

}  // namespace detail

template <typename T>
void check_rope_args(const Tensor<T>& x, const Tensor<T>& coords, const RopeConfig& cfg) {
    cfg.validate();
    if (x.rank() != 3 || x.dim(2) != cfg.head_dim) {
        throw std::invalid_argument("apply_rope: expected [tokens, heads, " +
                                    std::to_string(cfg.head_dim) + "], got " +
                                    shape_str(x.shape()));
    }
    if (coords.rank() != 2 || coords.dim(1) != 3 || coords.dim(0) != x.dim(0)) {
        throw std::invalid_argument("apply_rope: coords " + shape_str(coords.shape()) +
                                    " do not match tokens " + shape_str(x.shape()));
    }
}

/// Rotates each rotary pair of x [tokens, heads, head_dim] by its axis
/// coordinate times the pair frequency. Non-destructive.
template <typename T>
Tensor<T> apply_rope(const Tensor<T>& x, const Tensor<T>& coords, const RopeConfig& cfg) {
    check_rope_args(x, coords, cfg);
    const int64_t tokens = x.dim(0), heads = x.dim(1);
    const int pairs = cfg.head_dim / 2;
    Tensor<T> out = x;
    T* op = out.data();
    const T* cp = coords.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(kernels::max_threads()) \
    if (kernels::detail::go_parallel(tokens, tokens* heads* pairs * 8))
#endif
    for (int64_t i = 0; i < tokens; ++i) {
        for (int p = 0; p < pairs; ++p) {
            int axis;
            double freq;
            detail::pair_axis_freq(cfg, p, &axis, &freq);
            const double angle = static_cast<double>(cp[i * 3 + axis]) * freq;
            const T c = static_cast<T>(std::cos(angle));
            const T s = static_cast<T>(std::sin(angle));
            for (int64_t hh = 0; hh < heads; ++hh) {
                T* v = op + (i * heads + hh) * cfg.head_dim + 2 * p;
                const T a = v[0], b = v[1];
                v[0] = a * c - b * s;
                v[1] = a * s + b * c;
            }
        }
    }
    return out;
}

/// Pulls a cotangent back through apply_rope: each pair is multiplied by the
/// transpose of its forward rotation.
template <typename T>
Tensor<T> rope_backward(const Tensor<T>& grad, const Tensor<T>& coords, const RopeConfig& cfg) {
    check_rope_args(grad, coords, cfg);
    const int64_t tokens = grad.dim(0), heads = grad.dim(1);
    const int pairs = cfg.head_dim / 2;
    Tensor<T> out = grad;
    for (int64_t i = 0; i < tokens; ++i) {
        for (int p = 0; p < pairs; ++p) {
            int axis;
            double freq;
            detail::pair_axis_freq(cfg, p, &axis, &freq);
            const double angle = static_cast<double>(coords(i, axis)) * freq;
            const T c = static_cast<T>(std::cos(angle));
            const T s = static_cast<T>(std::sin(angle));
            for (int64_t hh = 0; hh < heads; ++hh) {
                T* v = out.data() + (i * heads + hh) * cfg.head_dim + 2 * p;
                const T a = v[0], b = v[1];
                v[0] = a * c + b * s;
                v[1] = -a * s + b * c;
            }
        }
    }
    return out;
}

}  // namespace omnixfer::rope
