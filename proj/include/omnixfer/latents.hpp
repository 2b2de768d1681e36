#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "omnixfer/task.hpp"
#include "omnixfer/tensor.hpp"

namespace omnixfer {

inline constexpr int kMaskChannels = 4;
inline constexpr int kDefaultLatentChannels = 16;
inline constexpr int kDefaultTemporalFactor = 4;
inline constexpr int kDefaultSpatialFactor = 8;
inline constexpr uint64_t kEncoderSeed = 0xE5C0DEull;

inline int64_t assembled_channels(int64_t n) { return 2 * n + kMaskChannels; }

/// A latent grid plus its placement. `data` is [frames, height, width,
/// channels]; assembled inputs carry 2n+4 channels laid out [c, m, z].
template <typename T>
struct LatentBlock {
    int64_t frames = 0;
    int64_t height = 0;
    int64_t width = 0;
    int64_t channels = 0;
    Tensor<T> data;
    // (frame, width, height) offsets used when materializing coordinates.
    std::array<int64_t, 3> grid_origin{0, 0, 0};

    static LatentBlock wrap(Tensor<T> t) {
        if (t.rank() != 4) {
            throw std::invalid_argument("LatentBlock: need [f,h,w,c] data, got " +
                                        shape_str(t.shape()));
        }
        LatentBlock b;
        b.frames = t.dim(0);
        b.height = t.dim(1);
        b.width = t.dim(2);
        b.channels = t.dim(3);
        b.data = std::move(t);
        b.validate();
        return b;
    }

    void validate() const {
        if (frames < 1 || height < 1 || width < 1) {
            throw std::invalid_argument("LatentBlock: extents must be >= 1");
        }
        if (data.rank() != 4 || data.dim(0) != frames || data.dim(1) != height ||
            data.dim(2) != width || data.dim(3) != channels) {
            throw std::invalid_argument("LatentBlock: data shape " + shape_str(data.shape()) +
                                        " inconsistent with grid");
        }
    }

    int64_t tokens() const { return frames * height * width; }
};

/// Mean-pools a raw clip [F,H,W,3] over temporal_factor x spatial_factor^2
/// blocks (edge cells replicate), then lifts 3 -> n channels with a fixed
/// seeded linear map.
template <typename T>
Tensor<T> encode_stub(const Tensor<T>& clip, int temporal_factor, int spatial_factor,
                      int n_channels, uint64_t seed = kEncoderSeed);

/// The 3 x n lift matrix used by encode_stub for a given seed.
template <typename T>
Tensor<T> encode_lift_matrix(int n_channels, uint64_t seed = kEncoderSeed);

/// Rectified-flow interpolation z_t = (1 - t) * z0 + t * eps, t in [0,1].
template <typename T>
Tensor<T> add_noise(const Tensor<T>& z0, double t, const Tensor<T>& eps);

/// Assembles the target latent [c, m, z_t]: the condition image occupies
/// frame 0 of c with zero-filled later frames, m is 1 on frame 0 and 0
/// elsewhere.
template <typename T>
LatentBlock<T> build_target_latent(const Tensor<T>& cond_image_latent, const Tensor<T>& z_t);

/// Assembles the reference latent [c_ref, m_ref, z0_ref]: both n-channel
/// slices are the (noise-free) reference latent, the mask channels carry the
/// task flag everywhere.
template <typename T>
LatentBlock<T> build_reference_latent(const Tensor<T>& ref_latent, const TaskSpec& task);

template <typename T>
Tensor<T> cond_slice(const LatentBlock<T>& l);
template <typename T>
Tensor<T> mask_slice(const LatentBlock<T>& l);
template <typename T>
Tensor<T> noise_slice(const LatentBlock<T>& l);

/// Latent channel count n of an assembled block (channels = 2n+4).
template <typename T>
int64_t latent_channels(const LatentBlock<T>& l);

// Binary container: little-endian header {magic, version, f, h, w, channels,
// dtype} followed by the row-major payload. Also used for clip fixtures.
inline constexpr uint32_t kLatentMagic = 0x544C584Fu;  // "OXLT"
inline constexpr uint32_t kLatentVersion = 1;

template <typename T>
void write_latent(const std::string& path, const LatentBlock<T>& block);

/// Reads a latent file, converting the payload to T if it was stored in the
/// other precision.
template <typename T>
LatentBlock<T> read_latent(const std::string& path);

}  // namespace omnixfer
