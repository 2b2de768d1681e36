#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "omnixfer/attention.hpp"
#include "omnixfer/dit.hpp"
#include "omnixfer/latents.hpp"
#include "omnixfer/task.hpp"

namespace omnixfer::tma {

struct TmaConfig {
    int query_tokens = 64;   // Q per task bank
    int64_t provider_dim = 256;
    int64_t summary_dim = 16;  // per pooled input summary
    int64_t model_dim = 128;
    int heads = 4;
    uint64_t seed = 0;

    void validate() const;
};

/// Learnable readout tokens dedicated to one task kind.
template <typename T>
struct QueryBank {
    TaskKind kind = TaskKind::Motion;
    Tensor<T> tokens;  // [Q, provider_dim]
};

/// Pre-pooled fixed-size summaries of the provider's four input groups.
template <typename T>
struct ProviderInputs {
    Tensor<T> first_frame;  // [summary_dim]
    Tensor<T> reference;
    Tensor<T> templ;
    Tensor<T> prompt;
};

inline constexpr int kProviderProtocolVersion = 1;

/// Deterministic map from pooled input summaries plus a query bank to a
/// fixed-shape feature sequence [Q, provider_dim]. Implementations must be
/// pure; the invariant suite validates external ones against this contract.
template <typename T>
class SemanticProvider {
public:
    virtual ~SemanticProvider() = default;
    virtual std::string identity() const = 0;
    virtual int protocol_version() const { return kProviderProtocolVersion; }
    virtual Tensor<T> features(const ProviderInputs<T>& inputs,
                               const QueryBank<T>& bank) const = 0;
};

/// Contract check for provider implementations (including external ones):
/// protocol version, output shape, and determinism on seeded inputs.
/// Returns the violations found, empty when the provider conforms.
template <typename T>
std::vector<std::string> validate_provider(const SemanticProvider<T>& provider,
                                           const TmaConfig& cfg, uint64_t probe_seed = 7);

/// Shipped stand-in: concatenated summaries through a seeded linear map,
/// broadcast-added to the bank tokens.
template <typename T>
class StubProvider : public SemanticProvider<T> {
public:
    explicit StubProvider(const TmaConfig& cfg);
    std::string identity() const override { return "stub-linear"; }
    Tensor<T> features(const ProviderInputs<T>& inputs, const QueryBank<T>& bank) const override;

private:
    TmaConfig cfg_;
    Tensor<T> w_;  // [4*summary_dim, provider_dim]
};

/// Per-task MetaQuery banks, the three-layer connector, and the attention
/// K/V projections that feed target-branch cross-attention.
template <typename T>
class Tma {
public:
    explicit Tma(const TmaConfig& cfg);

    const TmaConfig& config() const { return cfg_; }
    const QueryBank<T>& bank(TaskKind kind) const;

    /// Fixed per-task constant summary standing in for template tokens.
    Tensor<T> template_summary(TaskKind kind) const;

    /// Three affine layers with nonlinearities between them, provider_dim ->
    /// model_dim.
    Tensor<T> connect(const Tensor<T>& features) const;

    /// connect() followed by the K/V projections and head split.
    attn::ExternalKV<T> connector(const Tensor<T>& features) const;

    attn::ExternalKV<T> align(const SemanticProvider<T>& provider,
                              const ProviderInputs<T>& inputs, TaskKind kind) const;

    std::vector<std::pair<std::string, const Tensor<T>*>> named_parameters() const;

private:
    TmaConfig cfg_;
    std::vector<QueryBank<T>> banks_;  // one per task kind, fixed order
    std::vector<Tensor<T>> template_summaries_;
    Tensor<T> c_w1_, c_b1_, c_w2_, c_b2_, c_w3_, c_b3_;
    Tensor<T> kv_wk_, kv_wv_;  // [model_dim, model_dim]
};

struct ComposePolicy {
    int max_appearance_tasks = 1;  // <= 0 disables the limit
};

template <typename T>
struct TaskInput {
    TaskSpec task;
    LatentBlock<T> reference;
    ProviderInputs<T> provider_inputs;
};

struct ComposedPart {
    TaskKind task = TaskKind::Motion;
    rope::PositionBias bias;
    int64_t ref_tokens = 0;
    int64_t ext_tokens = 0;
};

template <typename T>
struct Composed {
    attn::RefCache<T> cache;   // per-layer K/V concatenated token-wise across tasks
    attn::ExternalKV<T> ext;   // provider K/V concatenated across tasks
    std::vector<ComposedPart> parts;
};

/// Builds each task's reference cache and aligned K/V, then concatenates
/// them token-wise in input order. Duplicate task kinds are rejected (the
/// bank choice would be ambiguous).
template <typename T>
Composed<T> compose_tasks(const dit::Model<T>& model, const Tma<T>& tma,
                          const SemanticProvider<T>& provider,
                          const std::vector<TaskInput<T>>& inputs, int64_t tgt_frames,
                          int64_t tgt_width, const ComposePolicy& policy = {});

}  // namespace omnixfer::tma
