#include "omnixfer/tma.hpp"

#include <cmath>

#include "omnixfer/hash.hpp"
#include "omnixfer/kernels.hpp"

namespace omnixfer::tma {

void TmaConfig::validate() const {
    if (query_tokens < 1 || provider_dim < 1 || summary_dim < 1 || model_dim < 1 || heads < 1) {
        throw std::invalid_argument("TmaConfig: all counts must be >= 1");
    }
    if (model_dim % heads != 0) {
        throw std::invalid_argument("TmaConfig: model_dim not divisible by heads");
    }
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
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    Tensor<T> out = kernels::matmul(x, w);
    const int64_t n = out.dim(0), d = out.dim(1);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < d; ++j) out(i, j) += b[j];
    }
    return out;
}

template <typename T>
Tensor<T> seeded_mat(Rng& rng, int64_t rows, int64_t cols) {
    return scale(seeded_normal<T>({rows, cols}, rng),
                 static_cast<T>(1.0 / std::sqrt(static_cast<double>(rows))));
}

template <typename T>
void check_summary(const Tensor<T>& s, int64_t summary_dim, const char* name) {
    if (s.numel() != summary_dim) {
        throw std::invalid_argument(std::string("provider: ") + name + " summary has " +
                                    std::to_string(s.numel()) + " entries, expected " +
                                    std::to_string(summary_dim));
    }
}

}  // namespace

template <typename T>
std::vector<std::string> validate_provider(const SemanticProvider<T>& provider,
                                           const TmaConfig& cfg, uint64_t probe_seed) {
    std::vector<std::string> violations;
    if (provider.protocol_version() != kProviderProtocolVersion) {
        violations.push_back("provider '" + provider.identity() + "' speaks protocol version " +
                             std::to_string(provider.protocol_version()) + ", expected " +
                             std::to_string(kProviderProtocolVersion));
        return violations;
    }
    Rng rng(probe_seed);
    QueryBank<T> bank;
    bank.kind = TaskKind::Motion;
    bank.tokens = seeded_normal<T>({static_cast<int64_t>(cfg.query_tokens), cfg.provider_dim},
                                   rng);
    ProviderInputs<T> inputs;
    inputs.first_frame = seeded_normal<T>({cfg.summary_dim}, rng);
    inputs.reference = seeded_normal<T>({cfg.summary_dim}, rng);
    inputs.templ = seeded_normal<T>({cfg.summary_dim}, rng);
    inputs.prompt = seeded_normal<T>({cfg.summary_dim}, rng);

    const Tensor<T> a = provider.features(inputs, bank);
    if (a.shape() != Shape{static_cast<int64_t>(cfg.query_tokens), cfg.provider_dim}) {
        violations.push_back("output shape " + shape_str(a.shape()) +
                             " does not match the query-token count");
    }
    if (!bit_equal(a, provider.features(inputs, bank))) {
        violations.push_back("repeated calls on identical inputs differ (provider is not pure)");
    }
    return violations;
}

template <typename T>
StubProvider<T>::StubProvider(const TmaConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(Hasher().mix(cfg.seed).mix(std::string("stub-provider")).value());
    w_ = seeded_mat<T>(rng, 4 * cfg_.summary_dim, cfg_.provider_dim);
}

template <typename T>
Tensor<T> StubProvider<T>::features(const ProviderInputs<T>& inputs,
                                    const QueryBank<T>& bank) const {
    check_summary(inputs.first_frame, cfg_.summary_dim, "first_frame");
    check_summary(inputs.reference, cfg_.summary_dim, "reference");
    check_summary(inputs.templ, cfg_.summary_dim, "template");
    check_summary(inputs.prompt, cfg_.summary_dim, "prompt");
    if (bank.tokens.rank() != 2 || bank.tokens.dim(1) != cfg_.provider_dim) {
        throw std::invalid_argument("provider: bank tokens must be [Q, provider_dim]");
    }

    Tensor<T> cat({1, 4 * cfg_.summary_dim});
    for (int64_t i = 0; i < cfg_.summary_dim; ++i) {
        cat(0, i) = inputs.first_frame[i];
        cat(0, cfg_.summary_dim + i) = inputs.reference[i];
        cat(0, 2 * cfg_.summary_dim + i) = inputs.templ[i];
        cat(0, 3 * cfg_.summary_dim + i) = inputs.prompt[i];
    }
    const Tensor<T> g = kernels::matmul(cat, w_);  // [1, provider_dim]

    Tensor<T> out = bank.tokens;
    const int64_t q = out.dim(0);
    for (int64_t i = 0; i < q; ++i) {
        for (int64_t j = 0; j < cfg_.provider_dim; ++j) out(i, j) += g(0, j);
    }
    return out;
}

template <typename T>
Tma<T>::Tma(const TmaConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    for (TaskKind kind : kAllTaskKinds) {
        Rng rng(Hasher().mix(cfg_.seed).mix(std::string("bank")).mix(task_name(kind)).value());
        QueryBank<T> bank;
        bank.kind = kind;
        bank.tokens = seeded_normal<T>({static_cast<int64_t>(cfg_.query_tokens),
                                        cfg_.provider_dim},
                                       rng);
        banks_.push_back(std::move(bank));

        Rng trng(Hasher().mix(cfg_.seed).mix(std::string("template")).mix(task_name(kind)).value());
        template_summaries_.push_back(seeded_normal<T>({cfg_.summary_dim}, trng));
    }

    Rng rng(Hasher().mix(cfg_.seed).mix(std::string("connector")).value());
    c_w1_ = seeded_mat<T>(rng, cfg_.provider_dim, cfg_.provider_dim);
    c_b1_ = Tensor<T>({cfg_.provider_dim});
    c_w2_ = seeded_mat<T>(rng, cfg_.provider_dim, cfg_.provider_dim);
    c_b2_ = Tensor<T>({cfg_.provider_dim});
    c_w3_ = seeded_mat<T>(rng, cfg_.provider_dim, cfg_.model_dim);
    c_b3_ = Tensor<T>({cfg_.model_dim});
    kv_wk_ = seeded_mat<T>(rng, cfg_.model_dim, cfg_.model_dim);
    kv_wv_ = seeded_mat<T>(rng, cfg_.model_dim, cfg_.model_dim);
}

template <typename T>
const QueryBank<T>& Tma<T>::bank(TaskKind kind) const {
    for (const QueryBank<T>& b : banks_) {
        if (b.kind == kind) return b;
    }
    throw std::logic_error("tma: no bank for task kind");
}

template <typename T>
Tensor<T> Tma<T>::template_summary(TaskKind kind) const {
    for (size_t i = 0; i < kAllTaskKinds.size(); ++i) {
        if (kAllTaskKinds[i] == kind) return template_summaries_[i];
    }
    throw std::logic_error("tma: no template summary for task kind");
}

template <typename T>
Tensor<T> Tma<T>::connect(const Tensor<T>& features) const {
    if (features.rank() != 2 || features.dim(1) != cfg_.provider_dim) {
        throw std::invalid_argument("connector: features must be [Q, " +
                                    std::to_string(cfg_.provider_dim) + "], got " +
                                    shape_str(features.shape()));
    }
    const Tensor<T> h1 = silu(affine(features, c_w1_, c_b1_));
    const Tensor<T> h2 = silu(affine(h1, c_w2_, c_b2_));
    return affine(h2, c_w3_, c_b3_);
}

template <typename T>
attn::ExternalKV<T> Tma<T>::connector(const Tensor<T>& features) const {
    const Tensor<T> ctx = connect(features);
    attn::ExternalKV<T> kv;
    kv.k = attn::split_heads(kernels::matmul(ctx, kv_wk_), cfg_.heads);
    kv.v = attn::split_heads(kernels::matmul(ctx, kv_wv_), cfg_.heads);
    return kv;
}

template <typename T>
attn::ExternalKV<T> Tma<T>::align(const SemanticProvider<T>& provider,
                                  const ProviderInputs<T>& inputs, TaskKind kind) const {
    return connector(provider.features(inputs, bank(kind)));
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Tma<T>::named_parameters() const {
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    for (const QueryBank<T>& b : banks_) {
        out.emplace_back("bank." + std::string(task_name(b.kind)) + ".tokens", &b.tokens);
    }
    out.emplace_back("connector.w1", &c_w1_);
    out.emplace_back("connector.b1", &c_b1_);
    out.emplace_back("connector.w2", &c_w2_);
    out.emplace_back("connector.b2", &c_b2_);
    out.emplace_back("connector.w3", &c_w3_);
    out.emplace_back("connector.b3", &c_b3_);
    out.emplace_back("kv.wk", &kv_wk_);
    out.emplace_back("kv.wv", &kv_wv_);
    return out;
}

template <typename T>
Composed<T> compose_tasks(const dit::Model<T>& model, const Tma<T>& tma,
                          const SemanticProvider<T>& provider,
                          const std::vector<TaskInput<T>>& inputs, int64_t tgt_frames,
                          int64_t tgt_width, const ComposePolicy& policy) {
    if (inputs.empty()) throw std::invalid_argument("compose_tasks: no tasks given");
    int appearance = 0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        for (size_t j = i + 1; j < inputs.size(); ++j) {
            if (inputs[i].task.kind == inputs[j].task.kind) {
                throw std::invalid_argument(
                    "compose_tasks: duplicate task kind '" +
                    std::string(task_name(inputs[i].task.kind)) +
                    "' (bank selection would be ambiguous)");
            }
        }
        if (inputs[i].task.is_appearance()) ++appearance;
    }
    if (policy.max_appearance_tasks > 0 && appearance > policy.max_appearance_tasks) {
        throw std::invalid_argument("compose_tasks: " + std::to_string(appearance) +
                                    " appearance tasks exceed the configured limit of " +
                                    std::to_string(policy.max_appearance_tasks));
    }

    Composed<T> out;
    std::vector<attn::RefCache<T>> caches;
    std::vector<attn::ExternalKV<T>> exts;
    for (const TaskInput<T>& in : inputs) {
        caches.push_back(model.build_ref_cache(in.reference, in.task, tgt_frames, tgt_width));
        exts.push_back(tma.align(provider, in.provider_inputs, in.task.kind));

        ComposedPart part;
        part.task = in.task.kind;
        part.bias = caches.back().parts[0].bias;
        part.ref_tokens = in.reference.tokens();
        part.ext_tokens = exts.back().tokens();
        out.parts.push_back(part);
    }

    attn::RefCache<T>& combined = out.cache;
    combined = caches[0];
    for (size_t c = 1; c < caches.size(); ++c) {
        for (size_t l = 0; l < combined.layers.size(); ++l) {
            combined.layers[l].k_rot = concat(0, combined.layers[l].k_rot, caches[c].layers[l].k_rot);
            combined.layers[l].v = concat(0, combined.layers[l].v, caches[c].layers[l].v);
            combined.hidden[l] = concat(0, combined.hidden[l], caches[c].hidden[l]);
        }
        combined.parts.push_back(caches[c].parts[0]);
    }
    combined.fingerprint = attn::cache_fingerprint(combined.model_fingerprint, combined.parts,
                                                   tgt_frames, tgt_width);

    out.ext = exts[0];
    for (size_t c = 1; c < exts.size(); ++c) {
        out.ext.k = concat(0, out.ext.k, exts[c].k);
        out.ext.v = concat(0, out.ext.v, exts[c].v);
    }
    return out;
}

#define OMNIXFER_INSTANTIATE_TMA(T)                                                            \
    template std::vector<std::string> validate_provider<T>(const SemanticProvider<T>&,         \
                                                           const TmaConfig&, uint64_t);       \
    template class StubProvider<T>;                                                           \
    template class Tma<T>;                                                                    \
    template Composed<T> compose_tasks<T>(const dit::Model<T>&, const Tma<T>&,                \
                                          const SemanticProvider<T>&,                         \
                                          const std::vector<TaskInput<T>>&, int64_t, int64_t, \
                                          const ComposePolicy&);

OMNIXFER_INSTANTIATE_TMA(float)
OMNIXFER_INSTANTIATE_TMA(double)

}  // namespace omnixfer::tma
