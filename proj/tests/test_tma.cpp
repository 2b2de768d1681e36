#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "omnixfer/kernels.hpp"
#include "omnixfer/tma.hpp"

using namespace omnixfer;
using tma::ProviderInputs;
using tma::StubProvider;
using tma::Tma;
using tma::TmaConfig;

namespace {

TmaConfig small_config(uint64_t seed) {
    TmaConfig cfg;
    cfg.query_tokens = 8;
    cfg.provider_dim = 32;
    cfg.summary_dim = 6;
    cfg.model_dim = 32;
    cfg.heads = 2;
    cfg.seed = seed;
    return cfg;
}

ProviderInputs<double> random_inputs(const TmaConfig& cfg, Rng& rng) {
    ProviderInputs<double> in;
    in.first_frame = seeded_normal<double>({cfg.summary_dim}, rng);
    in.reference = seeded_normal<double>({cfg.summary_dim}, rng);
    in.templ = seeded_normal<double>({cfg.summary_dim}, rng);
    in.prompt = Tensor<double>({cfg.summary_dim});
    return in;
}

dit::DitConfig model_config(const TmaConfig& tcfg, uint64_t seed) {
    dit::DitConfig cfg;
    cfg.layers = 2;
    cfg.model_dim = tcfg.model_dim;
    cfg.heads = tcfg.heads;
    cfg.ffn_dim = 64;
    cfg.latent_channels = static_cast<int>(tcfg.summary_dim);
    cfg.time_embed_dim = 32;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("stub provider is deterministic and input-sensitive") {
    const TmaConfig cfg = small_config(3);
    const StubProvider<double> provider(cfg);
    const Tma<double> tma_mod(cfg);
    Rng rng(7);
    const ProviderInputs<double> in = random_inputs(cfg, rng);
    const auto& bank = tma_mod.bank(TaskKind::Motion);

    const Tensor<double> a = provider.features(in, bank);
    const Tensor<double> b = provider.features(in, bank);
    CHECK(bit_equal(a, b));
    CHECK(a.shape() == Shape{cfg.query_tokens, cfg.provider_dim});

    ProviderInputs<double> changed = in;
    changed.reference = seeded_normal<double>({cfg.summary_dim}, rng);
    CHECK_FALSE(bit_equal(provider.features(changed, bank), a));

    ProviderInputs<double> same_zero_prompt = in;
    same_zero_prompt.prompt = Tensor<double>({cfg.summary_dim});
    CHECK(bit_equal(provider.features(same_zero_prompt, bank), a));
}

TEST_CASE("provider output shape at the default Q") {
    TmaConfig cfg;
    cfg.seed = 1;
    const StubProvider<double> provider(cfg);
    const Tma<double> tma_mod(cfg);
    Rng rng(2);
    ProviderInputs<double> in;
    in.first_frame = seeded_normal<double>({cfg.summary_dim}, rng);
    in.reference = seeded_normal<double>({cfg.summary_dim}, rng);
    in.templ = seeded_normal<double>({cfg.summary_dim}, rng);
    in.prompt = Tensor<double>({cfg.summary_dim});
    const Tensor<double> f = provider.features(in, tma_mod.bank(TaskKind::ID));
    CHECK(f.shape() == Shape{64, 256});
}

TEST_CASE("provider contract validation") {
    const TmaConfig cfg = small_config(5);
    const StubProvider<double> good(cfg);
    CHECK(tma::validate_provider(good, cfg).empty());

    struct BadShape : tma::SemanticProvider<double> {
        std::string identity() const override { return "bad-shape"; }
        Tensor<double> features(const ProviderInputs<double>&,
                                const tma::QueryBank<double>& bank) const override {
            return Tensor<double>({bank.tokens.dim(0) + 1, bank.tokens.dim(1)});
        }
    } bad_shape;
    CHECK_FALSE(tma::validate_provider(bad_shape, cfg).empty());

    struct OldProtocol : tma::SemanticProvider<double> {
        std::string identity() const override { return "old"; }
        int protocol_version() const override { return 0; }
        Tensor<double> features(const ProviderInputs<double>&,
                                const tma::QueryBank<double>& bank) const override {
            return bank.tokens;
        }
    } old_protocol;
    const auto violations = tma::validate_provider(old_protocol, cfg);
    REQUIRE(violations.size() == 1);
    CHECK(violations[0].find("protocol") != std::string::npos);
}

TEST_CASE("banks are distinct per task and stable across instances") {
    const TmaConfig cfg = small_config(11);
    const Tma<double> a(cfg);
    const Tma<double> b(cfg);
    for (TaskKind kind : kAllTaskKinds) {
        CHECK(bit_equal(a.bank(kind).tokens, b.bank(kind).tokens));
    }
    CHECK_FALSE(bit_equal(a.bank(TaskKind::ID).tokens, a.bank(TaskKind::Style).tokens));
    CHECK_FALSE(bit_equal(a.template_summary(TaskKind::ID),
                          a.template_summary(TaskKind::Camera)));
}

TEST_CASE("connector maps zero features to zero K/V") {
    const TmaConfig cfg = small_config(13);
    const Tma<double> tma_mod(cfg);
    const attn::ExternalKV<double> kv =
        tma_mod.connector(Tensor<double>({cfg.query_tokens, cfg.provider_dim}));
    for (int64_t i = 0; i < kv.k.numel(); ++i) CHECK(kv.k[i] == 0.0);
    for (int64_t i = 0; i < kv.v.numel(); ++i) CHECK(kv.v[i] == 0.0);

    CHECK_THROWS_AS(tma_mod.connector(Tensor<double>({4, cfg.provider_dim + 1})),
                    std::invalid_argument);
}

TEST_CASE("connector has exactly three weight matrices in the manifest") {
    const Tma<double> tma_mod(small_config(17));
    int connector_mats = 0;
    for (const auto& [name, t] : tma_mod.named_parameters()) {
        if (name.rfind("connector.w", 0) == 0) {
            CHECK(t->rank() == 2);
            ++connector_mats;
        }
    }
    CHECK(connector_mats == 3);
}

TEST_CASE("connector equals the hand-composed three affine layers") {
    const TmaConfig cfg = small_config(19);
    const Tma<double> tma_mod(cfg);
    Rng rng(23);
    const Tensor<double> features = seeded_normal<double>({1, cfg.provider_dim}, rng);

    std::map<std::string, const Tensor<double>*> params;
    for (const auto& [name, t] : tma_mod.named_parameters()) params[name] = t;
    auto affine = [](const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
        Tensor<double> out = kernels::matmul(x, w);
        for (int64_t j = 0; j < out.dim(1); ++j) out(0, j) += b[j];
        return out;
    };
    auto silu = [](Tensor<double> v) {
        for (int64_t i = 0; i < v.numel(); ++i) v[i] = v[i] / (1.0 + std::exp(-v[i]));
        return v;
    };
    const Tensor<double> h1 =
        silu(affine(features, *params.at("connector.w1"), *params.at("connector.b1")));
    const Tensor<double> h2 =
        silu(affine(h1, *params.at("connector.w2"), *params.at("connector.b2")));
    const Tensor<double> expect =
        affine(h2, *params.at("connector.w3"), *params.at("connector.b3"));
    CHECK(max_abs_diff(tma_mod.connect(features), expect) < 1e-9);
}

TEST_CASE("singleton composition equals the direct path bit-for-bit") {
    const TmaConfig tcfg = small_config(29);
    const dit::Model<double> model(model_config(tcfg, 30));
    const Tma<double> tma_mod(tcfg);
    const StubProvider<double> provider(tcfg);
    Rng rng(31);

    tma::TaskInput<double> in;
    in.task = task_spec(TaskKind::Camera);
    in.reference = build_reference_latent(
        seeded_normal<double>({2, 2, 2, model.config().latent_channels}, rng), in.task);
    in.provider_inputs = random_inputs(tcfg, rng);

    const tma::Composed<double> composed =
        tma::compose_tasks(model, tma_mod, provider, {in}, 2, 2);
    const attn::RefCache<double> direct = model.build_ref_cache(in.reference, in.task, 2, 2);
    const attn::ExternalKV<double> ext =
        tma_mod.align(provider, in.provider_inputs, in.task.kind);

    REQUIRE(composed.cache.layers.size() == direct.layers.size());
    for (size_t l = 0; l < direct.layers.size(); ++l) {
        CHECK(bit_equal(composed.cache.layers[l].k_rot, direct.layers[l].k_rot));
        CHECK(bit_equal(composed.cache.layers[l].v, direct.layers[l].v));
    }
    CHECK(composed.cache.fingerprint == direct.fingerprint);
    CHECK(bit_equal(composed.ext.k, ext.k));
    CHECK(bit_equal(composed.ext.v, ext.v));
}

TEST_CASE("two-task composition concatenates and slices back exactly") {
    const TmaConfig tcfg = small_config(37);
    const dit::Model<double> model(model_config(tcfg, 38));
    const Tma<double> tma_mod(tcfg);
    const StubProvider<double> provider(tcfg);
    Rng rng(41);
    const int n = model.config().latent_channels;

    tma::TaskInput<double> a;
    a.task = task_spec(TaskKind::Camera);
    a.reference = build_reference_latent(seeded_normal<double>({2, 2, 2, n}, rng), a.task);
    a.provider_inputs = random_inputs(tcfg, rng);
    tma::TaskInput<double> b;
    b.task = task_spec(TaskKind::Style);
    b.reference = build_reference_latent(seeded_normal<double>({1, 3, 2, n}, rng), b.task);
    b.provider_inputs = random_inputs(tcfg, rng);

    const tma::Composed<double> c = tma::compose_tasks(model, tma_mod, provider, {a, b}, 2, 2);
    const int64_t na = a.reference.tokens(), nb = b.reference.tokens();
    CHECK(c.cache.total_tokens() == na + nb);
    CHECK(c.ext.tokens() == 2 * tcfg.query_tokens);
    CHECK(c.parts.size() == 2);
    CHECK(c.parts[0].bias == rope::task_bias(a.task, 2, 2));
    CHECK(c.parts[1].bias == rope::task_bias(b.task, 2, 2));

    const attn::RefCache<double> da = model.build_ref_cache(a.reference, a.task, 2, 2);
    const attn::RefCache<double> db = model.build_ref_cache(b.reference, b.task, 2, 2);
    for (size_t l = 0; l < c.cache.layers.size(); ++l) {
        CHECK(bit_equal(slice(c.cache.layers[l].k_rot, 0, 0, na), da.layers[l].k_rot));
        CHECK(bit_equal(slice(c.cache.layers[l].k_rot, 0, na, nb), db.layers[l].k_rot));
        CHECK(bit_equal(slice(c.cache.layers[l].v, 0, 0, na), da.layers[l].v));
        CHECK(bit_equal(slice(c.cache.layers[l].v, 0, na, nb), db.layers[l].v));
    }
}

TEST_CASE("composition order does not change the target output") {
    const TmaConfig tcfg = small_config(43);
    const dit::Model<double> model(model_config(tcfg, 44));
    const Tma<double> tma_mod(tcfg);
    const StubProvider<double> provider(tcfg);
    Rng rng(47);
    const int n = model.config().latent_channels;
    const int64_t f = 2, h = 2, w = 2;

    tma::TaskInput<double> a;
    a.task = task_spec(TaskKind::Motion);
    a.reference = build_reference_latent(seeded_normal<double>({2, 2, 2, n}, rng), a.task);
    a.provider_inputs = random_inputs(tcfg, rng);
    tma::TaskInput<double> b;
    b.task = task_spec(TaskKind::ID);
    b.reference = build_reference_latent(seeded_normal<double>({1, 2, 2, n}, rng), b.task);
    b.provider_inputs = random_inputs(tcfg, rng);

    const tma::Composed<double> ab = tma::compose_tasks(model, tma_mod, provider, {a, b}, f, w);
    const tma::Composed<double> ba = tma::compose_tasks(model, tma_mod, provider, {b, a}, f, w);

    const LatentBlock<double> l_tgt = build_target_latent(
        seeded_normal<double>({1, h, w, n}, rng), seeded_normal<double>({f, h, w, n}, rng));
    const Tensor<double> out_ab = model.forward(l_tgt, ab.cache, 0.5, &ab.ext);
    const Tensor<double> out_ba = model.forward(l_tgt, ba.cache, 0.5, &ba.ext);
    CHECK(max_rel_diff(out_ab, out_ba, 1e-9) < 1e-8);
}

TEST_CASE("duplicate task kinds are rejected") {
    const TmaConfig tcfg = small_config(53);
    const dit::Model<double> model(model_config(tcfg, 54));
    const Tma<double> tma_mod(tcfg);
    const StubProvider<double> provider(tcfg);
    Rng rng(59);
    const int n = model.config().latent_channels;

    tma::TaskInput<double> a;
    a.task = task_spec(TaskKind::Motion);
    a.reference = build_reference_latent(seeded_normal<double>({1, 2, 2, n}, rng), a.task);
    a.provider_inputs = random_inputs(tcfg, rng);
    tma::TaskInput<double> b = a;

    CHECK_THROWS_WITH_AS(tma::compose_tasks(model, tma_mod, provider, {a, b}, 2, 2),
                         doctest::Contains("duplicate"), std::invalid_argument);
}

TEST_CASE("appearance-task limit is enforced but configurable") {
    const TmaConfig tcfg = small_config(61);
    const dit::Model<double> model(model_config(tcfg, 62));
    const Tma<double> tma_mod(tcfg);
    const StubProvider<double> provider(tcfg);
    Rng rng(67);
    const int n = model.config().latent_channels;

    auto make = [&](TaskKind kind) {
        tma::TaskInput<double> in;
        in.task = task_spec(kind);
        in.reference = build_reference_latent(seeded_normal<double>({1, 2, 2, n}, rng), in.task);
        in.provider_inputs = random_inputs(tcfg, rng);
        return in;
    };
    const auto id = make(TaskKind::ID);
    const auto style = make(TaskKind::Style);
    CHECK_THROWS_WITH_AS(tma::compose_tasks(model, tma_mod, provider, {id, style}, 2, 2),
                         doctest::Contains("appearance"), std::invalid_argument);
    tma::ComposePolicy open_policy;
    open_policy.max_appearance_tasks = 0;
    CHECK_NOTHROW(tma::compose_tasks(model, tma_mod, provider, {id, style}, 2, 2, open_policy));
}
