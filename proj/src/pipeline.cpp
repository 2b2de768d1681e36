#include "omnixfer/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "omnixfer/bench.hpp"
#include "omnixfer/dit.hpp"
#include "omnixfer/hash.hpp"
#include "omnixfer/latents.hpp"
#include "omnixfer/tma.hpp"
#include "omnixfer/verify.hpp"

namespace omnixfer::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

template <typename T>
std::string tensor_hash(const Tensor<T>& t) {
    return hex64(fnv1a64(t.data(), static_cast<size_t>(t.numel()) * sizeof(T)));
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

json config_echo(const RunConfig& cfg) {
    json tasks = json::array();
    for (const TaskEntry& t : cfg.tasks) {
        tasks.push_back({{"kind", task_name(t.kind)}, {"reference", t.reference_fixture}});
    }
    return {{"mode", mode_name(cfg.mode)},
            {"tasks", tasks},
            {"seed", cfg.seed},
            {"steps", cfg.steps},
            {"precision", cfg.precision},
            {"ref_cross_attention", cfg.model.ref_cross_attention},
            {"first_frame", cfg.first_frame_fixture},
            {"prompt", cfg.prompt_fixture},
            {"target", {{"frames", cfg.tgt_frames}, {"height", cfg.tgt_height},
                        {"width", cfg.tgt_width}}},
            {"model",
             {{"layers", cfg.model.layers},
              {"model_dim", cfg.model.model_dim},
              {"heads", cfg.model.heads},
              {"ffn_dim", cfg.model.ffn_dim},
              {"latent_channels", cfg.model.latent_channels},
              {"time_embed_dim", cfg.model.time_embed_dim}}}};
}

void write_meta_sidecar(const std::string& out_dir, double wall_ms) {
    json meta;
    meta["wall_ms"] = wall_ms;
    meta["machine"] = bench::machine_fingerprint(kernels::max_threads());
    meta["finished_unix_ms"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count();
    write_json(out_dir + "/meta.json", meta);
}

/// Per-channel mean over the grid: [f,h,w,n] -> [n].
template <typename T>
Tensor<T> pool_summary(const Tensor<T>& latent) {
    const int64_t cells = latent.dim(0) * latent.dim(1) * latent.dim(2);
    const int64_t n = latent.dim(3);
    Tensor<T> out({n});
    for (int64_t i = 0; i < cells; ++i) {
        for (int64_t c = 0; c < n; ++c) out[c] += latent[i * n + c];
    }
    for (int64_t c = 0; c < n; ++c) out[c] /= static_cast<T>(cells);
    return out;
}

template <typename T>
Tensor<T> load_clip(const std::string& path, const char* label) {
    const LatentBlock<T> block = read_latent<T>(path);
    if (block.channels != 3) {
        throw std::runtime_error(std::string(label) + " fixture '" + path +
                                 "' must be a raw clip with 3 channels, found " +
                                 std::to_string(block.channels));
    }
    return block.data;
}

template <typename T>
tma::TmaConfig make_tma_config(const RunConfig& cfg) {
    tma::TmaConfig tcfg;
    tcfg.model_dim = cfg.model.model_dim;
    tcfg.heads = cfg.model.heads;
    tcfg.summary_dim = cfg.model.latent_channels;
    tcfg.seed = cfg.seed;
    return tcfg;
}

template <typename T>
Tensor<T> load_prompt_summary(const RunConfig& cfg, int64_t summary_dim) {
    if (cfg.prompt_fixture.empty()) return Tensor<T>({summary_dim});
    const LatentBlock<T> block = read_latent<T>(cfg.prompt_fixture);
    if (block.data.numel() != summary_dim) {
        throw std::runtime_error("prompt fixture holds " + std::to_string(block.data.numel()) +
                                 " values, expected " + std::to_string(summary_dim));
    }
    return block.data.reshaped({summary_dim});
}

struct TargetSetup {
    int64_t frames = 0, height = 0, width = 0;
};

/// Temporal tasks start from the encoded first frame; appearance tasks use a
/// zero condition on the configured grid.
template <typename T>
Tensor<T> make_condition(const RunConfig& cfg, bool any_temporal, TargetSetup* grid) {
    const int n = cfg.model.latent_channels;
    grid->frames = cfg.tgt_frames;
    if (any_temporal) {
        const Tensor<T> clip = load_clip<T>(cfg.first_frame_fixture, "first_frame");
        Tensor<T> cond = encode_stub(clip, kDefaultTemporalFactor, kDefaultSpatialFactor, n);
        if (cond.dim(0) != 1) cond = slice(cond, 0, 0, 1);
        grid->height = cond.dim(1);
        grid->width = cond.dim(2);
        return cond;
    }
    grid->height = cfg.tgt_height;
    grid->width = cfg.tgt_width;
    return Tensor<T>({1, grid->height, grid->width, static_cast<int64_t>(n)});
}

template <typename T>
int demo_t(const RunConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    fs::create_directories(cfg.out_dir);
    const TaskSpec task = task_spec(cfg.tasks[0].kind);
    const int n = cfg.model.latent_channels;

    const Tensor<T> ref_clip = load_clip<T>(cfg.tasks[0].reference_fixture, "reference");
    const Tensor<T> ref_latent =
        encode_stub(ref_clip, kDefaultTemporalFactor, kDefaultSpatialFactor, n);
    const LatentBlock<T> l_ref = build_reference_latent(ref_latent, task);

    TargetSetup grid;
    const Tensor<T> cond = make_condition<T>(cfg, !task.is_appearance(), &grid);
    const LatentBlock<T> l_init = build_target_latent(
        cond, Tensor<T>({grid.frames, grid.height, grid.width, static_cast<int64_t>(n)}));

    const tma::TmaConfig tcfg = make_tma_config<T>(cfg);
    const tma::Tma<T> tma_mod(tcfg);
    const tma::StubProvider<T> provider(tcfg);
    tma::ProviderInputs<T> pins;
    pins.first_frame = pool_summary(cond);
    pins.reference = pool_summary(ref_latent);
    pins.templ = tma_mod.template_summary(task.kind);
    pins.prompt = load_prompt_summary<T>(cfg, tcfg.summary_dim);
    const attn::ExternalKV<T> ext = tma_mod.align(provider, pins, task.kind);

    const dit::Model<T> model(cfg.model);
    const attn::RefCache<T> cache =
        model.build_ref_cache(l_ref, task, grid.frames, grid.width,
                              cfg.model.ref_cross_attention ? &ext : nullptr);
    Rng rng(cfg.seed);
    const dit::SampleResult<T> result = model.sample(l_init, cache, cfg.steps, rng, &ext);

    const LatentBlock<T> out_block = LatentBlock<T>::wrap(result.latent);
    write_latent(cfg.out_dir + "/output.lat", out_block);

    const rope::PositionBias bias = cache.parts[0].bias;
    json manifest;
    manifest["command"] = "demo";
    manifest["config"] = config_echo(cfg);
    manifest["task"] = {{"kind", task_name(task.kind)},
                        {"category", task.is_appearance() ? "appearance" : "temporal"},
                        {"mask_flag", task.mask_flag},
                        {"query_bank", task.query_bank}};
    manifest["bias"] = {bias.delta_t, bias.delta_w, bias.delta_h};
    manifest["shapes"] = {{"reference", l_ref.data.shape()},
                          {"target", l_init.data.shape()},
                          {"output", out_block.data.shape()}};
    manifest["counters"] = {{"reference_forwards", 1},
                            {"target_forwards", result.target_forwards}};
    manifest["ext_tokens"] = ext.tokens();
    manifest["output"] = {{"file", "output.lat"}, {"fnv1a64", tensor_hash(out_block.data)}};
    write_json(cfg.out_dir + "/manifest.json", manifest);

    const double wall_ms = std::chrono::duration<double, std::milli>(
                               std::chrono::steady_clock::now() - start)
                               .count();
    write_meta_sidecar(cfg.out_dir, wall_ms);
    std::printf("demo(%s): wrote %s/output.lat (%s), %d target forwards, 1 reference forward\n",
                task_name(task.kind), cfg.out_dir.c_str(),
                shape_str(out_block.data.shape()).c_str(), result.target_forwards);
    return 0;
}

template <typename T>
int compose_t(const RunConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    fs::create_directories(cfg.out_dir);
    const int n = cfg.model.latent_channels;

    bool any_temporal = false;
    for (const TaskEntry& t : cfg.tasks) {
        any_temporal = any_temporal || category_of(t.kind) == TaskCategory::Temporal;
    }
    TargetSetup grid;
    const Tensor<T> cond = make_condition<T>(cfg, any_temporal, &grid);

    const tma::TmaConfig tcfg = make_tma_config<T>(cfg);
    const tma::Tma<T> tma_mod(tcfg);
    const tma::StubProvider<T> provider(tcfg);
    const Tensor<T> prompt = load_prompt_summary<T>(cfg, tcfg.summary_dim);
    const Tensor<T> first_frame_summary = pool_summary(cond);

    std::vector<tma::TaskInput<T>> inputs;
    for (const TaskEntry& entry : cfg.tasks) {
        tma::TaskInput<T> in;
        in.task = task_spec(entry.kind);
        const Tensor<T> clip = load_clip<T>(entry.reference_fixture, "reference");
        const Tensor<T> ref_latent =
            encode_stub(clip, kDefaultTemporalFactor, kDefaultSpatialFactor, n);
        in.reference = build_reference_latent(ref_latent, in.task);
        in.provider_inputs.first_frame = first_frame_summary;
        in.provider_inputs.reference = pool_summary(ref_latent);
        in.provider_inputs.templ = tma_mod.template_summary(entry.kind);
        in.provider_inputs.prompt = prompt;
        inputs.push_back(std::move(in));
    }

    const dit::Model<T> model(cfg.model);
    const tma::Composed<T> composed =
        tma::compose_tasks(model, tma_mod, provider, inputs, grid.frames, grid.width);

    const LatentBlock<T> l_init = build_target_latent(
        cond, Tensor<T>({grid.frames, grid.height, grid.width, static_cast<int64_t>(n)}));
    Rng rng(cfg.seed);
    const dit::SampleResult<T> result =
        model.sample(l_init, composed.cache, cfg.steps, rng, &composed.ext);

    const LatentBlock<T> out_block = LatentBlock<T>::wrap(result.latent);
    write_latent(cfg.out_dir + "/output.lat", out_block);

    json parts = json::array();
    for (const tma::ComposedPart& p : composed.parts) {
        parts.push_back({{"kind", task_name(p.task)},
                         {"mask_flag", mask_flag_of(p.task)},
                         {"bias", {p.bias.delta_t, p.bias.delta_w, p.bias.delta_h}},
                         {"ref_tokens", p.ref_tokens},
                         {"ext_tokens", p.ext_tokens}});
    }
    json manifest;
    manifest["command"] = "compose";
    manifest["config"] = config_echo(cfg);
    manifest["parts"] = parts;
    manifest["combined"] = {{"ref_kv_tokens", composed.cache.total_tokens()},
                            {"ext_tokens", composed.ext.tokens()}};
    manifest["counters"] = {{"reference_forwards", static_cast<int>(inputs.size())},
                            {"target_forwards", result.target_forwards}};
    manifest["shapes"] = {{"target", l_init.data.shape()},
                          {"output", out_block.data.shape()}};
    manifest["output"] = {{"file", "output.lat"}, {"fnv1a64", tensor_hash(out_block.data)}};
    write_json(cfg.out_dir + "/manifest.json", manifest);

    const double wall_ms = std::chrono::duration<double, std::milli>(
                               std::chrono::steady_clock::now() - start)
                               .count();
    write_meta_sidecar(cfg.out_dir, wall_ms);
    std::printf("compose: %zu tasks, combined ref KV tokens %lld, ext tokens %lld\n",
                inputs.size(), static_cast<long long>(composed.cache.total_tokens()),
                static_cast<long long>(composed.ext.tokens()));
    return 0;
}

template <typename T>
int bench_t(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    std::vector<bench::BenchReport> reports;
    json analytic = json::array();
    for (int steps : cfg.bench_steps) {
        bench::TimedConfig tc;
        tc.model = cfg.model;
        tc.steps = steps;
        tc.repeats = cfg.bench_repeats;
        tc.threads = cfg.bench_threads;
        tc.seed = cfg.seed;
        tc.tgt_frames = cfg.tgt_frames;
        tc.tgt_height = cfg.tgt_height;
        tc.tgt_width = cfg.tgt_width;
        tc.ref_frames = cfg.tgt_frames;
        tc.ref_height = cfg.tgt_height;
        tc.ref_width = cfg.tgt_width;
        const bench::BenchReport report = bench::timed_run<T>(tc);
        std::printf(
            "bench S=%-3d joint %8.2f ms  decoupled %8.2f ms  reduction %5.1f%%  "
            "(flop ratio %.3f, equivalence max|diff| %.2e)\n",
            steps, report.joint_ms, report.decoupled_ms, 100.0 * report.reduction,
            report.analytic.total_ratio, report.equivalence_max_abs_diff);
        analytic.push_back({{"steps", steps},
                            {"n_ref", report.n_ref},
                            {"n_tgt", report.n_tgt},
                            {"attention_ratio", report.analytic.attention_ratio},
                            {"token_ratio", report.analytic.token_ratio},
                            {"total_ratio", report.analytic.total_ratio}});
        reports.push_back(report);
    }
    bench::emit_report(reports, cfg.out_dir + "/report.json", cfg.out_dir + "/sweep.csv");

    // Measured numbers stay out of the manifest so reruns are byte-identical.
    json manifest;
    manifest["command"] = "bench";
    manifest["config"] = config_echo(cfg);
    manifest["bench"] = {{"repeats", cfg.bench_repeats},
                         {"threads", cfg.bench_threads},
                         {"steps", cfg.bench_steps}};
    manifest["analytic"] = analytic;
    write_json(cfg.out_dir + "/manifest.json", manifest);
    return 0;
}

/// Smooth seeded plasma pattern plus mild noise; stands in for real footage.
template <typename T>
Tensor<T> synth_clip(int64_t frames, int64_t height, int64_t width, uint64_t seed) {
    Rng rng(seed);
    Tensor<T> clip({frames, height, width, 3});
    constexpr int kComponents = 3;
    for (int c = 0; c < 3; ++c) {
        double amp[kComponents], fy[kComponents], fx[kComponents], ft[kComponents],
            phase[kComponents];
        for (int i = 0; i < kComponents; ++i) {
            amp[i] = 0.5 * rng.normal();
            fy[i] = 1.0 + static_cast<double>(rng.next_u32() % 3);
            fx[i] = 1.0 + static_cast<double>(rng.next_u32() % 3);
            ft[i] = static_cast<double>(rng.next_u32() % 3);
            phase[i] = 6.283185307179586 * rng.uniform01();
        }
        for (int64_t t = 0; t < frames; ++t) {
            for (int64_t y = 0; y < height; ++y) {
                for (int64_t x = 0; x < width; ++x) {
                    double v = 0.0;
                    for (int i = 0; i < kComponents; ++i) {
                        const double arg =
                            6.283185307179586 *
                                (fy[i] * static_cast<double>(y) / static_cast<double>(height) +
                                 fx[i] * static_cast<double>(x) / static_cast<double>(width) +
                                 ft[i] * static_cast<double>(t) / static_cast<double>(frames)) +
                            phase[i];
                        v += amp[i] * std::sin(arg);
                    }
                    clip(t, y, x, c) = static_cast<T>(v + 0.05 * rng.normal());
                }
            }
        }
    }
    return clip;
}

int gen_fixtures(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    const auto path = [&](const char* name) { return cfg.out_dir + "/" + name; };

    const auto write_clip = [&](const char* name, int64_t f, int64_t h, int64_t w,
                                uint64_t seed) {
        const LatentBlock<float> block = LatentBlock<float>::wrap(synth_clip<float>(f, h, w, seed));
        write_latent(path(name), block);
        return tensor_hash(block.data);
    };
    json files = json::array();
    files.push_back({{"name", "ref_a.lat"}, {"fnv1a64", write_clip("ref_a.lat", 8, 64, 64, cfg.seed + 1)}});
    files.push_back({{"name", "ref_b.lat"}, {"fnv1a64", write_clip("ref_b.lat", 8, 64, 64, cfg.seed + 2)}});
    files.push_back({{"name", "first_frame.lat"},
                     {"fnv1a64", write_clip("first_frame.lat", 1, 64, 64, cfg.seed + 3)}});

    Rng prng(cfg.seed + 4);
    const int64_t summary = cfg.model.latent_channels;
    const LatentBlock<float> prompt =
        LatentBlock<float>::wrap(seeded_normal<float>({1, 1, 1, summary}, prng));
    write_latent(path("prompt_summary.lat"), prompt);
    files.push_back({{"name", "prompt_summary.lat"}, {"fnv1a64", tensor_hash(prompt.data)}});

    const json demo_cfg = {{"task", "motion"},
                           {"reference", path("ref_a.lat")},
                           {"first_frame", path("first_frame.lat")},
                           {"prompt", path("prompt_summary.lat")},
                           {"seed", cfg.seed},
                           {"steps", cfg.steps},
                           {"out", cfg.out_dir + "/demo_run"}};
    write_json(path("demo.json"), demo_cfg);
    const json compose_cfg = {
        {"tasks", json::array({{{"kind", "camera"}, {"reference", path("ref_a.lat")}},
                               {{"kind", "id"}, {"reference", path("ref_b.lat")}}})},
        {"first_frame", path("first_frame.lat")},
        {"prompt", path("prompt_summary.lat")},
        {"seed", cfg.seed},
        {"steps", cfg.steps},
        {"out", cfg.out_dir + "/compose_run"}};
    write_json(path("compose.json"), compose_cfg);

    json manifest;
    manifest["command"] = "gen-fixtures";
    manifest["config"] = config_echo(cfg);
    manifest["files"] = files;
    write_json(path("manifest.json"), manifest);
    std::printf("gen-fixtures: wrote clips, prompt summary and example configs under %s\n",
                cfg.out_dir.c_str());
    return 0;
}

}  // namespace

int run_demo(const RunConfig& cfg) {
    return cfg.precision == "f64" ? demo_t<double>(cfg) : demo_t<float>(cfg);
}

int run_compose(const RunConfig& cfg) {
    return cfg.precision == "f64" ? compose_t<double>(cfg) : compose_t<float>(cfg);
}

int run_bench(const RunConfig& cfg) {
    return cfg.precision == "f64" ? bench_t<double>(cfg) : bench_t<float>(cfg);
}

int run_verify(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    verify::Options opts;
    opts.seed = cfg.seed == 0 ? 1234 : cfg.seed;
    opts.fault_inject = cfg.fault_inject;
    const bool saved_checks = finite_checks_enabled();
    set_finite_checks(true);
    const std::vector<verify::InvariantResult> results = verify::run_all(opts);
    set_finite_checks(saved_checks);

    json invariants = json::array();
    for (const verify::InvariantResult& r : results) {
        std::printf("%-4s %-34s %s\n", r.pass ? "PASS" : "FAIL", r.id.c_str(), r.detail.c_str());
        invariants.push_back({{"id", r.id}, {"pass", r.pass}, {"detail", r.detail}});
    }
    const bool ok = verify::all_pass(results);
    json report;
    report["command"] = "verify";
    report["fault_inject"] = cfg.fault_inject;
    report["invariants"] = invariants;
    report["all_pass"] = ok;
    write_json(cfg.out_dir + "/verify_report.json", report);
    std::printf("verify: %s\n", ok ? "all invariants hold" : "FAILURES present");
    return ok ? 0 : 1;
}

int run_gen_fixtures(const RunConfig& cfg) { return gen_fixtures(cfg); }

}  // namespace omnixfer::cli
