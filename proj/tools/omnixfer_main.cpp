#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "omnixfer/config.hpp"
#include "omnixfer/pipeline.hpp"

namespace {

using omnixfer::cli::CliOverrides;
using omnixfer::cli::Mode;
using omnixfer::cli::RunConfig;

struct FlagBuffer {
    std::string config_path, task, out, precision, ref_cross, reference, first_frame, prompt,
        fault_inject;
    std::uint64_t seed = 0;
    int steps = 0;
    int threads = 0;
};

void add_common_flags(CLI::App* cmd, FlagBuffer* flags) {
    cmd->add_option("--config", flags->config_path, "JSON config file");
    cmd->add_option("--seed", flags->seed, "RNG seed (mandatory for runs; overrides config)");
    cmd->add_option("--steps", flags->steps, "sampler steps (overrides config)");
    cmd->add_option("--task", flags->task, "task kind: id|style|effect|camera|motion");
    cmd->add_option("--out", flags->out, "output directory");
    cmd->add_option("--precision", flags->precision, "f32|f64")
        ->check(CLI::IsMember({"f32", "f64"}));
    cmd->add_option("--ref-cross-attention", flags->ref_cross,
                    "on|off: reference-branch cross-attention")
        ->check(CLI::IsMember({"on", "off"}));
}

bool given(const CLI::App* cmd, const std::string& name) {
    const CLI::Option* opt = cmd->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
}

CliOverrides to_overrides(const CLI::App* cmd, const FlagBuffer& flags) {
    CliOverrides o;
    if (given(cmd, "--config")) o.config_path = flags.config_path;
    if (given(cmd, "--seed")) o.seed = flags.seed;
    if (given(cmd, "--steps")) o.steps = flags.steps;
    if (given(cmd, "--task")) o.task = flags.task;
    if (given(cmd, "--out")) o.out = flags.out;
    if (given(cmd, "--precision")) o.precision = flags.precision;
    if (given(cmd, "--ref-cross-attention")) o.ref_cross_attention = flags.ref_cross == "on";
    if (given(cmd, "--reference")) o.reference_fixture = flags.reference;
    if (given(cmd, "--first-frame")) o.first_frame_fixture = flags.first_frame;
    if (given(cmd, "--prompt")) o.prompt_fixture = flags.prompt;
    if (given(cmd, "--threads")) o.bench_threads = flags.threads;
    if (given(cmd, "--fault-inject")) o.fault_inject = flags.fault_inject;
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"omnixfer: reference-decoupled video-transfer verification and benchmarks"};
    app.require_subcommand(1);

    FlagBuffer flags;
    CLI::App* demo = app.add_subcommand("demo", "single-task scenario run");
    add_common_flags(demo, &flags);
    demo->add_option("--reference", flags.reference, "reference clip fixture (.lat)");
    demo->add_option("--first-frame", flags.first_frame, "first-frame clip fixture (.lat)");
    demo->add_option("--prompt", flags.prompt, "prompt summary fixture (.lat)");

    CLI::App* verify = app.add_subcommand("verify", "run the invariant suite");
    add_common_flags(verify, &flags);
    verify->add_option("--fault-inject", flags.fault_inject,
                       "corrupt a named component to prove the suite catches it (kv-order)");

    CLI::App* bench = app.add_subcommand("bench", "joint vs decoupled benchmark sweep");
    add_common_flags(bench, &flags);
    bench->add_option("--threads", flags.threads, "substrate threads for timed sections");

    CLI::App* compose = app.add_subcommand("compose", "multi-task composed run");
    add_common_flags(compose, &flags);
    compose->add_option("--first-frame", flags.first_frame, "first-frame clip fixture (.lat)");
    compose->add_option("--prompt", flags.prompt, "prompt summary fixture (.lat)");

    CLI::App* gen = app.add_subcommand("gen-fixtures", "write seeded synthetic fixtures");
    add_common_flags(gen, &flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const CLI::App* active = app.get_subcommands().front();
        Mode mode = Mode::Demo;
        if (active == verify) mode = Mode::Verify;
        if (active == bench) mode = Mode::Bench;
        if (active == compose) mode = Mode::Compose;
        if (active == gen) mode = Mode::GenFixtures;

        const RunConfig cfg = omnixfer::cli::parse_config(mode, to_overrides(active, flags));
        switch (mode) {
            case Mode::Demo:
                return omnixfer::cli::run_demo(cfg);
            case Mode::Verify:
                return omnixfer::cli::run_verify(cfg);
            case Mode::Bench:
                return omnixfer::cli::run_bench(cfg);
            case Mode::Compose:
                return omnixfer::cli::run_compose(cfg);
            case Mode::GenFixtures:
                return omnixfer::cli::run_gen_fixtures(cfg);
        }
    } catch (const omnixfer::cli::ConfigError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
