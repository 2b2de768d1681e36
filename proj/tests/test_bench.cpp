#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "omnixfer/bench.hpp"

using namespace omnixfer;
using bench::CostModel;
using bench::FlopTotals;

namespace {

CostModel symmetric(int64_t n, int64_t steps) {
    CostModel m;
    m.n_ref = n;
    m.n_tgt = n;
    m.d_model = 128;
    m.ffn_dim = 512;
    m.layers = 4;
    m.steps = steps;
    return m;
}

}  // namespace

TEST_CASE("attention ratio is 3/4 at a single step") {
    const FlopTotals t = bench::flops(symmetric(64, 1));
    CHECK(std::abs(t.attention_ratio - 0.75) < 1e-12);
}

TEST_CASE("attention ratio approaches 1/2 as steps grow") {
    const FlopTotals t = bench::flops(symmetric(64, 1000000000));
    CHECK(std::abs(t.attention_ratio - 0.5) < 1e-6);
}

TEST_CASE("no reference tokens means identical topologies") {
    CostModel m = symmetric(16, 10);
    m.n_ref = 0;
    const FlopTotals t = bench::flops(m);
    CHECK(t.joint.attention == t.decoupled.attention);
    CHECK(t.joint.token == t.decoupled.token);
    CHECK(t.total_ratio == 1.0);
}

TEST_CASE("flop ratio strictly decreases in the step count") {
    double prev = 2.0;
    for (int64_t steps : {1, 2, 5, 10, 50, 200}) {
        const FlopTotals t = bench::flops(symmetric(32, steps));
        CHECK(t.attention_ratio < prev);
        prev = t.attention_ratio;
    }
}

TEST_CASE("exact closed forms at S=1 for equal token counts") {
    // decoupled/joint = (2N^2 + N^2) / 4N^2.
    const FlopTotals t = bench::flops(symmetric(16, 1));
    const double c = 4.0 * 128.0;     // per-pair attention constant
    const double n_all = 32.0;
    CHECK(t.joint.attention == doctest::Approx(1.0 * 4.0 * c * n_all * n_all).epsilon(1e-12));
    CHECK(t.decoupled.attention / t.joint.attention == doctest::Approx(0.75));
}

TEST_CASE("flops rejects non-positive counts") {
    CostModel m = symmetric(4, 1);
    m.n_tgt = 0;
    CHECK_THROWS_AS(bench::flops(m), std::invalid_argument);
    m = symmetric(4, 1);
    m.steps = 0;
    CHECK_THROWS_AS(bench::flops(m), std::invalid_argument);
}

TEST_CASE("timed_run produces an equivalent, faster decoupled topology") {
    bench::TimedConfig cfg;
    cfg.model.layers = 2;
    cfg.model.model_dim = 96;
    cfg.model.heads = 2;
    cfg.model.ffn_dim = 192;
    cfg.model.latent_channels = 8;
    cfg.model.time_embed_dim = 64;
    cfg.model.seed = 5;
    cfg.tgt_frames = 2;
    cfg.tgt_height = 4;
    cfg.tgt_width = 8;
    cfg.ref_frames = 2;
    cfg.ref_height = 4;
    cfg.ref_width = 8;
    cfg.steps = 10;
    cfg.repeats = 3;
    cfg.warmup = 1;
    cfg.seed = 5;
    cfg.equivalence_tol = 1e-6;

    const bench::BenchReport report = bench::timed_run<float>(cfg);
    CHECK(report.equivalence_ok);
    CHECK(report.equivalence_max_abs_diff <= 1e-6);
    CHECK(report.decoupled_ms < report.joint_ms);
    CHECK(report.reduction > 0.0);
    CHECK(report.n_ref == 64);
    CHECK(report.n_tgt == 64);

    SUBCASE("medians are stable across repeat counts") {
        bench::TimedConfig more = cfg;
        more.repeats = 7;
        const bench::BenchReport r7 = bench::timed_run<float>(more);
        const double rel =
            std::abs(r7.decoupled_ms - report.decoupled_ms) / r7.decoupled_ms;
        CHECK(rel < 0.20);
    }

    SUBCASE("amortization grows with the step count") {
        bench::TimedConfig one = cfg;
        one.steps = 1;
        const bench::BenchReport r1 = bench::timed_run<float>(one);
        CHECK(r1.reduction < report.reduction);
    }

    SUBCASE("speedup stays positive at half-size references") {
        bench::TimedConfig half = cfg;
        half.ref_frames = 1;  // n_ref = n_tgt / 2
        half.steps = 5;
        const bench::BenchReport rh = bench::timed_run<float>(half);
        CHECK(rh.n_ref == rh.n_tgt / 2);
        CHECK(rh.reduction > 0.0);
    }
}

TEST_CASE("emit_report round-trips and the CSV has one row per topology") {
    bench::TimedConfig cfg;
    cfg.model.layers = 1;
    cfg.model.model_dim = 32;
    cfg.model.heads = 2;
    cfg.model.ffn_dim = 64;
    cfg.model.latent_channels = 8;
    cfg.model.time_embed_dim = 32;
    cfg.model.seed = 9;
    cfg.tgt_frames = 1;
    cfg.tgt_height = 2;
    cfg.tgt_width = 4;
    cfg.ref_frames = 1;
    cfg.ref_height = 2;
    cfg.ref_width = 4;
    cfg.steps = 2;
    cfg.repeats = 1;
    cfg.warmup = 0;
    cfg.seed = 9;

    std::vector<bench::BenchReport> reports;
    reports.push_back(bench::timed_run<float>(cfg));
    cfg.steps = 4;
    reports.push_back(bench::timed_run<float>(cfg));

    const auto dir = std::filesystem::temp_directory_path() / "omnixfer_bench_test";
    std::filesystem::create_directories(dir);
    const std::string json_path = (dir / "report.json").string();
    const std::string csv_path = (dir / "sweep.csv").string();
    bench::emit_report(reports, json_path, csv_path);

    std::ifstream jin(json_path);
    const nlohmann::json parsed = nlohmann::json::parse(jin);
    REQUIRE(parsed.size() == 2);
    for (size_t i = 0; i < reports.size(); ++i) {
        CHECK(parsed[i]["measured"]["joint_ms"].get<double>() ==
              doctest::Approx(reports[i].joint_ms));
        // The stored flops equal a fresh recomputation.
        CostModel m;
        m.n_ref = reports[i].n_ref;
        m.n_tgt = reports[i].n_tgt;
        m.d_model = reports[i].config.model.model_dim;
        m.ffn_dim = reports[i].config.model.ffn_dim;
        m.layers = reports[i].config.model.layers;
        m.steps = reports[i].config.steps;
        const FlopTotals again = bench::flops(m);
        CHECK(parsed[i]["analytic_flops"]["joint"]["attention"].get<double>() ==
              again.joint.attention);
    }

    std::ifstream cin_(csv_path);
    std::string line;
    int rows = 0;
    std::getline(cin_, line);
    CHECK(line == "n_ref,n_tgt,steps,topology,analytic_flops,wall_ms");
    while (std::getline(cin_, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == static_cast<int>(reports.size()) * 2);
    std::filesystem::remove_all(dir);
}
