#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "omnixfer/dit.hpp"
#include "omnixfer/task.hpp"

namespace omnixfer::bench {

/// Closed-form cost model for one sampling run. The per-(query,key) attention
/// constant is c = 4*d_model FLOPs (score dot plus value mix, multiply-add
/// counted as two); per-token-per-layer work is p = 8*d_model^2 (QKVO
/// projections) + 4*d_model*ffn_dim (FFN).
struct CostModel {
    int64_t n_ref = 0;
    int64_t n_tgt = 0;
    int64_t d_model = 128;
    int64_t ffn_dim = 512;
    int64_t layers = 4;
    int64_t steps = 1;
};

struct FlopSide {
    double attention = 0.0;
    double token = 0.0;
    double total() const { return attention + token; }
};

struct FlopTotals {
    FlopSide joint;
    FlopSide decoupled;
    double attention_ratio = 0.0;  // decoupled / joint
    double token_ratio = 0.0;
    double total_ratio = 0.0;
};

FlopTotals flops(const CostModel& model);

struct TimedConfig {
    dit::DitConfig model;
    TaskKind task = TaskKind::Motion;
    int64_t tgt_frames = 2, tgt_height = 8, tgt_width = 8;
    int64_t ref_frames = 2, ref_height = 8, ref_width = 8;
    int steps = 20;
    int repeats = 5;
    int warmup = 1;
    int threads = 1;  // timed sections default to single-threaded
    uint64_t seed = 7;
    double equivalence_tol = 1e-6;
};

struct BenchReport {
    TimedConfig config;
    int64_t n_ref = 0, n_tgt = 0;
    FlopTotals analytic;
    std::vector<double> joint_ms_runs;
    std::vector<double> decoupled_ms_runs;
    double joint_ms = 0.0;      // median
    double decoupled_ms = 0.0;  // median
    double reduction = 0.0;     // 1 - decoupled/joint
    double equivalence_max_abs_diff = 0.0;
    bool equivalence_ok = false;
    std::string machine;
    std::string precision;
};

/// Samples under both topologies with the same seed, asserts the outputs
/// match within the configured tolerance, then times both and reports the
/// median of `repeats` runs (warm-up runs excluded).
template <typename T>
BenchReport timed_run(const TimedConfig& cfg);

std::string machine_fingerprint(int threads);

/// report.json plus sweep.csv (columns n_ref, n_tgt, steps, topology,
/// analytic_flops, wall_ms; one row per report and topology).
void emit_report(const std::vector<BenchReport>& reports, const std::string& json_path,
                 const std::string& csv_path);

}  // namespace omnixfer::bench
