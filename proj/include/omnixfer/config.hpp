#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "omnixfer/dit.hpp"
#include "omnixfer/task.hpp"

namespace omnixfer::cli {

/// Maps to process exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Mode { Demo, Verify, Bench, Compose, GenFixtures };

const char* mode_name(Mode mode);

struct TaskEntry {
    TaskKind kind = TaskKind::Motion;
    std::string reference_fixture;
};

struct RunConfig {
    Mode mode = Mode::Demo;
    std::vector<TaskEntry> tasks;
    dit::DitConfig model;
    int steps = 8;
    uint64_t seed = 0;
    std::string out_dir = "out";
    std::string precision = "f32";  // f32 | f64

    std::string first_frame_fixture;
    std::string prompt_fixture;

    // Target latent grid; height/width are overridden by the encoded
    // first-frame fixture when one is given.
    int64_t tgt_frames = 2;
    int64_t tgt_height = 8;
    int64_t tgt_width = 8;

    int bench_repeats = 5;
    std::vector<int> bench_steps = {1, 5, 20};
    int bench_threads = 1;

    std::string fault_inject;  // verify only; "" or "kv-order"
};

/// Flag values that take precedence over file values.
struct CliOverrides {
    std::optional<std::string> config_path;
    std::optional<uint64_t> seed;
    std::optional<int> steps;
    std::optional<std::string> task;
    std::optional<std::string> out;
    std::optional<std::string> precision;
    std::optional<bool> ref_cross_attention;
    std::optional<std::string> reference_fixture;
    std::optional<std::string> first_frame_fixture;
    std::optional<std::string> prompt_fixture;
    std::optional<int> bench_threads;
    std::optional<std::string> fault_inject;
};

/// Parses the JSON config (if any), applies defaults and flag overrides, and
/// validates for the given mode. Unknown keys are rejected by name; missing
/// fixtures and bad enums are reported as itemized ConfigErrors.
RunConfig parse_config(Mode mode, const CliOverrides& overrides);

}  // namespace omnixfer::cli
