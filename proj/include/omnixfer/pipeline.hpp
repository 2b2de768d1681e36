#pragma once

#include "omnixfer/config.hpp"

namespace omnixfer::cli {

// Each command returns its process exit code: 0 success, 1 invariant or
// runtime failure, 2 config error (thrown as ConfigError by parse_config).
int run_demo(const RunConfig& cfg);
int run_verify(const RunConfig& cfg);
int run_bench(const RunConfig& cfg);
int run_compose(const RunConfig& cfg);
int run_gen_fixtures(const RunConfig& cfg);

}  // namespace omnixfer::cli
