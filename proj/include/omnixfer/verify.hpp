#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace omnixfer::verify {

struct InvariantResult {
    std::string id;
    bool pass = false;
    std::string detail;
};

struct Options {
    uint64_t seed = 1234;
    std::string fault_inject;  // "" or "kv-order" (corrupts the equivalence oracle)
};

/// Runs every named invariant in a fixed order, 64-bit throughout.
std::vector<InvariantResult> run_all(const Options& opts);

bool all_pass(const std::vector<InvariantResult>& results);

}  // namespace omnixfer::verify
