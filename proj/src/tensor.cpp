#include "omnixfer/tensor.hpp"

namespace omnixfer {

namespace {

bool g_finite_checks =
#ifndef NDEBUG
    true;
#else
    false;
#endif

}  // namespace

bool finite_checks_enabled() { return g_finite_checks; }
void set_finite_checks(bool on) { g_finite_checks = on; }

}  // namespace omnixfer
