#include "omnixfer/kernels.hpp"

#include <cstdlib>

namespace omnixfer::kernels {

namespace {

int env_thread_cap() {
    int cap = 1;
#ifdef _OPENMP
    cap = omp_get_max_threads();
#endif
    if (const char* env = std::getenv("OMNIXFER_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) cap = std::min(cap, v);
    }
    return cap;
}

int& thread_cap() {
    static int cap = env_thread_cap();
    return cap;
}

}  // namespace

int max_threads() { return thread_cap(); }

void set_max_threads(int n) { thread_cap() = n < 1 ? 1 : n; }

}  // namespace omnixfer::kernels
