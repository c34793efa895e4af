#include "folkvae/kernels.hpp"
#include "folkvae/error.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace folkvae::kernels {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

bool avx2_built() {
    // avx2_backend() aliases scalar when the TU was compiled without AVX2
    return std::strcmp(avx2_backend().name, "avx2") == 0;
}

const Backend* resolve(const std::string& name) {
    if (name == "scalar") return &scalar_backend();
    if (name == "avx2") {
        if (!avx2_built() || !cpu_has_avx2())
            throw config_error("kernel backend 'avx2' not available on this host");
        return &avx2_backend();
    }
    if (name == "auto")
        return (avx2_built() && cpu_has_avx2()) ? &avx2_backend() : &scalar_backend();
    throw config_error("unknown kernel backend '" + name + "' (expected scalar|avx2|auto)");
}

std::atomic<const Backend*> g_active{nullptr};

const Backend* init_from_env() {
    const char* env = std::getenv("FOLKVAE_KERNELS");
    return resolve(env && *env ? env : "auto");
}

} // namespace

const Backend& active() {
    const Backend* b = g_active.load(std::memory_order_acquire);
    if (!b) {
        b = init_from_env();
        g_active.store(b, std::memory_order_release);
    }
    return *b;
}

void force_backend(const std::string& name) {
    g_active.store(resolve(name), std::memory_order_release);
}

} // namespace folkvae::kernels
