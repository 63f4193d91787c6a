#include "harmonia/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace harmonia::kernels {

#ifdef HARMONIA_HAVE_AVX2
const Kernels& avx2_table();
#endif

bool avx2_available() {
#ifdef HARMONIA_HAVE_AVX2
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("f16c");
#else
    return false;
#endif
}

Backend detect_best() { return avx2_available() ? Backend::avx2 : Backend::scalar; }

namespace {

const Kernels* table_for(Backend b) {
#ifdef HARMONIA_HAVE_AVX2
    if (b == Backend::avx2 && avx2_available()) return &avx2_table();
#endif
    if (b == Backend::avx2) return nullptr;
    return &scalar();
}

const Kernels* initial_table() {
    if (const char* env = std::getenv("HARMONIA_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return &scalar();
        if (std::strcmp(env, "avx2") == 0) {
            if (const Kernels* t = table_for(Backend::avx2)) return t;
        }
    }
    return table_for(detect_best());
}

const Kernels*& active_slot() {
    static const Kernels* slot = initial_table();
    return slot;
}

} // namespace

const Kernels& active() { return *active_slot(); }

bool set_backend(Backend b) {
    const Kernels* t = table_for(b);
    if (!t) return false;
    active_slot() = t;
    return true;
}

} // namespace harmonia::kernels
