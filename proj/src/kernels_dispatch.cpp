// Backend selection. Resolved once on first use: explicit set_backend() wins,
// then the CROSSMODAL_KERNELS environment variable (scalar|avx2|neon|auto),
// then the best table the CPU supports. Requesting an unavailable backend via
// the environment is a ConfigError rather than a silent fallback.

#include <cstdlib>
#include <string>

#include "crossmodal/error.hpp"
#include "crossmodal/kernels.hpp"

namespace crossmodal::kern {
namespace {

// Null when the backend is not available on this machine.
const Ops* table_for(Backend want) {
    switch (want) {
        case Backend::Scalar:
            return &scalar_ops();
        case Backend::Avx2:
            return avx2_ops();
        case Backend::Neon:
            return neon_ops();
        case Backend::Auto:
        default:
            if (const Ops* ops = avx2_ops()) return ops;
            if (const Ops* ops = neon_ops()) return ops;
            return &scalar_ops();
    }
}

const Ops*& active_slot() {
    static const Ops* slot = nullptr;
    return slot;
}

}  // namespace

Backend parse_backend(const char* s) {
    const std::string v = s ? s : "";
    if (v == "auto" || v.empty()) return Backend::Auto;
    if (v == "scalar") return Backend::Scalar;
    if (v == "avx2") return Backend::Avx2;
    if (v == "neon") return Backend::Neon;
    throw ConfigError("kernels: unknown backend '" + v + "' (expected auto|scalar|avx2|neon)");
}

bool set_backend(Backend b) {
    const Ops* ops = table_for(b);
    if (!ops) return false;
    active_slot() = ops;
    return true;
}

const Ops& active() {
    const Ops*& slot = active_slot();
    if (!slot) {
        Backend want = Backend::Auto;
        if (const char* env = std::getenv("CROSSMODAL_KERNELS")) want = parse_backend(env);
        const Ops* ops = table_for(want);
        if (!ops) throw ConfigError("kernels: requested backend is not available on this cpu");
        slot = ops;
    }
    return *slot;
}

}  // namespace crossmodal::kern
