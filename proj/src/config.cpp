#include "dmvt/config.hpp"

namespace dmvt {

std::string BranchSet::label() const {
    std::string s;
    if (use_m) s += "M";
    if (use_p) s += s.empty() ? "P" : "+P";
    if (use_mp) s += s.empty() ? "MP" : "+MP";
    return s;
}

void ModelConfig::validate() const {
    auto bad = [](const std::string &msg) { throw ConfigError(msg); };

    if (block <= 0) bad("block size must be positive, got " + std::to_string(block));
    if (patch <= 0) bad("patch size must be positive, got " + std::to_string(patch));
    struct Axis { const char *name; int64_t v; };
    for (Axis a : {Axis{"H", dim_h}, Axis{"W", dim_w}, Axis{"D", dim_d}}) {
        if (a.v <= 0) bad(std::string("extent ") + a.name + " must be positive");
        if (a.v % block != 0) {
            bad(std::string("extent ") + a.name + "=" + std::to_string(a.v) +
                " not divisible by block size " + std::to_string(block));
        }
    }
    if (block % patch != 0) {
        bad("block size " + std::to_string(block) + " not divisible by patch size " +
            std::to_string(patch));
    }
    if (embed <= 0) bad("embedding dim must be positive");
    if (heads <= 0) bad("head count must be positive");
    if (embed % heads != 0) {
        bad("embedding dim " + std::to_string(embed) + " not divisible by head count " +
            std::to_string(heads));
    }
    if (depth < 1) bad("depth must be >= 1, got " + std::to_string(depth));
    if (labels < 2) bad("label count must be >= 2, got " + std::to_string(labels));
    if (tau < 0.0) bad("tau must be >= 0, got " + std::to_string(tau));
    if (dropout < 0.0 || dropout >= 1.0) bad("dropout must be in [0,1)");
    if (branches.enabled_count() == 0) bad("at least one branch must be enabled");
}

}  // namespace dmvt
