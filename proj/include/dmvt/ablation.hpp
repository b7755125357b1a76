#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmvt/train.hpp"

namespace dmvt {

enum class AblationAxis { branches, tau, regbn, params };

AblationAxis parse_ablation_axis(const std::string &name);  // ConfigError on junk
std::string ablation_axis_name(AblationAxis axis);

struct AblationVariant {
    std::string name;  // e.g. "M+P+MP", "tau=0.01", "regbn=on", "embed=256"
    ModelConfig cfg;
};

// The variant list an axis expands to: 7 branch combinations, a 5-point tau
// sweep, RegBN off/on, or one-at-a-time network-parameter changes (patch,
// embedding width, heads, depth, dropout) filtered to configurations the
// geometry accepts.
std::vector<AblationVariant> axis_variants(AblationAxis axis, const ModelConfig &base);

struct AblationRow {
    std::string variant;
    int64_t n_seeds = 0;
    double bacc_mean = 0.0, bacc_std = 0.0;
    double auc_mean = 0.0, auc_std = 0.0;  // NaN for non-binary tasks
    double macro_f1_mean = 0.0, macro_f1_std = 0.0;
};

// Trains every variant k_seeds times (seed offsets shared across variants so
// comparisons are paired), evaluates on the test set, and aggregates as
// mean +/- sample standard deviation (0 when k_seeds == 1).
std::vector<AblationRow> run_ablation(const ModelConfig &base, const TrainConfig &train_cfg,
                                      const Dataset &train_set, const Dataset &val_set,
                                      const Dataset &test_set, AblationAxis axis,
                                      int64_t k_seeds = 3);

// CSV: variant,n_seeds,bacc_mean,bacc_std,auc_mean,auc_std,macro_f1_mean,macro_f1_std
void write_ablation_csv(const std::string &path, const std::vector<AblationRow> &rows);

}  // namespace dmvt
