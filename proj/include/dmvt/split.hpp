#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmvt/manifest.hpp"
#include "dmvt/rng.hpp"

namespace dmvt {

enum class SplitSet { train, val, test };

std::string split_set_name(SplitSet s);

struct SplitRatios {
    double train = 0.65, val = 0.15, test = 0.20;
    void validate() const;  // each positive, summing to 1
};

struct SplitAssignment {
    std::map<std::string, SplitSet> assignment;  // subject id -> set
    double achieved_train = 0, achieved_val = 0, achieved_test = 0;
    double imbalance = 0;      // winning candidate's max decile gap
    int64_t winner_index = 0;  // candidate that won
};

// One random partition stratified by diagnosis, indexed like records. Set
// sizes per class are fixed by a largest-remainder allocation steered toward
// the cumulative global targets; only the within-class dealing uses rng.
std::vector<SplitSet> stratified_candidate(const std::vector<SubjectRecord> &records,
                                           const SplitRatios &ratios, Rng &rng);

// Train-membership propensity per subject: logistic regression on
// (standardized age, sex, diagnosis one-hot), 500 gradient steps at lr 0.1;
// refit with L2 1e-3 if the unregularized weights blow past 10 (separation).
std::vector<double> propensity_scores(const std::vector<SubjectRecord> &records,
                                      const std::vector<SplitSet> &sets);

// Max over deciles 10..90 and all three set pairs of the absolute propensity
// percentile difference (linear-interpolation quantiles).
double propensity_imbalance(const std::vector<SubjectRecord> &records,
                            const std::vector<SplitSet> &sets);

// Evaluates n_candidates stratified partitions (candidate j draws from
// Rng(seed).fork(j)) and returns the minimum-imbalance one; ties break to the
// lowest candidate index.
SplitAssignment propensity_split(const std::vector<SubjectRecord> &records,
                                 const SplitRatios &ratios, int64_t n_candidates, uint64_t seed);

// CSV `id,split` in record order plus a `<path>.report.txt` sidecar with the
// achieved ratios and imbalance.
void write_split(const std::string &csv_path, const std::vector<SubjectRecord> &records,
                 const SplitAssignment &split);
std::map<std::string, SplitSet> load_split(const std::string &csv_path);

// Stratified k-fold labels (0..k-1), indexed like records, for the
// cross-validation protocol; per-class fold occupancy differs by at most 1.
std::vector<int> stratified_kfold(const std::vector<SubjectRecord> &records, int k, uint64_t seed);

}  // namespace dmvt
