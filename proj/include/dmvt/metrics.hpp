#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmvt/errors.hpp"
#include "dmvt/manifest.hpp"

namespace dmvt {

// One fairness row: a demographic group, the metric computed inside it
// ("bacc" or "tpr"), its value (NaN when the group is empty), and the group
// size.
struct GroupRow {
    std::string group;
    std::string metric;
    double value = 0.0;
    int64_t n = 0;

    bool operator==(const GroupRow &) const = default;
};

struct MetricsReport {
    double bacc = 0.0;
    double auc = 0.0;        // meaningful only when has_auc
    bool has_auc = false;    // set for binary tasks with both classes present
    double macro_f1 = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    std::vector<std::vector<int64_t>> confusion;  // [true][predicted]
    int64_t n = 0;
    // Classes with no true examples: excluded from bacc, flagged here.
    bool absent_class_warning = false;
    std::vector<int64_t> absent_classes;
    std::vector<GroupRow> groups;  // filled by fairness_report callers
};

// Argmax per row; ties resolve to the lowest class index.
std::vector<int64_t> argmax_predictions(const std::vector<std::vector<double>> &scores);

// Mann-Whitney AUC of pos_scores for binary labels in {0, 1}; ties count 1/2.
// Requires at least one example of each class.
double binary_auc(const std::vector<int64_t> &labels, const std::vector<double> &pos_scores);

// scores[i] holds per-class probabilities summing to 1 (checked to 1e-6);
// labels[i] indexes into that row. BACC averages recall over classes that
// appear; macro metrics cover all classes with 0/0 treated as 0. AUC is
// included for two-class tasks only.
MetricsReport compute_metrics(const std::vector<int64_t> &labels,
                              const std::vector<std::vector<double>> &scores);

// Group metrics per age bin, per sex (BACC each), and per diagnosis (TPR).
// age_bin_edges are right-inclusive upper bounds; values above the last edge
// form the open top bin. Empty groups produce rows with n = 0 and NaN.
std::vector<GroupRow> fairness_report(const std::vector<SubjectRecord> &records,
                                      const std::vector<int64_t> &labels,
                                      const std::vector<std::vector<double>> &scores,
                                      const std::vector<double> &age_bin_edges = {65, 70, 75, 80},
                                      const std::vector<std::string> &class_names = {});

// Key-value text dump; confusion cells are labeled by class name
// (falling back to "class<i>" when names are not given).
void write_metrics(const std::string &path, const MetricsReport &report,
                   const std::vector<std::string> &class_names = {});

}  // namespace dmvt
