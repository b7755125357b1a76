#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmvt/metrics.hpp"
#include "dmvt/model.hpp"
#include "dmvt/split.hpp"

namespace dmvt {

struct TrainConfig {
    double lr_max = 1e-4;
    double lr_min = 0.0;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t batch_size = 16;
    int64_t total_iterations = 3800;
    int64_t val_interval = 100;        // iterations between validation checks
    int64_t early_stop_patience = 10;  // checks without improvement before stopping
    uint64_t seed = 0;
    Precision precision = Precision::f64;
    std::vector<double> class_weights;  // empty = unweighted loss

    void validate() const;  // throws ConfigError naming the field
};

// lr(t) = lr_min + (lr_max - lr_min)/2 * (1 + cos(pi*t/T)); lr(0) = lr_max,
// lr(T) = lr_min, nonincreasing between.
double cosine_lr(int64_t t, const TrainConfig &cfg);

// Decoupled-weight-decay Adam over a fixed parameter list. Parameters with no
// gradient buffer are treated as zero-gradient (they still decay).
class AdamW {
  public:
    AdamW(std::vector<Parameter> params, const TrainConfig &cfg);

    // Applies one update from the accumulated gradients, then advances the
    // bias-correction step count. Throws NumericError naming the first
    // parameter with a non-finite gradient.
    void step(double lr);
    void zero_grad();
    int64_t steps_taken() const { return t_; }

  private:
    std::vector<Parameter> params_;
    TrainConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    int64_t t_ = 0;
};

// In-memory paired dataset; rows align across all four vectors.
struct Dataset {
    std::vector<Volume> mri, pet;
    std::vector<int64_t> labels;
    std::vector<SubjectRecord> records;

    size_t size() const { return labels.size(); }
};

Dataset load_dataset(const std::vector<SubjectRecord> &records);
// Rows of `full` whose subject id is assigned to `which`. Every dataset id
// must appear in the assignment.
Dataset dataset_subset(const Dataset &full,
                       const std::map<std::string, SplitSet> &assignment, SplitSet which);

struct HistoryRow {
    int64_t iteration = 0;  // 1-based
    double train_loss = 0.0;
    double val_bacc = 0.0;  // NaN on iterations without a validation check
    double lr = 0.0;
};

struct TrainResult {
    std::vector<HistoryRow> history;
    double best_val_bacc = 0.0;   // NaN when no check ever ran
    int64_t best_iteration = -1;
    int64_t iterations_run = 0;
    bool early_stopped = false;
};

// Mini-batch loop: per batch, one RegBN fit step on detached latents (when the
// model runs both unimodal branches with RegBN enabled), then the graph
// forward, cross-entropy, backward, and an AdamW step at the cosine lr.
// Validation BACC every val_interval iterations drives early stopping; the
// model is left holding the best-validation weights (final weights when no
// check ever ran). An empty val set disables validation entirely.
TrainResult train(Model &model, const Dataset &train_set, const Dataset &val_set,
                  const TrainConfig &cfg);

// Batched inference: softmax probabilities per subject, then a MetricsReport.
std::vector<std::vector<double>> predict_probabilities(const Model &model, const Dataset &data,
                                                       int64_t batch_size = 16);
MetricsReport evaluate(const Model &model, const Dataset &data, int64_t batch_size = 16);

// CSV with header iteration,train_loss,val_bacc,lr; val_bacc empty when NaN.
void write_history(const std::string &path, const std::vector<HistoryRow> &history);

}  // namespace dmvt
