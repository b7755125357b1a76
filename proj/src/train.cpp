#include "dmvt/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include "dmvt/regbn.hpp"

namespace dmvt {

namespace {

const double kNan = std::numeric_limits<double>::quiet_NaN();

class PrecisionGuard {
  public:
    explicit PrecisionGuard(Precision p) : prev_(compute_precision()) {
        set_compute_precision(p);
    }
    ~PrecisionGuard() { set_compute_precision(prev_); }
    PrecisionGuard(const PrecisionGuard &) = delete;
    PrecisionGuard &operator=(const PrecisionGuard &) = delete;

  private:
    Precision prev_;
};

// Weight values plus RegBN state, for best-checkpoint bookkeeping.
struct WeightSnapshot {
    std::vector<std::vector<double>> params;
    std::vector<double> omega, omega_pm;
    bool fitted = false, fitted_pm = false;
};

WeightSnapshot capture(Model &model) {
    WeightSnapshot snap;
    for (const auto &p : model.parameters()) snap.params.push_back(p.tensor.data());
    snap.omega = model.regbn_state().omega.data();
    snap.omega_pm = model.regbn_state_pm().omega.data();
    snap.fitted = model.regbn_state().fitted;
    snap.fitted_pm = model.regbn_state_pm().fitted;
    return snap;
}

void restore(Model &model, const WeightSnapshot &snap) {
    auto params = model.parameters();
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].tensor;
        t.data_mut() = snap.params[i];
    }
    model.regbn_state().omega.data_mut() = snap.omega;
    model.regbn_state_pm().omega.data_mut() = snap.omega_pm;
    model.regbn_state().fitted = snap.fitted;
    model.regbn_state_pm().fitted = snap.fitted_pm;
}

void shuffle_indices(std::vector<size_t> &idx, Rng &rng) {
    for (size_t i = idx.size(); i > 1; --i) {
        size_t j = size_t(rng.uniform_u64(i));
        std::swap(idx[i - 1], idx[j]);
    }
}

void check_labels(const Dataset &d, int64_t n_labels, const char *set_name) {
    for (int64_t lab : d.labels) {
        if (lab < 0 || lab >= n_labels)
            throw ContractError(std::string(set_name) + " set label " + std::to_string(lab) +
                                " outside the model's " + std::to_string(n_labels) +
                                " classes");
    }
    if (d.mri.size() != d.size() || d.pet.size() != d.size() ||
        d.records.size() != d.size())
        throw ShapeError(std::string(set_name) + " set rows are misaligned");
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr_max >= lr_min)) throw ConfigError("lr_max must be >= lr_min");
    if (lr_min < 0.0) throw ConfigError("lr_min must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (total_iterations < 1) throw ConfigError("total_iterations must be >= 1");
    if (val_interval < 1) throw ConfigError("val_interval must be >= 1");
    if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
    if (beta1 < 0.0 || beta1 >= 1.0) throw ConfigError("beta1 must lie in [0,1)");
    if (beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("beta2 must lie in [0,1)");
    if (eps <= 0.0) throw ConfigError("eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    for (double w : class_weights) {
        if (!(w >= 0.0)) throw ConfigError("class_weights must be nonnegative");
    }
}

double cosine_lr(int64_t t, const TrainConfig &cfg) {
    double frac = double(t) / double(cfg.total_iterations);
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(M_PI * frac));
}

AdamW::AdamW(std::vector<Parameter> params, const TrainConfig &cfg)
    : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    for (const auto &p : params_) {
        m_.emplace_back(size_t(p.tensor.numel()), 0.0);
        v_.emplace_back(size_t(p.tensor.numel()), 0.0);
    }
}

void AdamW::step(double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor tensor = params_[i].tensor;
        const std::vector<double> *grad = tensor.grad();
        std::vector<double> &theta = tensor.data_mut();
        for (size_t k = 0; k < theta.size(); ++k) {
            double g = grad ? (*grad)[k] : 0.0;
            if (!std::isfinite(g))
                throw NumericError("non-finite gradient in parameter " + params_[i].name);
            m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g;
            v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g * g;
            double m_hat = m_[i][k] / bc1;
            double v_hat = v_[i][k] / bc2;
            theta[k] -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) +
                              cfg_.weight_decay * theta[k]);
        }
    }
}

void AdamW::zero_grad() {
    for (auto &p : params_) {
        Tensor t = p.tensor;
        t.zero_grad();
    }
}

Dataset load_dataset(const std::vector<SubjectRecord> &records) {
    Dataset d;
    for (const auto &r : records) {
        d.mri.push_back(load_volume(r.mri_path));
        d.pet.push_back(load_volume(r.pet_path));
        d.labels.push_back(r.diagnosis);
        d.records.push_back(r);
    }
    return d;
}

Dataset dataset_subset(const Dataset &full,
                       const std::map<std::string, SplitSet> &assignment, SplitSet which) {
    Dataset d;
    for (size_t i = 0; i < full.size(); ++i) {
        auto it = assignment.find(full.records[i].id);
        if (it == assignment.end())
            throw ContractError("subject " + full.records[i].id + " missing from the split");
        if (it->second != which) continue;
        d.mri.push_back(full.mri[i]);
        d.pet.push_back(full.pet[i]);
        d.labels.push_back(full.labels[i]);
        d.records.push_back(full.records[i]);
    }
    return d;
}

TrainResult train(Model &model, const Dataset &train_set, const Dataset &val_set,
                  const TrainConfig &cfg) {
    cfg.validate();
    const ModelConfig &mc = model.config();
    if (train_set.size() == 0) throw ConfigError("train set is empty");
    check_labels(train_set, mc.labels, "train");
    check_labels(val_set, mc.labels, "val");
    if (!cfg.class_weights.empty() && int64_t(cfg.class_weights.size()) != mc.labels)
        throw ConfigError("class_weights must have one entry per label");

    PrecisionGuard precision(cfg.precision);
    Rng root(cfg.seed);
    Rng shuffle_rng = root.fork(0);
    Rng dropout_rng = root.fork(1);

    AdamW opt(model.parameters(), cfg);
    const bool regbn_active =
        mc.regbn_enabled && mc.branches.use_m && mc.branches.use_p;
    const size_t n = train_set.size();
    const size_t batch = std::min(size_t(cfg.batch_size), n);

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    shuffle_indices(order, shuffle_rng);
    size_t cursor = 0;

    TrainResult result;
    result.best_val_bacc = kNan;
    WeightSnapshot best;
    bool have_best = false;
    int64_t checks_since_best = 0;

    for (int64_t it = 0; it < cfg.total_iterations; ++it) {
        if (cursor + batch > n) {
            shuffle_indices(order, shuffle_rng);
            cursor = 0;
        }
        std::vector<const Volume *> mri, pet;
        std::vector<int64_t> labels;
        for (size_t b = 0; b < batch; ++b) {
            size_t row = order[cursor + b];
            mri.push_back(&train_set.mri[row]);
            pet.push_back(&train_set.pet[row]);
            labels.push_back(train_set.labels[row]);
        }
        cursor += batch;

        double loss_value = 0.0, lr = cosine_lr(it, cfg);
        try {
            Latents lat = model.encode(mri, pet, &dropout_rng);
            if (regbn_active) {
                NoGradGuard ng;
                regbn_fit_step(model.regbn_state(), lat.z_m.detach(), lat.z_p.detach());
                if (mc.regbn_symmetric)
                    regbn_fit_step(model.regbn_state_pm(), lat.z_p.detach(),
                                   lat.z_m.detach());
            }
            Tensor logits = model.fuse(lat);
            Tensor loss = cross_entropy_mean(logits, labels, cfg.class_weights);
            loss_value = loss.item();
            if (!std::isfinite(loss_value))
                throw NumericError("training loss is not finite");
            opt.zero_grad();
            backward(loss);
            opt.step(lr);
        } catch (const NumericError &e) {
            // Divergence, wherever it surfaces, reports when it happened.
            throw NumericError("iteration " + std::to_string(it + 1) + ": " + e.what());
        }

        HistoryRow row;
        row.iteration = it + 1;
        row.train_loss = loss_value;
        row.lr = lr;
        row.val_bacc = kNan;

        if (val_set.size() > 0 && (it + 1) % cfg.val_interval == 0) {
            double bacc = evaluate(model, val_set, cfg.batch_size).bacc;
            row.val_bacc = bacc;
            if (!have_best || bacc > result.best_val_bacc) {
                result.best_val_bacc = bacc;
                result.best_iteration = it + 1;
                best = capture(model);
                have_best = true;
                checks_since_best = 0;
            } else {
                ++checks_since_best;
            }
            if (checks_since_best >= cfg.early_stop_patience) {
                result.history.push_back(row);
                result.early_stopped = true;
                result.iterations_run = it + 1;
                break;
            }
        }
        result.history.push_back(row);
        result.iterations_run = it + 1;
    }

    if (have_best) restore(model, best);
    return result;
}

std::vector<std::vector<double>> predict_probabilities(const Model &model, const Dataset &data,
                                                       int64_t batch_size) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    check_labels(data, model.config().labels, "eval");
    NoGradGuard ng;
    std::vector<std::vector<double>> out;
    for (size_t start = 0; start < data.size(); start += size_t(batch_size)) {
        size_t stop = std::min(data.size(), start + size_t(batch_size));
        std::vector<const Volume *> mri, pet;
        for (size_t i = start; i < stop; ++i) {
            mri.push_back(&data.mri[i]);
            pet.push_back(&data.pet[i]);
        }
        Tensor probs = softmax_lastaxis(model.forward(mri, pet));
        const auto &values = probs.data();
        size_t n_labels = size_t(probs.extent(-1));
        for (size_t r = 0; r < stop - start; ++r) {
            out.emplace_back(values.begin() + int64_t(r * n_labels),
                             values.begin() + int64_t((r + 1) * n_labels));
        }
    }
    return out;
}

MetricsReport evaluate(const Model &model, const Dataset &data, int64_t batch_size) {
    if (data.size() == 0) throw ConfigError("evaluation set is empty");
    return compute_metrics(data.labels, predict_probabilities(model, data, batch_size));
}

void write_history(const std::string &path, const std::vector<HistoryRow> &history) {
    std::ofstream out(path, std::ios::trunc);
    if (!out.good()) throw IoError("cannot open " + path + " for writing");
    out << "iteration,train_loss,val_bacc,lr\n";
    out << std::setprecision(12);
    for (const auto &row : history) {
        out << row.iteration << "," << row.train_loss << ",";
        if (!std::isnan(row.val_bacc)) out << row.val_bacc;
        out << "," << row.lr << "\n";
    }
    out.close();
    if (!out.good()) throw IoError("failed writing " + path);
}

}  // namespace dmvt
