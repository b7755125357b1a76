#include "dmvt/ablation.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace dmvt {

namespace {

const double kNan = std::numeric_limits<double>::quiet_NaN();

std::string branch_label(const BranchSet &b) {
    std::string label;
    auto append = [&](const char *part) {
        if (!label.empty()) label += "+";
        label += part;
    };
    if (b.use_m) append("M");
    if (b.use_p) append("P");
    if (b.use_mp) append("MP");
    return label;
}

std::string format_number(double v) {
    std::ostringstream out;
    out << v;
    return out.str();
}

// One-at-a-time network-parameter grid; values that break the geometry or
// head split are dropped rather than reported as errors.
void append_params_variants(const ModelConfig &base, std::vector<AblationVariant> &out) {
    auto push = [&](const std::string &name, const ModelConfig &cfg) {
        try {
            cfg.validate();
        } catch (const ConfigError &) {
            return;
        }
        out.push_back({name, cfg});
    };
    for (int64_t patch : {int64_t(4), int64_t(8)}) {
        ModelConfig cfg = base;
        cfg.patch = patch;
        push("patch=" + std::to_string(patch), cfg);
    }
    for (int64_t embed : {int64_t(128), int64_t(256), int64_t(512), int64_t(1024)}) {
        ModelConfig cfg = base;
        cfg.embed = embed;
        push("embed=" + std::to_string(embed), cfg);
    }
    for (int64_t heads : {int64_t(8), int64_t(16)}) {
        ModelConfig cfg = base;
        cfg.heads = heads;
        push("heads=" + std::to_string(heads), cfg);
    }
    for (int64_t depth : {int64_t(1), int64_t(2), int64_t(4), int64_t(8)}) {
        ModelConfig cfg = base;
        cfg.depth = depth;
        push("depth=" + std::to_string(depth), cfg);
    }
    for (double dropout : {0.0, 0.2, 0.5}) {
        ModelConfig cfg = base;
        cfg.dropout = dropout;
        push("dropout=" + format_number(dropout), cfg);
    }
}

struct Moments {
    double mean = 0.0, stdev = 0.0;
};

Moments moments(const std::vector<double> &values) {
    Moments m;
    if (values.empty()) return m;
    for (double v : values) m.mean += v;
    m.mean /= double(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - m.mean) * (v - m.mean);
        m.stdev = std::sqrt(ss / double(values.size() - 1));
    }
    return m;
}

std::string format_cell(double v) {
    if (std::isnan(v)) return "nan";
    std::ostringstream out;
    out << std::setprecision(12) << v;
    return out.str();
}

}  // namespace

AblationAxis parse_ablation_axis(const std::string &name) {
    if (name == "branches") return AblationAxis::branches;
    if (name == "tau") return AblationAxis::tau;
    if (name == "regbn") return AblationAxis::regbn;
    if (name == "params") return AblationAxis::params;
    throw ConfigError("unknown ablation axis '" + name +
                      "' (expected branches, tau, regbn, or params)");
}

std::string ablation_axis_name(AblationAxis axis) {
    switch (axis) {
        case AblationAxis::branches: return "branches";
        case AblationAxis::tau: return "tau";
        case AblationAxis::regbn: return "regbn";
        case AblationAxis::params: return "params";
    }
    throw ConfigError("invalid ablation axis value");
}

std::vector<AblationVariant> axis_variants(AblationAxis axis, const ModelConfig &base) {
    base.validate();
    std::vector<AblationVariant> out;
    switch (axis) {
        case AblationAxis::branches:
            for (const ModelConfig &cfg : ablation_variants(base)) {
                out.push_back({branch_label(cfg.branches), cfg});
            }
            break;
        case AblationAxis::tau:
            for (double tau : tau_sweep_grid()) {
                ModelConfig cfg = base;
                cfg.tau = tau;
                out.push_back({"tau=" + format_number(tau), cfg});
            }
            break;
        case AblationAxis::regbn: {
            auto variants = regbn_variants(base);
            out.push_back({"regbn=off", variants.at(0)});
            out.push_back({"regbn=on", variants.at(1)});
            break;
        }
        case AblationAxis::params:
            append_params_variants(base, out);
            break;
    }
    return out;
}

std::vector<AblationRow> run_ablation(const ModelConfig &base, const TrainConfig &train_cfg,
                                      const Dataset &train_set, const Dataset &val_set,
                                      const Dataset &test_set, AblationAxis axis,
                                      int64_t k_seeds) {
    if (k_seeds < 1) throw ConfigError("k_seeds must be >= 1");
    train_cfg.validate();
    if (test_set.size() == 0) throw ConfigError("test set is empty");

    std::vector<AblationRow> rows;
    for (const AblationVariant &variant : axis_variants(axis, base)) {
        std::vector<double> bacc, auc, f1;
        for (int64_t s = 0; s < k_seeds; ++s) {
            TrainConfig tc = train_cfg;
            tc.seed = train_cfg.seed + uint64_t(s);
            Model model(variant.cfg, tc.seed);
            train(model, train_set, val_set, tc);
            MetricsReport report = evaluate(model, test_set);
            bacc.push_back(report.bacc);
            f1.push_back(report.macro_f1);
            if (report.has_auc) auc.push_back(report.auc);
        }
        AblationRow row;
        row.variant = variant.name;
        row.n_seeds = k_seeds;
        Moments mb = moments(bacc), mf = moments(f1);
        row.bacc_mean = mb.mean;
        row.bacc_std = mb.stdev;
        row.macro_f1_mean = mf.mean;
        row.macro_f1_std = mf.stdev;
        if (int64_t(auc.size()) == k_seeds) {
            Moments ma = moments(auc);
            row.auc_mean = ma.mean;
            row.auc_std = ma.stdev;
        } else {
            row.auc_mean = kNan;
            row.auc_std = kNan;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_ablation_csv(const std::string &path, const std::vector<AblationRow> &rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out.good()) throw IoError("cannot open " + path + " for writing");
    out << "variant,n_seeds,bacc_mean,bacc_std,auc_mean,auc_std,macro_f1_mean,macro_f1_std\n";
    for (const auto &row : rows) {
        out << row.variant << "," << row.n_seeds << "," << format_cell(row.bacc_mean) << ","
            << format_cell(row.bacc_std) << "," << format_cell(row.auc_mean) << ","
            << format_cell(row.auc_std) << "," << format_cell(row.macro_f1_mean) << ","
            << format_cell(row.macro_f1_std) << "\n";
    }
    out.close();
    if (!out.good()) throw IoError("failed writing " + path);
}

}  // namespace dmvt
