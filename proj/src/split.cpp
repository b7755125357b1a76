#include "dmvt/split.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

namespace dmvt {

namespace {

constexpr int kFitIterations = 500;
constexpr double kFitLr = 0.1;
constexpr double kSeparationBound = 10.0;
constexpr double kRidge = 1e-3;

struct ClassGroup {
    int64_t diagnosis;
    std::vector<size_t> members;  // record indices, in record order
};

std::vector<ClassGroup> group_by_class(const std::vector<SubjectRecord> &records) {
    std::map<int64_t, std::vector<size_t>> by_class;
    for (size_t i = 0; i < records.size(); ++i) {
        by_class[records[i].diagnosis].push_back(i);
    }
    std::vector<ClassGroup> out;
    for (auto &[diag, members] : by_class) out.push_back({diag, std::move(members)});
    return out;
}

void fisher_yates(std::vector<size_t> &v, Rng &rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = size_t(rng.uniform_u64(uint64_t(i)));
        std::swap(v[i - 1], v[j]);
    }
}

// Per-subject features: intercept, standardized age, sex, diagnosis one-hot.
std::vector<std::vector<double>> build_features(const std::vector<SubjectRecord> &records) {
    double mean = 0;
    for (const auto &r : records) mean += r.age;
    mean /= double(records.size());
    double var = 0;
    for (const auto &r : records) var += (r.age - mean) * (r.age - mean);
    double sd = std::sqrt(var / double(records.size()));

    int64_t n_diag = 0;
    for (const auto &r : records) n_diag = std::max(n_diag, r.diagnosis + 1);

    std::vector<std::vector<double>> x;
    x.reserve(records.size());
    for (const auto &r : records) {
        std::vector<double> row(size_t(3 + n_diag), 0.0);
        row[0] = 1.0;
        // A constant age column standardizes to zero rather than dividing by 0.
        row[1] = sd > 1e-12 ? (r.age - mean) / sd : 0.0;
        row[2] = r.sex == Sex::male ? 1.0 : 0.0;
        row[size_t(3 + r.diagnosis)] = 1.0;
        x.push_back(std::move(row));
    }
    return x;
}

std::vector<double> fit_logistic(const std::vector<std::vector<double>> &x,
                                 const std::vector<double> &y, double l2) {
    const size_t n = x.size(), k = x[0].size();
    std::vector<double> w(k, 0.0), grad(k);
    for (int it = 0; it < kFitIterations; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (size_t i = 0; i < n; ++i) {
            double z = 0;
            for (size_t j = 0; j < k; ++j) z += w[j] * x[i][j];
            double p = 1.0 / (1.0 + std::exp(-z));
            double diff = p - y[i];
            for (size_t j = 0; j < k; ++j) grad[j] += diff * x[i][j];
        }
        for (size_t j = 0; j < k; ++j) {
            grad[j] /= double(n);
            if (l2 > 0 && j != 0) grad[j] += l2 * w[j];  // intercept unpenalized
            w[j] -= kFitLr * grad[j];
        }
    }
    return w;
}

std::vector<double> deciles(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    std::vector<double> out;
    const double n = double(values.size());
    for (int q = 1; q <= 9; ++q) {
        double pos = 0.1 * q * (n - 1.0);
        size_t lo = size_t(pos);
        double frac = pos - double(lo);
        double v = values[lo];
        if (lo + 1 < values.size()) v = v * (1.0 - frac) + values[lo + 1] * frac;
        out.push_back(v);
    }
    return out;
}

void check_inputs(const std::vector<SubjectRecord> &records, const SplitRatios &ratios) {
    ratios.validate();
    if (records.size() < 10) {
        throw ConfigError("splitting needs at least 10 subjects, got " +
                          std::to_string(records.size()));
    }
    std::set<int64_t> classes;
    for (const auto &r : records) classes.insert(r.diagnosis);
    if (classes.size() < 2) {
        throw ConfigError("splitting needs at least 2 diagnosis classes, got " +
                          std::to_string(classes.size()));
    }
}

}  // namespace

std::string split_set_name(SplitSet s) {
    switch (s) {
        case SplitSet::train: return "train";
        case SplitSet::val: return "val";
        default: return "test";
    }
}

void SplitRatios::validate() const {
    for (double r : {train, val, test}) {
        if (!(r > 0.0 && r < 1.0)) throw ConfigError("split ratios must lie in (0,1)");
    }
    if (std::abs(train + val + test - 1.0) > 1e-9) {
        throw ConfigError("split ratios must sum to 1");
    }
}

std::vector<SplitSet> stratified_candidate(const std::vector<SubjectRecord> &records,
                                           const SplitRatios &ratios, Rng &rng) {
    check_inputs(records, ratios);
    const double target[3] = {ratios.train, ratios.val, ratios.test};
    std::vector<SplitSet> out(records.size(), SplitSet::train);

    double processed = 0;           // subjects seen so far
    int64_t allocated[3] = {0, 0, 0};  // running totals per set
    for (ClassGroup &g : group_by_class(records)) {
        const int64_t n_c = int64_t(g.members.size());
        int64_t take[3];
        int64_t rem = n_c;
        for (int s = 0; s < 3; ++s) {
            take[s] = int64_t(std::floor(double(n_c) * target[s]));
            rem -= take[s];
        }
        // Hand the leftover units to the sets lagging their cumulative global
        // quota the most; this keeps overall sizes pinned to the targets while
        // each class stays within one subject of its own quota.
        processed += double(n_c);
        std::vector<int> order = {0, 1, 2};
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            double da = target[a] * processed - double(allocated[a] + take[a]);
            double db = target[b] * processed - double(allocated[b] + take[b]);
            return da > db;
        });
        for (int64_t u = 0; u < rem; ++u) ++take[order[size_t(u)]];
        for (int s = 0; s < 3; ++s) allocated[s] += take[s];

        fisher_yates(g.members, rng);
        size_t pos = 0;
        for (int s = 0; s < 3; ++s) {
            SplitSet which = s == 0 ? SplitSet::train : s == 1 ? SplitSet::val : SplitSet::test;
            for (int64_t u = 0; u < take[s]; ++u) out[g.members[pos++]] = which;
        }
    }
    return out;
}

std::vector<double> propensity_scores(const std::vector<SubjectRecord> &records,
                                      const std::vector<SplitSet> &sets) {
    if (records.size() != sets.size()) {
        throw ShapeError("records and split assignment differ in length");
    }
    auto x = build_features(records);
    std::vector<double> y(records.size());
    for (size_t i = 0; i < sets.size(); ++i) y[i] = sets[i] == SplitSet::train ? 1.0 : 0.0;

    std::vector<double> w = fit_logistic(x, y, 0.0);
    double wmax = 0;
    for (double v : w) wmax = std::max(wmax, std::abs(v));
    if (wmax > kSeparationBound) w = fit_logistic(x, y, kRidge);

    std::vector<double> scores(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        double z = 0;
        for (size_t j = 0; j < w.size(); ++j) z += w[j] * x[i][j];
        scores[i] = 1.0 / (1.0 + std::exp(-z));
    }
    return scores;
}

double propensity_imbalance(const std::vector<SubjectRecord> &records,
                            const std::vector<SplitSet> &sets) {
    std::vector<double> scores = propensity_scores(records, sets);
    std::vector<double> per_set[3];
    for (size_t i = 0; i < sets.size(); ++i) {
        per_set[size_t(sets[i])].push_back(scores[i]);
    }
    for (int s = 0; s < 3; ++s) {
        if (per_set[s].empty()) {
            throw ConfigError("split leaves the " +
                              split_set_name(SplitSet(s)) + " set empty");
        }
    }
    std::vector<double> dec[3];
    for (int s = 0; s < 3; ++s) dec[s] = deciles(per_set[s]);
    double worst = 0;
    for (int a = 0; a < 3; ++a) {
        for (int b = a + 1; b < 3; ++b) {
            for (size_t q = 0; q < dec[a].size(); ++q) {
                worst = std::max(worst, std::abs(dec[a][q] - dec[b][q]));
            }
        }
    }
    return worst;
}

SplitAssignment propensity_split(const std::vector<SubjectRecord> &records,
                                 const SplitRatios &ratios, int64_t n_candidates,
                                 uint64_t seed) {
    check_inputs(records, ratios);
    if (n_candidates < 1) throw ConfigError("n_candidates must be >= 1");

    Rng root(seed);
    double best = std::numeric_limits<double>::infinity();
    std::vector<SplitSet> best_sets;
    int64_t best_index = 0;
    for (int64_t j = 0; j < n_candidates; ++j) {
        Rng rng = root.fork(uint64_t(j));
        std::vector<SplitSet> cand = stratified_candidate(records, ratios, rng);
        double imb = propensity_imbalance(records, cand);
        if (imb < best) {
            best = imb;
            best_sets = std::move(cand);
            best_index = j;
        }
    }

    SplitAssignment out;
    int64_t counts[3] = {0, 0, 0};
    for (size_t i = 0; i < records.size(); ++i) {
        out.assignment[records[i].id] = best_sets[i];
        ++counts[size_t(best_sets[i])];
    }
    const double n = double(records.size());
    out.achieved_train = double(counts[0]) / n;
    out.achieved_val = double(counts[1]) / n;
    out.achieved_test = double(counts[2]) / n;
    out.imbalance = best;
    out.winner_index = best_index;
    return out;
}

void write_split(const std::string &csv_path, const std::vector<SubjectRecord> &records,
                 const SplitAssignment &split) {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw IoError("cannot open split file for writing: " + csv_path);
    out << "id,split\n";
    for (const auto &r : records) {
        auto it = split.assignment.find(r.id);
        if (it == split.assignment.end()) {
            throw ContractError("record " + r.id + " missing from the split assignment");
        }
        out << r.id << ',' << split_set_name(it->second) << "\n";
    }
    if (!out) throw IoError("write failure on " + csv_path);

    std::ofstream rep(csv_path + ".report.txt", std::ios::trunc);
    if (!rep) throw IoError("cannot open split report for writing");
    rep << "train_fraction " << split.achieved_train << "\n"
        << "val_fraction " << split.achieved_val << "\n"
        << "test_fraction " << split.achieved_test << "\n"
        << "imbalance " << split.imbalance << "\n"
        << "candidate " << split.winner_index << "\n";
}

std::map<std::string, SplitSet> load_split(const std::string &csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open split file: " + csv_path);
    std::string line;
    size_t lineno = 0;
    if (!std::getline(in, line)) throw ParseError(csv_path + ": empty split file");
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "id,split") {
        throw ParseError(csv_path + ":1: expected header 'id,split'");
    }
    std::map<std::string, SplitSet> out;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        size_t comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
            throw ParseError(csv_path + ":" + std::to_string(lineno) + ": expected 2 fields");
        }
        std::string id = line.substr(0, comma);
        std::string name = line.substr(comma + 1);
        SplitSet s;
        if (name == "train") {
            s = SplitSet::train;
        } else if (name == "val") {
            s = SplitSet::val;
        } else if (name == "test") {
            s = SplitSet::test;
        } else {
            throw ParseError(csv_path + ":" + std::to_string(lineno) +
                             ": unknown split name '" + name + "'");
        }
        if (!out.emplace(id, s).second) {
            throw ParseError(csv_path + ":" + std::to_string(lineno) + ": duplicate id " + id);
        }
    }
    return out;
}

std::vector<int> stratified_kfold(const std::vector<SubjectRecord> &records, int k,
                                  uint64_t seed) {
    if (k < 2) throw ConfigError("k-fold needs k >= 2");
    if (records.size() < size_t(k)) throw ConfigError("fewer subjects than folds");
    Rng rng(seed);
    std::vector<int> out(records.size(), 0);
    for (ClassGroup &g : group_by_class(records)) {
        fisher_yates(g.members, rng);
        for (size_t i = 0; i < g.members.size(); ++i) out[g.members[i]] = int(i % size_t(k));
    }
    return out;
}

}  // namespace dmvt
