#include "dmvt/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace dmvt {

namespace {

constexpr double kRowSumTolerance = 1e-6;
const double kNull = std::numeric_limits<double>::quiet_NaN();

void check_inputs(const std::vector<int64_t> &labels,
                  const std::vector<std::vector<double>> &scores) {
    if (labels.empty()) throw ContractError("compute_metrics: no samples");
    if (labels.size() != scores.size())
        throw ShapeError("compute_metrics: " + std::to_string(labels.size()) + " labels vs " +
                         std::to_string(scores.size()) + " score rows");
    size_t n_classes = scores.front().size();
    if (n_classes < 2) throw ShapeError("compute_metrics: need at least 2 classes");
    for (size_t i = 0; i < scores.size(); ++i) {
        if (scores[i].size() != n_classes)
            throw ShapeError("compute_metrics: ragged score row " + std::to_string(i));
        double sum = 0.0;
        for (double v : scores[i]) {
            if (!std::isfinite(v)) throw NumericError("compute_metrics: non-finite score");
            sum += v;
        }
        if (std::abs(sum - 1.0) > kRowSumTolerance)
            throw ContractError("compute_metrics: score row " + std::to_string(i) +
                                " sums to " + std::to_string(sum));
        if (labels[i] < 0 || labels[i] >= int64_t(n_classes))
            throw ContractError("compute_metrics: label " + std::to_string(labels[i]) +
                                " out of range at row " + std::to_string(i));
    }
}

std::string class_name(const std::vector<std::string> &names, size_t c) {
    return c < names.size() ? names[c] : "class" + std::to_string(c);
}

// BACC over an index subset: mean recall across the classes present in it.
double subset_bacc(const std::vector<int64_t> &labels, const std::vector<int64_t> &preds,
                   const std::vector<size_t> &idx, size_t n_classes) {
    std::vector<int64_t> hits(n_classes, 0), totals(n_classes, 0);
    for (size_t i : idx) {
        ++totals[size_t(labels[i])];
        if (preds[i] == labels[i]) ++hits[size_t(labels[i])];
    }
    double sum = 0.0;
    int64_t present = 0;
    for (size_t c = 0; c < n_classes; ++c) {
        if (totals[c] == 0) continue;
        sum += double(hits[c]) / double(totals[c]);
        ++present;
    }
    return present > 0 ? sum / double(present) : kNull;
}

std::string format_value(double v) {
    if (std::isnan(v)) return "nan";
    std::ostringstream out;
    out << std::setprecision(12) << v;
    return out.str();
}

}  // namespace

std::vector<int64_t> argmax_predictions(const std::vector<std::vector<double>> &scores) {
    std::vector<int64_t> preds;
    preds.reserve(scores.size());
    for (const auto &row : scores) {
        if (row.empty()) throw ShapeError("argmax_predictions: empty score row");
        size_t best = 0;
        for (size_t c = 1; c < row.size(); ++c) {
            if (row[c] > row[best]) best = c;
        }
        preds.push_back(int64_t(best));
    }
    return preds;
}

double binary_auc(const std::vector<int64_t> &labels, const std::vector<double> &pos_scores) {
    if (labels.size() != pos_scores.size())
        throw ShapeError("binary_auc: label/score length mismatch");
    std::vector<double> pos, neg;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw ContractError("binary_auc: labels must be 0 or 1");
        (labels[i] == 1 ? pos : neg).push_back(pos_scores[i]);
    }
    if (pos.empty() || neg.empty())
        throw ContractError("binary_auc: need both classes present");
    double concordant = 0.0;
    for (double p : pos) {
        for (double q : neg) {
            if (p > q) concordant += 1.0;
            else if (p == q) concordant += 0.5;
        }
    }
    return concordant / (double(pos.size()) * double(neg.size()));
}

MetricsReport compute_metrics(const std::vector<int64_t> &labels,
                              const std::vector<std::vector<double>> &scores) {
    check_inputs(labels, scores);
    const size_t n_classes = scores.front().size();
    const auto preds = argmax_predictions(scores);

    MetricsReport report;
    report.n = int64_t(labels.size());
    report.confusion.assign(n_classes, std::vector<int64_t>(n_classes, 0));
    for (size_t i = 0; i < labels.size(); ++i) {
        ++report.confusion[size_t(labels[i])][size_t(preds[i])];
    }

    double recall_sum = 0.0, macro_p = 0.0, macro_r = 0.0, macro_f = 0.0;
    int64_t present = 0;
    for (size_t c = 0; c < n_classes; ++c) {
        int64_t tp = report.confusion[c][c], actual = 0, predicted = 0;
        for (size_t j = 0; j < n_classes; ++j) {
            actual += report.confusion[c][j];
            predicted += report.confusion[j][c];
        }
        double precision = predicted > 0 ? double(tp) / double(predicted) : 0.0;
        double recall = actual > 0 ? double(tp) / double(actual) : 0.0;
        double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall)
                                             : 0.0;
        macro_p += precision;
        macro_r += recall;
        macro_f += f1;
        if (actual > 0) {
            recall_sum += recall;
            ++present;
        } else {
            report.absent_class_warning = true;
            report.absent_classes.push_back(int64_t(c));
        }
    }
    report.bacc = recall_sum / double(present);
    report.macro_precision = macro_p / double(n_classes);
    report.macro_recall = macro_r / double(n_classes);
    report.macro_f1 = macro_f / double(n_classes);

    if (n_classes == 2 && !report.absent_class_warning) {
        std::vector<double> pos;
        pos.reserve(scores.size());
        for (const auto &row : scores) pos.push_back(row[1]);
        report.auc = binary_auc(labels, pos);
        report.has_auc = true;
    }
    return report;
}

std::vector<GroupRow> fairness_report(const std::vector<SubjectRecord> &records,
                                      const std::vector<int64_t> &labels,
                                      const std::vector<std::vector<double>> &scores,
                                      const std::vector<double> &age_bin_edges,
                                      const std::vector<std::string> &class_names) {
    check_inputs(labels, scores);
    if (records.size() != labels.size())
        throw ShapeError("fairness_report: " + std::to_string(records.size()) +
                         " records vs " + std::to_string(labels.size()) + " labels");
    if (age_bin_edges.empty()) throw ConfigError("fairness_report: no age bin edges");
    for (size_t i = 1; i < age_bin_edges.size(); ++i) {
        if (age_bin_edges[i] <= age_bin_edges[i - 1])
            throw ConfigError("fairness_report: age bin edges must increase");
    }
    const size_t n_classes = scores.front().size();
    const auto preds = argmax_predictions(scores);

    std::vector<GroupRow> rows;
    auto emit_bacc = [&](const std::string &name, const std::vector<size_t> &idx) {
        GroupRow row;
        row.group = name;
        row.metric = "bacc";
        row.n = int64_t(idx.size());
        row.value = idx.empty() ? kNull : subset_bacc(labels, preds, idx, n_classes);
        rows.push_back(std::move(row));
    };

    auto format_edge = [](double edge) {
        std::ostringstream out;
        out << edge;
        return out.str();
    };
    const size_t n_bins = age_bin_edges.size() + 1;
    std::vector<std::vector<size_t>> bin_members(n_bins);
    for (size_t i = 0; i < records.size(); ++i) {
        size_t b = 0;
        while (b < age_bin_edges.size() && records[i].age > age_bin_edges[b]) ++b;
        bin_members[b].push_back(i);
    }
    for (size_t b = 0; b < n_bins; ++b) {
        std::string name;
        if (b == 0) {
            name = "age<=" + format_edge(age_bin_edges[0]);
        } else if (b == age_bin_edges.size()) {
            name = "age>" + format_edge(age_bin_edges.back());
        } else {
            name = "age(" + format_edge(age_bin_edges[b - 1]) + "," +
                   format_edge(age_bin_edges[b]) + "]";
        }
        emit_bacc(name, bin_members[b]);
    }

    std::vector<size_t> female, male;
    for (size_t i = 0; i < records.size(); ++i) {
        (records[i].sex == Sex::female ? female : male).push_back(i);
    }
    emit_bacc("sex=F", female);
    emit_bacc("sex=M", male);

    for (size_t c = 0; c < n_classes; ++c) {
        int64_t total = 0, hit = 0;
        for (size_t i = 0; i < records.size(); ++i) {
            if (size_t(labels[i]) != c) continue;
            ++total;
            if (preds[i] == labels[i]) ++hit;
        }
        GroupRow row;
        row.group = "diagnosis=" + class_name(class_names, c);
        row.metric = "tpr";
        row.n = total;
        row.value = total > 0 ? double(hit) / double(total) : kNull;
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_metrics(const std::string &path, const MetricsReport &report,
                   const std::vector<std::string> &class_names) {
    std::ofstream out(path, std::ios::trunc);
    if (!out.good()) throw IoError("cannot open " + path + " for writing");
    out << "n=" << report.n << "\n";
    out << "bacc=" << format_value(report.bacc) << "\n";
    if (report.has_auc) out << "auc=" << format_value(report.auc) << "\n";
    out << "macro_precision=" << format_value(report.macro_precision) << "\n";
    out << "macro_recall=" << format_value(report.macro_recall) << "\n";
    out << "macro_f1=" << format_value(report.macro_f1) << "\n";
    out << "absent_class_warning=" << (report.absent_class_warning ? 1 : 0) << "\n";
    for (size_t i = 0; i < report.confusion.size(); ++i) {
        for (size_t j = 0; j < report.confusion[i].size(); ++j) {
            out << "confusion." << class_name(class_names, i) << "."
                << class_name(class_names, j) << "=" << report.confusion[i][j] << "\n";
        }
    }
    for (const auto &row : report.groups) {
        out << "group." << row.group << "." << row.metric << "=" << format_value(row.value)
            << "\n";
        out << "group." << row.group << ".n=" << row.n << "\n";
    }
    out.close();
    if (!out.good()) throw IoError("failed writing " + path);
}

}  // namespace dmvt
