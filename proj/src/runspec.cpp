#include "dmvt/runspec.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace dmvt {

namespace {

const std::vector<std::string> kSchema = {
    // model
    "dims", "block", "patch", "embed", "depth", "heads", "tau", "dropout", "labels",
    "branches", "regbn", "regbn_symmetric", "scaling",
    // training
    "precision", "lr_max", "lr_min", "weight_decay", "beta1", "beta2", "eps",
    "batch_size", "total_iterations", "val_interval", "early_stop_patience", "seed",
    "class_weights",
    // synthetic data
    "n_subjects", "n_classes", "shared_strength", "unique_m_strength",
    "unique_p_strength", "noise_sigma",
    // splitting
    "ratio_train", "ratio_val", "ratio_test", "candidates",
    // ablation
    "axis", "ablation_seeds"};

std::string trim(const std::string &s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string &key, const std::string &text) {
    try {
        size_t used = 0;
        int64_t v = std::stoll(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception &) {
        throw ConfigError("key '" + key + "': '" + text + "' is not an integer");
    }
}

double parse_double(const std::string &key, const std::string &text) {
    try {
        size_t used = 0;
        double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception &) {
        throw ConfigError("key '" + key + "': '" + text + "' is not a number");
    }
}

}  // namespace

const std::vector<std::string> &RunSpec::schema() { return kSchema; }

bool RunSpec::known_key(const std::string &key) {
    return std::find(kSchema.begin(), kSchema.end(), key) != kSchema.end();
}

RunSpec RunSpec::from_file(const std::string &path) {
    std::ifstream in(path);
    if (!in.good()) throw IoError("cannot open config file " + path);
    RunSpec spec;
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(path + ":" + std::to_string(line_no) +
                             ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ParseError(path + ":" + std::to_string(line_no) +
                             ": expected 'key = value'");
        if (!known_key(key))
            throw ParseError(path + ":" + std::to_string(line_no) + ": unknown key '" +
                             key + "'");
        if (spec.values_.count(key))
            throw ParseError(path + ":" + std::to_string(line_no) + ": duplicate key '" +
                             key + "'");
        spec.values_[key] = value;
    }
    return spec;
}

void RunSpec::set(const std::string &key, const std::string &value) {
    if (!known_key(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
}

bool RunSpec::has(const std::string &key) const { return values_.count(key) > 0; }

std::string RunSpec::get_string(const std::string &key, const std::string &fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

int64_t RunSpec::get_int(const std::string &key, int64_t fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_int(key, it->second);
}

uint64_t RunSpec::get_u64(const std::string &key, uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    int64_t v = parse_int(key, it->second);
    if (v < 0) throw ConfigError("key '" + key + "' must be nonnegative");
    return uint64_t(v);
}

double RunSpec::get_double(const std::string &key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_double(key, it->second);
}

bool RunSpec::get_bool(const std::string &key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string &v = it->second;
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw ConfigError("key '" + key + "': '" + v + "' is not a boolean (on/off)");
}

ModelConfig RunSpec::model_config() const {
    ModelConfig cfg;
    int64_t dims = get_int("dims", 0);
    if (dims > 0) cfg.dim_h = cfg.dim_w = cfg.dim_d = dims;
    cfg.block = get_int("block", cfg.block);
    cfg.patch = get_int("patch", cfg.patch);
    cfg.embed = get_int("embed", cfg.embed);
    cfg.depth = get_int("depth", cfg.depth);
    cfg.heads = get_int("heads", cfg.heads);
    cfg.tau = get_double("tau", cfg.tau);
    cfg.dropout = get_double("dropout", cfg.dropout);
    cfg.labels = get_int("labels", cfg.labels);
    if (has("branches")) cfg.branches = parse_branches(values_.at("branches"));
    cfg.regbn_enabled = get_bool("regbn", cfg.regbn_enabled);
    cfg.regbn_symmetric = get_bool("regbn_symmetric", cfg.regbn_symmetric);
    if (has("scaling")) {
        const std::string &mode = values_.at("scaling");
        if (mode == "per_head") cfg.scaling = ScalingMode::per_head;
        else if (mode == "whole_embedding") cfg.scaling = ScalingMode::whole_embedding;
        else
            throw ConfigError("key 'scaling': '" + mode +
                              "' is not per_head or whole_embedding");
    }
    cfg.validate();
    return cfg;
}

TrainConfig RunSpec::train_config() const {
    TrainConfig cfg;
    cfg.lr_max = get_double("lr_max", cfg.lr_max);
    cfg.lr_min = get_double("lr_min", cfg.lr_min);
    cfg.weight_decay = get_double("weight_decay", cfg.weight_decay);
    cfg.beta1 = get_double("beta1", cfg.beta1);
    cfg.beta2 = get_double("beta2", cfg.beta2);
    cfg.eps = get_double("eps", cfg.eps);
    cfg.batch_size = get_int("batch_size", cfg.batch_size);
    cfg.total_iterations = get_int("total_iterations", cfg.total_iterations);
    cfg.val_interval = get_int("val_interval", cfg.val_interval);
    cfg.early_stop_patience = get_int("early_stop_patience", cfg.early_stop_patience);
    cfg.seed = get_u64("seed", cfg.seed);
    if (has("precision")) {
        const std::string &p = values_.at("precision");
        if (p == "f64") cfg.precision = Precision::f64;
        else if (p == "f32") cfg.precision = Precision::f32;
        else throw ConfigError("key 'precision': '" + p + "' is not f64 or f32");
    }
    if (has("class_weights")) {
        cfg.class_weights.clear();
        std::stringstream ss(values_.at("class_weights"));
        std::string piece;
        while (std::getline(ss, piece, ',')) {
            cfg.class_weights.push_back(parse_double("class_weights", trim(piece)));
        }
    }
    cfg.validate();
    return cfg;
}

SynthConfig RunSpec::synth_config() const {
    SynthConfig cfg;
    cfg.n_subjects = get_int("n_subjects", cfg.n_subjects);
    int64_t dims = get_int("dims", 0);
    if (dims > 0) cfg.dim_h = cfg.dim_w = cfg.dim_d = dims;
    cfg.n_classes = get_int("n_classes", cfg.n_classes);
    cfg.shared_signal_strength = get_double("shared_strength", cfg.shared_signal_strength);
    cfg.unique_m_strength = get_double("unique_m_strength", cfg.unique_m_strength);
    cfg.unique_p_strength = get_double("unique_p_strength", cfg.unique_p_strength);
    cfg.noise_sigma = get_double("noise_sigma", cfg.noise_sigma);
    cfg.seed = get_u64("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

SplitRatios RunSpec::split_ratios() const {
    SplitRatios ratios;
    ratios.train = get_double("ratio_train", ratios.train);
    ratios.val = get_double("ratio_val", ratios.val);
    ratios.test = get_double("ratio_test", ratios.test);
    ratios.validate();
    return ratios;
}

int64_t RunSpec::split_candidates() const {
    int64_t n = get_int("candidates", 1000);
    if (n < 1) throw ConfigError("key 'candidates' must be >= 1");
    return n;
}

void RunSpec::write(const std::string &path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out.good()) throw IoError("cannot open " + path + " for writing");
    for (const auto &[key, value] : values_) {
        out << key << " = " << value << "\n";
    }
    out.close();
    if (!out.good()) throw IoError("failed writing " + path);
}

BranchSet parse_branches(const std::string &text) {
    BranchSet set;
    set.use_m = set.use_p = set.use_mp = false;
    std::stringstream ss(text);
    std::string piece;
    bool any = false;
    while (std::getline(ss, piece, '+')) {
        piece = trim(piece);
        bool *flag = nullptr;
        if (piece == "M") flag = &set.use_m;
        else if (piece == "P") flag = &set.use_p;
        else if (piece == "MP") flag = &set.use_mp;
        else
            throw ConfigError("branch spec '" + text + "': unknown branch '" + piece + "'");
        if (*flag) throw ConfigError("branch spec '" + text + "' repeats '" + piece + "'");
        *flag = true;
        any = true;
    }
    if (!any) throw ConfigError("branch spec is empty");
    return set;
}

}  // namespace dmvt
