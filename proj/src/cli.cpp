#include "dmvt/cli.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>

#include "dmvt/ablation.hpp"
#include "dmvt/runspec.hpp"

namespace dmvt {

namespace {

namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kInternalError = 1;
constexpr int kUserError = 2;
constexpr int kUsageError = 64;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

const char *kUsage =
    "usage: dmvt <command> [flags]\n"
    "\n"
    "commands:\n"
    "  synth   generate a synthetic paired-volume dataset\n"
    "          --out DIR [--n N] [--dims E] [--classes L] [--seed S]\n"
    "  split   balanced train/val/test split for a manifest\n"
    "          --manifest CSV --out DIR [--labels TXT] [--ratios A,B,C]\n"
    "          [--candidates N] [--seed S]\n"
    "  train   train a model on a split\n"
    "          --manifest CSV --split-file CSV --out DIR [--labels TXT]\n"
    "  eval    evaluate a checkpoint\n"
    "          --checkpoint CKPT --manifest CSV --out DIR [--labels TXT]\n"
    "          [--split-file CSV --split train|val|test] [--fairness]\n"
    "  ablate  train and score an ablation grid\n"
    "          --manifest CSV --split-file CSV --axis AXIS --out DIR\n"
    "          [--labels TXT] [--seeds K]\n"
    "\n"
    "global flags: --config FILE, --seed S, --out DIR; any config key can be\n"
    "overridden with --<key> <value> (see the config schema in the README).\n";

// Path-valued and action flags, kept apart from config-schema overrides.
const std::set<std::string> kPathFlags = {"config", "out", "manifest", "labels",
                                          "split-file", "checkpoint", "split"};
const std::set<std::string> kSwitches = {"fairness", "help"};

struct Invocation {
    std::string command;
    std::map<std::string, std::string> paths;  // kPathFlags
    std::set<std::string> switches;
    RunSpec spec;  // config file merged with command-line overrides
};

Invocation parse_args(const std::vector<std::string> &args) {
    Invocation inv;
    if (args.empty()) throw UsageError("missing command");
    size_t start = 0;
    if (args[0] == "--help" || args[0] == "help") {
        inv.switches.insert("help");
        return inv;
    }
    inv.command = args[start++];
    if (inv.command != "synth" && inv.command != "split" && inv.command != "train" &&
        inv.command != "eval" && inv.command != "ablate")
        throw UsageError("unknown command '" + inv.command + "'");

    // Collect raw flags first so --config is applied before other overrides.
    std::vector<std::pair<std::string, std::string>> overrides;
    for (size_t i = start; i < args.size(); ++i) {
        const std::string &arg = args[i];
        if (arg.rfind("--", 0) != 0) throw UsageError("stray argument '" + arg + "'");
        std::string key = arg.substr(2);
        std::string value;
        bool has_value = false;
        size_t eq = key.find('=');
        if (eq != std::string::npos) {
            value = key.substr(eq + 1);
            key = key.substr(0, eq);
            has_value = true;
        }
        if (kSwitches.count(key)) {
            if (has_value) throw UsageError("flag --" + key + " takes no value");
            inv.switches.insert(key);
            continue;
        }
        if (!has_value) {
            if (i + 1 >= args.size()) throw UsageError("flag --" + key + " needs a value");
            value = args[++i];
        }
        if (kPathFlags.count(key)) {
            inv.paths[key] = value;
        } else if (key == "n") {
            overrides.push_back({"n_subjects", value});
        } else if (key == "classes") {
            overrides.push_back({"n_classes", value});
        } else if (key == "seeds") {
            overrides.push_back({"ablation_seeds", value});
        } else if (key == "ratios") {
            size_t c1 = value.find(','), c2 = value.find(',', c1 + 1);
            if (c1 == std::string::npos || c2 == std::string::npos)
                throw UsageError("--ratios wants three comma-separated numbers");
            overrides.push_back({"ratio_train", value.substr(0, c1)});
            overrides.push_back({"ratio_val", value.substr(c1 + 1, c2 - c1 - 1)});
            overrides.push_back({"ratio_test", value.substr(c2 + 1)});
        } else if (RunSpec::known_key(key)) {
            overrides.push_back({key, value});
        } else {
            throw UsageError("unknown flag --" + key);
        }
    }
    if (inv.paths.count("config")) inv.spec = RunSpec::from_file(inv.paths.at("config"));
    for (const auto &[key, value] : overrides) inv.spec.set(key, value);
    return inv;
}

const std::string &require_path(const Invocation &inv, const std::string &flag) {
    auto it = inv.paths.find(flag);
    if (it == inv.paths.end()) throw UsageError("missing required flag --" + flag);
    return it->second;
}

fs::path prepare_out_dir(const Invocation &inv) {
    fs::path out = require_path(inv, "out");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory " + out.string());
    return out;
}

void snapshot_config(const Invocation &inv, const fs::path &out_dir) {
    inv.spec.write((out_dir / "config.txt").string());
}

std::string labels_path(const Invocation &inv, const std::string &manifest) {
    auto it = inv.paths.find("labels");
    if (it != inv.paths.end()) return it->second;
    return (fs::path(manifest).parent_path() / "labels.txt").string();
}

struct LoadedManifest {
    std::vector<std::string> labels;
    std::vector<SubjectRecord> records;
};

LoadedManifest load_inputs(const Invocation &inv) {
    LoadedManifest loaded;
    const std::string &manifest = require_path(inv, "manifest");
    loaded.labels = load_labels(labels_path(inv, manifest));
    loaded.records = load_manifest(manifest, loaded.labels);
    return loaded;
}

// Geometry mismatches must surface before any heavy lifting.
void preflight_geometry(const ModelConfig &cfg, const Dataset &data) {
    if (data.size() == 0) return;
    const Volume &v = data.mri.front();
    if (v.h != cfg.dim_h || v.w != cfg.dim_w || v.d != cfg.dim_d)
        throw ConfigError("volume extent " + std::to_string(v.h) + "x" +
                          std::to_string(v.w) + "x" + std::to_string(v.d) +
                          " does not match the configured " + std::to_string(cfg.dim_h) +
                          "x" + std::to_string(cfg.dim_w) + "x" + std::to_string(cfg.dim_d));
}

void copy_split_file(const std::string &split_file, const fs::path &out_dir) {
    fs::path dst = out_dir / "split.csv";
    std::error_code ec;
    if (fs::exists(dst) && fs::equivalent(split_file, dst, ec) && !ec) return;
    fs::copy_file(split_file, dst, fs::copy_options::overwrite_existing, ec);
    if (ec) throw IoError("cannot copy " + split_file + " into " + out_dir.string());
}

int cmd_synth(const Invocation &inv) {
    fs::path out = prepare_out_dir(inv);
    SynthConfig cfg = inv.spec.synth_config();
    auto records = generate_synthetic(cfg, out.string());
    snapshot_config(inv, out);
    std::printf("wrote %zu subjects (%zu volumes) to %s\n", records.size(),
                records.size() * 2, out.string().c_str());
    return kOk;
}

int cmd_split(const Invocation &inv) {
    fs::path out = prepare_out_dir(inv);
    LoadedManifest loaded = load_inputs(inv);
    SplitRatios ratios = inv.spec.split_ratios();
    int64_t candidates = inv.spec.split_candidates();
    uint64_t seed = inv.spec.get_u64("seed", 0);
    SplitAssignment split = propensity_split(loaded.records, ratios, candidates, seed);
    write_split((out / "split.csv").string(), loaded.records, split);
    snapshot_config(inv, out);
    int64_t n = int64_t(loaded.records.size());
    std::printf("split %" PRId64 " subjects: train=%" PRId64 " val=%" PRId64
                " test=%" PRId64 " imbalance=%.6f candidate=%" PRId64 "\n",
                n, int64_t(split.achieved_train * double(n) + 0.5),
                int64_t(split.achieved_val * double(n) + 0.5),
                int64_t(split.achieved_test * double(n) + 0.5), split.imbalance,
                split.winner_index);
    return kOk;
}

int cmd_train(const Invocation &inv) {
    fs::path out = prepare_out_dir(inv);
    LoadedManifest loaded = load_inputs(inv);
    const std::string &split_file = require_path(inv, "split-file");
    auto assignment = load_split(split_file);
    ModelConfig mc = inv.spec.model_config();
    TrainConfig tc = inv.spec.train_config();
    if (mc.labels != int64_t(loaded.labels.size()))
        throw ConfigError("config expects " + std::to_string(mc.labels) +
                          " labels but the manifest defines " +
                          std::to_string(loaded.labels.size()));

    Dataset full = load_dataset(loaded.records);
    preflight_geometry(mc, full);
    Dataset train_set = dataset_subset(full, assignment, SplitSet::train);
    Dataset val_set = dataset_subset(full, assignment, SplitSet::val);

    Model model(mc, tc.seed);
    TrainResult result = train(model, train_set, val_set, tc);

    save_checkpoint(model, (out / "model.ckpt").string());
    write_history((out / "history.csv").string(), result.history);
    copy_split_file(split_file, out);
    snapshot_config(inv, out);
    std::printf("trained %" PRId64 " iterations%s; best val bacc %.4f at iteration %" PRId64
                "\n",
                result.iterations_run, result.early_stopped ? " (early stop)" : "",
                result.best_val_bacc, result.best_iteration);
    return kOk;
}

int cmd_eval(const Invocation &inv) {
    fs::path out = prepare_out_dir(inv);
    LoadedManifest loaded = load_inputs(inv);
    Model model = load_checkpoint(require_path(inv, "checkpoint"));

    std::vector<SubjectRecord> records = loaded.records;
    auto split_name = inv.paths.find("split");
    auto split_file = inv.paths.find("split-file");
    if (split_name != inv.paths.end()) {
        if (split_file == inv.paths.end())
            throw UsageError("--split needs --split-file with the assignment");
        SplitSet which;
        if (split_name->second == "train") which = SplitSet::train;
        else if (split_name->second == "val") which = SplitSet::val;
        else if (split_name->second == "test") which = SplitSet::test;
        else
            throw UsageError("--split must be train, val, or test");
        auto assignment = load_split(split_file->second);
        std::vector<SubjectRecord> subset;
        for (const auto &r : records) {
            auto it = assignment.find(r.id);
            if (it == assignment.end())
                throw ContractError("subject " + r.id + " missing from the split");
            if (it->second == which) subset.push_back(r);
        }
        records = std::move(subset);
    }
    if (records.empty()) throw ConfigError("no subjects selected for evaluation");
    if (model.config().labels != int64_t(loaded.labels.size()))
        throw ConfigError("checkpoint expects " + std::to_string(model.config().labels) +
                          " labels but the manifest defines " +
                          std::to_string(loaded.labels.size()));

    Dataset data = load_dataset(records);
    preflight_geometry(model.config(), data);
    auto probs = predict_probabilities(model, data);
    MetricsReport report = compute_metrics(data.labels, probs);
    if (inv.switches.count("fairness")) {
        report.groups = fairness_report(data.records, data.labels, probs, {65, 70, 75, 80},
                                        loaded.labels);
    }
    write_metrics((out / "metrics.txt").string(), report, loaded.labels);
    snapshot_config(inv, out);
    std::printf("evaluated %" PRId64 " subjects: bacc=%.4f", report.n, report.bacc);
    if (report.has_auc) std::printf(" auc=%.4f", report.auc);
    std::printf(" macro_f1=%.4f\n", report.macro_f1);
    return kOk;
}

int cmd_ablate(const Invocation &inv) {
    fs::path out = prepare_out_dir(inv);
    LoadedManifest loaded = load_inputs(inv);
    const std::string &split_file = require_path(inv, "split-file");
    auto assignment = load_split(split_file);
    std::string axis_name = inv.spec.get_string("axis", "");
    if (axis_name.empty()) throw UsageError("missing required flag --axis");
    AblationAxis axis = parse_ablation_axis(axis_name);
    int64_t k_seeds = inv.spec.get_int("ablation_seeds", 3);

    ModelConfig mc = inv.spec.model_config();
    TrainConfig tc = inv.spec.train_config();
    Dataset full = load_dataset(loaded.records);
    preflight_geometry(mc, full);
    Dataset train_set = dataset_subset(full, assignment, SplitSet::train);
    Dataset val_set = dataset_subset(full, assignment, SplitSet::val);
    Dataset test_set = dataset_subset(full, assignment, SplitSet::test);

    auto rows = run_ablation(mc, tc, train_set, val_set, test_set, axis, k_seeds);
    write_ablation_csv((out / "ablation.csv").string(), rows);
    copy_split_file(split_file, out);
    snapshot_config(inv, out);
    std::printf("ablation axis %s: %zu variants x %" PRId64 " seeds\n", axis_name.c_str(),
                rows.size(), k_seeds);
    return kOk;
}

}  // namespace

int cli_main(const std::vector<std::string> &args) {
    try {
        Invocation inv = parse_args(args);
        if (inv.switches.count("help")) {
            std::fputs(kUsage, stdout);
            return kOk;
        }
        if (inv.command == "synth") return cmd_synth(inv);
        if (inv.command == "split") return cmd_split(inv);
        if (inv.command == "train") return cmd_train(inv);
        if (inv.command == "eval") return cmd_eval(inv);
        return cmd_ablate(inv);
    } catch (const UsageError &e) {
        std::fprintf(stderr, "usage error: %s\n\n%s", e.what(), kUsage);
        return kUsageError;
    } catch (const Error &e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUserError;
    } catch (const std::exception &e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return kInternalError;
    }
}

}  // namespace dmvt
