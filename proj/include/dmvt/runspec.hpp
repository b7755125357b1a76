#pragma once

#include <map>
#include <string>
#include <vector>

#include "dmvt/split.hpp"
#include "dmvt/synth.hpp"
#include "dmvt/train.hpp"

namespace dmvt {

// Flat `key = value` experiment configuration with `#` comments. Every key
// must belong to the fixed schema; file values are overridden by later set()
// calls (command-line flags).
class RunSpec {
  public:
    RunSpec() = default;

    static RunSpec from_file(const std::string &path);  // ParseError with line numbers
    static bool known_key(const std::string &key);
    static const std::vector<std::string> &schema();

    void set(const std::string &key, const std::string &value);  // ConfigError on junk keys
    bool has(const std::string &key) const;

    std::string get_string(const std::string &key, const std::string &fallback) const;
    int64_t get_int(const std::string &key, int64_t fallback) const;
    uint64_t get_u64(const std::string &key, uint64_t fallback) const;
    double get_double(const std::string &key, double fallback) const;
    bool get_bool(const std::string &key, bool fallback) const;

    // Resolved, validated configurations.
    ModelConfig model_config() const;
    TrainConfig train_config() const;
    SynthConfig synth_config() const;
    SplitRatios split_ratios() const;
    int64_t split_candidates() const;  // default 1000

    // Snapshot of the resolved values, re-readable by from_file.
    void write(const std::string &path) const;
    const std::map<std::string, std::string> &values() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
};

// "M", "P+MP", "M+P+MP", ... -> branch flags (inverse of BranchSet::label);
// ConfigError on junk.
BranchSet parse_branches(const std::string &text);

}  // namespace dmvt
