#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmvt/errors.hpp"

namespace dmvt {

enum class Sex { female, male };

struct SubjectRecord {
    std::string id;
    double age = 0.0;       // years, must lie in (0, 120)
    Sex sex = Sex::female;
    int64_t diagnosis = 0;  // index into the labels list
    std::string mri_path;   // resolved to the manifest's directory on load
    std::string pet_path;
};

// Labels file: one label per line, index = line number (0-based).
std::vector<std::string> load_labels(const std::string &path);
void write_labels(const std::string &path, const std::vector<std::string> &labels);

// Manifest CSV with header `id,age,sex,diagnosis,mri_path,pet_path`; sex is
// F or M; diagnosis is a label string. Relative volume paths are resolved
// against the manifest's directory and must exist. ParseError messages carry
// 1-based line numbers.
std::vector<SubjectRecord> load_manifest(const std::string &path,
                                         const std::vector<std::string> &labels);

// Writes records as-is; paths are stored verbatim. Fields may not contain
// commas or newlines.
void write_manifest(const std::string &path, const std::vector<SubjectRecord> &records,
                    const std::vector<std::string> &labels);

}  // namespace dmvt
