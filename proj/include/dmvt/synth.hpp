#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmvt/errors.hpp"
#include "dmvt/manifest.hpp"
#include "dmvt/rng.hpp"

namespace dmvt {

// Paired-volume generator: each class carries three smooth spatial signal
// templates — one shared across modalities and one unique to each — so class
// information can be placed selectively in the shared or unique components.
struct SynthConfig {
    int64_t n_subjects = 100;
    int64_t dim_h = 16, dim_w = 16, dim_d = 16;
    double shared_signal_strength = 0.25;
    double unique_m_strength = 0.25;
    double unique_p_strength = 0.25;
    double noise_sigma = 0.05;
    int64_t n_classes = 2;
    uint64_t seed = 0;

    // Per-class demographics; empty vectors use the defaults (age mean
    // 68 + 4*class, sigma 5, female rate 0.5). A deliberately confounded
    // dataset sets these per class.
    std::vector<double> age_means;
    std::vector<double> age_sigmas;
    std::vector<double> female_rates;

    void validate() const;  // ConfigError naming the offending field
};

// Per-class signal templates on the configured grid, each normalized to peak
// 1; sums of three seeded Gaussian bumps. Deterministic in (seed, dims,
// n_classes) only.
struct ClassTemplates {
    std::vector<double> shared;    // dim_h*dim_w*dim_d, row-major
    std::vector<double> unique_m;
    std::vector<double> unique_p;
};

std::vector<ClassTemplates> make_templates(const SynthConfig &cfg);

// Writes mri_NNNN.dmvol / pet_NNNN.dmvol pairs, labels.txt, and manifest.csv
// under out_dir (created if needed); the CSV stores relative file names.
// Returns the records with paths resolved to out_dir. Subject i draws from
// Rng(seed).fork(i), so output is byte-reproducible for a given config.
std::vector<SubjectRecord> generate_synthetic(const SynthConfig &cfg, const std::string &out_dir);

}  // namespace dmvt
