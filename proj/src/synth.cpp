#include "dmvt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dmvt/volume.hpp"

namespace dmvt {

namespace {

namespace fs = std::filesystem;

constexpr double kBaseIntensity = 0.35;
// Template streams live far above the per-subject fork indices.
constexpr uint64_t kTemplateStreamBase = 1ull << 40;

// Sum of three Gaussian bumps with random centers and widths, normalized so
// the peak value is exactly 1.
std::vector<double> bump_field(int64_t h, int64_t w, int64_t d, Rng &rng) {
    struct Bump {
        double ci, cj, ck, inv2s2, amp;
    };
    std::vector<Bump> bumps;
    for (int b = 0; b < 3; ++b) {
        double ci = rng.uniform(0.15, 0.85) * double(h - 1);
        double cj = rng.uniform(0.15, 0.85) * double(w - 1);
        double ck = rng.uniform(0.15, 0.85) * double(d - 1);
        double sigma = rng.uniform(0.10, 0.22) * double(std::min({h, w, d}));
        double amp = rng.uniform(0.6, 1.0);
        bumps.push_back({ci, cj, ck, 1.0 / (2.0 * sigma * sigma), amp});
    }
    std::vector<double> field(size_t(h * w * d), 0.0);
    size_t idx = 0;
    double peak = 0.0;
    for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
            for (int64_t k = 0; k < d; ++k, ++idx) {
                double v = 0.0;
                for (const Bump &b : bumps) {
                    double di = double(i) - b.ci, dj = double(j) - b.cj, dk = double(k) - b.ck;
                    v += b.amp * std::exp(-(di * di + dj * dj + dk * dk) * b.inv2s2);
                }
                field[idx] = v;
                peak = std::max(peak, v);
            }
        }
    }
    for (double &v : field) v /= peak;
    return field;
}

double pick(const std::vector<double> &values, size_t c, double fallback) {
    return values.empty() ? fallback : values[c];
}

}  // namespace

void SynthConfig::validate() const {
    if (n_subjects < 1) throw ConfigError("n_subjects must be >= 1");
    if (dim_h < 2 || dim_w < 2 || dim_d < 2) throw ConfigError("dims must be >= 2");
    if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
    if (shared_signal_strength < 0 || unique_m_strength < 0 || unique_p_strength < 0) {
        throw ConfigError("signal strengths must be >= 0");
    }
    if (noise_sigma < 0) throw ConfigError("noise_sigma must be >= 0");
    for (const auto *v : {&age_means, &age_sigmas, &female_rates}) {
        if (!v->empty() && int64_t(v->size()) != n_classes) {
            throw ConfigError("per-class demographic lists must have n_classes entries");
        }
    }
    for (double r : female_rates) {
        if (r < 0.0 || r > 1.0) throw ConfigError("female_rates entries must lie in [0,1]");
    }
}

std::vector<ClassTemplates> make_templates(const SynthConfig &cfg) {
    cfg.validate();
    Rng root(cfg.seed);
    std::vector<ClassTemplates> out;
    for (int64_t c = 0; c < cfg.n_classes; ++c) {
        uint64_t base = kTemplateStreamBase + uint64_t(c) * 3;
        ClassTemplates t;
        Rng rs = root.fork(base);
        t.shared = bump_field(cfg.dim_h, cfg.dim_w, cfg.dim_d, rs);
        Rng rm = root.fork(base + 1);
        t.unique_m = bump_field(cfg.dim_h, cfg.dim_w, cfg.dim_d, rm);
        Rng rp = root.fork(base + 2);
        t.unique_p = bump_field(cfg.dim_h, cfg.dim_w, cfg.dim_d, rp);
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<SubjectRecord> generate_synthetic(const SynthConfig &cfg,
                                              const std::string &out_dir) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());

    std::vector<ClassTemplates> templates = make_templates(cfg);
    std::vector<std::string> labels;
    for (int64_t c = 0; c < cfg.n_classes; ++c) labels.push_back("class" + std::to_string(c));

    Rng root(cfg.seed);
    std::vector<SubjectRecord> records;
    std::vector<SubjectRecord> relative;  // what the CSV stores
    const size_t numel = size_t(cfg.dim_h * cfg.dim_w * cfg.dim_d);

    for (int64_t i = 0; i < cfg.n_subjects; ++i) {
        Rng rng = root.fork(uint64_t(i));
        size_t c = size_t(rng.uniform_u64(uint64_t(cfg.n_classes)));

        SubjectRecord r;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "subj%04lld", static_cast<long long>(i));
        r.id = buf;
        double mean = pick(cfg.age_means, c, 68.0 + 4.0 * double(c));
        double sigma = pick(cfg.age_sigmas, c, 5.0);
        r.age = std::clamp(rng.normal(mean, sigma), 1.0, 119.0);
        r.sex = rng.uniform() < pick(cfg.female_rates, c, 0.5) ? Sex::female : Sex::male;
        r.diagnosis = int64_t(c);

        const ClassTemplates &t = templates[c];
        Volume mri = Volume::filled(cfg.dim_h, cfg.dim_w, cfg.dim_d, 0.0f);
        for (size_t v = 0; v < numel; ++v) {
            double val = kBaseIntensity + cfg.unique_m_strength * t.unique_m[v] +
                         cfg.shared_signal_strength * t.shared[v] +
                         rng.normal(0.0, cfg.noise_sigma);
            mri.voxels[v] = static_cast<float>(std::clamp(val, 0.0, 1.0));
        }
        Volume pet = Volume::filled(cfg.dim_h, cfg.dim_w, cfg.dim_d, 0.0f);
        for (size_t v = 0; v < numel; ++v) {
            double val = kBaseIntensity + cfg.unique_p_strength * t.unique_p[v] +
                         cfg.shared_signal_strength * t.shared[v] +
                         rng.normal(0.0, cfg.noise_sigma);
            pet.voxels[v] = static_cast<float>(std::clamp(val, 0.0, 1.0));
        }

        std::snprintf(buf, sizeof(buf), "mri_%04lld.dmvol", static_cast<long long>(i));
        std::string mri_name = buf;
        std::snprintf(buf, sizeof(buf), "pet_%04lld.dmvol", static_cast<long long>(i));
        std::string pet_name = buf;
        save_volume(mri, (fs::path(out_dir) / mri_name).string());
        save_volume(pet, (fs::path(out_dir) / pet_name).string());

        SubjectRecord rel = r;
        rel.mri_path = mri_name;
        rel.pet_path = pet_name;
        relative.push_back(rel);
        r.mri_path = (fs::path(out_dir) / mri_name).string();
        r.pet_path = (fs::path(out_dir) / pet_name).string();
        records.push_back(std::move(r));
    }

    write_labels((fs::path(out_dir) / "labels.txt").string(), labels);
    write_manifest((fs::path(out_dir) / "manifest.csv").string(), relative, labels);
    return records;
}

}  // namespace dmvt
