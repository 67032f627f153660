#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "invdes/error.hpp"
#include "invdes/grf.hpp"

namespace invdes {

/// Full pipeline configuration. Two built-in profiles:
///   desk     - 64x64 images / 2x2 latents with reduced budgets (drives CI)
///   paper-i  - 96x96 / 3x3 with paper-scale budgets
///   paper-ii - 64x64 / 2x2 with paper-scale budgets
/// A config file overrides individual keys on top of the profile.
struct PipelineConfig {
    std::string profile = "desk";
    std::string out_dir = "out";  // not part of the config hash
    std::uint64_t master_seed = 42;

    // dataset geometry
    int image_side = 64;
    int latent_side = 2;

    // grf-synth
    int grf_count = 2000;
    double grf_vf_min = 0.06;
    double grf_vf_max = 0.94;
    std::vector<double> grf_correlation_lengths = {0.4, 1.0, 2.0, 4.0, 8.0};

    // gan
    int gan_steps = 2000;
    int gan_batch = 64;
    double gan_lr = 2e-4;
    double gan_adam_beta1 = 0.5;
    double gan_collapse_weight = 0.1;
    double gan_style_weight = 0.1;
    double gan_collapse_tau = 0.1;
    int gan_style_layer = 2;
    int gan_checkpoint_every = 500;

    // pair dataset (red path)
    int pair_count = 5000;

    // mdn (green path)
    int mdn_components = 40;
    int mdn_batch = 128;
    double mdn_lr = 1e-3;
    int mdn_patience = 50;
    double mdn_val_fraction = 0.1;
    int mdn_max_epochs = 400;

    // baselines
    int direct_side = 16;  // training resolution of the direct-pixel baseline
    int direct_max_epochs = 60;
    int direct_max_output_dim = 4096;
    int bo_init = 50;
    int bo_iterations = 100;
    int bo_candidate_pool = 1024;

    // evaluation protocol
    std::vector<double> targets = {0.55, 0.60, 0.65, 0.70, 0.75};
    int eval_samples = 30;

    GrfRanges grf_ranges() const {
        GrfRanges r;
        r.image_side = image_side;
        r.vf_min = grf_vf_min;
        r.vf_max = grf_vf_max;
        r.correlation_lengths = grf_correlation_lengths;
        return r;
    }

    std::string dataset_id() const {
        return std::to_string(image_side) + "x" + std::to_string(image_side) + "-z" +
               std::to_string(latent_side) + "x" + std::to_string(latent_side);
    }

    void validate() const;
};

/// Profile defaults, before file/flag overrides.
PipelineConfig profile_config(const std::string& profile);

/// Applies "key = value" lines from a plain-text file on top of `base`.
PipelineConfig load_config_file(const std::string& path, PipelineConfig base);

/// Sets a single key (same names as the config file). Throws on unknown keys.
void set_config_key(PipelineConfig& cfg, const std::string& key, const std::string& value);

/// Canonical serialization of every semantically relevant field (excludes
/// out_dir and the profile label). The config hash is FNV-1a64 over it.
std::string canonical_config(const PipelineConfig& cfg);
std::string config_hash(const PipelineConfig& cfg);

}  // namespace invdes
