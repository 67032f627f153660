#pragma once

#include <memory>
#include <string>

#include "invdes/config.hpp"
#include "invdes/evalharness.hpp"
#include "invdes/gan.hpp"
#include "invdes/mdn.hpp"
#include "invdes/pca.hpp"

namespace invdes {

// Pipeline stages (Fig-1 wiring). Each stage reads only the artifacts of the
// stages it declares as prerequisites and writes only its own directory under
// out_dir; every artifact directory carries a stage.meta with the config hash
// and master seed. A missing or stale prerequisite raises
// MissingArtifactError naming the stage to run.

void run_gen_grf(const PipelineConfig& cfg);
void run_train_gan(const PipelineConfig& cfg);
void run_build_pairs(const PipelineConfig& cfg);
void run_train_mdn(const PipelineConfig& cfg);
void run_invert(const PipelineConfig& cfg, double target, int n);
void run_baseline_pca(const PipelineConfig& cfg);
void run_baseline_direct(const PipelineConfig& cfg);
void run_baseline_bo(const PipelineConfig& cfg);
void run_evaluate(const PipelineConfig& cfg);
void run_simulate(const PipelineConfig& cfg, const std::string& manifest_in,
                  const std::string& csv_out);

/// Dispatches a subcommand by name and maps errors to exit codes:
/// 0 success, 2 config error, 3 missing prerequisite, 4 numerical failure.
int run(const std::string& subcommand, const PipelineConfig& cfg, double target = -1.0,
        int n = -1, const std::string& in_path = "", const std::string& out_path = "");

// ---------------------------------------------------------------------------
// Model loading + method adapters (shared by `evaluate` and the tests)
// ---------------------------------------------------------------------------

GanModel<float> load_gan(const PipelineConfig& cfg);
MdnNet<float> load_mdn(const PipelineConfig& cfg);

/// Proposed method: MDN proposes latents, the generator renders them.
class ProposedMethod : public InverseMethod {
public:
    ProposedMethod(MdnNet<float> mdn, GeneratorNet<float> generator)
        : mdn_(std::move(mdn)), generator_(std::move(generator)) {}
    std::string name() const override { return "gan-mdn"; }
    std::vector<Microstructure> candidates(double target, int n, Rng& rng) override;

private:
    MdnNet<float> mdn_;
    GeneratorNet<float> generator_;
};

/// PCA-MDN baseline: MDN proposes principal-component coefficients, the PCA
/// inverse transform renders them (binarized by sign).
class PcaMdnMethod : public InverseMethod {
public:
    PcaMdnMethod(MdnNet<float> mdn, PcaModel pca, int image_side)
        : mdn_(std::move(mdn)), pca_(std::move(pca)), image_side_(image_side) {}
    std::string name() const override { return "pca-mdn"; }
    std::vector<Microstructure> candidates(double target, int n, Rng& rng) override;

private:
    MdnNet<float> mdn_;
    PcaModel pca_;
    int image_side_;
};

/// Direct MDN baseline: MDN proposes pixel vectors at its training
/// resolution; nearest-neighbor upsampling restores the dataset resolution.
class DirectMdnMethod : public InverseMethod {
public:
    DirectMdnMethod(MdnNet<float> mdn, int trained_side, int image_side)
        : mdn_(std::move(mdn)), trained_side_(trained_side), image_side_(image_side) {}
    std::string name() const override { return "direct-mdn"; }
    std::vector<Microstructure> candidates(double target, int n, Rng& rng) override;

private:
    MdnNet<float> mdn_;
    int trained_side_;
    int image_side_;
};

/// Replays candidates produced by an earlier stage (the BO baseline), with
/// the runtime that stage measured.
class PrecomputedMethod : public InverseMethod {
public:
    struct Entry {
        double target = 0.0;
        Microstructure image;
        double runtime_s = 0.0;
    };
    PrecomputedMethod(std::string name, std::vector<Entry> entries)
        : name_(std::move(name)), entries_(std::move(entries)) {}
    std::string name() const override { return name_; }
    bool single_candidate() const override { return true; }
    std::vector<Microstructure> candidates(double target, int n, Rng& rng) override;
    std::optional<double> external_runtime(double target) const override;

private:
    std::string name_;
    std::vector<Entry> entries_;
};

/// Block-average downsampling to a divisor resolution, re-binarized by sign.
Microstructure downsample_binary(const Microstructure& m, int new_side);

/// Nearest-neighbor upsampling by an integer factor.
Microstructure upsample_nearest(const Microstructure& m, int new_side);

}  // namespace invdes
