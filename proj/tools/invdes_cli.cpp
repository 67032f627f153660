// invdes: inverse microstructure design pipeline.
//
// Subcommands wire the two data paths end to end: gen-grf -> train-gan ->
// build-pairs -> train-mdn -> invert, with baseline-pca / baseline-direct /
// baseline-bo and evaluate producing the comparison report.

#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "invdes/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"inverse microstructure design pipeline"};
    app.require_subcommand(1);

    std::string config_path, profile = "desk", out_dir;
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config_path, "key = value configuration file");
    app.add_option("--profile", profile, "built-in profile: desk, paper-i, paper-ii");
    app.add_option("--seed", seed, "master seed override");
    app.add_option("--out", out_dir, "output directory (default: out)");

    double target = -1.0;
    int n = 30;
    std::string sim_in, sim_out;

    const char* stages[] = {"gen-grf",      "train-gan",       "build-pairs",
                            "train-mdn",    "baseline-pca",    "baseline-direct",
                            "baseline-bo",  "evaluate",        "all"};
    const char* descs[] = {"synthesize the GRF training images",
                           "train the adversarial image model",
                           "build the (z, x, y) pair dataset",
                           "train the inverse mixture model",
                           "train the PCA baseline",
                           "train the direct pixel baseline",
                           "run the Bayesian-optimization baseline",
                           "evaluate every method and write the report",
                           "run the full pipeline in order"};
    for (int i = 0; i < 9; ++i) app.add_subcommand(stages[i], descs[i])->fallthrough();

    auto* invert = app.add_subcommand("invert", "sample candidates for one target property");
    invert->fallthrough();
    invert->add_option("--target", target, "target property value")->required();
    invert->add_option("--n", n, "number of candidates (default 30)");

    auto* simulate = app.add_subcommand("simulate", "append a y column to an image manifest CSV");
    simulate->fallthrough();
    simulate->add_option("--in", sim_in, "input manifest CSV with a file column")->required();
    simulate->add_option("--out-csv", sim_out, "output CSV path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        invdes::PipelineConfig cfg = invdes::profile_config(profile);
        if (!config_path.empty()) cfg = invdes::load_config_file(config_path, cfg);
        if (seed) cfg.master_seed = *seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        cfg.validate();
        const std::string sub = app.get_subcommands().front()->get_name();
        return invdes::run(sub, cfg, target, n, sim_in, sim_out);
    } catch (const invdes::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
