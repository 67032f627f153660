#include "invdes/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "invdes/csv.hpp"
#include "invdes/gp.hpp"
#include "invdes/property.hpp"

namespace fs = std::filesystem;

namespace invdes {

namespace {

std::string stage_dir(const PipelineConfig& cfg, const std::string& stage) {
    return cfg.out_dir + "/" + stage;
}

void write_stage_meta(const PipelineConfig& cfg, const std::string& stage) {
    std::ofstream f(stage_dir(cfg, stage) + "/stage.meta");
    f << "stage=" << stage << "\n"
      << "config_hash=" << config_hash(cfg) << "\n"
      << "seed=" << cfg.master_seed << "\n";
}

void require_stage(const PipelineConfig& cfg, const std::string& stage) {
    const std::string meta = stage_dir(cfg, stage) + "/stage.meta";
    std::ifstream f(meta);
    if (!f)
        throw MissingArtifactError("missing prerequisite stage '" + stage + "' (run `invdes " +
                                   stage + "` first)");
    std::string line, hash;
    while (std::getline(f, line))
        if (line.rfind("config_hash=", 0) == 0) hash = line.substr(12);
    if (hash != config_hash(cfg))
        throw MissingArtifactError("stage '" + stage + "' was built with a different config (hash " +
                                   hash + " vs " + config_hash(cfg) + "); rerun it");
}

std::string fresh_dir(const PipelineConfig& cfg, const std::string& stage) {
    const std::string dir = stage_dir(cfg, stage);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<std::string> z_header(int m) {
    std::vector<std::string> h;
    for (int i = 0; i < m; ++i) h.push_back("z" + std::to_string(i));
    return h;
}

std::string target_tag(double target) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "t%.4g", target);
    return buf;
}

GanConfig<float> gan_config(const PipelineConfig& cfg) {
    GanConfig<float> g;
    g.latent_side = cfg.latent_side;
    g.image_side = cfg.image_side;
    g.batch = cfg.gan_batch;
    g.steps = cfg.gan_steps;
    g.lr = static_cast<float>(cfg.gan_lr);
    g.adam_beta1 = static_cast<float>(cfg.gan_adam_beta1);
    g.collapse_weight = static_cast<float>(cfg.gan_collapse_weight);
    g.style_weight = static_cast<float>(cfg.gan_style_weight);
    g.collapse_tau = static_cast<float>(cfg.gan_collapse_tau);
    g.style_layer = cfg.gan_style_layer;
    g.checkpoint_every = cfg.gan_checkpoint_every;
    g.seed = derive_seed(cfg.master_seed, "train-gan");
    return g;
}

MdnConfig<float> mdn_config(const PipelineConfig& cfg) {
    MdnConfig<float> m;
    m.K = cfg.mdn_components;
    m.M = cfg.latent_side * cfg.latent_side;
    m.batch = cfg.mdn_batch;
    m.lr = static_cast<float>(cfg.mdn_lr);
    m.patience = cfg.mdn_patience;
    m.val_fraction = cfg.mdn_val_fraction;
    m.max_epochs = cfg.mdn_max_epochs;
    m.seed = derive_seed(cfg.master_seed, "train-mdn");
    return m;
}

struct PairData {
    RowMajorMat<float> y;       // [n, 1]
    RowMajorMat<float> z;       // [n, M]
    std::vector<std::string> files;
};

PairData load_pairs(const PipelineConfig& cfg) {
    require_stage(cfg, "pairs");
    CsvTable t = read_csv(stage_dir(cfg, "pairs") + "/pairs.csv");
    const int m_dim = cfg.latent_side * cfg.latent_side;
    const int y_col = t.column("y");
    const int file_col = t.column("file");
    PairData d;
    d.y.resize(static_cast<Index>(t.rows.size()), 1);
    d.z.resize(static_cast<Index>(t.rows.size()), m_dim);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        d.y(static_cast<Index>(r), 0) = std::stof(t.rows[r][static_cast<std::size_t>(y_col)]);
        for (int j = 0; j < m_dim; ++j)
            d.z(static_cast<Index>(r), j) = std::stof(t.rows[r][static_cast<std::size_t>(j)]);
        d.files.push_back(t.rows[r][static_cast<std::size_t>(file_col)]);
    }
    return d;
}

void write_mdn_history(const std::string& path, const std::vector<MdnHistoryRow>& history) {
    CsvWriter w(path, {"epoch", "train_nll", "val_nll"});
    for (const auto& h : history)
        w.row({std::to_string(h.epoch), format_double(h.train_nll), format_double(h.val_nll)});
}

}  // namespace

// ---------------------------------------------------------------------------
// Method adapters
// ---------------------------------------------------------------------------

std::vector<Microstructure> ProposedMethod::candidates(double target, int n, Rng& rng) {
    Tensor<float> y({1, 1}, ArrayX<float>::Constant(1, static_cast<float>(target)));
    MixtureParams<float> params = mdn_.forward(y, /*training=*/false, nullptr);
    std::vector<Microstructure> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Eigen::ArrayXd z = sample(params, 0, rng);
        LatentVec lv;
        lv.side = generator_.latent_side;
        lv.values = z.cast<float>();
        out.push_back(generate(generator_, lv));
    }
    return out;
}

std::vector<Microstructure> PcaMdnMethod::candidates(double target, int n, Rng& rng) {
    Tensor<float> y({1, 1}, ArrayX<float>::Constant(1, static_cast<float>(target)));
    MixtureParams<float> params = mdn_.forward(y, /*training=*/false, nullptr);
    std::vector<Microstructure> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd coeffs = sample(params, 0, rng).matrix();
        Eigen::VectorXd img = pca_inverse(pca_, coeffs);
        Microstructure m;
        m.side = image_side_;
        m.pixels.resize(img.size());
        for (Eigen::Index j = 0; j < img.size(); ++j) m.pixels[j] = img[j] > 0.0 ? 1.0f : -1.0f;
        out.push_back(std::move(m));
    }
    return out;
}

std::vector<Microstructure> DirectMdnMethod::candidates(double target, int n, Rng& rng) {
    Tensor<float> y({1, 1}, ArrayX<float>::Constant(1, static_cast<float>(target)));
    MixtureParams<float> params = mdn_.forward(y, /*training=*/false, nullptr);
    std::vector<Microstructure> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Eigen::ArrayXd px = sample(params, 0, rng);
        Microstructure m;
        m.side = trained_side_;
        m.pixels.resize(px.size());
        for (Eigen::Index j = 0; j < px.size(); ++j) m.pixels[j] = px[j] > 0.0 ? 1.0f : -1.0f;
        out.push_back(trained_side_ == image_side_ ? std::move(m)
                                                   : upsample_nearest(m, image_side_));
    }
    return out;
}

std::vector<Microstructure> PrecomputedMethod::candidates(double target, int /*n*/, Rng& /*rng*/) {
    for (const auto& e : entries_)
        if (std::abs(e.target - target) < 1e-9) return {e.image};
    throw MissingArtifactError(name_ + ": no stored candidate for target " + format_double(target));
}

std::optional<double> PrecomputedMethod::external_runtime(double target) const {
    for (const auto& e : entries_)
        if (std::abs(e.target - target) < 1e-9) return e.runtime_s;
    return std::nullopt;
}

Microstructure downsample_binary(const Microstructure& m, int new_side) {
    if (m.side % new_side != 0) throw ShapeError("downsample: side not divisible");
    const int f = m.side / new_side;
    Microstructure out;
    out.side = new_side;
    out.pixels.resize(static_cast<long>(new_side) * new_side);
    for (int y = 0; y < new_side; ++y) {
        for (int x = 0; x < new_side; ++x) {
            double acc = 0.0;
            for (int dy = 0; dy < f; ++dy)
                for (int dx = 0; dx < f; ++dx)
                    acc += m.pixels[(y * f + dy) * m.side + (x * f + dx)];
            out.pixels[y * new_side + x] = acc > 0.0 ? 1.0f : -1.0f;
        }
    }
    return out;
}

Microstructure upsample_nearest(const Microstructure& m, int new_side) {
    if (new_side % m.side != 0) throw ShapeError("upsample: side not divisible");
    const int f = new_side / m.side;
    Microstructure out;
    out.side = new_side;
    out.pixels.resize(static_cast<long>(new_side) * new_side);
    for (int y = 0; y < new_side; ++y)
        for (int x = 0; x < new_side; ++x)
            out.pixels[y * new_side + x] = m.pixels[(y / f) * m.side + (x / f)];
    return out;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

void run_gen_grf(const PipelineConfig& cfg) {
    cfg.validate();
    const std::string dir = fresh_dir(cfg, "grf");
    fs::create_directories(dir + "/images");
    const auto samples =
        generate_dataset(cfg.grf_count, cfg.grf_ranges(), derive_seed(cfg.master_seed, "gen-grf"));
    CsvWriter manifest(dir + "/manifest.csv", {"id", "seed", "vf", "correlation_length", "file"});
    for (std::size_t i = 0; i < samples.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "images/grf_%05zu.pgm", i);
        write_pgm(dir + "/" + name, samples[i].image);
        manifest.row({std::to_string(i), std::to_string(samples[i].seed),
                      format_double(samples[i].volume_fraction),
                      format_double(samples[i].correlation_length), name});
    }
    write_stage_meta(cfg, "grf");
    std::cout << "[gen-grf] " << samples.size() << " images -> " << dir << "\n";
}

void run_train_gan(const PipelineConfig& cfg) {
    cfg.validate();
    require_stage(cfg, "grf");
    const std::string grf_dir = stage_dir(cfg, "grf");
    CsvTable manifest = read_csv(grf_dir + "/manifest.csv");
    const int file_col = manifest.column("file");
    std::vector<Microstructure> images;
    images.reserve(manifest.rows.size());
    for (const auto& row : manifest.rows)
        images.push_back(read_pgm(grf_dir + "/" + row[static_cast<std::size_t>(file_col)]));

    const std::string dir = fresh_dir(cfg, "gan");
    auto sink = [&](int step, const GanModel<float>& model) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s/checkpoint_%06d.mfck", dir.c_str(), step);
        save_checkpoint(name, model.named_arrays());
    };
    GanTrainResult<float> r = train_gan(images, gan_config(cfg), sink);
    save_checkpoint(dir + "/gan.mfck", r.model.named_arrays());
    CsvWriter hist(dir + "/history.csv", {"step", "loss_d", "loss_g", "loss_g_adv",
                                          "loss_collapse", "loss_style", "minimax_v"});
    for (const auto& h : r.history)
        hist.row({std::to_string(h.step), format_double(h.loss_d), format_double(h.loss_g),
                  format_double(h.loss_g_adv), format_double(h.loss_collapse),
                  format_double(h.loss_style), format_double(h.minimax_v)});
    write_stage_meta(cfg, "gan");
    std::cout << "[train-gan] " << r.history.size() << " steps -> " << dir << "\n";
}

GanModel<float> load_gan(const PipelineConfig& cfg) {
    require_stage(cfg, "gan");
    Rng dummy(0);
    GanModel<float> model;
    model.generator = GeneratorNet<float>::make(cfg.latent_side, dummy);
    model.discriminator = DiscriminatorNet<float>::make(cfg.image_side, dummy);
    model.load_arrays(load_checkpoint(stage_dir(cfg, "gan") + "/gan.mfck"));
    return model;
}

MdnNet<float> load_mdn(const PipelineConfig& cfg) {
    require_stage(cfg, "mdn");
    Rng dummy(0);
    MdnNet<float> net = MdnNet<float>::make(mdn_config(cfg), dummy);
    net.load_arrays(load_checkpoint(stage_dir(cfg, "mdn") + "/mdn.mfck"));
    return net;
}

void run_build_pairs(const PipelineConfig& cfg) {
    cfg.validate();
    GanModel<float> model = load_gan(cfg);
    const std::string dir = fresh_dir(cfg, "pairs");
    fs::create_directories(dir + "/images");
    auto pairs = build_pair_dataset<float>(model.generator, cfg.pair_count,
                                           derive_seed(cfg.master_seed, "build-pairs"),
                                           [](const Microstructure& m) { return absorption(m); },
                                           cfg.gan_batch);
    const int m_dim = cfg.latent_side * cfg.latent_side;
    auto header = z_header(m_dim);
    header.push_back("y");
    header.push_back("file");
    CsvWriter w(dir + "/pairs.csv", header);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "images/pair_%05zu.pgm", i);
        write_pgm(dir + "/" + name, pairs[i].image);
        std::vector<std::string> row;
        for (int j = 0; j < m_dim; ++j)
            row.push_back(format_double(static_cast<double>(pairs[i].z[j])));
        row.push_back(format_double(pairs[i].y));
        row.push_back(name);
        w.row(row);
    }
    write_stage_meta(cfg, "pairs");
    std::cout << "[build-pairs] " << pairs.size() << " pairs -> " << dir << "\n";
}

void run_train_mdn(const PipelineConfig& cfg) {
    cfg.validate();
    PairData d = load_pairs(cfg);
    const std::string dir = fresh_dir(cfg, "mdn");
    MdnTrainResult<float> r = train_mdn(d.y, d.z, mdn_config(cfg));
    save_checkpoint(dir + "/mdn.mfck", r.net.named_arrays());
    write_mdn_history(dir + "/history.csv", r.history);
    write_stage_meta(cfg, "mdn");
    std::cout << "[train-mdn] best val NLL " << r.best_val_nll << " at epoch " << r.best_epoch
              << " -> " << dir << "\n";
}

void run_invert(const PipelineConfig& cfg, double target, int n) {
    cfg.validate();
    if (!(target > 0.0)) throw ConfigError("invert: --target must be positive");
    if (n < 1) throw ConfigError("invert: --n must be >= 1");
    GanModel<float> gan = load_gan(cfg);
    MdnNet<float> mdn = load_mdn(cfg);

    const std::string dir = cfg.out_dir + "/invert/" + target_tag(target);
    fs::remove_all(dir);
    fs::create_directories(dir);

    ProposedMethod method(std::move(mdn), std::move(gan.generator));
    Rng rng(derive_seed(cfg.master_seed, "invert"));
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Microstructure> cands = method.candidates(target, n, rng);
    const auto t1 = std::chrono::steady_clock::now();
    const double runtime = std::chrono::duration<double>(t1 - t0).count();

    auto header = std::vector<std::string>{"index", "y_hat", "rep_pct", "file"};
    CsvWriter w(dir + "/candidates.csv", header);
    for (std::size_t i = 0; i < cands.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "cand_%03zu.pgm", i);
        write_pgm(dir + "/" + name, cands[i]);
        const double y_hat = absorption(cands[i]);
        w.row({std::to_string(i), format_double(y_hat), format_double(rep(y_hat, target)), name});
    }
    std::ofstream meta(dir + "/stage.meta");
    meta << "stage=invert\nconfig_hash=" << config_hash(cfg) << "\nseed=" << cfg.master_seed
         << "\ntarget=" << format_double(target) << "\nruntime_s=" << format_double(runtime)
         << "\n";
    std::cout << "[invert] target " << target << ": " << cands.size() << " candidates in "
              << runtime << " s -> " << dir << "\n";
}

namespace {

struct LoadedImages {
    Eigen::MatrixXd pixels;  // [n, D] in {-1, +1}
    std::vector<double> y;
};

LoadedImages load_pair_images(const PipelineConfig& cfg, int side) {
    PairData d = load_pairs(cfg);
    const std::string dir = stage_dir(cfg, "pairs");
    LoadedImages out;
    out.pixels.resize(d.y.rows(), static_cast<Eigen::Index>(side) * side);
    for (Index i = 0; i < d.y.rows(); ++i) {
        Microstructure m = read_pgm(dir + "/" + d.files[static_cast<std::size_t>(i)]);
        if (m.side != cfg.image_side) throw ShapeError("pairs: stored image side mismatch");
        if (side != cfg.image_side) m = downsample_binary(m, side);
        for (Eigen::Index j = 0; j < m.pixels.size(); ++j)
            out.pixels(i, j) = static_cast<double>(m.pixels[j]);
        out.y.push_back(static_cast<double>(d.y(i, 0)));
    }
    return out;
}

}  // namespace

void run_baseline_pca(const PipelineConfig& cfg) {
    cfg.validate();
    LoadedImages data = load_pair_images(cfg, cfg.image_side);
    const std::string dir = fresh_dir(cfg, "baseline_pca");

    const int m_dim = cfg.latent_side * cfg.latent_side;
    PcaModel pca = pca_fit(data.pixels, m_dim);
    save_checkpoint(dir + "/pca.mfck", pca.named_arrays());

    RowMajorMat<float> y(static_cast<Index>(data.y.size()), 1);
    RowMajorMat<float> coeffs(static_cast<Index>(data.y.size()), m_dim);
    for (Index i = 0; i < y.rows(); ++i) {
        y(i, 0) = static_cast<float>(data.y[static_cast<std::size_t>(i)]);
        Eigen::VectorXd c = pca_transform(pca, data.pixels.row(i).transpose());
        for (int j = 0; j < m_dim; ++j) coeffs(i, j) = static_cast<float>(c[j]);
    }
    MdnConfig<float> mc = mdn_config(cfg);
    mc.seed = derive_seed(cfg.master_seed, "baseline-pca");
    MdnTrainResult<float> r = train_mdn(y, coeffs, mc);
    save_checkpoint(dir + "/mdn.mfck", r.net.named_arrays());
    write_mdn_history(dir + "/history.csv", r.history);
    write_stage_meta(cfg, "baseline_pca");
    std::cout << "[baseline-pca] best val NLL " << r.best_val_nll << " -> " << dir << "\n";
}

void run_baseline_direct(const PipelineConfig& cfg) {
    cfg.validate();
    LoadedImages data = load_pair_images(cfg, cfg.direct_side);
    const std::string dir = fresh_dir(cfg, "baseline_direct");

    const Index n = static_cast<Index>(data.y.size());
    const Index d_dim = data.pixels.cols();
    RowMajorMat<float> y(n, 1);
    RowMajorMat<float> px(n, d_dim);
    for (Index i = 0; i < n; ++i) {
        y(i, 0) = static_cast<float>(data.y[static_cast<std::size_t>(i)]);
        for (Index j = 0; j < d_dim; ++j) px(i, j) = static_cast<float>(data.pixels(i, j));
    }
    MdnConfig<float> mc = mdn_config(cfg);
    mc.M = static_cast<int>(d_dim);  // each pixel is one output dimension
    mc.max_output_dim = cfg.direct_max_output_dim;
    mc.max_epochs = cfg.direct_max_epochs;
    mc.seed = derive_seed(cfg.master_seed, "baseline-direct");
    MdnTrainResult<float> r = train_mdn(y, px, mc);
    save_checkpoint(dir + "/mdn.mfck", r.net.named_arrays());
    write_mdn_history(dir + "/history.csv", r.history);
    write_stage_meta(cfg, "baseline_direct");
    std::cout << "[baseline-direct] best val NLL " << r.best_val_nll << " -> " << dir << "\n";
}

void run_baseline_bo(const PipelineConfig& cfg) {
    cfg.validate();
    GanModel<float> gan = load_gan(cfg);
    const std::string dir = fresh_dir(cfg, "baseline_bo");

    const int m_dim = cfg.latent_side * cfg.latent_side;
    auto header = std::vector<std::string>{"target", "runtime_s", "trace_file", "file"};
    CsvWriter cand(dir + "/candidates.csv", header);

    BoBudget budget{cfg.bo_init, cfg.bo_iterations, cfg.bo_candidate_pool};
    for (std::size_t t = 0; t < cfg.targets.size(); ++t) {
        const double target = cfg.targets[t];
        auto objective = [&](const Eigen::VectorXd& z) {
            LatentVec lv;
            lv.side = cfg.latent_side;
            lv.values = z.cast<float>().array();
            return std::abs(absorption(generate(gan.generator, lv)) - target);
        };
        const auto t0 = std::chrono::steady_clock::now();
        BoResult r = bo_optimize(objective, m_dim, budget,
                                 derive_seed(cfg.master_seed, "baseline-bo", t));
        const auto t1 = std::chrono::steady_clock::now();
        const double runtime = std::chrono::duration<double>(t1 - t0).count();

        const std::string tag = target_tag(target);
        auto trace_header = std::vector<std::string>{"iteration"};
        for (const auto& z : z_header(m_dim)) trace_header.push_back(z);
        trace_header.push_back("objective");
        trace_header.push_back("incumbent");
        CsvWriter trace(dir + "/trace_" + tag + ".csv", trace_header);
        for (const auto& row : r.trace) {
            std::vector<std::string> fields = {std::to_string(row.iteration)};
            for (int j = 0; j < m_dim; ++j) fields.push_back(format_double(row.z[j]));
            fields.push_back(format_double(row.objective));
            fields.push_back(format_double(row.incumbent));
            trace.row(fields);
        }
        LatentVec best;
        best.side = cfg.latent_side;
        best.values = r.best_point.cast<float>().array();
        write_pgm(dir + "/best_" + tag + ".pgm", generate(gan.generator, best));
        cand.row({format_double(target), format_double(runtime), "trace_" + tag + ".csv",
                  "best_" + tag + ".pgm"});
        std::cout << "[baseline-bo] target " << target << ": best |y-t| " << r.best_value
                  << " in " << runtime << " s\n";
    }
    write_stage_meta(cfg, "baseline_bo");
}

void run_evaluate(const PipelineConfig& cfg) {
    cfg.validate();
    GanModel<float> gan = load_gan(cfg);
    MdnNet<float> mdn = load_mdn(cfg);

    require_stage(cfg, "baseline_pca");
    Rng dummy(0);
    MdnConfig<float> pc = mdn_config(cfg);
    MdnNet<float> pca_mdn = MdnNet<float>::make(pc, dummy);
    pca_mdn.load_arrays(load_checkpoint(stage_dir(cfg, "baseline_pca") + "/mdn.mfck"));
    PcaModel pca = PcaModel::from_arrays(load_checkpoint(stage_dir(cfg, "baseline_pca") + "/pca.mfck"));

    require_stage(cfg, "baseline_direct");
    MdnConfig<float> dc = mdn_config(cfg);
    dc.M = cfg.direct_side * cfg.direct_side;
    dc.max_output_dim = cfg.direct_max_output_dim;
    MdnNet<float> direct_mdn = MdnNet<float>::make(dc, dummy);
    direct_mdn.load_arrays(load_checkpoint(stage_dir(cfg, "baseline_direct") + "/mdn.mfck"));

    require_stage(cfg, "baseline_bo");
    std::vector<PrecomputedMethod::Entry> bo_entries;
    {
        const std::string bo_dir = stage_dir(cfg, "baseline_bo");
        CsvTable t = read_csv(bo_dir + "/candidates.csv");
        const int tcol = t.column("target"), rcol = t.column("runtime_s"), fcol = t.column("file");
        for (const auto& row : t.rows) {
            PrecomputedMethod::Entry e;
            e.target = std::stod(row[static_cast<std::size_t>(tcol)]);
            e.runtime_s = std::stod(row[static_cast<std::size_t>(rcol)]);
            e.image = read_pgm(bo_dir + "/" + row[static_cast<std::size_t>(fcol)]);
            bo_entries.push_back(std::move(e));
        }
    }

    const std::string dir = fresh_dir(cfg, "eval");
    Simulator sim = [](const Microstructure& m) { return absorption(m); };

    std::vector<std::unique_ptr<InverseMethod>> methods;
    methods.push_back(std::make_unique<ProposedMethod>(mdn, gan.generator));
    methods.push_back(std::make_unique<PcaMdnMethod>(std::move(pca_mdn), std::move(pca), cfg.image_side));
    methods.push_back(std::make_unique<DirectMdnMethod>(std::move(direct_mdn), cfg.direct_side,
                                                        cfg.image_side));
    methods.push_back(std::make_unique<PrecomputedMethod>("bo", std::move(bo_entries)));

    std::vector<RepRecord> all;
    for (auto& m : methods) {
        EvalResult r = evaluate_method(*m, cfg.targets, cfg.eval_samples, sim,
                                       derive_seed(cfg.master_seed, "evaluate-" + m->name()),
                                       cfg.dataset_id());
        export_min_rep_grid(dir + "/grid_" + m->name() + ".pgm", r.best_candidates);
        all.insert(all.end(), r.records.begin(), r.records.end());
    }
    export_report(dir, all);
    write_stage_meta(cfg, "eval");
    std::cout << "[evaluate] " << all.size() << " records -> " << dir << "/report.csv\n";
}

void run_simulate(const PipelineConfig& cfg, const std::string& manifest_in,
                  const std::string& csv_out) {
    CsvTable t = read_csv(manifest_in);
    const int fcol = t.column("file");
    const fs::path base = fs::path(manifest_in).parent_path();
    auto header = t.header;
    header.push_back("y");
    CsvWriter w(csv_out, header);
    for (const auto& row : t.rows) {
        Microstructure m = read_pgm((base / row[static_cast<std::size_t>(fcol)]).string());
        auto out = row;
        out.push_back(format_double(absorption(m)));
        w.row(out);
    }
    (void)cfg;
    std::cout << "[simulate] " << t.rows.size() << " images -> " << csv_out << "\n";
}

int run(const std::string& subcommand, const PipelineConfig& cfg, double target, int n,
        const std::string& in_path, const std::string& out_path) {
    try {
        if (subcommand == "gen-grf") run_gen_grf(cfg);
        else if (subcommand == "train-gan") run_train_gan(cfg);
        else if (subcommand == "build-pairs") run_build_pairs(cfg);
        else if (subcommand == "train-mdn") run_train_mdn(cfg);
        else if (subcommand == "invert") run_invert(cfg, target, n);
        else if (subcommand == "baseline-pca") run_baseline_pca(cfg);
        else if (subcommand == "baseline-direct") run_baseline_direct(cfg);
        else if (subcommand == "baseline-bo") run_baseline_bo(cfg);
        else if (subcommand == "evaluate") run_evaluate(cfg);
        else if (subcommand == "simulate") run_simulate(cfg, in_path, out_path);
        else if (subcommand == "all") {
            run_gen_grf(cfg);
            run_train_gan(cfg);
            run_build_pairs(cfg);
            run_train_mdn(cfg);
            run_baseline_pca(cfg);
            run_baseline_direct(cfg);
            run_baseline_bo(cfg);
            run_evaluate(cfg);
        } else {
            throw ConfigError("unknown subcommand '" + subcommand + "'");
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const MissingArtifactError& e) {
        std::cerr << "missing prerequisite: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace invdes
