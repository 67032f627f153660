#include "invdes/config.hpp"

#include <fstream>
#include <sstream>

#include "invdes/csv.hpp"
#include "invdes/rng.hpp"

namespace invdes {

void PipelineConfig::validate() const {
    if (latent_side * 32 != image_side)
        throw ConfigError("config: latent_side x 32 must equal image_side");
    if (image_side < 32) throw ConfigError("config: image_side below the architecture minimum");
    if (grf_count < 1 || pair_count < 1) throw ConfigError("config: dataset counts must be >= 1");
    if (!(grf_vf_min > 0.0 && grf_vf_max < 1.0 && grf_vf_min <= grf_vf_max))
        throw ConfigError("config: bad grf volume-fraction range");
    if (grf_correlation_lengths.empty())
        throw ConfigError("config: empty grf correlation-length set");
    for (double c : grf_correlation_lengths)
        if (!(c > 0.0 && c <= image_side / 2.0))
            throw ConfigError("config: correlation length must be in (0, side/2]");
    if (targets.empty()) throw ConfigError("config: empty target list");
    for (double t : targets)
        if (t <= 0.0) throw ConfigError("config: non-positive target property");
    if (eval_samples < 1) throw ConfigError("config: eval_samples must be >= 1");
    if (direct_side < 2 || direct_side > image_side)
        throw ConfigError("config: direct_side must lie in [2, image_side]");
    if (bo_init < 1 || bo_iterations < 0) throw ConfigError("config: bad BO budget");
}

PipelineConfig profile_config(const std::string& profile) {
    PipelineConfig c;
    c.profile = profile;
    if (profile == "desk") {
        return c;  // struct defaults are the desk profile
    }
    if (profile == "paper-i" || profile == "paper-ii") {
        if (profile == "paper-i") {
            c.image_side = 96;
            c.latent_side = 3;
        }
        c.grf_count = 10000;
        c.grf_vf_min = 0.3;
        c.grf_vf_max = 0.7;
        c.grf_correlation_lengths = {2.0, 4.0, 8.0};
        c.gan_steps = 20000;
        c.gan_checkpoint_every = 2000;
        c.pair_count = 10000;
        c.mdn_max_epochs = 2000;
        c.direct_side = c.image_side;
        c.direct_max_epochs = 2000;
        c.direct_max_output_dim = 96 * 96;
        c.bo_init = 250;
        c.bo_iterations = 400;
        return c;
    }
    throw ConfigError("config: unknown profile '" + profile + "' (desk, paper-i, paper-ii)");
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

long to_long(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        long x = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    }
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(to_double(key, item));
    }
    if (out.empty()) throw ConfigError("config: '" + key + "' expects a comma list");
    return out;
}

std::string list_str(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += format_double(v[i]);
    }
    return s;
}

}  // namespace

void set_config_key(PipelineConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "out_dir") cfg.out_dir = value;
    else if (key == "master_seed") cfg.master_seed = static_cast<std::uint64_t>(to_long(key, value));
    else if (key == "image_side") cfg.image_side = static_cast<int>(to_long(key, value));
    else if (key == "latent_side") cfg.latent_side = static_cast<int>(to_long(key, value));
    else if (key == "grf_count") cfg.grf_count = static_cast<int>(to_long(key, value));
    else if (key == "grf_vf_min") cfg.grf_vf_min = to_double(key, value);
    else if (key == "grf_vf_max") cfg.grf_vf_max = to_double(key, value);
    else if (key == "grf_correlation_lengths") cfg.grf_correlation_lengths = to_list(key, value);
    else if (key == "gan_steps") cfg.gan_steps = static_cast<int>(to_long(key, value));
    else if (key == "gan_batch") cfg.gan_batch = static_cast<int>(to_long(key, value));
    else if (key == "gan_lr") cfg.gan_lr = to_double(key, value);
    else if (key == "gan_adam_beta1") cfg.gan_adam_beta1 = to_double(key, value);
    else if (key == "gan_collapse_weight") cfg.gan_collapse_weight = to_double(key, value);
    else if (key == "gan_style_weight") cfg.gan_style_weight = to_double(key, value);
    else if (key == "gan_collapse_tau") cfg.gan_collapse_tau = to_double(key, value);
    else if (key == "gan_style_layer") cfg.gan_style_layer = static_cast<int>(to_long(key, value));
    else if (key == "gan_checkpoint_every") cfg.gan_checkpoint_every = static_cast<int>(to_long(key, value));
    else if (key == "pair_count") cfg.pair_count = static_cast<int>(to_long(key, value));
    else if (key == "mdn_components") cfg.mdn_components = static_cast<int>(to_long(key, value));
    else if (key == "mdn_batch") cfg.mdn_batch = static_cast<int>(to_long(key, value));
    else if (key == "mdn_lr") cfg.mdn_lr = to_double(key, value);
    else if (key == "mdn_patience") cfg.mdn_patience = static_cast<int>(to_long(key, value));
    else if (key == "mdn_val_fraction") cfg.mdn_val_fraction = to_double(key, value);
    else if (key == "mdn_max_epochs") cfg.mdn_max_epochs = static_cast<int>(to_long(key, value));
    else if (key == "direct_side") cfg.direct_side = static_cast<int>(to_long(key, value));
    else if (key == "direct_max_epochs") cfg.direct_max_epochs = static_cast<int>(to_long(key, value));
    else if (key == "direct_max_output_dim") cfg.direct_max_output_dim = static_cast<int>(to_long(key, value));
    else if (key == "bo_init") cfg.bo_init = static_cast<int>(to_long(key, value));
    else if (key == "bo_iterations") cfg.bo_iterations = static_cast<int>(to_long(key, value));
    else if (key == "bo_candidate_pool") cfg.bo_candidate_pool = static_cast<int>(to_long(key, value));
    else if (key == "targets") cfg.targets = to_list(key, value);
    else if (key == "eval_samples") cfg.eval_samples = static_cast<int>(to_long(key, value));
    else throw ConfigError("config: unknown key '" + key + "'");
}

PipelineConfig load_config_file(const std::string& path, PipelineConfig base) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: '" + path + "' line " + std::to_string(lineno) +
                              ": expected key = value");
        set_config_key(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
}

std::string canonical_config(const PipelineConfig& cfg) {
    std::ostringstream s;
    s << "master_seed=" << cfg.master_seed << "\n"
      << "image_side=" << cfg.image_side << "\n"
      << "latent_side=" << cfg.latent_side << "\n"
      << "grf_count=" << cfg.grf_count << "\n"
      << "grf_vf_min=" << format_double(cfg.grf_vf_min) << "\n"
      << "grf_vf_max=" << format_double(cfg.grf_vf_max) << "\n"
      << "grf_correlation_lengths=" << list_str(cfg.grf_correlation_lengths) << "\n"
      << "gan_steps=" << cfg.gan_steps << "\n"
      << "gan_batch=" << cfg.gan_batch << "\n"
      << "gan_lr=" << format_double(cfg.gan_lr) << "\n"
      << "gan_adam_beta1=" << format_double(cfg.gan_adam_beta1) << "\n"
      << "gan_collapse_weight=" << format_double(cfg.gan_collapse_weight) << "\n"
      << "gan_style_weight=" << format_double(cfg.gan_style_weight) << "\n"
      << "gan_collapse_tau=" << format_double(cfg.gan_collapse_tau) << "\n"
      << "gan_style_layer=" << cfg.gan_style_layer << "\n"
      << "gan_checkpoint_every=" << cfg.gan_checkpoint_every << "\n"
      << "pair_count=" << cfg.pair_count << "\n"
      << "mdn_components=" << cfg.mdn_components << "\n"
      << "mdn_batch=" << cfg.mdn_batch << "\n"
      << "mdn_lr=" << format_double(cfg.mdn_lr) << "\n"
      << "mdn_patience=" << cfg.mdn_patience << "\n"
      << "mdn_val_fraction=" << format_double(cfg.mdn_val_fraction) << "\n"
      << "mdn_max_epochs=" << cfg.mdn_max_epochs << "\n"
      << "direct_side=" << cfg.direct_side << "\n"
      << "direct_max_epochs=" << cfg.direct_max_epochs << "\n"
      << "direct_max_output_dim=" << cfg.direct_max_output_dim << "\n"
      << "bo_init=" << cfg.bo_init << "\n"
      << "bo_iterations=" << cfg.bo_iterations << "\n"
      << "bo_candidate_pool=" << cfg.bo_candidate_pool << "\n"
      << "targets=" << list_str(cfg.targets) << "\n"
      << "eval_samples=" << cfg.eval_samples << "\n";
    return s.str();
}

std::string config_hash(const PipelineConfig& cfg) {
    const std::uint64_t h = fnv1a64(canonical_config(cfg));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace invdes
