#include "invdes/evalharness.hpp"

#include <chrono>
#include <cmath>

#include "invdes/csv.hpp"

namespace invdes {

double rep(double y_hat, double y) {
    if (y <= 0.0) throw ConfigError("rep: target property must be positive");
    return std::abs(y_hat - y) / y * 100.0;
}

EvalResult evaluate_method(InverseMethod& method, const std::vector<double>& targets,
                           int n_samples, const Simulator& simulator, std::uint64_t seed,
                           const std::string& dataset_id) {
    if (targets.empty() || n_samples < 1) throw ConfigError("evaluate_method: bad protocol");
    EvalResult result;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        const double target = targets[t];
        Rng rng(derive_seed(seed, "eval-target", t));

        const int want = method.single_candidate() ? 1 : n_samples;
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<Microstructure> cands = method.candidates(target, want, rng);
        const auto t1 = std::chrono::steady_clock::now();
        if (cands.empty()) throw NumericError("evaluate_method: no valid candidate for target " +
                                              format_double(target));

        // the simulator runs outside the timer
        std::vector<double> reps;
        reps.reserve(cands.size());
        double best_rep = std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < cands.size(); ++i) {
            const double r = rep(simulator(cands[i]), target);
            reps.push_back(r);
            if (r < best_rep) {
                best_rep = r;
                best_i = i;
            }
        }

        RepRecord rec;
        rec.method = method.name();
        rec.dataset = dataset_id;
        rec.target = target;
        rec.n = static_cast<int>(cands.size());
        rec.min_rep_pct = best_rep;
        if (!method.single_candidate() && reps.size() > 1) {
            double m = 0.0;
            for (double r : reps) m += r;
            m /= static_cast<double>(reps.size());
            double var = 0.0;
            for (double r : reps) var += (r - m) * (r - m);
            var /= static_cast<double>(reps.size());  // population formula
            rec.avg_rep_pct = m;
            rec.std_rep_pct = std::sqrt(var);
        }
        rec.runtime_s = method.external_runtime(target).value_or(
            std::chrono::duration<double>(t1 - t0).count());
        result.records.push_back(std::move(rec));
        result.best_candidates.push_back(cands[best_i]);
    }
    return result;
}

void export_report(const std::string& dir, const std::vector<RepRecord>& records) {
    if (records.empty()) throw ConfigError("export_report: no records");
    const std::vector<std::string> cols = {"method",      "dataset",     "target",
                                           "n",           "min_rep_pct", "avg_rep_pct",
                                           "std_rep_pct", "runtime_s"};
    CsvWriter full(dir + "/report.csv", cols);
    CsvWriter noruntime(dir + "/report_rep.csv",
                        {cols.begin(), cols.end() - 1});
    for (const auto& r : records) {
        std::vector<std::string> row = {
            r.method,
            r.dataset,
            format_double(r.target),
            std::to_string(r.n),
            format_double(r.min_rep_pct),
            r.avg_rep_pct ? format_double(*r.avg_rep_pct) : "NA",
            r.std_rep_pct ? format_double(*r.std_rep_pct) : "NA",
        };
        noruntime.row(row);
        row.push_back(format_double(r.runtime_s));
        full.row(row);
    }
}

void export_min_rep_grid(const std::string& path, const std::vector<Microstructure>& best) {
    write_pgm_grid(path, best);
}

}  // namespace invdes
