#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "invdes/microstructure.hpp"
#include "invdes/rng.hpp"

namespace invdes {

/// Residual error percentage: |y_hat - y| / y * 100.
double rep(double y_hat, double y);

/// One row of the per-target evaluation table. avg/std are absent when only
/// one candidate exists (they are reported as "NA").
struct RepRecord {
    std::string method;
    std::string dataset;
    double target = 0.0;
    int n = 0;
    double min_rep_pct = 0.0;
    std::optional<double> avg_rep_pct;
    std::optional<double> std_rep_pct;
    double runtime_s = 0.0;
};

/// An inverse-design method under evaluation. candidates() covers only the
/// inverse-generation phase (sampling + rendering); the harness simulates the
/// property afterwards, outside the method's timer.
class InverseMethod {
public:
    virtual ~InverseMethod() = default;
    virtual std::string name() const = 0;
    virtual std::vector<Microstructure> candidates(double target, int n, Rng& rng) = 0;
    /// True for methods that inherently produce a single candidate (BO).
    virtual bool single_candidate() const { return false; }
    /// Runtime measured elsewhere (for stage artifacts replayed at evaluation
    /// time); when absent the harness times candidates() itself.
    virtual std::optional<double> external_runtime(double /*target*/) const { return std::nullopt; }
};

using Simulator = std::function<double(const Microstructure&)>;

struct EvalResult {
    std::vector<RepRecord> records;
    std::vector<Microstructure> best_candidates;  // min-REP candidate per target
};

/// Runs the per-target protocol: draw n_samples candidates, render, simulate,
/// and reduce to REP statistics (population formula). Wall-clock runtime
/// covers candidate generation only; the simulator runs outside the timer.
EvalResult evaluate_method(InverseMethod& method, const std::vector<double>& targets,
                           int n_samples, const Simulator& simulator, std::uint64_t seed,
                           const std::string& dataset_id);

/// Writes report.csv (all columns, including measured runtime_s) plus
/// report_rep.csv, the runtime-free projection used for byte-identity
/// checks across reruns.
void export_report(const std::string& dir, const std::vector<RepRecord>& records);

/// Writes the min-REP candidate per target as one PGM strip.
void export_min_rep_grid(const std::string& path, const std::vector<Microstructure>& best);

}  // namespace invdes
