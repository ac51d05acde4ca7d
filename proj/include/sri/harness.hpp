#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sri/network.hpp"

namespace sri::harness {

// Which annotation regime a simulation exercises. The perfect design hands
// the estimators gold-quality labels; the noisy design corrupts them through
// a grid of two-coder accuracy pairs first.
enum class Design { kPerfect, kNoisy };

// A Monte Carlo study description, read from a flat key = value plan file.
// Grammar: one `key = value` per line, `#` starts a comment, blank lines are
// skipped, keys may appear once. Lists are comma separated. Recognised keys:
//
//   design              perfect | noisy
//   n, d                dataset size and embedding width
//   label_fraction      share of units whose annotations are kept
//   machine_accuracies  list of prediction accuracies, one cell per entry
//   coder_accuracies    list of pairs `a/b` (or `a` for a = b); noisy only
//   replications        Monte Carlo repetitions per cell
//   estimators          subset of sri, naive, ppi, dsl
//   k                   cross-fitting folds for the sri estimator
//   base_seed           root of every stream the study draws from
//   oracle_draws        sample size of the oracle-effect Monte Carlo
//   paper_scale         true sets n = 20000, d = 2048, replications = 200
//   net_trunk, net_head, net_learning_rate, net_max_epochs, net_batch_size,
//   net_val_fraction, net_patience, net_alpha, net_beta, net_gamma,
//   net_z_into_trunk    network hyperparameters for the sri estimator
//
// Explicit keys win over paper_scale regardless of line order. Defaults are
// desk scale: they exercise every code path in minutes, not hours.
struct SimPlan {
    Design design = Design::kPerfect;
    long long n = 5000;
    int d = 64;
    double label_fraction = 0.1;
    std::vector<double> machine_accuracies{0.8};
    std::vector<std::array<double, 2>> coder_accuracies;
    int replications = 100;
    std::vector<std::string> estimators{"sri", "naive", "ppi", "dsl"};
    int k = 5;
    std::uint64_t base_seed = 0;
    long long oracle_draws = 1000000;
    net::NetworkConfig net;  // net.seed is ignored; replication seeds are derived

    // Grid cells: one per machine accuracy (perfect), coder pairs crossed
    // with machine accuracies (noisy, coder index outermost).
    int num_cells() const;

    void validate() const;  // throws InvalidArgument naming the bad field
};

SimPlan parse_plan(const std::string& text);
SimPlan load_plan(const std::string& path);

// The plan's true effect E[L(1) - L(0)], estimated once per plan by a paired
// Monte Carlo over oracle_draws fresh units on the oracle stream. The
// coefficient vector is pinned by base_seed, exactly as in every
// replication, so this is the estimand the report's bias column refers to.
struct OracleEstimate {
    double effect = 0.0;
    double se = 0.0;
};

OracleEstimate oracle_effect(const SimPlan& plan);

// One (cell, estimator) summary. Metrics average over the replications that
// completed; `failures` counts those that threw, and a cell whose every
// replication failed reports NaN metrics.
struct ReportRow {
    std::string design;
    double machine_acc = 0.0;
    std::string coder_acc;  // "a/b"; "1/1" under the perfect design
    std::string estimator;
    double bias = 0.0;
    double abs_bias = 0.0;
    double rmse = 0.0;
    double mean_se = 0.0;
    double coverage_95 = 0.0;
    double mean_runtime = 0.0;  // seconds; all zero unless timings were requested
    int failures = 0;
};

struct SimulationReport {
    std::vector<ReportRow> rows;
    double oracle_effect = 0.0;
    double oracle_se = 0.0;
};

// One estimator run on one replication, for post-hoc analysis.
struct RawRow {
    int cell = 0;
    int rep = 0;
    std::string design;
    double machine_acc = 0.0;
    std::string coder_acc;
    std::string estimator;
    bool failed = false;
    std::string error;  // commas and newlines sanitised so the CSV stays flat
    double estimate = 0.0;
    double se = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double runtime = 0.0;
};

struct MonteCarloOutput {
    SimulationReport report;
    std::vector<RawRow> raw;
};

// Worker-count precedence: a positive request wins, then the SRI_WORKERS
// environment variable, then hardware_concurrency (at least 1). Zero means
// "decide for me"; negative requests are rejected.
int resolve_workers(int requested);

// Runs the full grid. Replications are distributed over `workers` threads
// (resolved as above), every random draw is keyed by (base_seed, cell,
// replication), and aggregation is a single-threaded pass in replication
// order, so output is identical for any worker count. Timings are off by
// default to keep reruns byte-for-byte reproducible; switching them on only
// fills the runtime columns.
MonteCarloOutput run_monte_carlo(const SimPlan& plan, int workers = 0, bool timings = false);

// CSV with header
//   design,machine_acc,coder_acc,estimator,bias,abs_bias,rmse,mean_se,
//   coverage_95,mean_runtime,failures,oracle_effect,oracle_se
// The oracle columns repeat the report-level values on every row. Doubles
// are written in shortest round-trip form.
std::string report_to_csv(const SimulationReport& report);
void write_report_csv(const SimulationReport& report, const std::string& path);

// CSV with header
//   cell,rep,design,machine_acc,coder_acc,estimator,failed,error,estimate,
//   se,ci_low,ci_high,runtime
std::string raw_to_csv(const std::vector<RawRow>& raw);
void write_raw_csv(const std::vector<RawRow>& raw, const std::string& path);

// Renders a report CSV (the text, not a path) as an aligned table for the
// terminal, with the constant oracle columns folded into a footer line.
std::string render_report(const std::string& csv_text);
std::string render_report_file(const std::string& path);

}  // namespace sri::harness
