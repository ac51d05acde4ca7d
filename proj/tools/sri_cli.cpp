// Command-line front end. Everything flows through the C API in sri.h; this
// file owns only flag parsing, file plumbing, and exit codes (0 success,
// 1 operational failure, 2 usage error).

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <string>

#include "sri.h"

namespace {

int fail(const std::string& message) {
    std::fprintf(stderr, "sri: %s\n", message.c_str());
    return 1;
}

bool readable(const std::string& path) { return std::ifstream(path).good(); }

// Missing input files are usage errors, distinct from failures inside the
// library (bad data, numerical breakdown, unwritable outputs).
int usage_missing(const std::string& path) {
    std::fprintf(stderr, "sri: cannot open '%s'\n", path.c_str());
    return 2;
}

int emit(const std::string& out_path, const std::string& text) {
    if (out_path.empty()) {
        std::fputs(text.c_str(), stdout);
        if (text.empty() || text.back() != '\n') std::fputc('\n', stdout);
        return 0;
    }
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) return fail("cannot write '" + out_path + "'");
    return 0;
}

// Owns a dataset handle for the duration of one subcommand.
struct DatasetGuard {
    sri_dataset* handle = nullptr;
    ~DatasetGuard() { sri_dataset_free(handle); }
};

struct StringGuard {
    char* text = nullptr;
    ~StringGuard() { sri_string_free(text); }
};

struct SimulateArgs {
    std::string plan;
    std::string out;
    std::string raw_out;
    int workers = 0;
    bool timings = false;
};

struct EstimateArgs {
    std::string data;
    std::string estimator = "sri";
    int k = 5;
    std::uint64_t seed = 0;
    std::string out;
};

struct DiagnoseArgs {
    std::string data;
    double delta = 0.0;
    bool has_delta = false;
    int b = 999;
    int pca_dims = 0;  // 0 means min(30, d), resolved after the data loads
    std::uint64_t seed = 0;
    int z_column = -1;
    std::string out;
};

int run_simulate(const SimulateArgs& args) {
    if (!readable(args.plan)) return usage_missing(args.plan);
    const sri_status status =
        sri_simulate_plan_file(args.plan.c_str(), args.out.c_str(),
                               args.raw_out.empty() ? nullptr : args.raw_out.c_str(),
                               args.workers, args.timings ? 1 : 0);
    if (status != SRI_OK) return fail(sri_last_error());
    return 0;
}

int run_estimate(const EstimateArgs& args) {
    if (!readable(args.data)) return usage_missing(args.data);
    DatasetGuard ds;
    if (sri_dataset_load_csv(args.data.c_str(), &ds.handle) != SRI_OK)
        return fail(sri_last_error());
    StringGuard json;
    if (sri_estimate(ds.handle, args.estimator.c_str(), args.k, args.seed, &json.text) != SRI_OK)
        return fail(sri_last_error());
    return emit(args.out, json.text);
}

int run_diagnose(const DiagnoseArgs& args) {
    if (!readable(args.data)) return usage_missing(args.data);
    DatasetGuard ds;
    if (sri_dataset_load_csv(args.data.c_str(), &ds.handle) != SRI_OK)
        return fail(sri_last_error());
    int pca_dims = args.pca_dims;
    if (pca_dims == 0) {
        const int d = sri_dataset_d(ds.handle);
        pca_dims = d < 30 ? d : 30;
    }
    StringGuard json;
    if (sri_diagnose(ds.handle, args.has_delta ? 1 : 0, args.delta, args.b, pca_dims, args.seed,
                     args.z_column, &json.text) != SRI_OK)
        return fail(sri_last_error());
    return emit(args.out, json.text);
}

int run_report(const std::string& in_path) {
    if (!readable(in_path)) return usage_missing(in_path);
    StringGuard table;
    if (sri_render_report(in_path.c_str(), &table.text) != SRI_OK) return fail(sri_last_error());
    std::fputs(table.text, stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string("surrogate representation inference toolkit ") + sri_version()};
    app.require_subcommand(1);

    SimulateArgs sim;
    CLI::App* simulate = app.add_subcommand("simulate", "run a Monte Carlo simulation plan");
    simulate->add_option("--plan", sim.plan, "plan file (key = value lines)")->required();
    simulate->add_option("--out", sim.out, "report CSV to write")->required();
    simulate->add_option("--raw-out", sim.raw_out, "also write the per-replication CSV here");
    simulate->add_option("--workers", sim.workers,
                         "worker threads; 0 defers to SRI_WORKERS, then the hardware");
    simulate->add_flag("--timings", sim.timings,
                       "fill the runtime columns (reruns stop being byte-identical)");

    EstimateArgs est;
    CLI::App* estimate = app.add_subcommand("estimate", "run one estimator on a dataset CSV");
    estimate->add_option("--data", est.data, "dataset CSV")->required();
    estimate->add_option("--estimator", est.estimator,
                         "sri, sri_perfect, sri_noisy, naive, ppi, or dsl");
    estimate->add_option("--k", est.k, "cross-fitting folds");
    estimate->add_option("--seed", est.seed, "random seed");
    estimate->add_option("--out", est.out, "write the JSON here instead of stdout");

    DiagnoseArgs diag;
    CLI::App* diagnose = app.add_subcommand("diagnose", "run the diagnostic battery on a CSV");
    diagnose->add_option("--data", diag.data, "dataset CSV")->required();
    CLI::Option* delta_opt =
        diagnose->add_option("--delta", diag.delta,
                             "equivalence margin; omit to report only the interval");
    diagnose->add_option("--b", diag.b, "permutation count");
    diagnose->add_option("--pca-dims", diag.pca_dims, "outcome components kept (default 30)");
    diagnose->add_option("--seed", diag.seed, "random seed");
    diagnose->add_option("--z-column", diag.z_column,
                         "integer covariate column for the agreement check; -1 pools");
    diagnose->add_option("--out", diag.out, "write the JSON here instead of stdout");

    std::string report_in;
    CLI::App* report = app.add_subcommand("report", "print a report CSV as an aligned table");
    report->add_option("--in", report_in, "report CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    diag.has_delta = delta_opt->count() > 0;

    if (simulate->parsed()) return run_simulate(sim);
    if (estimate->parsed()) return run_estimate(est);
    if (diagnose->parsed()) return run_diagnose(diag);
    if (report->parsed()) return run_report(report_in);
    return 2;
}
