#include "sri/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include "sri/common.hpp"
#include "sri/dataset.hpp"
#include "sri/estimators.hpp"
#include "sri/rng.hpp"

namespace sri::harness {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        std::size_t pos = s.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

// Shortest round-trip decimal form; integers come out bare ("1", not "1.0").
std::string fmt(double v) {
    char buf[40];
    const std::to_chars_result r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

// One parsed plan line, kept with its location so later type errors can
// point back at the file.
struct Entry {
    std::string value;
    int line = 0;
};

[[noreturn]] void bad_value(const Entry& e, const std::string& key, const std::string& want) {
    throw ParseError("parse_plan: line " + std::to_string(e.line) + ": key '" + key +
                     "' expects " + want + ", got '" + e.value + "'");
}

double parse_double(const Entry& e, const std::string& key, const std::string& token) {
    double v = 0.0;
    const char* b = token.data();
    const char* end = b + token.size();
    const std::from_chars_result r = std::from_chars(b, end, v);
    if (r.ec != std::errc() || r.ptr != end) bad_value(e, key, "a number");
    return v;
}

double parse_double(const Entry& e, const std::string& key) {
    return parse_double(e, key, e.value);
}

int parse_int_token(const Entry& e, const std::string& key, const std::string& token) {
    int v = 0;
    const char* b = token.data();
    const char* end = b + token.size();
    const std::from_chars_result r = std::from_chars(b, end, v);
    if (r.ec != std::errc() || r.ptr != end) bad_value(e, key, "a list of integers");
    return v;
}

long long parse_ll(const Entry& e, const std::string& key) {
    long long v = 0;
    const char* b = e.value.data();
    const char* end = b + e.value.size();
    const std::from_chars_result r = std::from_chars(b, end, v);
    if (r.ec != std::errc() || r.ptr != end) bad_value(e, key, "an integer");
    return v;
}

int parse_int(const Entry& e, const std::string& key) {
    const long long v = parse_ll(e, key);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
        bad_value(e, key, "an integer in int range");
    return static_cast<int>(v);
}

std::uint64_t parse_u64(const Entry& e, const std::string& key) {
    std::uint64_t v = 0;
    const char* b = e.value.data();
    const char* end = b + e.value.size();
    const std::from_chars_result r = std::from_chars(b, end, v);
    if (r.ec != std::errc() || r.ptr != end) bad_value(e, key, "a nonnegative integer");
    return v;
}

bool parse_bool(const Entry& e, const std::string& key) {
    if (e.value == "true") return true;
    if (e.value == "false") return false;
    bad_value(e, key, "true or false");
}

std::vector<std::string> parse_list(const Entry& e, const std::string& key) {
    std::vector<std::string> out;
    for (const std::string& raw : split(e.value, ',')) {
        std::string token = trim(raw);
        if (token.empty()) bad_value(e, key, "a comma-separated list without empty entries");
        out.push_back(std::move(token));
    }
    return out;
}

const char* const kKnownKeys[] = {
    "design",         "n",
    "d",              "label_fraction",
    "machine_accuracies", "coder_accuracies",
    "replications",   "estimators",
    "k",              "base_seed",
    "oracle_draws",   "paper_scale",
    "net_trunk",      "net_head",
    "net_learning_rate", "net_max_epochs",
    "net_batch_size", "net_val_fraction",
    "net_patience",   "net_alpha",
    "net_beta",       "net_gamma",
    "net_z_into_trunk",
};

// The concrete accuracies one grid cell runs at. Coder accuracies stay at
// their do-nothing value 1 under the perfect design, which is also what the
// report prints for that design's coder_acc column.
struct CellSpec {
    double machine = 0.0;
    std::array<double, 2> coder{1.0, 1.0};
    std::string coder_label;
};

CellSpec decode_cell(const SimPlan& plan, int cell) {
    CellSpec spec;
    const int m = static_cast<int>(plan.machine_accuracies.size());
    if (plan.design == Design::kNoisy) {
        spec.coder = plan.coder_accuracies[static_cast<std::size_t>(cell / m)];
        spec.machine = plan.machine_accuracies[static_cast<std::size_t>(cell % m)];
    } else {
        spec.machine = plan.machine_accuracies[static_cast<std::size_t>(cell)];
    }
    spec.coder_label = fmt(spec.coder[0]) + "/" + fmt(spec.coder[1]);
    return spec;
}

const char* design_name(Design d) { return d == Design::kNoisy ? "noisy" : "perfect"; }

// One estimator's outcome on one replication, before any aggregation.
struct EstResult {
    bool failed = false;
    std::string error;
    double estimate = 0.0;
    double se = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double runtime = 0.0;
};

struct RepOutcome {
    std::vector<EstResult> results;
};

est::Estimate dispatch(const std::string& name, const SimPlan& plan, const Dataset& data,
                       const std::vector<double>& preds, std::uint64_t est_seed) {
    if (name == "sri")
        return plan.design == Design::kNoisy ? est::sri_noisy(data, plan.k, plan.net, est_seed)
                                             : est::sri_perfect(data, plan.k, plan.net, est_seed);
    if (name == "naive") return est::naive_estimate(data, preds);
    if (name == "ppi") return est::ppi_estimate(data, preds);
    return est::dsl_estimate(data, preds);
}

RepOutcome run_one(const SimPlan& plan, int cell, int rep, bool timings) {
    RepOutcome out;
    out.results.resize(plan.estimators.size());

    const CellSpec spec = decode_cell(plan, cell);
    Dataset data;
    std::vector<double> preds;
    std::uint64_t est_seed = 0;
    try {
        rng::Stream seeds = rng::substream(
            plan.base_seed,
            {rng::kTagCell, static_cast<std::uint64_t>(cell), static_cast<std::uint64_t>(rep)});
        const std::uint64_t dgp_seed = seeds.next_u64();
        const std::uint64_t corrupt_seed = seeds.next_u64();
        const std::uint64_t sample_seed = seeds.next_u64();
        const std::uint64_t pred_seed = seeds.next_u64();
        est_seed = seeds.next_u64();

        SynthConfig cfg;
        cfg.n = plan.n;
        cfg.d = plan.d;
        cfg.seed = dgp_seed;
        cfg.coef_seed = plan.base_seed;  // alpha held fixed across the whole study
        data = generate_synthetic(cfg);
        if (plan.design == Design::kNoisy)
            data = corrupt_labels(data, {spec.coder[0], spec.coder[1]}, corrupt_seed);
        data = sample_annotations(data, plan.label_fraction, sample_seed);

        const std::vector<int> labels = synth_predictions(data, spec.machine, pred_seed);
        preds.assign(labels.begin(), labels.end());
    } catch (const std::exception& e) {
        for (EstResult& r : out.results) {
            r.failed = true;
            r.error = e.what();
        }
        return out;
    }

    for (std::size_t i = 0; i < plan.estimators.size(); ++i) {
        EstResult& r = out.results[i];
        const auto start = std::chrono::steady_clock::now();
        try {
            const est::Estimate e = dispatch(plan.estimators[i], plan, data, preds, est_seed);
            r.estimate = e.diff;
            r.se = e.se_diff;
            r.ci_low = e.ci_low;
            r.ci_high = e.ci_high;
        } catch (const std::exception& e) {
            r.failed = true;
            r.error = e.what();
        }
        if (timings)
            r.runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                            .count();
    }
    return out;
}

std::string sanitize(std::string text) {
    for (char& c : text) {
        if (c == ',') c = ';';
        if (c == '\n' || c == '\r') c = ' ';
    }
    return text;
}

std::string read_file(const std::string& path, const char* who) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(std::string(who) + ": cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& text, const char* who) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(std::string(who) + ": cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw IoError(std::string(who) + ": write to '" + path + "' failed");
}

}  // namespace

int SimPlan::num_cells() const {
    const int m = static_cast<int>(machine_accuracies.size());
    return design == Design::kNoisy ? static_cast<int>(coder_accuracies.size()) * m : m;
}

void SimPlan::validate() const {
    if (n < 2) throw InvalidArgument("plan: n must be at least 2");
    if (d < 1) throw InvalidArgument("plan: d must be positive");
    if (!(label_fraction > 0.0 && label_fraction <= 1.0))
        throw InvalidArgument("plan: label_fraction must lie in (0, 1]");
    if (replications < 1) throw InvalidArgument("plan: replications must be positive");
    if (k < 2) throw InvalidArgument("plan: k must be at least 2");
    if (oracle_draws < 1) throw InvalidArgument("plan: oracle_draws must be positive");

    if (machine_accuracies.empty())
        throw InvalidArgument("plan: machine_accuracies must be non-empty");
    for (double a : machine_accuracies)
        if (!(a > 0.5 && a <= 1.0))
            throw InvalidArgument("plan: machine accuracy " + fmt(a) + " outside (0.5, 1]");

    if (design == Design::kNoisy) {
        if (coder_accuracies.empty())
            throw InvalidArgument("plan: the noisy design requires coder_accuracies");
        for (const std::array<double, 2>& pair : coder_accuracies)
            for (double a : pair)
                if (!(a > 0.5 && a <= 1.0))
                    throw InvalidArgument("plan: coder accuracy " + fmt(a) + " outside (0.5, 1]");
    } else if (!coder_accuracies.empty()) {
        throw InvalidArgument("plan: coder_accuracies only apply to the noisy design");
    }

    if (estimators.empty()) throw InvalidArgument("plan: estimators must be non-empty");
    for (std::size_t i = 0; i < estimators.size(); ++i) {
        const std::string& name = estimators[i];
        if (name != "sri" && name != "naive" && name != "ppi" && name != "dsl")
            throw InvalidArgument("plan: unknown estimator '" + name + "'");
        for (std::size_t j = 0; j < i; ++j)
            if (estimators[j] == name)
                throw InvalidArgument("plan: estimator '" + name + "' listed twice");
    }

    net.validate();
}

SimPlan parse_plan(const std::string& text) {
    std::map<std::string, Entry> entries;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const std::size_t hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("parse_plan: line " + std::to_string(lineno) +
                             ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ParseError("parse_plan: line " + std::to_string(lineno) + ": empty key");
        if (entries.count(key))
            throw ParseError("parse_plan: line " + std::to_string(lineno) + ": duplicate key '" +
                             key + "'");
        entries[key] = Entry{value, lineno};
    }

    for (const auto& [key, entry] : entries) {
        if (std::find_if(std::begin(kKnownKeys), std::end(kKnownKeys),
                         [&](const char* k) { return key == k; }) == std::end(kKnownKeys))
            throw ParseError("parse_plan: line " + std::to_string(entry.line) +
                             ": unknown key '" + key + "'");
    }

    SimPlan plan;
    const auto get = [&](const char* key) -> const Entry* {
        const auto it = entries.find(key);
        return it == entries.end() ? nullptr : &it->second;
    };

    // paper_scale is applied before the explicit keys, so spelling any of
    // n, d, or replications out always wins regardless of line order.
    if (const Entry* e = get("paper_scale")) {
        if (parse_bool(*e, "paper_scale")) {
            plan.n = 20000;
            plan.d = 2048;
            plan.replications = 200;
        }
    }

    if (const Entry* e = get("design")) {
        if (e->value == "perfect")
            plan.design = Design::kPerfect;
        else if (e->value == "noisy")
            plan.design = Design::kNoisy;
        else
            bad_value(*e, "design", "perfect or noisy");
    }
    if (const Entry* e = get("n")) plan.n = parse_ll(*e, "n");
    if (const Entry* e = get("d")) plan.d = parse_int(*e, "d");
    if (const Entry* e = get("label_fraction"))
        plan.label_fraction = parse_double(*e, "label_fraction");
    if (const Entry* e = get("machine_accuracies")) {
        plan.machine_accuracies.clear();
        for (const std::string& token : parse_list(*e, "machine_accuracies"))
            plan.machine_accuracies.push_back(parse_double(*e, "machine_accuracies", token));
    }
    if (const Entry* e = get("coder_accuracies")) {
        plan.coder_accuracies.clear();
        for (const std::string& token : parse_list(*e, "coder_accuracies")) {
            const std::vector<std::string> parts = split(token, '/');
            if (parts.size() > 2) bad_value(*e, "coder_accuracies", "entries of the form a or a/b");
            const double first = parse_double(*e, "coder_accuracies", trim(parts[0]));
            const double second =
                parts.size() == 2 ? parse_double(*e, "coder_accuracies", trim(parts[1])) : first;
            plan.coder_accuracies.push_back({first, second});
        }
    }
    if (const Entry* e = get("replications")) plan.replications = parse_int(*e, "replications");
    if (const Entry* e = get("estimators")) plan.estimators = parse_list(*e, "estimators");
    if (const Entry* e = get("k")) plan.k = parse_int(*e, "k");
    if (const Entry* e = get("base_seed")) plan.base_seed = parse_u64(*e, "base_seed");
    if (const Entry* e = get("oracle_draws")) plan.oracle_draws = parse_ll(*e, "oracle_draws");

    if (const Entry* e = get("net_trunk")) {
        plan.net.trunk_dims.clear();
        for (const std::string& token : parse_list(*e, "net_trunk"))
            plan.net.trunk_dims.push_back(parse_int_token(*e, "net_trunk", token));
    }
    if (const Entry* e = get("net_head")) {
        plan.net.head_dims.clear();
        for (const std::string& token : parse_list(*e, "net_head"))
            plan.net.head_dims.push_back(parse_int_token(*e, "net_head", token));
    }
    if (const Entry* e = get("net_learning_rate"))
        plan.net.learning_rate = parse_double(*e, "net_learning_rate");
    if (const Entry* e = get("net_max_epochs"))
        plan.net.max_epochs = parse_int(*e, "net_max_epochs");
    if (const Entry* e = get("net_batch_size"))
        plan.net.batch_size = parse_int(*e, "net_batch_size");
    if (const Entry* e = get("net_val_fraction"))
        plan.net.val_fraction = parse_double(*e, "net_val_fraction");
    if (const Entry* e = get("net_patience")) plan.net.patience = parse_int(*e, "net_patience");
    if (const Entry* e = get("net_alpha")) plan.net.alpha = parse_double(*e, "net_alpha");
    if (const Entry* e = get("net_beta")) plan.net.beta = parse_double(*e, "net_beta");
    if (const Entry* e = get("net_gamma")) plan.net.gamma = parse_double(*e, "net_gamma");
    if (const Entry* e = get("net_z_into_trunk"))
        plan.net.z_into_trunk = parse_bool(*e, "net_z_into_trunk");

    plan.validate();
    return plan;
}

SimPlan load_plan(const std::string& path) { return parse_plan(read_file(path, "load_plan")); }

OracleEstimate oracle_effect(const SimPlan& plan) {
    plan.validate();

    SynthConfig cfg;
    cfg.n = plan.oracle_draws;
    cfg.d = plan.d;
    cfg.coef_seed = plan.base_seed;
    cfg.seed = rng::substream(plan.base_seed, {rng::kTagOracle}).next_u64();

    const std::vector<double> alpha = detail::draw_alpha(cfg);
    double alpha_sum = 0.0;
    for (double a : alpha) alpha_sum += a;

    // Paired potential outcomes: under the shared-noise DGP both labels of a
    // unit are functions of the same epsilon, so differencing within draws
    // removes most of the Monte Carlo variance.
    double sum = 0.0;
    double sumsq = 0.0;
    for (long long i = 0; i < plan.oracle_draws; ++i) {
        const detail::UnitDraw u = detail::draw_unit(cfg, alpha, i, nullptr);
        const double control_sum = u.sum_y - (u.t == 1 ? alpha_sum : 0.0);
        const int l0 = detail::sigmoid(cfg.intercept + cfg.slope * control_sum) > 0.5 ? 1 : 0;
        const int l1 =
            detail::sigmoid(cfg.intercept + cfg.slope * (control_sum + alpha_sum)) > 0.5 ? 1 : 0;
        const double diff = l1 - l0;
        sum += diff;
        sumsq += diff * diff;
    }

    OracleEstimate oracle;
    const double draws = static_cast<double>(plan.oracle_draws);
    oracle.effect = sum / draws;
    const double var = (sumsq / draws - oracle.effect * oracle.effect) / draws;
    oracle.se = std::sqrt(std::max(var, 0.0));
    return oracle;
}

int resolve_workers(int requested) {
    if (requested < 0) throw InvalidArgument("resolve_workers: worker count must be nonnegative");
    if (requested > 0) return requested;
    if (const char* env = std::getenv("SRI_WORKERS")) {
        const std::string text(env);
        int v = 0;
        const char* b = text.data();
        const char* end = b + text.size();
        const std::from_chars_result r = std::from_chars(b, end, v);
        if (r.ec != std::errc() || r.ptr != end || v < 1)
            throw InvalidArgument("resolve_workers: SRI_WORKERS must be a positive integer, got '" +
                                  text + "'");
        return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

MonteCarloOutput run_monte_carlo(const SimPlan& plan, int workers, bool timings) {
    plan.validate();

    const OracleEstimate oracle = oracle_effect(plan);
    const int cells = plan.num_cells();
    const long long tasks = static_cast<long long>(cells) * plan.replications;

    std::vector<RepOutcome> outcomes(static_cast<std::size_t>(tasks));
    std::atomic<long long> cursor{0};
    const auto worker = [&] {
        for (;;) {
            const long long i = cursor.fetch_add(1);
            if (i >= tasks) break;
            const int cell = static_cast<int>(i / plan.replications);
            const int rep = static_cast<int>(i % plan.replications);
            outcomes[static_cast<std::size_t>(i)] = run_one(plan, cell, rep, timings);
        }
    };

    const int pool_size =
        static_cast<int>(std::min<long long>(resolve_workers(workers), std::max<long long>(tasks, 1)));
    if (pool_size <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(pool_size));
        for (int i = 0; i < pool_size; ++i) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    // Replications ran in whatever order the pool picked them up; everything
    // below folds the stored slots in index order, so the output is the same
    // for any worker count.
    MonteCarloOutput out;
    out.report.oracle_effect = oracle.effect;
    out.report.oracle_se = oracle.se;
    out.raw.reserve(static_cast<std::size_t>(tasks) * plan.estimators.size());

    for (int cell = 0; cell < cells; ++cell) {
        const CellSpec spec = decode_cell(plan, cell);
        for (int rep = 0; rep < plan.replications; ++rep) {
            const RepOutcome& rep_out =
                outcomes[static_cast<std::size_t>(cell) * plan.replications + rep];
            for (std::size_t e = 0; e < plan.estimators.size(); ++e) {
                const EstResult& res = rep_out.results[e];
                RawRow row;
                row.cell = cell;
                row.rep = rep;
                row.design = design_name(plan.design);
                row.machine_acc = spec.machine;
                row.coder_acc = spec.coder_label;
                row.estimator = plan.estimators[e];
                row.failed = res.failed;
                row.error = sanitize(res.error);
                row.estimate = res.estimate;
                row.se = res.se;
                row.ci_low = res.ci_low;
                row.ci_high = res.ci_high;
                row.runtime = res.runtime;
                out.raw.push_back(std::move(row));
            }
        }
    }

    for (int cell = 0; cell < cells; ++cell) {
        const CellSpec spec = decode_cell(plan, cell);
        for (std::size_t e = 0; e < plan.estimators.size(); ++e) {
            ReportRow row;
            row.design = design_name(plan.design);
            row.machine_acc = spec.machine;
            row.coder_acc = spec.coder_label;
            row.estimator = plan.estimators[e];

            double sum_est = 0.0;
            double sum_sq_err = 0.0;
            double sum_se = 0.0;
            double sum_rt = 0.0;
            int covered = 0;
            int ok = 0;
            for (int rep = 0; rep < plan.replications; ++rep) {
                const EstResult& res =
                    outcomes[static_cast<std::size_t>(cell) * plan.replications + rep].results[e];
                if (res.failed) {
                    ++row.failures;
                    continue;
                }
                ++ok;
                sum_est += res.estimate;
                const double err = res.estimate - oracle.effect;
                sum_sq_err += err * err;
                sum_se += res.se;
                sum_rt += res.runtime;
                if (res.ci_low <= oracle.effect && oracle.effect <= res.ci_high) ++covered;
            }
            if (ok == 0) {
                const double nan = std::numeric_limits<double>::quiet_NaN();
                row.bias = row.abs_bias = row.rmse = row.mean_se = nan;
                row.coverage_95 = row.mean_runtime = nan;
            } else {
                row.bias = sum_est / ok - oracle.effect;
                row.abs_bias = std::abs(row.bias);
                row.rmse = std::sqrt(sum_sq_err / ok);
                row.mean_se = sum_se / ok;
                row.coverage_95 = static_cast<double>(covered) / ok;
                row.mean_runtime = sum_rt / ok;
            }
            out.report.rows.push_back(std::move(row));
        }
    }
    return out;
}

std::string report_to_csv(const SimulationReport& report) {
    std::string out =
        "design,machine_acc,coder_acc,estimator,bias,abs_bias,rmse,mean_se,coverage_95,"
        "mean_runtime,failures,oracle_effect,oracle_se\n";
    for (const ReportRow& r : report.rows) {
        out += r.design + ',' + fmt(r.machine_acc) + ',' + r.coder_acc + ',' + r.estimator + ',' +
               fmt(r.bias) + ',' + fmt(r.abs_bias) + ',' + fmt(r.rmse) + ',' + fmt(r.mean_se) +
               ',' + fmt(r.coverage_95) + ',' + fmt(r.mean_runtime) + ',' +
               std::to_string(r.failures) + ',' + fmt(report.oracle_effect) + ',' +
               fmt(report.oracle_se) + '\n';
    }
    return out;
}

void write_report_csv(const SimulationReport& report, const std::string& path) {
    write_file(path, report_to_csv(report), "write_report_csv");
}

std::string raw_to_csv(const std::vector<RawRow>& raw) {
    std::string out =
        "cell,rep,design,machine_acc,coder_acc,estimator,failed,error,estimate,se,ci_low,"
        "ci_high,runtime\n";
    for (const RawRow& r : raw) {
        out += std::to_string(r.cell) + ',' + std::to_string(r.rep) + ',' + r.design + ',' +
               fmt(r.machine_acc) + ',' + r.coder_acc + ',' + r.estimator + ',' +
               (r.failed ? "1" : "0") + ',' + r.error + ',' + fmt(r.estimate) + ',' + fmt(r.se) +
               ',' + fmt(r.ci_low) + ',' + fmt(r.ci_high) + ',' + fmt(r.runtime) + '\n';
    }
    return out;
}

void write_raw_csv(const std::vector<RawRow>& raw, const std::string& path) {
    write_file(path, raw_to_csv(raw), "write_raw_csv");
}

std::string render_report(const std::string& csv_text) {
    std::vector<std::vector<std::string>> grid;
    std::istringstream in(csv_text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        grid.push_back(split(line, ','));
    }
    if (grid.empty()) throw ParseError("render_report: empty report");
    const std::vector<std::string>& header = grid[0];

    // The oracle columns carry one constant value each; fold them into a
    // footer instead of repeating them per row.
    std::vector<std::size_t> visible;
    int oracle_col = -1;
    int oracle_se_col = -1;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == "oracle_effect")
            oracle_col = static_cast<int>(c);
        else if (header[c] == "oracle_se")
            oracle_se_col = static_cast<int>(c);
        else
            visible.push_back(c);
    }

    // Numbers are reformatted to four significant digits for scanning; any
    // cell that is not wholly numeric passes through untouched.
    const auto display = [](const std::string& cell) -> std::string {
        double v = 0.0;
        const char* b = cell.data();
        const char* end = b + cell.size();
        const std::from_chars_result r = std::from_chars(b, end, v);
        if (r.ec != std::errc() || r.ptr != end || cell.empty()) return cell;
        if (v == static_cast<long long>(v) && std::abs(v) < 1e15)
            return std::to_string(static_cast<long long>(v));
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.4g", v);
        return buf;
    };

    std::vector<std::vector<std::string>> table;
    table.emplace_back();
    for (std::size_t c : visible) table.back().push_back(header[c]);
    for (std::size_t row = 1; row < grid.size(); ++row) {
        if (grid[row].size() != header.size())
            throw ParseError("render_report: row " + std::to_string(row) + " has " +
                             std::to_string(grid[row].size()) + " fields, header has " +
                             std::to_string(header.size()));
        table.emplace_back();
        for (std::size_t c : visible) table.back().push_back(display(grid[row][c]));
    }

    std::vector<std::size_t> widths(visible.size(), 0);
    for (const std::vector<std::string>& row : table)
        for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());

    std::string out;
    for (const std::vector<std::string>& row : table) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out += "  ";
            out += row[c];
            if (c + 1 < row.size()) out.append(widths[c] - row[c].size(), ' ');
        }
        out += '\n';
    }
    if (oracle_col >= 0 && grid.size() > 1) {
        out += "\noracle effect " + display(grid[1][static_cast<std::size_t>(oracle_col)]);
        if (oracle_se_col >= 0)
            out += " (se " + display(grid[1][static_cast<std::size_t>(oracle_se_col)]) + ")";
        out += '\n';
    }
    return out;
}

std::string render_report_file(const std::string& path) {
    return render_report(read_file(path, "render_report_file"));
}

}  // namespace sri::harness
