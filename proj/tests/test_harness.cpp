#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "sri/common.hpp"
#include "sri/dataset.hpp"
#include "sri/estimators.hpp"
#include "sri/harness.hpp"
#include "sri/rng.hpp"

using namespace sri;
using namespace sri::harness;

namespace {

// Runs fn, which must throw Ex, and hands back the message for inspection.
template <typename Ex>
std::string message_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Ex& e) {
        return e.what();
    }
    return "";
}

bool contains(const std::string& text, const std::string& needle) {
    return text.find(needle) != std::string::npos;
}

// A plan cheap enough to run many times: baselines only, no networks.
SimPlan baseline_plan() {
    SimPlan plan;
    plan.n = 400;
    plan.d = 8;
    plan.label_fraction = 0.3;
    plan.machine_accuracies = {0.7, 0.9};
    plan.replications = 5;
    plan.estimators = {"naive", "ppi", "dsl"};
    plan.k = 2;
    plan.base_seed = 3;
    plan.oracle_draws = 20000;
    return plan;
}

net::NetworkConfig tiny_net() {
    net::NetworkConfig cfg;
    cfg.trunk_dims = {8, 4};
    cfg.head_dims = {4, 1};
    cfg.learning_rate = 1e-3;
    cfg.max_epochs = 60;
    cfg.patience = 8;
    return cfg;
}

double phi(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("parse_plan: empty text yields the documented defaults") {
    const SimPlan p = parse_plan("");
    CHECK(p.design == Design::kPerfect);
    CHECK(p.n == 5000);
    CHECK(p.d == 64);
    CHECK(p.label_fraction == doctest::Approx(0.1));
    CHECK(p.machine_accuracies == std::vector<double>{0.8});
    CHECK(p.coder_accuracies.empty());
    CHECK(p.replications == 100);
    CHECK(p.estimators == std::vector<std::string>{"sri", "naive", "ppi", "dsl"});
    CHECK(p.k == 5);
    CHECK(p.base_seed == 0);
    CHECK(p.oracle_draws == 1000000);
    CHECK(p.net.trunk_dims == std::vector<int>{100, 50});
    CHECK(p.num_cells() == 1);
}

TEST_CASE("parse_plan: every key lands in its field") {
    const char* text = R"(
# full sweep over the grammar
design = noisy
n = 900            # inline comment
d = 12
label_fraction = 0.25
machine_accuracies = 0.7, 0.8
coder_accuracies = 0.9/0.85, 0.95
replications = 7
estimators = sri, dsl
k = 3
base_seed = 42
oracle_draws = 12345
net_trunk = 8, 4
net_head = 4, 1
net_learning_rate = 1e-3
net_max_epochs = 50
net_batch_size = 32
net_val_fraction = 0.25
net_patience = 7
net_alpha = 0.5
net_beta = 1.5
net_gamma = 2.5
net_z_into_trunk = true
)";
    const SimPlan p = parse_plan(text);
    CHECK(p.design == Design::kNoisy);
    CHECK(p.n == 900);
    CHECK(p.d == 12);
    CHECK(p.label_fraction == doctest::Approx(0.25));
    CHECK(p.machine_accuracies == std::vector<double>{0.7, 0.8});
    REQUIRE(p.coder_accuracies.size() == 2);
    CHECK(p.coder_accuracies[0] == std::array<double, 2>{0.9, 0.85});
    CHECK(p.coder_accuracies[1] == std::array<double, 2>{0.95, 0.95});
    CHECK(p.replications == 7);
    CHECK(p.estimators == std::vector<std::string>{"sri", "dsl"});
    CHECK(p.k == 3);
    CHECK(p.base_seed == 42);
    CHECK(p.oracle_draws == 12345);
    CHECK(p.net.trunk_dims == std::vector<int>{8, 4});
    CHECK(p.net.head_dims == std::vector<int>{4, 1});
    CHECK(p.net.learning_rate == doctest::Approx(1e-3));
    CHECK(p.net.max_epochs == 50);
    CHECK(p.net.batch_size == 32);
    CHECK(p.net.val_fraction == doctest::Approx(0.25));
    CHECK(p.net.patience == 7);
    CHECK(p.net.alpha == doctest::Approx(0.5));
    CHECK(p.net.beta == doctest::Approx(1.5));
    CHECK(p.net.gamma == doctest::Approx(2.5));
    CHECK(p.net.z_into_trunk);
    CHECK(p.num_cells() == 4);  // two coder pairs crossed with two machine accuracies
}

TEST_CASE("parse_plan: paper_scale expands and explicit keys win regardless of order") {
    const SimPlan p = parse_plan("paper_scale = true");
    CHECK(p.n == 20000);
    CHECK(p.d == 2048);
    CHECK(p.replications == 200);

    const SimPlan q = parse_plan("n = 777\npaper_scale = true");
    CHECK(q.n == 777);
    CHECK(q.d == 2048);
    CHECK(q.replications == 200);

    const SimPlan r = parse_plan("paper_scale = false");
    CHECK(r.n == 5000);
    CHECK(r.d == 64);
}

TEST_CASE("parse_plan: malformed input is rejected with the offending line") {
    CHECK(contains(message_of<ParseError>([] { parse_plan("design noisy"); }),
                   "line 1: expected 'key = value'"));
    CHECK(contains(message_of<ParseError>([] { parse_plan("n = 5\n\nn = 6"); }),
                   "line 3: duplicate key 'n'"));
    CHECK(contains(message_of<ParseError>([] { parse_plan("granularity = 3"); }),
                   "unknown key 'granularity'"));
    CHECK(contains(message_of<ParseError>([] { parse_plan("n = soon"); }), "expects an integer"));
    CHECK(contains(message_of<ParseError>([] { parse_plan("paper_scale = yes"); }),
                   "true or false"));
    CHECK(contains(message_of<ParseError>([] { parse_plan("machine_accuracies = 0.8,,0.9"); }),
                   "empty entries"));
    CHECK(contains(message_of<ParseError>([] { parse_plan("design = both"); }),
                   "perfect or noisy"));
    CHECK(contains(
        message_of<ParseError>([] { parse_plan("design = noisy\ncoder_accuracies = 0.9/0.8/0.7"); }),
        "a or a/b"));
    CHECK(contains(message_of<ParseError>([] { parse_plan(" = 3"); }), "empty key"));
    CHECK(contains(message_of<ParseError>([] { parse_plan("net_trunk = 8, 4.5"); }),
                   "list of integers"));
}

TEST_CASE("SimPlan::validate rejects out-of-range settings") {
    CHECK(contains(message_of<InvalidArgument>([] { parse_plan("design = noisy"); }),
                   "requires coder_accuracies"));
    CHECK(contains(message_of<InvalidArgument>([] { parse_plan("coder_accuracies = 0.9"); }),
                   "only apply to the noisy design"));
    CHECK(contains(message_of<InvalidArgument>([] { parse_plan("label_fraction = 0"); }),
                   "(0, 1]"));
    CHECK(contains(message_of<InvalidArgument>([] { parse_plan("machine_accuracies = 0.5"); }),
                   "outside (0.5, 1]"));
    CHECK(contains(
        message_of<InvalidArgument>([] { parse_plan("design = noisy\ncoder_accuracies = 1.2"); }),
        "coder accuracy"));
    CHECK(contains(message_of<InvalidArgument>([] { parse_plan("estimators = naive, bogus"); }),
                   "unknown estimator 'bogus'"));
    CHECK(contains(message_of<InvalidArgument>([] { parse_plan("estimators = dsl, dsl"); }),
                   "listed twice"));
    CHECK(contains(message_of<InvalidArgument>([] { parse_plan("k = 1"); }), "at least 2"));
    CHECK(contains(message_of<InvalidArgument>([] { parse_plan("n = 1"); }), "n must be"));
    CHECK(contains(message_of<InvalidArgument>([] { parse_plan("replications = 0"); }),
                   "replications"));
    CHECK(contains(message_of<InvalidArgument>([] { parse_plan("oracle_draws = 0"); }),
                   "oracle_draws"));
    CHECK(contains(message_of<InvalidArgument>([] { parse_plan("net_max_epochs = -1"); }),
                   "max_epochs"));
}

TEST_CASE("oracle_effect matches the closed form and is deterministic") {
    SimPlan plan;
    plan.d = 16;
    plan.base_seed = 123;
    plan.oracle_draws = 200000;

    const OracleEstimate oracle = oracle_effect(plan);

    // Under the shared-noise generator, sum_y = t * sum(alpha) + d * eps, so
    // P(L = 1 | T = t) = Phi((5 + t * sum(alpha)) / d) at the default
    // intercept 1 and slope 0.2.
    SynthConfig cfg;
    cfg.d = 16;
    cfg.coef_seed = 123;
    double alpha_sum = 0.0;
    for (double a : detail::draw_alpha(cfg)) alpha_sum += a;
    const double truth = phi((5.0 + alpha_sum) / 16.0) - phi(5.0 / 16.0);

    CHECK(oracle.se > 0.0);
    CHECK(oracle.se < 0.01);
    CHECK(std::abs(oracle.effect - truth) <= 4.0 * oracle.se + 1e-12);

    const OracleEstimate again = oracle_effect(plan);
    CHECK(again.effect == oracle.effect);
    CHECK(again.se == oracle.se);

    SimPlan other = plan;
    other.base_seed = 124;
    CHECK(oracle_effect(other).effect != oracle.effect);
}

TEST_CASE("run_monte_carlo: a single naive replication mirrors a direct call") {
    SimPlan plan;
    plan.n = 400;
    plan.d = 8;
    plan.label_fraction = 0.2;
    plan.machine_accuracies = {1.0};
    plan.replications = 1;
    plan.estimators = {"naive"};
    plan.base_seed = 11;
    plan.oracle_draws = 20000;

    const MonteCarloOutput out = run_monte_carlo(plan, 1);

    // Re-derive the replication's streams exactly as the runner does.
    rng::Stream seeds = rng::substream(11, {rng::kTagCell, 0, 0});
    const std::uint64_t dgp_seed = seeds.next_u64();
    (void)seeds.next_u64();  // corruption stream, unused under the perfect design
    const std::uint64_t sample_seed = seeds.next_u64();
    const std::uint64_t pred_seed = seeds.next_u64();
    (void)seeds.next_u64();  // estimator stream, unused by the baselines

    SynthConfig cfg;
    cfg.n = 400;
    cfg.d = 8;
    cfg.seed = dgp_seed;
    cfg.coef_seed = 11;
    Dataset data = generate_synthetic(cfg);
    data = sample_annotations(data, 0.2, sample_seed);
    const std::vector<int> labels = synth_predictions(data, 1.0, pred_seed);
    const std::vector<double> preds(labels.begin(), labels.end());
    const est::Estimate direct = est::naive_estimate(data, preds);

    REQUIRE(out.raw.size() == 1);
    CHECK(out.raw[0].estimate == direct.diff);
    CHECK(out.raw[0].se == direct.se_diff);
    CHECK(out.raw[0].ci_low == direct.ci_low);
    CHECK(out.raw[0].ci_high == direct.ci_high);
    CHECK_FALSE(out.raw[0].failed);
    CHECK(out.raw[0].coder_acc == "1/1");
    CHECK(out.raw[0].machine_acc == 1.0);

    REQUIRE(out.report.rows.size() == 1);
    const ReportRow& row = out.report.rows[0];
    CHECK(row.failures == 0);
    CHECK(row.bias == direct.diff - out.report.oracle_effect);
    CHECK(row.abs_bias == std::abs(row.bias));
    CHECK(row.rmse == doctest::Approx(row.abs_bias).epsilon(1e-12));
    const bool covered =
        direct.ci_low <= out.report.oracle_effect && out.report.oracle_effect <= direct.ci_high;
    CHECK(row.coverage_95 == (covered ? 1.0 : 0.0));
}

TEST_CASE("run_monte_carlo: sri rows mirror direct estimator calls per design") {
    SUBCASE("perfect design dispatches to sri_perfect") {
        SimPlan plan;
        plan.n = 240;
        plan.d = 6;
        plan.label_fraction = 0.5;
        plan.machine_accuracies = {0.8};
        plan.replications = 1;
        plan.estimators = {"sri"};
        plan.k = 2;
        plan.base_seed = 21;
        plan.oracle_draws = 5000;
        plan.net = tiny_net();

        const MonteCarloOutput out = run_monte_carlo(plan, 1);

        rng::Stream seeds = rng::substream(21, {rng::kTagCell, 0, 0});
        const std::uint64_t dgp_seed = seeds.next_u64();
        (void)seeds.next_u64();
        const std::uint64_t sample_seed = seeds.next_u64();
        (void)seeds.next_u64();
        const std::uint64_t est_seed = seeds.next_u64();

        SynthConfig cfg;
        cfg.n = 240;
        cfg.d = 6;
        cfg.seed = dgp_seed;
        cfg.coef_seed = 21;
        Dataset data = generate_synthetic(cfg);
        data = sample_annotations(data, 0.5, sample_seed);
        const est::Estimate direct = est::sri_perfect(data, 2, plan.net, est_seed);

        REQUIRE(out.raw.size() == 1);
        REQUIRE_FALSE(out.raw[0].failed);
        CHECK(out.raw[0].estimate == direct.diff);
        CHECK(out.raw[0].se == direct.se_diff);
    }

    SUBCASE("noisy design dispatches to sri_noisy") {
        // d = 32 keeps the label distribution balanced enough for the
        // error-rate recovery to stay well conditioned at this sample size.
        SimPlan plan;
        plan.design = Design::kNoisy;
        plan.n = 2400;
        plan.d = 32;
        plan.label_fraction = 0.5;
        plan.machine_accuracies = {0.7};
        plan.coder_accuracies = {{0.9, 0.8}};
        plan.replications = 1;
        plan.estimators = {"sri"};
        plan.k = 2;
        plan.base_seed = 34;
        plan.oracle_draws = 5000;
        plan.net = tiny_net();

        const MonteCarloOutput out = run_monte_carlo(plan, 1);

        rng::Stream seeds = rng::substream(34, {rng::kTagCell, 0, 0});
        const std::uint64_t dgp_seed = seeds.next_u64();
        const std::uint64_t corrupt_seed = seeds.next_u64();
        const std::uint64_t sample_seed = seeds.next_u64();
        (void)seeds.next_u64();
        const std::uint64_t est_seed = seeds.next_u64();

        SynthConfig cfg;
        cfg.n = 2400;
        cfg.d = 32;
        cfg.seed = dgp_seed;
        cfg.coef_seed = 34;
        Dataset data = generate_synthetic(cfg);
        data = corrupt_labels(data, {0.9, 0.8}, corrupt_seed);
        data = sample_annotations(data, 0.5, sample_seed);
        const est::Estimate direct = est::sri_noisy(data, 2, plan.net, est_seed);

        REQUIRE(out.raw.size() == 1);
        REQUIRE_FALSE(out.raw[0].failed);
        CHECK(out.raw[0].estimate == direct.diff);
        CHECK(out.raw[0].se == direct.se_diff);
        CHECK(out.raw[0].coder_acc == "0.9/0.8");
    }
}

TEST_CASE("run_monte_carlo: output is identical for any worker count") {
    const SimPlan plan = baseline_plan();
    const MonteCarloOutput serial = run_monte_carlo(plan, 1);
    const MonteCarloOutput pooled = run_monte_carlo(plan, 3);
    CHECK(report_to_csv(serial.report) == report_to_csv(pooled.report));
    CHECK(raw_to_csv(serial.raw) == raw_to_csv(pooled.raw));

    const MonteCarloOutput rerun = run_monte_carlo(plan, 3);
    CHECK(report_to_csv(pooled.report) == report_to_csv(rerun.report));
    CHECK(raw_to_csv(pooled.raw) == raw_to_csv(rerun.raw));
}

TEST_CASE("run_monte_carlo: report rows recompute exactly from the raw rows") {
    const SimPlan plan = baseline_plan();
    const MonteCarloOutput out = run_monte_carlo(plan, 2);

    const int cells = plan.num_cells();
    const int nest = static_cast<int>(plan.estimators.size());
    REQUIRE(static_cast<int>(out.report.rows.size()) == cells * nest);
    REQUIRE(static_cast<int>(out.raw.size()) == cells * plan.replications * nest);

    for (int cell = 0; cell < cells; ++cell) {
        for (int e = 0; e < nest; ++e) {
            const ReportRow& row = out.report.rows[static_cast<std::size_t>(cell * nest + e)];
            CHECK(row.estimator == plan.estimators[static_cast<std::size_t>(e)]);

            double sum_est = 0.0, sum_sq = 0.0, sum_se = 0.0;
            int ok = 0, covered = 0, failures = 0;
            for (int rep = 0; rep < plan.replications; ++rep) {
                const RawRow& raw =
                    out.raw[static_cast<std::size_t>((cell * plan.replications + rep) * nest + e)];
                CHECK(raw.cell == cell);
                CHECK(raw.rep == rep);
                CHECK(raw.estimator == row.estimator);
                if (raw.failed) {
                    ++failures;
                    continue;
                }
                ++ok;
                sum_est += raw.estimate;
                const double err = raw.estimate - out.report.oracle_effect;
                sum_sq += err * err;
                sum_se += raw.se;
                if (raw.ci_low <= out.report.oracle_effect &&
                    out.report.oracle_effect <= raw.ci_high)
                    ++covered;
            }
            REQUIRE(ok > 0);
            CHECK(row.failures == failures);
            CHECK(row.bias == doctest::Approx(sum_est / ok - out.report.oracle_effect).epsilon(1e-12));
            CHECK(row.rmse == doctest::Approx(std::sqrt(sum_sq / ok)).epsilon(1e-12));
            CHECK(row.mean_se == doctest::Approx(sum_se / ok).epsilon(1e-12));
            CHECK(row.coverage_95 ==
                  doctest::Approx(static_cast<double>(covered) / ok).epsilon(1e-12));
            CHECK(row.coverage_95 >= 0.0);
            CHECK(row.coverage_95 <= 1.0);
            // rmse^2 = bias^2 + variance, so the rmse can never undercut the bias.
            CHECK(row.rmse + 1e-12 >= row.abs_bias);
        }
    }
}

TEST_CASE("run_monte_carlo: failing replications are counted, not fatal") {
    // Two units and two folds leave each fold's training side with a single
    // unit, so the propensity fit cannot see both T values and every
    // replication fails.
    SimPlan plan;
    plan.n = 2;
    plan.d = 4;
    plan.label_fraction = 1.0;
    plan.machine_accuracies = {0.9};
    plan.replications = 3;
    plan.estimators = {"sri"};
    plan.k = 2;
    plan.base_seed = 5;
    plan.oracle_draws = 1000;

    const MonteCarloOutput out = run_monte_carlo(plan, 1);
    REQUIRE(out.raw.size() == 3);
    for (const RawRow& raw : out.raw) {
        CHECK(raw.failed);
        CHECK_FALSE(raw.error.empty());
        CHECK(contains(raw.error, "sri_perfect"));
        CHECK_FALSE(contains(raw.error, ","));  // sanitised for the flat CSV
    }

    REQUIRE(out.report.rows.size() == 1);
    const ReportRow& row = out.report.rows[0];
    CHECK(row.failures == 3);
    CHECK(std::isnan(row.bias));
    CHECK(std::isnan(row.rmse));
    CHECK(std::isnan(row.coverage_95));
    CHECK(contains(report_to_csv(out.report), "nan"));
}

TEST_CASE("run_monte_carlo: runtimes stay zero unless timings are requested") {
    SimPlan plan = baseline_plan();
    plan.replications = 2;
    plan.machine_accuracies = {0.8};

    const MonteCarloOutput silent = run_monte_carlo(plan, 1, false);
    for (const RawRow& raw : silent.raw) CHECK(raw.runtime == 0.0);
    for (const ReportRow& row : silent.report.rows) CHECK(row.mean_runtime == 0.0);

    const MonteCarloOutput timed = run_monte_carlo(plan, 1, true);
    double max_runtime = 0.0;
    for (const RawRow& raw : timed.raw) {
        CHECK(raw.runtime >= 0.0);
        max_runtime = std::max(max_runtime, raw.runtime);
    }
    CHECK(max_runtime > 0.0);
}

TEST_CASE("resolve_workers: flag beats SRI_WORKERS beats hardware") {
    const char* saved = std::getenv("SRI_WORKERS");
    const std::string saved_value = saved ? saved : "";

    setenv("SRI_WORKERS", "2", 1);
    CHECK(resolve_workers(5) == 5);
    CHECK(resolve_workers(0) == 2);

    setenv("SRI_WORKERS", "zero", 1);
    CHECK_THROWS_AS((void)resolve_workers(0), InvalidArgument);
    CHECK(resolve_workers(4) == 4);  // the flag short-circuits the bad variable

    unsetenv("SRI_WORKERS");
    CHECK(resolve_workers(0) >= 1);
    CHECK_THROWS_AS((void)resolve_workers(-1), InvalidArgument);

    if (saved) setenv("SRI_WORKERS", saved_value.c_str(), 1);
}

TEST_CASE("CSV writers produce the documented headers and round-trip to disk") {
    SimPlan plan = baseline_plan();
    plan.replications = 2;
    plan.machine_accuracies = {0.8};
    const MonteCarloOutput out = run_monte_carlo(plan, 1);

    const std::string report_csv = report_to_csv(out.report);
    CHECK(contains(report_csv,
                   "design,machine_acc,coder_acc,estimator,bias,abs_bias,rmse,mean_se,"
                   "coverage_95,mean_runtime,failures,oracle_effect,oracle_se\n"));
    CHECK(contains(report_csv, "perfect,0.8,1/1,naive,"));

    const std::string raw_csv = raw_to_csv(out.raw);
    CHECK(contains(raw_csv,
                   "cell,rep,design,machine_acc,coder_acc,estimator,failed,error,estimate,se,"
                   "ci_low,ci_high,runtime\n"));
    CHECK(contains(raw_csv, "0,0,perfect,0.8,1/1,naive,0,,"));

    const std::string report_path = "harness_report_test.csv";
    const std::string raw_path = "harness_raw_test.csv";
    write_report_csv(out.report, report_path);
    write_raw_csv(out.raw, raw_path);
    CHECK(render_report_file(report_path) == render_report(report_csv));
    std::remove(report_path.c_str());
    std::remove(raw_path.c_str());

    CHECK_THROWS_AS(write_report_csv(out.report, "no_such_dir/report.csv"), IoError);
    CHECK_THROWS_AS((void)render_report_file("no_such_report.csv"), IoError);
}

TEST_CASE("render_report folds the oracle columns into a footer") {
    SimPlan plan = baseline_plan();
    plan.replications = 2;
    const MonteCarloOutput out = run_monte_carlo(plan, 1);

    const std::string text = render_report(report_to_csv(out.report));
    const std::string first_line = text.substr(0, text.find('\n'));
    CHECK(contains(first_line, "estimator"));
    CHECK(contains(first_line, "coverage_95"));
    CHECK_FALSE(contains(first_line, "oracle_effect"));
    CHECK(contains(text, "naive"));
    CHECK(contains(text, "ppi"));
    CHECK(contains(text, "dsl"));
    CHECK(contains(text, "oracle effect "));
    CHECK(contains(text, "(se "));

    CHECK_THROWS_AS((void)render_report(""), ParseError);
    CHECK_THROWS_AS((void)render_report("a,b\n1,2,3\n"), ParseError);
}

TEST_CASE("load_plan reads a plan file and names missing ones") {
    const std::string path = "harness_plan_test.txt";
    {
        std::FILE* f = std::fopen(path.c_str(), "w");
        REQUIRE(f != nullptr);
        std::fputs("n = 600\nmachine_accuracies = 0.75\n", f);
        std::fclose(f);
    }
    const SimPlan plan = load_plan(path);
    CHECK(plan.n == 600);
    CHECK(plan.machine_accuracies == std::vector<double>{0.75});
    std::remove(path.c_str());

    CHECK(contains(message_of<IoError>([] { (void)load_plan("missing_plan.txt"); }),
                   "missing_plan.txt"));
}
