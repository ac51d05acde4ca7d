#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "sri/dataset.hpp"

// Assumption-checking toolkit: a stratified equivalence permutation test for
// the coder-independence conditions, plus the two direct checks (coder
// agreement rates and confusion against researcher gold labels) from the
// recommended annotation workflow.
namespace sri::diag {

// Scalar dependence measure used inside the permutation test. Distance
// correlation is the implemented default; the HSIC slot is reserved so the
// selector survives config files, but choosing it is an error for now.
enum class DependenceMeasure { kDistanceCorrelation, kHsic };

struct EquivTestConfig {
    double delta = 0.0;  // equivalence margin
    int b = 999;         // permutation count
    int pca_dims = 30;   // embedding reduced to this many components first
    std::uint64_t seed = 0;
    DependenceMeasure dependence_measure = DependenceMeasure::kDistanceCorrelation;

    void validate() const;  // throws InvalidArgument on a bad field
};

// Observed statistics for one gold-label stratum. d_* are the raw dependence
// measures; t_* subtract the margin and clamp at zero.
struct StratumStats {
    int label = 0;
    int count = 0;
    double d_coders = 0.0;   // coder 1 labels vs coder 2 labels
    double d_outcome = 0.0;  // reduced embedding vs the coder-label pair
    double t_coders = 0.0;
    double t_outcome = 0.0;
};

struct EquivTestResult {
    double p_value = 1.0;
    double t_observed = 0.0;
    std::vector<double> t_permuted;  // raw max-aggregated statistic per permutation
    std::vector<StratumStats> per_stratum;

    // Smallest margin at which the test rejects at level 0.05, found by
    // bisection on the cached permutation statistics; +infinity when no
    // margin rejects (for example when b is too small).
    double equivalence_interval = 0.0;

    std::vector<std::string> warnings;

    // Reevaluates the p-value for a different margin without re-permuting.
    // The permuted statistics are margin-free, so sweeps over delta are free.
    double p_value_at(double delta) const;
};

// Sample distance correlation between two samples (rows are units), in
// [0, 1]. A zero-variance input makes the measure undefined; it is reported
// as 0 and *degenerate (when non-null) is set.
double distance_correlation(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                            bool* degenerate = nullptr);

// Principal component scores of the rows of x (top `dims` components, sorted
// by decreasing variance). Exact eigendecomposition of the sample scatter;
// the Gram matrix is decomposed instead when units are fewer than columns.
// Each component's loading is sign-fixed so its largest-magnitude coordinate
// is positive. Columns past the rank of the centered data are zero.
Eigen::MatrixXd pca_reduce(const Eigen::MatrixXd& x, int dims);

// Stratified equivalence permutation test on the gold-labeled subset (units
// with s = 1, a gold label, and two coder labels). Within each gold stratum
// two statistics are formed: dependence between the coder labels (one-hot
// encoded) and dependence between the PCA-reduced embedding and the
// concatenated label pair. The observed statistic subtracts the margin and
// is compared against raw statistics recomputed under independent
// within-stratum permutations of each coder's labels; rejection (small p)
// supports independence within the margin.
EquivTestResult equivalence_permutation_test(const Dataset& data, const EquivTestConfig& config);

enum class CheckStatus { kPass, kBorderline, kFail, kNotEvaluable };

// One empirical agreement rate P(both coders say l, T = t | stratum, S = 1).
// Status compares the rate against 1/2: strictly above passes, exactly at
// the boundary is flagged borderline, and a stratum with no labeled units is
// not evaluable. t is -1 when rates are pooled over treatment levels.
struct AgreementCell {
    int stratum = 0;
    int t = 0;
    int label = 0;
    int numer = 0;
    int denom = 0;
    double rate = 0.0;
    CheckStatus status = CheckStatus::kNotEvaluable;
};

struct AgreementReport {
    bool pooled_t = false;
    int num_strata = 1;
    std::vector<AgreementCell> cells;
};

// Coder agreement rates from the first two coders over labeled units.
// z_column selects the covariate holding small nonnegative integer stratum
// ids, -1 pools everything into one stratum. pool_t drops the treatment
// split, reporting P(both coders say l | stratum, S = 1) instead.
AgreementReport agreement_check(const Dataset& data, int z_column = -1, bool pool_t = false);

struct AccuracyReport {
    int coder = 0;
    Eigen::MatrixXd counts;     // rows gold class, columns coded label
    Eigen::MatrixXd confusion;  // counts row-normalized; zero rows where gold class absent
    std::vector<CheckStatus> per_class;  // pass iff diagonal > 1/2
    bool all_pass = false;
};

// Empirical confusion matrix of one coder against the gold labels on units
// that carry both, with the per-class majority-correctness check.
AccuracyReport accuracy_check(const Dataset& data, int coder);

std::string equiv_result_to_json(const EquivTestResult& result);
std::string agreement_report_to_json(const AgreementReport& report);
std::string accuracy_report_to_json(const AccuracyReport& report);

}  // namespace sri::diag
