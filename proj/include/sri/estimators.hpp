#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sri/dataset.hpp"
#include "sri/labelmodel.hpp"
#include "sri/network.hpp"

namespace sri::est {

// Logistic model for the propensity pi_1(Z) = P(T=1 | Z), fit by Newton
// iterations. Predictions are clamped into [c2, 1-c2]; with empty Z the
// model is the intercept alone, i.e. the clamped sample rate.
struct PropensityModel {
    Eigen::VectorXd coef;  // intercept first, then one weight per covariate
    double c2 = 0.01;

    double prob_t1(const std::vector<double>& z) const;
    // pi_t(Z): prob_t1 for t=1, its complement for t=0.
    double prob(int t, const std::vector<double>& z) const;
};

// Least-squares regression of the network's outcome predictions on Z within
// one treatment arm: the m-bar nuisance. Constant model when Z is empty.
struct MbarModel {
    Eigen::VectorXd coef;  // intercept first

    double predict(const std::vector<double>& z) const;
};

// The full nuisance bundle one fold's influence values are evaluated with.
// mbar is indexed [outcome][t]: a single outcome row for the perfect
// variant, one per class for the noisy variant.
struct NuisanceSet {
    net::FittedNetwork network;
    PropensityModel propensity;
    std::vector<std::array<MbarModel, 2>> mbar;
    double s_prob = 0.0;  // P(S=1), the labeled fraction of the training data
};

// A point estimate of the covariate-adjusted outcome means and their
// difference, with influence-function standard errors. psi_values holds the
// per-unit influence contributions for the difference; their mean is zero at
// the returned estimate by construction.
struct Estimate {
    std::string estimator;
    std::array<double, 2> psi_t{0.0, 0.0};
    double diff = 0.0;
    std::array<double, 2> se_t{0.0, 0.0};
    double se_diff = 0.0;
    double ci_low = 0.0;   // diff - 1.96 * se_diff
    double ci_high = 0.0;  // diff + 1.96 * se_diff
    std::vector<double> psi_values;
    int n = 0;
    int k = 0;              // fold count; 0 for estimators without cross-fitting
    std::uint64_t seed = 0;
};

// Fits T on Z over the listed units. Throws InvalidArgument when only one T
// value is present.
PropensityModel fit_propensity(const Dataset& data, const std::vector<int>& train_idx,
                               double c2 = 0.01);

// Regresses the network's outcome prediction (head `c` for the noisy
// variant) on Z among units with T = t in the listed split. Throws
// NumericError when the split has no such units.
MbarModel fit_mbar(const net::FittedNetwork& network, const Dataset& data,
                   const std::vector<int>& split_idx, int t, int c = 0);

// One unit's influence value
//   1{S=1}/P(S=1) * rho_t/pi_t * (Ltilde - mu)
//   + 1{T=t}/pi_t * (mu - mbar_t(Z)) + mbar_t(Z) - psi
// with mu and rho taken from the nuisance network. Coder 1's label is the
// outcome when several coders are present.
double eif_perfect(const Observation& obs, const NuisanceSet& nu, int t, double psi);

// The noisy-annotation analogue for class c: the surrogate outcome
// M_c(label_1, label_2) replaces the label and outcome head c supplies
// mu_c; mbar is the per-class row of the nuisance set.
double eif_noisy(const Observation& obs, const NuisanceSet& nu, const lm::CoderErrorModel& cem,
                 int t, int c, double psi_tc);

// K-fold cross-fitted estimator for perfectly annotated data. Per fold: the
// propensity is fit on all training units, the network on the labeled units
// plus half the unlabeled ones, the m-bar regression on the other unlabeled
// half (falling back to the labeled units when the training data has no
// unlabeled units), and influence contributions are evaluated on the held-out
// fold. The estimating equation is linear in Psi_t, so the solution is the
// sample mean of the non-Psi terms over all units. SE = sqrt(mean psi^2 / n).
Estimate sri_perfect(const Dataset& data, int k, const net::NetworkConfig& config,
                     std::uint64_t seed);

// The noisy-annotation estimator. Per fold the labeled training units are
// split in half: the first half identifies the coder error model, which
// turns the second half's label pairs into surrogate outcomes for network
// training; m-bar is fit per class on the second unlabeled half and the
// per-class estimating equations are solved on the held-out folds. The
// reported Psi_t = sum_c c * Psi_{t,c}. When every labeled unit's coders
// agree the label model is an exact identity and the whole procedure
// reduces, by construction, to sri_perfect on coder 1's labels.
Estimate sri_noisy(const Dataset& data, int k, const net::NetworkConfig& config,
                   std::uint64_t seed);

// Difference of prediction means between T groups; the biased baseline.
Estimate naive_estimate(const Dataset& data, const std::vector<double>& preds);

// Bias-corrected baselines. Both subtract the labeled-subset mean of
// (prediction - label); DSL's first term averages predictions over the whole
// T group, PPI's over its unlabeled part only. Labels are coder 1's.
Estimate ppi_estimate(const Dataset& data, const std::vector<double>& preds);
Estimate dsl_estimate(const Dataset& data, const std::vector<double>& preds);

// {estimator, psi_0, psi_1, diff, se_diff, ci_low, ci_high, n, k, seed}
std::string estimate_to_json(const Estimate& est);
Estimate estimate_from_json(const std::string& text);

namespace detail {

// Least squares with an intercept column prepended; x is n x p of raw
// covariates. Exposed for direct testing.
Eigen::VectorXd ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

}  // namespace detail

}  // namespace sri::est
