#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "sri/dataset.hpp"

namespace sri::lm {

// Empirical joint distributions of the two coders' labels over labeled
// units, per stratum. Matrices are (C+1)x(C+1) with rows indexing coder 1's
// label and columns coder 2's.
struct JointMatrices {
    int num_classes = 2;
    int num_strata = 1;
    std::vector<std::array<Eigen::MatrixXd, 2>> counts;  // [stratum][t], raw cell counts
    std::vector<std::array<Eigen::MatrixXd, 2>> m_t;     // P(l, m, T=t | stratum, S=1)
    std::vector<Eigen::MatrixXd> m;                      // P(l, m | stratum, S=1)
    std::vector<std::array<Eigen::MatrixXd, 2>> b_t;     // P(l, m | T=t, stratum, S=1)
    std::vector<double> stratum_share;                   // labeled share per stratum
};

// Recovered coder confusion matrices. a[j] is column-stochastic with entry
// (l, c) = P(coder j labels l | true class c). class_dist is the recovered
// marginal class distribution, needed to collapse off-diagonal error mass
// into the scalar P(label = c | class != c) used by surrogate_outcome.
struct CoderErrorModel {
    std::array<Eigen::MatrixXd, 2> a;
    Eigen::VectorXd class_dist;

    // All confusion diagonals exceed 0.5. When false the downstream
    // estimators should not be trusted, but recovery itself succeeded.
    bool valid = true;

    struct Diagnostics {
        double min_eigen_gap = 0.0;   // smallest |lambda_i - lambda_j| across systems
        double max_imag = 0.0;        // largest imaginary residue seen
        double min_diag_margin = 0.0; // min over columns of diag - largest off-diagonal
        double condition_m = 0.0;     // worst condition number of m across strata
    } diagnostics;
};

struct ThetaEstimate {
    // theta[stratum][t]: P(L=c | T=t, stratum), clipped to [0,1] and
    // renormalized. raw keeps the pre-clip diagonal for diagnostics.
    std::vector<std::array<Eigen::VectorXd, 2>> theta;
    std::vector<std::array<Eigen::VectorXd, 2>> raw;
};

// Tabulates the labeled units. z_column = -1 pools everything into one
// stratum; otherwise that covariate must hold small nonnegative integers and
// each value becomes a stratum. Requires exactly two coders and at least one
// labeled unit in every (t, stratum) cell.
JointMatrices build_joint_matrices(const Dataset& data, int z_column = -1);

// Double-negative-control recovery: eigendecomposes m_t * m^-1 (coder 1
// system) and m_t' * m^-T (coder 2 system) per (t, stratum), rescales each
// eigenvector to sum one, permutes so every column's maximum sits on the
// diagonal, and averages the estimates over all systems. Errors on
// near-singular m (condition > 1e8), eigenvalue gaps below 1e-6, imaginary
// components above 1e-6, or an ambiguous permutation ("Assumption 8
// violated").
CoderErrorModel recover_error_matrices(const JointMatrices& jm);

// theta(t, stratum) = diag(a1^-1 * b_t * a2^-T), clipped and renormalized.
ThetaEstimate recover_theta(const JointMatrices& jm, const CoderErrorModel& cem);

// The per-unit surrogate outcome
//   M_c(l1, l2) = prod_j (1{lj = c} - p_j) / (P(lj = c | L = c) - p_j)
// with p_j = P(coder j says c | L != c), computed by averaging coder j's
// off-diagonal row-c entries weighted by the recovered class distribution.
// Errors with "uninformative coder" when a denominator is at or below 1e-3.
double surrogate_outcome(int l1, int l2, const CoderErrorModel& cem, int c);

std::string coder_error_model_to_json(const CoderErrorModel& cem);
CoderErrorModel coder_error_model_from_json(const std::string& text);

namespace detail {

// One system's eigendecomposition, rescaled and permuted as above. The
// closed-form path solves the 2x2 quadratic directly; the general path uses
// a QR-iteration eigensolver. Both must agree (tested, not assumed).
struct EigenRecovery {
    Eigen::MatrixXd a;
    double min_gap = 0.0;
    double max_imag = 0.0;
};
EigenRecovery recover_from_system(const Eigen::MatrixXd& g, bool closed_form_2x2);

}  // namespace detail

}  // namespace sri::lm
