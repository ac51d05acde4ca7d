#include "sri/labelmodel.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "sri/common.hpp"

namespace sri::lm {

namespace {

constexpr double kCondLimit = 1e8;
constexpr double kGapLimit = 1e-6;
constexpr double kImagLimit = 1e-6;

double condition_number(const Eigen::MatrixXd& m) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const double smin = svd.singularValues().minCoeff();
    if (smin <= 0.0) return std::numeric_limits<double>::infinity();
    return svd.singularValues().maxCoeff() / smin;
}

// Scales each eigenvector column to sum one and places it at the class
// where its largest entry sits. Throws when two columns claim the same
// class, which is exactly an Assumption 8 failure.
Eigen::MatrixXd scale_and_permute(const Eigen::MatrixXd& vecs) {
    const int k = static_cast<int>(vecs.cols());
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(k, k);
    std::vector<bool> taken(static_cast<std::size_t>(k), false);
    for (int j = 0; j < k; ++j) {
        Eigen::VectorXd v = vecs.col(j);
        const double sum = v.sum();
        if (std::fabs(sum) < 1e-12)
            throw NumericError("recover_error_matrices: eigenvector sums to zero, cannot rescale");
        v /= sum;
        int cls = 0;
        v.maxCoeff(&cls);
        if (taken[static_cast<std::size_t>(cls)])
            throw NumericError("recover_error_matrices: Assumption 8 violated (two eigenvectors "
                               "peak at class " +
                               std::to_string(cls) + ")");
        taken[static_cast<std::size_t>(cls)] = true;
        out.col(cls) = v;
    }
    return out;
}

}  // namespace

namespace detail {

EigenRecovery recover_from_system(const Eigen::MatrixXd& g, bool closed_form_2x2) {
    EigenRecovery rec;
    const int k = static_cast<int>(g.rows());

    if (closed_form_2x2) {
        if (k != 2)
            throw InvalidArgument("recover_from_system: closed form only applies to 2x2 systems");
        const double tr = g(0, 0) + g(1, 1);
        const double det = g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0);
        double disc = tr * tr - 4.0 * det;
        if (disc < 0.0) {
            rec.max_imag = std::sqrt(-disc) / 2.0;
            if (rec.max_imag > kImagLimit)
                throw NumericError("recover_error_matrices: non-real decomposition");
            // A repeated eigenvalue perturbed by rounding; let the gap check
            // below report it the same way the general solver would.
            disc = 0.0;
        }
        const double root = std::sqrt(disc);
        rec.min_gap = root;
        if (root < kGapLimit)
            throw NumericError("recover_error_matrices: eigenvalue gap below 1e-6, "
                               "identification degenerate");
        Eigen::MatrixXd vecs(2, 2);
        for (int j = 0; j < 2; ++j) {
            const double lambda = (tr + (j == 0 ? root : -root)) / 2.0;
            // (g - lambda I) v = 0; pick the better-conditioned null vector.
            Eigen::Vector2d v1(g(0, 1), lambda - g(0, 0));
            Eigen::Vector2d v2(lambda - g(1, 1), g(1, 0));
            vecs.col(j) = v1.norm() >= v2.norm() ? v1 : v2;
            if (vecs.col(j).norm() == 0.0)
                throw NumericError("recover_error_matrices: degenerate eigenvector");
        }
        rec.a = scale_and_permute(vecs);
        return rec;
    }

    Eigen::EigenSolver<Eigen::MatrixXd> es(g);
    if (es.info() != Eigen::Success)
        throw NumericError("recover_error_matrices: eigensolver failed to converge");

    rec.max_imag = es.eigenvalues().imag().cwiseAbs().maxCoeff();
    rec.max_imag = std::max(rec.max_imag, es.eigenvectors().imag().cwiseAbs().maxCoeff());
    if (rec.max_imag > kImagLimit)
        throw NumericError("recover_error_matrices: non-real decomposition");

    Eigen::VectorXd vals = es.eigenvalues().real();
    rec.min_gap = std::numeric_limits<double>::infinity();
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j)
            rec.min_gap = std::min(rec.min_gap, std::fabs(vals(i) - vals(j)));
    if (rec.min_gap < kGapLimit)
        throw NumericError("recover_error_matrices: eigenvalue gap below 1e-6, "
                           "identification degenerate");

    rec.a = scale_and_permute(es.eigenvectors().real());
    return rec;
}

}  // namespace detail

JointMatrices build_joint_matrices(const Dataset& data, int z_column) {
    if (data.num_coders != 2)
        throw InvalidArgument("build_joint_matrices: exactly 2 coders required, dataset has " +
                              std::to_string(data.num_coders));
    if (z_column >= data.p)
        throw InvalidArgument("build_joint_matrices: z_column out of range");

    // Resolve strata first so the matrices can be sized.
    int num_strata = 1;
    std::vector<int> stratum_of(static_cast<std::size_t>(data.n()), 0);
    if (z_column >= 0) {
        for (int i = 0; i < data.n(); ++i) {
            const Observation& o = data.obs[static_cast<std::size_t>(i)];
            const double z = o.z[static_cast<std::size_t>(z_column)];
            if (z < 0.0 || z != std::floor(z) || z > 1000.0)
                throw InvalidArgument("build_joint_matrices: stratum covariate must hold small "
                                      "nonnegative integers (unit " +
                                      std::to_string(i) + ")");
            stratum_of[static_cast<std::size_t>(i)] = static_cast<int>(z);
            num_strata = std::max(num_strata, static_cast<int>(z) + 1);
        }
    }

    const int k = data.num_classes;
    JointMatrices jm;
    jm.num_classes = k;
    jm.num_strata = num_strata;
    jm.counts.assign(static_cast<std::size_t>(num_strata),
                     {Eigen::MatrixXd::Zero(k, k), Eigen::MatrixXd::Zero(k, k)});

    for (int i = 0; i < data.n(); ++i) {
        const Observation& o = data.obs[static_cast<std::size_t>(i)];
        if (o.s != 1) continue;
        jm.counts[static_cast<std::size_t>(stratum_of[static_cast<std::size_t>(i)])]
                 [static_cast<std::size_t>(o.t)](o.labels[0], o.labels[1]) += 1.0;
    }

    jm.m_t.resize(static_cast<std::size_t>(num_strata));
    jm.m.resize(static_cast<std::size_t>(num_strata));
    jm.b_t.resize(static_cast<std::size_t>(num_strata));
    jm.stratum_share.resize(static_cast<std::size_t>(num_strata));

    double total_labeled = 0.0;
    for (const auto& pair : jm.counts) total_labeled += pair[0].sum() + pair[1].sum();

    for (int s = 0; s < num_strata; ++s) {
        const auto& cnt = jm.counts[static_cast<std::size_t>(s)];
        const double n_s = cnt[0].sum() + cnt[1].sum();
        if (n_s == 0.0)
            throw NumericError("build_joint_matrices: no labeled units in stratum " +
                               std::to_string(s));
        for (int t = 0; t < 2; ++t) {
            const double n_ts = cnt[static_cast<std::size_t>(t)].sum();
            if (n_ts == 0.0)
                throw NumericError("build_joint_matrices: no labeled units with t=" +
                                   std::to_string(t) + " in stratum " + std::to_string(s));
            jm.m_t[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)] =
                cnt[static_cast<std::size_t>(t)] / n_s;
            jm.b_t[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)] =
                cnt[static_cast<std::size_t>(t)] / n_ts;
        }
        jm.m[static_cast<std::size_t>(s)] = (cnt[0] + cnt[1]) / n_s;
        jm.stratum_share[static_cast<std::size_t>(s)] = n_s / total_labeled;
    }
    return jm;
}

CoderErrorModel recover_error_matrices(const JointMatrices& jm) {
    const int k = jm.num_classes;
    CoderErrorModel cem;
    cem.a = {Eigen::MatrixXd::Zero(k, k), Eigen::MatrixXd::Zero(k, k)};
    cem.diagnostics.min_eigen_gap = std::numeric_limits<double>::infinity();
    cem.diagnostics.max_imag = 0.0;
    cem.diagnostics.condition_m = 0.0;

    int systems = 0;
    for (int s = 0; s < jm.num_strata; ++s) {
        const Eigen::MatrixXd& m = jm.m[static_cast<std::size_t>(s)];
        const double cond = condition_number(m);
        cem.diagnostics.condition_m = std::max(cem.diagnostics.condition_m, cond);
        if (!(cond <= kCondLimit))
            throw NumericError("recover_error_matrices: joint matrix in stratum " +
                               std::to_string(s) + " is near-singular (condition number " +
                               std::to_string(cond) + ")");
        const Eigen::MatrixXd m_inv = m.inverse();
        const Eigen::MatrixXd m_inv_t = m.transpose().inverse();

        for (int t = 0; t < 2; ++t) {
            const Eigen::MatrixXd& mt = jm.m_t[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)];
            // Coder 1: M(t) M^-1 = A1 D(t) A1^-1. Coder 2: the transposed
            // factorization gives M(t)' M^-T = A2 D(t) A2^-1.
            const Eigen::MatrixXd g1 = mt * m_inv;
            const Eigen::MatrixXd g2 = mt.transpose() * m_inv_t;
            for (int coder = 0; coder < 2; ++coder) {
                detail::EigenRecovery rec =
                    detail::recover_from_system(coder == 0 ? g1 : g2, k == 2);
                cem.a[static_cast<std::size_t>(coder)] += rec.a;
                cem.diagnostics.min_eigen_gap =
                    std::min(cem.diagnostics.min_eigen_gap, rec.min_gap);
                cem.diagnostics.max_imag = std::max(cem.diagnostics.max_imag, rec.max_imag);
            }
            ++systems;
        }
    }

    cem.diagnostics.min_diag_margin = std::numeric_limits<double>::infinity();
    for (auto& a : cem.a) {
        a /= static_cast<double>(systems);
        // Averaging sum-one columns keeps them sum-one; renormalize anyway to
        // absorb rounding.
        for (int c = 0; c < k; ++c) {
            a.col(c) /= a.col(c).sum();
            double best_off = -std::numeric_limits<double>::infinity();
            for (int l = 0; l < k; ++l)
                if (l != c) best_off = std::max(best_off, a(l, c));
            cem.diagnostics.min_diag_margin =
                std::min(cem.diagnostics.min_diag_margin, a(c, c) - best_off);
            if (a(c, c) <= 0.5) cem.valid = false;
        }
    }

    // Class distribution: m = A1 D A2', so D = diag(A1^-1 m A2^-T), averaged
    // over strata by labeled share, then cleaned up into a probability vector.
    Eigen::VectorXd dist = Eigen::VectorXd::Zero(k);
    for (int s = 0; s < jm.num_strata; ++s) {
        const Eigen::MatrixXd d = cem.a[0].inverse() * jm.m[static_cast<std::size_t>(s)] *
                                  cem.a[1].transpose().inverse();
        dist += jm.stratum_share[static_cast<std::size_t>(s)] * d.diagonal();
    }
    dist = dist.cwiseMax(0.0);
    if (dist.sum() <= 0.0)
        throw NumericError("recover_error_matrices: recovered class distribution is degenerate");
    cem.class_dist = dist / dist.sum();
    return cem;
}

ThetaEstimate recover_theta(const JointMatrices& jm, const CoderErrorModel& cem) {
    for (int j = 0; j < 2; ++j)
        if (!(condition_number(cem.a[static_cast<std::size_t>(j)]) <= kCondLimit))
            throw NumericError("recover_theta: confusion matrix for coder " + std::to_string(j + 1) +
                               " is near-singular");
    const Eigen::MatrixXd a1_inv = cem.a[0].inverse();
    const Eigen::MatrixXd a2_inv_t = cem.a[1].transpose().inverse();

    ThetaEstimate est;
    est.theta.resize(static_cast<std::size_t>(jm.num_strata));
    est.raw.resize(static_cast<std::size_t>(jm.num_strata));
    for (int s = 0; s < jm.num_strata; ++s) {
        for (int t = 0; t < 2; ++t) {
            const Eigen::VectorXd raw =
                (a1_inv * jm.b_t[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)] * a2_inv_t)
                    .diagonal();
            est.raw[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)] = raw;
            Eigen::VectorXd clipped = raw.cwiseMax(0.0).cwiseMin(1.0);
            const double sum = clipped.sum();
            if (sum <= 0.0)
                throw NumericError("recover_theta: clipped class probabilities sum to zero (t=" +
                                   std::to_string(t) + ", stratum " + std::to_string(s) + ")");
            est.theta[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)] = clipped / sum;
        }
    }
    return est;
}

double surrogate_outcome(int l1, int l2, const CoderErrorModel& cem, int c) {
    const int k = static_cast<int>(cem.a[0].rows());
    if (c < 0 || c >= k) throw InvalidArgument("surrogate_outcome: class out of range");
    if (l1 < 0 || l1 >= k || l2 < 0 || l2 >= k)
        throw InvalidArgument("surrogate_outcome: label out of range");

    const int labels[2] = {l1, l2};
    double prod = 1.0;
    for (int j = 0; j < 2; ++j) {
        const Eigen::MatrixXd& a = cem.a[static_cast<std::size_t>(j)];
        // p = P(coder says c | L != c), weighting wrong classes by the
        // recovered class distribution.
        double mass = 0.0, p = 0.0;
        for (int w = 0; w < k; ++w) {
            if (w == c) continue;
            mass += cem.class_dist(w);
            p += a(c, w) * cem.class_dist(w);
        }
        if (mass <= 1e-12)
            throw NumericError("surrogate_outcome: class distribution puts no mass off class " +
                               std::to_string(c));
        p /= mass;
        const double denom = a(c, c) - p;
        if (denom <= 1e-3)
            throw NumericError("surrogate_outcome: uninformative coder " + std::to_string(j + 1) +
                               " for class " + std::to_string(c));
        prod *= ((labels[j] == c ? 1.0 : 0.0) - p) / denom;
    }
    return prod;
}

std::string coder_error_model_to_json(const CoderErrorModel& cem) {
    nlohmann::json j;
    const int k = static_cast<int>(cem.a[0].rows());
    j["num_classes"] = k;
    for (int coder = 0; coder < 2; ++coder) {
        std::vector<double> flat;
        for (int r = 0; r < k; ++r)
            for (int c = 0; c < k; ++c) flat.push_back(cem.a[static_cast<std::size_t>(coder)](r, c));
        j["a"].push_back(flat);  // row-major
    }
    j["class_dist"] = std::vector<double>(cem.class_dist.data(), cem.class_dist.data() + k);
    j["valid"] = cem.valid;
    j["diagnostics"] = {{"min_eigen_gap", cem.diagnostics.min_eigen_gap},
                        {"max_imag", cem.diagnostics.max_imag},
                        {"min_diag_margin", cem.diagnostics.min_diag_margin},
                        {"condition_m", cem.diagnostics.condition_m}};
    return j.dump();
}

CoderErrorModel coder_error_model_from_json(const std::string& text) {
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        const int k = j.at("num_classes").get<int>();
        CoderErrorModel cem;
        for (int coder = 0; coder < 2; ++coder) {
            const auto flat = j.at("a").at(coder).get<std::vector<double>>();
            if (static_cast<int>(flat.size()) != k * k)
                throw ParseError("coder_error_model_from_json: confusion matrix size mismatch");
            cem.a[static_cast<std::size_t>(coder)].resize(k, k);
            for (int r = 0; r < k; ++r)
                for (int c = 0; c < k; ++c)
                    cem.a[static_cast<std::size_t>(coder)](r, c) =
                        flat[static_cast<std::size_t>(r * k + c)];
        }
        const auto dist = j.at("class_dist").get<std::vector<double>>();
        cem.class_dist = Eigen::Map<const Eigen::VectorXd>(dist.data(),
                                                           static_cast<Eigen::Index>(dist.size()));
        cem.valid = j.at("valid").get<bool>();
        const auto& jd = j.at("diagnostics");
        cem.diagnostics.min_eigen_gap = jd.at("min_eigen_gap").get<double>();
        cem.diagnostics.max_imag = jd.at("max_imag").get<double>();
        cem.diagnostics.min_diag_margin = jd.at("min_diag_margin").get<double>();
        cem.diagnostics.condition_m = jd.at("condition_m").get<double>();
        return cem;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("coder_error_model_from_json: ") + e.what());
    }
}

}  // namespace sri::lm
