#include "sri/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <json.hpp>

#include "sri/common.hpp"
#include "sri/rng.hpp"

namespace sri::diag {

namespace {

constexpr double kLevel = 0.05;  // level the equivalence interval targets

// Pairwise Euclidean distances between the rows of x.
Eigen::MatrixXd row_distances(const Eigen::MatrixXd& x) {
    const Eigen::Index n = x.rows();
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = (x.row(i) - x.row(j)).norm();
            d(i, j) = v;
            d(j, i) = v;
        }
    return d;
}

// One-hot encoded labels are unit vectors, so their distance is 0 on
// agreement and sqrt(2) otherwise.
Eigen::MatrixXd label_distances(const std::vector<int>& l) {
    const Eigen::Index n = static_cast<Eigen::Index>(l.size());
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    const double mismatch = std::sqrt(2.0);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            if (l[static_cast<std::size_t>(i)] != l[static_cast<std::size_t>(j)]) {
                d(i, j) = mismatch;
                d(j, i) = mismatch;
            }
    return d;
}

// Distances of the concatenated one-hot pair: sqrt(2 * #disagreeing slots).
Eigen::MatrixXd pair_distances(const std::vector<int>& l1, const std::vector<int>& l2) {
    const Eigen::Index n = static_cast<Eigen::Index>(l1.size());
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const std::size_t a = static_cast<std::size_t>(i);
            const std::size_t b = static_cast<std::size_t>(j);
            const int k = (l1[a] != l1[b] ? 1 : 0) + (l2[a] != l2[b] ? 1 : 0);
            if (k > 0) {
                const double v = std::sqrt(2.0 * k);
                d(i, j) = v;
                d(j, i) = v;
            }
        }
    return d;
}

// A doubly-centered distance matrix with its distance variance. A sample
// with zero spread has an all-zero distance matrix; the measure is undefined
// there and callers report 0 with a flag instead.
struct CenteredDist {
    Eigen::MatrixXd a;
    double dvar = 0.0;
    bool degenerate = false;
};

CenteredDist center_distances(Eigen::MatrixXd d) {
    CenteredDist out;
    out.degenerate = d.size() == 0 || d.maxCoeff() <= 0.0;
    const Eigen::VectorXd rm = d.rowwise().mean();
    const double gm = d.mean();
    d.colwise() -= rm;
    d.rowwise() -= rm.transpose();
    d.array() += gm;
    out.dvar = d.array().square().mean();
    out.a = std::move(d);
    return out;
}

double dcor_centered(const CenteredDist& x, const CenteredDist& y, bool* degenerate) {
    if (x.degenerate || y.degenerate) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    const double dcov2 = (x.a.array() * y.a.array()).mean();
    const double r2 = std::max(dcov2, 0.0) / std::sqrt(x.dvar * y.dvar);
    return std::sqrt(std::clamp(r2, 0.0, 1.0));
}

std::vector<int> apply_permutation(const std::vector<int>& l, const std::vector<int>& perm) {
    std::vector<int> out(l.size());
    for (std::size_t i = 0; i < l.size(); ++i)
        out[i] = l[static_cast<std::size_t>(perm[i])];
    return out;
}

const char* status_name(CheckStatus s) {
    switch (s) {
        case CheckStatus::kPass: return "pass";
        case CheckStatus::kBorderline: return "borderline";
        case CheckStatus::kFail: return "fail";
        case CheckStatus::kNotEvaluable: return "not_evaluable";
    }
    return "unknown";
}

// Stratum ids from a covariate column holding small nonnegative integers;
// column -1 pools everything. Same contract as the label-model tabulation.
int resolve_strata(const Dataset& data, int z_column, const char* caller,
                   std::vector<int>& stratum_of) {
    stratum_of.assign(static_cast<std::size_t>(data.n()), 0);
    if (z_column < 0) return 1;
    int num_strata = 1;
    for (int i = 0; i < data.n(); ++i) {
        const double z = data.obs[static_cast<std::size_t>(i)].z[static_cast<std::size_t>(z_column)];
        if (z < 0.0 || z != std::floor(z) || z > 1000.0)
            throw InvalidArgument(std::string(caller) +
                                  ": stratum covariate must hold small nonnegative integers "
                                  "(unit " +
                                  std::to_string(i) + ")");
        stratum_of[static_cast<std::size_t>(i)] = static_cast<int>(z);
        num_strata = std::max(num_strata, static_cast<int>(z) + 1);
    }
    return num_strata;
}

}  // namespace

void EquivTestConfig::validate() const {
    if (!std::isfinite(delta) || delta < 0.0)
        throw InvalidArgument("EquivTestConfig: delta must be a finite nonnegative real");
    if (b < 1) throw InvalidArgument("EquivTestConfig: b must be at least 1");
    if (pca_dims < 1) throw InvalidArgument("EquivTestConfig: pca_dims must be positive");
}

double distance_correlation(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                            bool* degenerate) {
    if (x.rows() != y.rows())
        throw InvalidArgument("distance_correlation: sample counts differ (" +
                              std::to_string(x.rows()) + " vs " + std::to_string(y.rows()) + ")");
    if (x.rows() < 2)
        throw InvalidArgument("distance_correlation: need at least 2 units, got " +
                              std::to_string(x.rows()));
    if (degenerate) *degenerate = false;
    return dcor_centered(center_distances(row_distances(x)), center_distances(row_distances(y)),
                         degenerate);
}

Eigen::MatrixXd pca_reduce(const Eigen::MatrixXd& x, int dims) {
    if (x.rows() < 1) throw InvalidArgument("pca_reduce: empty sample");
    if (dims < 1) throw InvalidArgument("pca_reduce: dims must be positive");
    if (dims > x.cols())
        throw InvalidArgument("pca_reduce: dims " + std::to_string(dims) +
                              " exceeds the column count " + std::to_string(x.cols()));

    const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
    const bool gram = x.rows() <= x.cols();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        gram ? Eigen::MatrixXd(xc * xc.transpose()) : Eigen::MatrixXd(xc.transpose() * xc));
    if (es.info() != Eigen::Success) throw NumericError("pca_reduce: eigendecomposition failed");

    const Eigen::VectorXd& vals = es.eigenvalues();  // ascending
    const double lead = std::max(0.0, vals(vals.size() - 1));
    const double tol = lead * 1e-12;

    Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(x.rows(), dims);
    for (int k = 0; k < dims; ++k) {
        const Eigen::Index idx = vals.size() - 1 - k;
        if (idx < 0 || lead <= 0.0 || vals(idx) <= tol) break;  // rank exhausted
        Eigen::VectorXd loading;
        if (gram) {
            loading = xc.transpose() * es.eigenvectors().col(idx);
            loading /= loading.norm();
        } else {
            loading = es.eigenvectors().col(idx);
        }
        Eigen::Index jmax = 0;
        loading.cwiseAbs().maxCoeff(&jmax);
        if (loading(jmax) < 0.0) loading = -loading;
        scores.col(k) = xc * loading;
    }
    return scores;
}

double EquivTestResult::p_value_at(double delta) const {
    if (!std::isfinite(delta) || delta < 0.0)
        throw InvalidArgument("p_value_at: delta must be a finite nonnegative real");
    double t = 0.0;
    for (const StratumStats& s : per_stratum) {
        t = std::max(t, std::max(0.0, s.d_coders - delta));
        t = std::max(t, std::max(0.0, s.d_outcome - delta));
    }
    long long below = 0;
    for (double v : t_permuted)
        if (v <= t) ++below;
    return (1.0 + static_cast<double>(below)) / (static_cast<double>(t_permuted.size()) + 1.0);
}

EquivTestResult equivalence_permutation_test(const Dataset& data, const EquivTestConfig& config) {
    config.validate();
    if (config.dependence_measure != DependenceMeasure::kDistanceCorrelation)
        throw InvalidArgument(
            "equivalence_permutation_test: only distance correlation is implemented");
    data.validate();
    if (data.num_coders < 2)
        throw InvalidArgument("equivalence_permutation_test: 2 coders required, dataset has " +
                              std::to_string(data.num_coders));
    if (config.pca_dims > data.d)
        throw InvalidArgument("equivalence_permutation_test: pca_dims " +
                              std::to_string(config.pca_dims) +
                              " exceeds the embedding dimension " + std::to_string(data.d));

    // The test runs on the researcher-coded subset: units that are labeled
    // and carry a gold label.
    std::vector<int> idx;
    for (int i = 0; i < data.n(); ++i) {
        const Observation& o = data.obs[static_cast<std::size_t>(i)];
        if (o.s == 1 && o.gold.has_value()) idx.push_back(i);
    }
    if (idx.empty())
        throw InvalidArgument("equivalence_permutation_test: no labeled units with gold labels");

    std::vector<std::vector<int>> members(static_cast<std::size_t>(data.num_classes));
    for (int i : idx)
        members[static_cast<std::size_t>(*data.obs[static_cast<std::size_t>(i)].gold)].push_back(i);

    // One global PCA fit over the test units, then per-stratum slices.
    Eigen::MatrixXd ymat(static_cast<Eigen::Index>(idx.size()), data.d);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const Observation& o = data.obs[static_cast<std::size_t>(idx[r])];
        for (int j = 0; j < data.d; ++j)
            ymat(static_cast<Eigen::Index>(r), j) = o.y[static_cast<std::size_t>(j)];
    }
    const Eigen::MatrixXd reduced = pca_reduce(ymat, config.pca_dims);
    std::vector<int> row_of(static_cast<std::size_t>(data.n()), -1);
    for (std::size_t r = 0; r < idx.size(); ++r)
        row_of[static_cast<std::size_t>(idx[r])] = static_cast<int>(r);

    struct Stratum {
        int label = 0;
        std::vector<int> l1, l2;
        CenteredDist y;
    };
    std::vector<Stratum> strata;
    for (int l = 0; l < data.num_classes; ++l) {
        const std::vector<int>& m = members[static_cast<std::size_t>(l)];
        if (m.empty()) continue;
        if (m.size() < 2)
            throw InvalidArgument("equivalence_permutation_test: stratum " + std::to_string(l) +
                                  " has " + std::to_string(m.size()) +
                                  " unit(s), need at least 2");
        Stratum s;
        s.label = l;
        Eigen::MatrixXd ys(static_cast<Eigen::Index>(m.size()), reduced.cols());
        for (std::size_t r = 0; r < m.size(); ++r) {
            const Observation& o = data.obs[static_cast<std::size_t>(m[r])];
            s.l1.push_back(o.labels[0]);
            s.l2.push_back(o.labels[1]);
            ys.row(static_cast<Eigen::Index>(r)) =
                reduced.row(row_of[static_cast<std::size_t>(m[r])]);
        }
        s.y = center_distances(row_distances(ys));
        strata.push_back(std::move(s));
    }

    EquivTestResult result;
    for (const Stratum& s : strata) {
        StratumStats st;
        st.label = s.label;
        st.count = static_cast<int>(s.l1.size());
        bool deg1 = false;
        bool deg2 = false;
        st.d_coders = dcor_centered(center_distances(label_distances(s.l1)),
                                    center_distances(label_distances(s.l2)), &deg1);
        st.d_outcome = dcor_centered(s.y, center_distances(pair_distances(s.l1, s.l2)), &deg2);
        st.t_coders = std::max(0.0, st.d_coders - config.delta);
        st.t_outcome = std::max(0.0, st.d_outcome - config.delta);
        if (deg1)
            result.warnings.push_back("stratum " + std::to_string(s.label) +
                                      ": zero-variance coder labels, measure reported as 0");
        if (deg2)
            result.warnings.push_back("stratum " + std::to_string(s.label) +
                                      ": zero-variance embedding channel, measure reported as 0");
        result.per_stratum.push_back(st);
    }

    // Each coder's labels are permuted independently within each stratum,
    // breaking both the coder-coder pairing and the pair's tie to the
    // embedding while preserving the stratum label margins. The permuted
    // statistics stay raw; the margin shifts the observed side only, so the
    // cached draws can be reused for any delta.
    for (int b = 1; b <= config.b; ++b) {
        rng::Stream st = rng::substream(config.seed, {rng::kTagPerm, static_cast<std::uint64_t>(b)});
        double tb = 0.0;
        for (const Stratum& s : strata) {
            std::vector<int> perm1(s.l1.size());
            std::vector<int> perm2(s.l1.size());
            for (std::size_t i = 0; i < perm1.size(); ++i) perm1[i] = perm2[i] = static_cast<int>(i);
            st.shuffle(perm1);
            st.shuffle(perm2);
            const std::vector<int> a = apply_permutation(s.l1, perm1);
            const std::vector<int> c = apply_permutation(s.l2, perm2);
            tb = std::max(tb, dcor_centered(center_distances(label_distances(a)),
                                            center_distances(label_distances(c)), nullptr));
            tb = std::max(tb, dcor_centered(s.y, center_distances(pair_distances(a, c)), nullptr));
        }
        result.t_permuted.push_back(tb);
    }

    result.p_value = result.p_value_at(config.delta);
    double t_obs = 0.0;
    for (const StratumStats& s : result.per_stratum)
        t_obs = std::max({t_obs, s.t_coders, s.t_outcome});
    result.t_observed = t_obs;

    if (config.b < 19)
        result.warnings.push_back("b = " + std::to_string(config.b) +
                                  " cannot resolve level 0.05 (minimum p-value is 1/" +
                                  std::to_string(config.b + 1) + ")");

    // Smallest rejecting margin by bisection. The p-value is a nonincreasing
    // step function of delta, so the bracket below always closes on the jump.
    double dmax = 0.0;
    for (const StratumStats& s : result.per_stratum)
        dmax = std::max({dmax, s.d_coders, s.d_outcome});
    if (result.p_value_at(0.0) <= kLevel) {
        result.equivalence_interval = 0.0;
    } else if (result.p_value_at(dmax) > kLevel) {
        result.equivalence_interval = std::numeric_limits<double>::infinity();
    } else {
        double lo = 0.0;
        double hi = dmax;
        for (int it = 0; it < 80; ++it) {
            const double mid = 0.5 * (lo + hi);
            (result.p_value_at(mid) <= kLevel ? hi : lo) = mid;
        }
        result.equivalence_interval = hi;
    }
    return result;
}

AgreementReport agreement_check(const Dataset& data, int z_column, bool pool_t) {
    data.validate();
    if (data.num_coders < 2)
        throw InvalidArgument("agreement_check: 2 coders required, dataset has " +
                              std::to_string(data.num_coders));
    if (z_column >= data.p) throw InvalidArgument("agreement_check: z_column out of range");

    std::vector<int> stratum_of;
    const int num_strata = resolve_strata(data, z_column, "agreement_check", stratum_of);

    const int c = data.num_classes;
    const int tlevels = pool_t ? 1 : 2;
    std::vector<int> denom(static_cast<std::size_t>(num_strata), 0);
    std::vector<int> numer(static_cast<std::size_t>(num_strata * tlevels * c), 0);
    for (int i = 0; i < data.n(); ++i) {
        const Observation& o = data.obs[static_cast<std::size_t>(i)];
        if (o.s != 1) continue;
        const int st = stratum_of[static_cast<std::size_t>(i)];
        ++denom[static_cast<std::size_t>(st)];
        if (o.labels[0] != o.labels[1]) continue;
        const int t = pool_t ? 0 : o.t;
        ++numer[static_cast<std::size_t>((st * tlevels + t) * c + o.labels[0])];
    }

    AgreementReport report;
    report.pooled_t = pool_t;
    report.num_strata = num_strata;
    for (int st = 0; st < num_strata; ++st)
        for (int t = 0; t < tlevels; ++t)
            for (int l = 0; l < c; ++l) {
                AgreementCell cell;
                cell.stratum = st;
                cell.t = pool_t ? -1 : t;
                cell.label = l;
                cell.numer = numer[static_cast<std::size_t>((st * tlevels + t) * c + l)];
                cell.denom = denom[static_cast<std::size_t>(st)];
                if (cell.denom == 0) {
                    cell.status = CheckStatus::kNotEvaluable;
                } else {
                    cell.rate = static_cast<double>(cell.numer) / cell.denom;
                    cell.status = 2 * cell.numer == cell.denom ? CheckStatus::kBorderline
                                  : cell.rate > 0.5            ? CheckStatus::kPass
                                                               : CheckStatus::kFail;
                }
                report.cells.push_back(cell);
            }
    return report;
}

AccuracyReport accuracy_check(const Dataset& data, int coder) {
    data.validate();
    if (coder < 0 || coder >= data.num_coders)
        throw InvalidArgument("accuracy_check: coder " + std::to_string(coder) +
                              " out of range, dataset has " + std::to_string(data.num_coders));

    const int c = data.num_classes;
    AccuracyReport report;
    report.coder = coder;
    report.counts = Eigen::MatrixXd::Zero(c, c);
    bool any = false;
    for (const Observation& o : data.obs) {
        if (o.s != 1 || !o.gold.has_value()) continue;
        report.counts(*o.gold, o.labels[static_cast<std::size_t>(coder)]) += 1.0;
        any = true;
    }
    if (!any) throw InvalidArgument("accuracy_check: no labeled units with gold labels");

    report.confusion = Eigen::MatrixXd::Zero(c, c);
    report.per_class.assign(static_cast<std::size_t>(c), CheckStatus::kNotEvaluable);
    report.all_pass = true;
    for (int g = 0; g < c; ++g) {
        const double total = report.counts.row(g).sum();
        if (total <= 0.0) {
            report.all_pass = false;
            continue;
        }
        report.confusion.row(g) = report.counts.row(g) / total;
        const bool pass = report.confusion(g, g) > 0.5;
        report.per_class[static_cast<std::size_t>(g)] =
            pass ? CheckStatus::kPass : CheckStatus::kFail;
        if (!pass) report.all_pass = false;
    }
    return report;
}

std::string equiv_result_to_json(const EquivTestResult& result) {
    nlohmann::json j;
    j["p_value"] = result.p_value;
    j["t_observed"] = result.t_observed;
    j["t_permuted"] = result.t_permuted;
    j["equivalence_interval"] = result.equivalence_interval;  // null when infinite
    j["per_stratum"] = nlohmann::json::array();
    for (const StratumStats& s : result.per_stratum)
        j["per_stratum"].push_back({{"label", s.label},
                                    {"count", s.count},
                                    {"d_coders", s.d_coders},
                                    {"d_outcome", s.d_outcome},
                                    {"t_coders", s.t_coders},
                                    {"t_outcome", s.t_outcome}});
    j["warnings"] = result.warnings;
    return j.dump();
}

std::string agreement_report_to_json(const AgreementReport& report) {
    nlohmann::json j;
    j["pooled_t"] = report.pooled_t;
    j["num_strata"] = report.num_strata;
    j["cells"] = nlohmann::json::array();
    for (const AgreementCell& c : report.cells)
        j["cells"].push_back({{"stratum", c.stratum},
                              {"t", c.t},
                              {"label", c.label},
                              {"numer", c.numer},
                              {"denom", c.denom},
                              {"rate", c.rate},
                              {"status", status_name(c.status)}});
    return j.dump();
}

std::string accuracy_report_to_json(const AccuracyReport& report) {
    nlohmann::json j;
    j["coder"] = report.coder;
    const int c = static_cast<int>(report.counts.rows());
    j["num_classes"] = c;
    std::vector<double> counts;
    std::vector<double> confusion;
    for (int r = 0; r < c; ++r)
        for (int l = 0; l < c; ++l) {
            counts.push_back(report.counts(r, l));
            confusion.push_back(report.confusion(r, l));
        }
    j["counts"] = counts;        // row-major, rows index the gold class
    j["confusion"] = confusion;  // row-major, rows sum to 1 where evaluable
    j["per_class"] = nlohmann::json::array();
    for (CheckStatus s : report.per_class) j["per_class"].push_back(status_name(s));
    j["all_pass"] = report.all_pass;
    return j.dump();
}

}  // namespace sri::diag
