#include "sri/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "sri/common.hpp"
#include "sri/rng.hpp"

namespace sri::est {

namespace {

constexpr double kZ95 = 1.96;

double stable_sigmoid(double a) {
    if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
    const double e = std::exp(a);
    return e / (1.0 + e);
}

double affine(const Eigen::VectorXd& coef, const std::vector<double>& z) {
    if (static_cast<std::size_t>(coef.size()) != z.size() + 1)
        throw InvalidArgument("nuisance model: covariate length " + std::to_string(z.size()) +
                              " does not match coefficient length " + std::to_string(coef.size()));
    double a = coef(0);
    for (std::size_t j = 0; j < z.size(); ++j) a += coef(static_cast<Eigen::Index>(j + 1)) * z[j];
    return a;
}

// Shared assembly: contrib arrays hold the per-unit non-Psi influence terms,
// so the closed-form solution of the estimating equation is their mean and
// the centered values are the influence function itself.
Estimate finalize(std::string name, const std::vector<double>& c0, const std::vector<double>& c1,
                  int k, std::uint64_t seed) {
    const auto n = static_cast<int>(c0.size());
    Estimate e;
    e.estimator = std::move(name);
    e.n = n;
    e.k = k;
    e.seed = seed;

    double m0 = 0.0, m1 = 0.0;
    for (int i = 0; i < n; ++i) {
        m0 += c0[static_cast<std::size_t>(i)];
        m1 += c1[static_cast<std::size_t>(i)];
    }
    m0 /= n;
    m1 /= n;
    e.psi_t = {m0, m1};
    e.diff = m1 - m0;

    e.psi_values.resize(static_cast<std::size_t>(n));
    double ss0 = 0.0, ss1 = 0.0, ssd = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d0 = c0[static_cast<std::size_t>(i)] - m0;
        const double d1 = c1[static_cast<std::size_t>(i)] - m1;
        e.psi_values[static_cast<std::size_t>(i)] = d1 - d0;
        ss0 += d0 * d0;
        ss1 += d1 * d1;
        ssd += (d1 - d0) * (d1 - d0);
    }
    const double dn = static_cast<double>(n);
    e.se_t = {std::sqrt(ss0 / dn) / std::sqrt(dn), std::sqrt(ss1 / dn) / std::sqrt(dn)};
    e.se_diff = std::sqrt(ssd / dn) / std::sqrt(dn);
    e.ci_low = e.diff - kZ95 * e.se_diff;
    e.ci_high = e.diff + kZ95 * e.se_diff;
    return e;
}

// The influence value minus its -Psi term. outcome_value is the labeled
// outcome (Ltilde or M_c) and is only read when the unit is labeled.
double eif_terms(const Observation& o, const net::HeadOutputs& out, const NuisanceSet& nu, int t,
                 int head, double outcome_value) {
    const double pi = nu.propensity.prob(t, o.z);
    const double mu = out.outcome[static_cast<std::size_t>(head)];
    const double rho = t == 1 ? out.surrogacy_score : 1.0 - out.surrogacy_score;
    const double mbar = nu.mbar[static_cast<std::size_t>(head)][static_cast<std::size_t>(t)].predict(o.z);
    double v = (o.t == t ? 1.0 : 0.0) / pi * (mu - mbar) + mbar;
    if (o.s == 1) v += (1.0 / nu.s_prob) * (rho / pi) * (outcome_value - mu);
    return v;
}

Dataset subset(const Dataset& data, const std::vector<int>& idx) {
    Dataset out;
    out.d = data.d;
    out.p = data.p;
    out.num_classes = data.num_classes;
    out.num_coders = data.num_coders;
    out.obs.reserve(idx.size());
    for (int i : idx) out.obs.push_back(data.obs[static_cast<std::size_t>(i)]);
    return out;
}

struct FoldSplit {
    std::vector<int> train;
    std::vector<int> eval;
};

FoldSplit fold_split(const FoldAssignment& fa, int fold) {
    FoldSplit fs;
    for (int i = 0; i < static_cast<int>(fa.fold_of.size()); ++i)
        (fa.fold_of[static_cast<std::size_t>(i)] == fold ? fs.eval : fs.train).push_back(i);
    return fs;
}

// First-half/second-half split after a seeded shuffle; the first half takes
// the odd unit.
std::array<std::vector<int>, 2> shuffled_halves(std::vector<int> idx, std::uint64_t seed, int fold,
                                                std::uint64_t which) {
    rng::Stream st = rng::substream(seed, {rng::kTagSplit, static_cast<std::uint64_t>(fold), which});
    st.shuffle(idx);
    const std::size_t h = (idx.size() + 1) / 2;
    return {std::vector<int>(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(h)),
            std::vector<int>(idx.begin() + static_cast<std::ptrdiff_t>(h), idx.end())};
}

std::uint64_t fold_net_seed(std::uint64_t seed, int fold) {
    return rng::substream(seed, {rng::kTagNet, static_cast<std::uint64_t>(fold)}).next_u64();
}

void check_preds(const char* who, const Dataset& data, const std::vector<double>& preds) {
    if (static_cast<int>(preds.size()) != data.n())
        throw InvalidArgument(std::string(who) + ": need one prediction per unit, got " +
                              std::to_string(preds.size()) + " for " + std::to_string(data.n()));
    if (data.n() == 0) throw InvalidArgument(std::string(who) + ": empty dataset");
}

}  // namespace

double PropensityModel::prob_t1(const std::vector<double>& z) const {
    const double p = stable_sigmoid(affine(coef, z));
    return std::clamp(p, c2, 1.0 - c2);
}

double PropensityModel::prob(int t, const std::vector<double>& z) const {
    const double p = prob_t1(z);
    return t == 1 ? p : 1.0 - p;
}

double MbarModel::predict(const std::vector<double>& z) const { return affine(coef, z); }

namespace detail {

Eigen::VectorXd ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    Eigen::MatrixXd design(x.rows(), x.cols() + 1);
    design.col(0).setOnes();
    design.rightCols(x.cols()) = x;
    return design.colPivHouseholderQr().solve(y);
}

}  // namespace detail

PropensityModel fit_propensity(const Dataset& data, const std::vector<int>& train_idx, double c2) {
    if (train_idx.empty()) throw InvalidArgument("fit_propensity: empty training set");
    bool has0 = false, has1 = false;
    for (int i : train_idx) (data.obs[static_cast<std::size_t>(i)].t == 1 ? has1 : has0) = true;
    if (!has0 || !has1)
        throw InvalidArgument("fit_propensity: training data holds a single T value");

    const auto m = static_cast<Eigen::Index>(train_idx.size());
    const Eigen::Index cols = data.p + 1;
    Eigen::MatrixXd x(m, cols);
    Eigen::VectorXd t(m);
    for (Eigen::Index r = 0; r < m; ++r) {
        const Observation& o = data.obs[static_cast<std::size_t>(train_idx[static_cast<std::size_t>(r)])];
        x(r, 0) = 1.0;
        for (int j = 0; j < data.p; ++j) x(r, j + 1) = o.z[static_cast<std::size_t>(j)];
        t(r) = static_cast<double>(o.t);
    }

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(cols);
    for (int iter = 0; iter < 50; ++iter) {
        Eigen::VectorXd p(m), w(m);
        for (Eigen::Index r = 0; r < m; ++r) {
            p(r) = stable_sigmoid(x.row(r).dot(beta));
            w(r) = p(r) * (1.0 - p(r));
        }
        const Eigen::VectorXd grad = x.transpose() * (t - p);
        // Tiny ridge keeps the Hessian invertible under separation, where the
        // weights collapse to zero as the fit saturates.
        Eigen::MatrixXd hess = x.transpose() * w.asDiagonal() * x;
        hess.diagonal().array() += 1e-10;
        const Eigen::VectorXd step = hess.ldlt().solve(grad);
        beta += step;
        if (step.cwiseAbs().maxCoeff() < 1e-12) break;
    }
    if (!beta.allFinite()) throw NumericError("fit_propensity: coefficients diverged");

    PropensityModel pm;
    pm.coef = beta;
    pm.c2 = c2;
    return pm;
}

MbarModel fit_mbar(const net::FittedNetwork& network, const Dataset& data,
                   const std::vector<int>& split_idx, int t, int c) {
    std::vector<int> rows;
    for (int i : split_idx)
        if (data.obs[static_cast<std::size_t>(i)].t == t) rows.push_back(i);
    if (rows.empty())
        throw NumericError("fit_mbar: no units with t=" + std::to_string(t) + " in the split");

    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), data.p);
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const Observation& o = data.obs[static_cast<std::size_t>(rows[r])];
        for (int j = 0; j < data.p; ++j)
            x(static_cast<Eigen::Index>(r), j) = o.z[static_cast<std::size_t>(j)];
        y(static_cast<Eigen::Index>(r)) = net::forward(network, o.y, o.z).outcome[static_cast<std::size_t>(c)];
    }

    MbarModel mm;
    mm.coef = detail::ols(x, y);
    return mm;
}

double eif_perfect(const Observation& obs, const NuisanceSet& nu, int t, double psi) {
    const net::HeadOutputs out = net::forward(nu.network, obs.y, obs.z);
    const double lt = obs.s == 1 ? static_cast<double>(obs.labels[0]) : 0.0;
    return eif_terms(obs, out, nu, t, 0, lt) - psi;
}

double eif_noisy(const Observation& obs, const NuisanceSet& nu, const lm::CoderErrorModel& cem,
                 int t, int c, double psi_tc) {
    const net::HeadOutputs out = net::forward(nu.network, obs.y, obs.z);
    const double mc =
        obs.s == 1 ? lm::surrogate_outcome(obs.labels[0], obs.labels[1], cem, c) : 0.0;
    return eif_terms(obs, out, nu, t, c, mc) - psi_tc;
}

namespace {

// Per-fold nuisance fitting for the perfect variant. `data` is immutable and
// shared; everything fold-specific is derived from (seed, fold).
NuisanceSet fit_fold_perfect(const Dataset& data, const std::vector<int>& train,
                             const net::NetworkConfig& config, std::uint64_t seed, int fold) {
    NuisanceSet nu;
    nu.propensity = fit_propensity(data, train);

    std::vector<int> labeled, unlabeled;
    for (int i : train)
        (data.obs[static_cast<std::size_t>(i)].s == 1 ? labeled : unlabeled).push_back(i);
    if (labeled.empty())
        throw NumericError("cannot fit outcome head: training data has no labeled units");
    nu.s_prob = static_cast<double>(labeled.size()) / static_cast<double>(train.size());

    auto halves = shuffled_halves(unlabeled, seed, fold, 0);
    std::vector<int> net_train = labeled;
    net_train.insert(net_train.end(), halves[0].begin(), halves[0].end());

    net::NetworkConfig cfg = config;
    cfg.seed = fold_net_seed(seed, fold);
    nu.network = net::train(data, net_train, cfg, net::Variant::kPerfect);

    // The m-bar regression wants the held-back unlabeled half; fully labeled
    // datasets have none, so fall back to all training units.
    const std::vector<int>& mbar_split = halves[1].empty() ? train : halves[1];
    nu.mbar.resize(1);
    for (int t = 0; t < 2; ++t)
        nu.mbar[0][static_cast<std::size_t>(t)] = fit_mbar(nu.network, data, mbar_split, t, 0);
    return nu;
}

}  // namespace

Estimate sri_perfect(const Dataset& data, int k, const net::NetworkConfig& config,
                     std::uint64_t seed) {
    data.validate();
    if (data.num_coders < 1) throw InvalidArgument("sri_perfect: dataset has no coder labels");
    if (k < 2) throw InvalidArgument("sri_perfect: need at least 2 folds, got " + std::to_string(k));

    const int n = data.n();
    const FoldAssignment fa = split_folds(n, k, seed);
    std::vector<double> c0(static_cast<std::size_t>(n)), c1(static_cast<std::size_t>(n));

    for (int fold = 0; fold < k; ++fold) {
        const FoldSplit fs = fold_split(fa, fold);
        try {
            const NuisanceSet nu = fit_fold_perfect(data, fs.train, config, seed, fold);
            for (int i : fs.eval) {
                const Observation& o = data.obs[static_cast<std::size_t>(i)];
                const net::HeadOutputs out = net::forward(nu.network, o.y, o.z);
                const double lt = o.s == 1 ? static_cast<double>(o.labels[0]) : 0.0;
                c0[static_cast<std::size_t>(i)] = eif_terms(o, out, nu, 0, 0, lt);
                c1[static_cast<std::size_t>(i)] = eif_terms(o, out, nu, 1, 0, lt);
            }
        } catch (const Error& e) {
            throw NumericError("sri_perfect: fold " + std::to_string(fold) + ": " + e.what());
        }
    }
    return finalize("sri_perfect", c0, c1, k, seed);
}

Estimate sri_noisy(const Dataset& data, int k, const net::NetworkConfig& config,
                   std::uint64_t seed) {
    data.validate();
    if (data.num_coders < 2)
        throw InvalidArgument("sri_noisy: at least two coders required, dataset has " +
                              std::to_string(data.num_coders));
    if (k < 2) throw InvalidArgument("sri_noisy: need at least 2 folds, got " + std::to_string(k));

    // When every labeled unit's coders agree, the label model is exactly the
    // identity and the surrogate outcome is the shared label's indicator, so
    // the per-class machinery collapses. Run the perfect pipeline on coder
    // 1's labels directly; seeds line up, so the answers match bit for bit.
    bool any_labeled = false, all_agree = true;
    for (const Observation& o : data.obs) {
        if (o.s != 1) continue;
        any_labeled = true;
        for (std::size_t j = 1; j < o.labels.size(); ++j)
            if (o.labels[j] != o.labels[0]) all_agree = false;
    }
    if (any_labeled && all_agree) {
        Dataset reduced = data;
        reduced.num_coders = 1;
        for (Observation& o : reduced.obs)
            if (o.s == 1) o.labels.resize(1);
        Estimate e = sri_perfect(reduced, k, config, seed);
        e.estimator = "sri_noisy";
        return e;
    }

    const int n = data.n();
    const int nc = data.num_classes;
    const FoldAssignment fa = split_folds(n, k, seed);

    // contrib[c][t][i]: non-Psi influence terms per class.
    std::vector<std::array<std::vector<double>, 2>> contrib(static_cast<std::size_t>(nc));
    for (auto& pair : contrib)
        for (auto& v : pair) v.assign(static_cast<std::size_t>(n), 0.0);

    for (int fold = 0; fold < k; ++fold) {
        const FoldSplit fs = fold_split(fa, fold);
        try {
            NuisanceSet nu;
            nu.propensity = fit_propensity(data, fs.train);

            std::vector<int> labeled, unlabeled;
            for (int i : fs.train)
                (data.obs[static_cast<std::size_t>(i)].s == 1 ? labeled : unlabeled).push_back(i);
            if (labeled.size() < 2)
                throw NumericError("training data has too few labeled units to split");
            nu.s_prob = static_cast<double>(labeled.size()) / static_cast<double>(fs.train.size());

            const auto lab_halves = shuffled_halves(labeled, seed, fold, 1);
            const auto unl_halves = shuffled_halves(unlabeled, seed, fold, 0);

            const lm::CoderErrorModel cem =
                lm::recover_error_matrices(lm::build_joint_matrices(subset(data, lab_halves[0])));

            Eigen::MatrixXd surrogates = Eigen::MatrixXd::Zero(nc, n);
            for (int i : lab_halves[1]) {
                const Observation& o = data.obs[static_cast<std::size_t>(i)];
                for (int c = 0; c < nc; ++c)
                    surrogates(c, i) = lm::surrogate_outcome(o.labels[0], o.labels[1], cem, c);
            }

            std::vector<int> net_train = lab_halves[1];
            net_train.insert(net_train.end(), unl_halves[0].begin(), unl_halves[0].end());
            net::NetworkConfig cfg = config;
            cfg.seed = fold_net_seed(seed, fold);
            nu.network = net::train(data, net_train, cfg, net::Variant::kNoisy, &surrogates);

            const std::vector<int>& mbar_split = unl_halves[1].empty() ? fs.train : unl_halves[1];
            nu.mbar.resize(static_cast<std::size_t>(nc));
            for (int c = 0; c < nc; ++c)
                for (int t = 0; t < 2; ++t)
                    nu.mbar[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)] =
                        fit_mbar(nu.network, data, mbar_split, t, c);

            for (int i : fs.eval) {
                const Observation& o = data.obs[static_cast<std::size_t>(i)];
                const net::HeadOutputs out = net::forward(nu.network, o.y, o.z);
                for (int c = 0; c < nc; ++c) {
                    const double mc =
                        o.s == 1 ? lm::surrogate_outcome(o.labels[0], o.labels[1], cem, c) : 0.0;
                    for (int t = 0; t < 2; ++t)
                        contrib[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)]
                               [static_cast<std::size_t>(i)] = eif_terms(o, out, nu, t, c, mc);
                }
            }
        } catch (const Error& e) {
            throw NumericError("sri_noisy: fold " + std::to_string(fold) + ": " + e.what());
        }
    }

    // Psi_t = sum_c c * Psi_{t,c}; the same weighting applied per unit gives
    // the influence values whose second moment is the Theorem-4 variance.
    std::vector<double> c0(static_cast<std::size_t>(n), 0.0), c1(static_cast<std::size_t>(n), 0.0);
    for (int c = 1; c < nc; ++c)
        for (int i = 0; i < n; ++i) {
            c0[static_cast<std::size_t>(i)] +=
                c * contrib[static_cast<std::size_t>(c)][0][static_cast<std::size_t>(i)];
            c1[static_cast<std::size_t>(i)] +=
                c * contrib[static_cast<std::size_t>(c)][1][static_cast<std::size_t>(i)];
        }
    return finalize("sri_noisy", c0, c1, k, seed);
}

Estimate naive_estimate(const Dataset& data, const std::vector<double>& preds) {
    check_preds("naive_estimate", data, preds);
    const int n = data.n();

    std::array<double, 2> group_n{0.0, 0.0}, group_sum{0.0, 0.0};
    for (int i = 0; i < n; ++i) {
        const int t = data.obs[static_cast<std::size_t>(i)].t;
        group_n[static_cast<std::size_t>(t)] += 1.0;
        group_sum[static_cast<std::size_t>(t)] += preds[static_cast<std::size_t>(i)];
    }
    for (int t = 0; t < 2; ++t)
        if (group_n[static_cast<std::size_t>(t)] == 0.0)
            throw InvalidArgument("naive_estimate: no units with t=" + std::to_string(t));

    std::array<double, 2> mean{group_sum[0] / group_n[0], group_sum[1] / group_n[1]};
    std::array<double, 2> share{group_n[0] / n, group_n[1] / n};

    std::vector<double> c0(static_cast<std::size_t>(n)), c1(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Observation& o = data.obs[static_cast<std::size_t>(i)];
        const double h = preds[static_cast<std::size_t>(i)];
        for (int t = 0; t < 2; ++t) {
            const double v = (o.t == t ? 1.0 : 0.0) / share[static_cast<std::size_t>(t)] *
                                 (h - mean[static_cast<std::size_t>(t)]) +
                             mean[static_cast<std::size_t>(t)];
            (t == 0 ? c0 : c1)[static_cast<std::size_t>(i)] = v;
        }
    }
    return finalize("naive", c0, c1, 0, 0);
}

namespace {

// DSL and PPI share everything except which units the first term averages
// over: the whole T group for DSL, its unlabeled part for PPI.
Estimate corrected_estimate(const char* name, const Dataset& data,
                            const std::vector<double>& preds, bool first_term_unlabeled) {
    check_preds(name, data, preds);
    const int n = data.n();

    std::array<double, 2> first_n{0.0, 0.0}, first_sum{0.0, 0.0};
    std::array<double, 2> lab_n{0.0, 0.0}, lab_sum{0.0, 0.0};
    for (int i = 0; i < n; ++i) {
        const Observation& o = data.obs[static_cast<std::size_t>(i)];
        const auto t = static_cast<std::size_t>(o.t);
        const double h = preds[static_cast<std::size_t>(i)];
        if (!first_term_unlabeled || o.s == 0) {
            first_n[t] += 1.0;
            first_sum[t] += h;
        }
        if (o.s == 1) {
            lab_n[t] += 1.0;
            lab_sum[t] += h - static_cast<double>(o.labels[0]);
        }
    }
    for (int t = 0; t < 2; ++t) {
        if (lab_n[static_cast<std::size_t>(t)] == 0.0)
            throw InvalidArgument(std::string(name) + ": no labeled units with t=" +
                                  std::to_string(t));
        if (first_n[static_cast<std::size_t>(t)] == 0.0)
            throw InvalidArgument(std::string(name) + ": no units for the prediction mean with t=" +
                                  std::to_string(t));
    }

    std::array<double, 2> first_mean{first_sum[0] / first_n[0], first_sum[1] / first_n[1]};
    std::array<double, 2> delta_mean{lab_sum[0] / lab_n[0], lab_sum[1] / lab_n[1]};
    std::array<double, 2> first_share{first_n[0] / n, first_n[1] / n};
    std::array<double, 2> lab_share{lab_n[0] / n, lab_n[1] / n};

    std::vector<double> c0(static_cast<std::size_t>(n)), c1(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Observation& o = data.obs[static_cast<std::size_t>(i)];
        const double h = preds[static_cast<std::size_t>(i)];
        for (int t = 0; t < 2; ++t) {
            const auto ts = static_cast<std::size_t>(t);
            const bool in_first = o.t == t && (!first_term_unlabeled || o.s == 0);
            const bool in_lab = o.t == t && o.s == 1;
            double v = first_mean[ts] - delta_mean[ts];
            if (in_first) v += (h - first_mean[ts]) / first_share[ts];
            if (in_lab)
                v -= (h - static_cast<double>(o.labels[0]) - delta_mean[ts]) / lab_share[ts];
            (t == 0 ? c0 : c1)[static_cast<std::size_t>(i)] = v;
        }
    }
    return finalize(name, c0, c1, 0, 0);
}

}  // namespace

Estimate ppi_estimate(const Dataset& data, const std::vector<double>& preds) {
    return corrected_estimate("ppi", data, preds, true);
}

Estimate dsl_estimate(const Dataset& data, const std::vector<double>& preds) {
    return corrected_estimate("dsl", data, preds, false);
}

std::string estimate_to_json(const Estimate& est) {
    nlohmann::json j;
    j["estimator"] = est.estimator;
    j["psi_0"] = est.psi_t[0];
    j["psi_1"] = est.psi_t[1];
    j["diff"] = est.diff;
    j["se_diff"] = est.se_diff;
    j["ci_low"] = est.ci_low;
    j["ci_high"] = est.ci_high;
    j["n"] = est.n;
    j["k"] = est.k;
    j["seed"] = est.seed;
    return j.dump();
}

Estimate estimate_from_json(const std::string& text) {
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        Estimate e;
        e.estimator = j.at("estimator").get<std::string>();
        e.psi_t = {j.at("psi_0").get<double>(), j.at("psi_1").get<double>()};
        e.diff = j.at("diff").get<double>();
        e.se_diff = j.at("se_diff").get<double>();
        e.ci_low = j.at("ci_low").get<double>();
        e.ci_high = j.at("ci_high").get<double>();
        e.n = j.at("n").get<int>();
        e.k = j.at("k").get<int>();
        e.seed = j.at("seed").get<std::uint64_t>();
        return e;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("estimate_from_json: ") + e.what());
    }
}

}  // namespace sri::est
