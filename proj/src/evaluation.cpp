#include "cnpr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cnpr/rng.hpp"
#include "cnpr/util.hpp"

namespace cnpr {

ActionDistance action_distance(Action policy_action, Action clinician_action) {
    ActionDistance d;
    d.d_iv = std::abs(policy_action.iv_bin - clinician_action.iv_bin);
    d.d_vaso = std::abs(policy_action.vaso_bin - clinician_action.vaso_bin);
    d.d_joint = std::sqrt(d.d_iv * d.d_iv + d.d_vaso * d.d_vaso);
    return d;
}

double trajectory_distance(const PolicyFn& policy, const Trajectory& traj) {
    if (traj.length() == 0) throw ValidationError("trajectory_distance of empty trajectory");
    double sum = 0;
    for (std::size_t t = 0; t < traj.length(); ++t)
        sum += action_distance(policy(traj, t), traj.actions[t]).d_joint;
    return sum / static_cast<double>(traj.length());
}

std::vector<double> zscore(const std::vector<double>& v) {
    if (v.size() < 2) throw NumericError("zscore needs at least 2 values");
    double mean = mean_of(v);
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size()); // population convention
    if (var < 1e-24) throw NumericError("zscore of a constant column");
    double sd = std::sqrt(var);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean) / sd;
    return out;
}

double RegressionResult::coef(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return beta[i];
    throw ValidationError("no coefficient named " + name);
}

namespace {

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

void fill_inference(RegressionResult& r) {
    r.ci_lo.resize(r.beta.size());
    r.ci_hi.resize(r.beta.size());
    r.p_value.resize(r.beta.size());
    for (std::size_t i = 0; i < r.beta.size(); ++i) {
        r.ci_lo[i] = r.beta[i] - 1.96 * r.se[i];
        r.ci_hi[i] = r.beta[i] + 1.96 * r.se[i];
        double z = r.se[i] > 0 ? std::abs(r.beta[i]) / r.se[i]
                               : std::numeric_limits<double>::infinity();
        r.p_value[i] = r.se[i] > 0 ? 2.0 * normal_sf(z) : 0.0;
    }
}

void check_design(const Eigen::MatrixXd& X, const std::vector<std::string>& names,
                  std::size_t ny) {
    if (static_cast<std::size_t>(X.rows()) != ny)
        throw ValidationError("design matrix rows do not match outcome length");
    if (static_cast<std::size_t>(X.cols()) != names.size())
        throw ValidationError("design matrix columns do not match name count");
    if (X.rows() <= X.cols()) throw ValidationError("regression needs n > p");

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(1e-10);
    if (qr.rank() < X.cols()) {
        // The trailing pivots identify the dependent columns.
        std::ostringstream os;
        os << "design matrix is rank deficient; dependent column(s):";
        auto perm = qr.colsPermutation().indices();
        for (Eigen::Index k = qr.rank(); k < X.cols(); ++k)
            os << ' ' << names[static_cast<std::size_t>(perm[k])];
        throw ValidationError(os.str());
    }
}

} // namespace

RegressionResult ols_hc3(const std::vector<double>& y, const Eigen::MatrixXd& X,
                         const std::vector<std::string>& names) {
    check_design(X, names, y.size());
    const auto n = X.rows();
    const auto p = X.cols();

    Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    Eigen::VectorXd beta = qr.solve(yv);
    Eigen::VectorXd resid = yv - X * beta;

    // (X'X)^-1 via the QR factors; leverages h_ii = x_i' (X'X)^-1 x_i.
    Eigen::MatrixXd xtx_inv = (X.transpose() * X).ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    Eigen::VectorXd lev(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd xi = X.row(i).transpose();
        lev[i] = xi.dot(xtx_inv * xi);
        if (lev[i] >= 1.0 - 1e-12)
            throw ValidationError("perfect-leverage observation at row " + std::to_string(i));
    }

    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < n; ++i) {
        double w = resid[i] / (1.0 - lev[i]);
        meat.noalias() += (X.row(i).transpose() * X.row(i)) * (w * w);
    }
    Eigen::MatrixXd cov = xtx_inv * meat * xtx_inv;

    RegressionResult r;
    r.model_type = "ols_hc3";
    r.names = names;
    r.n = static_cast<std::size_t>(n);
    r.beta.assign(beta.data(), beta.data() + p);
    r.se.resize(static_cast<std::size_t>(p));
    for (Eigen::Index j = 0; j < p; ++j) r.se[static_cast<std::size_t>(j)] = std::sqrt(cov(j, j));
    fill_inference(r);
    return r;
}

RegressionResult logistic_fit(const std::vector<int>& y, const Eigen::MatrixXd& X,
                              const std::vector<std::string>& names) {
    check_design(X, names, y.size());
    const auto n = X.rows();
    const auto p = X.cols();
    Eigen::VectorXd yv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (y[static_cast<std::size_t>(i)] != 0 && y[static_cast<std::size_t>(i)] != 1)
            throw ValidationError("logistic outcome must be 0/1");
        yv[i] = y[static_cast<std::size_t>(i)];
    }

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    const int max_iter = 100;
    const double score_tol = 1e-8;
    bool converged = false;
    Eigen::MatrixXd info(p, p);

    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd eta = X * beta;
        Eigen::VectorXd mu(n), w(n);
        double max_w = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double m = 1.0 / (1.0 + std::exp(-eta[i]));
            mu[i] = m;
            w[i] = m * (1.0 - m);
            max_w = std::max(max_w, w[i]);
        }
        // Every fitted probability saturating at 0/1 means the likelihood has
        // no interior optimum (all-one-class outcome or perfect separation);
        // the score then vanishes along a diverging path.
        if (max_w < 1e-8)
            throw NumericError("logistic fit degenerate: fitted probabilities saturated "
                               "(one-class outcome or perfect separation); inspect the data");
        Eigen::VectorXd score = X.transpose() * (yv - mu);
        info = X.transpose() * w.asDiagonal() * X;
        if (score.lpNorm<Eigen::Infinity>() < score_tol) {
            converged = true;
            break;
        }
        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        if (ldlt.info() != Eigen::Success)
            throw NumericError("logistic information matrix is singular");
        Eigen::VectorXd step = ldlt.solve(score);
        beta += step;
        if (!beta.allFinite() || beta.lpNorm<Eigen::Infinity>() > 1e4)
            throw NumericError(
                "logistic fit diverged (possible perfect separation); inspect the data");
    }
    if (!converged)
        throw NumericError("logistic fit did not converge in " + std::to_string(max_iter) +
                           " iterations (degenerate or separated outcome)");

    Eigen::MatrixXd cov = info.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    RegressionResult r;
    r.model_type = "logistic";
    r.names = names;
    r.n = static_cast<std::size_t>(n);
    r.beta.assign(beta.data(), beta.data() + p);
    r.se.resize(static_cast<std::size_t>(p));
    for (Eigen::Index j = 0; j < p; ++j) r.se[static_cast<std::size_t>(j)] = std::sqrt(cov(j, j));
    fill_inference(r);
    return r;
}

namespace {

std::vector<double> midranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = mid;
        i = j + 1;
    }
    return r;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = mean_of(x), my = mean_of(y);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0 || syy <= 0) throw NumericError("correlation of a constant vector");
    return sxy / std::sqrt(sxx * syy);
}

} // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw ValidationError("spearman needs two equal-length vectors of size >= 2");
    return pearson(midranks(x), midranks(y));
}

namespace {

double pooled_cohens_d(const std::vector<double>& a, const std::vector<double>& b) {
    double ma = mean_of(a), mb = mean_of(b);
    double va = sample_variance(a), vb = sample_variance(b);
    double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    double pooled = std::sqrt(((na - 1) * va + (nb - 1) * vb) / (na + nb - 2));
    if (pooled < 1e-15) throw NumericError("cohens_d: pooled standard deviation is zero");
    return (ma - mb) / pooled;
}

} // namespace

EffectSize cohens_d(const std::vector<double>& group_a, const std::vector<double>& group_b,
                    int n_boot, std::uint64_t seed) {
    if (group_a.size() < 2 || group_b.size() < 2)
        throw ValidationError("cohens_d needs >= 2 samples per group");
    EffectSize e;
    e.d = pooled_cohens_d(group_a, group_b);

    RngStream rng(seed, "bootstrap");
    std::vector<double> boots;
    boots.reserve(static_cast<std::size_t>(n_boot));
    std::vector<double> ra(group_a.size()), rb(group_b.size());
    for (int k = 0; k < n_boot; ++k) {
        for (auto& v : ra) v = group_a[rng.uniform_index(group_a.size())];
        for (auto& v : rb) v = group_b[rng.uniform_index(group_b.size())];
        try {
            boots.push_back(pooled_cohens_d(ra, rb));
        } catch (const NumericError&) {
            // Degenerate resample; skip.
        }
    }
    if (boots.empty()) throw NumericError("cohens_d bootstrap produced no valid resamples");
    std::sort(boots.begin(), boots.end());
    e.ci_lo = quantile_sorted(boots, 0.025);
    e.ci_hi = quantile_sorted(boots, 0.975);
    return e;
}

ActionHeatmap action_heatmap(const PolicyFn& policy, const Cohort& cohort,
                             const std::vector<std::size_t>& traj_indices, int sofa_threshold) {
    ActionHeatmap hm;
    for (std::size_t ti : traj_indices) {
        const Trajectory& t = cohort.trajectories[ti];
        bool high = t.cov.sofa_baseline >= sofa_threshold;
        auto& grid = high ? hm.high : hm.low;
        auto& count = high ? hm.n_high_steps : hm.n_low_steps;
        for (std::size_t s = 0; s < t.length(); ++s) {
            Action a = policy(t, s);
            grid[static_cast<std::size_t>(a.iv_bin)][static_cast<std::size_t>(a.vaso_bin)] += 1.0;
            ++count;
        }
    }
    for (auto [gridp, n] : {std::pair{&hm.low, hm.n_low_steps}, std::pair{&hm.high, hm.n_high_steps}})
        if (n > 0)
            for (auto& row : *gridp)
                for (double& cell : row) cell /= static_cast<double>(n);
    return hm;
}

std::vector<FeatureImportance> permutation_importance(
    const std::vector<double>& X, std::size_t n_rows,
    const std::vector<std::string>& feature_names, const std::vector<int>& labels, int n_classes,
    const ForestConfig& forest_cfg, int k_repeats, double holdout_frac, std::uint64_t seed) {
    const std::size_t d = feature_names.size();
    if (n_rows * d != X.size()) throw ValidationError("feature matrix size mismatch");
    if (labels.size() != n_rows) throw ValidationError("label count mismatch");
    {
        bool multi = false;
        for (std::size_t i = 1; i < labels.size(); ++i)
            if (labels[i] != labels[0]) {
                multi = true;
                break;
            }
        if (!multi)
            throw ValidationError("permutation importance needs a multi-class target "
                                  "(single-class action column)");
    }

    // Fit/hold-out split.
    RngStream rng(seed, "forest");
    std::vector<std::size_t> order(n_rows);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    auto n_hold = static_cast<std::size_t>(std::llround(holdout_frac * static_cast<double>(n_rows)));
    n_hold = std::clamp<std::size_t>(n_hold, 1, n_rows - 1);

    std::vector<double> X_fit, X_hold;
    std::vector<int> y_fit, y_hold;
    X_fit.reserve((n_rows - n_hold) * d);
    X_hold.reserve(n_hold * d);
    for (std::size_t i = 0; i < n_rows; ++i) {
        std::size_t r = order[i];
        auto src = X.begin() + static_cast<long>(r * d);
        if (i < n_hold) {
            X_hold.insert(X_hold.end(), src, src + static_cast<long>(d));
            y_hold.push_back(labels[r]);
        } else {
            X_fit.insert(X_fit.end(), src, src + static_cast<long>(d));
            y_fit.push_back(labels[r]);
        }
    }

    ForestConfig cfg = forest_cfg;
    cfg.seed = derive_seed(seed, "trees");
    RandomForestClassifier forest;
    forest.fit(X_fit, y_fit.size(), d, y_fit, n_classes, cfg);
    const double baseline = forest.accuracy(X_hold, y_hold.size(), y_hold);

    std::vector<FeatureImportance> result;
    std::vector<double> X_perm = X_hold;
    std::vector<std::size_t> perm(y_hold.size());
    for (std::size_t f = 0; f < d; ++f) {
        RngStream frng(derive_seed(derive_seed(seed, "perm"), f));
        double drop_sum = 0;
        for (int rep = 0; rep < k_repeats; ++rep) {
            std::iota(perm.begin(), perm.end(), 0);
            frng.shuffle(perm);
            for (std::size_t i = 0; i < y_hold.size(); ++i)
                X_perm[i * d + f] = X_hold[perm[i] * d + f];
            drop_sum += baseline - forest.accuracy(X_perm, y_hold.size(), y_hold);
        }
        // Restore the column.
        for (std::size_t i = 0; i < y_hold.size(); ++i) X_perm[i * d + f] = X_hold[i * d + f];
        result.push_back(FeatureImportance{feature_names[f], drop_sum / k_repeats});
    }
    std::stable_sort(result.begin(), result.end(),
                     [](const FeatureImportance& a, const FeatureImportance& b) {
                         return a.importance > b.importance;
                     });
    return result;
}

} // namespace cnpr
