#include "gasblend/nlp.hpp"

#include "gasblend/errors.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

namespace gasblend {

void SolverOptions::validate() const {
    if (!(tol_kkt > 0.0) || !(tol_feas > 0.0))
        throw ValidationError("solver tolerances must be positive");
    if (max_iter < 1) throw ValidationError("max_iter must be at least 1");
    if (!(regularization_floor > 0.0))
        throw ValidationError("regularization floor must be positive");
}

const char* to_string(SolveStatus status) {
    switch (status) {
        case SolveStatus::Converged: return "converged";
        case SolveStatus::IterationCap: return "iteration-cap";
        case SolveStatus::Infeasible: return "infeasible";
        case SolveStatus::NumericalFailure: return "numerical-failure";
    }
    return "unknown";
}

namespace {

constexpr double kMu0 = 0.1;
constexpr double kTauMin = 0.99;
constexpr double kDualGuard = 1e10;  // complementarity safeguard width
constexpr double kCurvMin = 1e-6;
constexpr double kCurvMax = 1e6;
constexpr double kRegLimit = 1e6;
constexpr double kBoundRelax = 1e-8;

struct Eval {
    double f = 0.0;
    Eigen::VectorXd g;
    Eigen::VectorXd ce, ci;
    Eigen::SparseMatrix<double> ae, ai;
};

class InteriorPoint {
public:
    InteriorPoint(const NlpProblem& prob, const SolverOptions& opts)
        : prob_(prob),
          opts_(opts),
          n_(prob.num_vars()),
          me_(prob.num_equalities()),
          mi_(prob.num_inequalities()),
          lb_(prob.lower_bounds()),
          ub_(prob.upper_bounds()) {
        opts_.validate();
        if (n_ < 1) throw ValidationError("problem has no variables");
        if (lb_.size() != n_ || ub_.size() != n_)
            throw ValidationError("bound vectors must match the variable count");
        for (int i = 0; i < n_; ++i) {
            if (lb_[i] > ub_[i]) throw ValidationError("lower bound exceeds upper bound");
            if (std::isfinite(lb_[i])) low_.push_back(i);
            if (std::isfinite(ub_[i])) upp_.push_back(i);
        }
        // relax finite bounds a hair: an equality manifold that pins a
        // variable to its bound would otherwise leave no strict interior and
        // stop the barrier from shrinking.  The returned point is clamped
        // back to the true bounds.
        lb0_ = lb_;
        ub0_ = ub_;
        for (int i : low_) lb_[i] -= kBoundRelax * std::max(1.0, std::abs(lb_[i]));
        for (int i : upp_) ub_[i] += kBoundRelax * std::max(1.0, std::abs(ub_[i]));
    }

    NlpResult run(Eigen::VectorXd x0);

private:
    Eval evaluate(const Eigen::VectorXd& x) const {
        Eval ev;
        ev.f = prob_.objective(x, &ev.g);
        ev.ce = prob_.equalities(x);
        ev.ci = prob_.inequalities(x);
        ev.ae = prob_.equality_jacobian(x);
        ev.ai = prob_.inequality_jacobian(x);
        if (ev.g.size() != n_ || ev.ce.size() != me_ || ev.ci.size() != mi_ ||
            ev.ae.rows() != me_ || ev.ae.cols() != n_ || ev.ai.rows() != mi_ ||
            ev.ai.cols() != n_)
            throw ValidationError("problem callback returned mismatched sizes");
        return ev;
    }

    // gradient of the Lagrangian in x
    Eigen::VectorXd stationarity(const Eval& ev) const {
        Eigen::VectorXd r = ev.g;
        if (me_ > 0) r -= ev.ae.transpose() * y_;
        if (mi_ > 0) r -= ev.ai.transpose() * z_;
        for (std::size_t t = 0; t < low_.size(); ++t) r[low_[t]] -= zl_[t];
        for (std::size_t t = 0; t < upp_.size(); ++t) r[upp_[t]] += zu_[t];
        return r;
    }

    // true constraint violation (slack-free)
    double violation(const Eval& ev) const {
        double v = me_ > 0 ? ev.ce.cwiseAbs().maxCoeff() : 0.0;
        if (mi_ > 0) v = std::max(v, std::max(0.0, -ev.ci.minCoeff()));
        return v;
    }

    // scaled optimality error at barrier level mu (mu = 0 for convergence)
    double kkt_error(const Eval& ev, double mu) const {
        double dual_mass = 0.0;
        int dual_count = 0;
        if (me_ > 0) { dual_mass += y_.lpNorm<1>(); dual_count += me_; }
        if (mi_ > 0) { dual_mass += z_.lpNorm<1>(); dual_count += mi_; }
        dual_mass += zl_.lpNorm<1>() + zu_.lpNorm<1>();
        dual_count += static_cast<int>(low_.size() + upp_.size());
        const double smax = 100.0;
        const double sd =
            dual_count > 0 ? std::max(smax, dual_mass / dual_count) / smax : 1.0;
        const double sc = sd;

        double err = stationarity(ev).lpNorm<Eigen::Infinity>() / sd;
        if (me_ > 0) err = std::max(err, ev.ce.lpNorm<Eigen::Infinity>());
        if (mi_ > 0) {
            err = std::max(err, (ev.ci - s_).lpNorm<Eigen::Infinity>());
            err = std::max(
                err, (s_.cwiseProduct(z_).array() - mu).abs().maxCoeff() / sc);
        }
        for (std::size_t t = 0; t < low_.size(); ++t)
            err = std::max(err, std::abs((x_[low_[t]] - lb_[low_[t]]) * zl_[t] - mu) / sc);
        for (std::size_t t = 0; t < upp_.size(); ++t)
            err = std::max(err, std::abs((ub_[upp_[t]] - x_[upp_[t]]) * zu_[t] - mu) / sc);
        return err;
    }

    double barrier_terms(const Eigen::VectorXd& x, const Eigen::VectorXd& s) const {
        double b = 0.0;
        for (int i : low_) b += std::log(x[i] - lb_[i]);
        for (int i : upp_) b += std::log(ub_[i] - x[i]);
        for (int i = 0; i < mi_; ++i) b += std::log(s[i]);
        return b;
    }

    static double theta_of(const Eigen::VectorXd& ce, const Eigen::VectorXd& ci,
                           const Eigen::VectorXd& s) {
        return std::sqrt(ce.squaredNorm() + (ci - s).squaredNorm());
    }

    const NlpProblem& prob_;
    SolverOptions opts_;
    int n_, me_, mi_;
    Eigen::VectorXd lb_, ub_;    // relaxed, used throughout the iteration
    Eigen::VectorXd lb0_, ub0_;  // as given, restored on the returned point
    std::vector<int> low_, upp_;

    Eigen::VectorXd x_, s_, y_, z_, zl_, zu_;
};

// quasi-definite KKT factorization with inertia-driven regularization
class KktSolver {
public:
    KktSolver(int n, int me, int mi, double floor) : n_(n), me_(me), mi_(mi), floor_(floor) {}

    // returns false when the escalation limit is hit
    bool factorize(const std::vector<Eigen::Triplet<double>>& base,
                   const Eigen::VectorXd& wdiag, double mu) {
        const double dc = std::max(1e-12, 1e-8 * mu);
        double dw = last_dw_ > 0.0 ? std::max(floor_, last_dw_ / 10.0) : 0.0;
        while (true) {
            if (try_factor(base, wdiag, dw, dc)) {
                last_dw_ = dw;
                return true;
            }
            dw = dw == 0.0 ? std::max(floor_, 1e-8) : dw * 10.0;
            if (dw > kRegLimit) return false;
        }
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
        Eigen::VectorXd u = ldlt_.solve(b);
        // one refinement pass keeps the tiny regularization shifts honest
        const Eigen::VectorXd r = b - kkt_.selfadjointView<Eigen::Lower>() * u;
        if (r.lpNorm<Eigen::Infinity>() > 1e-13 * (1.0 + b.lpNorm<Eigen::Infinity>()))
            u += ldlt_.solve(r);
        return u;
    }

private:
    bool try_factor(const std::vector<Eigen::Triplet<double>>& base,
                    const Eigen::VectorXd& wdiag, double dw, double dc) {
        std::vector<Eigen::Triplet<double>> trip = base;
        for (int i = 0; i < n_; ++i) trip.emplace_back(i, i, wdiag[i] + dw);
        for (int i = 0; i < me_ + mi_; ++i) trip.emplace_back(n_ + i, n_ + i, -dc);
        const int dim = n_ + me_ + mi_;
        kkt_.resize(dim, dim);
        kkt_.setFromTriplets(trip.begin(), trip.end());
        if (!analyzed_) {
            ldlt_.analyzePattern(kkt_);
            analyzed_ = true;
        }
        ldlt_.factorize(kkt_);
        if (ldlt_.info() != Eigen::Success) return false;

        // element growth is normal for unpivoted saddle factorizations, so the
        // breakdown guard is absolute; legitimate pivots go down to -delta_c
        const Eigen::VectorXd d = ldlt_.vectorD();
        int pos = 0, neg = 0;
        for (Eigen::Index i = 0; i < d.size(); ++i) {
            if (!std::isfinite(d[i]) || std::abs(d[i]) < 1e-100) return false;
            (d[i] > 0.0 ? pos : neg)++;
        }
        return pos == n_ && neg == me_ + mi_;
    }

    int n_, me_, mi_;
    double floor_;
    double last_dw_ = 0.0;
    bool analyzed_ = false;
    Eigen::SparseMatrix<double> kkt_;
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower> ldlt_;
};

NlpResult InteriorPoint::run(Eigen::VectorXd x0) {
    const auto t_start = std::chrono::steady_clock::now();
    if (x0.size() != n_) throw ValidationError("start vector size mismatch");

    // project the start strictly inside the bounds
    x_ = x0;
    for (int i : low_) {
        double pad = 1e-2 * std::max(1.0, std::abs(lb_[i]));
        if (std::isfinite(ub_[i])) pad = std::min(pad, 1e-2 * (ub_[i] - lb_[i]));
        x_[i] = std::max(x_[i], lb_[i] + pad);
    }
    for (int i : upp_) {
        double pad = 1e-2 * std::max(1.0, std::abs(ub_[i]));
        if (std::isfinite(lb_[i])) pad = std::min(pad, 1e-2 * (ub_[i] - lb_[i]));
        x_[i] = std::min(x_[i], ub_[i] - pad);
    }

    Eval ev = evaluate(x_);

    // least-squares equality multipliers from the start point
    y_ = Eigen::VectorXd::Zero(me_);
    if (me_ > 0) {
        Eigen::SparseMatrix<double> gram = ev.ae * ev.ae.transpose();
        for (int i = 0; i < me_; ++i) gram.coeffRef(i, i) += 1e-12;
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> chol(gram);
        if (chol.info() == Eigen::Success) {
            const Eigen::VectorXd cand = chol.solve(ev.ae * ev.g);
            if (cand.allFinite()) y_ = cand;
        }
    }
    z_ = Eigen::VectorXd::Zero(mi_);
    zl_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(low_.size()));
    zu_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(upp_.size()));
    s_ = mi_ > 0 ? ev.ci.cwiseMax(1e-6) : Eigen::VectorXd(0);

    NlpResult out;
    out.x = x_;
    const auto finish = [&](SolveStatus st, int iters) {
        // kkt/feasibility describe the iterate on the relaxed bounds; the
        // clamp moves x by at most the relaxation width and the objective is
        // re-evaluated so it matches the returned point
        for (int i : low_) out.x[i] = std::max(out.x[i], lb0_[i]);
        for (int i : upp_) out.x[i] = std::min(out.x[i], ub0_[i]);
        try {
            out.objective_value = prob_.objective(out.x, nullptr);
        } catch (const NumericsError&) {
            // keep the recorded value when the clamped point does not evaluate
        }
        out.status = st;
        out.iterations = iters;
        out.multipliers_eq = y_;
        out.multipliers_in = z_;
        out.multipliers_lb = Eigen::VectorXd::Zero(n_);
        out.multipliers_ub = Eigen::VectorXd::Zero(n_);
        for (std::size_t t = 0; t < low_.size(); ++t) out.multipliers_lb[low_[t]] = zl_[t];
        for (std::size_t t = 0; t < upp_.size(); ++t) out.multipliers_ub[upp_[t]] = zu_[t];
        out.wall_time_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        return out;
    };

    // a start that is already a KKT point (with zero inequality/bound duals)
    // is accepted without touching it
    {
        const double feas0 = violation(ev);
        const double err0 = kkt_error(ev, 0.0);
        if (err0 <= opts_.tol_kkt && feas0 <= opts_.tol_feas) {
            out.x = x_;
            out.objective_value = ev.f;
            out.kkt_residual = err0;
            out.feasibility = feas0;
            return finish(SolveStatus::Converged, 0);
        }
    }

    // now give the inequality/bound duals their interior starting values
    double mu = kMu0;
    if (mi_ > 0) z_ = (mu * s_.cwiseInverse()).cwiseMin(1e6);
    for (std::size_t t = 0; t < low_.size(); ++t)
        zl_[t] = std::min(mu / (x_[low_[t]] - lb_[low_[t]]), 1e6);
    for (std::size_t t = 0; t < upp_.size(); ++t)
        zu_[t] = std::min(mu / (ub_[upp_[t]] - x_[upp_[t]]), 1e6);

    KktSolver kkt(n_, me_, mi_, opts_.regularization_floor);
    Eigen::VectorXd curv = Eigen::VectorXd::Ones(n_);  // quasi-update diagonal
    double nu = 1.0;                                   // merit penalty weight
    int stall = 0;

    double best_score = std::numeric_limits<double>::infinity();
    const auto remember_best = [&](const Eval& e) {
        const double feas = violation(e);
        const double err = kkt_error(e, 0.0);
        const double score = std::max(feas - opts_.tol_feas, 0.0) * 1e6 + err;
        if (score < best_score) {
            best_score = score;
            out.x = x_;
            out.objective_value = e.f;
            out.kkt_residual = err;
            out.feasibility = feas;
        }
    };
    remember_best(ev);

    for (int iter = 1; iter <= opts_.max_iter; ++iter) {
        const double feas = violation(ev);
        const double err0 = kkt_error(ev, 0.0);
        if (err0 <= opts_.tol_kkt && feas <= opts_.tol_feas) {
            out.x = x_;
            out.objective_value = ev.f;
            out.kkt_residual = err0;
            out.feasibility = feas;
            return finish(SolveStatus::Converged, iter - 1);
        }
        // superlinear cut, but never more than 100x at once: with first-order
        // curvature the recentering step after a huge drop is too inaccurate
        // for the line search to accept near a degenerate active set
        if (kkt_error(ev, mu) <= 10.0 * mu)
            mu = std::max(opts_.tol_kkt / 10.0,
                          std::min(0.2 * mu, std::max(std::pow(mu, 1.5), 0.01 * mu)));

        // assemble the off-diagonal KKT blocks; the diagonal comes from the
        // curvature model plus the barrier weights
        std::vector<Eigen::Triplet<double>> base;
        base.reserve(static_cast<std::size_t>(ev.ae.nonZeros() + ev.ai.nonZeros() + mi_));
        for (int c = 0; c < ev.ae.outerSize(); ++c)
            for (Eigen::SparseMatrix<double>::InnerIterator it(ev.ae, c); it; ++it)
                base.emplace_back(n_ + static_cast<int>(it.row()), static_cast<int>(it.col()),
                                  it.value());
        for (int c = 0; c < ev.ai.outerSize(); ++c)
            for (Eigen::SparseMatrix<double>::InnerIterator it(ev.ai, c); it; ++it)
                base.emplace_back(n_ + me_ + static_cast<int>(it.row()),
                                  static_cast<int>(it.col()), it.value());
        for (int i = 0; i < mi_; ++i)
            base.emplace_back(n_ + me_ + i, n_ + me_ + i, -s_[i] / z_[i]);

        Eigen::VectorXd wdiag = curv;
        if (opts_.curvature == CurvatureModel::GaussNewton && me_ > 0) {
            wdiag = Eigen::VectorXd::Constant(n_, kCurvMin);
            // no pruning: the symbolic product keeps the pattern point-independent
            Eigen::SparseMatrix<double> gn = ev.ae.transpose() * ev.ae;
            for (int c = 0; c < gn.outerSize(); ++c)
                for (Eigen::SparseMatrix<double>::InnerIterator it(gn, c); it; ++it) {
                    if (it.row() > it.col())
                        base.emplace_back(static_cast<int>(it.row()),
                                          static_cast<int>(it.col()), it.value());
                    else if (it.row() == it.col())
                        wdiag[it.row()] += it.value();
                }
        }
        for (std::size_t t = 0; t < low_.size(); ++t)
            wdiag[low_[t]] += zl_[t] / (x_[low_[t]] - lb_[low_[t]]);
        for (std::size_t t = 0; t < upp_.size(); ++t)
            wdiag[upp_[t]] += zu_[t] / (ub_[upp_[t]] - x_[upp_[t]]);

        if (!kkt.factorize(base, wdiag, mu))
            return finish(SolveStatus::NumericalFailure, iter - 1);

        // right-hand side of the condensed system
        Eigen::VectorXd b(n_ + me_ + mi_);
        Eigen::VectorXd gphi = ev.g;  // barrier gradient
        for (std::size_t t = 0; t < low_.size(); ++t)
            gphi[low_[t]] -= mu / (x_[low_[t]] - lb_[low_[t]]);
        for (std::size_t t = 0; t < upp_.size(); ++t)
            gphi[upp_[t]] += mu / (ub_[upp_[t]] - x_[upp_[t]]);
        Eigen::VectorXd rbar = gphi;
        if (me_ > 0) rbar -= ev.ae.transpose() * y_;
        if (mi_ > 0) rbar -= ev.ai.transpose() * z_;
        b.head(n_) = -rbar;
        b.segment(n_, me_) = -ev.ce;
        for (int i = 0; i < mi_; ++i) b[n_ + me_ + i] = -ev.ci[i] + mu / z_[i];

        const Eigen::VectorXd u = kkt.solve(b);
        if (!u.allFinite()) return finish(SolveStatus::NumericalFailure, iter - 1);
        const Eigen::VectorXd dx = u.head(n_);
        const Eigen::VectorXd dy = -u.segment(n_, me_);
        const Eigen::VectorXd dz = -u.tail(mi_);
        Eigen::VectorXd ds(mi_);
        for (int i = 0; i < mi_; ++i) ds[i] = mu / z_[i] - s_[i] - s_[i] / z_[i] * dz[i];
        Eigen::VectorXd dzl(zl_.size()), dzu(zu_.size());
        for (std::size_t t = 0; t < low_.size(); ++t) {
            const double gap = x_[low_[t]] - lb_[low_[t]];
            dzl[t] = mu / gap - zl_[t] - zl_[t] / gap * dx[low_[t]];
        }
        for (std::size_t t = 0; t < upp_.size(); ++t) {
            const double gap = ub_[upp_[t]] - x_[upp_[t]];
            dzu[t] = mu / gap - zu_[t] + zu_[t] / gap * dx[upp_[t]];
        }

        // fraction-to-boundary limits
        const double tau = std::max(kTauMin, 1.0 - mu);
        double a_pr = 1.0, a_du = 1.0;
        for (std::size_t t = 0; t < low_.size(); ++t)
            if (dx[low_[t]] < 0.0)
                a_pr = std::min(a_pr, -tau * (x_[low_[t]] - lb_[low_[t]]) / dx[low_[t]]);
        for (std::size_t t = 0; t < upp_.size(); ++t)
            if (dx[upp_[t]] > 0.0)
                a_pr = std::min(a_pr, tau * (ub_[upp_[t]] - x_[upp_[t]]) / dx[upp_[t]]);
        for (int i = 0; i < mi_; ++i)
            if (ds[i] < 0.0) a_pr = std::min(a_pr, -tau * s_[i] / ds[i]);
        for (int i = 0; i < mi_; ++i)
            if (dz[i] < 0.0) a_du = std::min(a_du, -tau * z_[i] / dz[i]);
        for (Eigen::Index t = 0; t < dzl.size(); ++t)
            if (dzl[t] < 0.0) a_du = std::min(a_du, -tau * zl_[t] / dzl[t]);
        for (Eigen::Index t = 0; t < dzu.size(); ++t)
            if (dzu[t] < 0.0) a_du = std::min(a_du, -tau * zu_[t] / dzu[t]);

        // exact-penalty merit line search
        double y_inf = 0.0;
        if (me_ > 0) y_inf = (y_ + dy).lpNorm<Eigen::Infinity>();
        if (mi_ > 0) y_inf = std::max(y_inf, (z_ + dz).lpNorm<Eigen::Infinity>());
        nu = std::max(nu, 1.1 * y_inf + 1e-4);

        const double theta0 = theta_of(ev.ce, ev.ci, s_);
        const double phi0 = ev.f - mu * barrier_terms(x_, s_) + nu * theta0;
        double slope = gphi.dot(dx) - nu * theta0;
        for (int i = 0; i < mi_; ++i) slope -= mu / s_[i] * ds[i];

        double alpha = a_pr;
        double alpha_ok = a_pr;
        bool have_trial = false;
        Eigen::VectorXd xt, st;  // last trial that evaluated cleanly
        for (int ls = 0; ls < 32; ++ls, alpha *= 0.5) {
            const Eigen::VectorXd x_try = x_ + alpha * dx;
            const Eigen::VectorXd s_try = s_ + alpha * ds;
            double f_try;
            Eigen::VectorXd ce_try, ci_try;
            try {
                f_try = prob_.objective(x_try, nullptr);
                ce_try = prob_.equalities(x_try);
                ci_try = prob_.inequalities(x_try);
            } catch (const NumericsError&) {
                continue;
            }
            if (!std::isfinite(f_try)) continue;
            xt = x_try;
            st = s_try;
            alpha_ok = alpha;
            have_trial = true;
            const double phit =
                f_try - mu * barrier_terms(x_try, s_try) + nu * theta_of(ce_try, ci_try, s_try);
            // the noise margin keeps full steps alive once merit differences
            // sink below rounding level
            if (phit <= phi0 + 1e-4 * alpha * std::min(slope, 0.0) +
                            1e-14 * (1.0 + std::abs(phi0)))
                break;
        }
        if (!have_trial) return finish(SolveStatus::NumericalFailure, iter);

        const Eigen::VectorXd x_prev = x_;
        const Eval ev_prev = ev;
        alpha = alpha_ok;
        x_ = xt;
        s_ = st;
        y_ += alpha * dy;
        z_ += a_du * dz;
        zl_ += a_du * dzl;
        zu_ += a_du * dzu;

        // keep the duals compatible with the barrier level
        for (int i = 0; i < mi_; ++i)
            z_[i] = std::clamp(z_[i], mu / (kDualGuard * s_[i]), mu * kDualGuard / s_[i]);
        for (std::size_t t = 0; t < low_.size(); ++t) {
            const double gap = x_[low_[t]] - lb_[low_[t]];
            zl_[t] = std::clamp(zl_[t], mu / (kDualGuard * gap), mu * kDualGuard / gap);
        }
        for (std::size_t t = 0; t < upp_.size(); ++t) {
            const double gap = ub_[upp_[t]] - x_[upp_[t]];
            zu_[t] = std::clamp(zu_[t], mu / (kDualGuard * gap), mu * kDualGuard / gap);
        }

        ev = evaluate(x_);
        remember_best(ev);

        // damped diagonal secant on the Lagrangian gradient
        if (opts_.curvature == CurvatureModel::QuasiUpdate) {
            Eigen::VectorXd gnew = ev.g, gold = ev_prev.g;
            if (me_ > 0) {
                gnew -= ev.ae.transpose() * y_;
                gold -= ev_prev.ae.transpose() * y_;
            }
            if (mi_ > 0) {
                gnew -= ev.ai.transpose() * z_;
                gold -= ev_prev.ai.transpose() * z_;
            }
            for (int i = 0; i < n_; ++i) {
                const double step = x_[i] - x_prev[i];
                if (std::abs(step) <= 1e-9 * (1.0 + std::abs(x_[i]))) continue;
                const double raw = std::clamp((gnew[i] - gold[i]) / step, kCurvMin, kCurvMax);
                curv[i] = std::clamp(0.5 * curv[i] + 0.5 * raw, kCurvMin, kCurvMax);
            }
        }

        if (opts_.verbose) {
            std::fprintf(stderr, "ipm %4d  obj %+.9e  feas %.3e  kkt %.3e  step %.3e  mu %.3e\n",
                         iter, ev.f, violation(ev), kkt_error(ev, 0.0), alpha, mu);
        }

        // a step that cannot move while infeasible signals an infeasible or
        // degenerate problem
        const double moved = alpha * dx.lpNorm<Eigen::Infinity>();
        if (moved <= 1e-12 * (1.0 + x_.lpNorm<Eigen::Infinity>()))
            ++stall;
        else
            stall = 0;
        if (stall >= 3) {
            const double v = violation(ev);
            return finish(v > std::max(100.0 * opts_.tol_feas, 1e-6)
                              ? SolveStatus::Infeasible
                              : SolveStatus::IterationCap,
                          iter);
        }
    }

    return finish(SolveStatus::IterationCap, opts_.max_iter);
}

} // namespace

FixedVariableNlp::FixedVariableNlp(const NlpProblem& inner, std::vector<int> fixed,
                                   Eigen::VectorXd values)
    : inner_(inner) {
    const int n = inner.num_vars();
    if (fixed.size() != static_cast<std::size_t>(values.size()))
        throw ValidationError("one pinned value per fixed variable required");
    if (fixed.empty()) throw ValidationError("no variables to pin");
    col_map_.assign(static_cast<std::size_t>(n), 0);
    base_ = Eigen::VectorXd::Zero(n);
    for (std::size_t t = 0; t < fixed.size(); ++t) {
        const int i = fixed[t];
        if (i < 0 || i >= n) throw ValidationError("fixed variable index out of range");
        if (col_map_[static_cast<std::size_t>(i)] == -1)
            throw ValidationError("variable pinned twice");
        col_map_[static_cast<std::size_t>(i)] = -1;
        base_[i] = values[static_cast<Eigen::Index>(t)];
    }
    for (int i = 0; i < n; ++i)
        if (col_map_[static_cast<std::size_t>(i)] == 0) {
            col_map_[static_cast<std::size_t>(i)] = static_cast<int>(keep_.size());
            keep_.push_back(i);
        }
    if (keep_.empty()) throw ValidationError("pinning every variable leaves nothing to solve");
}

int FixedVariableNlp::num_vars() const { return static_cast<int>(keep_.size()); }
int FixedVariableNlp::num_equalities() const { return inner_.num_equalities(); }
int FixedVariableNlp::num_inequalities() const { return inner_.num_inequalities(); }

Eigen::VectorXd FixedVariableNlp::expand(const Eigen::VectorXd& reduced) const {
    if (reduced.size() != static_cast<Eigen::Index>(keep_.size()))
        throw ValidationError("reduced vector has the wrong size");
    Eigen::VectorXd full = base_;
    for (std::size_t t = 0; t < keep_.size(); ++t)
        full[keep_[t]] = reduced[static_cast<Eigen::Index>(t)];
    return full;
}

Eigen::VectorXd FixedVariableNlp::reduce(const Eigen::VectorXd& full) const {
    if (full.size() != base_.size())
        throw ValidationError("full vector has the wrong size");
    Eigen::VectorXd out(static_cast<Eigen::Index>(keep_.size()));
    for (std::size_t t = 0; t < keep_.size(); ++t)
        out[static_cast<Eigen::Index>(t)] = full[keep_[t]];
    return out;
}

Eigen::SparseMatrix<double> FixedVariableNlp::shrink(const Eigen::SparseMatrix<double>& m) const {
    Eigen::SparseMatrix<double> out(m.rows(), static_cast<Eigen::Index>(keep_.size()));
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(m.nonZeros()));
    for (int k = 0; k < m.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(m, k); it; ++it) {
            const int c = col_map_[static_cast<std::size_t>(it.col())];
            if (c >= 0) trip.emplace_back(static_cast<int>(it.row()), c, it.value());
        }
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
}

Eigen::VectorXd FixedVariableNlp::lower_bounds() const { return reduce(inner_.lower_bounds()); }
Eigen::VectorXd FixedVariableNlp::upper_bounds() const { return reduce(inner_.upper_bounds()); }

double FixedVariableNlp::objective(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
    if (!grad) return inner_.objective(expand(x), nullptr);
    Eigen::VectorXd gfull;
    const double f = inner_.objective(expand(x), &gfull);
    *grad = reduce(gfull);
    return f;
}

Eigen::VectorXd FixedVariableNlp::equalities(const Eigen::VectorXd& x) const {
    return inner_.equalities(expand(x));
}

Eigen::VectorXd FixedVariableNlp::inequalities(const Eigen::VectorXd& x) const {
    return inner_.inequalities(expand(x));
}

Eigen::SparseMatrix<double> FixedVariableNlp::equality_jacobian(const Eigen::VectorXd& x) const {
    return shrink(inner_.equality_jacobian(expand(x)));
}

Eigen::SparseMatrix<double> FixedVariableNlp::inequality_jacobian(
    const Eigen::VectorXd& x) const {
    return shrink(inner_.inequality_jacobian(expand(x)));
}

NlpResult solve(const NlpProblem& problem, const Eigen::VectorXd& x0, const SolverOptions& opts) {
    InteriorPoint ip(problem, opts);
    return ip.run(x0);
}

} // namespace gasblend
