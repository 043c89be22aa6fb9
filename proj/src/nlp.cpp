#include "twsim/nlp.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

#include "twsim/error.hpp"

namespace twsim {

namespace {

using Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;

constexpr double kEta = 1e-4;          // Armijo constant
constexpr double kKappaEps = 10.0;     // barrier subproblem tolerance factor
constexpr double kKappaMu = 0.2;
constexpr double kThetaMu = 1.5;
constexpr double kDualClamp = 1e10;
constexpr double kRegEq = 1e-9;

struct Iterate {
    VectorXd x, s, lambda, y;
};

struct Evaluation {
    double f = 0.0;
    VectorXd grad, c, g;
    SpMat jc, jg;
};

bool finite(const VectorXd& v) { return v.allFinite(); }

double l1(const VectorXd& v) { return v.lpNorm<1>(); }
double linf(const VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

SpMat to_sparse(int rows, int cols, const Triplets& t) {
    SpMat m(rows, cols);
    m.setFromTriplets(t.begin(), t.end());
    return m;
}

class Solver {
public:
    Solver(const NlpProblem& p, const NlpOptions& o)
        : p_(p), o_(o), n_(p.num_variables()), me_(p.num_equalities()), mi_(p.num_inequalities()) {}

    NlpResult run();

private:
    void evaluate(const VectorXd& x, Evaluation& e, bool derivatives) const;
    double merit(double f, const VectorXd& c, const VectorXd& g, const VectorXd& s, double mu, double nu) const;
    bool factorize(const SpMat& h, const SpMat& jc);

    const NlpProblem& p_;
    const NlpOptions& o_;
    const int n_, me_, mi_;
    Eigen::SimplicialLDLT<SpMat, Eigen::Lower> ldlt_;
    Eigen::Index analysed_nnz_ = -1;
    double last_delta_w_ = 0.0;
    double prox_ = 0.0;  // proximal term, raised after heavily damped steps
};

void Solver::evaluate(const VectorXd& x, Evaluation& e, bool derivatives) const {
    e.f = p_.objective(x);
    e.c.resize(me_);
    e.g.resize(mi_);
    p_.equalities(x, e.c);
    p_.inequalities(x, e.g);
    if (derivatives) {
        e.grad.resize(n_);
        p_.objective_gradient(x, e.grad);
        Triplets t;
        p_.equality_jacobian(x, t);
        e.jc = to_sparse(me_, n_, t);
        t.clear();
        p_.inequality_jacobian(x, t);
        e.jg = to_sparse(mi_, n_, t);
    }
}

double Solver::merit(double f, const VectorXd& c, const VectorXd& g, const VectorXd& s, double mu, double nu) const {
    return f - mu * s.array().log().sum() + nu * (l1(c) + l1(g + s));
}

// Factorises [[h + dw I, jc^T], [jc, -dc I]] with the inertia (n, me, 0).
bool Solver::factorize(const SpMat& h, const SpMat& jc) {
    const int dim = n_ + me_;
    auto assemble = [&](double dw) {
        Triplets t;
        t.reserve(static_cast<size_t>(h.nonZeros() + jc.nonZeros() + dim));
        for (int k = 0; k < h.outerSize(); ++k) {
            for (SpMat::InnerIterator it(h, k); it; ++it) {
                if (it.row() >= it.col()) t.emplace_back(it.row(), it.col(), it.value());
            }
        }
        for (int k = 0; k < jc.outerSize(); ++k) {
            for (SpMat::InnerIterator it(jc, k); it; ++it) t.emplace_back(n_ + it.row(), it.col(), it.value());
        }
        for (int i = 0; i < n_; ++i) t.emplace_back(i, i, dw);
        for (int i = 0; i < me_; ++i) t.emplace_back(n_ + i, n_ + i, -kRegEq);
        SpMat k(dim, dim);
        k.setFromTriplets(t.begin(), t.end());
        return k;
    };
    auto inertia_ok = [&]() {
        if (ldlt_.info() != Eigen::Success) return false;
        const VectorXd d = ldlt_.vectorD();
        int pos = 0, neg = 0;
        for (Eigen::Index i = 0; i < d.size(); ++i) {
            if (!std::isfinite(d(i))) return false;
            if (d(i) > 0.0) ++pos;
            else if (d(i) < 0.0) ++neg;
        }
        return pos == n_ && neg == me_;
    };

    double dw = prox_;
    for (int attempt = 0; attempt < 60; ++attempt) {
        SpMat k = assemble(dw);
        if (k.nonZeros() != analysed_nnz_) {
            ldlt_.analyzePattern(k);
            analysed_nnz_ = k.nonZeros();
        }
        ldlt_.factorize(k);
        if (inertia_ok()) {
            if (dw > prox_) last_delta_w_ = dw;
            return true;
        }
        if (attempt == 0) {
            const double start = last_delta_w_ == 0.0 ? 1e-4 : std::max(1e-20, last_delta_w_ / 3.0);
            dw = start > prox_ ? start : 8.0 * std::max(prox_, 1e-20);
        } else {
            dw *= last_delta_w_ == 0.0 ? 100.0 : 8.0;
        }
        if (dw > 1e40) break;
    }
    return false;
}

NlpResult Solver::run() {
    NlpResult res;
    Iterate it;
    it.x = p_.initial_point();
    if (it.x.size() != n_) {
        throw Error(ErrorKind::InvalidInput, "initial point has the wrong dimension");
    }

    double mu = o_.mu_init;
    const double mu_min = std::min(o_.opt_tol, o_.feas_tol) / 10.0;
    Evaluation ev;
    evaluate(it.x, ev, true);
    if (!std::isfinite(ev.f) || !finite(ev.c) || !finite(ev.g)) {
        throw Error(ErrorKind::Diverged, "non-finite values at the initial point");
    }
    it.s = (-ev.g).cwiseMax(1e-2);
    it.y = (mu / it.s.array()).matrix();
    it.lambda = VectorXd::Zero(me_);
    double nu = 1.0;
    double best_violation = std::numeric_limits<double>::infinity();
    double last_alpha = 0.0;

    for (int iter = 0; iter <= o_.max_iter; ++iter) {
        const VectorXd rx = ev.grad + ev.jc.transpose() * it.lambda + ev.jg.transpose() * it.y;
        const VectorXd rg = ev.g + it.s;
        const double sd = std::max(100.0, (l1(it.lambda) + l1(it.y)) / std::max(1, me_ + mi_)) / 100.0;
        const double eq_res = linf(ev.c);
        const double ineq_viol = mi_ ? std::max(0.0, ev.g.maxCoeff()) : 0.0;
        const double dual = linf(rx) / sd;
        const double comp0 = mi_ ? linf((it.s.array() * it.y.array()).matrix()) / sd : 0.0;
        best_violation = std::min(best_violation, std::max(eq_res / o_.defect_tol, ineq_viol / o_.feas_tol));

        res.iterations = iter;
        if (o_.verbose) {
            std::fprintf(stderr, "%4d f=% .8e eq=%.2e in=%.2e dual=%.2e comp=%.2e mu=%.1e nu=%.1e alpha=%.1e dw=%.1e prox=%.1e\n",
                         iter, ev.f, eq_res, ineq_viol, dual, comp0, mu, nu, last_alpha, last_delta_w_, prox_);
        }
        if (eq_res <= o_.defect_tol && ineq_viol <= o_.feas_tol && dual <= o_.opt_tol && comp0 <= o_.opt_tol) {
            res.converged = true;
            res.message = "converged";
            break;
        }
        if (iter == o_.max_iter) {
            res.message = "iteration budget exhausted";
            break;
        }

        // barrier parameter update
        auto barrier_error = [&](double m) {
            const double comp = mi_ ? linf((it.s.array() * it.y.array() - m).matrix()) / sd : 0.0;
            return std::max({dual, linf(ev.c), linf(rg), comp});
        };
        while (mu > mu_min && barrier_error(mu) <= kKappaEps * mu) {
            mu = std::max(mu_min, std::min(kKappaMu * mu, std::pow(mu, kThetaMu)));
        }
        const double tau = std::max(0.99, 1.0 - mu);

        Triplets ht;
        p_.lagrangian_hessian(it.x, 1.0, it.lambda, it.y, ht);
        SpMat w = to_sparse(n_, n_, ht);
        w = SpMat(w.selfadjointView<Eigen::Lower>());
        const VectorXd sigma = (it.y.array() / it.s.array()).matrix();
        SpMat h = w;
        if (mi_) {
            SpMat jgs = sigma.asDiagonal() * ev.jg;
            h += SpMat(ev.jg.transpose() * jgs);
        }
        if (!factorize(h, ev.jc)) {
            throw Error(ErrorKind::Diverged, "KKT matrix could not be regularised");
        }

        const VectorXd rs = (it.s.array() * it.y.array() - mu).matrix();
        VectorXd rhs(n_ + me_);
        rhs.head(n_) = -rx;
        if (mi_) {
            rhs.head(n_) -= ev.jg.transpose() * (sigma.cwiseProduct(rg) - (rs.array() / it.s.array()).matrix());
        }
        rhs.tail(me_) = -ev.c;
        const VectorXd sol = ldlt_.solve(rhs);
        if (!finite(sol)) {
            throw Error(ErrorKind::Diverged, "non-finite Newton step");
        }
        const VectorXd dx = sol.head(n_);
        const VectorXd dl = sol.tail(me_);
        VectorXd dy, ds;
        if (mi_) {
            const VectorXd jdx = ev.jg * dx;
            dy = sigma.cwiseProduct(jdx + rg) - (rs.array() / it.s.array()).matrix();
            ds = -rg - jdx;
        }

        double alpha_p = 1.0, alpha_d = 1.0;
        for (int i = 0; i < mi_; ++i) {
            if (ds(i) < 0.0) alpha_p = std::min(alpha_p, -tau * it.s(i) / ds(i));
            if (dy(i) < 0.0) alpha_d = std::min(alpha_d, -tau * it.y(i) / dy(i));
        }

        // penalty update so the step is a descent direction of the merit function
        const double viol = l1(ev.c) + l1(rg);
        double barrier_slope = ev.grad.dot(dx);
        if (mi_) barrier_slope -= mu * (ds.array() / it.s.array()).sum();
        if (viol > 0.0) {
            const double curv = std::max(0.0, dx.dot(h * dx));
            const double needed = (barrier_slope + 0.5 * curv) / (0.9 * viol);
            // exactness needs nu above the multiplier estimates
            const double floor = 1.1 * std::max(linf(it.lambda + dl), mi_ ? linf(it.y + dy) : 0.0);
            nu = nu < needed ? needed + 1.0 : std::max({needed + 1.0, floor, 0.5 * nu});
        }
        const double slope = barrier_slope - nu * viol;
        const double phi0 = merit(ev.f, ev.c, ev.g, it.s, mu, nu);

        Evaluation trial;
        double alpha = alpha_p;
        bool accepted = false;
        VectorXd xt, st;
        for (int ls = 0; ls < 60; ++ls) {
            xt = it.x + alpha * dx;
            st = mi_ ? VectorXd(it.s + alpha * ds) : VectorXd();
            evaluate(xt, trial, false);
            if (std::isfinite(trial.f) && finite(trial.c) && finite(trial.g)) {
                const double phi = merit(trial.f, trial.c, trial.g, st, mu, nu);
                if (phi <= phi0 + kEta * alpha * slope || (slope >= 0.0 && phi <= phi0)) {
                    res.merit_log.push_back({iter, mu, nu, phi0, phi});
                    accepted = true;
                    break;
                }
                if (ls == 0 && me_ + mi_ > 0) {
                    // second-order correction: re-solve with the accumulated constraint residual
                    const double a0 = alpha;
                    VectorXd rhs2 = rhs;
                    const VectorXd rg_soc = mi_ ? VectorXd(a0 * rg + trial.g + st) : VectorXd();
                    if (mi_) {
                        rhs2.head(n_) = -rx - ev.jg.transpose() * (sigma.cwiseProduct(rg_soc) -
                                                                   (rs.array() / it.s.array()).matrix());
                    }
                    rhs2.tail(me_) = -(a0 * ev.c + trial.c);
                    const VectorXd dx2 = ldlt_.solve(rhs2).head(n_);
                    VectorXd ds2;
                    double a2 = 1.0;
                    if (mi_) {
                        ds2 = -rg_soc - ev.jg * dx2;
                        for (int i = 0; i < mi_; ++i) {
                            if (ds2(i) < 0.0) a2 = std::min(a2, -tau * it.s(i) / ds2(i));
                        }
                    }
                    const VectorXd xs = it.x + a2 * dx2;
                    const VectorXd ss = mi_ ? VectorXd(it.s + a2 * ds2) : VectorXd();
                    Evaluation soc;
                    evaluate(xs, soc, false);
                    if (a2 > 0.0 && std::isfinite(soc.f) && finite(soc.c) && finite(soc.g)) {
                        const double phis = merit(soc.f, soc.c, soc.g, ss, mu, nu);
                        if (phis <= phi0 + kEta * a0 * slope) {
                            res.merit_log.push_back({iter, mu, nu, phi0, phis});
                            xt = xs;
                            st = ss;
                            accepted = true;
                            break;
                        }
                    }
                }
            }
            alpha *= 0.5;
            if (alpha < 1e-14) break;
        }
        if (!accepted) {
            // take a short step anyway to escape; the merit log only records accepted steps
            alpha = std::min(alpha_p, 1e-4);
            xt = it.x + alpha * dx;
            st = mi_ ? VectorXd(it.s + alpha * ds) : VectorXd();
        }

        last_alpha = accepted ? alpha : -alpha;
        if (!accepted || alpha < 0.1) {
            prox_ = std::min(1e8, std::max(1e-4, 4.0 * prox_));
        } else if (alpha == alpha_p) {
            prox_ = prox_ < 1e-8 ? 0.0 : prox_ / 2.0;
        }
        it.x = xt;
        if (mi_) {
            it.s = st.cwiseMax(1e-300);
            it.y += alpha_d * dy;
            for (int i = 0; i < mi_; ++i) {
                it.y(i) = std::clamp(it.y(i), mu / (kDualClamp * it.s(i)), kDualClamp * mu / it.s(i));
            }
        }
        it.lambda += alpha * dl;
        evaluate(it.x, ev, true);
        if (!std::isfinite(ev.f) || !finite(ev.c) || !finite(ev.g) || !finite(ev.grad) || !finite(it.x)) {
            throw Error(ErrorKind::Diverged, "non-finite iterate at iteration " + std::to_string(iter));
        }
    }

    res.x = it.x;
    res.lambda = it.lambda;
    res.y = it.y;
    res.objective = ev.f;
    res.equality_residual = linf(ev.c);
    res.inequality_violation = mi_ ? std::max(0.0, ev.g.maxCoeff()) : 0.0;
    const VectorXd rx = ev.grad + ev.jc.transpose() * it.lambda + ev.jg.transpose() * it.y;
    res.dual_residual = linf(rx);
    res.complementarity = mi_ ? linf((it.s.array() * it.y.array()).matrix()) : 0.0;
    if (!res.converged && best_violation > 1.0) {
        throw Error(ErrorKind::Infeasible, "no iterate met the feasibility tolerances in " +
                                               std::to_string(res.iterations) + " iterations (equality " +
                                               std::to_string(res.equality_residual) + ", inequality " +
                                               std::to_string(res.inequality_violation) + ")");
    }
    return res;
}

}  // namespace

NlpResult solve_nlp(const NlpProblem& problem, const NlpOptions& options) {
    Solver solver(problem, options);
    return solver.run();
}

}  // namespace twsim
