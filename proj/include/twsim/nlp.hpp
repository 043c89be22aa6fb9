#pragma once

#include <Eigen/Sparse>
#include <string>
#include <vector>

namespace twsim {

using Triplets = std::vector<Eigen::Triplet<double>>;

// min f(x) subject to c(x) = 0 and g(x) <= 0.
class NlpProblem {
public:
    virtual ~NlpProblem() = default;

    virtual int num_variables() const = 0;
    virtual int num_equalities() const = 0;
    virtual int num_inequalities() const = 0;

    virtual Eigen::VectorXd initial_point() const = 0;
    virtual double objective(const Eigen::VectorXd& x) const = 0;
    virtual void objective_gradient(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const = 0;
    virtual void equalities(const Eigen::VectorXd& x, Eigen::VectorXd& c) const = 0;
    virtual void inequalities(const Eigen::VectorXd& x, Eigen::VectorXd& g) const = 0;
    // Triplets must be emitted in the same positions on every call.
    virtual void equality_jacobian(const Eigen::VectorXd& x, Triplets& out) const = 0;
    virtual void inequality_jacobian(const Eigen::VectorXd& x, Triplets& out) const = 0;
    // Lower triangle of obj_factor * H_f + sum lambda_i H_ci + sum y_j H_gj.
    virtual void lagrangian_hessian(const Eigen::VectorXd& x, double obj_factor, const Eigen::VectorXd& lambda,
                                    const Eigen::VectorXd& y, Triplets& out) const = 0;
};

struct NlpOptions {
    double feas_tol = 1e-4;    // inequality violation
    double defect_tol = 1e-6;  // equality residual
    double opt_tol = 1e-5;     // scaled dual residual and complementarity
    int max_iter = 1000;
    double mu_init = 0.1;
    bool verbose = false;
};

struct MeritRecord {
    int iteration = 0;
    double mu = 0.0;
    double nu = 0.0;
    double before = 0.0;
    double after = 0.0;
};

struct NlpResult {
    Eigen::VectorXd x;
    Eigen::VectorXd lambda;  // equality multipliers
    Eigen::VectorXd y;       // inequality multipliers, >= 0
    double objective = 0.0;
    double equality_residual = 0.0;    // max |c|
    double inequality_violation = 0.0; // max(g, 0)
    double dual_residual = 0.0;
    double complementarity = 0.0;
    int iterations = 0;
    bool converged = false;
    std::string message;
    std::vector<MeritRecord> merit_log;
};

// Primal-dual interior point with an l1 merit line search. Throws Infeasible
// when no iterate meets the feasibility tolerances within the budget and
// Diverged when iterates become non-finite.
NlpResult solve_nlp(const NlpProblem& problem, const NlpOptions& options = {});

}  // namespace twsim
