#pragma once

#include <Eigen/Dense>
#include <string>

namespace gridattack {

// minimize ||S x - c||_2 - q^T x
// subject to A_eq x = b_eq, lower <= A_in x <= upper (entries may be +-inf).
struct ConvexProgram {
    int n_vars = 0;
    Eigen::MatrixXd S;
    Eigen::VectorXd c;
    Eigen::VectorXd q;
    Eigen::MatrixXd A_eq;
    Eigen::VectorXd b_eq;
    Eigen::MatrixXd A_in;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;

    explicit ConvexProgram(int n = 0);
    double objective(const Eigen::VectorXd& x) const;
    // Throws std::invalid_argument on inconsistent dimensions.
    void check() const;
};

enum class SolveStatus { optimal, infeasible, numerical_failure };

struct SolveOutcome {
    SolveStatus status = SolveStatus::numerical_failure;
    Eigen::VectorXd x_star;
    double objective_value = 0.0;
    double kkt_residual = 0.0;
    int iterations = 0;
    // Residual norm of the perturbed KKT system before and after each
    // accepted main-phase step, measured at that step's barrier parameter.
    Eigen::VectorXd merit_before;
    Eigen::VectorXd merit_after;
};

struct SolverOptions {
    double tolerance = 1e-8;
    int max_iter = 200;
};

SolveOutcome solve(const ConvexProgram& prog, const SolverOptions& opt = {});

struct KktReport {
    double eq_violation = 0.0;
    double ineq_violation = 0.0;
    double stationarity = 0.0;
    bool feasible(double tol = 1e-6) const { return eq_violation <= tol && ineq_violation <= tol; }
    bool optimal(double tol = 1e-6) const { return feasible(tol) && stationarity <= tol; }
    double max_violation() const;
};

// Independent first-order check: feasibility plus the best nonnegative
// multiplier fit on the active set.
KktReport audit_kkt(const ConvexProgram& prog, const Eigen::VectorXd& x, double active_tol = 1e-6);

std::string to_string(SolveStatus s);

}  // namespace gridattack
