#include "gridattack/qp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace gridattack {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Smooth convex constraints f_i(y) <= 0 on y = (z, t): linear rows g^T z - h
// and, when present, the epigraph ||S z - c||^2 / t - t.
struct Constraints {
    Eigen::MatrixXd G;  // rows over z only
    Eigen::VectorXd h;
    Eigen::MatrixXd S;  // empty rows: no cone
    Eigen::VectorXd c;
    int nz = 0;
    bool cone() const { return S.rows() > 0; }
    int n() const { return nz + (cone() ? 1 : 0); }
    int m() const { return static_cast<int>(G.rows()) + (cone() ? 1 : 0); }

    Eigen::VectorXd values(const Eigen::VectorXd& y) const {
        Eigen::VectorXd f(m());
        f.head(G.rows()) = G * y.head(nz) - h;
        if (cone()) {
            const double t = y(nz);
            f(m() - 1) = t > 0 ? (S * y.head(nz) - c).squaredNorm() / t - t : kInf;
        }
        return f;
    }

    Eigen::MatrixXd jacobian(const Eigen::VectorXd& y) const {
        Eigen::MatrixXd df = Eigen::MatrixXd::Zero(m(), n());
        df.topLeftCorner(G.rows(), nz) = G;
        if (cone()) {
            const double t = y(nz);
            const Eigen::VectorXd u = S * y.head(nz) - c;
            df.row(m() - 1).head(nz) = (2.0 / t) * (S.transpose() * u).transpose();
            df(m() - 1, nz) = -u.squaredNorm() / (t * t) - 1.0;
        }
        return df;
    }

    // Hessian of the cone constraint (linear rows contribute nothing).
    Eigen::MatrixXd cone_hessian(const Eigen::VectorXd& y) const {
        Eigen::MatrixXd hs = Eigen::MatrixXd::Zero(n(), n());
        if (!cone()) return hs;
        const double t = y(nz);
        const Eigen::VectorXd u = S * y.head(nz) - c;
        const Eigen::VectorXd stu = S.transpose() * u;
        hs.topLeftCorner(nz, nz) = (2.0 / t) * S.transpose() * S;
        hs.col(nz).head(nz) = -2.0 / (t * t) * stu;
        hs.row(nz).head(nz) = hs.col(nz).head(nz).transpose();
        hs(nz, nz) = 2.0 * u.squaredNorm() / (t * t * t);
        return hs;
    }
};

struct IpmResult {
    Eigen::VectorXd y;
    Eigen::VectorXd lambda;
    bool converged = false;
    int iterations = 0;
    double dual_residual = 0.0;
    double gap = 0.0;
    std::vector<double> merit_before, merit_after;
};

Eigen::VectorXd solve_spd(Eigen::MatrixXd a, const Eigen::VectorXd& b) {
    const double scale = std::max(1.0, a.diagonal().cwiseAbs().maxCoeff());
    for (double reg : {0.0, 1e-14, 1e-12, 1e-10}) {
        Eigen::MatrixXd m = a;
        m.diagonal().array() += reg * scale;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
        if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
            Eigen::VectorXd x = ldlt.solve(b);
            if (x.allFinite()) return x;
        }
    }
    return Eigen::FullPivLU<Eigen::MatrixXd>(a).solve(b);
}

// Primal-dual interior-point iteration for min c0^T y s.t. f(y) <= 0 from a
// strictly feasible y0.
IpmResult primal_dual(const Constraints& cs, const Eigen::VectorXd& c0, Eigen::VectorXd y, double tol, int max_iter) {
    const int m = cs.m();
    const double mu = 10.0, alpha = 0.01, beta = 0.5;
    IpmResult res;
    Eigen::VectorXd f = cs.values(y);
    Eigen::VectorXd lambda = (-f).cwiseInverse();

    auto residual = [&](const Eigen::VectorXd& yy, const Eigen::VectorXd& ll, const Eigen::VectorXd& ff, double tb,
                        Eigen::VectorXd& rd, Eigen::VectorXd& rc) {
        rd = c0 + cs.jacobian(yy).transpose() * ll;
        rc = -ll.cwiseProduct(ff) - Eigen::VectorXd::Constant(m, 1.0 / tb);
        return std::sqrt(rd.squaredNorm() + rc.squaredNorm());
    };

    for (int it = 0; it < max_iter; ++it) {
        res.iterations = it + 1;
        const double eta = -f.dot(lambda);
        const double tb = mu * m / eta;
        Eigen::VectorXd rd, rc;
        const double rnorm = residual(y, lambda, f, tb, rd, rc);
        res.dual_residual = rd.lpNorm<Eigen::Infinity>();
        res.gap = eta;
        if (res.dual_residual <= tol && eta <= tol) {
            res.converged = true;
            break;
        }
        const Eigen::MatrixXd df = cs.jacobian(y);
        Eigen::MatrixXd hpd = cs.cone() ? Eigen::MatrixXd(lambda(m - 1) * cs.cone_hessian(y))
                                        : Eigen::MatrixXd::Zero(cs.n(), cs.n());
        const Eigen::VectorXd w = (-lambda.array() / f.array()).matrix();
        hpd += df.transpose() * w.asDiagonal() * df;
        const Eigen::VectorXd rhs = -rd - df.transpose() * rc.cwiseQuotient(f);
        const Eigen::VectorXd dy = solve_spd(hpd, rhs);
        const Eigen::VectorXd dl = (rc - lambda.cwiseProduct(df * dy)).cwiseQuotient(f);
        if (!dy.allFinite() || !dl.allFinite()) break;

        double smax = 1.0;
        for (int i = 0; i < m; ++i)
            if (dl(i) < 0) smax = std::min(smax, -lambda(i) / dl(i));
        double s = 0.99 * smax;
        Eigen::VectorXd yn, ln, fn;
        int guard = 0;
        for (; guard < 80; ++guard) {
            yn = y + s * dy;
            fn = cs.values(yn);
            if ((fn.array() < 0).all()) break;
            s *= beta;
        }
        if (guard == 80) break;
        double rnew = 0.0;
        for (guard = 0; guard < 80; ++guard) {
            yn = y + s * dy;
            ln = lambda + s * dl;
            fn = cs.values(yn);
            Eigen::VectorXd rd2, rc2;
            rnew = residual(yn, ln, fn, tb, rd2, rc2);
            if (rnew <= (1.0 - alpha * s) * rnorm) break;
            s *= beta;
        }
        if (guard == 80 || s < 1e-12) break;  // rounding floor: no further progress possible
        res.merit_before.push_back(rnorm);
        res.merit_after.push_back(rnew);
        y = yn;
        lambda = ln;
        f = fn;
    }
    res.y = y;
    res.lambda = lambda;
    return res;
}

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Least-change move from x onto the equalities, the bounds active within tol and,
// when x sits at the kink, S x = c. Empty when nothing is active.
Eigen::VectorXd polish(const ConvexProgram& prog, const Eigen::VectorXd& x, double tol) {
    std::vector<Eigen::VectorXd> rows;
    std::vector<double> rhs;
    for (Eigen::Index i = 0; i < prog.A_eq.rows(); ++i) {
        rows.push_back(prog.A_eq.row(i).transpose());
        rhs.push_back(prog.b_eq(i));
    }
    const Eigen::VectorXd ax = prog.A_in * x;
    for (Eigen::Index i = 0; i < ax.size(); ++i) {
        if (std::isfinite(prog.upper(i)) && ax(i) >= prog.upper(i) - tol) {
            rows.push_back(prog.A_in.row(i).transpose());
            rhs.push_back(prog.upper(i));
        } else if (std::isfinite(prog.lower(i)) && ax(i) <= prog.lower(i) + tol) {
            rows.push_back(prog.A_in.row(i).transpose());
            rhs.push_back(prog.lower(i));
        }
    }
    if (prog.S.rows() > 0 && (prog.S * x - prog.c).norm() <= tol)
        for (Eigen::Index k = 0; k < prog.S.rows(); ++k) {
            rows.push_back(prog.S.row(k).transpose());
            rhs.push_back(prog.c(k));
        }
    if (rows.empty()) return {};
    Eigen::MatrixXd e(static_cast<Eigen::Index>(rows.size()), x.size());
    for (std::size_t k = 0; k < rows.size(); ++k) e.row(static_cast<Eigen::Index>(k)) = rows[k].transpose();
    const Eigen::VectorXd b = to_eigen(rhs);
    return x + e.completeOrthogonalDecomposition().solve(b - e * x);
}

}  // namespace

ConvexProgram::ConvexProgram(int n)
    : n_vars(n),
      S(0, n),
      c(0),
      q(Eigen::VectorXd::Zero(n)),
      A_eq(0, n),
      b_eq(0),
      A_in(0, n),
      lower(0),
      upper(0) {}

double ConvexProgram::objective(const Eigen::VectorXd& x) const {
    const double norm = S.rows() > 0 ? (S * x - c).norm() : 0.0;
    return norm - q.dot(x);
}

void ConvexProgram::check() const {
    const auto n = static_cast<Eigen::Index>(n_vars);
    if (S.cols() != n || c.size() != S.rows()) throw std::invalid_argument("norm term dimension mismatch");
    if (q.size() != n) throw std::invalid_argument("linear term dimension mismatch");
    if (A_eq.cols() != n || b_eq.size() != A_eq.rows()) throw std::invalid_argument("equality dimension mismatch");
    if (A_in.cols() != n || lower.size() != A_in.rows() || upper.size() != A_in.rows())
        throw std::invalid_argument("inequality dimension mismatch");
    for (Eigen::Index i = 0; i < lower.size(); ++i)
        if (lower(i) > upper(i)) throw std::invalid_argument("lower bound exceeds upper bound");
}

SolveOutcome solve(const ConvexProgram& prog, const SolverOptions& opt) {
    prog.check();
    const int n = prog.n_vars;
    SolveOutcome out;
    out.x_star = Eigen::VectorXd::Zero(n);

    // Collapse two-sided rows with coincident bounds into equalities; split the rest.
    std::vector<Eigen::VectorXd> eq_rows, g_rows;
    std::vector<double> eq_rhs, g_rhs;
    for (Eigen::Index i = 0; i < prog.A_eq.rows(); ++i) {
        eq_rows.push_back(prog.A_eq.row(i).transpose());
        eq_rhs.push_back(prog.b_eq(i));
    }
    for (Eigen::Index i = 0; i < prog.A_in.rows(); ++i) {
        const double lo = prog.lower(i), hi = prog.upper(i);
        const Eigen::VectorXd a = prog.A_in.row(i).transpose();
        if (std::isfinite(lo) && std::isfinite(hi) && hi - lo <= 1e-12 * std::max({1.0, std::abs(lo), std::abs(hi)})) {
            eq_rows.push_back(a);
            eq_rhs.push_back(0.5 * (lo + hi));
            continue;
        }
        if (std::isfinite(hi)) {
            g_rows.push_back(a);
            g_rhs.push_back(hi);
        }
        if (std::isfinite(lo)) {
            g_rows.push_back(-a);
            g_rhs.push_back(-lo);
        }
    }

    // Particular solution and nullspace basis of the equalities.
    Eigen::VectorXd xp = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd basis = Eigen::MatrixXd::Identity(n, n);
    if (!eq_rows.empty()) {
        Eigen::MatrixXd e(static_cast<Eigen::Index>(eq_rows.size()), n);
        for (std::size_t k = 0; k < eq_rows.size(); ++k) e.row(static_cast<Eigen::Index>(k)) = eq_rows[k].transpose();
        const Eigen::VectorXd b = to_eigen(eq_rhs);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const Eigen::VectorXd sv = svd.singularValues();
        const double cut = 1e-10 * std::max(1.0, sv.size() ? sv(0) : 0.0);
        Eigen::Index rank = 0;
        while (rank < sv.size() && sv(rank) > cut) ++rank;
        const Eigen::MatrixXd u = svd.matrixU().leftCols(rank);
        const Eigen::MatrixXd v = svd.matrixV();
        xp = v.leftCols(rank) * (u.transpose() * b).cwiseQuotient(sv.head(rank));
        if ((e * xp - b).lpNorm<Eigen::Infinity>() > 1e-8 * (1.0 + b.lpNorm<Eigen::Infinity>())) {
            out.status = SolveStatus::infeasible;
            out.x_star = xp;
            return out;
        }
        basis = v.rightCols(n - rank);
    }
    const auto nz = static_cast<int>(basis.cols());

    Constraints cs;
    cs.nz = nz;
    cs.G.resize(static_cast<Eigen::Index>(g_rows.size()), nz);
    cs.h.resize(static_cast<Eigen::Index>(g_rows.size()));
    for (std::size_t k = 0; k < g_rows.size(); ++k) {
        const auto r = static_cast<Eigen::Index>(k);
        cs.G.row(r) = (g_rows[k].transpose() * basis);
        cs.h(r) = g_rhs[k] - g_rows[k].dot(xp);
    }
    cs.S = prog.S * basis;
    cs.c = prog.c - prog.S * xp;
    const Eigen::VectorXd qz = basis.transpose() * prog.q;

    auto finish = [&](const Eigen::VectorXd& z) {
        out.x_star = xp + basis * z;
        out.objective_value = prog.objective(out.x_star);
    };

    const double feas_tol = 1e-9;
    if (nz == 0) {
        finish(Eigen::VectorXd::Zero(0));
        const double viol = cs.G.rows() ? (-cs.h).maxCoeff() : 0.0;
        out.status = viol > feas_tol ? SolveStatus::infeasible : SolveStatus::optimal;
        return out;
    }

    // Phase 1: maximize the common slack of the linear rows, capped at 1.
    Eigen::VectorXd z0 = Eigen::VectorXd::Zero(nz);
    if (cs.G.rows() > 0) {
        Constraints p1;
        p1.nz = nz + 1;
        const Eigen::Index mg = cs.G.rows();
        p1.G = Eigen::MatrixXd::Zero(mg + 1, nz + 1);
        p1.G.topLeftCorner(mg, nz) = cs.G;
        p1.G.col(nz).head(mg).setConstant(-1.0);
        p1.G(mg, nz) = -1.0;
        p1.h.resize(mg + 1);
        p1.h.head(mg) = cs.h;
        p1.h(mg) = 1.0;
        p1.S.resize(0, nz + 1);
        p1.c.resize(0);
        Eigen::VectorXd y0(nz + 1);
        y0.head(nz).setZero();
        y0(nz) = std::max(0.0, (-cs.h).maxCoeff()) + 1.0;
        Eigen::VectorXd c0 = Eigen::VectorXd::Zero(nz + 1);
        c0(nz) = 1.0;
        const IpmResult r1 = primal_dual(p1, c0, y0, 1e-9, opt.max_iter);
        const double slack = r1.y(nz);
        if (slack >= -feas_tol) {
            // A converged positive optimum certifies that no point satisfies every row. Anything else
            // (no strict interior, stalled iteration) is beyond an interior method.
            finish(r1.y.head(nz));
            out.iterations = r1.iterations;
            out.status = (r1.converged && slack > feas_tol) ? SolveStatus::infeasible : SolveStatus::numerical_failure;
            return out;
        }
        z0 = r1.y.head(nz);
        out.iterations = r1.iterations;
    }

    // Main phase on y = (z, t) when a norm term exists, otherwise on z.
    Eigen::VectorXd y0(cs.n());
    y0.head(nz) = z0;
    Eigen::VectorXd c0 = Eigen::VectorXd::Zero(cs.n());
    c0.head(nz) = -qz;
    if (cs.cone()) {
        y0(nz) = (cs.S * z0 - cs.c).norm() + 1.0;
        c0(nz) = 1.0;
    }
    if (cs.m() == 0) {
        // Unconstrained linear objective: optimal only if it is constant.
        finish(z0);
        out.status = qz.lpNorm<Eigen::Infinity>() <= opt.tolerance ? SolveStatus::optimal : SolveStatus::numerical_failure;
        return out;
    }
    const IpmResult r = primal_dual(cs, c0, y0, opt.tolerance, opt.max_iter);
    out.iterations += r.iterations;
    finish(r.y.head(nz));
    out.merit_before = to_eigen(r.merit_before);
    out.merit_after = to_eigen(r.merit_after);
    const Eigen::VectorXd fin = cs.values(r.y);
    const double primal = std::max(0.0, fin.head(cs.G.rows()).size() ? fin.head(cs.G.rows()).maxCoeff() : 0.0);
    out.kkt_residual = std::max({r.dual_residual, r.gap, primal});
    out.status = r.converged ? SolveStatus::optimal : SolveStatus::numerical_failure;
    if (!r.converged) {
        // Near the cone vertex the iteration hits a rounding floor a little above tolerance.
        // Project onto the constraints it has identified as active and keep the result only if
        // the independent audit certifies it.
        const Eigen::VectorXd xp2 = polish(prog, out.x_star, 1e-6);
        if (xp2.size() == n) {
            const KktReport rep = audit_kkt(prog, xp2, 1e-9);
            const double v = prog.objective(xp2);
            if (rep.max_violation() <= opt.tolerance && v <= out.objective_value + opt.tolerance) {
                out.x_star = xp2;
                out.objective_value = v;
                out.kkt_residual = rep.max_violation();
                out.status = SolveStatus::optimal;
            }
        }
    }
    return out;
}

double KktReport::max_violation() const { return std::max({eq_violation, ineq_violation, stationarity}); }

namespace {

// Lawson-Hanson nonnegative least squares: min ||A w - b||, w >= 0.
Eigen::VectorXd nnls(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
    const Eigen::Index n = a.cols();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
    std::vector<char> passive(static_cast<std::size_t>(n), 0);
    const double tol = 1e-12 * std::max(1.0, a.lpNorm<Eigen::Infinity>() * b.lpNorm<Eigen::Infinity>());
    for (int outer = 0; outer < 3 * n + 10; ++outer) {
        const Eigen::VectorXd grad = a.transpose() * (b - a * w);
        Eigen::Index best = -1;
        double gmax = tol;
        for (Eigen::Index j = 0; j < n; ++j)
            if (!passive[static_cast<std::size_t>(j)] && grad(j) > gmax) {
                gmax = grad(j);
                best = j;
            }
        if (best < 0) break;
        passive[static_cast<std::size_t>(best)] = 1;
        for (int inner = 0; inner < 3 * n + 10; ++inner) {
            std::vector<Eigen::Index> idx;
            for (Eigen::Index j = 0; j < n; ++j)
                if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
            Eigen::MatrixXd ap(a.rows(), static_cast<Eigen::Index>(idx.size()));
            for (std::size_t k = 0; k < idx.size(); ++k) ap.col(static_cast<Eigen::Index>(k)) = a.col(idx[k]);
            const Eigen::VectorXd zp = ap.completeOrthogonalDecomposition().solve(b);
            bool all_pos = true;
            for (Eigen::Index k = 0; k < zp.size(); ++k)
                if (zp(k) <= 0) all_pos = false;
            if (all_pos) {
                w.setZero();
                for (std::size_t k = 0; k < idx.size(); ++k) w(idx[k]) = zp(static_cast<Eigen::Index>(k));
                break;
            }
            double step = 1.0;
            for (std::size_t k = 0; k < idx.size(); ++k) {
                const double zk = zp(static_cast<Eigen::Index>(k));
                if (zk <= 0) step = std::min(step, w(idx[k]) / (w(idx[k]) - zk));
            }
            for (std::size_t k = 0; k < idx.size(); ++k)
                w(idx[k]) += step * (zp(static_cast<Eigen::Index>(k)) - w(idx[k]));
            for (Eigen::Index j = 0; j < n; ++j)
                if (passive[static_cast<std::size_t>(j)] && w(j) <= 1e-15) {
                    passive[static_cast<std::size_t>(j)] = 0;
                    w(j) = 0.0;
                }
        }
    }
    return w;
}

}  // namespace

KktReport audit_kkt(const ConvexProgram& prog, const Eigen::VectorXd& x, double active_tol) {
    prog.check();
    KktReport rep;
    if (prog.A_eq.rows() > 0) rep.eq_violation = (prog.A_eq * x - prog.b_eq).lpNorm<Eigen::Infinity>();
    const Eigen::VectorXd ax = prog.A_in * x;
    std::vector<Eigen::VectorXd> cols;  // columns of the multiplier system, all with nonnegative weights
    for (Eigen::Index i = 0; i < ax.size(); ++i) {
        rep.ineq_violation = std::max({rep.ineq_violation, prog.lower(i) - ax(i), ax(i) - prog.upper(i)});
        const Eigen::VectorXd a = prog.A_in.row(i).transpose();
        if (std::isfinite(prog.upper(i)) && ax(i) >= prog.upper(i) - active_tol) cols.push_back(a);
        if (std::isfinite(prog.lower(i)) && ax(i) <= prog.lower(i) + active_tol) cols.push_back(-a);
    }
    for (Eigen::Index i = 0; i < prog.A_eq.rows(); ++i) {
        cols.push_back(prog.A_eq.row(i).transpose());
        cols.push_back(-prog.A_eq.row(i).transpose());
    }
    // Gradient of the smooth part; at the kink the norm's subgradient S^T v, ||v|| <= 1, is fitted too.
    Eigen::VectorXd g = -prog.q;
    bool kink = false;
    if (prog.S.rows() > 0) {
        const Eigen::VectorXd u = prog.S * x - prog.c;
        const double un = u.norm();
        if (un > 1e-9) {
            g += prog.S.transpose() * u / un;
        } else {
            kink = true;
            for (Eigen::Index k = 0; k < prog.S.rows(); ++k) {
                cols.push_back(prog.S.row(k).transpose());
                cols.push_back(-prog.S.row(k).transpose());
            }
        }
    }
    Eigen::MatrixXd a(prog.n_vars, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) a.col(static_cast<Eigen::Index>(k)) = cols[k];
    Eigen::VectorXd w = cols.empty() ? Eigen::VectorXd() : nnls(a, -g);
    const Eigen::VectorXd resid = cols.empty() ? g : Eigen::VectorXd(g + a * w);
    rep.stationarity = resid.lpNorm<Eigen::Infinity>();
    if (kink) {
        const Eigen::Index k = prog.S.rows();
        const Eigen::Index base = w.size() - 2 * k;
        Eigen::VectorXd v(k);
        for (Eigen::Index j = 0; j < k; ++j) v(j) = w(base + 2 * j) - w(base + 2 * j + 1);
        rep.stationarity = std::max(rep.stationarity, v.norm() - 1.0);
    }
    return rep;
}

std::string to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::optimal: return "optimal";
        case SolveStatus::infeasible: return "infeasible";
        case SolveStatus::numerical_failure: return "numerical_failure";
    }
    return "?";
}

}  // namespace gridattack
