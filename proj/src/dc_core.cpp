#include "gridattack/dc_core.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>

namespace gridattack {

namespace {

Eigen::MatrixXd bf_masked(const GridCase& c, const std::set<int>& removed) {
    Eigen::MatrixXd bf = Eigen::MatrixXd::Zero(c.n_lines(), c.n_buses());
    for (const Line& l : c.lines) {
        if (removed.contains(l.id)) continue;
        const double b = 1.0 / l.reactance_pu;
        bf(l.id - 1, l.from_bus - 1) = b;
        bf(l.id - 1, l.to_bus - 1) = -b;
    }
    return bf;
}

Eigen::MatrixXd drop(const Eigen::MatrixXd& m, int row, int col) {
    const Eigen::Index r = m.rows(), c = m.cols();
    Eigen::MatrixXd out(row >= 0 ? r - 1 : r, col >= 0 ? c - 1 : c);
    for (Eigen::Index i = 0, oi = 0; i < r; ++i) {
        if (i == row) continue;
        for (Eigen::Index j = 0, oj = 0; j < c; ++j) {
            if (j == col) continue;
            out(oi, oj++) = m(i, j);
        }
        ++oi;
    }
    return out;
}

// Inverse of the slack-reduced B_bus, expanded with a zero row/column at the slack.
Eigen::MatrixXd reduced_inverse(const GridCase& c, const Eigen::MatrixXd& bbus) {
    const int s = c.slack_bus - 1;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(drop(bbus, s, s));
    if (!lu.isInvertible()) throw std::runtime_error("singular reduced B_bus (disconnected grid)");
    const Eigen::MatrixXd inv = lu.inverse();
    const Eigen::Index n = bbus.rows();
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0, oi = 0; i < n; ++i) {
        if (i == s) continue;
        for (Eigen::Index j = 0, oj = 0; j < n; ++j) {
            if (j == s) continue;
            x(i, j) = inv(oi, oj++);
        }
        ++oi;
    }
    return x;
}

FlowSolution solve_with(const GridCase& c, const Eigen::MatrixXd& bf, const Eigen::VectorXd& inj) {
    const Eigen::MatrixXd bbus = incidence(c).transpose() * bf;
    const int s = c.slack_bus - 1;
    Eigen::VectorXd rhs(inj.size() - 1);
    for (Eigen::Index i = 0, oi = 0; i < inj.size(); ++i)
        if (i != s) rhs(oi++) = inj(i);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(drop(bbus, s, s));
    if (!lu.isInvertible()) throw std::runtime_error("singular reduced B_bus (disconnected grid)");
    const Eigen::VectorXd red = lu.solve(rhs);
    FlowSolution sol;
    sol.angles_rad = Eigen::VectorXd::Zero(inj.size());
    for (Eigen::Index i = 0, oi = 0; i < inj.size(); ++i)
        if (i != s) sol.angles_rad(i) = red(oi++);
    sol.flows_pu = bf * sol.angles_rad;
    return sol;
}

}  // namespace

Eigen::MatrixXd build_bf(const GridCase& c) { return bf_masked(c, {}); }

Eigen::MatrixXd incidence(const GridCase& c) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(c.n_lines(), c.n_buses());
    for (const Line& l : c.lines) {
        a(l.id - 1, l.from_bus - 1) = 1.0;
        a(l.id - 1, l.to_bus - 1) = -1.0;
    }
    return a;
}

Eigen::MatrixXd build_bbus(const GridCase& c) { return incidence(c).transpose() * build_bf(c); }

Eigen::VectorXd net_injections(const GridCase& c) {
    Eigen::VectorXd p(c.n_buses());
    for (const Bus& b : c.buses) p(b.id - 1) = (b.gen_mw - b.load_mw) / c.base_mva;
    return p;
}

FlowSolution solve_dc(const GridCase& c) { return solve_dc(c, net_injections(c)); }

FlowSolution solve_dc(const GridCase& c, const Eigen::VectorXd& injections_pu) {
    if (injections_pu.size() != static_cast<Eigen::Index>(c.n_buses()))
        throw std::invalid_argument("injection vector length mismatch");
    return solve_with(c, build_bf(c), injections_pu);
}

FlowSolution solve_dc_without(const GridCase& c, const std::vector<int>& removed_lines) {
    const std::set<int> removed(removed_lines.begin(), removed_lines.end());
    return solve_with(c, bf_masked(c, removed), net_injections(c));
}

Eigen::MatrixXd compute_ptdf(const GridCase& c) {
    const Eigen::MatrixXd bf = build_bf(c);
    return bf * reduced_inverse(c, incidence(c).transpose() * bf);
}

LodfMatrix compute_lodf(const GridCase& c) {
    const Eigen::MatrixXd ptdf = compute_ptdf(c);
    const Eigen::Index n = static_cast<Eigen::Index>(c.n_lines());
    LodfMatrix out;
    out.values = Eigen::MatrixXd::Zero(n, n);
    for (const Line& l : c.lines) {
        const Eigen::Index k = l.id - 1;
        const Eigen::VectorXd col = ptdf.col(l.from_bus - 1) - ptdf.col(l.to_bus - 1);
        const double denom = 1.0 - col(k);
        if (std::abs(denom) < 1e-8) {
            out.islanding_lines.insert(l.id);
            out.values.col(k).setConstant(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        out.values.col(k) = col / denom;
        out.values(k, k) = -1.0;
    }
    return out;
}

Eigen::VectorXd post_outage_flows(const Eigen::VectorXd& flows, const LodfMatrix& lodf, int k) {
    if (!lodf.valid(k)) throw std::invalid_argument("line " + std::to_string(k) + " is islanding; no LODF column");
    Eigen::VectorXd out = flows + flows(k - 1) * lodf.values.col(k - 1);
    out(k - 1) = 0.0;
    return out;
}

}  // namespace gridattack
