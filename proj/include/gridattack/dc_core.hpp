#pragma once

#include <Eigen/Dense>
#include <set>
#include <vector>

#include "gridattack/grid_model.hpp"

namespace gridattack {

struct FlowSolution {
    Eigen::VectorXd angles_rad;
    Eigen::VectorXd flows_pu;
};

struct LodfMatrix {
    Eigen::MatrixXd values;
    std::set<int> islanding_lines;

    bool valid(int line) const { return !islanding_lines.contains(line); }
    // Entry for monitored line m when line k is outaged (1-based ids).
    double at(int m, int k) const { return values(m - 1, k - 1); }
};

Eigen::MatrixXd build_bf(const GridCase& c);
// Branch-bus incidence: +1 at from, -1 at to.
Eigen::MatrixXd incidence(const GridCase& c);
Eigen::MatrixXd build_bbus(const GridCase& c);

// Net injections in pu (generation minus load).
Eigen::VectorXd net_injections(const GridCase& c);

FlowSolution solve_dc(const GridCase& c);
FlowSolution solve_dc(const GridCase& c, const Eigen::VectorXd& injections_pu);
// Same network with the listed lines taken out of service. Flow entries of
// removed lines are 0.
FlowSolution solve_dc_without(const GridCase& c, const std::vector<int>& removed_lines);

Eigen::MatrixXd compute_ptdf(const GridCase& c);
LodfMatrix compute_lodf(const GridCase& c);

Eigen::VectorXd post_outage_flows(const Eigen::VectorXd& flows, const LodfMatrix& lodf, int k);

}  // namespace gridattack
