#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridattack/dc_core.hpp"
#include "gridattack/estimator.hpp"
#include "gridattack/grid_model.hpp"
#include "gridattack/qp_solver.hpp"

namespace gridattack {

struct PlanError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class InfluenceForm { signed_sum, abs_sum };
// signed_post_outage: signed ratios on flows that already have l_o removed.
// abs_intact: |ratio| on the intact-grid flows.
enum class MlsaForm { signed_post_outage, abs_intact };
enum class AttackMode { idealized, physical };

struct EligibilityRules {
    bool forbid_transformer_or_gen_gen = true;
    bool forbid_adjacent_pair = true;
    bool forbid_islanding = true;
    double tau = 0.5;
    // Bound each region-line flow change by tau times its base flow.
    bool flow_band = true;
    InfluenceForm influence = InfluenceForm::signed_sum;
    MlsaForm mlsa = MlsaForm::signed_post_outage;
};

struct EligibilityVerdict {
    std::vector<int> outage_rules;   // rules violated by l_o alone
    std::vector<int> mislead_rules;  // rules violated by l_m alone
    std::vector<int> pair_rules;     // rules violated by the pair
    bool ok() const { return outage_rules.empty() && mislead_rules.empty() && pair_rules.empty(); }
};

struct RegionSets {
    std::set<int> buses_inner;         // A
    std::set<int> buses_boundary;      // B
    std::set<int> buses_outage_ends;   // L
    std::set<int> buses_mislead_ends;  // M
    std::set<int> region_buses;        // A u B
    std::set<int> region_lines;

    bool operator==(const RegionSets&) const = default;
};

struct ForgedState {
    std::map<int, double> angles_rad;  // region buses
    std::map<int, double> loads_pu;    // region buses plus the sending end of l_m
    std::map<int, double> flows_pu;    // region lines plus l_m
};

struct TrailStep {
    int outage = 0;
    int mislead = 0;  // 0 when no candidate remained
    EligibilityVerdict verdict;
};

struct AttackPlan {
    int l_o = 0;
    int l_m = 0;
    int sending_bus = 0;    // i of l_m by base flow direction
    int receiving_bus = 0;  // j of l_m
    int generator_bus = 0;  // g
    RegionSets region;
    ForgedState forged;
    Eigen::VectorXd influence;
    Eigen::VectorXd mlsa_scores;
    std::vector<TrailStep> trail;
    int region_attempts = 0;
    SolveOutcome f3_outcome;
    KktReport f3_audit;
};

Eigen::VectorXd influence_factors(const Eigen::VectorXd& flows, const LodfMatrix& lodf,
                                  InfluenceForm form = InfluenceForm::signed_sum);

EligibilityVerdict check_eligibility(const GridCase& c, int l_o, std::optional<int> l_m, const EligibilityRules& rules);

int select_outage_line(const Eigen::VectorXd& f, const GridCase& c, const EligibilityRules& rules,
                       const std::set<int>& excluded = {});

struct MlsaResult {
    int l_m = 0;
    Eigen::VectorXd u;
};

MlsaResult mlsa(const Eigen::VectorXd& flows, const LodfMatrix& lodf, int l_o, const GridCase& c,
                const EligibilityRules& rules, const std::set<int>& excluded = {});

// Hop-distance BFS; lowest id wins ties.
int nearest_generator_bus(const GridCase& c, int j, const std::set<int>& excluded_lines);

struct BusPath {
    std::vector<int> buses;  // from start to destination
    std::vector<int> lines;
};
BusPath shortest_path(const GridCase& c, int from, int to, const std::set<int>& excluded_lines);

// Grows `existing` (or starts empty) by the shortest g -> j path over lines
// outside the current region and l_o.
RegionSets bfs_region(const GridCase& c, int g, int j, int l_o, int l_m, const RegionSets* existing = nullptr);

struct F3Result {
    ConvexProgram program{0};
    std::vector<int> variable_buses;  // bus id of each program variable
    SolveOutcome outcome;
    KktReport audit;
    ForgedState forged;
};

F3Result solve_f3(const GridCase& c, const FlowSolution& base, const RegionSets& region, int l_o, int l_m,
                  const EligibilityRules& rules);

// Load of every region bus implied by angles (rad, indexed by bus-1).
std::map<int, double> region_loads(const GridCase& c, const FlowSolution& base, const RegionSets& region,
                                   int l_m, const Eigen::VectorXd& theta);

MeasurementVector assemble_attacked_measurements(const GridCase& c, const FlowSolution& base, const AttackPlan& plan,
                                                 AttackMode mode, const std::vector<MeasurementMeta>& layout);

AttackPlan plan_attack(const GridCase& c, const EligibilityRules& rules = {});

std::string to_string(AttackMode m);

}  // namespace gridattack
