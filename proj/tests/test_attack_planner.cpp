#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "gridattack/attack_planner.hpp"

using namespace gridattack;

namespace {

double mw(double pu) { return pu * 100.0; }

bool subset(const std::set<int>& a, const std::set<int>& b) {
    return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

// Hop distances between every bus pair with some lines removed.
std::vector<std::vector<int>> floyd_warshall(const GridCase& c, const std::set<int>& excluded) {
    const int n = static_cast<int>(c.n_buses());
    const int inf = 1 << 20;
    std::vector<std::vector<int>> d(n, std::vector<int>(n, inf));
    for (int i = 0; i < n; ++i) d[i][i] = 0;
    for (const Line& l : c.lines)
        if (!excluded.contains(l.id)) d[l.from_bus - 1][l.to_bus - 1] = d[l.to_bus - 1][l.from_bus - 1] = 1;
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
    return d;
}

const AttackPlan& study_plan() {
    static const AttackPlan p = plan_attack(ieee14());
    return p;
}

}  // namespace

TEST_CASE("influence factors rank line 3 first") {
    const GridCase c = ieee14();
    const FlowSolution base = solve_dc(c);
    const LodfMatrix lodf = compute_lodf(c);
    const Eigen::VectorXd f = influence_factors(base.flows_pu, lodf);
    REQUIRE(f.size() == 20);
    Eigen::Index best = 0;
    f.maxCoeff(&best);
    CHECK(best + 1 == 3);
    // Islanding columns carry no influence.
    CHECK(!std::isfinite(f(13)));

    // A hand-evaluated entry: (L[:,l]^T sign(p)) * P_l.
    const int l = 7;
    double manual = 0.0;
    for (int m = 1; m <= 20; ++m) manual += lodf.at(m, l) * ((base.flows_pu(m - 1) > 0) - (base.flows_pu(m - 1) < 0));
    CHECK(f(l - 1) == doctest::Approx(manual * base.flows_pu(l - 1)));
}

TEST_CASE("eligibility rules") {
    const GridCase c = ieee14();
    const EligibilityRules r;
    const EligibilityVerdict v3 = check_eligibility(c, 3, 10, r);
    CHECK(v3.outage_rules == std::vector<int>{1});   // generator to generator
    CHECK(v3.mislead_rules == std::vector<int>{1});  // transformer
    CHECK(!v3.ok());
    const EligibilityVerdict v11 = check_eligibility(c, 13, 11, r);
    CHECK(v11.outage_rules.empty());
    CHECK(v11.mislead_rules.empty());
    CHECK(v11.pair_rules == std::vector<int>{2});  // both touch bus 6
    CHECK(check_eligibility(c, 13, 17, r).ok());
    CHECK(check_eligibility(c, 14, std::nullopt, r).outage_rules == std::vector<int>{5});
    CHECK(check_eligibility(c, 13, 13, r).pair_rules == std::vector<int>{2});

    EligibilityRules loose;
    loose.forbid_transformer_or_gen_gen = false;
    loose.forbid_adjacent_pair = false;
    CHECK(check_eligibility(c, 3, 10, loose).ok());
    CHECK(check_eligibility(c, 13, 11, loose).ok());
}

TEST_CASE("outage line selection") {
    const GridCase c = ieee14();
    const FlowSolution base = solve_dc(c);
    const Eigen::VectorXd f = influence_factors(base.flows_pu, compute_lodf(c));
    CHECK(select_outage_line(f, c, {}) == 13);
    const int next = select_outage_line(f, c, {}, {13});
    CHECK(next != 13);
    CHECK(check_eligibility(c, next, std::nullopt, {}).outage_rules.empty());

    const GridCase t = toy2();
    const FlowSolution tb = solve_dc(t);
    CHECK_THROWS_AS(select_outage_line(influence_factors(tb.flows_pu, compute_lodf(t)), t, {}), PlanError);
}

TEST_CASE("misleading line scores") {
    const GridCase c = ieee14();
    const FlowSolution base = solve_dc(c);
    const LodfMatrix lodf = compute_lodf(c);
    const EligibilityRules r;
    const MlsaResult a = mlsa(base.flows_pu, lodf, 3, c, r);
    CHECK(a.u(2) == 0.0);
    CHECK(a.l_m == 10);
    CHECK(mlsa(base.flows_pu, lodf, 13, c, r, {10}).l_m == 11);
    CHECK(mlsa(base.flows_pu, lodf, 13, c, r, {10, 11}).l_m == 17);
    // The islanding line is never a candidate.
    CHECK(std::isinf(mlsa(base.flows_pu, lodf, 13, c, r).u(13)));

    // Hand evaluation of one score.
    const Eigen::VectorXd pp = post_outage_flows(base.flows_pu, lodf, 13);
    Eigen::VectorXd pb = pp + pp(16) * lodf.values.col(16);
    pb(16) = 0.0;
    double u17 = 0.0;
    for (const Line& m : c.lines)
        if (m.id != 13) u17 += pb(m.id - 1) * c.base_mva / m.thermal_limit_mw;
    CHECK(mlsa(base.flows_pu, lodf, 13, c, r).u(16) == doctest::Approx(u17).epsilon(1e-12));
}

TEST_CASE("misleading line ties break to the lowest id") {
    GridCase c = ieee14();
    for (Bus& b : c.buses) {
        b.load_mw = 0.0;
        b.gen_mw = 0.0;
    }
    const FlowSolution base = solve_dc(c);
    CHECK(base.flows_pu.cwiseAbs().maxCoeff() < 1e-15);
    const LodfMatrix lodf = compute_lodf(c);
    CHECK(mlsa(base.flows_pu, lodf, 13, c, {}).l_m == 1);
    CHECK(mlsa(base.flows_pu, lodf, 1, c, {}).l_m == 2);
}

TEST_CASE("nearest generator and shortest paths") {
    const GridCase c = ieee14();
    CHECK(nearest_generator_bus(c, 14, {13, 17}) == 6);
    CHECK(nearest_generator_bus(c, 6, {}) == 6);
    CHECK(nearest_generator_bus(c, 4, {}) == 2);  // 1 hop from 2, 3 and 5 is not a generator; lowest id wins
    CHECK(nearest_generator_bus(c, 8, {14}) == 8);
    CHECK_THROWS_AS(nearest_generator_bus(c, 14, {17, 20}), PlanError);

    const BusPath hop = shortest_path(c, 6, 11, {});
    CHECK(hop.buses == std::vector<int>{6, 11});
    CHECK(hop.lines == std::vector<int>{11});

    std::mt19937 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        std::set<int> ex;
        for (int l = 1; l <= 20; ++l)
            if (rng() % 5 == 0) ex.insert(l);
        const auto d = floyd_warshall(c, ex);
        for (int a = 1; a <= 14; ++a)
            for (int b = 1; b <= 14; ++b) {
                if (d[a - 1][b - 1] >= (1 << 20)) {
                    CHECK_THROWS_AS(shortest_path(c, a, b, ex), PlanError);
                    continue;
                }
                const BusPath p = shortest_path(c, a, b, ex);
                REQUIRE(static_cast<int>(p.lines.size()) == d[a - 1][b - 1]);
                CHECK(p.buses.front() == a);
                CHECK(p.buses.back() == b);
                for (std::size_t k = 0; k < p.lines.size(); ++k) {
                    const Line& l = c.line(p.lines[k]);
                    CHECK(!ex.contains(l.id));
                    CHECK(other_end(l, p.buses[k]) == p.buses[k + 1]);
                }
            }
    }
}

TEST_CASE("attack region of the case study") {
    const GridCase c = ieee14();
    const RegionSets r = bfs_region(c, 6, 14, 13, 17);
    CHECK(r.buses_inner == std::set<int>{12, 13, 14});
    CHECK(r.buses_boundary == std::set<int>{6});
    CHECK(r.buses_outage_ends == std::set<int>{6, 13});
    CHECK(r.buses_mislead_ends == std::set<int>{9, 14});
    CHECK(r.region_buses == std::set<int>{6, 12, 13, 14});
    CHECK(r.region_lines == std::set<int>{12, 13, 19, 20});
    CHECK(!r.region_lines.contains(17));

    // Growing a region never drops anything.
    const RegionSets r1 = bfs_region(c, 2, 4, 13, 17);
    const RegionSets r2 = bfs_region(c, 2, 4, 13, 17, &r1);
    CHECK(subset(r1.region_buses, r2.region_buses));
    CHECK(subset(r1.region_lines, r2.region_lines));
    CHECK(r2.region_lines.size() > r1.region_lines.size());
    for (const RegionSets* s : {&r1, &r2}) {
        std::set<int> all = s->buses_inner;
        all.insert(s->buses_boundary.begin(), s->buses_boundary.end());
        CHECK(all == s->region_buses);
        for (int v : s->buses_inner) CHECK(!s->buses_boundary.contains(v));
    }
}

TEST_CASE("F3 on the case study") {
    const AttackPlan& p = study_plan();
    REQUIRE(p.f3_outcome.status == SolveStatus::optimal);
    CHECK(p.f3_outcome.kkt_residual < 1e-8);
    CHECK(p.f3_audit.feasible());
    CHECK(p.f3_audit.stationarity < 1e-6);
    CHECK(p.forged.angles_rad.at(6) == doctest::Approx(-0.1378).epsilon(5e-4));
    CHECK(p.forged.angles_rad.at(12) == doctest::Approx(-0.1591).epsilon(5e-4));
    CHECK(p.forged.angles_rad.at(13) == doctest::Approx(-0.1635).epsilon(5e-4));
    CHECK(p.forged.angles_rad.at(14) == doctest::Approx(-0.1975).epsilon(5e-4));
    CHECK(mw(p.forged.flows_pu.at(12)) == doctest::Approx(8.36).epsilon(1e-3));
    CHECK(mw(p.forged.flows_pu.at(13)) == doctest::Approx(19.74).epsilon(1e-3));
    CHECK(mw(p.forged.flows_pu.at(19)) == doctest::Approx(2.16).epsilon(3e-3));
    CHECK(mw(p.forged.flows_pu.at(20)) == doctest::Approx(9.77).epsilon(1e-3));
    CHECK(p.forged.flows_pu.at(17) == 0.0);
    CHECK(mw(p.forged.loads_pu.at(9)) == doctest::Approx(37.89).epsilon(1e-3));
    CHECK(mw(p.forged.loads_pu.at(14)) == doctest::Approx(9.77).epsilon(1e-3));
}

TEST_CASE("F3 solution satisfies every constraint when checked independently") {
    const GridCase c = ieee14();
    const FlowSolution base = solve_dc(c);
    const AttackPlan& p = study_plan();
    const double tau = 0.5, tol = 1e-7;
    Eigen::VectorXd th = base.angles_rad;
    for (const auto& [b, v] : p.forged.angles_rad) th(b - 1) = v;
    for (int b : p.region.buses_boundary) CHECK(th(b - 1) == doctest::Approx(base.angles_rad(b - 1)).epsilon(1e-10));
    for (int b : p.region.buses_inner) {
        const double t0 = base.angles_rad(b - 1);
        CHECK(th(b - 1) >= std::min((1 - tau) * t0, (1 + tau) * t0) - tol);
        CHECK(th(b - 1) <= std::max((1 - tau) * t0, (1 + tau) * t0) + tol);
    }
    for (int l : p.region.region_lines) {
        const Line& ln = c.line(l);
        const double f = (th(ln.from_bus - 1) - th(ln.to_bus - 1)) / ln.reactance_pu;
        CHECK(f == doctest::Approx(p.forged.flows_pu.at(l)).epsilon(1e-12));
        CHECK(std::abs(mw(f)) <= ln.thermal_limit_mw + tol);
        CHECK(std::abs(f - base.flows_pu(l - 1)) <= tau * std::abs(base.flows_pu(l - 1)) + tol);
    }
    for (int b : p.region.region_buses) {
        // Nodal balance with forged region flows, base flows elsewhere, the decoy left out.
        double leave = 0.0;
        for (int l : incident_lines(c, b)) {
            if (l == p.l_m) continue;
            const Line& ln = c.line(l);
            const double f = p.region.region_lines.contains(l) ? p.forged.flows_pu.at(l) : base.flows_pu(l - 1);
            leave += ln.from_bus == b ? f : -f;
        }
        const double load = c.bus(b).gen_mw / 100.0 - leave;
        const double moved = b == p.sending_bus ? std::abs(base.flows_pu(p.l_m - 1)) : 0.0;
        CHECK(p.forged.loads_pu.at(b) == doctest::Approx(load + moved).epsilon(1e-10));
        const double pd = c.bus(b).load_mw / 100.0;
        CHECK(load >= std::max(0.0, (1 - tau) * pd) - tol);
        CHECK(load <= (1 + tau) * pd + tol);
    }
}

TEST_CASE("F3 with zero tolerance keeps the base state") {
    // With tau = 0 every band collapses; a decoy away from the region leaves the base point as the only one.
    const GridCase c = ieee14();
    const FlowSolution base = solve_dc(c);
    const RegionSets r = bfs_region(c, 6, 14, 13, 17);
    EligibilityRules rules;
    rules.tau = 0.0;
    const F3Result f = solve_f3(c, base, r, 13, 1, rules);
    REQUIRE(f.outcome.status == SolveStatus::optimal);
    for (const auto& [b, v] : f.forged.angles_rad) CHECK(v == doctest::Approx(base.angles_rad(b - 1)).epsilon(1e-9));
    for (int l : r.region_lines) CHECK(f.forged.flows_pu.at(l) == doctest::Approx(base.flows_pu(l - 1)).epsilon(1e-9));

    // The real decoy needs slack the zero band does not give.
    CHECK(solve_f3(c, base, r, 13, 17, rules).outcome.status == SolveStatus::infeasible);
}

TEST_CASE("attacked measurement vector") {
    const GridCase c = ieee14();
    const FlowSolution base = solve_dc(c);
    const auto layout = measurement_layout(c, MeasurementModel::flows_and_injections, 1e-3);
    const AttackPlan& p = study_plan();
    const MeasurementVector z = assemble_attacked_measurements(c, base, p, AttackMode::idealized, layout);
    const Eigen::VectorXd inj = net_injections(c);
    CHECK(z.values_pu(z.flow_index(17)) == 0.0);
    CHECK(mw(z.values_pu(z.injection_index(9))) == doctest::Approx(-37.89).epsilon(1e-3));
    for (int l = 1; l <= 20; ++l) {
        if (l == 17) continue;
        const double want = p.region.region_lines.contains(l) ? p.forged.flows_pu.at(l) : base.flows_pu(l - 1);
        CHECK(z.values_pu(z.flow_index(l)) == doctest::Approx(want).epsilon(1e-12));
    }
    for (int b : p.region.region_buses) {
        double leave = 0.0;
        for (int l : incident_lines(c, b)) {
            const Line& ln = c.line(l);
            leave += (ln.from_bus == b ? 1.0 : -1.0) * z.values_pu(z.flow_index(l));
        }
        CHECK(z.values_pu(z.injection_index(b)) == doctest::Approx(leave).epsilon(1e-12));
        CHECK(z.values_pu(z.injection_index(b)) == doctest::Approx(c.bus(b).gen_mw / 100.0 - p.forged.loads_pu.at(b)).epsilon(1e-9));
    }
    for (int b = 1; b <= 14; ++b)
        if (!p.region.region_buses.contains(b) && b != 9)
            CHECK(z.values_pu(z.injection_index(b)) == inj(b - 1));

    // An empty plan reproduces the honest measurements.
    const AttackPlan none;
    const MeasurementVector h = assemble_attacked_measurements(c, base, none, AttackMode::idealized, layout);
    CHECK((h.values_pu - measure(c, base.angles_rad, layout).values_pu).cwiseAbs().maxCoeff() < 1e-12);

    // Physical mode: meters outside the region see the post-outage network.
    const FlowSolution post = solve_dc_without(c, {p.l_o});
    const MeasurementVector zp = assemble_attacked_measurements(c, base, p, AttackMode::physical, layout);
    for (int l = 1; l <= 20; ++l)
        if (!p.region.region_lines.contains(l) && l != p.l_m)
            CHECK(zp.values_pu(zp.flow_index(l)) == doctest::Approx(post.flows_pu(l - 1)).epsilon(1e-12));
    CHECK(zp.values_pu(zp.flow_index(p.l_m)) == 0.0);
}

TEST_CASE("full plan") {
    const AttackPlan& p = study_plan();
    CHECK(p.l_o == 13);
    CHECK(p.l_m == 17);
    CHECK(p.sending_bus == 9);
    CHECK(p.receiving_bus == 14);
    CHECK(p.generator_bus == 6);
    CHECK(p.region_attempts == 1);
    REQUIRE(p.trail.size() == 3);
    CHECK(p.trail[0].outage == 3);
    CHECK(p.trail[0].mislead == 10);
    CHECK(p.trail[1].outage == 13);
    CHECK(p.trail[1].mislead == 11);
    CHECK(p.trail[2].outage == 13);
    CHECK(p.trail[2].mislead == 17);
    CHECK(p.trail[2].verdict.ok());
    CHECK(!p.region.region_lines.contains(p.l_m));

    const AttackPlan again = plan_attack(ieee14());
    CHECK(again.forged.angles_rad == p.forged.angles_rad);
    CHECK(again.forged.flows_pu == p.forged.flows_pu);
    CHECK(again.f3_outcome.x_star == p.f3_outcome.x_star);
}

TEST_CASE("plan failures") {
    GridCase c = ieee14();
    for (Line& l : c.lines) l.is_transformer = true;
    CHECK_THROWS_AS(plan_attack(c), PlanError);

    EligibilityRules bad;
    bad.tau = 1.5;
    CHECK_THROWS_AS(plan_attack(ieee14(), bad), PlanError);
}
