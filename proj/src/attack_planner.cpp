#include "gridattack/attack_planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace gridattack {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

int sign_of(double v) { return (v > 0) - (v < 0); }

bool rule1(const GridCase& c, int line) {
    const Line& l = c.line(line);
    return l.is_transformer || (c.bus(l.from_bus).has_generator && c.bus(l.to_bus).has_generator);
}

bool share_bus(const GridCase& c, int a, int b) {
    const Line& x = c.line(a);
    const Line& y = c.line(b);
    return x.from_bus == y.from_bus || x.from_bus == y.to_bus || x.to_bus == y.from_bus || x.to_bus == y.to_bus;
}

std::vector<int> single_line_rules(const GridCase& c, int line, const EligibilityRules& rules) {
    std::vector<int> out;
    if (rules.forbid_transformer_or_gen_gen && rule1(c, line)) out.push_back(1);
    if (rules.forbid_islanding && is_islanding(c, line)) out.push_back(5);
    return out;
}

// Argmax with lowest-id tie-break over lines admitted by `ok`; 0 when none.
template <class Pred>
int argmax_line(const Eigen::VectorXd& v, Pred ok) {
    int best = 0;
    for (Eigen::Index k = 0; k < v.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        if (!ok(id) || std::isnan(v(k)) || v(k) == kNegInf) continue;
        if (best == 0 || v(k) > v(best - 1)) best = id;
    }
    return best;
}

// Reported flow at line l of `bus`, counted positive when leaving the bus.
double leaving(const Line& l, int bus, double flow) { return l.from_bus == bus ? flow : -flow; }

std::set<int> boundary_of(const GridCase& c, const RegionSets& r, int l_m) {
    std::set<int> out;
    for (int v : r.region_buses)
        for (int l : incident_lines(c, v))
            if (!r.region_lines.contains(l) && l != l_m) out.insert(v);
    return out;
}

}  // namespace

Eigen::VectorXd influence_factors(const Eigen::VectorXd& flows, const LodfMatrix& lodf, InfluenceForm form) {
    const Eigen::Index n = flows.size();
    Eigen::VectorXd f(n);
    Eigen::VectorXd sgn(n);
    for (Eigen::Index m = 0; m < n; ++m) sgn(m) = sign_of(flows(m));
    for (Eigen::Index l = 0; l < n; ++l) {
        if (!lodf.valid(static_cast<int>(l) + 1)) {
            f(l) = kNegInf;
            continue;
        }
        const Eigen::VectorXd col = lodf.values.col(l);
        f(l) = form == InfluenceForm::signed_sum ? col.dot(sgn) * flows(l) : (col * flows(l)).cwiseAbs().sum();
    }
    return f;
}

EligibilityVerdict check_eligibility(const GridCase& c, int l_o, std::optional<int> l_m, const EligibilityRules& rules) {
    EligibilityVerdict v;
    v.outage_rules = single_line_rules(c, l_o, rules);
    if (l_m) {
        v.mislead_rules = single_line_rules(c, *l_m, rules);
        if (rules.forbid_adjacent_pair && (*l_m == l_o || share_bus(c, l_o, *l_m))) v.pair_rules.push_back(2);
    }
    return v;
}

int select_outage_line(const Eigen::VectorXd& f, const GridCase& c, const EligibilityRules& rules,
                       const std::set<int>& excluded) {
    const int best = argmax_line(f, [&](int id) {
        return !excluded.contains(id) && single_line_rules(c, id, rules).empty();
    });
    if (best == 0) throw PlanError("no eligible outage line remains");
    return best;
}

MlsaResult mlsa(const Eigen::VectorXd& flows, const LodfMatrix& lodf, int l_o, const GridCase& c,
                const EligibilityRules& rules, const std::set<int>& excluded) {
    const Eigen::Index n = flows.size();
    const bool post = rules.mlsa == MlsaForm::signed_post_outage;
    const Eigen::VectorXd p = post ? post_outage_flows(flows, lodf, l_o) : flows;
    MlsaResult res;
    res.u = Eigen::VectorXd::Constant(n, kNegInf);
    for (const Line& cand : c.lines) {
        const int l = cand.id;
        if (l == l_o) {
            res.u(l - 1) = 0.0;
            continue;
        }
        if (!lodf.valid(l) || excluded.contains(l)) continue;
        if (rules.forbid_islanding && is_islanding(c, l)) continue;
        Eigen::VectorXd pb = p + p(l - 1) * lodf.values.col(l - 1);
        pb(l - 1) = 0.0;
        double u = 0.0;
        for (const Line& m : c.lines) {
            if (m.id == l_o) continue;
            const double ratio = pb(m.id - 1) * c.base_mva / m.thermal_limit_mw;
            u += post ? ratio : std::abs(ratio);
        }
        res.u(l - 1) = u;
    }
    res.l_m = argmax_line(res.u, [&](int id) { return id != l_o && !excluded.contains(id); });
    if (res.l_m == 0) throw PlanError("no eligible misleading line remains");
    return res;
}

int nearest_generator_bus(const GridCase& c, int j, const std::set<int>& excluded_lines) {
    const int nb = static_cast<int>(c.n_buses());
    std::vector<char> seen(static_cast<std::size_t>(nb + 1), 0);
    std::vector<int> level{j};
    seen[static_cast<std::size_t>(j)] = 1;
    while (!level.empty()) {
        int best = 0;
        for (int v : level)
            if (c.bus(v).has_generator && (best == 0 || v < best)) best = v;
        if (best) return best;
        std::vector<int> next;
        for (int v : level)
            for (int l : incident_lines(c, v)) {
                if (excluded_lines.contains(l)) continue;
                const int w = other_end(c.line(l), v);
                if (!seen[static_cast<std::size_t>(w)]) {
                    seen[static_cast<std::size_t>(w)] = 1;
                    next.push_back(w);
                }
            }
        level = std::move(next);
    }
    throw PlanError("no generator reachable from bus " + std::to_string(j));
}

BusPath shortest_path(const GridCase& c, int from, int to, const std::set<int>& excluded_lines) {
    const auto nb = c.n_buses() + 1;
    std::vector<int> parent_bus(nb, 0), parent_line(nb, 0);
    std::vector<char> seen(nb, 0);
    std::queue<int> q;
    q.push(from);
    seen[static_cast<std::size_t>(from)] = 1;
    while (!q.empty() && !seen[static_cast<std::size_t>(to)]) {
        const int v = q.front();
        q.pop();
        for (int l : incident_lines(c, v)) {
            if (excluded_lines.contains(l)) continue;
            const int w = other_end(c.line(l), v);
            if (seen[static_cast<std::size_t>(w)]) continue;
            seen[static_cast<std::size_t>(w)] = 1;
            parent_bus[static_cast<std::size_t>(w)] = v;
            parent_line[static_cast<std::size_t>(w)] = l;
            q.push(w);
        }
    }
    if (!seen[static_cast<std::size_t>(to)])
        throw PlanError("bus " + std::to_string(to) + " unreachable from bus " + std::to_string(from));
    BusPath path;
    for (int v = to; v != from; v = parent_bus[static_cast<std::size_t>(v)]) {
        path.buses.push_back(v);
        path.lines.push_back(parent_line[static_cast<std::size_t>(v)]);
    }
    path.buses.push_back(from);
    std::reverse(path.buses.begin(), path.buses.end());
    std::reverse(path.lines.begin(), path.lines.end());
    return path;
}

RegionSets bfs_region(const GridCase& c, int g, int j, int l_o, int l_m, const RegionSets* existing) {
    RegionSets r = existing ? *existing : RegionSets{};
    std::set<int> blocked = r.region_lines;
    blocked.insert(l_o);
    // The decoy must stay outside the region it is meant to implicate.
    blocked.insert(l_m);
    const BusPath path = shortest_path(c, g, j, blocked);
    r.region_buses.insert(path.buses.begin(), path.buses.end());
    r.region_lines.insert(path.lines.begin(), path.lines.end());
    r.region_lines.insert(l_o);
    const Line& lo = c.line(l_o);
    r.buses_outage_ends = {lo.from_bus, lo.to_bus};
    r.region_buses.insert(r.buses_outage_ends.begin(), r.buses_outage_ends.end());
    const Line& lm = c.line(l_m);
    r.buses_mislead_ends = {lm.from_bus, lm.to_bus};
    const std::set<int> edge = boundary_of(c, r, l_m);
    r.buses_boundary.insert(g);
    r.buses_boundary.insert(edge.begin(), edge.end());
    r.buses_inner.clear();
    for (int v : r.region_buses)
        if (!r.buses_boundary.contains(v)) r.buses_inner.insert(v);
    return r;
}

std::map<int, double> region_loads(const GridCase& c, const FlowSolution& base, const RegionSets& region, int l_m,
                                   const Eigen::VectorXd& theta) {
    std::map<int, double> out;
    for (int v : region.region_buses) {
        double leave = 0.0;
        for (int l : incident_lines(c, v)) {
            if (l == l_m) continue;
            const Line& ln = c.line(l);
            const double flow = region.region_lines.contains(l)
                                    ? (theta(ln.from_bus - 1) - theta(ln.to_bus - 1)) / ln.reactance_pu
                                    : base.flows_pu(l - 1);
            leave += leaving(ln, v, flow);
        }
        out[v] = c.bus(v).gen_mw / c.base_mva - leave;
    }
    return out;
}

F3Result solve_f3(const GridCase& c, const FlowSolution& base, const RegionSets& region, int l_o, int l_m,
                  const EligibilityRules& rules) {
    (void)l_o;
    const double tau = rules.tau;
    F3Result res;
    res.variable_buses.assign(region.region_buses.begin(), region.region_buses.end());
    const int n = static_cast<int>(res.variable_buses.size());
    std::map<int, int> col;
    for (int k = 0; k < n; ++k) col[res.variable_buses[static_cast<std::size_t>(k)]] = k;
    const double mw = c.base_mva;

    ConvexProgram prog(n);
    std::vector<Eigen::VectorXd> rows;
    std::vector<double> lo, hi;
    auto add = [&](const Eigen::VectorXd& a, double l, double h) {
        rows.push_back(a);
        lo.push_back(l);
        hi.push_back(h);
    };
    // Flow of line l as a linear function of the variables plus a constant.
    auto flow_row = [&](const Line& ln, Eigen::VectorXd& a, double& k0) {
        a = Eigen::VectorXd::Zero(n);
        k0 = 0.0;
        const double b = 1.0 / ln.reactance_pu;
        if (col.contains(ln.from_bus)) a(col[ln.from_bus]) += b; else k0 += b * base.angles_rad(ln.from_bus - 1);
        if (col.contains(ln.to_bus)) a(col[ln.to_bus]) -= b; else k0 -= b * base.angles_rad(ln.to_bus - 1);
    };

    // Boundary angles pinned.
    prog.A_eq = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(region.buses_boundary.size()), n);
    prog.b_eq.resize(prog.A_eq.rows());
    int e = 0;
    for (int v : region.buses_boundary) {
        prog.A_eq(e, col[v]) = 1.0;
        prog.b_eq(e++) = base.angles_rad(v - 1);
    }
    // Inner angles within tau of base.
    for (int v : region.buses_inner) {
        Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
        a(col[v]) = 1.0;
        const double th = base.angles_rad(v - 1);
        add(a, std::min((1 - tau) * th, (1 + tau) * th), std::max((1 - tau) * th, (1 + tau) * th));
    }
    // Region loads within tau of base and nonnegative, from nodal balance.
    for (int v : region.region_buses) {
        Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
        double k0 = c.bus(v).gen_mw / mw;
        for (int l : incident_lines(c, v)) {
            if (l == l_m) continue;
            const Line& ln = c.line(l);
            if (region.region_lines.contains(l)) {
                Eigen::VectorXd fa;
                double fk;
                flow_row(ln, fa, fk);
                const double s = ln.from_bus == v ? 1.0 : -1.0;
                a -= s * fa;
                k0 -= s * fk;
            } else {
                k0 -= leaving(ln, v, base.flows_pu(l - 1));
            }
        }
        const double pd = c.bus(v).load_mw / mw;
        add(a, std::max(0.0, (1 - tau) * pd) - k0, (1 + tau) * pd - k0);
    }
    // Thermal limits and the measurement band on region lines; J1 rows.
    prog.S.resize(static_cast<Eigen::Index>(region.region_lines.size()), n);
    prog.c.resize(prog.S.rows());
    int s = 0;
    for (int l : region.region_lines) {
        const Line& ln = c.line(l);
        Eigen::VectorXd a;
        double k0;
        flow_row(ln, a, k0);
        const double lim = ln.thermal_limit_mw / mw;
        add(a, -lim - k0, lim - k0);
        const double p = base.flows_pu(l - 1);
        if (rules.flow_band) add(a, p - tau * std::abs(p) - k0, p + tau * std::abs(p) - k0);
        prog.S.row(s) = a.transpose();
        prog.c(s++) = p - k0;
    }
    // J2: flow the decoy would carry, from its sending end i to receiving end j.
    const Line& lm = c.line(l_m);
    const bool forward = base.flows_pu(l_m - 1) >= 0;
    const int bi = forward ? lm.from_bus : lm.to_bus;
    const int bj = forward ? lm.to_bus : lm.from_bus;
    if (col.contains(bi)) prog.q(col[bi]) += 1.0 / lm.reactance_pu;
    if (col.contains(bj)) prog.q(col[bj]) -= 1.0 / lm.reactance_pu;

    prog.A_in.resize(static_cast<Eigen::Index>(rows.size()), n);
    prog.lower.resize(prog.A_in.rows());
    prog.upper.resize(prog.A_in.rows());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto r = static_cast<Eigen::Index>(k);
        prog.A_in.row(r) = rows[k].transpose();
        prog.lower(r) = lo[k];
        prog.upper(r) = hi[k];
    }

    res.outcome = solve(prog);
    res.program = prog;
    if (res.outcome.status != SolveStatus::optimal) return res;
    res.audit = audit_kkt(prog, res.outcome.x_star);

    Eigen::VectorXd theta = base.angles_rad;
    for (int k = 0; k < n; ++k) theta(res.variable_buses[static_cast<std::size_t>(k)] - 1) = res.outcome.x_star(k);
    for (int v : region.region_buses) res.forged.angles_rad[v] = theta(v - 1);
    for (int l : region.region_lines) {
        const Line& ln = c.line(l);
        res.forged.flows_pu[l] = (theta(ln.from_bus - 1) - theta(ln.to_bus - 1)) / ln.reactance_pu;
    }
    res.forged.flows_pu[l_m] = 0.0;
    res.forged.loads_pu = region_loads(c, base, region, l_m, theta);
    const double moved = std::abs(base.flows_pu(l_m - 1));
    if (res.forged.loads_pu.contains(bi))
        res.forged.loads_pu[bi] += moved;
    else
        res.forged.loads_pu[bi] = c.bus(bi).load_mw / mw + moved;
    return res;
}

MeasurementVector assemble_attacked_measurements(const GridCase& c, const FlowSolution& base, const AttackPlan& plan,
                                                 AttackMode mode, const std::vector<MeasurementMeta>& layout) {
    // What the meters outside the region read.
    const FlowSolution ref =
        (mode == AttackMode::physical && plan.l_o != 0) ? solve_dc_without(c, {plan.l_o}) : base;
    const Eigen::VectorXd inj = net_injections(c);
    const auto& region = plan.region;

    auto reported_flow = [&](int l) {
        if (plan.l_m != 0 && l == plan.l_m) return 0.0;
        if (auto it = plan.forged.flows_pu.find(l); it != plan.forged.flows_pu.end() && region.region_lines.contains(l))
            return it->second;
        return ref.flows_pu(l - 1);
    };

    MeasurementVector z;
    z.meta = layout;
    z.values_pu.resize(static_cast<Eigen::Index>(layout.size()));
    for (std::size_t k = 0; k < layout.size(); ++k) {
        const MeasurementMeta& m = layout[k];
        double v = 0.0;
        if (m.kind == MeasurementKind::line_flow) {
            v = reported_flow(m.target);
        } else if (region.region_buses.contains(m.target)) {
            for (int l : incident_lines(c, m.target)) v += leaving(c.line(l), m.target, reported_flow(l));
        } else {
            v = inj(m.target - 1);
            if (plan.l_m != 0 && m.target == plan.sending_bus) v -= std::abs(ref.flows_pu(plan.l_m - 1));
        }
        z.values_pu(static_cast<Eigen::Index>(k)) = v;
    }
    return z;
}

AttackPlan plan_attack(const GridCase& c, const EligibilityRules& rules) {
    if (!(rules.tau > 0 && rules.tau < 1)) throw PlanError("tau must lie in (0, 1)");
    const FlowSolution base = solve_dc(c);
    const LodfMatrix lodf = compute_lodf(c);
    AttackPlan plan;
    plan.influence = influence_factors(base.flows_pu, lodf, rules.influence);

    std::set<int> drop_f, drop_u;
    const int max_steps = static_cast<int>(c.n_lines() * c.n_lines()) + 1;
    bool chosen = false;
    for (int step = 0; step < max_steps && !chosen; ++step) {
        const int lo = argmax_line(plan.influence, [&](int id) {
            return !drop_f.contains(id) && !(rules.forbid_islanding && is_islanding(c, id));
        });
        if (lo == 0) throw PlanError("exhausted candidates: no outage line remains");
        MlsaResult mr;
        try {
            mr = mlsa(base.flows_pu, lodf, lo, c, rules, drop_u);
        } catch (const PlanError&) {
            plan.trail.push_back({lo, 0, check_eligibility(c, lo, std::nullopt, rules)});
            drop_f.insert(lo);
            continue;
        }
        TrailStep ts{lo, mr.l_m, check_eligibility(c, lo, mr.l_m, rules)};
        plan.trail.push_back(ts);
        if (!ts.verdict.outage_rules.empty()) drop_f.insert(lo);
        if (!ts.verdict.mislead_rules.empty()) drop_u.insert(mr.l_m);
        if (ts.verdict.outage_rules.empty() && ts.verdict.mislead_rules.empty() && !ts.verdict.pair_rules.empty())
            drop_u.insert(mr.l_m);
        if (ts.verdict.ok()) {
            plan.l_o = lo;
            plan.l_m = mr.l_m;
            plan.mlsa_scores = mr.u;
            chosen = true;
        }
    }
    if (!chosen) throw PlanError("exhausted candidates");

    const Line& lm = c.line(plan.l_m);
    const bool forward = base.flows_pu(plan.l_m - 1) >= 0;
    plan.sending_bus = forward ? lm.from_bus : lm.to_bus;
    plan.receiving_bus = forward ? lm.to_bus : lm.from_bus;

    RegionSets region;
    const RegionSets* prev = nullptr;
    for (int attempt = 1;; ++attempt) {
        // Bus j must be supplied by a path other than the decoy itself.
        std::set<int> blocked = region.region_lines;
        blocked.insert(plan.l_o);
        blocked.insert(plan.l_m);
        int g = 0;
        try {
            g = nearest_generator_bus(c, plan.receiving_bus, blocked);
            region = bfs_region(c, g, plan.receiving_bus, plan.l_o, plan.l_m, prev);
        } catch (const PlanError& e) {
            throw PlanError(std::string("F3 infeasible for every reachable region: ") + e.what());
        }
        if (attempt == 1) plan.generator_bus = g;
        plan.region_attempts = attempt;
        F3Result f3 = solve_f3(c, base, region, plan.l_o, plan.l_m, rules);
        if (f3.outcome.status == SolveStatus::optimal) {
            plan.region = region;
            plan.forged = f3.forged;
            plan.f3_outcome = f3.outcome;
            plan.f3_audit = f3.audit;
            return plan;
        }
        if (f3.outcome.status == SolveStatus::numerical_failure)
            throw PlanError("F3 solver failed to converge on region attempt " + std::to_string(attempt));
        prev = &region;
    }
}

std::string to_string(AttackMode m) { return m == AttackMode::idealized ? "idealized" : "physical"; }

}  // namespace gridattack
