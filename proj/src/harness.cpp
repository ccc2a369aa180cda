#include "gridattack/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <json.hpp>

namespace gridattack {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double unit_open(std::uint64_t bits) { return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53; }

double r2(double v) { return std::round(v * 100.0) / 100.0; }
double r4(double v) { return std::round(v * 1e4) / 1e4; }

std::string mode_name(MeasurementModel m) {
    return m == MeasurementModel::flows_only ? "flows_only" : "flows_and_injections";
}

std::string item_name(const FlaggedItem& f, const MeasurementVector& z) {
    if (f.kind == FlaggedItem::Kind::parameter) return "x" + std::to_string(f.index);
    return describe(z.meta[static_cast<std::size_t>(f.index)]);
}

ordered_json config_json(const ScenarioConfig& cfg) {
    ordered_json j;
    j["case_path"] = cfg.case_path;
    j["tau"] = cfg.tau;
    j["noise_sigma2"] = cfg.noise_sigma2;
    j["noise_is_variance"] = cfg.noise_is_variance;
    j["threshold"] = cfg.threshold;
    j["trials"] = cfg.trials;
    j["seed"] = cfg.seed;
    j["mode"] = to_string(cfg.mode);
    j["measurement_model"] = mode_name(cfg.model);
    return j;
}

ordered_json rounds_json(const DetectionReport& d, const MeasurementVector& z) {
    ordered_json out = ordered_json::array();
    for (std::size_t k = 0; k < d.rounds.size(); ++k) {
        const DetectionRound& rd = d.rounds[k];
        ordered_json jr;
        jr["round"] = k + 1;
        jr["max_value"] = r4(rd.max_value);
        jr["clean"] = rd.clean;
        jr["flagged"] = ordered_json::array();
        for (const FlaggedItem& f : rd.flagged)
            jr["flagged"].push_back({{"item", item_name(f, z)}, {"value", r4(f.value)}});
        std::vector<std::pair<double, std::string>> all;
        for (Eigen::Index l = 0; l < rd.lambda_n.size(); ++l)
            if (!std::isnan(rd.lambda_n(l))) all.emplace_back(rd.lambda_n(l), "x" + std::to_string(l + 1));
        for (Eigen::Index i = 0; i < rd.r_n.size(); ++i)
            if (!std::isnan(rd.r_n(i))) all.emplace_back(rd.r_n(i), describe(z.meta[static_cast<std::size_t>(i)]));
        std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        jr["top"] = ordered_json::array();
        for (std::size_t t = 0; t < std::min<std::size_t>(8, all.size()); ++t)
            jr["top"].push_back({{"item", all[t].second}, {"value", r4(all[t].first)}});
        jr["removed"] = ordered_json::array();
        for (int i : rd.removed_measurements) jr["removed"].push_back(describe(z.meta[static_cast<std::size_t>(i)]));
        out.push_back(jr);
    }
    return out;
}

ordered_json plan_json(const Scenario& s) {
    const AttackPlan& p = s.plan;
    ordered_json j;
    j["l_o"] = p.l_o;
    j["l_m"] = p.l_m;
    j["sending_bus"] = p.sending_bus;
    j["receiving_bus"] = p.receiving_bus;
    j["generator_bus"] = p.generator_bus;
    j["region_attempts"] = p.region_attempts;
    j["trail"] = ordered_json::array();
    for (const TrailStep& t : p.trail)
        j["trail"].push_back({{"outage", t.outage},
                              {"mislead", t.mislead},
                              {"outage_rules", t.verdict.outage_rules},
                              {"mislead_rules", t.verdict.mislead_rules},
                              {"pair_rules", t.verdict.pair_rules}});
    auto vec = [](const Eigen::VectorXd& v) {
        ordered_json a = ordered_json::array();
        for (Eigen::Index k = 0; k < v.size(); ++k)
            a.push_back(std::isfinite(v(k)) ? ordered_json(r4(v(k))) : ordered_json(nullptr));
        return a;
    };
    j["influence"] = vec(p.influence);
    j["mlsa_scores"] = vec(p.mlsa_scores);
    j["f3"] = {{"status", to_string(p.f3_outcome.status)},
               {"objective", p.f3_outcome.objective_value},
               {"kkt_residual", p.f3_outcome.kkt_residual},
               {"iterations", p.f3_outcome.iterations},
               {"audit_max_violation", p.f3_audit.max_violation()}};
    return j;
}

ordered_json region_json(const RegionSets& r) {
    return {{"A", r.buses_inner}, {"B", r.buses_boundary},     {"L", r.buses_outage_ends},
            {"M", r.buses_mislead_ends}, {"N", r.region_buses}, {"E", r.region_lines}};
}

ordered_json forged_json(const Scenario& s) {
    const GridCase& c = s.grid;
    const AttackPlan& p = s.plan;
    ordered_json j;
    j["buses"] = ordered_json::array();
    std::set<int> buses(p.region.region_buses.begin(), p.region.region_buses.end());
    buses.insert(p.sending_bus);
    for (int v : buses) {
        const auto a = p.forged.angles_rad.find(v);
        j["buses"].push_back({{"bus", v},
                              {"angle_before_rad", r4(s.base.angles_rad(v - 1))},
                              {"angle_after_rad", r4(a != p.forged.angles_rad.end() ? a->second : s.base.angles_rad(v - 1))},
                              {"load_before_mw", r2(c.bus(v).load_mw)},
                              {"load_after_mw", r2(p.forged.loads_pu.at(v) * c.base_mva)}});
    }
    j["lines"] = ordered_json::array();
    for (const auto& [l, f] : p.forged.flows_pu)
        j["lines"].push_back(
            {{"line", l}, {"flow_before_mw", r2(s.base.flows_pu(l - 1) * c.base_mva)}, {"flow_after_mw", r2(f * c.base_mva)}});
    return j;
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k) s += (k ? ", " : "") + std::to_string(v[k]);
    return s;
}

std::string set_text(const ordered_json& a) {
    return "{" + join(a.get<std::vector<int>>()) + "}";
}

std::string fmt(double v, int prec) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(prec) << v;
    return o.str();
}

std::string table_plan(const ordered_json& plan, const ordered_json& region) {
    std::ostringstream o;
    o << "Selection trail\n";
    o << "  outage  mislead  rejected by\n";
    for (const auto& t : plan["trail"]) {
        std::string why;
        for (int r : t["outage_rules"]) why += "l_o rule " + std::to_string(r) + "; ";
        for (int r : t["mislead_rules"]) why += "l_m rule " + std::to_string(r) + "; ";
        for (int r : t["pair_rules"]) why += "pair rule " + std::to_string(r) + "; ";
        if (why.empty()) why = "accepted";
        o << "  " << std::setw(6) << t["outage"].get<int>() << "  " << std::setw(7) << t["mislead"].get<int>() << "  "
          << why << "\n";
    }
    o << "Outage line l_o = " << plan["l_o"] << ", misleading line l_m = " << plan["l_m"]
      << " (sending bus " << plan["sending_bus"] << ", receiving bus " << plan["receiving_bus"]
      << ", nearest generator " << plan["generator_bus"] << ")\n\n";
    o << "Attack region\n";
    for (const char* k : {"A", "B", "L", "M", "N", "E"}) o << "  " << std::setw(2) << k << " = " << set_text(region[k]) << "\n";
    o << "F3: " << plan["f3"]["status"].get<std::string>() << ", KKT residual " << plan["f3"]["kkt_residual"].get<double>()
      << ", audit " << plan["f3"]["audit_max_violation"].get<double>() << "\n";
    return o.str();
}

std::string table_forged(const ordered_json& f) {
    std::ostringstream o;
    o << "Phase angles and loads\n";
    o << "    bus   theta before   theta after   load before   load after\n";
    for (const auto& b : f["buses"])
        o << "  " << std::setw(5) << b["bus"].get<int>() << "  " << std::setw(13) << fmt(b["angle_before_rad"], 4) << " "
          << std::setw(13) << fmt(b["angle_after_rad"], 4) << " " << std::setw(13) << fmt(b["load_before_mw"], 2) << " "
          << std::setw(12) << fmt(b["load_after_mw"], 2) << "\n";
    o << "Line flows (MW)\n";
    o << "   line   before    after\n";
    for (const auto& l : f["lines"])
        o << "  " << std::setw(5) << l["line"].get<int>() << " " << std::setw(8) << fmt(l["flow_before_mw"], 2) << " "
          << std::setw(8) << fmt(l["flow_after_mw"], 2) << "\n";
    return o.str();
}

std::string table_rounds(const ordered_json& rounds, const std::string& title) {
    std::ostringstream o;
    o << title << "\n";
    for (const auto& r : rounds) {
        o << "  round " << r["round"] << ": max " << fmt(r["max_value"], 4) << (r["clean"].get<bool>() ? " (clean)" : "");
        if (!r["flagged"].empty()) {
            o << ", flagged";
            for (const auto& f : r["flagged"]) o << " " << f["item"].get<std::string>();
        }
        o << "\n   ";
        for (const auto& t : r["top"]) o << " " << t["item"].get<std::string>() << "=" << fmt(t["value"], 4);
        o << "\n";
    }
    return o.str();
}

ordered_json rates_json(const MonteCarloStats& mc) {
    return {{"trials", mc.trials},
            {"successes", mc.successes},
            {"misses", mc.misses},
            {"false_alarms", mc.false_alarms},
            {"success_rate", mc.success_rate},
            {"miss_rate", mc.miss_rate},
            {"false_alarm_rate", mc.false_alarm_rate},
            {"success_ci95", {mc.success_ci_low, mc.success_ci_high}}};
}

}  // namespace

double ScenarioConfig::noise_std() const { return noise_is_variance ? std::sqrt(noise_sigma2) : noise_sigma2; }
double ScenarioConfig::noise_variance() const { return noise_is_variance ? noise_sigma2 : noise_sigma2 * noise_sigma2; }

void ScenarioConfig::check() const {
    if (trials < 1) throw std::invalid_argument("trials must be at least 1");
    if (!(threshold > 0)) throw std::invalid_argument("threshold must be positive");
    if (!(tau > 0 && tau < 1)) throw std::invalid_argument("tau must lie in (0, 1)");
    if (!(noise_sigma2 >= 0)) throw std::invalid_argument("noise_sigma2 must be nonnegative");
}

ScenarioConfig parse_config(const std::string& json_text) {
    ScenarioConfig cfg;
    try {
        const json j = json::parse(json_text);
        cfg.case_path = j.value("case_path", cfg.case_path);
        cfg.tau = j.value("tau", cfg.tau);
        cfg.noise_sigma2 = j.value("noise_sigma2", cfg.noise_sigma2);
        cfg.noise_is_variance = j.value("noise_is_variance", cfg.noise_is_variance);
        cfg.threshold = j.value("threshold", cfg.threshold);
        cfg.trials = j.value("trials", cfg.trials);
        cfg.seed = j.value("seed", cfg.seed);
        const std::string mode = j.value("mode", std::string("idealized"));
        if (mode == "idealized")
            cfg.mode = AttackMode::idealized;
        else if (mode == "physical")
            cfg.mode = AttackMode::physical;
        else
            throw std::invalid_argument("unknown mode " + mode);
        const std::string model = j.value("measurement_model", std::string("flows_and_injections"));
        if (model == "flows_and_injections")
            cfg.model = MeasurementModel::flows_and_injections;
        else if (model == "flows_only")
            cfg.model = MeasurementModel::flows_only;
        else
            throw std::invalid_argument("unknown measurement_model " + model);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config parse failure: ") + e.what());
    }
    cfg.check();
    return cfg;
}

ScenarioConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_json(const ScenarioConfig& cfg) { return config_json(cfg).dump(2); }

GridCase case_for(const ScenarioConfig& cfg) { return cfg.case_path.empty() ? ieee14() : load_case(cfg.case_path); }

double standard_normal(std::uint64_t seed, std::uint64_t trial, std::uint64_t index) {
    const std::uint64_t key = mix64(mix64(mix64(seed) ^ trial) ^ index);
    const double u1 = unit_open(mix64(key));
    const double u2 = unit_open(mix64(key ^ 0xd1b54a32d192ed03ULL));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

TrialOutcome classify_outcome(const DetectionReport& report, const AttackPlan& plan, double threshold) {
    TrialOutcome out;
    if (report.rounds.empty()) return out;
    const DetectionRound& r1 = report.rounds.front();
    out.max_round1 = r1.max_value;
    out.flagged_round1 = r1.flagged;
    if (r1.clean || r1.max_value < threshold) {
        out.classification = Outcome::miss;
        return out;
    }
    bool lm_hit = false, stray = false;
    for (const FlaggedItem& f : r1.flagged) {
        const bool param = f.kind == FlaggedItem::Kind::parameter;
        if (param && f.index == plan.l_m && f.value > threshold)
            lm_hit = true;
        else if (!(param && plan.region.region_lines.contains(f.index)))
            stray = true;
    }
    out.classification = (lm_hit && !stray) ? Outcome::success : Outcome::false_alarm;
    return out;
}

Scenario prepare_scenario(const ScenarioConfig& cfg) {
    cfg.check();
    Scenario s;
    s.config = cfg;
    s.grid = case_for(cfg);
    s.base = solve_dc(s.grid);
    EligibilityRules rules;
    rules.tau = cfg.tau;
    s.plan = plan_attack(s.grid, rules);
    // Noise-free runs still need weights; any uniform variance gives the same estimate.
    const double var = cfg.noise_variance() > 0 ? cfg.noise_variance() : 1e-3;
    s.attacked = assemble_attacked_measurements(s.grid, s.base, s.plan, cfg.mode, measurement_layout(s.grid, cfg.model, var));
    return s;
}

MeasurementVector add_noise(const MeasurementVector& z, const ScenarioConfig& cfg, int trial) {
    MeasurementVector out = z;
    const double sd = cfg.noise_std();
    for (Eigen::Index i = 0; i < out.values_pu.size(); ++i)
        out.values_pu(i) += sd * standard_normal(cfg.seed, static_cast<std::uint64_t>(trial), static_cast<std::uint64_t>(i));
    return out;
}

TrialOutcome run_trial(const Scenario& s, int trial) {
    const MeasurementVector z = add_noise(s.attacked, s.config, trial);
    const DetectionReport rep = detect_iterative(z, s.grid, {s.config.threshold});
    TrialOutcome out = classify_outcome(rep, s.plan, s.config.threshold);
    out.trial = trial;
    return out;
}

CaseStudyReport run_case_study(const ScenarioConfig& cfg) {
    CaseStudyReport r;
    r.scenario = prepare_scenario(cfg);
    r.noiseless = detect_iterative(r.scenario.attacked, r.scenario.grid, {cfg.threshold});
    const MeasurementVector noisy = add_noise(r.scenario.attacked, cfg, 0);
    r.noisy = detect_iterative(noisy, r.scenario.grid, {cfg.threshold});
    r.noisy_outcome = classify_outcome(r.noisy, r.scenario.plan, cfg.threshold);
    return r;
}

std::pair<double, double> binomial_interval(int successes, int trials) {
    const double z = 1.959963984540054;
    const double n = trials, p = static_cast<double>(successes) / n;
    const double denom = 1 + z * z / n;
    const double centre = (p + z * z / (2 * n)) / denom;
    const double half = z * std::sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom;
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

MonteCarloStats monte_carlo(const Scenario& s, const std::vector<int>& trial_order) {
    MonteCarloStats mc;
    mc.trials = static_cast<int>(trial_order.size());
    mc.per_trial.resize(trial_order.size());
    for (int t : trial_order) mc.per_trial[static_cast<std::size_t>(t)] = run_trial(s, t);
    for (const TrialOutcome& o : mc.per_trial) {
        if (o.classification == Outcome::success) ++mc.successes;
        else if (o.classification == Outcome::miss) ++mc.misses;
        else ++mc.false_alarms;
    }
    mc.success_rate = static_cast<double>(mc.successes) / mc.trials;
    mc.miss_rate = static_cast<double>(mc.misses) / mc.trials;
    mc.false_alarm_rate = static_cast<double>(mc.false_alarms) / mc.trials;
    std::tie(mc.success_ci_low, mc.success_ci_high) = binomial_interval(mc.successes, mc.trials);
    return mc;
}

MonteCarloStats monte_carlo(const ScenarioConfig& cfg) {
    const Scenario s = prepare_scenario(cfg);
    std::vector<int> order(static_cast<std::size_t>(cfg.trials));
    for (int t = 0; t < cfg.trials; ++t) order[static_cast<std::size_t>(t)] = t;
    return monte_carlo(s, order);
}

std::string emit_report(const CaseStudyReport& r, ReportFormat format) {
    const Scenario& s = r.scenario;
    ordered_json j;
    j["config_echo"] = config_json(s.config);
    ordered_json limits = ordered_json::array();
    for (const Line& l : s.grid.lines) limits.push_back(l.thermal_limit_mw);
    j["thermal_limits_mw"] = limits;
    j["plan"] = plan_json(s);
    j["region"] = region_json(s.plan.region);
    j["forged_state"] = forged_json(s);
    j["detection_rounds"] = {{"noiseless", rounds_json(r.noiseless, s.attacked)},
                             {"noisy_trial_0", rounds_json(r.noisy, s.attacked)},
                             {"noisy_trial_0_outcome", to_string(r.noisy_outcome.classification)}};
    if (format == ReportFormat::structured) return j.dump(2) + "\n";

    std::ostringstream o;
    o << "Thermal limits (MW)\n ";
    for (std::size_t k = 0; k < limits.size(); ++k) o << " " << (k + 1) << ":" << limits[k].get<double>();
    o << "\n\n" << table_plan(j["plan"], j["region"]) << "\n" << table_forged(j["forged_state"]) << "\n";
    o << table_rounds(j["detection_rounds"]["noiseless"], "Detection, noiseless") << "\n";
    o << table_rounds(j["detection_rounds"]["noisy_trial_0"], "Detection, noisy trial 0 (" +
                                                                  j["detection_rounds"]["noisy_trial_0_outcome"].get<std::string>() +
                                                                  ")");
    return o.str();
}

std::string emit_report(const Scenario& s, const MonteCarloStats& mc, ReportFormat format) {
    ordered_json j;
    j["config_echo"] = config_json(s.config);
    j["plan"] = {{"l_o", s.plan.l_o}, {"l_m", s.plan.l_m}};
    j["region"] = region_json(s.plan.region);
    j["rates"] = rates_json(mc);
    ordered_json trials = ordered_json::array();
    for (const TrialOutcome& t : mc.per_trial) {
        ordered_json flagged = ordered_json::array();
        for (const FlaggedItem& f : t.flagged_round1) flagged.push_back(item_name(f, s.attacked));
        trials.push_back({{"trial", t.trial}, {"outcome", to_string(t.classification)}, {"max_round1", t.max_round1},
                          {"flagged_round1", flagged}});
    }
    j["per_trial"] = trials;
    if (format == ReportFormat::structured) return j.dump(2) + "\n";
    std::ostringstream o;
    const auto& rt = j["rates"];
    o << "Monte Carlo: " << rt["trials"] << " trials, seed " << s.config.seed << ", noise "
      << (s.config.noise_is_variance ? "variance " : "std ") << s.config.noise_sigma2 << ", threshold "
      << s.config.threshold << ", mode " << to_string(s.config.mode) << ", model " << mode_name(s.config.model) << "\n";
    o << "  (l_o, l_m) = (" << s.plan.l_o << ", " << s.plan.l_m << ")\n";
    o << "  success      " << fmt(100 * rt["success_rate"].get<double>(), 1) << " %  (95% CI "
      << fmt(100 * rt["success_ci95"][0].get<double>(), 1) << " - " << fmt(100 * rt["success_ci95"][1].get<double>(), 1)
      << ")\n";
    o << "  miss         " << fmt(100 * rt["miss_rate"].get<double>(), 1) << " %\n";
    o << "  false alarm  " << fmt(100 * rt["false_alarm_rate"].get<double>(), 1) << " %\n";
    return o.str();
}

std::string emit_plan(const Scenario& s, ReportFormat format) {
    ordered_json j;
    j["config_echo"] = config_json(s.config);
    j["plan"] = plan_json(s);
    j["region"] = region_json(s.plan.region);
    j["forged_state"] = forged_json(s);
    if (format == ReportFormat::structured) return j.dump(2) + "\n";
    return table_plan(j["plan"], j["region"]) + "\n" + table_forged(j["forged_state"]);
}

std::string emit_detection(const Scenario& s, const DetectionReport& d, ReportFormat format) {
    ordered_json j;
    j["config_echo"] = config_json(s.config);
    j["detection_rounds"] = rounds_json(d, s.attacked);
    j["verdict"] = to_string(d.verdict);
    j["error_lines"] = d.error_lines;
    if (format == ReportFormat::structured) return j.dump(2) + "\n";
    return table_rounds(j["detection_rounds"], "Detection (" + j["verdict"].get<std::string>() + ")");
}

std::string to_string(Outcome o) {
    switch (o) {
        case Outcome::success: return "success";
        case Outcome::miss: return "miss";
        case Outcome::false_alarm: return "false_alarm";
    }
    return "?";
}

}  // namespace gridattack
