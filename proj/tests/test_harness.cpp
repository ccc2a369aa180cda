#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "gridattack/harness.hpp"

using namespace gridattack;
using nlohmann::json;

namespace {

ScenarioConfig quick(double noise, bool variance, int trials = 50) {
    ScenarioConfig c;
    c.noise_sigma2 = noise;
    c.noise_is_variance = variance;
    c.trials = trials;
    return c;
}

void collect(const json& j, std::set<std::string>& out) {
    if (j.is_number()) {
        const double v = j.get<double>();
        for (int p : {0, 1, 2, 4}) {
            std::ostringstream s;
            s << std::fixed << std::setprecision(p) << v;
            out.insert(s.str());
        }
    } else if (j.is_structured()) {
        for (const auto& e : j) collect(e, out);
    }
}

DetectionReport one_round(std::vector<FlaggedItem> flagged, double max_value) {
    DetectionReport r;
    DetectionRound d;
    d.flagged = std::move(flagged);
    d.max_value = max_value;
    d.clean = d.flagged.empty();
    r.rounds.push_back(d);
    return r;
}

}  // namespace

TEST_CASE("config parsing") {
    const ScenarioConfig d = load_config(std::string(GRIDATTACK_DATA_DIR) + "/default_config.json");
    CHECK(d.tau == 0.5);
    CHECK(d.noise_sigma2 == 0.001);
    CHECK(d.noise_is_variance);
    CHECK(d.threshold == 2.0);
    CHECK(d.trials == 1000);
    CHECK(d.seed == 1);
    CHECK(d.mode == AttackMode::idealized);
    CHECK(d.model == MeasurementModel::flows_and_injections);
    CHECK(d.noise_std() == doctest::Approx(std::sqrt(0.001)));

    ScenarioConfig e;
    e.tau = 0.25;
    e.noise_sigma2 = 0.002;
    e.noise_is_variance = false;
    e.seed = 99;
    e.mode = AttackMode::physical;
    e.model = MeasurementModel::flows_only;
    const ScenarioConfig back = parse_config(config_to_json(e));
    CHECK(back.tau == e.tau);
    CHECK(back.noise_sigma2 == e.noise_sigma2);
    CHECK(!back.noise_is_variance);
    CHECK(back.noise_variance() == doctest::Approx(0.002 * 0.002));
    CHECK(back.seed == 99);
    CHECK(back.mode == AttackMode::physical);
    CHECK(back.model == MeasurementModel::flows_only);

    CHECK(parse_config("{}").trials == 1000);
    CHECK_THROWS_AS(parse_config("{\"tau\": 1.5}"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("{\"trials\": 0}"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("{\"mode\": \"sneaky\"}"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("{\"tau\": \"half\"}"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("{ not json"), std::invalid_argument);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), std::invalid_argument);
}

TEST_CASE("counter-based normals") {
    CHECK(standard_normal(1, 2, 3) == standard_normal(1, 2, 3));
    CHECK(standard_normal(1, 2, 3) != standard_normal(1, 2, 4));
    CHECK(standard_normal(1, 2, 3) != standard_normal(2, 2, 3));
    double sum = 0.0, sq = 0.0;
    int within1 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double v = standard_normal(7, static_cast<std::uint64_t>(i / 34), static_cast<std::uint64_t>(i % 34));
        CHECK_FALSE(std::isnan(v));
        sum += v;
        sq += v * v;
        within1 += std::abs(v) < 1.0;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(sq / n == doctest::Approx(1.0).epsilon(0.02));
    CHECK(static_cast<double>(within1) / n == doctest::Approx(0.6827).epsilon(0.01));
}

TEST_CASE("outcome classification") {
    AttackPlan p;
    p.l_m = 17;
    p.region.region_lines = {12, 13, 19, 20};
    using K = FlaggedItem::Kind;
    CHECK(classify_outcome(one_round({{K::parameter, 17, 2.3}, {K::parameter, 20, 2.3}}, 2.3), p, 2.0).classification ==
          Outcome::success);
    CHECK(classify_outcome(one_round({{K::parameter, 17, 2.3}}, 2.3), p, 2.0).classification == Outcome::success);
    CHECK(classify_outcome(one_round({}, 1.2), p, 2.0).classification == Outcome::miss);
    CHECK(classify_outcome(DetectionReport{}, p, 2.0).classification == Outcome::miss);
    // Wrong line, a measurement, or a parameter outside the region.
    CHECK(classify_outcome(one_round({{K::parameter, 20, 2.5}}, 2.5), p, 2.0).classification == Outcome::false_alarm);
    CHECK(classify_outcome(one_round({{K::measurement, 3, 2.5}}, 2.5), p, 2.0).classification == Outcome::false_alarm);
    CHECK(classify_outcome(one_round({{K::parameter, 17, 2.5}, {K::parameter, 3, 2.5}}, 2.5), p, 2.0).classification ==
          Outcome::false_alarm);
    const TrialOutcome t = classify_outcome(one_round({{K::parameter, 17, 2.3}}, 2.3), p, 2.0);
    CHECK(t.max_round1 == 2.3);
    CHECK(t.flagged_round1.size() == 1);
}

TEST_CASE("Monte Carlo runs") {
    const Scenario s = prepare_scenario(quick(0.001, true, 60));
    std::vector<int> order(60);
    for (int i = 0; i < 60; ++i) order[static_cast<std::size_t>(i)] = i;
    const MonteCarloStats a = monte_carlo(s, order);
    const MonteCarloStats b = monte_carlo(s, order);
    std::mt19937 rng(5);
    std::shuffle(order.begin(), order.end(), rng);
    const MonteCarloStats c = monte_carlo(s, order);
    CHECK(a.successes + a.misses + a.false_alarms == 60);
    CHECK(a.success_rate + a.miss_rate + a.false_alarm_rate == doctest::Approx(1.0));
    for (std::size_t k = 0; k < a.per_trial.size(); ++k) {
        CHECK(a.per_trial[k].trial == static_cast<int>(k));
        CHECK(a.per_trial[k].classification == b.per_trial[k].classification);
        CHECK(a.per_trial[k].classification == c.per_trial[k].classification);
        CHECK(a.per_trial[k].max_round1 == c.per_trial[k].max_round1);
    }
    CHECK(a.successes == c.successes);
    CHECK(a.success_ci_low <= a.success_rate);
    CHECK(a.success_ci_high >= a.success_rate);

    const MonteCarloStats z = monte_carlo(quick(0.0, true, 5));
    CHECK(z.success_rate == 1.0);
    CHECK(z.false_alarm_rate == 0.0);

    ScenarioConfig other = quick(0.001, true, 60);
    other.seed = 2;
    const MonteCarloStats d = monte_carlo(other);
    int differ = 0;
    for (std::size_t k = 0; k < d.per_trial.size(); ++k) differ += d.per_trial[k].max_round1 != a.per_trial[k].max_round1;
    CHECK(differ > 0);
}

TEST_CASE("binomial interval") {
    const auto [lo, hi] = binomial_interval(799, 1000);
    CHECK(lo == doctest::Approx(0.7731).epsilon(1e-3));
    CHECK(hi == doctest::Approx(0.8229).epsilon(1e-3));
    CHECK(binomial_interval(0, 10).first == doctest::Approx(0.0));
    CHECK(binomial_interval(10, 10).second == doctest::Approx(1.0));
}

TEST_CASE("case study report") {
    const CaseStudyReport r = run_case_study(ScenarioConfig{});
    CHECK(r.scenario.plan.l_o == 13);
    CHECK(r.scenario.plan.l_m == 17);
    REQUIRE(r.noiseless.rounds.size() >= 2);
    const DetectionRound& first = r.noiseless.rounds[0];
    CHECK(first.max_value > 2.0);
    CHECK(first.lambda_n(16) == doctest::Approx(first.lambda_n(19)).epsilon(1e-6));
    CHECK(first.lambda_n(16) == doctest::Approx(first.max_value));
    CHECK(r.noiseless.rounds.back().clean);

    const json j = json::parse(emit_report(r, ReportFormat::structured));
    for (const char* key : {"config_echo", "thermal_limits_mw", "plan", "region", "forged_state", "detection_rounds"})
        CHECK(j.contains(key));
    CHECK(j["plan"]["l_o"] == 13);
    CHECK(j["region"]["E"] == json::array({12, 13, 19, 20}));
    CHECK(j["thermal_limits_mw"].size() == 20);
    CHECK(parse_config(j["config_echo"].dump()).seed == 1);
    std::set<int> lines;
    for (const auto& l : j["forged_state"]["lines"]) lines.insert(l["line"].get<int>());
    CHECK(lines == std::set<int>{12, 13, 17, 19, 20});
    for (const auto& l : j["forged_state"]["lines"])
        if (l["line"] == 17) CHECK(l["flow_after_mw"].get<double>() == 0.0);

    // Every decimal number printed in the table is present in the structured report.
    const std::string table = emit_report(r, ReportFormat::table);
    std::set<std::string> known;
    collect(j, known);
    const std::regex num(R"((?:^|[\s=(:])(-?\d+\.\d+)(?=[\s,)%]|$))");
    int seen = 0;
    for (auto it = std::sregex_iterator(table.begin(), table.end(), num); it != std::sregex_iterator(); ++it) {
        const std::string tok = (*it)[1];
        INFO(tok);
        CHECK(known.contains(tok));
        ++seen;
    }
    CHECK(seen > 40);

    ScenarioConfig fo;
    fo.model = MeasurementModel::flows_only;
    const CaseStudyReport r2 = run_case_study(fo);
    CHECK(r2.scenario.attacked.size() == 20);
    CHECK(r2.scenario.plan.l_m == 17);
}

TEST_CASE("Monte Carlo report") {
    const Scenario s = prepare_scenario(quick(0.001, false, 4));
    const MonteCarloStats mc = monte_carlo(s, {0, 1, 2, 3});
    const json j = json::parse(emit_report(s, mc, ReportFormat::structured));
    CHECK(j["rates"]["trials"] == 4);
    CHECK(j["per_trial"].size() == 4);
    CHECK(j["rates"]["success_rate"].get<double>() == mc.success_rate);
    const std::string t = emit_report(s, mc, ReportFormat::table);
    CHECK(t.find("success") != std::string::npos);
    CHECK(t.find("false alarm") != std::string::npos);

    const json p = json::parse(emit_plan(s, ReportFormat::structured));
    CHECK(p["plan"]["trail"].size() == 3);
    const DetectionReport d = detect_iterative(s.attacked, s.grid);
    const json dj = json::parse(emit_detection(s, d, ReportFormat::structured));
    CHECK(dj["verdict"] == to_string(d.verdict));
}
