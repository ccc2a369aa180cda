#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gridattack/attack_planner.hpp"
#include "gridattack/estimator.hpp"
#include "gridattack/grid_model.hpp"

namespace gridattack {

struct ScenarioConfig {
    std::string case_path;  // empty: embedded 14-bus case
    double tau = 0.5;
    double noise_sigma2 = 0.001;
    // false: noise_sigma2 is read as a standard deviation
    bool noise_is_variance = true;
    double threshold = 2.0;
    int trials = 1000;
    std::uint64_t seed = 1;
    AttackMode mode = AttackMode::idealized;
    MeasurementModel model = MeasurementModel::flows_and_injections;

    double noise_std() const;
    double noise_variance() const;
    void check() const;
};

ScenarioConfig parse_config(const std::string& json_text);
ScenarioConfig load_config(const std::string& path);
std::string config_to_json(const ScenarioConfig& cfg);

GridCase case_for(const ScenarioConfig& cfg);

// Counter-based: the same (seed, trial, index) always yields the same draw.
double standard_normal(std::uint64_t seed, std::uint64_t trial, std::uint64_t index);

enum class Outcome { success, miss, false_alarm };

struct TrialOutcome {
    int trial = 0;
    Outcome classification = Outcome::miss;
    std::vector<FlaggedItem> flagged_round1;
    double max_round1 = 0.0;
};

TrialOutcome classify_outcome(const DetectionReport& report, const AttackPlan& plan, double threshold);

struct Scenario {
    ScenarioConfig config;
    GridCase grid;
    FlowSolution base;
    AttackPlan plan;
    MeasurementVector attacked;  // noiseless forged vector
};

Scenario prepare_scenario(const ScenarioConfig& cfg);
MeasurementVector add_noise(const MeasurementVector& z, const ScenarioConfig& cfg, int trial);
TrialOutcome run_trial(const Scenario& s, int trial);

struct CaseStudyReport {
    Scenario scenario;
    DetectionReport noiseless;
    DetectionReport noisy;
    TrialOutcome noisy_outcome;
};

CaseStudyReport run_case_study(const ScenarioConfig& cfg);

struct MonteCarloStats {
    int trials = 0;
    int successes = 0;
    int misses = 0;
    int false_alarms = 0;
    double success_rate = 0.0;
    double miss_rate = 0.0;
    double false_alarm_rate = 0.0;
    double success_ci_low = 0.0;
    double success_ci_high = 0.0;
    std::vector<TrialOutcome> per_trial;
};

MonteCarloStats monte_carlo(const ScenarioConfig& cfg);
MonteCarloStats monte_carlo(const Scenario& s, const std::vector<int>& trial_order);

// Wilson score interval at 95%.
std::pair<double, double> binomial_interval(int successes, int trials);

enum class ReportFormat { table, structured };

std::string emit_report(const CaseStudyReport& r, ReportFormat fmt);
std::string emit_report(const Scenario& s, const MonteCarloStats& mc, ReportFormat fmt);
std::string emit_plan(const Scenario& s, ReportFormat fmt);
std::string emit_detection(const Scenario& s, const DetectionReport& d, ReportFormat fmt);

std::string to_string(Outcome o);

}  // namespace gridattack
