#include <CLI11.hpp>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "gridattack/harness.hpp"

namespace ga = gridattack;

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> trials;
    std::optional<double> tau;
    std::optional<double> threshold;
    std::optional<std::string> mode;
    std::optional<std::string> model;
    std::optional<double> noise;
    bool noise_std = false;
    std::string format = "table";
    std::string out;
    int trial = -1;
};

void add_common(CLI::App* sub, Overrides& o) {
    sub->add_option("--config", o.config, "Scenario config file (JSON)");
    sub->add_option("--seed", o.seed, "Noise seed");
    sub->add_option("--trials", o.trials, "Monte Carlo trials");
    sub->add_option("--tau", o.tau, "Modification range as a fraction");
    sub->add_option("--threshold", o.threshold, "Detection threshold");
    sub->add_option("--mode", o.mode, "idealized or physical")->check(CLI::IsMember({"idealized", "physical"}));
    sub->add_option("--model", o.model, "flows_and_injections or flows_only")
        ->check(CLI::IsMember({"flows_and_injections", "flows_only"}));
    sub->add_option("--noise", o.noise, "Noise level (variance unless --noise-std)");
    sub->add_flag("--noise-std", o.noise_std, "Read the noise level as a standard deviation");
    sub->add_option("--format", o.format, "table or json")->check(CLI::IsMember({"table", "json"}));
    sub->add_option("--out", o.out, "Write the report here instead of stdout");
}

ga::ScenarioConfig build_config(const Overrides& o) {
    ga::ScenarioConfig cfg = o.config.empty() ? ga::ScenarioConfig{} : ga::load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.trials) cfg.trials = *o.trials;
    if (o.tau) cfg.tau = *o.tau;
    if (o.threshold) cfg.threshold = *o.threshold;
    if (o.mode) cfg.mode = *o.mode == "physical" ? ga::AttackMode::physical : ga::AttackMode::idealized;
    if (o.model)
        cfg.model = *o.model == "flows_only" ? ga::MeasurementModel::flows_only : ga::MeasurementModel::flows_and_injections;
    if (o.noise) cfg.noise_sigma2 = *o.noise;
    if (o.noise_std) cfg.noise_is_variance = false;
    cfg.check();
    return cfg;
}

std::string measurement_report(const ga::Scenario& s, ga::ReportFormat fmt) {
    const ga::MeasurementVector clean = ga::measure(s.grid, s.base.angles_rad, s.attacked.meta);
    const double mva = s.grid.base_mva;
    if (fmt == ga::ReportFormat::structured) {
        nlohmann::ordered_json j = nlohmann::ordered_json::array();
        for (std::size_t k = 0; k < s.attacked.size(); ++k)
            j.push_back({{"measurement", ga::describe(s.attacked.meta[k])},
                         {"base_mw", std::round(clean.values_pu(static_cast<Eigen::Index>(k)) * mva * 100) / 100},
                         {"attacked_mw", std::round(s.attacked.values_pu(static_cast<Eigen::Index>(k)) * mva * 100) / 100}});
        return j.dump(2) + "\n";
    }
    std::ostringstream o;
    o << "  measurement      base MW  attacked MW\n";
    for (std::size_t k = 0; k < s.attacked.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        const double a = clean.values_pu(i) * mva, b = s.attacked.values_pu(i) * mva;
        o << "  " << std::left << std::setw(12) << ga::describe(s.attacked.meta[k]) << std::right << std::fixed
          << std::setprecision(2) << std::setw(11) << a << std::setw(13) << b << (std::abs(a - b) > 5e-3 ? "  *" : "")
          << "\n";
    }
    return o.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Combinational line-outage attack simulator on DC grids"};
    app.require_subcommand(1);
    Overrides o;
    auto* plan = app.add_subcommand("plan", "Select target lines, build the region and solve F3");
    auto* attack = app.add_subcommand("attack", "Print the forged measurement vector");
    auto* detect = app.add_subcommand("detect", "Run iterative bad-data / parameter-error detection");
    auto* study = app.add_subcommand("case-study", "Full single-scenario report");
    auto* mc = app.add_subcommand("montecarlo", "Noisy detection trials and success rates");
    for (auto* s : {plan, attack, detect, study, mc}) add_common(s, o);
    detect->add_option("--trial", o.trial, "Add the noise draw of this trial (default: noiseless)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    ga::ScenarioConfig cfg;
    try {
        cfg = build_config(o);
        (void)ga::case_for(cfg);
    } catch (const std::exception& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return 1;
    }
    const auto fmt = o.format == "json" ? ga::ReportFormat::structured : ga::ReportFormat::table;

    std::string text;
    try {
        if (study->parsed()) {
            text = ga::emit_report(ga::run_case_study(cfg), fmt);
        } else {
            const ga::Scenario s = ga::prepare_scenario(cfg);
            if (plan->parsed()) {
                text = ga::emit_plan(s, fmt);
            } else if (attack->parsed()) {
                text = measurement_report(s, fmt);
            } else if (detect->parsed()) {
                const ga::MeasurementVector z = o.trial >= 0 ? ga::add_noise(s.attacked, cfg, o.trial) : s.attacked;
                text = ga::emit_detection(s, ga::detect_iterative(z, s.grid, {cfg.threshold}), fmt);
            } else {
                std::vector<int> order(static_cast<std::size_t>(cfg.trials));
                for (int t = 0; t < cfg.trials; ++t) order[static_cast<std::size_t>(t)] = t;
                text = ga::emit_report(s, ga::monte_carlo(s, order), fmt);
            }
        }
    } catch (const ga::CaseError& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "planner/solver failure: " << e.what() << "\n";
        return 2;
    }

    if (o.out.empty()) {
        std::cout << text;
    } else {
        std::ofstream f(o.out);
        if (!(f << text)) {
            std::cerr << "cannot write " << o.out << "\n";
            return 1;
        }
    }
    return 0;
}
