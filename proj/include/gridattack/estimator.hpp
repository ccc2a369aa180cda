#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridattack/dc_core.hpp"
#include "gridattack/grid_model.hpp"

namespace gridattack {

struct UnobservableError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class MeasurementKind { line_flow, bus_injection };
enum class MeasurementModel { flows_and_injections, flows_only };

struct MeasurementMeta {
    MeasurementKind kind = MeasurementKind::line_flow;
    int target = 0;  // line id or bus id
    double sigma2 = 1e-3;
};

// Line flows in line order, then bus injections in bus order.
struct MeasurementVector {
    Eigen::VectorXd values_pu;
    std::vector<MeasurementMeta> meta;

    std::size_t size() const { return meta.size(); }
    // Position of the flow measurement of `line`, or -1.
    int flow_index(int line) const;
    int injection_index(int bus) const;
};

std::vector<MeasurementMeta> measurement_layout(const GridCase& c, MeasurementModel model, double sigma2);
// Noiseless measurements h(theta) for the given layout.
MeasurementVector measure(const GridCase& c, const Eigen::VectorXd& theta, const std::vector<MeasurementMeta>& layout);

struct EstimationResult {
    Eigen::VectorXd theta_hat;
    Eigen::VectorXd residuals;
    double objective = 0.0;
};

Eigen::MatrixXd build_h(const GridCase& c, const std::vector<MeasurementMeta>& meta);
Eigen::MatrixXd build_h(const GridCase& c);
Eigen::VectorXd variances(const std::vector<MeasurementMeta>& meta);

EstimationResult wls_estimate(const MeasurementVector& z, const GridCase& c);
Eigen::MatrixXd residual_covariance(const GridCase& c, const std::vector<MeasurementMeta>& meta);

// Entries that cannot be normalized (critical measurements, unidentifiable
// parameters) are NaN and never take part in a maximum.
Eigen::VectorXd normalized_residuals(const EstimationResult& est, const Eigen::MatrixXd& omega);
Eigen::MatrixXd parameter_sensitivities(const GridCase& c, const std::vector<MeasurementMeta>& meta,
                                        const Eigen::VectorXd& theta_hat);
Eigen::VectorXd normalized_lagrange_multipliers(const EstimationResult& est, const Eigen::MatrixXd& omega,
                                                const Eigen::MatrixXd& h_p, const Eigen::VectorXd& r_var);

struct FlaggedItem {
    enum class Kind { parameter, measurement };
    Kind kind = Kind::parameter;
    int index = 0;  // line id for parameters, position in the original z for measurements
    double value = 0.0;

    bool operator==(const FlaggedItem&) const = default;
};

struct DetectionRound {
    Eigen::VectorXd lambda_n;  // per line; NaN when removed or unidentifiable
    Eigen::VectorXd r_n;       // per original measurement; NaN when removed or critical
    std::vector<FlaggedItem> flagged;
    std::vector<int> removed_measurements;
    double max_value = 0.0;
    bool clean = false;
};

enum class Verdict { clean, parameter_error, bad_data, unobservable };

struct DetectionReport {
    std::vector<DetectionRound> rounds;
    Verdict verdict = Verdict::clean;
    std::vector<int> error_lines;
    std::vector<int> bad_measurements;
};

struct DetectionOptions {
    double threshold = 2.0;
    double tie_rel = 1e-6;
};

DetectionReport detect_iterative(const MeasurementVector& z, const GridCase& c, const DetectionOptions& opt = {});

std::string to_string(Verdict v);
std::string describe(const MeasurementMeta& m);

}  // namespace gridattack
