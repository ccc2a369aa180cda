#include "gridattack/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace gridattack {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// Relative cutoffs for critical measurements and unidentifiable parameters.
constexpr double kCriticalRel = 1e-9;

Eigen::MatrixXd drop_col(const Eigen::MatrixXd& m, int col) {
    Eigen::MatrixXd out(m.rows(), m.cols() - 1);
    for (Eigen::Index j = 0, o = 0; j < m.cols(); ++j)
        if (j != col) out.col(o++) = m.col(j);
    return out;
}

MeasurementVector subset(const MeasurementVector& z, const std::vector<int>& keep) {
    MeasurementVector out;
    out.values_pu.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        out.values_pu(static_cast<Eigen::Index>(k)) = z.values_pu(keep[k]);
        out.meta.push_back(z.meta[keep[k]]);
    }
    return out;
}

}  // namespace

int MeasurementVector::flow_index(int line) const {
    for (std::size_t k = 0; k < meta.size(); ++k)
        if (meta[k].kind == MeasurementKind::line_flow && meta[k].target == line) return static_cast<int>(k);
    return -1;
}

int MeasurementVector::injection_index(int bus) const {
    for (std::size_t k = 0; k < meta.size(); ++k)
        if (meta[k].kind == MeasurementKind::bus_injection && meta[k].target == bus) return static_cast<int>(k);
    return -1;
}

std::vector<MeasurementMeta> measurement_layout(const GridCase& c, MeasurementModel model, double sigma2) {
    std::vector<MeasurementMeta> out;
    for (const Line& l : c.lines) out.push_back({MeasurementKind::line_flow, l.id, sigma2});
    if (model == MeasurementModel::flows_and_injections)
        for (const Bus& b : c.buses) out.push_back({MeasurementKind::bus_injection, b.id, sigma2});
    return out;
}

MeasurementVector measure(const GridCase& c, const Eigen::VectorXd& theta, const std::vector<MeasurementMeta>& layout) {
    MeasurementVector z;
    z.meta = layout;
    z.values_pu = build_h(c, layout) * theta;
    return z;
}

Eigen::MatrixXd build_h(const GridCase& c, const std::vector<MeasurementMeta>& meta) {
    const Eigen::MatrixXd bf = build_bf(c);
    const Eigen::MatrixXd bbus = build_bbus(c);
    Eigen::MatrixXd h(static_cast<Eigen::Index>(meta.size()), static_cast<Eigen::Index>(c.n_buses()));
    for (std::size_t k = 0; k < meta.size(); ++k) {
        const auto row = static_cast<Eigen::Index>(k);
        if (meta[k].kind == MeasurementKind::line_flow)
            h.row(row) = bf.row(meta[k].target - 1);
        else
            h.row(row) = bbus.row(meta[k].target - 1);
    }
    return h;
}

Eigen::MatrixXd build_h(const GridCase& c) {
    return build_h(c, measurement_layout(c, MeasurementModel::flows_and_injections, 1.0));
}

Eigen::VectorXd variances(const std::vector<MeasurementMeta>& meta) {
    Eigen::VectorXd r(static_cast<Eigen::Index>(meta.size()));
    for (std::size_t k = 0; k < meta.size(); ++k) r(static_cast<Eigen::Index>(k)) = meta[k].sigma2;
    return r;
}

EstimationResult wls_estimate(const MeasurementVector& z, const GridCase& c) {
    const int s = c.slack_bus - 1;
    const Eigen::MatrixXd h = drop_col(build_h(c, z.meta), s);
    const Eigen::VectorXd w = variances(z.meta).cwiseInverse().cwiseSqrt();
    const Eigen::MatrixXd hw = w.asDiagonal() * h;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(hw);
    qr.setThreshold(1e-10);
    if (qr.rank() < h.cols()) throw UnobservableError("measurement set leaves the state unobservable");
    Eigen::VectorXd red = qr.solve(w.cwiseProduct(z.values_pu));
    // One refinement pass pulls H^T W r down to rounding level.
    red += qr.solve(w.cwiseProduct(z.values_pu - h * red));
    EstimationResult est;
    est.theta_hat = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.n_buses()));
    for (Eigen::Index i = 0, o = 0; i < est.theta_hat.size(); ++i)
        if (i != s) est.theta_hat(i) = red(o++);
    est.residuals = z.values_pu - h * red;
    est.objective = w.cwiseProduct(est.residuals).squaredNorm();
    return est;
}

Eigen::MatrixXd residual_covariance(const GridCase& c, const std::vector<MeasurementMeta>& meta) {
    const Eigen::MatrixXd h = drop_col(build_h(c, meta), c.slack_bus - 1);
    const Eigen::VectorXd r = variances(meta);
    const Eigen::MatrixXd g = h.transpose() * r.cwiseInverse().asDiagonal() * h;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(g);
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-14)
        throw UnobservableError("gain matrix is singular");
    Eigen::MatrixXd omega = -h * ldlt.solve(h.transpose());
    omega.diagonal() += r;
    return 0.5 * (omega + omega.transpose());
}

Eigen::VectorXd normalized_residuals(const EstimationResult& est, const Eigen::MatrixXd& omega) {
    const Eigen::Index n = est.residuals.size();
    Eigen::VectorXd out(n);
    const double scale = omega.diagonal().cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = omega(i, i);
        out(i) = d > kCriticalRel * scale ? std::abs(est.residuals(i)) / std::sqrt(d) : kNaN;
    }
    return out;
}

Eigen::MatrixXd parameter_sensitivities(const GridCase& c, const std::vector<MeasurementMeta>& meta,
                                        const Eigen::VectorXd& theta_hat) {
    Eigen::MatrixXd hp = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(meta.size()),
                                               static_cast<Eigen::Index>(c.n_lines()));
    for (std::size_t k = 0; k < meta.size(); ++k) {
        const auto row = static_cast<Eigen::Index>(k);
        const MeasurementMeta& m = meta[k];
        for (const Line& l : c.lines) {
            const double d = -(theta_hat(l.from_bus - 1) - theta_hat(l.to_bus - 1)) / (l.reactance_pu * l.reactance_pu);
            if (m.kind == MeasurementKind::line_flow) {
                if (m.target == l.id) hp(row, l.id - 1) = d;
            } else if (m.target == l.from_bus) {
                hp(row, l.id - 1) = d;
            } else if (m.target == l.to_bus) {
                hp(row, l.id - 1) = -d;
            }
        }
    }
    return hp;
}

Eigen::VectorXd normalized_lagrange_multipliers(const EstimationResult& est, const Eigen::MatrixXd& omega,
                                                const Eigen::MatrixXd& h_p, const Eigen::VectorXd& r_var) {
    const Eigen::VectorXd rinv = r_var.cwiseInverse();
    const Eigen::MatrixXd wh = rinv.asDiagonal() * h_p;
    const Eigen::VectorXd s = wh.transpose() * est.residuals;
    const Eigen::MatrixXd lambda = wh.transpose() * omega * wh;
    Eigen::VectorXd out(h_p.cols());
    for (Eigen::Index l = 0; l < h_p.cols(); ++l) {
        const double raw = h_p.col(l).dot(wh.col(l));
        const double d = lambda(l, l);
        out(l) = (raw > 0 && d > kCriticalRel * raw) ? std::abs(s(l)) / std::sqrt(d) : kNaN;
    }
    return out;
}

DetectionReport detect_iterative(const MeasurementVector& z, const GridCase& c, const DetectionOptions& opt) {
    DetectionReport report;
    const int nm = static_cast<int>(z.size());
    const int nl = static_cast<int>(c.n_lines());
    std::vector<int> active(static_cast<std::size_t>(nm));
    for (int i = 0; i < nm; ++i) active[static_cast<std::size_t>(i)] = i;
    std::set<int> live_params;
    for (int l = 1; l <= nl; ++l) live_params.insert(l);
    std::set<int> error_lines, bad;

    for (int round = 0; round <= nm + nl; ++round) {
        const MeasurementVector sub = subset(z, active);
        EstimationResult est;
        Eigen::MatrixXd omega;
        try {
            est = wls_estimate(sub, c);
            omega = residual_covariance(c, sub.meta);
        } catch (const UnobservableError&) {
            report.verdict = Verdict::unobservable;
            break;
        }
        const Eigen::VectorXd rn_sub = normalized_residuals(est, omega);
        const Eigen::MatrixXd hp = parameter_sensitivities(c, sub.meta, est.theta_hat);
        Eigen::VectorXd ln = normalized_lagrange_multipliers(est, omega, hp, variances(sub.meta));

        DetectionRound rd;
        rd.r_n = Eigen::VectorXd::Constant(nm, kNaN);
        for (std::size_t k = 0; k < active.size(); ++k) rd.r_n(active[k]) = rn_sub(static_cast<Eigen::Index>(k));
        for (int l = 1; l <= nl; ++l)
            if (!live_params.contains(l)) ln(l - 1) = kNaN;
        rd.lambda_n = ln;

        double mx = 0.0;
        for (Eigen::Index i = 0; i < rd.r_n.size(); ++i)
            if (!std::isnan(rd.r_n(i))) mx = std::max(mx, rd.r_n(i));
        for (Eigen::Index l = 0; l < ln.size(); ++l)
            if (!std::isnan(ln(l))) mx = std::max(mx, ln(l));
        rd.max_value = mx;
        if (mx < opt.threshold) {
            rd.clean = true;
            report.rounds.push_back(std::move(rd));
            break;
        }
        const double cut = mx * (1.0 - opt.tie_rel);
        for (int l = 1; l <= nl; ++l)
            if (!std::isnan(ln(l - 1)) && ln(l - 1) >= cut)
                rd.flagged.push_back({FlaggedItem::Kind::parameter, l, ln(l - 1)});
        for (int i = 0; i < nm; ++i)
            if (!std::isnan(rd.r_n(i)) && rd.r_n(i) >= cut)
                rd.flagged.push_back({FlaggedItem::Kind::measurement, i, rd.r_n(i)});

        std::set<int> drop;
        for (const FlaggedItem& f : rd.flagged) {
            if (f.kind == FlaggedItem::Kind::parameter) {
                live_params.erase(f.index);
                error_lines.insert(f.index);
                for (int i : active)
                    if (z.meta[i].kind == MeasurementKind::line_flow && z.meta[i].target == f.index) drop.insert(i);
            } else {
                bad.insert(f.index);
                drop.insert(f.index);
            }
        }
        rd.removed_measurements.assign(drop.begin(), drop.end());
        std::erase_if(active, [&](int i) { return drop.contains(i); });
        report.rounds.push_back(std::move(rd));
    }

    report.error_lines.assign(error_lines.begin(), error_lines.end());
    report.bad_measurements.assign(bad.begin(), bad.end());
    if (report.verdict != Verdict::unobservable) {
        if (!error_lines.empty())
            report.verdict = Verdict::parameter_error;
        else if (!bad.empty())
            report.verdict = Verdict::bad_data;
        else
            report.verdict = Verdict::clean;
    }
    return report;
}

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::clean: return "clean";
        case Verdict::parameter_error: return "parameter_error";
        case Verdict::bad_data: return "bad_data";
        case Verdict::unobservable: return "unobservable";
    }
    return "?";
}

std::string describe(const MeasurementMeta& m) {
    return (m.kind == MeasurementKind::line_flow ? "P_line" : "P_bus") + std::to_string(m.target);
}

}  // namespace gridattack
