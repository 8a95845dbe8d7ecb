#pragma once

// Multiplicative fixed-point reconstructions for Poisson data:
//
//   RL    f+ = f . H*{g / Hf}
//   SRL   c+ = A*{g / Ac} . c / (v + lambda),   v = A*{1}
//   RLTV  f+ = f / (1 - gamma div(grad f / |grad f|)) . H*{g / Hf}
//
// plus the objectives they descend, the MAP gradient, and a driver that
// records a per-iteration trace.

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pdeconv/core.hpp"
#include "pdeconv/kernel.hpp"
#include "pdeconv/metrics.hpp"
#include "pdeconv/model.hpp"

namespace pdeconv {

enum class StopRule {
    converged,     ///< stop when the relative change drops below epsilon_stop
    nmse_optimal,  ///< run max_iters and keep the iterate closest to the ground truth (oracle)
};

struct SolverConfig {
    double lambda = 0.0;
    double gamma_tv = 0.002;
    double epsilon_stop = 1e-4;
    std::size_t max_iters = 1000;
    double eps_div = kDefaultEpsDiv;
    double eps_tv = 1e-8;
    double tv_denominator_floor = 0.1;
    StopRule stop = StopRule::converged;

    void validate() const {
        if (!(lambda >= 0.0)) throw Error("SolverConfig: lambda must be nonnegative");
        if (!(gamma_tv >= 0.0)) throw Error("SolverConfig: gamma_tv must be nonnegative");
        if (!(epsilon_stop > 0.0 && epsilon_stop < 1.0)) throw Error("SolverConfig: epsilon_stop must lie in (0, 1)");
        if (max_iters == 0) throw Error("SolverConfig: max_iters must be positive");
        if (!(eps_div > 0.0) || !(eps_tv > 0.0)) throw Error("SolverConfig: floors must be positive");
        if (!(tv_denominator_floor > 0.0)) throw Error("SolverConfig: TV denominator floor must be positive");
    }
};

enum class Termination { converged, max_iters, nmse_optimal };

inline const char* to_string(Termination t) {
    switch (t) {
        case Termination::converged: return "converged";
        case Termination::max_iters: return "max_iters";
        default: return "nmse_optimal";
    }
}

struct TraceRecord {
    std::size_t iter = 0;
    double objective = 0.0;
    double rel_change = 0.0;
    std::optional<double> nmse;
};

struct SolverTrace {
    std::vector<TraceRecord> records;
    Termination terminated_by = Termination::max_iters;
    /// Iteration whose iterate was returned.
    std::size_t selected_iter = 0;
    bool oracle = false;
};

struct SolverResult {
    Image estimate;
    std::optional<CoeffStack> coefficients;
    SolverTrace trace;
};

/// `iter,objective,rel_change,nmse`; nmse left blank without ground truth.
inline void write_trace_csv(std::ostream& out, const SolverTrace& trace) {
    out << "iter,objective,rel_change,nmse\n";
    char buf[128];
    for (const auto& r : trace.records) {
        std::snprintf(buf, sizeof buf, "%zu,%.12e,%.12e,", r.iter, r.objective, r.rel_change);
        out << buf;
        if (r.nmse) {
            std::snprintf(buf, sizeof buf, "%.12e", *r.nmse);
            out << buf;
        }
        out << '\n';
    }
}

// ---------------------------------------------------------------- objectives

/// <1, model> - <g, log model> with 0 log 0 = 0; +inf when g > 0 meets a
/// zero model value.
inline double poisson_neg_loglik(const Image& g, const Image& model) {
    if (!g.same_shape(model)) throw ShapeError("objective: data and model shapes differ");
    double mass = 0.0, loglik = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        mass += model[i];
        if (g[i] > 0.0) {
            if (model[i] <= 0.0) return std::numeric_limits<double>::infinity();
            loglik += g[i] * std::log(model[i]);
        }
    }
    return mass - loglik;
}

namespace detail {

inline double data_log_term(const Image& g, const Image& model) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (g[i] > 0.0) {
            if (model[i] <= 0.0) return -std::numeric_limits<double>::infinity();
            s += g[i] * std::log(model[i]);
        }
    }
    return s;
}

inline std::vector<double> ratio(const Image& g, const Image& model, double eps_div) {
    if (!g.same_shape(model)) throw ShapeError("ratio: data and model shapes differ");
    std::vector<double> r(g.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = safe_div(g[i], model[i], eps_div);
    return r;
}

}  // namespace detail

/// E(f) = <1, Hf> - <g, log Hf>.
inline double ml_objective(const Image& g, const ConvKernel& h, const Image& f) {
    return poisson_neg_loglik(g, conv_forward(h, f));
}

/// ||f||_1 - <g, log Hf>; equals ml_objective for a normalized kernel.
inline double ml_objective_l1(const Image& g, const ConvKernel& h, const Image& f) {
    const Image hf = conv_forward(h, f);
    if (!g.same_shape(hf)) throw ShapeError("objective: data and model shapes differ");
    double l1 = 0.0;
    for (double x : f.values()) l1 += x;
    return l1 - detail::data_log_term(g, hf);
}

/// E(c) = <1, Ac> - <g, log Ac> + lambda ||c||_1.
inline double map_objective(const Image& g, const ForwardModel& m, const CoeffStack& c, double lambda) {
    return poisson_neg_loglik(g, m.forward(c)) + lambda * l1_norm(c);
}

/// E(c) = ||c||_{w,1} - <g, log Ac> with w = v + lambda.
inline double map_objective_weighted(const Image& g, const ForwardModel& m, const CoeffStack& c, double lambda) {
    const Image ac = m.forward(c);
    if (!g.same_shape(ac)) throw ShapeError("objective: data and model shapes differ");
    std::vector<double> w(m.v().vector());
    for (double& x : w) x += lambda;
    return weighted_l1(c, CoeffStack(c.layout(), std::move(w))) - detail::data_log_term(g, ac);
}

/// grad E(c) = A*{1} - A*{g / Ac} + lambda sign(c), with sign(0) = 0.
inline std::vector<double> gradient_map(const Image& g, const ForwardModel& m, const CoeffStack& c, double lambda,
                                        double eps_div = kDefaultEpsDiv) {
    const CoeffStack back = m.adjoint(Image(g.rows(), g.cols(), detail::ratio(g, m.forward(c), eps_div)));
    std::vector<double> grad(c.size());
    for (std::size_t i = 0; i < grad.size(); ++i) {
        grad[i] = (m.v()[i] - back[i]) + (c[i] > 0.0 ? lambda : 0.0);
    }
    return grad;
}

// --------------------------------------------------------------------- steps

namespace detail {

inline Image rl_update(const Image& g, const ConvKernel& h, const Image& f, const Image& hf, double eps_div) {
    const Image back = conv_adjoint(h, Image(g.rows(), g.cols(), ratio(g, hf, eps_div)));
    std::vector<double> out(f.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f[i] * back[i];
    return rebuild_like(f, std::move(out));
}

inline CoeffStack srl_update(const Image& g, const ForwardModel& m, const CoeffStack& c, const Image& ac,
                             double lambda, double eps_div) {
    const CoeffStack back = m.adjoint(Image(g.rows(), g.cols(), ratio(g, ac, eps_div)));
    const CoeffStack& v = m.v();
    std::vector<double> out(c.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = safe_div(back[i] * c[i], v[i] + lambda, eps_div);
    return rebuild_like(c, std::move(out));
}

}  // namespace detail

/// One Richardson-Lucy update.
inline Image rl_step(const Image& g, const ConvKernel& h, const Image& f, double eps_div = kDefaultEpsDiv) {
    if (!g.same_shape(f)) throw ShapeError("rl_step: data and estimate shapes differ");
    return detail::rl_update(g, h, f, conv_forward(h, f), eps_div);
}

/// One sparse-RL update on the coefficients.  Zero coefficients stay zero.
inline CoeffStack srl_step(const Image& g, const ForwardModel& m, const CoeffStack& c, double lambda,
                           double eps_div = kDefaultEpsDiv) {
    if (!(lambda >= 0.0)) throw Error("srl_step: lambda must be nonnegative");
    return detail::srl_update(g, m, c, m.forward(c), lambda, eps_div);
}

// -------------------------------------------------------- total variation

/// div(grad f / max(|grad f|, eps_tv)) with circular forward differences for
/// the gradient and the matching backward differences for the divergence.
inline std::vector<double> tv_curvature(const Image& f, double eps_tv) {
    const std::size_t rows = f.rows(), cols = f.cols();
    std::vector<double> px(f.size()), py(f.size());
    for (std::size_t n = 0; n < rows; ++n) {
        const std::size_t n1 = (n + 1) % rows;
        for (std::size_t m = 0; m < cols; ++m) {
            const std::size_t m1 = (m + 1) % cols;
            const double gx = f(n1, m) - f(n, m);
            const double gy = f(n, m1) - f(n, m);
            const double mag = std::max(std::sqrt(gx * gx + gy * gy), eps_tv);
            px[n * cols + m] = gx / mag;
            py[n * cols + m] = gy / mag;
        }
    }
    std::vector<double> div(f.size());
    for (std::size_t n = 0; n < rows; ++n) {
        const std::size_t n0 = (n + rows - 1) % rows;
        for (std::size_t m = 0; m < cols; ++m) {
            const std::size_t m0 = (m + cols - 1) % cols;
            div[n * cols + m] = (px[n * cols + m] - px[n0 * cols + m]) + (py[n * cols + m] - py[n * cols + m0]);
        }
    }
    return div;
}

/// sum |grad f| with the same circular forward differences.
inline double total_variation(const Image& f) {
    double tv = 0.0;
    for (std::size_t n = 0; n < f.rows(); ++n) {
        for (std::size_t m = 0; m < f.cols(); ++m) {
            const double gx = f((n + 1) % f.rows(), m) - f(n, m);
            const double gy = f(n, (m + 1) % f.cols()) - f(n, m);
            tv += std::sqrt(gx * gx + gy * gy);
        }
    }
    return tv;
}

struct TvOptions {
    double eps_tv = 1e-8;
    double denominator_floor = 0.1;
    double eps_div = kDefaultEpsDiv;
};

namespace detail {

inline Image rltv_update(const Image& g, const ConvKernel& h, const Image& f, const Image& hf, double gamma_tv,
                         const TvOptions& opt) {
    const Image back = conv_adjoint(h, Image(g.rows(), g.cols(), ratio(g, hf, opt.eps_div)));
    std::vector<double> out(f.size());
    const std::vector<double> curv = tv_curvature(f, opt.eps_tv);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double den = std::max(1.0 - gamma_tv * curv[i], opt.denominator_floor);
        out[i] = std::max(0.0, (f[i] / den) * back[i]);
    }
    return rebuild_like(f, std::move(out));
}

}  // namespace detail

/// One RL update with total-variation curvature in the denominator, floored
/// at `opt.denominator_floor`.
inline Image rltv_step(const Image& g, const ConvKernel& h, const Image& f, double gamma_tv, const TvOptions& opt = {}) {
    if (!(gamma_tv >= 0.0)) throw Error("rltv_step: gamma_tv must be nonnegative");
    if (!g.same_shape(f)) throw ShapeError("rltv_step: data and estimate shapes differ");
    return detail::rltv_update(g, h, f, conv_forward(h, f), gamma_tv, opt);
}

// -------------------------------------------------------------------- driver

namespace detail {

inline double relative_change(std::span<const double> next, std::span<const double> prev) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < next.size(); ++i) {
        const double d = next[i] - prev[i];
        num += d * d;
        den += prev[i] * prev[i];
    }
    if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return std::sqrt(num / den);
}

/// Shared iteration loop.  `evaluate(x)` returns {estimate image, model
/// prediction}; `update(x, model)` returns the next iterate; `objective(x,
/// estimate, model)` the value recorded for x.
template <typename State, typename Evaluate, typename Update, typename Objective>
SolverResult drive(State x, Evaluate&& evaluate, Update&& update, Objective&& objective, const SolverConfig& cfg,
                   const Image* truth) {
    cfg.validate();
    if (cfg.stop == StopRule::nmse_optimal && !truth) {
        throw Error("run_solver: NMSE-optimal termination requires a ground truth image");
    }
    SolverResult result{Image(), std::nullopt, {}};
    result.trace.oracle = cfg.stop == StopRule::nmse_optimal;
    result.trace.records.reserve(cfg.max_iters);

    auto [estimate, model] = evaluate(x);
    std::optional<State> best_state;
    std::optional<Image> best_estimate;
    double best_nmse = std::numeric_limits<double>::infinity();
    result.trace.terminated_by = Termination::max_iters;

    for (std::size_t t = 1; t <= cfg.max_iters; ++t) {
        State next = update(x, model);
        auto [next_estimate, next_model] = evaluate(next);

        TraceRecord rec;
        rec.iter = t;
        rec.objective = objective(next, next_estimate, next_model);
        rec.rel_change = relative_change(next.values(), x.values());
        if (truth) rec.nmse = nmse(*truth, next_estimate);
        result.trace.records.push_back(rec);

        x = std::move(next);
        estimate = std::move(next_estimate);
        model = std::move(next_model);

        if (cfg.stop == StopRule::nmse_optimal) {
            if (*rec.nmse < best_nmse) {
                best_nmse = *rec.nmse;
                best_state = x;
                best_estimate = estimate;
                result.trace.selected_iter = t;
            }
        } else if (rec.rel_change < cfg.epsilon_stop) {
            result.trace.terminated_by = Termination::converged;
            break;
        }
    }

    if (cfg.stop == StopRule::nmse_optimal) {
        result.trace.terminated_by = Termination::nmse_optimal;
        x = std::move(*best_state);
        estimate = std::move(*best_estimate);
    } else {
        result.trace.selected_iter = result.trace.records.back().iter;
    }
    result.estimate = std::move(estimate);
    if constexpr (std::is_same_v<State, CoeffStack>) result.coefficients = std::move(x);
    return result;
}

inline Image flat_start(const Image& g) {
    double total = 0.0;
    for (double x : g.values()) total += x;
    return Image(g.rows(), g.cols(), total / static_cast<double>(g.size()));
}

}  // namespace detail

/// RL from the flat start f0 = 1 * sum(g) / NM.
inline SolverResult run_rl(const Image& g, const ConvKernel& h, const SolverConfig& cfg,
                           const Image* truth = nullptr) {
    auto evaluate = [&](const Image& f) { return std::pair<Image, Image>{f, conv_forward(h, f)}; };
    auto update = [&](const Image& f, const Image& hf) { return detail::rl_update(g, h, f, hf, cfg.eps_div); };
    auto objective = [&](const Image&, const Image&, const Image& hf) { return poisson_neg_loglik(g, hf); };
    return detail::drive(detail::flat_start(g), evaluate, update, objective, cfg, truth);
}

/// SRL from an explicit starting point.  The estimate is Phi{c}; the trace
/// objective is E(c).
inline SolverResult run_srl(const Image& g, const ForwardModel& m, CoeffStack c0, const SolverConfig& cfg,
                            const Image* truth = nullptr) {
    auto evaluate = [&](const CoeffStack& c) {
        Image f = m.synthesize(c);
        Image ac = conv_forward(m.kernel(), f);
        return std::pair<Image, Image>{std::move(f), std::move(ac)};
    };
    auto update = [&](const CoeffStack& c, const Image& ac) {
        return detail::srl_update(g, m, c, ac, cfg.lambda, cfg.eps_div);
    };
    auto objective = [&](const CoeffStack& c, const Image&, const Image& ac) {
        return poisson_neg_loglik(g, ac) + cfg.lambda * l1_norm(c);
    };
    return detail::drive(std::move(c0), evaluate, update, objective, cfg, truth);
}

/// SRL from c0 = 1.
inline SolverResult run_srl(const Image& g, const ForwardModel& m, const SolverConfig& cfg,
                            const Image* truth = nullptr) {
    return run_srl(g, m, CoeffStack(m.layout(), 1.0), cfg, truth);
}

/// RLTV from the same flat start as RL.  The trace objective is
/// E_ML(f) + gamma_tv * TV(f).
inline SolverResult run_rltv(const Image& g, const ConvKernel& h, const SolverConfig& cfg,
                             const Image* truth = nullptr) {
    const TvOptions opt{cfg.eps_tv, cfg.tv_denominator_floor, cfg.eps_div};
    auto evaluate = [&](const Image& f) { return std::pair<Image, Image>{f, conv_forward(h, f)}; };
    auto update = [&](const Image& f, const Image& hf) { return detail::rltv_update(g, h, f, hf, cfg.gamma_tv, opt); };
    auto objective = [&](const Image& f, const Image&, const Image& hf) {
        return poisson_neg_loglik(g, hf) + cfg.gamma_tv * total_variation(f);
    };
    return detail::drive(detail::flat_start(g), evaluate, update, objective, cfg, truth);
}

enum class Method { rl, srl, rltv };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::rl: return "rl";
        case Method::srl: return "srl";
        default: return "rltv";
    }
}

/// Dispatches on `method`.  RL and RLTV use only the model's kernel.
inline SolverResult run_solver(Method method, const Image& g, const ForwardModel& m, const SolverConfig& cfg,
                               const Image* truth = nullptr) {
    switch (method) {
        case Method::rl: return run_rl(g, m.kernel(), cfg, truth);
        case Method::srl: return run_srl(g, m, cfg, truth);
        default: return run_rltv(g, m.kernel(), cfg, truth);
    }
}

}  // namespace pdeconv
