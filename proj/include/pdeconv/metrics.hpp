#pragma once

// Reconstruction quality: NMSE, SSIM, and trial averaging.

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <ostream>
#include <span>
#include <string>
#include <utility>

#include "pdeconv/core.hpp"

namespace pdeconv {

/// ||f - f_hat||_F^2 / ||f||_F^2 for a single trial.
inline double nmse(const Image& truth, const Image& estimate) {
    if (!truth.same_shape(estimate)) throw ShapeError("nmse: shape mismatch");
    double err = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = truth[i] - estimate[i];
        err += d * d;
        ref += truth[i] * truth[i];
    }
    if (ref == 0.0) throw Error("nmse: ground truth is identically zero");
    return err / ref;
}

struct SsimOptions {
    std::size_t window_rows = 8;
    std::size_t window_cols = 8;
    double k1 = 0.01;
    double k2 = 0.03;
};

/// Mean SSIM over all fully contained windows (uniform weights, unit step).
/// The dynamic range L is the larger of the two image maxima.
inline double ssim(const Image& a, const Image& b, const SsimOptions& opt = {}) {
    if (!a.same_shape(b)) throw ShapeError("ssim: shape mismatch");
    if (a.rows() < opt.window_rows || a.cols() < opt.window_cols) throw ShapeError("ssim: image smaller than window");
    const double range = std::max(*std::max_element(a.values().begin(), a.values().end()),
                                  *std::max_element(b.values().begin(), b.values().end()));
    if (range == 0.0) return 1.0;
    const double c1 = (opt.k1 * range) * (opt.k1 * range);
    const double c2 = (opt.k2 * range) * (opt.k2 * range);
    const double inv_n = 1.0 / static_cast<double>(opt.window_rows * opt.window_cols);

    const std::size_t out_r = a.rows() - opt.window_rows + 1;
    const std::size_t out_c = a.cols() - opt.window_cols + 1;
    double total = 0.0;
    for (std::size_t r = 0; r < out_r; ++r) {
        for (std::size_t c = 0; c < out_c; ++c) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (std::size_t u = 0; u < opt.window_rows; ++u) {
                for (std::size_t v = 0; v < opt.window_cols; ++v) {
                    const double x = a(r + u, c + v), y = b(r + u, c + v);
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            const double ma = sa * inv_n, mb = sb * inv_n;
            const double va = saa * inv_n - ma * ma;
            const double vb = sbb * inv_n - mb * mb;
            const double cov = sab * inv_n - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    return total / static_cast<double>(out_r * out_c);
}

struct MeanStderr {
    double mean = 0.0;
    double std_error = 0.0;
};

/// Sample mean and standard error (n - 1 denominator), Neumaier-compensated.
inline MeanStderr average_trials(std::span<const double> values) {
    if (values.empty()) throw Error("average_trials: no values");
    auto compensated_sum = [&](auto&& term) {
        double sum = 0.0, comp = 0.0;
        for (double x : values) {
            const double y = term(x);
            const double t = sum + y;
            comp += std::abs(sum) >= std::abs(y) ? (sum - t) + y : (y - t) + sum;
            sum = t;
        }
        return sum + comp;
    };
    const double n = static_cast<double>(values.size());
    const double mean = compensated_sum([](double x) { return x; }) / n;
    if (values.size() == 1) return {mean, 0.0};
    const double ss = compensated_sum([mean](double x) { return (x - mean) * (x - mean); });
    return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

struct MetricReport {
    std::string method;
    std::size_t n_trials = 0;
    double nmse_mean = 0.0;
    double nmse_stderr = 0.0;
    double ssim_mean = 0.0;
    double ssim_stderr = 0.0;
    bool oracle = false;
};

inline MetricReport make_report(std::string method, std::span<const double> nmse_values,
                                std::span<const double> ssim_values, bool oracle) {
    const auto n = average_trials(nmse_values);
    const auto s = average_trials(ssim_values);
    return {std::move(method), nmse_values.size(), n.mean, n.std_error, s.mean, s.std_error, oracle};
}

inline constexpr const char* kMetricCsvHeader = "method,n_trials,nmse_mean,nmse_stderr,ssim_mean,ssim_stderr,oracle";

inline void write_metric_row(std::ostream& out, const MetricReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%zu,%.10e,%.10e,%.10e,%.10e,%s\n", r.method.c_str(), r.n_trials, r.nmse_mean,
                  r.nmse_stderr, r.ssim_mean, r.ssim_stderr, r.oracle ? "true" : "false");
    out << buf;
}

}  // namespace pdeconv
