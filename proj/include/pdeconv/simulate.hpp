#pragma once

// Synthetic ground truth, Poisson sampling and intensity scaling.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "pdeconv/core.hpp"
#include "pdeconv/dictionary.hpp"
#include "pdeconv/kernel.hpp"
#include "pdeconv/model.hpp"
#include "pdeconv/rng.hpp"

namespace pdeconv {

// ------------------------------------------------------------------ Poisson

/// One Poisson(mean) variate.  Sequential-search inversion below 30,
/// Hormann's transformed rejection (PTRD) from 30 up.
inline double poisson_variate(double mean, Rng& rng) {
    if (!(mean >= 0.0) || !std::isfinite(mean)) throw Error("poisson_variate: mean must be finite and nonnegative");
    if (mean == 0.0) return 0.0;
    if (mean < 30.0) {
        const double p0 = std::exp(-mean);
        // The cap only bites when rounding leaves the cumulative sum short of u.
        const long cap = static_cast<long>(mean + 40.0 * std::sqrt(mean) + 100.0);
        for (;;) {
            const double u = rng.uniform();
            double p = p0, cdf = p0;
            long k = 0;
            while (u >= cdf && k < cap) {
                ++k;
                p *= mean / static_cast<double>(k);
                cdf += p;
            }
            if (k < cap) return static_cast<double>(k);
        }
    }
    const double slam = std::sqrt(mean);
    const double loglam = std::log(mean);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
        const double u = rng.uniform() - 0.5;
        const double v = rng.uniform();
        const double us = 0.5 - std::abs(u);
        const double k = std::floor((2.0 * a / us + b) * u + mean + 0.43);
        if (us >= 0.07 && v <= vr) return k;
        if (k < 0.0 || (us < 0.013 && v > us)) continue;
        if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <= -mean + k * loglam - std::lgamma(k + 1.0)) {
            return k;
        }
    }
}

/// Independent Poisson draws with the given per-pixel means.
inline Image poisson_sample(const Image& intensity, Rng& rng) {
    std::vector<double> out(intensity.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = poisson_variate(intensity[i], rng);
    return Image(intensity.rows(), intensity.cols(), std::move(out));
}

// --------------------------------------------------------------- SNR scaling

/// 10 log10(sum f^2 / sum f): signal power over Poisson noise power.
inline double poisson_snr_db(const Image& f) {
    double s1 = 0.0, s2 = 0.0;
    for (double x : f.values()) {
        s1 += x;
        s2 += x * x;
    }
    if (s1 == 0.0) throw Error("poisson_snr_db: image is identically zero");
    return 10.0 * std::log10(s2 / s1);
}

/// Scale factor alpha with poisson_snr_db(alpha f) = target_db, found by
/// bisection on log(alpha).
inline double snr_scale_factor(const Image& f, double target_db) {
    const double base = poisson_snr_db(f);
    auto snr_at = [&](double log_alpha) { return base + 10.0 * log_alpha / std::numbers::ln10; };
    double lo = -1.0, hi = 1.0;
    while (snr_at(lo) > target_db) lo *= 2.0;
    while (snr_at(hi) < target_db) hi *= 2.0;
    while (snr_at(hi) - snr_at(lo) > 1e-9) {
        const double mid = 0.5 * (lo + hi);
        (snr_at(mid) < target_db ? lo : hi) = mid;
    }
    return std::exp(0.5 * (lo + hi));
}

inline Image scale_to_snr(const Image& f, double target_db) {
    return scalar_mul(f, snr_scale_factor(f, target_db));
}

// ----------------------------------------------------------- sparse signals

struct TrialSpec {
    std::uint64_t seed = 0;
    std::size_t n_trials = 200;
    /// The support fraction of each trial is drawn uniformly from this range.
    double sparsity_min = 0.015;
    double sparsity_max = 0.03;
    double peak = 256.0;
    /// Scale so that max(H f) = peak; otherwise max(f) = peak.
    bool peak_on_blurred = true;

    void validate() const {
        if (n_trials == 0) throw Error("TrialSpec: n_trials must be positive");
        if (!(sparsity_min > 0.0 && sparsity_min <= sparsity_max && sparsity_max <= 0.1)) {
            throw Error("TrialSpec: sparsity fractions must satisfy 0 < min <= max <= 0.1");
        }
        if (!(peak > 0.0)) throw Error("TrialSpec: peak must be positive");
    }
};

struct SparseSignal {
    CoeffStack coefficients;
    Image signal;
};

/// Random sparse nonnegative coefficients on a Haar dictionary, synthesized
/// and rescaled to the requested peak.  `signal == Phi{coefficients}` exactly.
inline SparseSignal synth_sparse_signal(const TrialSpec& spec, const ForwardModel& model, Rng& rng) {
    spec.validate();
    if (!std::holds_alternative<HaarDictionary>(model.dictionary())) {
        throw Error("synth_sparse_signal: requires a Haar dictionary");
    }
    const std::size_t dim = layout_size(model.layout());
    const double fraction = rng.uniform(spec.sparsity_min, spec.sparsity_max);
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(dim)));
    if (k == 0) throw Error("synth_sparse_signal: empty support");

    std::vector<std::size_t> index(dim);
    for (std::size_t i = 0; i < dim; ++i) index[i] = i;
    std::vector<double> c(dim, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(dim - i));
        std::swap(index[i], index[j]);
        c[index[i]] = rng.uniform_open_zero();
    }

    CoeffStack coeffs(model.layout(), std::move(c));
    const Image raw = model.synthesize(coeffs);
    const Image reference = spec.peak_on_blurred ? conv_forward(model.kernel(), raw) : raw;
    const double top = *std::max_element(reference.values().begin(), reference.values().end());
    coeffs = scalar_mul(coeffs, spec.peak / top);
    Image signal = model.synthesize(coeffs);
    return {std::move(coeffs), std::move(signal)};
}

// ------------------------------------------------------------------ phantom

/// Piecewise-smooth head-like test image with values in [0, 1], rendered
/// with area-averaged (supersampled) pixels.
inline Image make_phantom(std::size_t rows, std::size_t cols) {
    if (rows < 8 || cols < 8) throw ShapeError("make_phantom: image too small");
    struct Ellipse {
        double x0, y0, ax, ay, angle_deg;
        bool contains(double x, double y) const {
            const double t = angle_deg * std::numbers::pi / 180.0;
            const double dx = x - x0, dy = y - y0;
            const double u = (dx * std::cos(t) + dy * std::sin(t)) / ax;
            const double w = (-dx * std::sin(t) + dy * std::cos(t)) / ay;
            return u * u + w * w <= 1.0;
        }
    };
    const Ellipse skull{0.0, 0.0, 0.44, 0.37, 0.0};
    const Ellipse brain{0.0, 0.0, 0.40, 0.33, 0.0};
    const Ellipse left_ventricle{-0.09, -0.03, 0.05, 0.15, 15.0};
    const Ellipse right_ventricle{0.09, -0.03, 0.05, 0.15, -15.0};
    const Ellipse lesion{0.16, 0.17, 0.07, 0.06, 30.0};
    const Ellipse spots[] = {{-0.12, 0.24, 0.025, 0.025, 0.0}, {-0.04, 0.24, 0.02, 0.02, 0.0},
                             {0.03, 0.24, 0.015, 0.015, 0.0}};

    auto value_at = [&](double x, double y) {
        double v = 0.0;
        if (skull.contains(x, y)) v = 0.3;
        if (brain.contains(x, y)) {
            // Smooth shading across the tissue plus a soft Gaussian blob.
            v = 0.45 + 0.15 * x - 0.1 * y + 0.1 * (1.0 - (x * x + y * y) / 0.16);
            v += 0.25 * std::exp(-((x + 0.17) * (x + 0.17) + (y - 0.12) * (y - 0.12)) / (2.0 * 0.05 * 0.05));
        }
        if (left_ventricle.contains(x, y) || right_ventricle.contains(x, y)) v = 0.12;
        if (lesion.contains(x, y)) v = 0.95;
        for (const auto& s : spots)
            if (s.contains(x, y)) v = 0.85;
        return std::max(v, 0.0);
    };

    // Each pixel is the area average of kSub x kSub point samples.
    constexpr int kSub = 4;
    std::vector<double> data(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int a = 0; a < kSub; ++a) {
                for (int b = 0; b < kSub; ++b) {
                    const double y = (static_cast<double>(r) + (a + 0.5) / kSub) / static_cast<double>(rows) - 0.5;
                    const double x = (static_cast<double>(c) + (b + 0.5) / kSub) / static_cast<double>(cols) - 0.5;
                    acc += value_at(x, y);
                }
            }
            data[r * cols + c] = acc / (kSub * kSub);
        }
    }
    return Image(rows, cols, std::move(data));
}

}  // namespace pdeconv
