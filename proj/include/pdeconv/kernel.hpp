#pragma once

// Blur operator H: circular convolution with a nonnegative mask, and its
// adjoint H* (convolution with the spatially reversed mask).

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "pdeconv/core.hpp"

namespace pdeconv {

/// Nonnegative (2*half_rows+1) x (2*half_cols+1) mask centred at tap (0, 0).
/// A 1-D kernel has half_cols == 0 and acts along the rows of an N x 1 image.
class ConvKernel {
public:
    ConvKernel() = default;

    /// `taps` is row-major; tap (i, j) for i in [-hr, hr], j in [-hc, hc] is
    /// stored at ((i + hr) * (2hc + 1) + (j + hc)).
    ConvKernel(std::size_t half_rows, std::size_t half_cols, std::vector<double> taps, bool normalized)
        : half_rows_(half_rows), half_cols_(half_cols), taps_(std::move(taps)), normalized_(normalized) {
        if (taps_.size() != height() * width()) throw ShapeError("ConvKernel: tap count does not match half widths");
        detail::require_nonnegative(taps_, "ConvKernel");
        if (normalized_ && std::abs(tap_sum() - 1.0) > 1e-12) {
            throw Error("ConvKernel: normalized kernel taps must sum to 1");
        }
    }

    /// Builds a kernel from an odd-sized tap image; normalizes it when asked.
    static ConvKernel from_image(const Image& taps, bool normalize) {
        if (taps.rows() % 2 == 0 || taps.cols() % 2 == 0) throw ShapeError("ConvKernel: kernel dimensions must be odd");
        std::vector<double> t = taps.vector();
        if (normalize) {
            double s = 0.0;
            for (double x : t) s += x;
            if (!(s > 0.0)) throw Error("ConvKernel: cannot normalize an all-zero kernel");
            for (double& x : t) x /= s;
        }
        return ConvKernel(taps.rows() / 2, taps.cols() / 2, std::move(t), normalize);
    }

    static ConvKernel delta() { return ConvKernel(0, 0, {1.0}, true); }

    std::size_t half_rows() const noexcept { return half_rows_; }
    std::size_t half_cols() const noexcept { return half_cols_; }
    std::size_t height() const noexcept { return 2 * half_rows_ + 1; }
    std::size_t width() const noexcept { return 2 * half_cols_ + 1; }
    bool normalized() const noexcept { return normalized_; }

    std::span<const double> taps() const noexcept { return taps_; }

    double at(long i, long j) const noexcept {
        return taps_[static_cast<std::size_t>(i + static_cast<long>(half_rows_)) * width() +
                     static_cast<std::size_t>(j + static_cast<long>(half_cols_))];
    }

    double tap_sum() const noexcept {
        double s = 0.0;
        for (double x : taps_) s += x;
        return s;
    }

    ConvKernel reversed() const {
        std::vector<double> r(taps_.rbegin(), taps_.rend());
        ConvKernel k;
        k.half_rows_ = half_rows_;
        k.half_cols_ = half_cols_;
        k.taps_ = std::move(r);
        k.normalized_ = normalized_;
        return k;
    }

    Image as_image() const { return Image(height(), width(), taps_); }

private:
    std::size_t half_rows_ = 0;
    std::size_t half_cols_ = 0;
    std::vector<double> taps_{1.0};
    bool normalized_ = true;
};

namespace detail {

inline std::size_t wrap_index(long i, std::size_t n) noexcept {
    const long m = static_cast<long>(n);
    long r = i % m;
    return static_cast<std::size_t>(r < 0 ? r + m : r);
}

/// out = h (*) x with circular boundaries; with `adjoint` the mask is applied
/// reversed (correlation).  Summation order is fixed: kernel row, kernel
/// column, then image column.
inline void circular_convolve(std::span<const double> x, std::size_t rows, std::size_t cols, const ConvKernel& h,
                              bool adjoint, std::span<double> out) {
    const long hr = static_cast<long>(h.half_rows());
    const long hc = static_cast<long>(h.half_cols());
    const std::size_t pw = cols + 2 * h.half_cols();
    const std::size_t ph = rows + 2 * h.half_rows();
    std::vector<double> padded(ph * pw);
    for (std::size_t a = 0; a < ph; ++a) {
        const std::size_t src_r = wrap_index(static_cast<long>(a) - hr, rows);
        for (std::size_t b = 0; b < pw; ++b) {
            padded[a * pw + b] = x[src_r * cols + wrap_index(static_cast<long>(b) - hc, cols)];
        }
    }
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t n = 0; n < rows; ++n) {
        double* yrow = out.data() + n * cols;
        for (long i = -hr; i <= hr; ++i) {
            const long src_row = static_cast<long>(n) + (adjoint ? i : -i) + hr;
            const double* prow = padded.data() + static_cast<std::size_t>(src_row) * pw;
            for (long j = -hc; j <= hc; ++j) {
                const double w = h.at(i, j);
                if (w == 0.0) continue;
                const double* p = prow + (adjoint ? j : -j) + hc;
                for (std::size_t m = 0; m < cols; ++m) yrow[m] += w * p[m];
            }
        }
    }
}

inline void check_kernel_fits(const ConvKernel& h, std::size_t rows, std::size_t cols) {
    if (h.height() > rows || h.width() > cols) throw ShapeError("convolution: kernel larger than image");
}

}  // namespace detail

inline Image conv_forward(const ConvKernel& h, const Image& x) {
    detail::check_kernel_fits(h, x.rows(), x.cols());
    std::vector<double> out(x.size());
    detail::circular_convolve(x.values(), x.rows(), x.cols(), h, false, out);
    return rebuild_like(x, std::move(out));
}

inline Image conv_adjoint(const ConvKernel& h, const Image& y) {
    detail::check_kernel_fits(h, y.rows(), y.cols());
    std::vector<double> out(y.size());
    detail::circular_convolve(y.values(), y.rows(), y.cols(), h, true, out);
    return rebuild_like(y, std::move(out));
}

/// Gaussian blur whose -3 dB point sits at `cutoff` rad/sample:
/// sigma = sqrt(ln 2) / cutoff, truncated at ceil(4 sigma) and renormalized.
inline double gaussian_sigma_for_cutoff(double cutoff) {
    if (!(cutoff > 0.0 && cutoff < std::numbers::pi)) throw Error("gaussian kernel: cutoff must lie in (0, pi)");
    return std::sqrt(std::numbers::ln2) / cutoff;
}

inline ConvKernel make_gaussian_kernel_1d(double cutoff) {
    const double sigma = gaussian_sigma_for_cutoff(cutoff);
    const auto half = static_cast<std::size_t>(std::ceil(4.0 * sigma));
    std::vector<double> taps(2 * half + 1);
    for (std::size_t k = 0; k < taps.size(); ++k) {
        const double d = static_cast<double>(k) - static_cast<double>(half);
        taps[k] = std::exp(-d * d / (2.0 * sigma * sigma));
    }
    // Sum symmetrically from the tails inward so that the normalized taps stay exactly mirrored.
    double sum = taps[half];
    for (std::size_t k = half; k-- > 0;) sum += taps[k] + taps[2 * half - k];
    for (double& t : taps) t /= sum;
    return ConvKernel(half, 0, std::move(taps), true);
}

/// h[i, j] = 1 / (i^2 + j^2 + 1) on i, j = -7..7.
inline Image inverse_quadratic_taps_2d() {
    constexpr long half = 7;
    std::vector<double> taps;
    taps.reserve(15 * 15);
    for (long i = -half; i <= half; ++i)
        for (long j = -half; j <= half; ++j) taps.push_back(1.0 / static_cast<double>(i * i + j * j + 1));
    return Image(15, 15, std::move(taps));
}

inline ConvKernel make_inverse_quadratic_kernel_2d() { return ConvKernel::from_image(inverse_quadratic_taps_2d(), true); }

}  // namespace pdeconv
