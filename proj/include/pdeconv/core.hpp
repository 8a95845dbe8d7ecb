#pragma once

// Array types and elementwise algebra on the nonnegative cone.
//
// Every image and coefficient array in this library is a dense, row-major
// block of doubles.  Image and CoeffStack validate nonnegativity when they are
// built from caller data; the arithmetic below preserves it.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace pdeconv {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Floor used when a positive numerator meets a zero denominator.
inline constexpr double kDefaultEpsDiv = 1e-12;

/// Division with the 0/0 -> 0 and x/0 -> x/eps policy.
inline double safe_div(double num, double den, double eps_div = kDefaultEpsDiv) noexcept {
    if (den > 0.0) return num / den;
    if (num == 0.0) return 0.0;
    return num / eps_div;
}

namespace detail {

inline void require_nonnegative(std::span<const double> values, const char* what) {
    for (double x : values) {
        if (!(x >= 0.0) || !std::isfinite(x)) {
            throw Error(std::string(what) + ": entries must be finite and nonnegative");
        }
    }
}

}  // namespace detail

/// Nonnegative N x M intensity array.  1-D signals are N x 1.
class Image {
public:
    Image() = default;

    Image(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {
        if (rows == 0 || cols == 0) throw ShapeError("Image: dimensions must be positive");
        if (!(fill >= 0.0)) throw Error("Image: fill value must be nonnegative");
    }

    Image(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (rows == 0 || cols == 0) throw ShapeError("Image: dimensions must be positive");
        if (data_.size() != rows * cols) throw ShapeError("Image: rows*cols does not match data length");
        detail::require_nonnegative(data_, "Image");
    }

    static Image ones(std::size_t rows, std::size_t cols) { return Image(rows, cols, 1.0); }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& vector() const noexcept { return data_; }

    bool same_shape(const Image& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    // Used by the algebra below, which is known to keep entries nonnegative.
    struct Trusted {};
    Image(Trusted, std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {}

    template <typename T>
    friend T rebuild_like(const T& shape, std::vector<double> data);

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Coefficient layouts, one per dictionary family.
struct FlatLayout {
    std::size_t length = 0;
    friend bool operator==(const FlatLayout&, const FlatLayout&) = default;
};

struct PlanesLayout {
    std::size_t planes = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    friend bool operator==(const PlanesLayout&, const PlanesLayout&) = default;
};

struct PatchesLayout {
    std::size_t num_patches = 0;
    std::size_t atoms_per_patch = 0;
    friend bool operator==(const PatchesLayout&, const PatchesLayout&) = default;
};

using CoeffLayout = std::variant<FlatLayout, PlanesLayout, PatchesLayout>;

inline std::size_t layout_size(const CoeffLayout& layout) noexcept {
    return std::visit(
        [](const auto& l) -> std::size_t {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, FlatLayout>) return l.length;
            else if constexpr (std::is_same_v<L, PlanesLayout>) return l.planes * l.rows * l.cols;
            else return l.num_patches * l.atoms_per_patch;
        },
        layout);
}

/// Nonnegative representation coefficients.
class CoeffStack {
public:
    CoeffStack() = default;

    CoeffStack(CoeffLayout layout, double fill = 0.0)
        : layout_(layout), data_(layout_size(layout), fill) {
        if (data_.empty()) throw ShapeError("CoeffStack: empty layout");
        if (!(fill >= 0.0)) throw Error("CoeffStack: fill value must be nonnegative");
    }

    CoeffStack(CoeffLayout layout, std::vector<double> data)
        : layout_(layout), data_(std::move(data)) {
        if (data_.size() != layout_size(layout_)) throw ShapeError("CoeffStack: layout does not match data length");
        if (data_.empty()) throw ShapeError("CoeffStack: empty layout");
        detail::require_nonnegative(data_, "CoeffStack");
    }

    const CoeffLayout& layout() const noexcept { return layout_; }
    std::size_t size() const noexcept { return data_.size(); }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& vector() const noexcept { return data_; }

    bool same_shape(const CoeffStack& other) const noexcept { return layout_ == other.layout_; }

    friend bool operator==(const CoeffStack&, const CoeffStack&) = default;

private:
    struct Trusted {};
    CoeffStack(Trusted, CoeffLayout layout, std::vector<double> data)
        : layout_(layout), data_(std::move(data)) {}

    template <typename T>
    friend T rebuild_like(const T& shape, std::vector<double> data);

    CoeffLayout layout_ = FlatLayout{};
    std::vector<double> data_;
};

/// Builds an array with the shape of `shape` around data the caller has
/// already established to be nonnegative.  Library-internal.
template <typename T>
T rebuild_like(const T& shape, std::vector<double> data) {
    if constexpr (std::is_same_v<T, Image>) {
        return Image(Image::Trusted{}, shape.rows_, shape.cols_, std::move(data));
    } else {
        return CoeffStack(CoeffStack::Trusted{}, shape.layout_, std::move(data));
    }
}

template <typename T>
concept NonnegArray = std::is_same_v<T, Image> || std::is_same_v<T, CoeffStack>;

namespace detail {

template <NonnegArray T>
void require_same_shape(const T& a, const T& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": shape mismatch");
}

}  // namespace detail

template <NonnegArray T>
T add(const T& a, const T& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return rebuild_like(a, std::move(out));
}

template <NonnegArray T>
T mul(const T& a, const T& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return rebuild_like(a, std::move(out));
}

template <NonnegArray T>
T div(const T& a, const T& b, double eps_div = kDefaultEpsDiv) {
    detail::require_same_shape(a, b, "div");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = safe_div(a[i], b[i], eps_div);
    return rebuild_like(a, std::move(out));
}

template <NonnegArray T>
T scalar_mul(const T& a, double s) {
    if (!(s >= 0.0)) throw Error("scalar_mul: scalar must be nonnegative");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    return rebuild_like(a, std::move(out));
}

/// Elementwise natural log.  The result is signed, so it is returned as a
/// plain vector.  A zero entry is an error unless `mask` holds a zero at the
/// same position, in which case the entry is 0 (the 0*log 0 = 0 convention).
template <NonnegArray T>
std::vector<double> log(const T& a, const T* mask = nullptr) {
    if (mask) detail::require_same_shape(a, *mask, "log");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (a[i] > 0.0) {
            out[i] = std::log(a[i]);
        } else if (mask && (*mask)[i] == 0.0) {
            out[i] = 0.0;
        } else {
            throw Error("log: zero entry without a masking zero weight");
        }
    }
    return out;
}

inline double inner(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("inner: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

template <NonnegArray T>
double inner(const T& a, const T& b) {
    detail::require_same_shape(a, b, "inner");
    return inner(a.values(), b.values());
}

inline double l1_norm(const CoeffStack& c) {
    return std::accumulate(c.values().begin(), c.values().end(), 0.0);
}

inline double weighted_l1(const CoeffStack& c, const CoeffStack& w) {
    detail::require_same_shape(c, w, "weighted_l1");
    return inner(w.values(), c.values());
}

inline double l2_norm(std::span<const double> a) {
    double s = 0.0;
    for (double x : a) s += x * x;
    return std::sqrt(s);
}

}  // namespace pdeconv
