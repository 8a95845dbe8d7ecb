#pragma once

// Synthesis dictionaries Phi with nonnegative atoms, and their adjoints.
//
//  * HaarDictionary   1-D unit-norm boxes of width 2^j at every circular shift.
//  * SplineDictionary 2-D cubic B-spline translates B_j = b_j b_j^T, j < J.
//  * PatchDictionary  learned nonnegative patch atoms tiled with overlap.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "pdeconv/core.hpp"
#include "pdeconv/kernel.hpp"
#include "pdeconv/rng.hpp"

namespace pdeconv {

// ---------------------------------------------------------------- Haar boxes

class HaarDictionary {
public:
    HaarDictionary(std::size_t length, std::vector<int> levels) : length_(length), levels_(std::move(levels)) {
        if (length_ < 2) throw Error("HaarDictionary: signal length must be at least 2");
        if (levels_.empty()) throw Error("HaarDictionary: at least one level is required");
        const int max_level = static_cast<int>(std::floor(std::log2(static_cast<double>(length_)))) - 1;
        for (int j : levels_) {
            if (j < 0 || j > max_level) {
                throw Error("HaarDictionary: level " + std::to_string(j) + " outside [0, " +
                            std::to_string(max_level) + "]");
            }
        }
    }

    /// Levels {2, 3, 4, 5}.
    static HaarDictionary standard(std::size_t length) { return HaarDictionary(length, {2, 3, 4, 5}); }

    std::size_t length() const noexcept { return length_; }
    const std::vector<int>& levels() const noexcept { return levels_; }
    CoeffLayout layout() const { return FlatLayout{length_ * levels_.size()}; }
    std::size_t image_rows() const noexcept { return length_; }
    std::size_t image_cols() const noexcept { return 1; }

    /// Atom phi_{k,j}: 2^j samples of 2^{-j/2} starting at k (mod N).
    /// Coefficient index = level_slot * N + k.
    Image synthesize(const CoeffStack& c) const {
        check_layout(c);
        std::vector<double> f(length_, 0.0);
        const auto cv = c.values();
        for (std::size_t s = 0; s < levels_.size(); ++s) {
            const std::size_t width = std::size_t{1} << levels_[s];
            const double amp = std::pow(2.0, -0.5 * levels_[s]);
            const double* plane = cv.data() + s * length_;
            for (std::size_t n = 0; n < length_; ++n) {
                double acc = 0.0;
                for (std::size_t d = 0; d < width; ++d) acc += plane[(n + length_ - d % length_) % length_];
                f[n] += amp * acc;
            }
        }
        return Image(length_, 1, std::move(f));
    }

    CoeffStack adjoint(const Image& f) const {
        if (f.rows() != length_ || f.cols() != 1) throw ShapeError("HaarDictionary: image must be N x 1");
        std::vector<double> c(length_ * levels_.size());
        const auto fv = f.values();
        for (std::size_t s = 0; s < levels_.size(); ++s) {
            const std::size_t width = std::size_t{1} << levels_[s];
            const double amp = std::pow(2.0, -0.5 * levels_[s]);
            for (std::size_t k = 0; k < length_; ++k) {
                double acc = 0.0;
                for (std::size_t d = 0; d < width; ++d) acc += fv[(k + d) % length_];
                c[s * length_ + k] = amp * acc;
            }
        }
        return CoeffStack(layout(), std::move(c));
    }

private:
    void check_layout(const CoeffStack& c) const {
        if (!(c.layout() == layout())) throw ShapeError("HaarDictionary: coefficient layout mismatch");
    }

    std::size_t length_;
    std::vector<int> levels_;
};

// ----------------------------------------------------------- cubic B-splines

/// b_j before normalization: 2^{-3j} (1_{2^j} * 1_{2^j} * 1_{2^j} * 1_{2^j}) * [1 4 1]/6.
/// Length 2^{j+2} - 1, tap sum 2^j.
inline std::vector<double> spline_generator_raw(int j) {
    if (j < 0 || j > 20) throw Error("spline_generator_raw: level out of range");
    const std::size_t width = std::size_t{1} << j;
    auto convolve = [](const std::vector<double>& a, const std::vector<double>& b) {
        std::vector<double> out(a.size() + b.size() - 1, 0.0);
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t k = 0; k < b.size(); ++k) out[i + k] += a[i] * b[k];
        return out;
    };
    const std::vector<double> box(width, 1.0);
    std::vector<double> b = box;
    for (int r = 0; r < 3; ++r) b = convolve(b, box);
    b = convolve(b, {1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0});
    const double scale = std::pow(2.0, -3.0 * j);
    for (double& x : b) x *= scale;
    return b;
}

/// Unit l2-norm generators b_0 .. b_{J-1}.
inline std::vector<std::vector<double>> spline_generators(int levels) {
    if (levels < 1) throw Error("spline_generators: J must be at least 1");
    std::vector<std::vector<double>> out;
    out.reserve(static_cast<std::size_t>(levels));
    for (int j = 0; j < levels; ++j) {
        auto b = spline_generator_raw(j);
        const double n = l2_norm(b);
        for (double& x : b) x /= n;
        out.push_back(std::move(b));
    }
    return out;
}

class SplineDictionary {
public:
    SplineDictionary(std::size_t rows, std::size_t cols, int levels)
        : rows_(rows), cols_(cols), generators_(spline_generators(levels)) {
        if (rows == 0 || cols == 0) throw ShapeError("SplineDictionary: image dimensions must be positive");
        for (const auto& b : generators_) {
            const std::size_t half = b.size() / 2;
            row_pass_.emplace_back(0, half, b, false);
            col_pass_.emplace_back(half, 0, b, false);
        }
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    int levels() const noexcept { return static_cast<int>(generators_.size()); }
    const std::vector<std::vector<double>>& generators() const noexcept { return generators_; }
    CoeffLayout layout() const { return PlanesLayout{generators_.size(), rows_, cols_}; }
    std::size_t image_rows() const noexcept { return rows_; }
    std::size_t image_cols() const noexcept { return cols_; }

    /// f = sum_j c_j (*) B_j, circular.
    Image synthesize(const CoeffStack& c) const {
        if (!(c.layout() == layout())) throw ShapeError("SplineDictionary: expected J planes of N x M");
        const std::size_t plane = rows_ * cols_;
        std::vector<double> f(plane, 0.0), tmp(plane), out(plane);
        for (std::size_t j = 0; j < generators_.size(); ++j) {
            separable(c.values().subspan(j * plane, plane), j, false, tmp, out);
            for (std::size_t i = 0; i < plane; ++i) f[i] += out[i];
        }
        return Image(rows_, cols_, std::move(f));
    }

    /// c_j = f correlated with B_j (B_j is symmetric, so this is also f (*) B_j).
    CoeffStack adjoint(const Image& f) const {
        if (f.rows() != rows_ || f.cols() != cols_) throw ShapeError("SplineDictionary: image shape mismatch");
        const std::size_t plane = rows_ * cols_;
        std::vector<double> c(plane * generators_.size()), tmp(plane);
        for (std::size_t j = 0; j < generators_.size(); ++j) {
            separable(f.values(), j, true, tmp, std::span<double>(c).subspan(j * plane, plane));
        }
        return CoeffStack(layout(), std::move(c));
    }

private:
    void separable(std::span<const double> in, std::size_t j, bool adjoint, std::span<double> tmp,
                   std::span<double> out) const {
        detail::circular_convolve(in, rows_, cols_, row_pass_[j], adjoint, tmp);
        detail::circular_convolve(tmp, rows_, cols_, col_pass_[j], adjoint, out);
    }

    std::size_t rows_;
    std::size_t cols_;
    std::vector<std::vector<double>> generators_;
    std::vector<ConvKernel> row_pass_;
    std::vector<ConvKernel> col_pass_;
};

// ------------------------------------------------------------- patch atoms

/// A set of nonnegative patch atoms, as stored in an atom file.
struct PatchAtoms {
    std::size_t patch_rows = 0;
    std::size_t patch_cols = 0;
    std::size_t stride = 0;
    /// num_atoms x (patch_rows * patch_cols), row-major per atom.
    std::vector<std::vector<double>> atoms;

    std::size_t num_atoms() const noexcept { return atoms.size(); }
    std::size_t patch_size() const noexcept { return patch_rows * patch_cols; }
    /// Atoms per patch pixel (512 atoms on 16x16 patches -> 2).
    double overcompleteness() const noexcept {
        return static_cast<double>(num_atoms()) / static_cast<double>(patch_size());
    }

    void validate() const {
        if (patch_rows == 0 || patch_cols == 0) throw Error("PatchAtoms: patch dimensions must be positive");
        if (stride == 0 || stride > patch_rows || stride > patch_cols) {
            throw Error("PatchAtoms: stride must lie in [1, patch size]");
        }
        if (atoms.empty()) throw Error("PatchAtoms: no atoms");
        for (const auto& a : atoms) {
            if (a.size() != patch_size()) throw ShapeError("PatchAtoms: atom length does not match patch size");
            detail::require_nonnegative(a, "PatchAtoms");
            if (std::all_of(a.begin(), a.end(), [](double x) { return x == 0.0; })) {
                throw Error("PatchAtoms: all-zero atom");
            }
        }
    }
};

/// Atom file: `patch_rows patch_cols num_atoms stride`, then one atom per line.
inline PatchAtoms patch_load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("patch_load: cannot open " + path.string());
    PatchAtoms out;
    std::size_t count = 0;
    if (!(in >> out.patch_rows >> out.patch_cols >> count >> out.stride)) {
        throw Error("patch_load: malformed header in " + path.string());
    }
    out.atoms.assign(count, std::vector<double>(out.patch_rows * out.patch_cols));
    for (auto& atom : out.atoms) {
        for (double& x : atom) {
            if (!(in >> x)) throw Error("patch_load: truncated atom data in " + path.string());
            if (x < 0.0) throw Error("patch_load: negative atom value in " + path.string());
        }
    }
    std::string extra;
    if (in >> extra) throw Error("patch_load: trailing data in " + path.string());
    out.validate();
    return out;
}

inline void patch_save(const std::filesystem::path& path, const PatchAtoms& atoms) {
    atoms.validate();
    std::ofstream out(path);
    if (!out) throw Error("patch_save: cannot open " + path.string());
    out.precision(17);
    out << atoms.patch_rows << ' ' << atoms.patch_cols << ' ' << atoms.num_atoms() << ' ' << atoms.stride << '\n';
    for (const auto& a : atoms.atoms) {
        for (std::size_t i = 0; i < a.size(); ++i) out << (i ? " " : "") << a[i];
        out << '\n';
    }
}

/// Smooth nonnegative stand-in atoms (anisotropic Gaussian bumps on a small
/// pedestal, unit l2 norm) for runs without a trained dictionary.
inline PatchAtoms make_synthetic_patch_atoms(std::size_t patch_rows, std::size_t patch_cols, std::size_t num_atoms,
                                             std::size_t stride, std::uint64_t seed) {
    Rng rng(hash64(seed, 0x70a7c4));
    PatchAtoms out{patch_rows, patch_cols, stride, {}};
    out.atoms.reserve(num_atoms);
    for (std::size_t a = 0; a < num_atoms; ++a) {
        const double r0 = rng.uniform(0.0, static_cast<double>(patch_rows - 1));
        const double c0 = rng.uniform(0.0, static_cast<double>(patch_cols - 1));
        const double sr = rng.uniform(0.75, 0.5 * static_cast<double>(patch_rows));
        const double sc = rng.uniform(0.75, 0.5 * static_cast<double>(patch_cols));
        const double pedestal = 0.05 * rng.uniform();
        std::vector<double> atom(patch_rows * patch_cols);
        for (std::size_t r = 0; r < patch_rows; ++r) {
            for (std::size_t c = 0; c < patch_cols; ++c) {
                const double dr = (static_cast<double>(r) - r0) / sr;
                const double dc = (static_cast<double>(c) - c0) / sc;
                atom[r * patch_cols + c] = pedestal + std::exp(-0.5 * (dr * dr + dc * dc));
            }
        }
        const double n = l2_norm(atom);
        for (double& x : atom) x /= n;
        out.atoms.push_back(std::move(atom));
    }
    out.validate();
    return out;
}

/// Patch atoms tiled circularly over an N x M image at multiples of the stride.
/// Synthesis sums the overlapping patch reconstructions and divides each pixel
/// by the number of patches covering it.
class PatchDictionary {
public:
    PatchDictionary(PatchAtoms atoms, std::size_t rows, std::size_t cols)
        : atoms_(std::move(atoms)), rows_(rows), cols_(cols) {
        atoms_.validate();
        if (atoms_.patch_rows > rows_ || atoms_.patch_cols > cols_) {
            throw ShapeError("PatchDictionary: patch larger than image");
        }
        if (rows_ % atoms_.stride != 0 || cols_ % atoms_.stride != 0) {
            throw ShapeError("PatchDictionary: stride must divide the image dimensions");
        }
        grid_rows_ = rows_ / atoms_.stride;
        grid_cols_ = cols_ / atoms_.stride;
        inv_count_.assign(rows_ * cols_, 0.0);
        for (std::size_t p = 0; p < num_patches(); ++p) {
            for_each_pixel(p, [&](std::size_t, std::size_t pix) { inv_count_[pix] += 1.0; });
        }
        for (double& x : inv_count_) x = 1.0 / x;
    }

    const PatchAtoms& atoms() const noexcept { return atoms_; }
    std::size_t num_patches() const noexcept { return grid_rows_ * grid_cols_; }
    CoeffLayout layout() const { return PatchesLayout{num_patches(), atoms_.num_atoms()}; }
    std::size_t image_rows() const noexcept { return rows_; }
    std::size_t image_cols() const noexcept { return cols_; }

    Image synthesize(const CoeffStack& c) const {
        if (!(c.layout() == layout())) throw ShapeError("PatchDictionary: coefficient layout mismatch");
        const std::size_t na = atoms_.num_atoms();
        std::vector<double> f(rows_ * cols_, 0.0), patch(atoms_.patch_size());
        for (std::size_t p = 0; p < num_patches(); ++p) {
            std::fill(patch.begin(), patch.end(), 0.0);
            for (std::size_t a = 0; a < na; ++a) {
                const double w = c[p * na + a];
                if (w == 0.0) continue;
                const auto& atom = atoms_.atoms[a];
                for (std::size_t u = 0; u < patch.size(); ++u) patch[u] += w * atom[u];
            }
            for_each_pixel(p, [&](std::size_t u, std::size_t pix) { f[pix] += patch[u]; });
        }
        for (std::size_t i = 0; i < f.size(); ++i) f[i] *= inv_count_[i];
        return Image(rows_, cols_, std::move(f));
    }

    CoeffStack adjoint(const Image& f) const {
        if (f.rows() != rows_ || f.cols() != cols_) throw ShapeError("PatchDictionary: image shape mismatch");
        const std::size_t na = atoms_.num_atoms();
        std::vector<double> c(num_patches() * na), patch(atoms_.patch_size());
        for (std::size_t p = 0; p < num_patches(); ++p) {
            for_each_pixel(p, [&](std::size_t u, std::size_t pix) { patch[u] = f[pix] * inv_count_[pix]; });
            for (std::size_t a = 0; a < na; ++a) c[p * na + a] = inner(atoms_.atoms[a], patch);
        }
        return CoeffStack(layout(), std::move(c));
    }

private:
    template <typename Fn>
    void for_each_pixel(std::size_t p, Fn&& fn) const {
        const std::size_t r0 = (p / grid_cols_) * atoms_.stride;
        const std::size_t c0 = (p % grid_cols_) * atoms_.stride;
        for (std::size_t u = 0; u < atoms_.patch_rows; ++u) {
            const std::size_t r = (r0 + u) % rows_;
            for (std::size_t v = 0; v < atoms_.patch_cols; ++v) {
                fn(u * atoms_.patch_cols + v, r * cols_ + (c0 + v) % cols_);
            }
        }
    }

    PatchAtoms atoms_;
    std::size_t rows_;
    std::size_t cols_;
    std::size_t grid_rows_ = 0;
    std::size_t grid_cols_ = 0;
    std::vector<double> inv_count_;
};

// ------------------------------------------------------------------ variant

using Dictionary = std::variant<HaarDictionary, SplineDictionary, PatchDictionary>;

inline Image synthesize(const Dictionary& d, const CoeffStack& c) {
    return std::visit([&](const auto& dict) { return dict.synthesize(c); }, d);
}

inline CoeffStack dictionary_adjoint(const Dictionary& d, const Image& f) {
    return std::visit([&](const auto& dict) { return dict.adjoint(f); }, d);
}

inline CoeffLayout coeff_layout(const Dictionary& d) {
    return std::visit([](const auto& dict) { return dict.layout(); }, d);
}

inline std::pair<std::size_t, std::size_t> image_shape(const Dictionary& d) {
    return std::visit([](const auto& dict) { return std::pair{dict.image_rows(), dict.image_cols()}; }, d);
}

inline std::string dictionary_kind(const Dictionary& d) {
    switch (d.index()) {
        case 0: return "haar1d";
        case 1: return "spline2d";
        default: return "patch";
    }
}

}  // namespace pdeconv
