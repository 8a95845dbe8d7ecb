#pragma once

#include "pdeconv/core.hpp"
#include "pdeconv/dictionary.hpp"
#include "pdeconv/kernel.hpp"

namespace pdeconv {

/// A = H o Phi, with the column sums v = A*{1} computed once.
class ForwardModel {
public:
    ForwardModel(ConvKernel kernel, Dictionary dictionary)
        : kernel_(std::move(kernel)), dictionary_(std::move(dictionary)) {
        const auto [rows, cols] = pdeconv::image_shape(dictionary_);
        detail::check_kernel_fits(kernel_, rows, cols);
        v_ = adjoint(Image::ones(rows, cols));
    }

    const ConvKernel& kernel() const noexcept { return kernel_; }
    const Dictionary& dictionary() const noexcept { return dictionary_; }
    const CoeffStack& v() const noexcept { return v_; }
    CoeffLayout layout() const { return coeff_layout(dictionary_); }
    std::pair<std::size_t, std::size_t> image_shape() const { return pdeconv::image_shape(dictionary_); }

    Image synthesize(const CoeffStack& c) const { return pdeconv::synthesize(dictionary_, c); }

    Image forward(const CoeffStack& c) const { return conv_forward(kernel_, synthesize(c)); }

    /// Phi* o H*.  For a symmetric mask this equals Phi* o H.
    CoeffStack adjoint(const Image& y) const { return dictionary_adjoint(dictionary_, conv_adjoint(kernel_, y)); }

private:
    ConvKernel kernel_;
    Dictionary dictionary_;
    CoeffStack v_;
};

inline Image model_forward(const ForwardModel& m, const CoeffStack& c) { return m.forward(c); }
inline CoeffStack model_adjoint(const ForwardModel& m, const Image& y) { return m.adjoint(y); }

}  // namespace pdeconv
