#pragma once

// Column-orthogonal phase-retrieval forward operators (A^H A = I):
//   OSF: zero-pad the image into the top-left of an H x W grid, unitary 2-D DFT.
//   CDP: K unit-modulus masks, each followed by a unitary 2-D DFT, scaled 1/sqrt(K).
// Multichannel images are measured channel by channel; the outputs of the
// channels are concatenated.

#include "ecpr/core.hpp"
#include "ecpr/fft.hpp"

#include <algorithm>
#include <concepts>
#include <memory>

namespace ecpr {

class OsfOperator {
public:
    OsfOperator(Shape image, std::size_t padded_height, std::size_t padded_width)
        : image_(image)
    {
        if (image.height == 0 || image.width == 0)
            throw ArgumentError("OSF image dimensions must be positive");
        if (padded_height < image.height || padded_width < image.width)
            throw ArgumentError("OSF padded grid must be at least the image size");
        fft_ = std::make_shared<const Fft2d>(padded_height, padded_width);
    }

    /// The usual 4x oversampling: H = 2h, W = 2w.
    static OsfOperator oversampled(Shape image, std::size_t factor = 2)
    {
        return OsfOperator(image, factor * image.height, factor * image.width);
    }

    const Shape& image_shape() const { return image_; }
    std::size_t padded_height() const { return fft_->rows(); }
    std::size_t padded_width() const { return fft_->cols(); }
    std::size_t image_size() const { return image_.size(); }
    std::size_t measurements_per_channel() const { return fft_->size(); }
    std::size_t output_size() const { return fft_->size() * image_.channels; }
    const Fft2d& fft() const { return *fft_; }

    ComplexVector forward(const Image& x) const
    {
        if (x.shape() != image_)
            throw ArgumentError("OSF forward: image shape " + to_string(x.shape()) + " does not match operator "
                                + to_string(image_));
        return forward_real(x.pixels());
    }

    /// Forward map applied to a real image-domain vector (length image_size()).
    ComplexVector forward_real(std::span<const double> x) const
    {
        check_image_len(x.size());
        ComplexVector z(output_size());
        const auto m = measurements_per_channel();
        const auto w = image_.width;
        const auto pw = padded_width();
        for (std::size_t ch = 0; ch < image_.channels; ++ch) {
            std::span<Complex> out(z.data() + ch * m, m);
            const double* src = x.data() + ch * image_.plane();
            for (std::size_t r = 0; r < image_.height; ++r)
                for (std::size_t c = 0; c < w; ++c) out[r * pw + c] = src[r * w + c];
            fft_->forward(out);
        }
        return z;
    }

    /// Same as forward_real but for a complex image-domain vector.
    ComplexVector forward_complex(std::span<const Complex> x) const
    {
        check_image_len(x.size());
        ComplexVector z(output_size());
        const auto m = measurements_per_channel();
        const auto w = image_.width;
        const auto pw = padded_width();
        for (std::size_t ch = 0; ch < image_.channels; ++ch) {
            std::span<Complex> out(z.data() + ch * m, m);
            const Complex* src = x.data() + ch * image_.plane();
            for (std::size_t r = 0; r < image_.height; ++r)
                for (std::size_t c = 0; c < w; ++c) out[r * pw + c] = src[r * w + c];
            fft_->forward(out);
        }
        return z;
    }

    /// A^H z: inverse DFT, then crop the top-left image window.
    ComplexVector adjoint(std::span<const Complex> z) const
    {
        if (z.size() != output_size())
            throw ArgumentError("OSF adjoint: measurement length " + std::to_string(z.size()) + ", expected "
                                + std::to_string(output_size()));
        ComplexVector x(image_size());
        ComplexVector work(measurements_per_channel());
        const auto m = measurements_per_channel();
        const auto w = image_.width;
        const auto pw = padded_width();
        for (std::size_t ch = 0; ch < image_.channels; ++ch) {
            std::copy(z.begin() + ch * m, z.begin() + (ch + 1) * m, work.begin());
            fft_->inverse(work);
            Complex* dst = x.data() + ch * image_.plane();
            for (std::size_t r = 0; r < image_.height; ++r)
                for (std::size_t c = 0; c < w; ++c) dst[r * w + c] = work[r * pw + c];
        }
        return x;
    }

private:
    void check_image_len(std::size_t n) const
    {
        if (n != image_size())
            throw ArgumentError("OSF forward: image length " + std::to_string(n) + ", expected "
                                + std::to_string(image_size()));
    }

    Shape image_;
    std::shared_ptr<const Fft2d> fft_;
};

/// K code vectors of length d with unit-modulus entries.
struct CdpCodes {
    std::size_t count = 0;
    std::size_t length = 0;
    ComplexVector values; // count * length, code-major

    std::span<const Complex> code(std::size_t k) const
    {
        return std::span<const Complex>(values).subspan(k * length, length);
    }
};

/// Codes with phases drawn independently and uniformly on [0, 2 pi).
inline CdpCodes make_cdp_codes(Rng& rng, std::size_t d, std::size_t k)
{
    if (d == 0 || k == 0) throw ArgumentError("CDP code length and count must be positive");
    CdpCodes codes{k, d, ComplexVector(k * d)};
    for (auto& c : codes.values) c = std::polar(1.0, 2.0 * std::numbers::pi * rng.uniform());
    return codes;
}

class CdpOperator {
public:
    CdpOperator(Shape image, CdpCodes codes) : image_(image), codes_(std::move(codes))
    {
        if (image.height == 0 || image.width == 0)
            throw ArgumentError("CDP image dimensions must be positive");
        if (codes_.count == 0) throw ArgumentError("CDP needs at least one code");
        if (codes_.length != image.plane())
            throw ArgumentError("CDP code length " + std::to_string(codes_.length)
                                + " does not match image plane size " + std::to_string(image.plane()));
        if (codes_.values.size() != codes_.count * codes_.length)
            throw ArgumentError("CDP code buffer has the wrong length");
        for (const auto& c : codes_.values)
            if (std::abs(std::abs(c) - 1.0) > 1e-9) throw ArgumentError("CDP codes must have unit modulus");
        fft_ = std::make_shared<const Fft2d>(image.height, image.width);
        scale_ = 1.0 / std::sqrt(static_cast<double>(codes_.count));
    }

    CdpOperator(Shape image, std::size_t k, Rng& rng) : CdpOperator(image, make_cdp_codes(rng, image.plane(), k)) {}

    const Shape& image_shape() const { return image_; }
    const CdpCodes& codes() const { return codes_; }
    std::size_t code_count() const { return codes_.count; }
    std::size_t image_size() const { return image_.size(); }
    std::size_t measurements_per_channel() const { return codes_.count * image_.plane(); }
    std::size_t output_size() const { return measurements_per_channel() * image_.channels; }

    ComplexVector forward(const Image& x) const
    {
        if (x.shape() != image_)
            throw ArgumentError("CDP forward: image shape " + to_string(x.shape()) + " does not match operator "
                                + to_string(image_));
        return forward_real(x.pixels());
    }

    ComplexVector forward_real(std::span<const double> x) const
    {
        check_image_len(x.size());
        ComplexVector z(output_size());
        const auto d = image_.plane();
        for (std::size_t ch = 0; ch < image_.channels; ++ch) {
            const double* src = x.data() + ch * d;
            for (std::size_t k = 0; k < codes_.count; ++k) {
                std::span<Complex> out(z.data() + ch * measurements_per_channel() + k * d, d);
                const auto code = codes_.code(k);
                for (std::size_t i = 0; i < d; ++i) out[i] = code[i] * src[i] * scale_;
                fft_->forward(out);
            }
        }
        return z;
    }

    ComplexVector forward_complex(std::span<const Complex> x) const
    {
        check_image_len(x.size());
        ComplexVector z(output_size());
        const auto d = image_.plane();
        for (std::size_t ch = 0; ch < image_.channels; ++ch) {
            const Complex* src = x.data() + ch * d;
            for (std::size_t k = 0; k < codes_.count; ++k) {
                std::span<Complex> out(z.data() + ch * measurements_per_channel() + k * d, d);
                const auto code = codes_.code(k);
                for (std::size_t i = 0; i < d; ++i) out[i] = code[i] * src[i] * scale_;
                fft_->forward(out);
            }
        }
        return z;
    }

    /// A^H z = (1/sqrt K) sum_k conj(c_k) .* F^H z_k
    ComplexVector adjoint(std::span<const Complex> z) const
    {
        if (z.size() != output_size())
            throw ArgumentError("CDP adjoint: measurement length " + std::to_string(z.size()) + ", expected "
                                + std::to_string(output_size()));
        const auto d = image_.plane();
        ComplexVector x(image_size());
        ComplexVector work(d);
        for (std::size_t ch = 0; ch < image_.channels; ++ch) {
            Complex* dst = x.data() + ch * d;
            for (std::size_t k = 0; k < codes_.count; ++k) {
                const auto offset = ch * measurements_per_channel() + k * d;
                std::copy(z.begin() + offset, z.begin() + offset + d, work.begin());
                fft_->inverse(work);
                const auto code = codes_.code(k);
                for (std::size_t i = 0; i < d; ++i) dst[i] += std::conj(code[i]) * work[i] * scale_;
            }
        }
        return x;
    }

private:
    void check_image_len(std::size_t n) const
    {
        if (n != image_size())
            throw ArgumentError("CDP forward: image length " + std::to_string(n) + ", expected "
                                + std::to_string(image_size()));
    }

    Shape image_;
    CdpCodes codes_;
    std::shared_ptr<const Fft2d> fft_;
    double scale_ = 1.0;
};

template <typename Op>
concept LinearOperator = requires(const Op& op, const Image& x, std::span<const double> xr,
                                  std::span<const Complex> z) {
    { op.image_shape() } -> std::convertible_to<Shape>;
    { op.output_size() } -> std::convertible_to<std::size_t>;
    { op.forward(x) } -> std::same_as<ComplexVector>;
    { op.forward_real(xr) } -> std::same_as<ComplexVector>;
    { op.adjoint(z) } -> std::same_as<ComplexVector>;
};

/// Re{A^H zbar}. When zbar = A x + CN(0, v I) with real x this equals x plus
/// real white noise of variance v/2 per pixel.
template <LinearOperator Op>
Image sufficient_statistic(const Op& op, std::span<const Complex> zbar)
{
    const auto back = op.adjoint(zbar);
    RealVector r(back.size());
    for (std::size_t i = 0; i < back.size(); ++i) r[i] = back[i].real();
    return Image(op.image_shape(), std::move(r));
}

/// Ratio d/m of image-domain to measurement-domain dimension.
template <LinearOperator Op>
double dimension_ratio(const Op& op)
{
    return static_cast<double>(op.image_shape().size()) / static_cast<double>(op.output_size());
}

} // namespace ecpr
