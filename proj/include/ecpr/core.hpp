#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecpr {

using Complex = std::complex<double>;
using ComplexVector = std::vector<Complex>;
using RealVector = std::vector<double>;

class ArgumentError : public std::invalid_argument {
public:
    explicit ArgumentError(const std::string& what) : std::invalid_argument(what) {}
};

class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Grid geometry of an image: height x width x channels.
struct Shape {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;

    std::size_t plane() const { return height * width; }
    std::size_t size() const { return height * width * channels; }

    friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s)
{
    return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" + std::to_string(s.channels);
}

/// Real-valued pixel grid, row-major within a channel, channels stored as
/// consecutive planes. Nominal pixel range is [0,255].
class Image {
public:
    Image() = default;

    Image(Shape shape, double fill = 0.0) : shape_(shape), pixels_(shape.size(), fill)
    {
        validate_shape(shape);
    }

    Image(Shape shape, RealVector pixels) : shape_(shape), pixels_(std::move(pixels))
    {
        validate_shape(shape);
        if (pixels_.size() != shape.size())
            throw ArgumentError("pixel buffer length " + std::to_string(pixels_.size())
                                + " does not match shape " + to_string(shape));
    }

    const Shape& shape() const { return shape_; }
    std::size_t height() const { return shape_.height; }
    std::size_t width() const { return shape_.width; }
    std::size_t channels() const { return shape_.channels; }
    std::size_t size() const { return pixels_.size(); }

    double& operator()(std::size_t row, std::size_t col, std::size_t ch = 0)
    {
        return pixels_[ch * shape_.plane() + row * shape_.width + col];
    }
    double operator()(std::size_t row, std::size_t col, std::size_t ch = 0) const
    {
        return pixels_[ch * shape_.plane() + row * shape_.width + col];
    }

    std::span<double> channel(std::size_t ch)
    {
        return std::span<double>(pixels_).subspan(ch * shape_.plane(), shape_.plane());
    }
    std::span<const double> channel(std::size_t ch) const
    {
        return std::span<const double>(pixels_).subspan(ch * shape_.plane(), shape_.plane());
    }

    RealVector& pixels() { return pixels_; }
    const RealVector& pixels() const { return pixels_; }

    bool all_finite() const
    {
        for (double p : pixels_)
            if (!std::isfinite(p)) return false;
        return true;
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    static void validate_shape(const Shape& s)
    {
        if (s.height == 0 || s.width == 0)
            throw ArgumentError("image dimensions must be positive, got " + to_string(s));
        if (s.channels != 1 && s.channels != 3)
            throw ArgumentError("image must have 1 or 3 channels, got " + std::to_string(s.channels));
    }

    Shape shape_{};
    RealVector pixels_;
};

/// SplitMix64 (Steele, Lea & Flood 2014): 64-bit state, increment by the
/// golden-ratio constant, output through a two-round xor-shift-multiply mix.
/// The output stream depends only on the seed. Substreams are derived with
/// split(), which seeds a new generator from a mix of the current state and
/// the stream index without advancing this generator.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64()
    {
        state_ += kGamma;
        return mix(state_);
    }

    /// Uniform on [0,1) with 53 bits of resolution.
    double uniform()
    {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via the Box-Muller transform; the second variate of
    /// each pair is cached.
    double normal()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    /// +1 or -1 with equal probability.
    double rademacher() { return (next_u64() >> 63) ? 1.0 : -1.0; }

    Rng split(std::uint64_t stream) const
    {
        return Rng(mix(state_ ^ mix((stream + 1) * kGamma)));
    }

    std::uint64_t state() const { return state_; }

private:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    static std::uint64_t mix(std::uint64_t z)
    {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// n draws from CN(0, variance): real and imaginary parts are independent
/// with variance/2 each, so E|entry|^2 = variance.
inline ComplexVector sample_circular_complex_gaussian(Rng& rng, std::size_t n, double variance)
{
    if (!(variance >= 0.0))
        throw ArgumentError("variance must be nonnegative, got " + std::to_string(variance));
    ComplexVector out(n);
    if (variance == 0.0) return out;
    const double sd = std::sqrt(variance / 2.0);
    for (auto& c : out) {
        const double re = rng.normal();
        const double im = rng.normal();
        c = Complex(sd * re, sd * im);
    }
    return out;
}

inline RealVector sample_real_gaussian(Rng& rng, std::size_t n, double variance)
{
    if (!(variance >= 0.0))
        throw ArgumentError("variance must be nonnegative, got " + std::to_string(variance));
    RealVector out(n, 0.0);
    if (variance == 0.0) return out;
    const double sd = std::sqrt(variance);
    for (auto& v : out) v = sd * rng.normal();
    return out;
}

inline double squared_norm(std::span<const Complex> v)
{
    double acc = 0.0;
    for (const auto& c : v) acc += std::norm(c);
    return acc;
}

inline double squared_norm(std::span<const double> v)
{
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return acc;
}

inline bool all_finite(std::span<const Complex> v)
{
    for (const auto& c : v)
        if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) return false;
    return true;
}

} // namespace ecpr
