#pragma once

// Measurement channels for the likelihood side of EC.
//
// AmplitudeChannel models p(y_i | z_i) = N(y_i; |z_i|, v). Its per-element
// posterior under the pseudo-prior z_i ~ CN(zbar_i, vbar) is approximated by
// a Laplace approximation: the mode and the trace of the inverse Hessian of
// the negative log posterior
//     (y - |z|)^2 / (2 v) + |z - zbar|^2 / vbar
// over the real and imaginary parts of z.

#include "ecpr/core.hpp"

#include <algorithm>
#include <concepts>

namespace ecpr {

/// Per-element posterior moments returned by a channel: mean vector and the
/// average of the per-element variances.
struct ChannelPosterior {
    ComplexVector mean;
    double variance = 0.0;
    std::size_t floored = 0; // elements whose |zbar| was raised to the floor
};

/// Gaussian surrogate for Poisson shot noise: y_i^2 = |z_i|^2 + w_i with
/// w_i ~ N(0, alpha^2 |z_i|^2). Negative realizations of y_i^2 are clamped
/// to zero.
struct NoiseModel {
    double alpha = 0.0;
};

inline RealVector simulate_measurements(Rng& rng, std::span<const Complex> z, NoiseModel noise)
{
    if (!(noise.alpha >= 0.0)) throw ArgumentError("shot-noise level alpha must be nonnegative");
    RealVector y(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double mag2 = std::norm(z[i]);
        double w = 0.0;
        if (noise.alpha > 0.0) w = noise.alpha * std::sqrt(mag2) * rng.normal();
        y[i] = std::sqrt(std::max(0.0, mag2 + w));
    }
    return y;
}

/// Likelihood variance v for a shot-noise level alpha. A first-order
/// expansion of y = sqrt(|z|^2 + w) gives y ~ |z| + w / (2|z|), so
/// Var(y) ~ alpha^2 / 4 regardless of |z|.
inline double alpha_to_v(double alpha)
{
    if (!(alpha > 0.0)) throw ArgumentError("alpha must be positive to derive a likelihood variance");
    return alpha * alpha / 4.0;
}

inline constexpr double kDefaultMagnitudeFloor = 1e-8;

namespace detail {
inline void check_laplace_args(double vbar, double v)
{
    if (!(vbar > 0.0)) throw ArgumentError("extrinsic variance must be positive");
    if (!(v > 0.0)) throw ArgumentError("likelihood variance must be positive");
}

/// zbar with its magnitude raised to at least `floor`. A zero zbar keeps
/// phase 0.
inline Complex floor_magnitude(Complex zbar, double floor)
{
    const double mag = std::abs(zbar);
    if (mag >= floor) return zbar;
    if (mag == 0.0) return Complex(floor, 0.0);
    return zbar * (floor / mag);
}
} // namespace detail

/// Posterior mode: a convex combination of y and |zbar| carried on the phase
/// of zbar.
inline Complex laplace_map(double y, Complex zbar, double vbar, double v,
                           double magnitude_floor = kDefaultMagnitudeFloor)
{
    detail::check_laplace_args(vbar, v);
    const Complex zf = detail::floor_magnitude(zbar, magnitude_floor);
    const double mag = std::abs(zf);
    const double target = (vbar * y + 2.0 * v * mag) / (vbar + 2.0 * v);
    return zf * (target / mag);
}

/// Trace of the inverse Hessian at the mode, simplified for y >= 0.
inline double laplace_var(double y, Complex zbar, double vbar, double v,
                          double magnitude_floor = kDefaultMagnitudeFloor)
{
    detail::check_laplace_args(vbar, v);
    const double mag = std::max(std::abs(zbar), magnitude_floor);
    return vbar * (vbar * y + 4.0 * v * mag) / (2.0 * mag * (vbar + 2.0 * v));
}

/// Trace of the inverse of the 2x2 Hessian
///     (1/v + 2/vbar) I - y / (v |z|^3) [zi, -zr]^T [zi, -zr]
/// evaluated at z, written through the matrix inversion lemma. At the mode
/// this agrees with laplace_var.
inline double trace_inverse_hessian(double y, Complex z, double vbar, double v)
{
    detail::check_laplace_args(vbar, v);
    const double mag = std::abs(z);
    const double ratio = mag / y;
    return v * (2.0 * ratio - vbar / (vbar + 2.0 * v)) / ((vbar + 2.0 * v) / vbar * ratio - 1.0);
}

class AmplitudeChannel {
public:
    AmplitudeChannel(RealVector y, double v, double magnitude_floor = kDefaultMagnitudeFloor)
        : y_(std::move(y)), v_(v), floor_(magnitude_floor)
    {
        if (!(v > 0.0)) throw ArgumentError("likelihood variance v must be positive");
        if (!(magnitude_floor > 0.0)) throw ArgumentError("magnitude floor must be positive");
        for (double yi : y_)
            if (!(yi >= 0.0) || !std::isfinite(yi)) throw ArgumentError("measurements must be finite and nonnegative");
    }

    std::size_t size() const { return y_.size(); }
    double v() const { return v_; }
    double magnitude_floor() const { return floor_; }
    const RealVector& measurements() const { return y_; }

    ChannelPosterior posterior(std::span<const Complex> zbar, double vbar) const
    {
        if (zbar.size() != y_.size())
            throw ArgumentError("channel posterior: extrinsic mean has length " + std::to_string(zbar.size())
                                + ", expected " + std::to_string(y_.size()));
        detail::check_laplace_args(vbar, v_);
        ChannelPosterior out;
        out.mean.resize(y_.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < y_.size(); ++i) {
            if (std::abs(zbar[i]) < floor_) ++out.floored;
            out.mean[i] = laplace_map(y_[i], zbar[i], vbar, v_, floor_);
            acc += laplace_var(y_[i], zbar[i], vbar, v_, floor_);
        }
        out.variance = acc / static_cast<double>(y_.size());
        return out;
    }

private:
    RealVector y_;
    double v_;
    double floor_;
};

/// Free-function form of AmplitudeChannel::posterior.
inline ChannelPosterior channel_posterior(std::span<const double> y, std::span<const Complex> zbar, double vbar,
                                          double v)
{
    return AmplitudeChannel(RealVector(y.begin(), y.end()), v).posterior(zbar, vbar);
}

/// Linear-Gaussian channel y = z + CN(0, noise_variance I). Its posterior is
/// exact; it exists so the EC machinery can be checked against closed-form
/// Gaussian inference.
class GaussianChannel {
public:
    GaussianChannel(ComplexVector y, double noise_variance) : y_(std::move(y)), noise_(noise_variance)
    {
        if (!(noise_variance > 0.0)) throw ArgumentError("Gaussian channel noise variance must be positive");
    }

    std::size_t size() const { return y_.size(); }
    double noise_variance() const { return noise_; }
    const ComplexVector& measurements() const { return y_; }

    ChannelPosterior posterior(std::span<const Complex> zbar, double vbar) const
    {
        if (zbar.size() != y_.size())
            throw ArgumentError("channel posterior: extrinsic mean has length " + std::to_string(zbar.size())
                                + ", expected " + std::to_string(y_.size()));
        if (!(vbar > 0.0)) throw ArgumentError("extrinsic variance must be positive");
        ChannelPosterior out;
        out.mean.resize(y_.size());
        const double denom = noise_ + vbar;
        for (std::size_t i = 0; i < y_.size(); ++i) out.mean[i] = (noise_ * zbar[i] + vbar * y_[i]) / denom;
        out.variance = noise_ * vbar / denom;
        return out;
    }

private:
    ComplexVector y_;
    double noise_;
};

template <typename C>
concept MeasurementChannel = requires(const C& c, std::span<const Complex> zbar, double vbar) {
    { c.size() } -> std::convertible_to<std::size_t>;
    { c.posterior(zbar, vbar) } -> std::same_as<ChannelPosterior>;
};

/// Measurement residual ||y - |z||| for amplitude data.
inline double amplitude_residual(std::span<const double> y, std::span<const Complex> z)
{
    if (y.size() != z.size()) throw ArgumentError("residual: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y[i] - std::abs(z[i]);
        acc += d * d;
    }
    return std::sqrt(acc);
}

} // namespace ecpr
