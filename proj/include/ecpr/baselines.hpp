#pragma once

// Fienup's hybrid input-output algorithm and the initialization / reporting
// protocols built around it.

#include "ecpr/channel.hpp"
#include "ecpr/core.hpp"
#include "ecpr/linops.hpp"
#include "ecpr/metrics.hpp"

#include <functional>
#include <optional>

namespace ecpr {

struct HioConfig {
    double step = 0.9;
    std::size_t iters = 1000;
    bool nonnegativity = true;

    void validate() const
    {
        if (!(step >= 0.0 && step <= 1.0)) throw ArgumentError("HIO step must lie in [0,1]");
    }
};

namespace detail {

/// One measured channel seen by HIO: a square unitary operator on an
/// extended real grid plus the support of the image inside that grid.
template <LinearOperator Op>
struct HioProblem {
    Op op;
    std::vector<unsigned char> support;
    std::size_t rows;
    std::size_t cols;
};

// OSF: the extended grid is the whole padded grid; the support is the
// top-left image window.
inline HioProblem<OsfOperator> hio_problem(const OsfOperator& op)
{
    const auto ph = op.padded_height();
    const auto pw = op.padded_width();
    HioProblem<OsfOperator> p{OsfOperator(Shape{ph, pw, 1}, ph, pw), std::vector<unsigned char>(ph * pw, 0), ph, pw};
    for (std::size_t r = 0; r < op.image_shape().height; ++r)
        for (std::size_t c = 0; c < op.image_shape().width; ++c) p.support[r * pw + c] = 1;
    return p;
}

// CDP: the image grid itself, full support.
inline HioProblem<CdpOperator> hio_problem(const CdpOperator& op)
{
    const auto& s = op.image_shape();
    return HioProblem<CdpOperator>{CdpOperator(Shape{s.height, s.width, 1}, op.codes()),
                                   std::vector<unsigned char>(s.plane(), 1), s.height, s.width};
}

template <typename Problem>
RealVector embed(const Problem& p, std::span<const double> plane, std::size_t h, std::size_t w)
{
    RealVector g(p.rows * p.cols, 0.0);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) g[r * p.cols + c] = plane[r * w + c];
    return g;
}

template <typename Problem>
void extract(const Problem& p, std::span<const double> g, std::span<double> plane, std::size_t h, std::size_t w)
{
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) plane[r * w + c] = g[r * p.cols + c];
}

/// HIO iterations on the extended grid, in place.
template <typename Problem>
void hio_iterate(const Problem& p, std::span<const double> y, RealVector& g, const HioConfig& cfg)
{
    for (std::size_t it = 0; it < cfg.iters; ++it) {
        auto z = p.op.forward_real(g);
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double mag = std::abs(z[i]);
            z[i] = mag > 0.0 ? z[i] * (y[i] / mag) : Complex(y[i], 0.0);
        }
        const auto back = p.op.adjoint(z);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double proj = back[i].real();
            const bool ok = p.support[i] != 0 && (!cfg.nonnegativity || proj >= 0.0);
            g[i] = ok ? proj : g[i] - cfg.step * proj;
        }
    }
}

} // namespace detail

/// Runs HIO channel by channel from x0 and returns the final iterate
/// restricted to the image support.
template <LinearOperator Op>
Image hio_run(std::span<const double> y, const Op& op, const HioConfig& config, const Image& x0)
{
    config.validate();
    if (x0.shape() != op.image_shape()) throw ArgumentError("HIO: initial image does not match the operator");
    if (y.size() != op.output_size()) throw ArgumentError("HIO: measurement length does not match the operator");
    const auto problem = detail::hio_problem(op);
    const auto& s = op.image_shape();
    const auto per_channel = op.output_size() / s.channels;
    Image out(s);
    for (std::size_t ch = 0; ch < s.channels; ++ch) {
        auto g = detail::embed(problem, x0.channel(ch), s.height, s.width);
        detail::hio_iterate(problem, y.subspan(ch * per_channel, per_channel), g, config);
        detail::extract(problem, g, out.channel(ch), s.height, s.width);
    }
    return out;
}

/// ||y - |A x||| for an image estimate.
template <LinearOperator Op>
double measurement_residual(std::span<const double> y, const Op& op, const Image& x)
{
    return amplitude_residual(y, op.forward(x));
}

template <typename T>
struct BestOf {
    T result;
    std::size_t index = 0;
    double residual = 0.0;
    RealVector residuals;
};

/// Runs `solver` `restarts` times, restart i receiving base.split(i), and
/// keeps the result with the smallest residual (ties: lowest index).
template <typename Solver, typename Residual>
auto run_with_restarts(Solver&& solver, Residual&& residual, std::size_t restarts, const Rng& base)
    -> BestOf<std::invoke_result_t<Solver&, Rng&>>
{
    using T = std::invoke_result_t<Solver&, Rng&>;
    if (restarts == 0) throw ArgumentError("restart count must be at least 1");
    std::optional<BestOf<T>> best;
    RealVector all;
    for (std::size_t i = 0; i < restarts; ++i) {
        Rng rng = base.split(i);
        T candidate = solver(rng);
        const double res = residual(static_cast<const T&>(candidate));
        all.push_back(res);
        if (!best || res < best->residual) best = BestOf<T>{std::move(candidate), i, res, {}};
    }
    best->residuals = std::move(all);
    return std::move(*best);
}

/// Index of the smallest value; ties go to the lowest index.
inline std::size_t argmin_residual(std::span<const double> residuals)
{
    if (residuals.empty()) throw ArgumentError("argmin of an empty list");
    std::size_t best = 0;
    for (std::size_t i = 1; i < residuals.size(); ++i)
        if (residuals[i] < residuals[best]) best = i;
    return best;
}

struct OsfInitParams {
    std::size_t restarts = 50;
    std::size_t restart_iters = 50;
    std::size_t final_iters = 1000;
    HioConfig hio{};
};

/// OSF initialization: per channel, `restarts` short HIO runs from uniform
/// random images on the support, keep the lowest-residual candidate, and
/// continue it for `final_iters` iterations. For color images channels 2
/// and 3 are then flipped to best match channel 1.
inline Image osf_init_protocol(std::span<const double> y, const OsfOperator& op, Rng& rng,
                               const OsfInitParams& params = {})
{
    if (y.size() != op.output_size()) throw ArgumentError("OSF init: measurement length does not match the operator");
    if (params.restarts == 0) throw ArgumentError("OSF init: at least one restart is needed");
    const auto problem = detail::hio_problem(op);
    const auto& s = op.image_shape();
    const auto per_channel = op.measurements_per_channel();
    Image out(s);
    HioConfig short_cfg = params.hio;
    short_cfg.iters = params.restart_iters;
    HioConfig long_cfg = params.hio;
    long_cfg.iters = params.final_iters;
    for (std::size_t ch = 0; ch < s.channels; ++ch) {
        const auto yc = y.subspan(ch * per_channel, per_channel);
        Rng channel_rng = rng.split(ch);
        auto best = run_with_restarts(
            [&](Rng& r) {
                RealVector g(problem.rows * problem.cols, 0.0);
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (problem.support[i] != 0) g[i] = 255.0 * r.uniform();
                detail::hio_iterate(problem, yc, g, short_cfg);
                return g;
            },
            [&](const RealVector& g) {
                RealVector masked(g.size(), 0.0);
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (problem.support[i] != 0) masked[i] = g[i];
                return amplitude_residual(yc, problem.op.forward_real(masked));
            },
            params.restarts, channel_rng);
        RealVector g = std::move(best.result);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (problem.support[i] == 0) g[i] = 0.0;
        detail::hio_iterate(problem, yc, g, long_cfg);
        detail::extract(problem, g, out.channel(ch), s.height, s.width);
    }
    rng = rng.split(s.channels);
    if (s.channels == 3) out = align_color_channels(out);
    return out;
}

/// CDP initialization: back-project the measured magnitudes carrying the
/// phases that a constant image would produce, Re{A^H (y .* e^{j angle(A 1)})}.
inline Image cdp_init(std::span<const double> y, const CdpOperator& op)
{
    if (y.size() != op.output_size()) throw ArgumentError("CDP init: measurement length does not match the operator");
    const Image ones(op.image_shape(), 1.0);
    auto z = op.forward(ones);
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double mag = std::abs(z[i]);
        z[i] = mag > 0.0 ? z[i] * (y[i] / mag) : Complex(y[i], 0.0);
    }
    return sufficient_statistic(op, z);
}

} // namespace ecpr
