#pragma once

// Expectation-consistent inference in the measurement (z) domain.
//
// Two Gaussian messages circulate between a prior side and a likelihood
// side. Each side combines its factor with the incoming message into
// posterior moments (zhat, vhat) and sends back the extrinsic message
// obtained by Gaussian division, (1/vhat - 1/vbar)^-1 for the variance.
//
// deepecpr_run specializes this to column-orthogonal operators: the prior
// side is an image denoiser applied to the sufficient statistic
// Re{A^H zbar2} at input variance vbar2/2, with vhat2 modelled as
// beta * vbar2; the likelihood side is any MeasurementChannel. The (1)-side
// extrinsic message is damped deterministically, the (2)-side either
// deterministically or stochastically (damped variance, with fresh noise
// added to the raw mean so its error level matches that variance).

#include "ecpr/channel.hpp"
#include "ecpr/core.hpp"
#include "ecpr/denoisers.hpp"
#include "ecpr/linops.hpp"
#include "ecpr/metrics.hpp"

#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <ostream>

namespace ecpr {

/// Variances are kept inside [floor, ceiling]; the ceiling stands in for an
/// infinite (non-informative) variance.
struct VarianceLimits {
    double floor = 1e-9;
    double ceiling = 1e12;

    double clamp(double v) const { return std::min(std::max(v, floor), ceiling); }
};

/// A Gaussian message CN(mean, variance I).
struct Message {
    ComplexVector mean;
    double variance = 0.0;
};

using WarningSink = std::function<void(const std::string&)>;

inline WarningSink& warning_sink()
{
    static WarningSink sink = [](const std::string& msg) { std::clog << "warning: " << msg << '\n'; };
    return sink;
}

inline void warn(const std::string& msg)
{
    if (warning_sink()) warning_sink()(msg);
}

struct ExtrinsicResult {
    Message message;
    /// The posterior was not more precise than the incoming message; the
    /// extrinsic variance was set to the ceiling and the mean to zhat.
    bool clamped = false;
};

/// Gaussian division N(zhat, vhat) / N(zbar, vbar):
///     v' = (1/vhat - 1/vbar)^-1,  z' = (zhat/vhat - zbar/vbar) v'.
inline ExtrinsicResult extrinsic_update(std::span<const Complex> zhat, double vhat, std::span<const Complex> zbar,
                                        double vbar, const VarianceLimits& limits = {})
{
    if (zhat.size() != zbar.size()) throw ArgumentError("extrinsic update: length mismatch");
    if (!(vhat > 0.0) || !(vbar > 0.0)) throw ArgumentError("extrinsic update: variances must be positive");
    ExtrinsicResult out;
    const double precision = 1.0 / vhat - 1.0 / vbar;
    if (!(precision > 0.0)) {
        out.clamped = true;
        out.message.variance = limits.ceiling;
        out.message.mean.assign(zhat.begin(), zhat.end());
        warn("extrinsic precision " + std::to_string(precision) + " is not positive (vhat=" + std::to_string(vhat)
             + ", vbar=" + std::to_string(vbar) + "); variance clamped to ceiling");
        return out;
    }
    const double raw = 1.0 / precision;
    out.message.mean.resize(zhat.size());
    for (std::size_t i = 0; i < zhat.size(); ++i) out.message.mean[i] = (zhat[i] / vhat - zbar[i] / vbar) * raw;
    out.message.variance = limits.clamp(raw);
    out.clamped = raw > limits.ceiling;
    return out;
}

/// Damping of a raw message toward the previous one: square roots of the
/// variances and the means are mixed with weight mu on the raw value.
inline Message damp_deterministic(const Message& raw, const Message& old, double mu)
{
    if (!(mu > 0.0 && mu <= 1.0)) throw ArgumentError("damping factor must lie in (0,1]");
    if (raw.mean.size() != old.mean.size()) throw ArgumentError("damping: length mismatch");
    Message out;
    const double s = mu * std::sqrt(raw.variance) + (1.0 - mu) * std::sqrt(old.variance);
    out.variance = s * s;
    out.mean.resize(raw.mean.size());
    for (std::size_t i = 0; i < raw.mean.size(); ++i) out.mean[i] = mu * raw.mean[i] + (1.0 - mu) * old.mean[i];
    return out;
}

struct StochasticDampResult {
    Message message;
    /// Per-entry total variance of the added noise (zero when none is added).
    double injected_variance = 0.0;
};

/// Damps the variance as damp_deterministic does, but builds the mean by
/// adding CN(0, vbar - vbar_raw) noise to the raw mean. When the damped
/// variance does not exceed the raw one no noise is added.
inline StochasticDampResult damp_stochastic(Rng& rng, const Message& raw, double old_variance, double mu)
{
    if (!(mu > 0.0 && mu <= 1.0)) throw ArgumentError("damping factor must lie in (0,1]");
    StochasticDampResult out;
    const double s = mu * std::sqrt(raw.variance) + (1.0 - mu) * std::sqrt(old_variance);
    out.message.variance = s * s;
    out.message.mean = raw.mean;
    const double extra = out.message.variance - raw.variance;
    if (extra > 0.0) {
        out.injected_variance = extra;
        const auto noise = sample_circular_complex_gaussian(rng, raw.mean.size(), extra);
        for (std::size_t i = 0; i < noise.size(); ++i) out.message.mean[i] += noise[i];
    }
    return out;
}

/// zbar2 = A x_init + CN(0, vbar_init I) with vbar2 = zeta * vbar_init.
template <LinearOperator Op>
Message init_z2(const Op& op, const Image& x_init, double vbar_init, double zeta, Rng& rng)
{
    if (!(zeta > 1.0)) throw ArgumentError("variance initialization factor zeta must exceed 1");
    if (!(vbar_init > 0.0)) throw ArgumentError("initial variance must be positive");
    Message out;
    out.mean = op.forward(x_init);
    const auto noise = sample_circular_complex_gaussian(rng, out.mean.size(), vbar_init);
    for (std::size_t i = 0; i < noise.size(); ++i) out.mean[i] += noise[i];
    out.variance = zeta * vbar_init;
    return out;
}

/// EM update of the AWGN variance of zbar2 given the posterior mean zhat2
/// and average posterior variance vhat2: (1/m)||zbar2 - zhat2||^2 + vhat2.
inline double em_retune_vbar2(std::span<const Complex> zbar2, std::span<const Complex> zhat2, double vhat2)
{
    if (zbar2.size() != zhat2.size()) throw ArgumentError("EM retune: length mismatch");
    if (zbar2.empty()) throw ArgumentError("EM retune: empty vectors");
    double acc = 0.0;
    for (std::size_t i = 0; i < zbar2.size(); ++i) acc += std::norm(zbar2[i] - zhat2[i]);
    return acc / static_cast<double>(zbar2.size()) + vhat2;
}

enum class DampingMode { Deterministic, Stochastic };

struct RunConfig {
    double mu1 = 0.3;
    double mu2 = 0.075;
    double zeta = 1.2;
    double vbar_init = 70.0 * 70.0;
    std::size_t iterations = 200;
    std::size_t em_iters = 10;
    DampingMode damping = DampingMode::Stochastic;
    VarianceLimits limits{};
    std::uint64_t seed = 0;
    /// Alignment used for the per-iteration PSNR when ground truth is given.
    AmbiguityPolicy trace_policy = AmbiguityPolicy::cdp();

    void validate() const
    {
        if (!(mu1 > 0.0 && mu1 <= 1.0)) throw ArgumentError("mu1 must lie in (0,1]");
        if (!(mu2 > 0.0 && mu2 <= 1.0)) throw ArgumentError("mu2 must lie in (0,1]");
        if (!(zeta > 1.0)) throw ArgumentError("zeta must exceed 1");
        if (!(vbar_init > 0.0)) throw ArgumentError("vbar_init must be positive");
        if (iterations == 0) throw ArgumentError("iteration count must be at least 1");
        if (!(limits.floor > 0.0 && limits.floor < limits.ceiling))
            throw ArgumentError("variance limits must satisfy 0 < floor < ceiling");
    }
};

struct IterationRecord {
    std::size_t iter = 0;
    double vbar1 = 0.0;
    double vbar2 = 0.0;
    double vhat1 = 0.0;
    double vhat2 = 0.0;
    std::optional<double> err_zbar1;
    std::optional<double> err_zbar2;
    std::optional<double> err_zhat1;
    std::optional<double> err_zhat2;
    double injected_sd = 0.0;
    std::optional<double> psnr;
    std::size_t denoiser_calls = 0;
    std::size_t clamp_events = 0;
    std::size_t floored_magnitudes = 0;
};

using IterationTrace = std::vector<IterationRecord>;

/// Thrown when the solver state stops being finite or the variances run
/// away; carries the trace up to the failure.
class DivergenceError : public NumericalError {
public:
    DivergenceError(const std::string& what, IterationTrace trace) : NumericalError(what), trace_(std::move(trace)) {}
    const IterationTrace& trace() const { return trace_; }

private:
    IterationTrace trace_;
};

inline constexpr const char* kTraceCsvHeader =
    "iter,vbar1,vbar2,vhat1,vhat2,err_zbar1,err_zbar2,err_zhat1,err_zhat2,injected_sd,psnr";

namespace detail {
inline std::string format_number(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string format_optional(const std::optional<double>& v)
{
    return v ? format_number(*v) : std::string();
}
} // namespace detail

/// One row per iteration; error and PSNR columns are left empty when no
/// ground truth was supplied. An exact reconstruction's PSNR is written as
/// "inf".
inline void write_trace_csv(std::ostream& os, const IterationTrace& trace)
{
    os << kTraceCsvHeader << '\n';
    for (const auto& r : trace) {
        os << r.iter << ',' << detail::format_number(r.vbar1) << ',' << detail::format_number(r.vbar2) << ','
           << detail::format_number(r.vhat1) << ',' << detail::format_number(r.vhat2) << ','
           << detail::format_optional(r.err_zbar1) << ',' << detail::format_optional(r.err_zbar2) << ','
           << detail::format_optional(r.err_zhat1) << ',' << detail::format_optional(r.err_zhat2) << ','
           << detail::format_number(r.injected_sd) << ',' << detail::format_optional(r.psnr) << '\n';
    }
}

/// The full solver state after the last iteration.
struct ExtrinsicState {
    Message side1;  // (zbar1, vbar1)
    Message side2;  // (zbar2, vbar2)
    Message post1;  // (zhat1, vhat1)
    Message post2;  // (zhat2, vhat2)
};

struct RunResult {
    Image estimate;
    IterationTrace trace;
    ExtrinsicState state;
    std::size_t denoiser_calls = 0;
};

namespace detail {

inline double rms_error(std::span<const Complex> a, std::span<const Complex> b)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::norm(a[i] - b[i]);
    return std::sqrt(acc / static_cast<double>(a.size()));
}

inline void require_finite(std::span<const Complex> v, double var, const char* step, std::size_t iter,
                           const IterationTrace& trace)
{
    if (!all_finite(v) || !std::isfinite(var))
        throw DivergenceError(std::string("non-finite state after ") + step + " in iteration " + std::to_string(iter),
                              trace);
}

} // namespace detail

/// deepECpr. Each of the `iterations` iterations:
///   1. denoise r = Re{A^H zbar2} at input variance vbar2/2 with the denoiser
///      selected from the bank; zhat2 = A xhat2, vhat2 = beta vbar2
///   2. extrinsic (zbar1, vbar1) by Gaussian division, damped with mu1
///      (not on the first iteration, which has no previous message)
///   3. channel posterior (zhat1, vhat1)
///   4. extrinsic (zbar2, vbar2) by Gaussian division, damped with mu2
///      stochastically or deterministically
///   5. during the first em_iters iterations, vbar2 is re-estimated as
///      (1/m)||zbar2 - zhat2||^2 + vhat2
/// Returns the last denoiser output and the per-iteration trace.
template <LinearOperator Op, MeasurementChannel Channel>
RunResult deepecpr_run(const RunConfig& config, const Channel& channel, const Op& op, const DenoiserBank& bank,
                       const Image& x_init, const Image* ground_truth = nullptr)
{
    config.validate();
    bank.validate();
    if (channel.size() != op.output_size())
        throw ArgumentError("channel has " + std::to_string(channel.size()) + " measurements, operator produces "
                            + std::to_string(op.output_size()));
    if (x_init.shape() != op.image_shape()) throw ArgumentError("initial image does not match the operator");
    if (ground_truth != nullptr && ground_truth->shape() != op.image_shape())
        throw ArgumentError("ground truth does not match the operator");

    const Rng root(config.seed);
    Rng init_rng = root.split(0);
    Rng damp_rng = root.split(1);
    const double dim_ratio = dimension_ratio(op);
    const auto& limits = config.limits;

    ComplexVector z_true;
    if (ground_truth != nullptr) z_true = op.forward(*ground_truth);

    RunResult result;
    ExtrinsicState& st = result.state;
    st.side2 = init_z2(op, x_init, config.vbar_init, config.zeta, init_rng);
    st.side2.variance = limits.clamp(st.side2.variance);

    for (std::size_t j = 1; j <= config.iterations; ++j) {
        IterationRecord rec;
        rec.iter = j;

        // prior side
        const double v_in = 0.5 * st.side2.variance;
        const DenoiserSpec& spec = select_denoiser(bank, std::sqrt(v_in), j);
        const Image r = sufficient_statistic(op, st.side2.mean);
        result.estimate = spec.denoise(r, v_in);
        ++result.denoiser_calls;
        if (!result.estimate.all_finite())
            throw DivergenceError("denoiser returned non-finite pixels in iteration " + std::to_string(j),
                                  result.trace);
        st.post2.mean = op.forward(result.estimate);
        st.post2.variance = limits.clamp(spec.variance_factor(v_in, dim_ratio) * st.side2.variance);

        auto ext1 = extrinsic_update(st.post2.mean, st.post2.variance, st.side2.mean, st.side2.variance, limits);
        rec.clamp_events += ext1.clamped ? 1 : 0;
        if (j == 1)
            st.side1 = std::move(ext1.message);
        else
            st.side1 = damp_deterministic(ext1.message, st.side1, config.mu1);
        st.side1.variance = limits.clamp(st.side1.variance);
        detail::require_finite(st.side1.mean, st.side1.variance, "the (1)-side extrinsic update", j, result.trace);

        // likelihood side
        auto post1 = channel.posterior(st.side1.mean, st.side1.variance);
        rec.floored_magnitudes = post1.floored;
        st.post1.mean = std::move(post1.mean);
        st.post1.variance = limits.clamp(post1.variance);
        detail::require_finite(st.post1.mean, st.post1.variance, "the channel posterior", j, result.trace);

        auto ext2 = extrinsic_update(st.post1.mean, st.post1.variance, st.side1.mean, st.side1.variance, limits);
        rec.clamp_events += ext2.clamped ? 1 : 0;
        if (config.damping == DampingMode::Stochastic) {
            auto damped = damp_stochastic(damp_rng, ext2.message, st.side2.variance, config.mu2);
            rec.injected_sd = std::sqrt(damped.injected_variance);
            st.side2 = std::move(damped.message);
        } else {
            st.side2 = damp_deterministic(ext2.message, st.side2, config.mu2);
        }
        if (j <= config.em_iters) st.side2.variance = em_retune_vbar2(st.side2.mean, st.post2.mean, st.post2.variance);
        st.side2.variance = limits.clamp(st.side2.variance);
        detail::require_finite(st.side2.mean, st.side2.variance, "the (2)-side extrinsic update", j, result.trace);

        rec.vbar1 = st.side1.variance;
        rec.vbar2 = st.side2.variance;
        rec.vhat1 = st.post1.variance;
        rec.vhat2 = st.post2.variance;
        rec.denoiser_calls = result.denoiser_calls;
        if (ground_truth != nullptr) {
            rec.err_zbar1 = detail::rms_error(st.side1.mean, z_true);
            rec.err_zbar2 = detail::rms_error(st.side2.mean, z_true);
            rec.err_zhat1 = detail::rms_error(st.post1.mean, z_true);
            rec.err_zhat2 = detail::rms_error(st.post2.mean, z_true);
            rec.psnr = psnr(resolve_ambiguity(result.estimate, *ground_truth, config.trace_policy), *ground_truth);
        }
        result.trace.push_back(rec);
    }
    return result;
}

/// Posterior moments of one EC side given its incoming message.
struct Moments {
    ComplexVector mean;
    double variance = 0.0;
};

using MomentFn = std::function<Moments(std::span<const Complex> zbar, double vbar)>;

struct EcRunResult {
    ComplexVector zhat2;
    std::size_t iterations = 0;
    bool converged = false;
    IterationTrace trace;
};

/// Generic EC for z ~ p_z observed through p_{y|z}, with both factors given
/// by their moment maps. Starts from a non-informative (2)-side message
/// (variance at the ceiling, zero mean) and stops after max_iters or when
/// |vhat1 - vhat2| / vhat2 < tol.
inline EcRunResult ec_run(const MomentFn& prior_moments, const MomentFn& channel_moments, std::size_t m,
                          std::size_t max_iters, double tol, const VarianceLimits& limits = {})
{
    if (m == 0) throw ArgumentError("ec_run: empty problem");
    if (max_iters == 0) throw ArgumentError("ec_run: max_iters must be positive");
    Message side2{ComplexVector(m), limits.ceiling};
    EcRunResult out;
    std::size_t runaway = 0;
    for (std::size_t j = 1; j <= max_iters; ++j) {
        IterationRecord rec;
        rec.iter = j;
        const Moments post2 = prior_moments(side2.mean, side2.variance);
        if (post2.mean.size() != m) throw ArgumentError("ec_run: prior moments have the wrong length");
        const double vhat2 = limits.clamp(post2.variance);
        auto ext1 = extrinsic_update(post2.mean, vhat2, side2.mean, side2.variance, limits);
        const Moments post1 = channel_moments(ext1.message.mean, ext1.message.variance);
        if (post1.mean.size() != m) throw ArgumentError("ec_run: channel moments have the wrong length");
        const double vhat1 = limits.clamp(post1.variance);
        auto ext2 = extrinsic_update(post1.mean, vhat1, ext1.message.mean, ext1.message.variance, limits);

        rec.vbar1 = ext1.message.variance;
        rec.vbar2 = ext2.message.variance;
        rec.vhat1 = vhat1;
        rec.vhat2 = vhat2;
        rec.clamp_events = (ext1.clamped ? 1 : 0) + (ext2.clamped ? 1 : 0);
        out.trace.push_back(rec);
        out.zhat2 = post2.mean;
        out.iterations = j;
        if (!all_finite(post2.mean) || !all_finite(post1.mean))
            throw DivergenceError("ec_run: non-finite moments in iteration " + std::to_string(j), out.trace);

        runaway = rec.clamp_events > 0 ? runaway + 1 : 0;
        if (runaway >= 5)
            throw DivergenceError("ec_run: extrinsic variance at the ceiling for 5 consecutive iterations",
                                  out.trace);
        if (std::abs(vhat1 - vhat2) / vhat2 < tol) {
            out.converged = true;
            break;
        }
        side2 = std::move(ext2.message);
    }
    return out;
}

} // namespace ecpr
