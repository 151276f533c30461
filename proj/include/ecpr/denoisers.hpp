#pragma once

// Denoisers f(r, v_in) approximating E{x | r = x + N(0, v_in I)}, the banks
// that choose among them, and the Monte-Carlo divergence estimator.

#include "ecpr/core.hpp"

#include <functional>
#include <limits>
#include <optional>
#include <string>

namespace ecpr {

class SelectionError : public std::runtime_error {
public:
    explicit SelectionError(const std::string& what) : std::runtime_error(what) {}
};

using DenoiseFn = std::function<Image(const Image& r, double v_in)>;

/// Closed noise-SD interval on the [0,255] pixel scale.
struct SdRange {
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();

    bool contains(double sd) const { return sd >= lo && sd <= hi; }
};

/// Converts an image-domain output/input MSE ratio into the measurement-domain
/// factor beta with vhat2 = beta * vbar2. The sufficient statistic carries
/// noise of variance vbar2/2 per pixel and an error of per-pixel variance e in
/// x spreads over m measurements as (d/m) e, so beta = (d/m) * ratio / 2.
inline double beta_from_mse_ratio(double ratio, double dim_ratio)
{
    return dim_ratio * ratio / 2.0;
}

struct DenoiserSpec {
    std::string name;
    DenoiseFn fn;
    /// Measurement-domain ratio vhat2 / vbar2.
    double beta = 0.05;
    /// Optional exact output/input MSE ratio as a function of v_in; when set
    /// it replaces beta.
    std::function<double(double)> mse_ratio;
    SdRange sd_range{};
    std::optional<std::size_t> iteration_budget;

    void validate() const
    {
        if (!fn) throw ArgumentError("denoiser '" + name + "' has no implementation");
        if (!mse_ratio && !(beta > 0.0 && beta < 1.0))
            throw ArgumentError("denoiser '" + name + "': beta must lie in (0,1)");
        if (!(sd_range.lo <= sd_range.hi)) throw ArgumentError("denoiser '" + name + "': empty SD range");
    }

    Image denoise(const Image& r, double v_in) const
    {
        if (!(v_in > 0.0)) throw ArgumentError("denoiser input variance must be positive");
        auto out = fn(r, v_in);
        if (out.shape() != r.shape()) throw ArgumentError("denoiser '" + name + "' changed the image shape");
        return out;
    }

    /// beta for a call at input variance v_in on an operator with d/m = dim_ratio.
    double variance_factor(double v_in, double dim_ratio) const
    {
        if (mse_ratio) return beta_from_mse_ratio(mse_ratio(v_in), dim_ratio);
        return beta;
    }
};

inline DenoiserSpec identity_denoiser(double beta = 0.5)
{
    DenoiserSpec spec;
    spec.name = "identity";
    spec.fn = [](const Image& r, double) { return r; };
    spec.beta = beta;
    return spec;
}

/// Posterior mean under the prior x ~ N(mean, tau I):
///     mean + tau / (tau + v_in) (r - mean).
inline Image gaussian_mmse(const Image& r, double v_in, double mean, double tau)
{
    if (!(tau > 0.0)) throw ArgumentError("prior variance must be positive");
    if (!(v_in > 0.0)) throw ArgumentError("denoiser input variance must be positive");
    const double gain = tau / (tau + v_in);
    Image out = r;
    for (auto& p : out.pixels()) p = mean + gain * (p - mean);
    return out;
}

inline DenoiserSpec gaussian_mmse_denoiser(double mean, double tau)
{
    if (!(tau > 0.0)) throw ArgumentError("prior variance must be positive");
    DenoiserSpec spec;
    spec.name = "gaussian_mmse";
    spec.fn = [mean, tau](const Image& r, double v_in) { return gaussian_mmse(r, v_in, mean, tau); };
    spec.mse_ratio = [tau](double v_in) { return tau / (tau + v_in); };
    return spec;
}

struct TvResult {
    Image image;
    /// Best primal objective after each inner iteration; non-increasing.
    RealVector objective;
};

namespace detail {

// Forward-difference gradient with Neumann boundary, and its negative adjoint.
inline void tv_gradient(std::span<const double> x, std::size_t h, std::size_t w, std::span<double> gx,
                        std::span<double> gy)
{
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const auto i = r * w + c;
            gx[i] = (c + 1 < w) ? x[i + 1] - x[i] : 0.0;
            gy[i] = (r + 1 < h) ? x[i + w] - x[i] : 0.0;
        }
    }
}

inline void tv_divergence(std::span<const double> px, std::span<const double> py, std::size_t h, std::size_t w,
                          std::span<double> div)
{
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const auto i = r * w + c;
            double dx = 0.0;
            if (c + 1 < w) dx += px[i];
            if (c > 0) dx -= px[i - 1];
            double dy = 0.0;
            if (r + 1 < h) dy += py[i];
            if (r > 0) dy -= py[i - w];
            div[i] = dx + dy;
        }
    }
}

inline double tv_value(std::span<const double> x, std::size_t h, std::size_t w)
{
    double acc = 0.0;
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const auto i = r * w + c;
            const double dx = (c + 1 < w) ? x[i + 1] - x[i] : 0.0;
            const double dy = (r + 1 < h) ? x[i + w] - x[i] : 0.0;
            acc += std::sqrt(dx * dx + dy * dy);
        }
    }
    return acc;
}

inline double tv_objective(std::span<const double> x, std::span<const double> r, std::size_t h, std::size_t w,
                           double lambda)
{
    double fid = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) fid += 0.5 * (x[i] - r[i]) * (x[i] - r[i]);
    return fid + lambda * tv_value(x, h, w);
}

} // namespace detail

/// Isotropic TV denoising, min_x 1/2 ||x - r||^2 + lambda TV(x), per channel,
/// with lambda = lambda_scale * sqrt(v_in).
///
/// Solved on the dual: x = r + lambda div p with |p_i| <= 1, iterated by fast
/// gradient projection (Beck & Teboulle) with step 1/(8 lambda) on grad x. The
/// returned image is the iterate with the lowest primal objective seen, so
/// the reported objective sequence never increases.
inline TvResult tv_denoise_traced(const Image& r, double v_in, double lambda_scale, std::size_t max_inner_iters)
{
    if (!(v_in > 0.0)) throw ArgumentError("TV input variance must be positive");
    if (!(lambda_scale >= 0.0)) throw ArgumentError("TV lambda scale must be nonnegative");
    const double lambda = lambda_scale * std::sqrt(v_in);
    const auto h = r.height();
    const auto w = r.width();
    const auto n = r.shape().plane();

    TvResult result{r, RealVector(max_inner_iters, 0.0)};
    if (lambda == 0.0 || max_inner_iters == 0) {
        double obj = 0.0;
        for (std::size_t ch = 0; ch < r.channels(); ++ch) obj += detail::tv_objective(r.channel(ch), r.channel(ch), h, w, 0.0);
        std::fill(result.objective.begin(), result.objective.end(), obj);
        return result;
    }

    RealVector px(n), py(n), qx(n), qy(n), px_old(n), py_old(n), div(n), x(n), gx(n), gy(n);
    const double step = 1.0 / (8.0 * lambda);
    std::vector<RealVector> best(r.channels());
    std::vector<double> best_obj(r.channels());
    std::vector<RealVector> history(r.channels(), RealVector(max_inner_iters));

    for (std::size_t ch = 0; ch < r.channels(); ++ch) {
        const auto rc = r.channel(ch);
        std::fill(px.begin(), px.end(), 0.0);
        std::fill(py.begin(), py.end(), 0.0);
        qx = px;
        qy = py;
        double t = 1.0;
        best[ch].assign(rc.begin(), rc.end());
        best_obj[ch] = detail::tv_objective(rc, rc, h, w, lambda);
        for (std::size_t it = 0; it < max_inner_iters; ++it) {
            detail::tv_divergence(qx, qy, h, w, div);
            for (std::size_t i = 0; i < n; ++i) x[i] = rc[i] + lambda * div[i];
            detail::tv_gradient(x, h, w, gx, gy);
            px_old = px;
            py_old = py;
            for (std::size_t i = 0; i < n; ++i) {
                const double ax = qx[i] + step * gx[i];
                const double ay = qy[i] + step * gy[i];
                const double mag = std::max(1.0, std::sqrt(ax * ax + ay * ay));
                px[i] = ax / mag;
                py[i] = ay / mag;
            }
            const double t_next = (1.0 + std::sqrt(1.0 + 4.0 * t * t)) / 2.0;
            const double momentum = (t - 1.0) / t_next;
            for (std::size_t i = 0; i < n; ++i) {
                qx[i] = px[i] + momentum * (px[i] - px_old[i]);
                qy[i] = py[i] + momentum * (py[i] - py_old[i]);
            }
            t = t_next;

            detail::tv_divergence(px, py, h, w, div);
            for (std::size_t i = 0; i < n; ++i) x[i] = rc[i] + lambda * div[i];
            const double obj = detail::tv_objective(x, rc, h, w, lambda);
            if (obj <= best_obj[ch]) {
                best_obj[ch] = obj;
                best[ch] = x;
            }
            history[ch][it] = best_obj[ch];
        }
        std::copy(best[ch].begin(), best[ch].end(), result.image.channel(ch).begin());
    }
    for (std::size_t it = 0; it < max_inner_iters; ++it) {
        double acc = 0.0;
        for (std::size_t ch = 0; ch < r.channels(); ++ch) acc += history[ch][it];
        result.objective[it] = acc;
    }
    return result;
}

inline Image tv_denoise(const Image& r, double v_in, double lambda_scale, std::size_t max_inner_iters)
{
    return tv_denoise_traced(r, v_in, lambda_scale, max_inner_iters).image;
}

struct TvParams {
    double lambda_scale = 1.0;
    std::size_t inner_iters = 60;
    /// Measurement-domain beta; see calibrate_beta for how it was obtained.
    double beta = 0.011;
};

inline DenoiserSpec tv_denoiser(TvParams params = {})
{
    DenoiserSpec spec;
    spec.name = "tv";
    spec.fn = [params](const Image& r, double v_in) {
        return tv_denoise(r, v_in, params.lambda_scale, params.inner_iters);
    };
    spec.beta = params.beta;
    return spec;
}

/// Default finite-difference step for mc_divergence.
inline double default_probe_step(const Image& r)
{
    double peak = 0.0;
    for (double p : r.pixels()) peak = std::max(peak, std::abs(p));
    return std::max(1e-3, 1e-3 * peak);
}

/// Monte-Carlo estimate of the divergence (Jacobian trace) of the denoiser at
/// r using C Rademacher probes:
///     (1/C) sum_c p_c^T [f(r + delta p_c) - f(r)] / delta.
inline double mc_divergence(const DenoiserSpec& spec, const Image& r, double v_in, std::size_t probes, double delta,
                            Rng& rng)
{
    if (probes == 0) throw ArgumentError("probe count must be at least 1");
    if (!(delta > 0.0)) throw ArgumentError("probe step must be positive");
    const Image base = spec.denoise(r, v_in);
    double acc = 0.0;
    Image perturbed = r;
    RealVector probe(r.size());
    for (std::size_t c = 0; c < probes; ++c) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            probe[i] = rng.rademacher();
            perturbed.pixels()[i] = r.pixels()[i] + delta * probe[i];
        }
        const Image out = spec.denoise(perturbed, v_in);
        double dot = 0.0;
        for (std::size_t i = 0; i < r.size(); ++i) dot += probe[i] * (out.pixels()[i] - base.pixels()[i]);
        acc += dot / delta;
    }
    return acc / static_cast<double>(probes);
}

enum class SelectionPolicy { BySd, ByIteration };

/// Ordered set of denoisers, chosen per EC iteration either by the current
/// input noise SD or by a fixed iteration schedule.
struct DenoiserBank {
    std::vector<DenoiserSpec> specs;
    SelectionPolicy policy = SelectionPolicy::BySd;

    static DenoiserBank single(DenoiserSpec spec)
    {
        return DenoiserBank{{std::move(spec)}, SelectionPolicy::BySd};
    }

    void validate() const
    {
        if (specs.empty()) throw ArgumentError("denoiser bank is empty");
        for (const auto& s : specs) s.validate();
        if (policy == SelectionPolicy::ByIteration)
            for (const auto& s : specs)
                if (!s.iteration_budget || *s.iteration_budget == 0)
                    throw ArgumentError("iteration-scheduled bank needs a positive budget for '" + s.name + "'");
    }

    /// Total iteration count covered by an iteration schedule.
    std::size_t scheduled_iterations() const
    {
        std::size_t total = 0;
        for (const auto& s : specs) total += s.iteration_budget.value_or(0);
        return total;
    }
};

/// By SD: the spec whose range contains current_sd; when several do, the
/// one with the lowest range wins. By iteration (1-based): the spec whose
/// cumulative budget window contains the iteration.
inline const DenoiserSpec& select_denoiser(const DenoiserBank& bank, double current_sd, std::size_t iteration)
{
    if (bank.specs.empty()) throw SelectionError("denoiser bank is empty");
    if (bank.policy == SelectionPolicy::BySd) {
        const DenoiserSpec* chosen = nullptr;
        for (const auto& s : bank.specs) {
            if (!s.sd_range.contains(current_sd)) continue;
            if (chosen == nullptr || s.sd_range.lo < chosen->sd_range.lo
                || (s.sd_range.lo == chosen->sd_range.lo && s.sd_range.hi < chosen->sd_range.hi))
                chosen = &s;
        }
        if (chosen == nullptr)
            throw SelectionError("no denoiser covers noise SD " + std::to_string(current_sd));
        return *chosen;
    }
    if (iteration == 0) throw SelectionError("iterations are numbered from 1");
    std::size_t end = 0;
    for (const auto& s : bank.specs) {
        end += s.iteration_budget.value_or(0);
        if (iteration <= end) return s;
    }
    throw SelectionError("iteration " + std::to_string(iteration) + " lies beyond the denoiser schedule ("
                         + std::to_string(end) + " iterations)");
}

/// Offline beta calibration: denoise each image at each noise SD, measure
/// the output/input MSE ratio, average, and convert to the measurement
/// domain with beta_from_mse_ratio.
inline double calibrate_beta(const DenoiserSpec& spec, std::span<const Image> images, std::span<const double> sds,
                             double dim_ratio, Rng& rng)
{
    if (images.empty() || sds.empty()) throw ArgumentError("calibration needs images and noise levels");
    double acc = 0.0;
    std::size_t count = 0;
    for (const auto& x : images) {
        for (double sd : sds) {
            const double v_in = sd * sd;
            Image r = x;
            for (auto& p : r.pixels()) p += sd * rng.normal();
            const Image out = spec.denoise(r, v_in);
            double mse = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double e = out.pixels()[i] - x.pixels()[i];
                mse += e * e;
            }
            mse /= static_cast<double>(x.size());
            acc += mse / v_in;
            ++count;
        }
    }
    return beta_from_mse_ratio(acc / static_cast<double>(count), dim_ratio);
}

} // namespace ecpr
