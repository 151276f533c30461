#pragma once

#include "ecpr/core.hpp"
#include "ecpr/fft.hpp"

#include <array>
#include <limits>

namespace ecpr {

/// Returned by psnr when the two images are identical.
inline constexpr double kPsnrExact = std::numeric_limits<double>::infinity();

inline void require_same_shape(const Image& a, const Image& b, const char* what)
{
    if (a.shape() != b.shape())
        throw ArgumentError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs "
                            + to_string(b.shape()));
}

inline double mse(const Image& estimate, const Image& truth)
{
    require_same_shape(estimate, truth, "mse");
    double acc = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double e = estimate.pixels()[i] - truth.pixels()[i];
        acc += e * e;
    }
    return acc / static_cast<double>(truth.size());
}

inline double psnr(const Image& estimate, const Image& truth, double peak = 255.0)
{
    require_same_shape(estimate, truth, "psnr");
    const double err = mse(estimate, truth);
    if (err == 0.0) return kPsnrExact;
    return 10.0 * std::log10(peak * peak / err);
}

struct SsimParams {
    std::size_t window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double peak = 255.0;
};

namespace detail {

inline RealVector gaussian_kernel(std::size_t size, double sigma)
{
    RealVector k(size);
    const double center = (static_cast<double>(size) - 1.0) / 2.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < size; ++i) {
        const double d = static_cast<double>(i) - center;
        k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += k[i];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Separable 'valid' filtering of an h x w plane.
inline RealVector filter_valid(std::span<const double> src, std::size_t h, std::size_t w, const RealVector& k)
{
    const auto n = k.size();
    const auto oh = h - n + 1;
    const auto ow = w - n + 1;
    RealVector tmp(h * ow);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += k[j] * src[r * w + c + j];
            tmp[r * ow + c] = acc;
        }
    RealVector out(oh * ow);
    for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += k[j] * tmp[(r + j) * ow + c];
            out[r * ow + c] = acc;
        }
    return out;
}

inline double ssim_plane(std::span<const double> a, std::span<const double> b, std::size_t h, std::size_t w,
                         const SsimParams& p)
{
    const auto k = gaussian_kernel(p.window, p.sigma);
    RealVector aa(a.size()), bb(a.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto mu_a = filter_valid(a, h, w, k);
    const auto mu_b = filter_valid(b, h, w, k);
    const auto e_aa = filter_valid(aa, h, w, k);
    const auto e_bb = filter_valid(bb, h, w, k);
    const auto e_ab = filter_valid(ab, h, w, k);
    const double c1 = (p.k1 * p.peak) * (p.k1 * p.peak);
    const double c2 = (p.k2 * p.peak) * (p.k2 * p.peak);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma2 = mu_a[i] * mu_a[i];
        const double mb2 = mu_b[i] * mu_b[i];
        const double mab = mu_a[i] * mu_b[i];
        const double va = e_aa[i] - ma2;
        const double vb = e_bb[i] - mb2;
        const double cov = e_ab[i] - mab;
        acc += ((2.0 * mab + c1) * (2.0 * cov + c2)) / ((ma2 + mb2 + c1) * (va + vb + c2));
    }
    return acc / static_cast<double>(mu_a.size());
}

} // namespace detail

/// Mean SSIM over all valid Gaussian windows; channels are averaged.
inline double ssim(const Image& estimate, const Image& truth, const SsimParams& params = {})
{
    require_same_shape(estimate, truth, "ssim");
    if (truth.height() < params.window || truth.width() < params.window)
        throw ArgumentError("ssim needs images of at least " + std::to_string(params.window) + " pixels per side");
    double acc = 0.0;
    for (std::size_t ch = 0; ch < truth.channels(); ++ch)
        acc += detail::ssim_plane(estimate.channel(ch), truth.channel(ch), truth.height(), truth.width(), params);
    return acc / static_cast<double>(truth.channels());
}

/// Transforms searched when aligning a reconstruction to the ground truth.
struct AmbiguityPolicy {
    bool resolve_flips = false;
    bool resolve_translations = false;
    bool per_channel_flip_align = false;

    static AmbiguityPolicy osf_grayscale() { return {true, true, false}; }
    static AmbiguityPolicy osf_color() { return {true, false, true}; }
    static AmbiguityPolicy cdp() { return {false, false, false}; }
};

/// 180-degree rotation of every channel: the conjugate flip, under which the
/// Fourier magnitudes of a real image are unchanged.
inline Image conjugate_flip(const Image& x)
{
    Image out(x.shape());
    const auto h = x.height();
    const auto w = x.width();
    for (std::size_t ch = 0; ch < x.channels(); ++ch)
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < w; ++c) out(r, c, ch) = x(h - 1 - r, w - 1 - c, ch);
    return out;
}

/// out(r, c) = x((r - dr) mod h, (c - dc) mod w) in every channel.
inline Image circular_shift(const Image& x, std::size_t dr, std::size_t dc)
{
    Image out(x.shape());
    const auto h = x.height();
    const auto w = x.width();
    dr %= h;
    dc %= w;
    for (std::size_t ch = 0; ch < x.channels(); ++ch)
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < w; ++c) out((r + dr) % h, (c + dc) % w, ch) = x(r, c, ch);
    return out;
}

inline double inner_product(const Image& a, const Image& b)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.pixels()[i] * b.pixels()[i];
    return acc;
}

namespace detail {

// corr[s] = sum_n shift(a, s)[n] * b[n], summed over channels, for all
// circular shifts s = (dr, dc), computed in the frequency domain.
inline RealVector circular_cross_correlation(const Image& a, const Image& b)
{
    const auto h = a.height();
    const auto w = a.width();
    Fft2d fft(h, w);
    RealVector corr(h * w, 0.0);
    ComplexVector fa(h * w), fb(h * w);
    for (std::size_t ch = 0; ch < a.channels(); ++ch) {
        const auto ac = a.channel(ch);
        const auto bc = b.channel(ch);
        for (std::size_t i = 0; i < h * w; ++i) {
            fa[i] = ac[i];
            fb[i] = bc[i];
        }
        fft.forward(fa);
        fft.forward(fb);
        // sum_n a(n - s) b(n) = IDFT(conj(A) B)(s) with unitary scaling sqrt(hw)
        for (std::size_t i = 0; i < h * w; ++i) fa[i] = std::conj(fa[i]) * fb[i];
        fft.inverse(fa);
        const double scale = std::sqrt(static_cast<double>(h * w));
        for (std::size_t i = 0; i < h * w; ++i) corr[i] += fa[i].real() * scale;
    }
    return corr;
}

} // namespace detail

/// Fixes channel 0 and replaces each of channels 1 and 2 by whichever of
/// {itself, its conjugate flip} correlates better with channel 0. Ties keep
/// the channel unflipped.
inline Image align_color_channels(const Image& x)
{
    if (x.channels() != 3) throw ArgumentError("align_color_channels needs a 3-channel image");
    Image out = x;
    const auto h = x.height();
    const auto w = x.width();
    const auto ref = x.channel(0);
    for (std::size_t ch = 1; ch < 3; ++ch) {
        const auto cur = x.channel(ch);
        double keep = 0.0;
        double flip = 0.0;
        for (std::size_t r = 0; r < h; ++r)
            for (std::size_t c = 0; c < w; ++c) {
                keep += cur[r * w + c] * ref[r * w + c];
                flip += cur[(h - 1 - r) * w + (w - 1 - c)] * ref[r * w + c];
            }
        if (flip > keep) {
            auto dst = out.channel(ch);
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < w; ++c) dst[r * w + c] = cur[(h - 1 - r) * w + (w - 1 - c)];
        }
    }
    return out;
}

/// Searches identity, optionally the conjugate flip, and optionally every
/// circular shift (applied to all channels jointly) for the transform of
/// `estimate` maximizing its correlation with `truth`. With per-channel flip
/// alignment the channel-aligned estimate is searched as well, next to the
/// unmodified one. Candidates are scored in the frequency domain; near-ties
/// are rescored exactly and resolved toward the unmodified estimate, then
/// the unflipped version, then the smallest shift.
inline Image resolve_ambiguity(const Image& estimate, const Image& truth, const AmbiguityPolicy& policy)
{
    require_same_shape(estimate, truth, "resolve_ambiguity");
    std::vector<Image> bases{estimate};
    if (policy.per_channel_flip_align && estimate.channels() == 3) {
        Image aligned = align_color_channels(estimate);
        if (aligned.pixels() != estimate.pixels()) bases.push_back(std::move(aligned));
    }

    struct Candidate {
        std::size_t base;
        bool flip;
        std::size_t shift; // row-major index dr * w + dc
        double score;
    };
    std::vector<Candidate> candidates;
    const auto w = truth.width();
    const std::array<bool, 2> flips{false, true};
    for (std::size_t b = 0; b < bases.size(); ++b) {
        for (bool flip : flips) {
            if (flip && !policy.resolve_flips) continue;
            const Image src = flip ? conjugate_flip(bases[b]) : bases[b];
            if (policy.resolve_translations) {
                const auto corr = detail::circular_cross_correlation(src, truth);
                for (std::size_t s = 0; s < corr.size(); ++s) candidates.push_back({b, flip, s, corr[s]});
            } else {
                candidates.push_back({b, flip, 0, inner_product(src, truth)});
            }
        }
    }

    double best = -std::numeric_limits<double>::infinity();
    for (const auto& c : candidates) best = std::max(best, c.score);
    double scale = 0.0;
    for (const auto& c : candidates) scale = std::max(scale, std::abs(c.score));
    const double slack = 1e-9 * std::max(scale, 1e-300);

    const Candidate* chosen = nullptr;
    double chosen_exact = -std::numeric_limits<double>::infinity();
    Image chosen_image;
    for (const auto& c : candidates) {
        if (c.score < best - slack) continue;
        Image t = c.flip ? conjugate_flip(bases[c.base]) : bases[c.base];
        if (c.shift != 0) t = circular_shift(t, c.shift / w, c.shift % w);
        const double exact = inner_product(t, truth);
        if (chosen == nullptr || exact > chosen_exact) {
            chosen = &c;
            chosen_exact = exact;
            chosen_image = std::move(t);
        }
    }
    return chosen_image;
}

} // namespace ecpr
