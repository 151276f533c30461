#include "ecpr/io.hpp"
#include "ecpr/metrics.hpp"

#include <gtest/gtest.h>

using namespace ecpr;

namespace {

Image random_image(Rng& rng, Shape s)
{
    Image x(s);
    for (auto& p : x.pixels()) p = 255.0 * rng.uniform();
    return x;
}

// SSIM by direct summation over every 11x11 window, Gaussian weights
// computed inline, mean of the per-window index.
double reference_ssim(const Image& a, const Image& b)
{
    const int win = 11;
    const double sigma = 1.5;
    const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
    const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
    std::array<std::array<double, 11>, 11> wgt{};
    double total = 0.0;
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
            wgt[i][j] = std::exp(-((i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0)) / (2.0 * sigma * sigma));
            total += wgt[i][j];
        }
    const int h = static_cast<int>(a.height());
    const int w = static_cast<int>(a.width());
    double acc = 0.0;
    int count = 0;
    for (std::size_t ch = 0; ch < a.channels(); ++ch) {
        double plane = 0.0;
        int n = 0;
        for (int r = 0; r + win <= h; ++r)
            for (int c = 0; c + win <= w; ++c) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int i = 0; i < win; ++i)
                    for (int j = 0; j < win; ++j) {
                        const double k = wgt[i][j] / total;
                        const double pa = a(r + i, c + j, ch);
                        const double pb = b(r + i, c + j, ch);
                        ma += k * pa;
                        mb += k * pb;
                        saa += k * pa * pa;
                        sbb += k * pb * pb;
                        sab += k * pa * pb;
                    }
                const double va = saa - ma * ma;
                const double vb = sbb - mb * mb;
                const double cov = sab - ma * mb;
                plane += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++n;
            }
        acc += plane / n;
        ++count;
    }
    return acc / count;
}

} // namespace

TEST(Psnr, ExactMatchIsInfinite)
{
    const Image x(Shape{4, 4, 1}, 9.0);
    EXPECT_EQ(psnr(x, x), kPsnrExact);
    EXPECT_TRUE(std::isinf(psnr(x, x)));
}

TEST(Psnr, UnitErrorEverywhere)
{
    Rng rng(1);
    const Image x = random_image(rng, Shape{8, 8, 3});
    Image y = x;
    for (auto& p : y.pixels()) p += 1.0;
    EXPECT_NEAR(psnr(y, x), 20.0 * std::log10(255.0), 1e-12);
    EXPECT_NEAR(psnr(y, x), 48.13, 0.005);
}

TEST(Psnr, CheckerboardHalfPeak)
{
    Image x(Shape{8, 8, 1}, 0.0);
    Image y = x;
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 8; ++c) y(r, c) = ((r + c) % 2 == 0) ? 255.0 : 0.0;
    EXPECT_NEAR(psnr(y, x), 10.0 * std::log10(2.0), 1e-12);
    EXPECT_NEAR(psnr(y, x), 3.01, 0.005);
}

TEST(Psnr, ShapeMismatchRejected)
{
    EXPECT_THROW(psnr(Image(Shape{4, 4, 1}), Image(Shape{4, 5, 1})), ArgumentError);
}

TEST(Ssim, MatchesDirectSummation)
{
    Rng rng(2);
    const Image x = make_phantom(PhantomSpec{32, 24, 1, 5, 3});
    Image y = x;
    for (auto& p : y.pixels()) p += 20.0 * rng.normal();
    EXPECT_NEAR(ssim(y, x), reference_ssim(y, x), 1e-10);
    const Image c = make_phantom(PhantomSpec{16, 16, 3, 3, 4});
    const Image d = random_image(rng, c.shape());
    EXPECT_NEAR(ssim(d, c), reference_ssim(d, c), 1e-10);
}

TEST(Ssim, IdentityIsOne)
{
    const Image x = make_phantom(PhantomSpec{32, 32, 1, 4, 5});
    EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
}

TEST(Ssim, InvertedImageScoresLow)
{
    const Image x = make_phantom(PhantomSpec{64, 64, 1, 6, 6});
    Image inv = x;
    for (auto& p : inv.pixels()) p = 255.0 - p;
    const double s = ssim(inv, x);
    RecordProperty("ssim_inverted", std::to_string(s));
    EXPECT_LT(s, 0.5);
}

TEST(Ssim, SmallNoiseScoresHigh)
{
    Rng rng(7);
    const Image x = make_phantom(PhantomSpec{64, 64, 1, 6, 7});
    Image y = x;
    for (auto& p : y.pixels()) p += rng.normal();
    const double s = ssim(y, x);
    RecordProperty("ssim_sd1", std::to_string(s));
    EXPECT_GT(s, 0.95);
}

TEST(Ssim, SymmetricAndValidated)
{
    Rng rng(8);
    const Image a = random_image(rng, Shape{20, 20, 1});
    const Image b = random_image(rng, Shape{20, 20, 1});
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
    EXPECT_THROW(ssim(Image(Shape{10, 20, 1}), Image(Shape{10, 20, 1})), ArgumentError);
}

TEST(Ambiguity, FlipUndone)
{
    Rng rng(9);
    const Image x = random_image(rng, Shape{12, 10, 1});
    const Image aligned = resolve_ambiguity(conjugate_flip(x), x, AmbiguityPolicy::osf_color());
    EXPECT_EQ(aligned.pixels(), x.pixels());
}

TEST(Ambiguity, ShiftUndone)
{
    Rng rng(10);
    const Image x = random_image(rng, Shape{16, 16, 1});
    const Image aligned = resolve_ambiguity(circular_shift(x, 3, 5), x, AmbiguityPolicy::osf_grayscale());
    EXPECT_EQ(aligned.pixels(), x.pixels());
}

TEST(Ambiguity, IdentityKeptUnderEveryPolicy)
{
    Rng rng(11);
    const Image x = random_image(rng, Shape{10, 10, 3});
    for (const auto& policy : {AmbiguityPolicy::cdp(), AmbiguityPolicy::osf_color(), AmbiguityPolicy::osf_grayscale()})
        EXPECT_EQ(resolve_ambiguity(x, x, policy).pixels(), x.pixels());
}

TEST(Ambiguity, CdpPolicyLeavesFlipsAlone)
{
    Rng rng(12);
    const Image x = random_image(rng, Shape{8, 8, 1});
    const Image f = conjugate_flip(x);
    EXPECT_EQ(resolve_ambiguity(f, x, AmbiguityPolicy::cdp()).pixels(), f.pixels());
}

TEST(Ambiguity, PsnrInvariantOverGroup)
{
    Rng rng(13);
    for (int t = 0; t < 50; ++t) {
        const std::size_t h = 6 + static_cast<std::size_t>(rng.uniform() * 10);
        const std::size_t w = 6 + static_cast<std::size_t>(rng.uniform() * 10);
        const Image x = random_image(rng, Shape{h, w, 1});
        const bool flip = rng.uniform() < 0.5;
        const auto dr = static_cast<std::size_t>(rng.uniform() * h);
        const auto dc = static_cast<std::size_t>(rng.uniform() * w);
        Image t_x = circular_shift(flip ? conjugate_flip(x) : x, dr, dc);
        if (rng.uniform() < 0.5) t_x = conjugate_flip(t_x);
        const Image aligned = resolve_ambiguity(t_x, x, AmbiguityPolicy::osf_grayscale());
        EXPECT_EQ(psnr(aligned, x), psnr(x, x)) << "case " << t;
    }
}

TEST(Ambiguity, NeverLowersCorrelation)
{
    Rng rng(14);
    for (int t = 0; t < 20; ++t) {
        const Image x = random_image(rng, Shape{8, 8, 1});
        const Image e = random_image(rng, Shape{8, 8, 1});
        const Image aligned = resolve_ambiguity(e, x, AmbiguityPolicy::osf_grayscale());
        EXPECT_GE(inner_product(aligned, x), inner_product(e, x));
    }
}

TEST(Ambiguity, ColorPolicyAlignsChannelsFirst)
{
    Rng rng(15);
    const Image plane = random_image(rng, Shape{8, 8, 1});
    Image x(Shape{8, 8, 3});
    for (std::size_t ch = 0; ch < 3; ++ch)
        std::copy(plane.pixels().begin(), plane.pixels().end(), x.channel(ch).begin());
    Image est = x;
    const Image flipped = conjugate_flip(plane);
    std::copy(flipped.pixels().begin(), flipped.pixels().end(), est.channel(2).begin());
    EXPECT_EQ(resolve_ambiguity(est, x, AmbiguityPolicy::osf_color()).pixels(), x.pixels());
}

TEST(Transforms, ShiftAndFlipDefinitions)
{
    const Image x(Shape{2, 3, 1}, RealVector{1, 2, 3, 4, 5, 6});
    EXPECT_EQ(conjugate_flip(x).pixels(), (RealVector{6, 5, 4, 3, 2, 1}));
    EXPECT_EQ(circular_shift(x, 1, 1).pixels(), (RealVector{6, 4, 5, 3, 1, 2}));
}
