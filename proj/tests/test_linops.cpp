#include "ecpr/linops.hpp"

#include <gtest/gtest.h>

using namespace ecpr;

namespace {

Image random_image(Rng& rng, Shape s)
{
    Image x(s);
    for (auto& p : x.pixels()) p = 255.0 * rng.uniform();
    return x;
}

ComplexVector random_complex(Rng& rng, std::size_t n)
{
    return sample_circular_complex_gaussian(rng, n, 1.0);
}

// Direct O(N^2) unitary 2-D DFT with the e^{-2 pi i k n / N} convention.
ComplexVector naive_dft2(const ComplexVector& x, std::size_t rows, std::size_t cols)
{
    ComplexVector out(rows * cols);
    const double norm = 1.0 / std::sqrt(static_cast<double>(rows * cols));
    for (std::size_t k1 = 0; k1 < rows; ++k1)
        for (std::size_t k2 = 0; k2 < cols; ++k2) {
            Complex acc = 0.0;
            for (std::size_t n1 = 0; n1 < rows; ++n1)
                for (std::size_t n2 = 0; n2 < cols; ++n2) {
                    const double phase = -2.0 * std::numbers::pi
                                         * (static_cast<double>(k1 * n1) / static_cast<double>(rows)
                                            + static_cast<double>(k2 * n2) / static_cast<double>(cols));
                    acc += x[n1 * cols + n2] * std::polar(1.0, phase);
                }
            out[k1 * cols + k2] = acc * norm;
        }
    return out;
}

double max_abs_diff(std::span<const Complex> a, std::span<const Complex> b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Complex dot(std::span<const Complex> a, std::span<const Complex> b)
{
    Complex acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::conj(b[i]) * a[i];
    return acc;
}

template <typename Op>
void check_orthogonality(const Op& op, Rng& rng, int trials)
{
    for (int t = 0; t < trials; ++t) {
        const Image x = random_image(rng, op.image_shape());
        const auto z = op.forward(x);
        const auto back = op.adjoint(z);
        double err = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) err = std::max(err, std::abs(back[i] - x.pixels()[i]));
        ASSERT_LE(err, 1e-10);
        const double nx = std::sqrt(squared_norm(x.pixels()));
        const double nz = std::sqrt(squared_norm(z));
        ASSERT_LE(std::abs(nz - nx) / nx, 1e-10);
    }
}

template <typename Op>
void check_adjoint_identity(const Op& op, Rng& rng)
{
    for (int t = 0; t < 20; ++t) {
        const auto x = random_complex(rng, op.image_shape().size());
        const auto z = random_complex(rng, op.output_size());
        const auto ax = op.forward_complex(x);
        const auto ahz = op.adjoint(z);
        const double bound = 1e-8 * std::sqrt(squared_norm(x)) * std::sqrt(squared_norm(z));
        ASSERT_LE(std::abs(dot(ax, z) - dot(x, ahz)), bound);
    }
}

} // namespace

TEST(Osf, ImpulseGivesFlatSpectrum)
{
    const auto op = OsfOperator::oversampled(Shape{2, 2, 1});
    Image x(Shape{2, 2, 1});
    x(0, 0) = 1.0;
    const auto z = op.forward(x);
    ASSERT_EQ(z.size(), 16u);
    for (const auto& v : z) EXPECT_NEAR(std::abs(v), 0.25, 1e-15);
}

TEST(Osf, MatchesNaiveDftOfZeroPaddedImage)
{
    Rng rng(11);
    const Shape s{5, 3, 1};
    const OsfOperator op(s, 8, 7);
    const Image x = random_image(rng, s);
    ComplexVector padded(8 * 7);
    for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 3; ++c) padded[r * 7 + c] = x(r, c);
    EXPECT_LE(max_abs_diff(op.forward(x), naive_dft2(padded, 8, 7)), 1e-9);
}

TEST(Cdp, MatchesNaiveMaskedDft)
{
    Rng rng(12);
    const Shape s{4, 6, 1};
    const CdpOperator op(s, 3, rng);
    const Image x = random_image(rng, s);
    const auto z = op.forward(x);
    for (std::size_t k = 0; k < 3; ++k) {
        ComplexVector masked(24);
        for (std::size_t i = 0; i < 24; ++i) masked[i] = op.codes().code(k)[i] * x.pixels()[i] / std::sqrt(3.0);
        const auto ref = naive_dft2(masked, 4, 6);
        EXPECT_LE(max_abs_diff(std::span<const Complex>(z).subspan(k * 24, 24), ref), 1e-9);
    }
}

TEST(Osf, OrthogonalAndParseval)
{
    Rng rng(1);
    check_orthogonality(OsfOperator::oversampled(Shape{32, 32, 1}), rng, 100);
    check_orthogonality(OsfOperator::oversampled(Shape{8, 12, 3}), rng, 10);
}

TEST(Cdp, OrthogonalAndParseval)
{
    Rng rng(2);
    check_orthogonality(CdpOperator(Shape{32, 32, 1}, 4, rng), rng, 100);
    check_orthogonality(CdpOperator(Shape{8, 12, 3}, 2, rng), rng, 10);
}

TEST(Operators, AdjointIdentity)
{
    Rng rng(3);
    check_adjoint_identity(OsfOperator::oversampled(Shape{16, 12, 1}), rng);
    check_adjoint_identity(CdpOperator(Shape{16, 12, 3}, 4, rng), rng);
}

TEST(Operators, ZeroMapsToZeroAndLinearity)
{
    Rng rng(4);
    const CdpOperator cdp(Shape{8, 8, 1}, 4, rng);
    const auto osf = OsfOperator::oversampled(Shape{8, 8, 1});
    for (const auto& v : cdp.forward(Image(Shape{8, 8, 1}))) EXPECT_EQ(v, Complex(0.0, 0.0));
    for (const auto& v : osf.adjoint(ComplexVector(osf.output_size()))) EXPECT_EQ(v, Complex(0.0, 0.0));

    const Image x = random_image(rng, Shape{8, 8, 1});
    const Image y = random_image(rng, Shape{8, 8, 1});
    Image combo(Shape{8, 8, 1});
    for (std::size_t i = 0; i < x.size(); ++i) combo.pixels()[i] = 2.0 * x.pixels()[i] - 3.0 * y.pixels()[i];
    const auto zx = cdp.forward(x);
    const auto zy = cdp.forward(y);
    const auto zc = cdp.forward(combo);
    for (std::size_t i = 0; i < zc.size(); ++i) EXPECT_NEAR(std::abs(zc[i] - (2.0 * zx[i] - 3.0 * zy[i])), 0.0, 1e-10);
}

TEST(Operators, DimensionMismatchRejected)
{
    Rng rng(5);
    const CdpOperator cdp(Shape{8, 8, 1}, 2, rng);
    const auto osf = OsfOperator::oversampled(Shape{8, 8, 1});
    EXPECT_THROW(cdp.forward(Image(Shape{8, 9, 1})), ArgumentError);
    EXPECT_THROW(osf.forward(Image(Shape{8, 8, 3})), ArgumentError);
    EXPECT_THROW(cdp.adjoint(ComplexVector(5)), ArgumentError);
    EXPECT_THROW(osf.adjoint(ComplexVector(5)), ArgumentError);
    EXPECT_THROW(OsfOperator(Shape{8, 8, 1}, 4, 8), ArgumentError);
}

TEST(SufficientStatistic, RecoversNoiselessImage)
{
    Rng rng(6);
    const CdpOperator op(Shape{16, 16, 1}, 4, rng);
    const Image x = random_image(rng, op.image_shape());
    const Image r = sufficient_statistic(op, op.forward(x));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(r.pixels()[i], x.pixels()[i], 1e-10);
}

TEST(SufficientStatistic, HalvesTheNoiseVariance)
{
    Rng rng(7);
    const Shape s{64, 64, 1};
    const CdpOperator op(s, 4, rng);
    const Image x = random_image(rng, s);
    const auto zx = op.forward(x);
    double acc = 0.0;
    std::size_t count = 0;
    while (count < 1000000) {
        auto z = zx;
        const auto n = sample_circular_complex_gaussian(rng, z.size(), 4.0);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += n[i];
        const Image r = sufficient_statistic(op, z);
        for (std::size_t i = 0; i < r.size(); ++i) {
            const double e = r.pixels()[i] - x.pixels()[i];
            acc += e * e;
        }
        count += r.size();
    }
    EXPECT_NEAR(acc / static_cast<double>(count), 2.0, 0.04);
}

TEST(SufficientStatistic, DiscardsImaginaryPart)
{
    // j * A e has real part Re{A^H (j A e)} = Re{j e} = 0 for real e.
    Rng rng(8);
    const CdpOperator op(Shape{8, 8, 1}, 4, rng);
    Image e(Shape{8, 8, 1});
    e(3, 4) = 1.0;
    auto z = op.forward(e);
    for (auto& v : z) v *= Complex(0.0, 5.0);
    const Image r = sufficient_statistic(op, z);
    for (double p : r.pixels()) EXPECT_NEAR(p, 0.0, 1e-12);
}

TEST(CdpCodes, UnitModulusDeterministicAndUniform)
{
    Rng a(9), b(9);
    const auto ca = make_cdp_codes(a, 1000, 1000);
    const auto cb = make_cdp_codes(b, 1000, 1000);
    EXPECT_EQ(ca.values, cb.values);
    constexpr int kBins = 20;
    std::array<double, kBins> hist{};
    for (const auto& c : ca.values) {
        ASSERT_NEAR(std::abs(c), 1.0, 1e-12);
        double ph = std::arg(c);
        if (ph < 0.0) ph += 2.0 * std::numbers::pi;
        const int bin = std::min(kBins - 1, static_cast<int>(ph / (2.0 * std::numbers::pi) * kBins));
        hist[bin] += 1.0;
    }
    const double expected = static_cast<double>(ca.values.size()) / kBins;
    double chi2 = 0.0;
    for (double h : hist) chi2 += (h - expected) * (h - expected) / expected;
    // 95th percentile of chi-square with 19 degrees of freedom.
    EXPECT_LT(chi2, 30.144);
}

TEST(Operators, DimensionRatio)
{
    Rng rng(10);
    EXPECT_DOUBLE_EQ(dimension_ratio(CdpOperator(Shape{8, 8, 1}, 4, rng)), 0.25);
    EXPECT_DOUBLE_EQ(dimension_ratio(OsfOperator::oversampled(Shape{8, 8, 3})), 0.25);
}
