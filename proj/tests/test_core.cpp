#include "ecpr/core.hpp"

#include <gtest/gtest.h>

#include <cstring>

using namespace ecpr;

namespace {

double mean_of(const RealVector& v)
{
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
}

double variance_of(const RealVector& v)
{
    const double m = mean_of(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return acc / static_cast<double>(v.size() - 1);
}

} // namespace

TEST(Image, ValidatesShapeAndBuffer)
{
    EXPECT_THROW(Image(Shape{0, 4, 1}), ArgumentError);
    EXPECT_THROW(Image(Shape{4, 4, 2}), ArgumentError);
    EXPECT_THROW(Image(Shape{2, 2, 1}, RealVector(3)), ArgumentError);
    Image x(Shape{2, 3, 3}, 1.0);
    EXPECT_EQ(x.size(), 18u);
    x(1, 2, 2) = 7.0;
    EXPECT_EQ(x.pixels()[2 * 6 + 1 * 3 + 2], 7.0);
    EXPECT_EQ(x.channel(2)[5], 7.0);
}

TEST(Rng, MatchesPublishedSplitMix64Stream)
{
    // Reference outputs of SplitMix64 started from state 0.
    Rng rng(0);
    EXPECT_EQ(rng.next_u64(), 0xE220A8397B1DCDAFULL);
    EXPECT_EQ(rng.next_u64(), 0x6E789E6AA1B965F4ULL);
    EXPECT_EQ(rng.next_u64(), 0x06C45D188009454FULL);
}

TEST(Rng, SameSeedSameBytes)
{
    Rng a(12345);
    Rng b(12345);
    RealVector va(1000), vb(1000);
    for (std::size_t i = 0; i < 1000; ++i) {
        va[i] = a.normal();
        vb[i] = b.normal();
    }
    EXPECT_EQ(std::memcmp(va.data(), vb.data(), va.size() * sizeof(double)), 0);
}

TEST(Rng, SplitDoesNotAdvanceAndStreamsDiffer)
{
    Rng a(7);
    const auto s0 = a.split(0);
    const auto s0_again = a.split(0);
    const auto s1 = a.split(1);
    EXPECT_EQ(s0.state(), s0_again.state());
    EXPECT_NE(s0.state(), s1.state());
    EXPECT_EQ(a.state(), Rng(7).state());
}

TEST(Rng, UniformInUnitInterval)
{
    Rng rng(3);
    for (int i = 0; i < 100000; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
}

TEST(ComplexGaussian, ZeroVarianceGivesZeros)
{
    Rng rng(1);
    const auto v = sample_circular_complex_gaussian(rng, 5, 0.0);
    ASSERT_EQ(v.size(), 5u);
    for (const auto& c : v) EXPECT_EQ(c, Complex(0.0, 0.0));
}

TEST(ComplexGaussian, NegativeVarianceRejected)
{
    Rng rng(1);
    EXPECT_THROW(sample_circular_complex_gaussian(rng, 5, -1.0), ArgumentError);
    EXPECT_THROW(sample_real_gaussian(rng, 5, -1.0), ArgumentError);
}

TEST(ComplexGaussian, TotalVarianceConvention)
{
    Rng rng(2024);
    const std::size_t n = 1000000;
    const auto v = sample_circular_complex_gaussian(rng, n, 4.0);
    RealVector mag2(n), re(n), im(n);
    for (std::size_t i = 0; i < n; ++i) {
        mag2[i] = std::norm(v[i]);
        re[i] = v[i].real();
        im[i] = v[i].imag();
    }
    const double m = mean_of(mag2);
    EXPECT_GE(m, 3.98);
    EXPECT_LE(m, 4.02);
    EXPECT_NEAR(variance_of(re), 2.0, 0.02);
    EXPECT_NEAR(variance_of(im), 2.0, 0.02);
}

TEST(RealGaussian, VarianceAndDeterminism)
{
    Rng rng(99);
    const auto v = sample_real_gaussian(rng, 1000000, 1.0);
    const double var = variance_of(v);
    EXPECT_GE(var, 0.995);
    EXPECT_LE(var, 1.005);

    Rng a(5), b(5);
    const auto x = sample_real_gaussian(a, 1000, 3.0);
    const auto y = sample_real_gaussian(b, 1000, 3.0);
    EXPECT_EQ(std::memcmp(x.data(), y.data(), x.size() * sizeof(double)), 0);

    Rng c(5);
    for (double p : sample_real_gaussian(c, 10, 0.0)) EXPECT_EQ(p, 0.0);
}
