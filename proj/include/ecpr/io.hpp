#pragma once

// File formats: 8-bit binary PGM/PPM images, the ECPV raw vector container,
// and a seeded synthetic phantom.
//
// ECPV layout (16-byte header, then payload, all little-endian):
//   "ECPV" | version u8 = 1 | dtype u8 (1 = f32, 2 = c64) | length u32 |
//   6 reserved zero bytes | length elements (c64 = two f32: re, im)

#include "ecpr/core.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ecpr {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p)
{
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16)
           | (std::uint32_t(p[3]) << 24);
}

inline void put_f32(std::string& out, float f)
{
    put_u32(out, std::bit_cast<std::uint32_t>(f));
}

inline float get_f32(const unsigned char* p)
{
    return std::bit_cast<float>(get_u32(p));
}

inline void put_f64(std::string& out, double d)
{
    const auto bits = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline double get_f64(const unsigned char* p)
{
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

// Next whitespace-separated header token of a PNM file, skipping comments.
inline std::string pnm_token(const std::string& s, std::size_t& pos)
{
    while (pos < s.size()) {
        if (s[pos] == '#') {
            while (pos < s.size() && s[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(s[pos]))) {
            ++pos;
        } else {
            break;
        }
    }
    const auto start = pos;
    while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    return s.substr(start, pos - start);
}

} // namespace detail

inline unsigned char quantize_pixel(double p)
{
    if (!std::isfinite(p)) return 0;
    return static_cast<unsigned char>(std::lround(std::clamp(p, 0.0, 255.0)));
}

/// P5 for one channel, P6 for three; pixels are rounded and clipped to [0,255].
inline std::string encode_pnm(const Image& x)
{
    std::string out = (x.channels() == 1 ? "P5\n" : "P6\n") + std::to_string(x.width()) + " "
                      + std::to_string(x.height()) + "\n255\n";
    for (std::size_t r = 0; r < x.height(); ++r)
        for (std::size_t c = 0; c < x.width(); ++c)
            for (std::size_t ch = 0; ch < x.channels(); ++ch) out.push_back(static_cast<char>(quantize_pixel(x(r, c, ch))));
    return out;
}

inline Image decode_pnm(const std::string& bytes, const std::string& name = "image")
{
    std::size_t pos = 0;
    const auto magic = detail::pnm_token(bytes, pos);
    if (magic != "P5" && magic != "P6") throw IoError("'" + name + "' is not a binary PGM/PPM file");
    const std::size_t channels = magic == "P5" ? 1 : 3;
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(detail::pnm_token(bytes, pos));
        h = std::stoul(detail::pnm_token(bytes, pos));
        maxval = std::stoul(detail::pnm_token(bytes, pos));
    } catch (const std::exception&) {
        throw IoError("'" + name + "' has a malformed header");
    }
    if (maxval != 255) throw IoError("'" + name + "': only 8-bit images (maxval 255) are supported");
    if (w == 0 || h == 0) throw IoError("'" + name + "' has zero size");
    ++pos; // single whitespace after maxval
    if (bytes.size() < pos + w * h * channels) throw IoError("'" + name + "' is truncated");
    Image x(Shape{h, w, channels});
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
            for (std::size_t ch = 0; ch < channels; ++ch) x(r, c, ch) = *p++;
    return x;
}

inline void write_pnm(const std::filesystem::path& path, const Image& x)
{
    detail::write_file(path, encode_pnm(x));
}

inline Image read_pnm(const std::filesystem::path& path)
{
    return decode_pnm(detail::read_file(path), path.string());
}

enum class VectorDtype : std::uint8_t { F32 = 1, C64 = 2 };

inline constexpr std::size_t kEcpvHeaderSize = 16;

inline std::string ecpv_header(VectorDtype dtype, std::size_t length)
{
    if (length > 0xFFFFFFFFu) throw ArgumentError("vector too long for the ECPV container");
    std::string out = "ECPV";
    out.push_back(1);
    out.push_back(static_cast<char>(dtype));
    detail::put_u32(out, static_cast<std::uint32_t>(length));
    out.append(6, '\0');
    return out;
}

inline std::string encode_real_vector(std::span<const double> v)
{
    std::string out = ecpv_header(VectorDtype::F32, v.size());
    for (double x : v) detail::put_f32(out, static_cast<float>(x));
    return out;
}

inline std::string encode_complex_vector(std::span<const Complex> v)
{
    std::string out = ecpv_header(VectorDtype::C64, v.size());
    for (const auto& z : v) {
        detail::put_f32(out, static_cast<float>(z.real()));
        detail::put_f32(out, static_cast<float>(z.imag()));
    }
    return out;
}

namespace detail {
inline std::pair<VectorDtype, std::size_t> parse_ecpv_header(const std::string& bytes, const std::string& name)
{
    if (bytes.size() < kEcpvHeaderSize || bytes.compare(0, 4, "ECPV") != 0)
        throw IoError("'" + name + "' is not an ECPV file");
    if (bytes[4] != 1) throw IoError("'" + name + "': unsupported ECPV version");
    const auto dtype = static_cast<unsigned char>(bytes[5]);
    if (dtype != 1 && dtype != 2) throw IoError("'" + name + "': unknown ECPV dtype");
    const auto len = get_u32(reinterpret_cast<const unsigned char*>(bytes.data()) + 6);
    const std::size_t elem = dtype == 1 ? 4 : 8;
    if (bytes.size() != kEcpvHeaderSize + len * elem) throw IoError("'" + name + "': ECPV payload length mismatch");
    return {static_cast<VectorDtype>(dtype), len};
}
} // namespace detail

inline RealVector decode_real_vector(const std::string& bytes, const std::string& name = "vector")
{
    const auto [dtype, len] = detail::parse_ecpv_header(bytes, name);
    if (dtype != VectorDtype::F32) throw IoError("'" + name + "': expected a real (f32) vector");
    RealVector v(len);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + kEcpvHeaderSize;
    for (std::size_t i = 0; i < len; ++i) v[i] = detail::get_f32(p + 4 * i);
    return v;
}

inline ComplexVector decode_complex_vector(const std::string& bytes, const std::string& name = "vector")
{
    const auto [dtype, len] = detail::parse_ecpv_header(bytes, name);
    if (dtype != VectorDtype::C64) throw IoError("'" + name + "': expected a complex (c64) vector");
    ComplexVector v(len);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + kEcpvHeaderSize;
    for (std::size_t i = 0; i < len; ++i) v[i] = Complex(detail::get_f32(p + 8 * i), detail::get_f32(p + 8 * i + 4));
    return v;
}

inline void write_real_vector(const std::filesystem::path& path, std::span<const double> v)
{
    detail::write_file(path, encode_real_vector(v));
}

inline void write_complex_vector(const std::filesystem::path& path, std::span<const Complex> v)
{
    detail::write_file(path, encode_complex_vector(v));
}

inline RealVector read_real_vector(const std::filesystem::path& path)
{
    return decode_real_vector(detail::read_file(path), path.string());
}

inline ComplexVector read_complex_vector(const std::filesystem::path& path)
{
    return decode_complex_vector(detail::read_file(path), path.string());
}

struct PhantomSpec {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t channels = 1;
    std::size_t rectangles = 6;
    std::uint64_t seed = 0;
};

/// Piecewise-constant rectangles over a diagonal gradient ramp, integer
/// values in [0,255]. Each channel of a color phantom gets its own rectangle levels.
inline Image make_phantom(const PhantomSpec& spec)
{
    Image x(Shape{spec.height, spec.width, spec.channels});
    Rng rng(spec.seed);
    const double hs = static_cast<double>(spec.height);
    const double ws = static_cast<double>(spec.width);
    for (std::size_t ch = 0; ch < spec.channels; ++ch)
        for (std::size_t r = 0; r < spec.height; ++r)
            for (std::size_t c = 0; c < spec.width; ++c)
                x(r, c, ch) = std::round(20.0 + 60.0 * (static_cast<double>(r) / hs + static_cast<double>(c) / ws) / 2.0);
    for (std::size_t k = 0; k < spec.rectangles; ++k) {
        const auto r0 = static_cast<std::size_t>(rng.uniform() * 0.75 * hs);
        const auto c0 = static_cast<std::size_t>(rng.uniform() * 0.75 * ws);
        const auto rh = 2 + static_cast<std::size_t>(rng.uniform() * 0.4 * hs);
        const auto cw = 2 + static_cast<std::size_t>(rng.uniform() * 0.4 * ws);
        std::array<double, 3> level{};
        for (std::size_t ch = 0; ch < spec.channels; ++ch) level[ch] = std::round(40.0 + 200.0 * rng.uniform());
        for (std::size_t r = r0; r < std::min(spec.height, r0 + rh); ++r)
            for (std::size_t c = c0; c < std::min(spec.width, c0 + cw); ++c)
                for (std::size_t ch = 0; ch < spec.channels; ++ch) x(r, c, ch) = level[ch];
    }
    return x;
}

} // namespace ecpr
