#pragma once

#include "ecpr/core.hpp"

#include <fftw3.h>

#include <memory>
#include <mutex>

namespace ecpr {

namespace detail {
// Plan creation in FFTW is not thread-safe; execution with the new-array
// interface is.
inline std::mutex& fftw_planner_mutex()
{
    static std::mutex m;
    return m;
}
} // namespace detail

/// Unitary 2-D DFT of a fixed size. Immutable after construction and safe to
/// share between threads.
class Fft2d {
public:
    Fft2d(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols)
    {
        if (rows == 0 || cols == 0) throw ArgumentError("FFT size must be positive");
        const auto n = rows * cols;
        auto* buf = fftw_alloc_complex(n);
        if (buf == nullptr) throw std::bad_alloc();
        {
            std::lock_guard lock(detail::fftw_planner_mutex());
            const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
            forward_ = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), buf, buf,
                                        FFTW_FORWARD, flags);
            backward_ = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), buf, buf,
                                         FFTW_BACKWARD, flags);
        }
        fftw_free(buf);
        if (forward_ == nullptr || backward_ == nullptr) {
            destroy();
            throw std::runtime_error("FFTW plan creation failed");
        }
        scale_ = 1.0 / std::sqrt(static_cast<double>(n));
    }

    Fft2d(const Fft2d&) = delete;
    Fft2d& operator=(const Fft2d&) = delete;
    ~Fft2d() { destroy(); }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return rows_ * cols_; }

    /// In-place unitary forward transform, exp(-2 pi i k n / N) kernel.
    void forward(std::span<Complex> data) const { run(forward_, data); }

    /// In-place unitary inverse transform.
    void inverse(std::span<Complex> data) const { run(backward_, data); }

private:
    void run(fftw_plan plan, std::span<Complex> data) const
    {
        if (data.size() != size())
            throw ArgumentError("FFT buffer has " + std::to_string(data.size()) + " entries, expected "
                                + std::to_string(size()));
        auto* p = reinterpret_cast<fftw_complex*>(data.data());
        fftw_execute_dft(plan, p, p);
        for (auto& c : data) c *= scale_;
    }

    void destroy()
    {
        std::lock_guard lock(detail::fftw_planner_mutex());
        if (forward_ != nullptr) fftw_destroy_plan(forward_);
        if (backward_ != nullptr) fftw_destroy_plan(backward_);
        forward_ = nullptr;
        backward_ = nullptr;
    }

    std::size_t rows_;
    std::size_t cols_;
    double scale_ = 1.0;
    fftw_plan forward_ = nullptr;
    fftw_plan backward_ = nullptr;
};

} // namespace ecpr
