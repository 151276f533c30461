// Acceptance checks; prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.
#include "ecpr/ecpr.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>

using namespace ecpr;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail)
{
    std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a)
{
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

Image random_image(Rng& rng, Shape s)
{
    Image x(s);
    for (auto& p : x.pixels()) p = 255.0 * rng.uniform();
    return x;
}

template <typename Op>
void orthogonality_stats(const Op& op, Rng& rng, double& worst_adj, double& worst_parseval)
{
    for (int t = 0; t < 100; ++t) {
        const Image x = random_image(rng, op.image_shape());
        const ComplexVector z = op.forward(x);
        const ComplexVector back = op.adjoint(z);
        double err = 0.0, xx = 0.0, zz = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            err = std::max(err, std::abs(back[i] - x.pixels()[i]));
            xx += x.pixels()[i] * x.pixels()[i];
        }
        for (const auto& v : z) zz += std::norm(v);
        worst_adj = std::max(worst_adj, err);
        worst_parseval = std::max(worst_parseval, std::abs(zz - xx) / xx);
    }
}

void criterion1()
{
    const auto t0 = Clock::now();
    Rng rng(101);
    const auto osf = OsfOperator::oversampled(Shape{32, 32, 1});
    const CdpOperator cdp(Shape{32, 32, 1}, 4, rng);
    double adj = 0.0, par = 0.0;
    orthogonality_stats(osf, rng, adj, par);
    orthogonality_stats(cdp, rng, adj, par);
    const double secs = seconds_since(t0);
    const bool ok = osf.output_size() == 64 * 64 && adj <= 1e-10 && par <= 1e-10 && secs < 5.0;
    report(1, ok,
           "operator orthogonality, max |A^H A x - x| = " + fmt("%.2e", adj) + ", Parseval rel err = "
               + fmt("%.2e", par) + ", " + fmt("%.2f s", secs));
}

struct Tuple {
    double y;
    Complex zbar;
    double vbar;
    double v;
};

double neg_log_post(const Tuple& t, Complex z)
{
    const double r = t.y - std::abs(z);
    return r * r / (2.0 * t.v) + std::norm(z - t.zbar) / t.vbar;
}

Complex grid_map(const Tuple& t)
{
    const double radius = 1.5 * std::max(t.y, std::abs(t.zbar)) + 1.0;
    double cx = 0.0, cy = 0.0, half = radius;
    const int n = 40;
    for (int level = 0; level < 60; ++level) {
        double best = std::numeric_limits<double>::infinity();
        double bx = cx, by = cy;
        const double step = 2.0 * half / n;
        for (int i = 0; i <= n; ++i)
            for (int j = 0; j <= n; ++j) {
                const double x = cx - half + i * step;
                const double y = cy - half + j * step;
                const double f = neg_log_post(t, Complex(x, y));
                if (f < best) {
                    best = f;
                    bx = x;
                    by = y;
                }
            }
        cx = bx;
        cy = by;
        half = 2.0 * step;
        if (half < 1e-13 * radius) break;
    }
    return Complex(cx, cy);
}

Complex gradient(const Tuple& t, Complex z)
{
    const double mag = std::abs(z);
    return -(t.y - mag) / t.v * (z / mag) + 2.0 * (z - t.zbar) / t.vbar;
}

// Grid search, then Newton on the gradient with a central-difference Hessian.
Complex refined_map(const Tuple& t)
{
    Complex z = grid_map(t);
    for (int it = 0; it < 20; ++it) {
        const double h = 1e-6 * std::max(1.0, std::abs(z));
        const Complex g = gradient(t, z);
        const Complex gx = (gradient(t, z + Complex(h, 0)) - gradient(t, z - Complex(h, 0))) / (2.0 * h);
        const Complex gy = (gradient(t, z + Complex(0, h)) - gradient(t, z - Complex(0, h))) / (2.0 * h);
        const double a = gx.real(), b = gy.real(), c = gx.imag(), d = gy.imag();
        const double det = a * d - b * c;
        const Complex step((d * g.real() - b * g.imag()) / det, (-c * g.real() + a * g.imag()) / det);
        z -= step;
        if (std::abs(step) < 1e-15 * std::abs(z)) break;
    }
    return z;
}

double fd_trace_inverse_hessian(const Tuple& t, Complex z, double h)
{
    auto f = [&](double dx, double dy) { return neg_log_post(t, z + Complex(dx, dy)); };
    const double f0 = f(0, 0);
    const double hxx = (f(h, 0) - 2.0 * f0 + f(-h, 0)) / (h * h);
    const double hyy = (f(0, h) - 2.0 * f0 + f(0, -h)) / (h * h);
    const double hxy = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
    return (hxx + hyy) / (hxx * hyy - hxy * hxy);
}

void criterion2()
{
    const auto t0 = Clock::now();
    Rng rng(202);
    auto log_uniform = [&](double lo, double hi) { return lo * std::pow(hi / lo, rng.uniform()); };
    double worst_map = 0.0, worst_var = 0.0, worst_alt = 0.0;
    for (int i = 0; i < 1000; ++i) {
        Tuple t;
        do t.y = 100.0 * rng.uniform();
        while (t.y == 0.0);
        t.zbar = std::polar(0.1 + 99.9 * rng.uniform(), 2.0 * std::numbers::pi * rng.uniform());
        t.vbar = log_uniform(0.01, 100.0);
        t.v = log_uniform(0.01, 100.0);

        const Complex zhat = laplace_map(t.y, t.zbar, t.vbar, t.v);
        const Complex oracle = refined_map(t);
        worst_map = std::max(worst_map, std::abs(zhat - oracle) / std::abs(oracle));
        const double var = laplace_var(t.y, t.zbar, t.vbar, t.v);
        const double fd = fd_trace_inverse_hessian(t, zhat, 1e-5 * std::max(1.0, std::abs(zhat)));
        worst_var = std::max(worst_var, std::abs(var - fd) / fd);
        worst_alt = std::max(worst_alt, std::abs(var - trace_inverse_hessian(t.y, zhat, t.vbar, t.v)) / var);
    }
    const double secs = seconds_since(t0);
    const bool ok = worst_map <= 1e-5 && worst_var <= 1e-3 && worst_alt <= 1e-10 && secs < 30.0;
    report(2, ok,
           "channel posterior on 1000 tuples, MAP rel err " + fmt("%.2e", worst_map) + ", variance vs FD "
               + fmt("%.2e", worst_var) + ", vs alternate form " + fmt("%.2e", worst_alt) + ", "
               + fmt("%.2f s", secs));
}

double max_abs_diff(std::span<const Complex> a, std::span<const Complex> b)
{
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void criterion3()
{
    Rng rng(303);
    const std::size_t m = 4096;
    const double mu0 = 3.0, tau0 = 2.0, s2 = 0.5;
    ComplexVector y(m);
    for (auto& v : y) v = Complex(mu0 + 2.0 * rng.normal(), 2.0 * rng.normal());
    const GaussianChannel scalar_ch(y, s2);
    const MomentFn prior = [&](std::span<const Complex> zbar, double vbar) {
        Moments out;
        out.mean.resize(zbar.size());
        for (std::size_t i = 0; i < zbar.size(); ++i) out.mean[i] = (vbar * mu0 + tau0 * zbar[i]) / (tau0 + vbar);
        out.variance = tau0 * vbar / (tau0 + vbar);
        return out;
    };
    const MomentFn like = [&](std::span<const Complex> zbar, double vbar) {
        auto post = scalar_ch.posterior(zbar, vbar);
        return Moments{std::move(post.mean), post.variance};
    };
    const auto ec = ec_run(prior, like, m, 50, 1e-12);
    ComplexVector exact(m);
    for (std::size_t i = 0; i < m; ++i) exact[i] = (s2 * mu0 + tau0 * y[i]) / (tau0 + s2);
    const double ec_err = max_abs_diff(ec.zhat2, exact);

    const CdpOperator op(Shape{32, 32, 1}, 4, rng);
    const double mu = 100.0, tau = 900.0, sigma2 = 50.0;
    Image truth(op.image_shape());
    for (auto& p : truth.pixels()) p = mu + std::sqrt(tau) * rng.normal();
    ComplexVector yz = op.forward(truth);
    const auto noise = sample_circular_complex_gaussian(rng, yz.size(), sigma2);
    for (std::size_t i = 0; i < yz.size(); ++i) yz[i] += noise[i];
    // Re{A^H y} carries real noise of variance sigma2 / 2 around x.
    const Image r = sufficient_statistic(op, yz);
    Image xhat(r.shape());
    for (std::size_t i = 0; i < r.size(); ++i)
        xhat.pixels()[i] = mu + tau / (tau + sigma2 / 2.0) * (r.pixels()[i] - mu);
    RunConfig cfg;
    cfg.mu1 = 1.0;
    cfg.mu2 = 1.0;
    cfg.em_iters = 0;
    cfg.iterations = 50;
    cfg.damping = DampingMode::Deterministic;
    const auto res = deepecpr_run(cfg, GaussianChannel(yz, sigma2), op,
                                  DenoiserBank::single(gaussian_mmse_denoiser(mu, tau)), Image(op.image_shape(), mu));
    const double deep_err = max_abs_diff(res.state.post2.mean, op.forward(xhat));
    const bool ok = op.output_size() == m && ec.iterations <= 50 && ec_err <= 1e-8 && deep_err <= 1e-8;
    report(3, ok,
           "Gaussian exactness at m = 4096, ec_run err " + fmt("%.2e", ec_err) + " in "
               + std::to_string(ec.iterations) + " iterations, deepecpr err " + fmt("%.2e", deep_err)
               + " in 50 iterations");
}

struct RunRecord {
    double psnr = 0.0;
    IterationTrace trace;
};

struct Suite {
    std::vector<RunRecord> runs;
    double mean_psnr = 0.0;
    double seconds = 0.0;
};

Json desk_config(const std::string& solver, double alpha, const std::string& damping, const fs::path& out)
{
    return Json{{"operator", {{"type", "cdp"}, {"K", 4}}},
                {"noise", {{"alpha", alpha}}},
                {"solver", {{"name", solver}, {"damping", damping}}},
                {"phantom", {{"height", 64}, {"width", 64}}},
                {"seeds", {0, 1, 2, 3, 4}},
                {"record_timing", false},
                {"output", out.string()}};
}

Suite run_suite(const Json& j)
{
    const auto c = parse_experiment_config(j);
    cmd_simulate(c);
    const DenoiserBank bank = build_bank(c.denoiser, nullptr);
    Suite s;
    const auto t0 = Clock::now();
    for (const auto& job : plan_jobs(c)) {
        const auto p = load_problem(job);
        const auto out = solve_job(c, job, p, &bank);
        if (out.diverged) throw std::runtime_error("run diverged: " + out.message);
        const Json m = metrics_json(c, job, p, out, 0.0);
        s.runs.push_back(RunRecord{m.at("psnr").get<double>(), out.trace});
        s.mean_psnr += s.runs.back().psnr;
    }
    s.seconds = seconds_since(t0);
    s.mean_psnr /= static_cast<double>(s.runs.size());
    return s;
}

struct DampingCheck {
    double rel = 0.0;
    bool zero = false;
};

DampingCheck stochastic_damping_check()
{
    Rng rng(505);
    const std::size_t m = 100000;
    const Message raw{ComplexVector(m, Complex(10.0, -4.0)), 30.0};
    const double old_variance = 120.0;
    const auto out = damp_stochastic(rng, raw, old_variance, 0.4);
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += std::norm(out.message.mean[i] - raw.mean[i]);
    const double expected = out.message.variance - raw.variance;
    const double rel = std::abs(acc / static_cast<double>(m) - expected) / expected;
    const auto unit = damp_stochastic(rng, raw, old_variance, 1.0);
    return {rel, unit.injected_variance == 0.0 && unit.message.mean == raw.mean};
}

} // namespace

int main()
{
    warning_sink() = [](const std::string&) {};
    criterion1();
    criterion2();
    criterion3();

    const fs::path root = fs::temp_directory_path() / ("ecpr_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);

    std::map<double, Suite> deep, hio;
    double c7_seconds = 0.0;
    for (double alpha : {5.0, 15.0}) {
        const std::string tag = alpha == 5.0 ? "a5" : "a15";
        deep[alpha] = run_suite(desk_config("deepecpr", alpha, "stochastic", root / tag));
        hio[alpha] = run_suite(desk_config("hio", alpha, "stochastic", root / tag));
        c7_seconds += deep[alpha].seconds + hio[alpha].seconds;
    }

    {
        double worst = 0.0;
        for (const auto& [alpha, s] : deep)
            for (const auto& r : s.runs) {
                const auto& last = r.trace.back();
                worst = std::max(worst, std::abs(last.vhat1 - last.vhat2) / last.vhat2);
            }
        report(4, worst <= 0.05, "fixed-point consistency, worst final |vhat1 - vhat2| / vhat2 = " + fmt("%.4f", worst));
    }

    {
        const auto unit = stochastic_damping_check();
        double worst = 0.0;
        for (const auto& [alpha, s] : deep)
            for (const auto& r : s.runs) {
                const std::size_t n = r.trace.size();
                for (std::size_t i = n - n / 4; i < n; ++i) worst = std::max(worst, r.trace[i].injected_sd);
            }
        report(5, unit.rel <= 0.02 && unit.zero && worst < 1.0,
               "stochastic damping, injected variance rel err " + fmt("%.4f", unit.rel) + " at m = 1e5, unit factor "
                   + (unit.zero ? "injects nothing" : "injects noise") + ", final-quarter injected SD peaks at "
                   + fmt("%.3g", worst));
    }

    {
        const Suite det = run_suite(desk_config("deepecpr", 5.0, "deterministic", root / "det"));
        const double sto = deep[5.0].mean_psnr;
        report(6, sto >= det.mean_psnr,
               "damping ablation at alpha 5, stochastic " + fmt("%.3f", sto) + " dB vs deterministic "
                   + fmt("%.3f", det.mean_psnr) + " dB");
    }

    {
        const double g5 = deep[5.0].mean_psnr - hio[5.0].mean_psnr;
        const double g15 = deep[15.0].mean_psnr - hio[15.0].mean_psnr;
        report(7, g5 >= 3.0 && g15 >= 3.0 && c7_seconds < 300.0,
               "deepECpr(TV) over HIO, alpha 5: " + fmt("%.2f", deep[5.0].mean_psnr) + " vs "
                   + fmt("%.2f", hio[5.0].mean_psnr) + " dB, alpha 15: " + fmt("%.2f", deep[15.0].mean_psnr)
                   + " vs " + fmt("%.2f", hio[15.0].mean_psnr) + " dB, " + fmt("%.1f s", c7_seconds));
    }

    {
        std::size_t worst_calls = 0;
        for (const auto& [alpha, s] : deep)
            for (const auto& r : s.runs) {
                const double final_psnr = *r.trace.back().psnr;
                for (const auto& rec : r.trace)
                    if (rec.psnr && std::abs(*rec.psnr - final_psnr) <= 0.5) {
                        worst_calls = std::max(worst_calls, rec.denoiser_calls);
                        break;
                    }
            }
        report(8, worst_calls <= 200,
               "denoiser calls to come within 0.5 dB of the final PSNR, worst run " + std::to_string(worst_calls));
    }

    {
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (const auto& [alpha, s] : deep)
            for (const auto& r : s.runs) {
                const std::size_t n = r.trace.size();
                double sd = 0.0, err = 0.0;
                for (std::size_t i = n - 20; i < n; ++i) {
                    sd += std::sqrt(r.trace[i].vbar2);
                    err += *r.trace[i].err_zbar2;
                }
                lo = std::min(lo, sd / err);
                hi = std::max(hi, sd / err);
            }
        report(9, lo >= 1.0 / 3.0 && hi <= 3.0,
               "predicted over true SD of zbar2 in the final 20 iterations, range " + fmt("%.3f", lo) + " to "
                   + fmt("%.3f", hi));
    }

    {
        Rng rng(1010);
        int invariant = 0;
        for (int t = 0; t < 50; ++t) {
            const std::size_t h = 6 + static_cast<std::size_t>(rng.uniform() * 10);
            const std::size_t w = 6 + static_cast<std::size_t>(rng.uniform() * 10);
            const Image x = random_image(rng, Shape{h, w, 1});
            const Image e = random_image(rng, Shape{h, w, 1});
            const double ref = psnr(resolve_ambiguity(e, x, AmbiguityPolicy::osf_grayscale()), x);
            const auto dr = static_cast<std::size_t>(rng.uniform() * h);
            const auto dc = static_cast<std::size_t>(rng.uniform() * w);
            const Image flipped = conjugate_flip(e);
            const Image shifted = circular_shift(e, dr, dc);
            const Image both = conjugate_flip(circular_shift(e, dr, dc));
            bool ok = true;
            for (const Image* g : {&flipped, &shifted, &both})
                ok &= psnr(resolve_ambiguity(*g, x, AmbiguityPolicy::osf_grayscale()), x) == ref;
            invariant += ok;
        }
        report(10, invariant == 50, "ambiguity-resolved PSNR invariant in " + std::to_string(invariant) + " of 50 cases");
    }

    {
        std::size_t compared = 0, differing = 0;
        for (const std::string run : {"first", "second"})
            for (double alpha : {5.0, 15.0})
                for (const std::string solver : {"deepecpr", "hio"}) {
                    const auto c = parse_experiment_config(desk_config(solver, alpha, "stochastic",
                                                                       root / run / fmt("a%g", alpha)));
                    cmd_simulate(c);
                    cmd_run(c);
                }
        for (const auto& e : fs::recursive_directory_iterator(root / "first")) {
            if (!e.is_regular_file()) continue;
            const fs::path twin = root / "second" / fs::relative(e.path(), root / "first");
            ++compared;
            if (!fs::exists(twin) || detail::read_file(twin) != detail::read_file(e.path())) ++differing;
        }
        report(11, compared > 0 && differing == 0,
               "rerun with identical seeds, " + std::to_string(compared) + " files compared, "
                   + std::to_string(differing) + " differ");
    }

    fs::remove_all(root);
    std::printf("%s\n", failures == 0 ? "all criteria passed" : (std::to_string(failures) + " failing checks").c_str());
    return failures == 0 ? 0 : 1;
}
