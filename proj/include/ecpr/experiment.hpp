#pragma once

// Benchmark harness behind the command-line tool: experiment configs,
// measurement simulation, solver runs with the reporting protocols, metric
// tables, and trace reshaping.
//
// Directory layout under the output directory:
//   <image>/seed_<s>/truth.pgm|ppm, y.ecpv, operator.json, codes.ecpv (CDP)
//   <image>/seed_<s>/<solver>/recon.pgm|ppm, trace.csv, metrics.json

#include "ecpr/baselines.hpp"
#include "ecpr/channel.hpp"
#include "ecpr/denoisers.hpp"
#include "ecpr/ec.hpp"
#include "ecpr/io.hpp"
#include "ecpr/linops.hpp"
#include "ecpr/metrics.hpp"
#include "ecpr/protocol.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <variant>

namespace ecpr {

using Json = nlohmann::json;

/// Bad or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// PSNR written to metrics JSON for an exact reconstruction.
inline constexpr double kPsnrJsonSentinel = 999.0;

struct OperatorConfig {
    std::string type = "cdp";
    std::size_t oversampling = 2;
    std::size_t codes = 4;
};

struct ChannelConfig {
    std::string type = "amplitude";
    double alpha = 0.0;
    std::optional<double> v;               // likelihood variance override
    double noise_variance = 1.0;           // gaussian channel only
};

struct DenoiserEntry {
    std::string type = "tv";
    TvParams tv{1.0, 60, 0.011};
    double beta = 0.5;
    double mean = 128.0;
    double tau = 3000.0;
    SdRange sd_range{};
    std::optional<std::size_t> iterations;
};

struct DenoiserConfig {
    SelectionPolicy policy = SelectionPolicy::BySd;
    std::vector<DenoiserEntry> bank{DenoiserEntry{}};
};

struct ExperimentConfig {
    OperatorConfig op;
    ChannelConfig channel;
    std::string solver = "deepecpr";
    RunConfig run{};
    HioConfig hio{};
    OsfInitParams osf_init{};
    std::size_t repetitions = 1;
    DenoiserConfig denoiser;
    std::string metrics_policy = "auto";
    std::vector<std::uint64_t> seeds{0};
    std::vector<std::string> images;
    std::optional<PhantomSpec> phantom;
    bool phantom_seed_from_run = true;
    std::string output = "out";
    bool record_timing = true;
    std::optional<std::string> denoiser_endpoint;
};

namespace detail {

inline void check_keys(const Json& j, const std::string& where, std::initializer_list<const char*> allowed)
{
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items())
        if (!ok.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
T get_or(const Json& j, const char* key, const std::string& where, T fallback)
{
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception&) {
        throw ConfigError("key '" + std::string(key) + "' in " + where + " has the wrong type");
    }
}

template <typename T>
T get_required(const Json& j, const char* key, const std::string& where)
{
    if (!j.contains(key)) throw ConfigError("missing required key '" + std::string(key) + "' in " + where);
    return get_or<T>(j, key, where, T{});
}

inline std::size_t get_count(const Json& j, const char* key, const std::string& where, std::size_t fallback)
{
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw ConfigError("key '" + std::string(key) + "' in " + where + " must be a nonnegative integer");
    return v.get<std::size_t>();
}

inline DenoiserEntry parse_denoiser_entry(const Json& j, const std::string& where)
{
    check_keys(j, where, {"type", "lambda_scale", "inner_iters", "beta", "mean", "tau", "sd_range", "iterations"});
    DenoiserEntry e;
    e.type = get_required<std::string>(j, "type", where);
    if (e.type == "tv") {
        e.tv.lambda_scale = get_or(j, "lambda_scale", where, e.tv.lambda_scale);
        e.tv.inner_iters = get_count(j, "inner_iters", where, e.tv.inner_iters);
        e.tv.beta = get_or(j, "beta", where, e.tv.beta);
    } else if (e.type == "identity" || e.type == "remote") {
        e.beta = get_or(j, "beta", where, e.beta);
    } else if (e.type == "gaussian_mmse") {
        e.mean = get_or(j, "mean", where, e.mean);
        e.tau = get_or(j, "tau", where, e.tau);
    } else {
        throw ConfigError("unknown denoiser type '" + e.type + "' in " + where);
    }
    if (j.contains("sd_range")) {
        const auto r = get_or<std::vector<double>>(j, "sd_range", where, {});
        if (r.size() != 2) throw ConfigError("sd_range in " + where + " must be [lo, hi]");
        e.sd_range = SdRange{r[0], r[1]};
    }
    if (j.contains("iterations")) e.iterations = get_count(j, "iterations", where, 0);
    return e;
}

} // namespace detail

/// Parses and validates an experiment config. Unknown keys anywhere are
/// rejected.
inline ExperimentConfig parse_experiment_config(const Json& j)
{
    using namespace detail;
    ExperimentConfig c;
    check_keys(j, "config", {"operator", "channel", "noise", "solver", "denoiser", "metrics", "seeds", "images",
                             "phantom", "output", "record_timing", "denoiser_endpoint"});

    const Json& op = j.contains("operator") ? j.at("operator") : Json::object();
    check_keys(op, "operator", {"type", "oversampling", "K"});
    c.op.type = get_or<std::string>(op, "type", "operator", c.op.type);
    if (c.op.type != "cdp" && c.op.type != "osf") throw ConfigError("operator.type must be \"cdp\" or \"osf\"");
    c.op.oversampling = get_count(op, "oversampling", "operator", c.op.oversampling);
    c.op.codes = get_count(op, "K", "operator", c.op.codes);
    if (c.op.oversampling < 1 || c.op.codes < 1) throw ConfigError("operator.oversampling and operator.K must be >= 1");

    const Json& noise = j.contains("noise") ? j.at("noise") : Json::object();
    check_keys(noise, "noise", {"alpha", "v"});
    c.channel.alpha = get_or(noise, "alpha", "noise", c.channel.alpha);
    if (noise.contains("v")) c.channel.v = get_or(noise, "v", "noise", 0.0);
    if (c.channel.alpha < 0.0) throw ConfigError("noise.alpha must be nonnegative");

    const Json& ch = j.contains("channel") ? j.at("channel") : Json::object();
    check_keys(ch, "channel", {"type", "noise_variance"});
    c.channel.type = get_or<std::string>(ch, "type", "channel", c.channel.type);
    if (c.channel.type != "amplitude" && c.channel.type != "gaussian")
        throw ConfigError("channel.type must be \"amplitude\" or \"gaussian\"");
    c.channel.noise_variance = get_or(ch, "noise_variance", "channel", c.channel.noise_variance);

    const Json& s = j.contains("solver") ? j.at("solver") : Json::object();
    check_keys(s, "solver", {"name", "mu1", "mu2", "zeta", "vbar_init", "iterations", "em_iters", "damping",
                             "variance_floor", "variance_ceiling", "hio", "osf_init", "repetitions"});
    c.solver = get_or<std::string>(s, "name", "solver", c.solver);
    if (c.solver != "deepecpr" && c.solver != "hio") throw ConfigError("solver.name must be \"deepecpr\" or \"hio\"");
    c.run.mu1 = get_or(s, "mu1", "solver", c.run.mu1);
    c.run.mu2 = get_or(s, "mu2", "solver", c.run.mu2);
    c.run.zeta = get_or(s, "zeta", "solver", c.run.zeta);
    c.run.vbar_init = get_or(s, "vbar_init", "solver", c.run.vbar_init);
    c.run.iterations = get_count(s, "iterations", "solver", c.run.iterations);
    c.run.em_iters = get_count(s, "em_iters", "solver", c.run.em_iters);
    const auto damping = get_or<std::string>(s, "damping", "solver", "stochastic");
    if (damping == "stochastic")
        c.run.damping = DampingMode::Stochastic;
    else if (damping == "deterministic")
        c.run.damping = DampingMode::Deterministic;
    else
        throw ConfigError("solver.damping must be \"stochastic\" or \"deterministic\"");
    c.run.limits.floor = get_or(s, "variance_floor", "solver", c.run.limits.floor);
    c.run.limits.ceiling = get_or(s, "variance_ceiling", "solver", c.run.limits.ceiling);
    c.repetitions = get_count(s, "repetitions", "solver", c.repetitions);
    if (c.repetitions == 0) throw ConfigError("solver.repetitions must be at least 1");
    if (s.contains("hio")) {
        const auto& h = s.at("hio");
        check_keys(h, "solver.hio", {"step", "iters", "nonnegativity"});
        c.hio.step = get_or(h, "step", "solver.hio", c.hio.step);
        c.hio.iters = get_count(h, "iters", "solver.hio", c.hio.iters);
        c.hio.nonnegativity = get_or(h, "nonnegativity", "solver.hio", c.hio.nonnegativity);
    }
    if (s.contains("osf_init")) {
        const auto& o = s.at("osf_init");
        check_keys(o, "solver.osf_init", {"restarts", "restart_iters", "final_iters"});
        c.osf_init.restarts = get_count(o, "restarts", "solver.osf_init", c.osf_init.restarts);
        c.osf_init.restart_iters = get_count(o, "restart_iters", "solver.osf_init", c.osf_init.restart_iters);
        c.osf_init.final_iters = get_count(o, "final_iters", "solver.osf_init", c.osf_init.final_iters);
    }
    c.osf_init.hio = c.hio;
    try {
        c.run.validate();
        c.hio.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(std::string("solver: ") + e.what());
    }

    if (j.contains("denoiser")) {
        const auto& d = j.at("denoiser");
        if (d.is_object() && d.contains("bank")) {
            check_keys(d, "denoiser", {"policy", "bank"});
            const auto policy = get_or<std::string>(d, "policy", "denoiser", "by_sd");
            if (policy == "by_sd")
                c.denoiser.policy = SelectionPolicy::BySd;
            else if (policy == "by_iteration")
                c.denoiser.policy = SelectionPolicy::ByIteration;
            else
                throw ConfigError("denoiser.policy must be \"by_sd\" or \"by_iteration\"");
            if (!d.at("bank").is_array() || d.at("bank").empty())
                throw ConfigError("denoiser.bank must be a non-empty array");
            c.denoiser.bank.clear();
            for (std::size_t i = 0; i < d.at("bank").size(); ++i)
                c.denoiser.bank.push_back(parse_denoiser_entry(d.at("bank")[i], "denoiser.bank[" + std::to_string(i) + "]"));
        } else {
            c.denoiser.bank = {parse_denoiser_entry(d, "denoiser")};
        }
    }

    if (j.contains("metrics")) {
        const auto& m = j.at("metrics");
        check_keys(m, "metrics", {"policy"});
        c.metrics_policy = get_or<std::string>(m, "policy", "metrics", c.metrics_policy);
        static const std::set<std::string> ok{"auto", "cdp", "osf_grayscale", "osf_color", "none"};
        if (!ok.count(c.metrics_policy)) throw ConfigError("unknown metrics.policy '" + c.metrics_policy + "'");
    }

    if (j.contains("seeds")) {
        const auto& sd = j.at("seeds");
        if (!sd.is_array() || sd.empty()) throw ConfigError("seeds must be a non-empty array");
        c.seeds.clear();
        for (const auto& v : sd) {
            if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("seeds must be nonnegative integers");
            c.seeds.push_back(v.get<std::uint64_t>());
        }
    }

    c.images = get_or<std::vector<std::string>>(j, "images", "config", {});
    if (j.contains("phantom")) {
        const auto& p = j.at("phantom");
        check_keys(p, "phantom", {"height", "width", "channels", "rectangles", "seed"});
        PhantomSpec ps;
        ps.height = get_count(p, "height", "phantom", ps.height);
        ps.width = get_count(p, "width", "phantom", ps.width);
        ps.channels = get_count(p, "channels", "phantom", ps.channels);
        ps.rectangles = get_count(p, "rectangles", "phantom", ps.rectangles);
        if (p.contains("seed")) {
            ps.seed = get_count(p, "seed", "phantom", 0);
            c.phantom_seed_from_run = false;
        }
        if (ps.height == 0 || ps.width == 0 || (ps.channels != 1 && ps.channels != 3))
            throw ConfigError("phantom needs positive size and 1 or 3 channels");
        c.phantom = ps;
    }
    if (c.images.empty() && !c.phantom) throw ConfigError("config needs \"images\" or \"phantom\"");
    if (!c.images.empty() && c.phantom) throw ConfigError("config may not set both \"images\" and \"phantom\"");

    c.output = get_or<std::string>(j, "output", "config", c.output);
    c.record_timing = get_or(j, "record_timing", "config", c.record_timing);
    if (j.contains("denoiser_endpoint")) c.denoiser_endpoint = get_or<std::string>(j, "denoiser_endpoint", "config", "");
    return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path)
{
    Json j;
    try {
        j = Json::parse(detail::read_file(path));
    } catch (const Json::parse_error& e) {
        throw ConfigError("cannot parse '" + path.string() + "': " + e.what());
    }
    return parse_experiment_config(j);
}

/// One (image, seed) unit of work.
struct Job {
    std::string tag;
    std::string image_path; // empty for phantoms
    std::uint64_t seed = 0;
    std::filesystem::path dir;
};

inline std::vector<Job> plan_jobs(const ExperimentConfig& c)
{
    std::vector<Job> jobs;
    const std::filesystem::path out(c.output);
    if (c.phantom) {
        for (auto s : c.seeds) jobs.push_back({"phantom", "", s, out / "phantom" / ("seed_" + std::to_string(s))});
        return jobs;
    }
    std::set<std::string> tags;
    for (const auto& img : c.images) {
        const std::string tag = std::filesystem::path(img).stem().string();
        if (!tags.insert(tag).second) throw ConfigError("two images share the name '" + tag + "'");
        for (auto s : c.seeds) jobs.push_back({tag, img, s, out / tag / ("seed_" + std::to_string(s))});
    }
    return jobs;
}

inline Image job_truth(const ExperimentConfig& c, const Job& job)
{
    if (job.image_path.empty()) {
        PhantomSpec ps = *c.phantom;
        if (c.phantom_seed_from_run) ps.seed = job.seed;
        return make_phantom(ps);
    }
    if (!std::filesystem::exists(job.image_path)) throw IoError("image '" + job.image_path + "' does not exist");
    return read_pnm(job.image_path);
}

/// The measurement operator of a job; CDP codes come from the job's RNG.
using AnyOperator = std::variant<OsfOperator, CdpOperator>;

inline std::string image_extension(const Shape& s)
{
    return s.channels == 1 ? ".pgm" : ".ppm";
}

inline CdpCodes normalized_codes(std::size_t count, std::size_t length, const ComplexVector& values)
{
    if (values.size() != count * length) throw IoError("CDP code file has the wrong length");
    CdpCodes codes{count, length, ComplexVector(values.size())};
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double mag = std::abs(values[i]);
        if (!(mag > 0.5 && mag < 2.0)) throw IoError("CDP code file holds a non-unit entry");
        codes.values[i] = values[i] / mag;
    }
    return codes;
}

/// Writes truth, measurements and the operator description for one job.
inline void simulate_job(const ExperimentConfig& c, const Job& job)
{
    const Image x = job_truth(c, job);
    std::filesystem::create_directories(job.dir);
    write_pnm(job.dir / ("truth" + image_extension(x.shape())), x);
    const Image xq = decode_pnm(encode_pnm(x));

    const Rng root(job.seed);
    Rng code_rng = root.split(0);
    Rng noise_rng = root.split(1);
    Json desc{{"type", c.op.type},
              {"height", x.height()},
              {"width", x.width()},
              {"channels", x.channels()},
              {"channel", c.channel.type},
              {"alpha", c.channel.alpha},
              {"seed", job.seed}};
    ComplexVector z;
    if (c.op.type == "cdp") {
        const CdpOperator op(x.shape(), make_cdp_codes(code_rng, x.shape().plane(), c.op.codes));
        write_complex_vector(job.dir / "codes.ecpv", op.codes().values);
        desc["K"] = c.op.codes;
        z = op.forward(xq);
    } else {
        const auto op = OsfOperator::oversampled(x.shape(), c.op.oversampling);
        desc["oversampling"] = c.op.oversampling;
        z = op.forward(xq);
    }
    if (c.channel.type == "gaussian") {
        desc["noise_variance"] = c.channel.noise_variance;
        const auto n = sample_circular_complex_gaussian(noise_rng, z.size(), c.channel.noise_variance);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += n[i];
        write_complex_vector(job.dir / "y.ecpv", z);
    } else {
        write_real_vector(job.dir / "y.ecpv", simulate_measurements(noise_rng, z, NoiseModel{c.channel.alpha}));
    }
    detail::write_file(job.dir / "operator.json", desc.dump(2) + "\n");
}

struct LoadedProblem {
    Image truth;
    Json desc;
    std::optional<OsfOperator> osf;
    std::optional<CdpOperator> cdp;
    RealVector y;          // amplitude channel
    ComplexVector y_complex; // gaussian channel
};

inline LoadedProblem load_problem(const Job& job)
{
    LoadedProblem p;
    const auto desc_path = job.dir / "operator.json";
    if (!std::filesystem::exists(desc_path))
        throw IoError("no measurements at '" + job.dir.string() + "' (run 'simulate' first)");
    try {
        p.desc = Json::parse(detail::read_file(desc_path));
        const Shape s{p.desc.at("height").get<std::size_t>(), p.desc.at("width").get<std::size_t>(),
                      p.desc.at("channels").get<std::size_t>()};
        p.truth = read_pnm(job.dir / ("truth" + image_extension(s)));
        if (p.truth.shape() != s) throw IoError("truth image does not match operator.json");
        if (p.desc.at("type") == "cdp") {
            const auto k = p.desc.at("K").get<std::size_t>();
            p.cdp.emplace(s, normalized_codes(k, s.plane(), read_complex_vector(job.dir / "codes.ecpv")));
        } else {
            p.osf.emplace(OsfOperator::oversampled(s, p.desc.at("oversampling").get<std::size_t>()));
        }
    } catch (const Json::exception& e) {
        throw IoError("malformed '" + desc_path.string() + "': " + e.what());
    }
    const std::size_t m = p.cdp ? p.cdp->output_size() : p.osf->output_size();
    if (p.desc.at("channel") == "gaussian")
        p.y_complex = read_complex_vector(job.dir / "y.ecpv");
    else
        p.y = read_real_vector(job.dir / "y.ecpv");
    if (std::max(p.y.size(), p.y_complex.size()) != m) throw IoError("measurement length does not match the operator");
    return p;
}

struct JobOutcome {
    Image estimate;
    IterationTrace trace;
    std::size_t denoiser_calls = 0;
    double residual = 0.0;
    bool diverged = false;
    std::string message;
};

inline AmbiguityPolicy metrics_policy(const ExperimentConfig& c, const Shape& s)
{
    if (c.metrics_policy == "cdp" || c.metrics_policy == "none") return AmbiguityPolicy::cdp();
    if (c.metrics_policy == "osf_grayscale") return AmbiguityPolicy::osf_grayscale();
    if (c.metrics_policy == "osf_color") return AmbiguityPolicy::osf_color();
    if (c.op.type == "cdp") return AmbiguityPolicy::cdp();
    return s.channels == 3 ? AmbiguityPolicy::osf_color() : AmbiguityPolicy::osf_grayscale();
}

inline DenoiserBank build_bank(const DenoiserConfig& d, const std::shared_ptr<RemoteDenoiser>& remote)
{
    DenoiserBank bank;
    bank.policy = d.policy;
    for (const auto& e : d.bank) {
        DenoiserSpec spec;
        if (e.type == "tv") {
            spec = tv_denoiser(e.tv);
        } else if (e.type == "identity") {
            spec = identity_denoiser(e.beta);
        } else if (e.type == "gaussian_mmse") {
            spec = gaussian_mmse_denoiser(e.mean, e.tau);
        } else {
            if (!remote) throw ConfigError("a remote denoiser is configured but no endpoint was given");
            spec = remote_denoiser_spec(remote, e.beta);
        }
        spec.sd_range = e.sd_range;
        spec.iteration_budget = e.iterations;
        bank.specs.push_back(std::move(spec));
    }
    try {
        bank.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(std::string("denoiser: ") + e.what());
    }
    return bank;
}

namespace detail {

template <typename Op>
JobOutcome solve_amplitude(const ExperimentConfig& c, const Job& job, const LoadedProblem& p, const Op& op,
                           const DenoiserBank* bank)
{
    const double v = c.channel.v.value_or(c.channel.alpha > 0.0 ? alpha_to_v(c.channel.alpha) : 1.0);
    const Rng base = Rng(job.seed).split(2);
    const auto policy = metrics_policy(c, p.truth.shape());

    auto solve_once = [&](Rng& rng) {
        JobOutcome out;
        Image x0;
        if constexpr (std::is_same_v<Op, CdpOperator>) {
            x0 = cdp_init(p.y, op);
            if (c.solver == "hio") {
                out.estimate = hio_run(p.y, op, c.hio, x0);
                return out;
            }
        } else {
            x0 = osf_init_protocol(p.y, op, rng, c.osf_init);
            if (c.solver == "hio") {
                out.estimate = x0;
                return out;
            }
        }
        RunConfig rc = c.run;
        rc.seed = rng.next_u64();
        rc.trace_policy = policy;
        try {
            auto res = deepecpr_run(rc, AmplitudeChannel(p.y, v), op, *bank, x0, &p.truth);
            out.estimate = std::move(res.estimate);
            out.trace = std::move(res.trace);
            out.denoiser_calls = res.denoiser_calls;
        } catch (const DivergenceError& e) {
            out.diverged = true;
            out.message = e.what();
            out.trace = e.trace();
            out.estimate = x0;
        }
        return out;
    };
    auto residual = [&](const JobOutcome& o) { return measurement_residual(p.y, op, o.estimate); };
    auto best = run_with_restarts(solve_once, residual, c.repetitions, base);
    best.result.residual = best.residual;
    return std::move(best.result);
}

} // namespace detail

inline JobOutcome solve_job(const ExperimentConfig& c, const Job& job, const LoadedProblem& p,
                            const DenoiserBank* bank)
{
    if (!p.y_complex.empty()) {
        if (c.solver != "deepecpr") throw ConfigError("the gaussian channel is only supported by deepecpr");
        const double nv = p.desc.at("noise_variance").get<double>();
        RunConfig rc = c.run;
        rc.seed = Rng(job.seed).split(2).next_u64();
        rc.trace_policy = AmbiguityPolicy::cdp();
        const GaussianChannel channel(p.y_complex, nv);
        JobOutcome out;
        auto run = [&](const auto& op) {
            const Image x0 = sufficient_statistic(op, p.y_complex);
            auto res = deepecpr_run(rc, channel, op, *bank, x0, &p.truth);
            out.estimate = std::move(res.estimate);
            out.trace = std::move(res.trace);
            out.denoiser_calls = res.denoiser_calls;
            const auto z = op.forward(out.estimate);
            double acc = 0.0;
            for (std::size_t i = 0; i < z.size(); ++i) acc += std::norm(z[i] - p.y_complex[i]);
            out.residual = std::sqrt(acc);
        };
        try {
            if (p.cdp)
                run(*p.cdp);
            else
                run(*p.osf);
        } catch (const DivergenceError& e) {
            out.diverged = true;
            out.message = e.what();
            out.trace = e.trace();
            out.estimate = Image(p.truth.shape());
        }
        return out;
    }
    if (p.cdp) return detail::solve_amplitude(c, job, p, *p.cdp, bank);
    return detail::solve_amplitude(c, job, p, *p.osf, bank);
}

inline Json metrics_json(const ExperimentConfig& c, const Job& job, const LoadedProblem& p, const JobOutcome& o,
                         double wall_time)
{
    const Image aligned = resolve_ambiguity(o.estimate, p.truth, metrics_policy(c, p.truth.shape()));
    const double ps = psnr(aligned, p.truth);
    Json m;
    m["image"] = job.tag;
    m["seed"] = job.seed;
    m["solver"] = c.solver;
    m["operator"] = p.desc.at("type");
    m["alpha"] = p.desc.at("alpha");
    m["psnr"] = std::isinf(ps) ? kPsnrJsonSentinel : ps;
    m["ssim"] = p.truth.height() >= 11 && p.truth.width() >= 11 ? Json(ssim(aligned, p.truth)) : Json(nullptr);
    m["residual"] = o.residual;
    m["denoiser_calls"] = o.denoiser_calls;
    m["wall_time_s"] = c.record_timing ? wall_time : 0.0;
    m["diverged"] = o.diverged;
    return m;
}

struct JobStatus {
    bool ok = true;
    bool diverged = false;
    std::string message;
};

/// Runs jobs on up to `jobs` threads; returns one status per job in order.
template <typename Fn>
std::vector<JobStatus> run_pool(const std::vector<Job>& jobs, std::size_t workers, Fn&& fn)
{
    std::vector<JobStatus> status(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                status[i] = fn(jobs[i]);
            } catch (const std::exception& e) {
                status[i] = JobStatus{false, false, e.what()};
            }
        }
    };
    workers = std::max<std::size_t>(1, std::min(workers, jobs.size()));
    if (workers == 1) {
        worker();
        return status;
    }
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < workers; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    return status;
}

inline std::vector<JobStatus> cmd_simulate(const ExperimentConfig& c, std::size_t workers = 1)
{
    const auto jobs = plan_jobs(c);
    return run_pool(jobs, workers, [&](const Job& job) {
        simulate_job(c, job);
        return JobStatus{};
    });
}

inline std::vector<JobStatus> cmd_run(const ExperimentConfig& c, std::size_t workers = 1)
{
    const auto jobs = plan_jobs(c);
    bool remote_needed = false;
    for (const auto& e : c.denoiser.bank) remote_needed |= e.type == "remote";
    if (remote_needed && !c.denoiser_endpoint) throw ConfigError("a remote denoiser needs --denoiser-endpoint");
    if (remote_needed) workers = 1;
    std::shared_ptr<RemoteDenoiser> remote;
    if (remote_needed && c.solver == "deepecpr")
        remote = std::make_shared<RemoteDenoiser>(parse_endpoint(*c.denoiser_endpoint));
    const DenoiserBank bank = build_bank(c.denoiser, remote);

    return run_pool(jobs, workers, [&](const Job& job) {
        const auto p = load_problem(job);
        const auto t0 = std::chrono::steady_clock::now();
        const auto outcome = solve_job(c, job, p, &bank);
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const auto dir = job.dir / c.solver;
        std::filesystem::create_directories(dir);
        write_pnm(dir / ("recon" + image_extension(outcome.estimate.shape())), outcome.estimate);
        if (c.solver == "deepecpr") {
            std::ostringstream csv;
            write_trace_csv(csv, outcome.trace);
            detail::write_file(dir / "trace.csv", csv.str());
        }
        detail::write_file(dir / "metrics.json", metrics_json(c, job, p, outcome, wall).dump(2) + "\n");
        if (outcome.diverged) return JobStatus{false, true, job.dir.string() + ": " + outcome.message};
        return JobStatus{};
    });
}

/// Collects every metrics.json below the given directories.
inline std::vector<std::filesystem::path> find_metrics(const std::vector<std::filesystem::path>& roots)
{
    std::vector<std::filesystem::path> found;
    for (const auto& r : roots) {
        if (!std::filesystem::exists(r)) throw IoError("run directory '" + r.string() + "' does not exist");
        if (std::filesystem::is_regular_file(r)) {
            found.push_back(r);
            continue;
        }
        for (const auto& e : std::filesystem::recursive_directory_iterator(r))
            if (e.is_regular_file() && e.path().filename() == "metrics.json") found.push_back(e.path());
    }
    std::sort(found.begin(), found.end());
    return found;
}

/// Mean PSNR / SSIM / denoiser calls per (solver, operator, alpha).
inline std::string cmd_table(const std::vector<std::filesystem::path>& roots)
{
    const auto files = find_metrics(roots);
    if (files.empty()) throw IoError("no metrics.json found under the given directories");
    struct Acc {
        double psnr = 0.0, ssim = 0.0, calls = 0.0;
        std::size_t n = 0, ssim_n = 0;
    };
    std::map<std::tuple<std::string, std::string, double>, Acc> groups;
    for (const auto& f : files) {
        Json m;
        try {
            m = Json::parse(detail::read_file(f));
            auto& a = groups[{m.at("solver").get<std::string>(), m.at("operator").get<std::string>(),
                              m.at("alpha").get<double>()}];
            a.psnr += m.at("psnr").get<double>();
            if (!m.at("ssim").is_null()) {
                a.ssim += m.at("ssim").get<double>();
                ++a.ssim_n;
            }
            a.calls += m.at("denoiser_calls").get<double>();
            ++a.n;
        } catch (const Json::exception& e) {
            throw IoError("malformed '" + f.string() + "': " + e.what());
        }
    }
    std::string out = "solver,operator,alpha,runs,mean_psnr,mean_ssim,mean_denoiser_calls\n";
    for (const auto& [key, a] : groups) {
        const auto& [solver, op, alpha] = key;
        const double n = static_cast<double>(a.n);
        out += solver + "," + op + "," + detail::format_number(alpha) + "," + std::to_string(a.n) + ","
               + detail::format_number(a.psnr / n) + ","
               + (a.ssim_n ? detail::format_number(a.ssim / static_cast<double>(a.ssim_n)) : std::string()) + ","
               + detail::format_number(a.calls / n) + "\n";
    }
    return out;
}

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}
} // namespace detail

/// Long format (iter, series, value) of a trace CSV; empty cells are skipped.
inline std::string cmd_trace_plotdata(const std::string& csv)
{
    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || line != kTraceCsvHeader) throw IoError("trace CSV has an unexpected header");
    const auto names = detail::split_csv_line(line);
    std::string out = "iter,series,value\n";
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != names.size())
            throw IoError("trace CSV row " + std::to_string(row) + " has " + std::to_string(cells.size())
                          + " cells, expected " + std::to_string(names.size()));
        for (std::size_t k = 1; k < cells.size(); ++k) {
            if (cells[k].empty()) continue;
            char* end = nullptr;
            std::strtod(cells[k].c_str(), &end);
            if (end == cells[k].c_str() || *end != '\0')
                throw IoError("trace CSV row " + std::to_string(row) + " has a non-numeric cell");
            out += cells[0] + "," + names[k] + "," + cells[k] + "\n";
        }
    }
    return out;
}

} // namespace ecpr
