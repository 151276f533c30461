// Command-line front end: simulate | run | table | trace-plotdata.

#include "ecpr/experiment.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string endpoint;
    std::size_t jobs = 1;
    std::vector<std::string> paths;
};

int fail(int code, const std::string& message)
{
    std::string line = message;
    for (auto& ch : line)
        if (ch == '\n') ch = ' ';
    std::cerr << "error: " << line << '\n';
    return code;
}

ecpr::ExperimentConfig load_config(const Options& o)
{
    if (o.config.empty()) throw ecpr::ConfigError("--config is required");
    auto c = ecpr::load_experiment_config(o.config);
    if (o.seed) c.seeds = {*o.seed};
    if (!o.out.empty()) c.output = o.out;
    if (!o.endpoint.empty()) {
        c.denoiser_endpoint = o.endpoint;
    } else if (const char* env = std::getenv("ECPR_DENOISER_ENDPOINT"); env != nullptr && *env != '\0') {
        if (!c.denoiser_endpoint) c.denoiser_endpoint = env;
    }
    return c;
}

int report(const std::vector<ecpr::JobStatus>& status)
{
    int code = 0;
    for (const auto& s : status) {
        if (s.ok) continue;
        if (s.diverged) {
            fail(kExitDiverged, "diverged: " + s.message);
            code = std::max(code, kExitDiverged);
        } else {
            fail(kExitUsage, s.message);
            if (code == 0) code = kExitUsage;
        }
    }
    return code;
}

void emit(const Options& o, const std::string& text)
{
    if (o.out.empty()) {
        std::cout << text;
        return;
    }
    ecpr::detail::write_file(o.out, text);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Phase retrieval by expectation-consistent inference with plug-in denoisers"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--config", o.config, "Experiment config (JSON)");
    app.add_option("--seed", o.seed, "Run only this seed");
    app.add_option("--out", o.out, "Output directory (simulate/run) or file (table/trace-plotdata)");
    app.add_option("--denoiser-endpoint", o.endpoint, "HOST:PORT or stdio:COMMAND of a denoiser server");
    app.add_option("--jobs", o.jobs, "Parallel jobs")->check(CLI::PositiveNumber);

    auto* simulate = app.add_subcommand("simulate", "Write ground truth, operator and measurements");
    auto* run = app.add_subcommand("run", "Reconstruct from simulated measurements");
    auto* table = app.add_subcommand("table", "Aggregate metrics.json files into a CSV table");
    table->add_option("dirs", o.paths, "Run directories")->required();
    auto* plot = app.add_subcommand("trace-plotdata", "Reshape a trace CSV into long format");
    plot->add_option("trace", o.paths, "Trace CSV")->required()->expected(1);
    for (auto* sub : {simulate, run, table, plot}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(kExitUsage, e.what());
    }

    try {
        if (simulate->parsed()) return report(ecpr::cmd_simulate(load_config(o), o.jobs));
        if (run->parsed()) return report(ecpr::cmd_run(load_config(o), o.jobs));
        std::vector<std::filesystem::path> paths(o.paths.begin(), o.paths.end());
        if (table->parsed()) {
            emit(o, ecpr::cmd_table(paths));
            return 0;
        }
        emit(o, ecpr::cmd_trace_plotdata(ecpr::detail::read_file(paths.front())));
        return 0;
    } catch (const ecpr::DivergenceError& e) {
        return fail(kExitDiverged, e.what());
    } catch (const std::exception& e) {
        return fail(kExitUsage, e.what());
    }
}
