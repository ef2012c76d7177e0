#include "shapfor/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "shapfor/benchmarks.hpp"
#include "shapfor/io.hpp"
#include "shapfor/testbed.hpp"

namespace shapfor {

unsigned default_threads() {
    if (const char* env = std::getenv("SHAPFOR_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v >= 1) return static_cast<unsigned>(v);
        throw ValidationError(std::string("SHAPFOR_THREADS must be a positive integer, got '") + env + "'");
    }
    return std::max(1U, std::thread::hardware_concurrency());
}

namespace {

/// Static k-d tree over points in [0,1]^p.
class KdTree {
public:
    KdTree(std::vector<double> pts, std::int32_t p) : pts_(std::move(pts)), p_(static_cast<std::size_t>(p)) {
        idx_.resize(pts_.size() / p_);
        std::iota(idx_.begin(), idx_.end(), 0);
        build(0, idx_.size(), 0);
    }

    std::size_t nearest(std::span<const double> x) const {
        std::size_t best = idx_[0];
        double best_d = INFINITY;
        search(0, idx_.size(), 0, x, best, best_d);
        return best;
    }

private:
    double coord(std::size_t i, std::size_t d) const { return pts_[i * p_ + d]; }

    void build(std::size_t lo, std::size_t hi, std::size_t depth) {
        if (hi - lo <= 1) return;
        const std::size_t d = depth % p_, mid = (lo + hi) / 2;
        std::nth_element(idx_.begin() + static_cast<std::ptrdiff_t>(lo), idx_.begin() + static_cast<std::ptrdiff_t>(mid),
                         idx_.begin() + static_cast<std::ptrdiff_t>(hi),
                         [&](std::size_t a, std::size_t b) { return coord(a, d) < coord(b, d); });
        build(lo, mid, depth + 1);
        build(mid + 1, hi, depth + 1);
    }

    void search(std::size_t lo, std::size_t hi, std::size_t depth, std::span<const double> x, std::size_t& best,
                double& best_d) const {
        if (lo >= hi) return;
        const std::size_t mid = (lo + hi) / 2, i = idx_[mid], d = depth % p_;
        double dist = 0.0;
        for (std::size_t k = 0; k < p_; ++k) dist += (coord(i, k) - x[k]) * (coord(i, k) - x[k]);
        if (dist < best_d || (dist == best_d && i < best)) {
            best_d = dist;
            best = i;
        }
        const double delta = x[d] - coord(i, d);
        const bool left_first = delta < 0.0;
        search(left_first ? lo : mid + 1, left_first ? mid : hi, depth + 1, x, best, best_d);
        if (delta * delta <= best_d) search(left_first ? mid + 1 : lo, left_first ? hi : mid, depth + 1, x, best, best_d);
    }

    std::vector<double> pts_;
    std::size_t p_;
    std::vector<std::size_t> idx_;
};

}  // namespace

BlackBox nearest_neighbour_box(const Dataset& data) {
    data.validate();
    auto [X, maps] = scale_inputs(data);
    auto tree = std::make_shared<const KdTree>(std::move(X), data.p);
    auto y = std::make_shared<const std::vector<double>>(data.y);
    return {data.p, [tree, y](std::span<const double> x) { return (*y)[tree->nearest(x)]; }};
}

namespace {

std::vector<double> parse_levels(const std::vector<double>& levels) {
    for (double l : levels) {
        if (!(l > 0.0 && l < 1.0)) throw ValidationError("--levels values must lie in (0,1)");
    }
    std::vector<double> sorted = levels;
    std::sort(sorted.begin(), sorted.end());
    return sorted;
}

Normalization parse_normalization(const std::string& s) {
    if (s == "raw") return Normalization::Raw;
    if (s == "normalized") return Normalization::Normalized;
    if (s == "both") return Normalization::Both;
    throw ValidationError("--normalization must be raw, normalized or both");
}

void parse_splitnet(const std::string& s, SamplerConfig& cfg) {
    if (s == "observed") {
        cfg.splitnet_mode = SplitNetMode::ObservedValues;
        return;
    }
    if (s.rfind("grid:", 0) == 0) {
        char* end = nullptr;
        const long g = std::strtol(s.c_str() + 5, &end, 10);
        if (*end == '\0' && g >= 1) {
            cfg.splitnet_mode = SplitNetMode::UniformGrid;
            cfg.grid_size = static_cast<std::int32_t>(g);
            return;
        }
    }
    throw ValidationError("--splitnet must be 'observed' or 'grid:N' with N >= 1, got '" + s + "'");
}

std::ofstream open_out(const std::string& path) {
    const std::filesystem::path fp(path);
    if (fp.has_parent_path()) std::filesystem::create_directories(fp.parent_path());
    std::ofstream f(path);
    if (!f) throw ValidationError("cannot write '" + path + "'");
    f.exceptions(std::ios::badbit);
    return f;
}

std::string join_levels(const std::vector<double>& levels) {
    std::string s;
    for (double l : levels) s += (s.empty() ? "" : ",") + format_real(l);
    return s;
}

void emit_report(const SensitivityReport& rep, const std::string& out_prefix, const std::string& plot,
                 const std::string& draws, std::ostream& out) {
    if (out_prefix.empty()) {
        out << report_to_text(rep);
    } else {
        open_out(out_prefix + ".json") << report_to_json(rep).dump(2) << '\n';
        open_out(out_prefix + ".txt") << report_to_text(rep);
        out << "wrote " << out_prefix << ".json and " << out_prefix << ".txt\n";
    }
    if (!plot.empty()) {
        auto f = open_out(plot);
        write_plot_csv(f, rep);
    }
    if (!draws.empty()) {
        auto f = open_out(draws);
        write_draws_csv(f, rep);
    }
}

struct FitArgs {
    std::string csv, response = "y", out, splitnet = "grid:100";
    SamplerConfig cfg;
    bool progress = false;
};

struct AnalyzeArgs {
    std::string ensemble, out, plot, draws, normalization = "both";
    std::int32_t m = 1, exact_threshold = 12;
    std::vector<double> levels{0.025, 0.975};
    std::uint64_t seed = 1;
    unsigned threads = 0;
};

struct OracleArgs {
    std::string target, response = "y", out, plot;
    std::int32_t d = 5, p = 0;
    OracleBudget budget;
    std::vector<double> levels{0.025, 0.975};
    std::uint64_t seed = 1;
};

struct GenerateArgs {
    std::string function, out, response = "y";
    std::int32_t d = 5, p = 0;
    std::int64_t n = 0;
    double noise = 0.25;
    std::uint64_t seed = 1;
};

struct BenchmarkArgs {
    std::string suite, out = "bench-results";
    std::uint64_t seed = 0;
};

int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
    SamplerConfig cfg = a.cfg;
    parse_splitnet(a.splitnet, cfg);
    const Dataset data = read_csv_file(a.csv, a.response);
    std::function<void(const ProgressLine&)> progress;
    if (a.progress) {
        progress = [&err](const ProgressLine& l) {
            err << "sweep " << l.sweep << " acceptance " << format_real(l.acceptance_rate) << " sigma2 "
                << format_real(l.sigma2) << '\n';
        };
    }
    const FitResult res = fit_with_diagnostics(data, cfg, progress);
    {
        auto f = open_out(a.out);
        write_ensemble(f, res.ensemble);
    }
    out << "fit: n=" << data.n << " p=" << data.p << " trees=" << cfg.num_trees << " burn=" << cfg.n_burn
        << " draws=" << cfg.n_draw << " thin=" << cfg.thin << " seed=" << cfg.seed << '\n'
        << "acceptance rate: " << format_real(res.diagnostics.acceptance_rate) << '\n'
        << "posterior mean sigma2 (raw units): " << format_real(res.diagnostics.sigma2_mean_raw) << '\n'
        << "wrote " << a.out << '\n';
    return kExitOk;
}

int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
    std::ifstream in(a.ensemble);
    if (!in) throw ValidationError("cannot open ensemble file '" + a.ensemble + "'");
    const PosteriorEnsemble e = read_ensemble(in);
    ReportOptions opt;
    opt.m = a.m;
    opt.levels = parse_levels(a.levels);
    opt.normalization = parse_normalization(a.normalization);
    opt.exact_threshold = a.exact_threshold;
    opt.seed = a.seed;
    opt.threads = a.threads == 0 ? default_threads() : a.threads;
    opt.keep_draws = !a.draws.empty();
    if (opt.m < 1) throw ValidationError("--m must be >= 1");
    SensitivityReport rep = assemble_report(e, opt);
    rep.extra["ensemble"] = a.ensemble;
    rep.extra["m"] = std::to_string(opt.m);
    rep.extra["levels"] = join_levels(opt.levels);
    rep.extra["normalization"] = a.normalization;
    rep.extra["exact_threshold"] = std::to_string(opt.exact_threshold);
    rep.extra["seed"] = std::to_string(opt.seed);
    rep.extra["threads"] = std::to_string(opt.threads);
    emit_report(rep, a.out, a.plot, a.draws, out);
    return kExitOk;
}

int cmd_oracle(const OracleArgs& a, std::ostream& out) {
    BlackBox box;
    std::vector<std::string> names;
    std::string target_kind;
    if (std::filesystem::exists(a.target)) {
        const Dataset data = read_csv_file(a.target, a.response);
        box = nearest_neighbour_box(data);
        names = data.names;
        target_kind = "csv-nearest-neighbour";
    } else {
        const std::int32_t p = a.p == 0 ? a.d : a.p;
        box = as_black_box(TestFunction::parse(a.target, a.d, p));
        target_kind = "test-function";
    }
    const auto levels = parse_levels(a.levels);
    SensitivityReport rep = oracle_report(box, a.budget, levels, a.seed, names);
    rep.extra["target"] = a.target;
    rep.extra["target_kind"] = target_kind;
    rep.extra["levels"] = join_levels(levels);
    rep.extra["seed"] = std::to_string(a.seed);
    emit_report(rep, a.out, a.plot, "", out);
    return kExitOk;
}

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
    const std::int32_t p = a.p == 0 ? a.d : a.p;
    const TestFunction fn = TestFunction::parse(a.function, a.d, p);
    const Dataset data = generate(fn, {a.n, a.noise, a.seed});
    if (a.out.empty()) {
        write_csv(out, data, a.response);
    } else {
        auto f = open_out(a.out);
        write_csv(f, data, a.response);
        out << "wrote " << data.n << " rows to " << a.out << '\n';
    }
    return kExitOk;
}

int cmd_benchmark(const BenchmarkArgs& a, std::ostream& out) {
    const auto results = run_suite(a.suite, a.seed);
    nlohmann::json j = {{"suite", a.suite}, {"seed", a.seed}, {"criteria", nlohmann::json::array()}};
    bool all = true;
    for (const auto& r : results) {
        j["criteria"].push_back(to_json(r));
        all = all && r.pass;
        out << "criterion " << r.id << ' ' << (r.pass ? "PASS" : "FAIL") << "  " << r.name << ": " << r.summary
            << '\n';
    }
    j["pass"] = all;
    const std::string path = (std::filesystem::path(a.out) / (a.suite + "-seed" + std::to_string(a.seed) + ".json")).string();
    open_out(path) << j.dump(2) << '\n';
    out << "wrote " << path << '\n';
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Variance-based sensitivity analysis of Bayesian additive regression tree posteriors", "shapfor"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML/INI file of option values; command-line flags take precedence");

    FitArgs fa;
    auto* fit = app.add_subcommand("fit", "fit the sum-of-trees model to a CSV file and write an ensemble");
    fit->add_option("csv", fa.csv, "input CSV with a header row")->required()->check(CLI::ExistingFile);
    fit->add_option("--response", fa.response, "name of the response column")->capture_default_str();
    fit->add_option("--out", fa.out, "ensemble file to write")->required();
    fit->add_option("--trees", fa.cfg.num_trees, "number of trees")->capture_default_str();
    fit->add_option("--burn", fa.cfg.n_burn, "burn-in sweeps")->capture_default_str();
    fit->add_option("--draws", fa.cfg.n_draw, "retained posterior draws")->capture_default_str();
    fit->add_option("--thin", fa.cfg.thin, "keep every thin-th sweep")->capture_default_str();
    fit->add_option("--alpha", fa.cfg.alpha_split, "tree prior alpha")->capture_default_str();
    fit->add_option("--beta", fa.cfg.beta_split, "tree prior beta")->capture_default_str();
    fit->add_option("--k", fa.cfg.k, "leaf prior scale k")->capture_default_str();
    fit->add_option("--nu", fa.cfg.nu, "sigma2 prior degrees of freedom")->capture_default_str();
    fit->add_option("--q", fa.cfg.q, "sigma2 prior quantile")->capture_default_str();
    fit->add_flag("--sparsity", fa.cfg.sparsity, "Dirichlet split-probability sparsity");
    fit->add_option("--sparsity-a", fa.cfg.sparsity_a, "Dirichlet concentration a")->capture_default_str();
    fit->add_option("--splitnet", fa.splitnet, "grid:N or observed")->capture_default_str();
    fit->add_option("--min-leaf-obs", fa.cfg.min_leaf_obs, "minimum observations per leaf")->capture_default_str();
    fit->add_option("--seed", fa.cfg.seed, "random seed")->capture_default_str();
    fit->add_flag("--progress", fa.progress, "print sweep progress lines to stderr");

    AnalyzeArgs aa;
    auto* analyze = app.add_subcommand("analyze", "compute Sobol' and Shapley indices from an ensemble");
    analyze->add_option("ensemble", aa.ensemble, "ensemble file written by fit")->required();
    analyze->add_option("--m", aa.m, "random subsets per draw in sampled mode")->capture_default_str();
    analyze->add_option("--levels", aa.levels, "credible-interval quantile levels")->delimiter(',')->capture_default_str();
    analyze->add_option("--normalization", aa.normalization, "raw, normalized or both")->capture_default_str();
    analyze->add_option("--exact-threshold", aa.exact_threshold, "exact Shapley when p <= this")->capture_default_str();
    analyze->add_option("--seed", aa.seed, "subset-sampling seed")->capture_default_str();
    analyze->add_option("--threads", aa.threads, "worker threads (default SHAPFOR_THREADS or all cores)");
    analyze->add_option("--out", aa.out, "write PREFIX.json and PREFIX.txt instead of printing");
    analyze->add_option("--plot", aa.plot, "plot-data CSV (input,index_type,point,lo,hi)");
    analyze->add_option("--dump-draws", aa.draws, "per-draw index values CSV");

    OracleArgs oa;
    auto* oracle = app.add_subcommand("oracle", "Monte-Carlo indices of a test function or a CSV lookup table");
    oracle->add_option("target", oa.target, "test function name or CSV path")->required();
    oracle->add_option("--d", oa.d, "active dimension of a test function")->capture_default_str();
    oracle->add_option("--p", oa.p, "ambient dimension (default d)");
    oracle->add_option("--response", oa.response, "response column of a CSV target")->capture_default_str();
    oracle->add_option("--n-outer", oa.budget.n_outer, "outer samples per cost")->capture_default_str();
    oracle->add_option("--n-inner", oa.budget.n_inner, "inner samples per outer sample")->capture_default_str();
    oracle->add_option("--subsets", oa.budget.n_subsets, "random subsets per Shapley effect")->capture_default_str();
    oracle->add_option("--n-variance", oa.budget.n_variance, "samples for the variance")->capture_default_str();
    oracle->add_option("--levels", oa.levels, "interval levels")->delimiter(',')->capture_default_str();
    oracle->add_option("--seed", oa.seed, "random seed")->capture_default_str();
    oracle->add_option("--out", oa.out, "write PREFIX.json and PREFIX.txt instead of printing");
    oracle->add_option("--plot", oa.plot, "plot-data CSV");

    GenerateArgs ga;
    auto* gen = app.add_subcommand("generate", "write a synthetic data set from a test function");
    gen->add_option("function", ga.function, "friedman, morris, bratley or gfunction")->required();
    gen->add_option("--d", ga.d, "active dimension")->capture_default_str();
    gen->add_option("--p", ga.p, "ambient dimension (default d)");
    gen->add_option("--n", ga.n, "rows (default 50 p)");
    gen->add_option("--noise", ga.noise, "noise variance as a fraction of Var f")->capture_default_str();
    gen->add_option("--seed", ga.seed, "random seed")->capture_default_str();
    gen->add_option("--response", ga.response, "response column name")->capture_default_str();
    gen->add_option("--out", ga.out, "CSV path (default stdout)");

    BenchmarkArgs ba;
    auto* bench = app.add_subcommand("benchmark", "run an acceptance scenario and write metrics JSON");
    bench->add_option("suite", ba.suite, "table-va1-oracle, friedman-fit, morris-wide or invariant-sweep")->required();
    bench->add_option("--seed", ba.seed, "random seed")->required();
    bench->add_option("--out", ba.out, "results directory")->capture_default_str();

    std::vector<const char*> argv{"shapfor"};
    for (const auto& s : args) argv.push_back(s.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitValidation;
    }

    try {
        if (fit->parsed()) return cmd_fit(fa, out, err);
        if (analyze->parsed()) return cmd_analyze(aa, out);
        if (oracle->parsed()) return cmd_oracle(oa, out);
        if (gen->parsed()) return cmd_generate(ga, out);
        if (bench->parsed()) return cmd_benchmark(ba, out);
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "runtime failure: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitValidation;
}

}  // namespace shapfor
