#pragma once

// Experiment harness: presets, key=value configuration, seeded trials and
// CSV/PGM output.

#include <atomic>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pdeconv/core.hpp"
#include "pdeconv/dictionary.hpp"
#include "pdeconv/io.hpp"
#include "pdeconv/kernel.hpp"
#include "pdeconv/metrics.hpp"
#include "pdeconv/model.hpp"
#include "pdeconv/simulate.hpp"
#include "pdeconv/solvers.hpp"

namespace pdeconv {

enum class Preset { oned_high, oned_low, twod_splines, twod_patches, custom };
enum class DictionaryKind { haar1d, spline2d, patch };

struct SolverSpec {
    Method method = Method::srl;
    StopRule stop = StopRule::converged;

    std::string name() const {
        return std::string(to_string(method)) + (stop == StopRule::nmse_optimal ? "_oracle" : "");
    }

    static SolverSpec parse(const std::string& token) {
        static const std::map<std::string, SolverSpec> table = {
            {"rl", {Method::rl, StopRule::converged}},
            {"rl_oracle", {Method::rl, StopRule::nmse_optimal}},
            {"srl", {Method::srl, StopRule::converged}},
            {"srl_oracle", {Method::srl, StopRule::nmse_optimal}},
            {"rltv", {Method::rltv, StopRule::converged}},
            {"rltv_oracle", {Method::rltv, StopRule::nmse_optimal}},
        };
        const auto it = table.find(token);
        if (it == table.end()) throw Error("unknown solver '" + token + "'");
        return it->second;
    }
};

struct ExperimentConfig {
    Preset experiment = Preset::custom;
    DictionaryKind dictionary = DictionaryKind::haar1d;
    std::uint64_t seed = 1;
    std::size_t n_trials = 200;
    std::vector<SolverSpec> solvers;
    SolverConfig solver;
    /// Per-solver overrides of `solver`, keyed by solver name.
    std::map<std::string, SolverConfig> solver_overrides;

    // 1-D sparse signals
    std::size_t signal_length = 128;
    std::vector<int> haar_levels{2, 3, 4, 5};
    double cutoff = 0.2 * std::numbers::pi;
    double peak = 256.0;
    bool peak_on_blurred = true;
    double sparsity_min = 0.015;
    double sparsity_max = 0.03;

    // 2-D images
    std::optional<std::filesystem::path> image_path;
    std::optional<std::filesystem::path> kernel_path;
    std::size_t phantom_size = 128;
    double snr_db = 15.0;
    int spline_levels = 4;
    std::optional<std::filesystem::path> atoms_path;
    std::size_t patch_size = 16;
    std::size_t patch_atoms = 512;
    std::size_t patch_stride = 8;

    std::filesystem::path out_dir = "out";
    bool dump_trials = false;
    std::size_t jobs = 1;

    SolverConfig config_for(const SolverSpec& s) const {
        auto it = solver_overrides.find(s.name());
        SolverConfig c = it != solver_overrides.end() ? it->second : solver;
        c.stop = s.stop;
        return c;
    }

    void validate() const {
        if (solvers.empty()) throw Error("config: at least one solver is required");
        if (n_trials == 0) throw Error("config: n_trials must be positive");
        if (jobs == 0) throw Error("config: jobs must be positive");
        for (const auto& s : solvers) config_for(s).validate();
        for (const auto* p : {&image_path, &kernel_path, &atoms_path}) {
            if (*p && !std::filesystem::exists(**p)) throw Error("config: file not found: " + (*p)->string());
        }
        if (dictionary == DictionaryKind::haar1d) {
            TrialSpec{seed, n_trials, sparsity_min, sparsity_max, peak, peak_on_blurred}.validate();
        }
    }
};

inline const char* to_string(Preset p) {
    switch (p) {
        case Preset::oned_high: return "oned_high";
        case Preset::oned_low: return "oned_low";
        case Preset::twod_splines: return "twod_splines";
        case Preset::twod_patches: return "twod_patches";
        default: return "custom";
    }
}

inline Preset parse_preset(const std::string& s) {
    for (Preset p : {Preset::oned_high, Preset::oned_low, Preset::twod_splines, Preset::twod_patches, Preset::custom}) {
        if (s == to_string(p)) return p;
    }
    throw Error("unknown preset '" + s + "'");
}

/// Parameter sets of the reference experiments.
inline ExperimentConfig preset_config(Preset p) {
    ExperimentConfig cfg;
    cfg.experiment = p;
    switch (p) {
        case Preset::oned_high:
        case Preset::oned_low:
            cfg.dictionary = DictionaryKind::haar1d;
            cfg.peak = p == Preset::oned_high ? 256.0 : 32.0;
            cfg.solver.lambda = 0.2;
            cfg.solvers = {SolverSpec::parse("rl"), SolverSpec::parse("rl_oracle"), SolverSpec::parse("srl")};
            break;
        case Preset::twod_splines:
        case Preset::twod_patches:
            cfg.dictionary = p == Preset::twod_splines ? DictionaryKind::spline2d : DictionaryKind::patch;
            cfg.solver.lambda = 0.1;
            cfg.solver.gamma_tv = 0.002;
            cfg.solvers = {SolverSpec::parse("rl_oracle"), SolverSpec::parse("rltv_oracle"), SolverSpec::parse("srl")};
            break;
        case Preset::custom:
            cfg.solvers = {SolverSpec::parse("srl")};
            break;
    }
    return cfg;
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, sep);) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size()) {
        throw Error("config: invalid value '" + value + "' for " + key);
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw Error("config: invalid boolean '" + value + "' for " + key);
}

inline bool apply_solver_field(SolverConfig& c, const std::string& field, const std::string& key,
                               const std::string& value) {
    if (field == "lambda") c.lambda = parse_number<double>(key, value);
    else if (field == "gamma_tv") c.gamma_tv = parse_number<double>(key, value);
    else if (field == "epsilon_stop") c.epsilon_stop = parse_number<double>(key, value);
    else if (field == "max_iters") c.max_iters = parse_number<std::size_t>(key, value);
    else if (field == "eps_div") c.eps_div = parse_number<double>(key, value);
    else if (field == "eps_tv") c.eps_tv = parse_number<double>(key, value);
    else if (field == "tv_denominator_floor") c.tv_denominator_floor = parse_number<double>(key, value);
    else return false;
    return true;
}

}  // namespace detail

/// Applies one `key=value` setting.  `preset` is handled by the loaders.
inline void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_number;
    if (const auto dot = key.find('.'); dot != std::string::npos) {
        const std::string solver = key.substr(0, dot);
        SolverSpec::parse(solver);
        auto [it, inserted] = cfg.solver_overrides.try_emplace(solver, cfg.solver);
        if (!detail::apply_solver_field(it->second, key.substr(dot + 1), key, value)) {
            throw Error("config: unknown key '" + key + "'");
        }
        return;
    }
    if (detail::apply_solver_field(cfg.solver, key, key, value)) {
        for (auto& [name, c] : cfg.solver_overrides) detail::apply_solver_field(c, key, key, value);
        return;
    }
    if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "n_trials") cfg.n_trials = parse_number<std::size_t>(key, value);
    else if (key == "solvers") {
        cfg.solvers.clear();
        for (const auto& tok : detail::split(value, ',')) cfg.solvers.push_back(SolverSpec::parse(tok));
    } else if (key == "dictionary") {
        if (value == "haar1d") cfg.dictionary = DictionaryKind::haar1d;
        else if (value == "spline2d") cfg.dictionary = DictionaryKind::spline2d;
        else if (value == "patch") cfg.dictionary = DictionaryKind::patch;
        else throw Error("config: unknown dictionary '" + value + "'");
    } else if (key == "signal_length") cfg.signal_length = parse_number<std::size_t>(key, value);
    else if (key == "haar_levels") {
        cfg.haar_levels.clear();
        for (const auto& tok : detail::split(value, ',')) cfg.haar_levels.push_back(parse_number<int>(key, tok));
    } else if (key == "cutoff") cfg.cutoff = parse_number<double>(key, value);
    else if (key == "peak") cfg.peak = parse_number<double>(key, value);
    else if (key == "peak_on") {
        if (value == "blurred") cfg.peak_on_blurred = true;
        else if (value == "signal") cfg.peak_on_blurred = false;
        else throw Error("config: peak_on must be 'blurred' or 'signal'");
    } else if (key == "sparsity_min") cfg.sparsity_min = parse_number<double>(key, value);
    else if (key == "sparsity_max") cfg.sparsity_max = parse_number<double>(key, value);
    else if (key == "image") cfg.image_path = value;
    else if (key == "kernel") cfg.kernel_path = value;
    else if (key == "phantom_size") cfg.phantom_size = parse_number<std::size_t>(key, value);
    else if (key == "snr_db") cfg.snr_db = parse_number<double>(key, value);
    else if (key == "spline_levels") cfg.spline_levels = parse_number<int>(key, value);
    else if (key == "atoms") cfg.atoms_path = value;
    else if (key == "patch_size") cfg.patch_size = parse_number<std::size_t>(key, value);
    else if (key == "patch_atoms") cfg.patch_atoms = parse_number<std::size_t>(key, value);
    else if (key == "patch_stride") cfg.patch_stride = parse_number<std::size_t>(key, value);
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "dump_trials") cfg.dump_trials = detail::parse_bool(key, value);
    else if (key == "jobs") cfg.jobs = parse_number<std::size_t>(key, value);
    else throw Error("config: unknown key '" + key + "'");
}

using Settings = std::vector<std::pair<std::string, std::string>>;

/// Flat `key = value` lines; `#` starts a comment.
inline Settings parse_settings(std::istream& in, const std::string& name = "config") {
    Settings out;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw Error(name + ":" + std::to_string(lineno) + ": expected key=value");
        out.emplace_back(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    return out;
}

/// Starts from the preset named by the last `preset`/`experiment` entry (or
/// `custom`), then applies every other entry in order.
inline ExperimentConfig build_config(const Settings& settings) {
    Preset preset = Preset::custom;
    for (const auto& [k, v] : settings)
        if (k == "preset" || k == "experiment") preset = parse_preset(v);
    ExperimentConfig cfg = preset_config(preset);
    for (const auto& [k, v] : settings)
        if (k != "preset" && k != "experiment") apply_setting(cfg, k, v);
    cfg.validate();
    return cfg;
}

inline Settings read_settings_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path.string());
    return parse_settings(in, path.string());
}

// -------------------------------------------------------------------- runs

struct TrialOutcome {
    std::vector<double> nmse;  // per solver
    std::vector<double> ssim;
    std::vector<SolverTrace> traces;
};

struct ExperimentResult {
    std::vector<MetricReport> reports;
    /// Trial-averaged traces, one per solver.
    std::vector<SolverTrace> mean_traces;
};

namespace detail {

/// Everything shared by the trials of one experiment.
struct ExperimentSetup {
    std::optional<ForwardModel> model;
    std::optional<Image> fixed_truth;  // 2-D runs reuse one scaled image
    SsimOptions ssim;
};

inline ExperimentSetup make_setup(const ExperimentConfig& cfg) {
    ExperimentSetup s;
    if (cfg.dictionary == DictionaryKind::haar1d) {
        ConvKernel h = cfg.kernel_path ? ConvKernel::from_image(load_image(*cfg.kernel_path), true)
                                       : make_gaussian_kernel_1d(cfg.cutoff);
        s.model.emplace(std::move(h), HaarDictionary(cfg.signal_length, cfg.haar_levels));
        s.ssim = SsimOptions{8, 1};
        return s;
    }
    const Image base = cfg.image_path ? load_image(*cfg.image_path) : make_phantom(cfg.phantom_size, cfg.phantom_size);
    ConvKernel h =
        cfg.kernel_path ? ConvKernel::from_image(load_image(*cfg.kernel_path), true) : make_inverse_quadratic_kernel_2d();
    if (cfg.dictionary == DictionaryKind::spline2d) {
        s.model.emplace(h, SplineDictionary(base.rows(), base.cols(), cfg.spline_levels));
    } else {
        PatchAtoms atoms = cfg.atoms_path ? patch_load(*cfg.atoms_path)
                                          : make_synthetic_patch_atoms(cfg.patch_size, cfg.patch_size,
                                                                       cfg.patch_atoms, cfg.patch_stride, cfg.seed);
        s.model.emplace(h, PatchDictionary(std::move(atoms), base.rows(), base.cols()));
    }
    s.fixed_truth = scalar_mul(base, snr_scale_factor(conv_forward(h, base), cfg.snr_db));
    return s;
}

inline TrialOutcome run_trial(const ExperimentConfig& cfg, const ExperimentSetup& setup, std::size_t trial) {
    const ForwardModel& model = *setup.model;
    Rng rng = rng_for_trial(cfg.seed, trial);
    Image truth;
    if (setup.fixed_truth) {
        truth = *setup.fixed_truth;
    } else {
        const TrialSpec spec{cfg.seed, cfg.n_trials, cfg.sparsity_min, cfg.sparsity_max, cfg.peak,
                             cfg.peak_on_blurred};
        truth = synth_sparse_signal(spec, model, rng).signal;
    }
    const Image g = poisson_sample(conv_forward(model.kernel(), truth), rng);

    if (cfg.dump_trials) {
        write_matrix_text(cfg.out_dir / ("truth_" + std::to_string(trial) + ".txt"), truth);
        write_matrix_text(cfg.out_dir / ("measured_" + std::to_string(trial) + ".txt"), g);
    }

    TrialOutcome out;
    for (const auto& spec : cfg.solvers) {
        SolverResult r = run_solver(spec.method, g, model, cfg.config_for(spec), &truth);
        out.nmse.push_back(nmse(truth, r.estimate));
        out.ssim.push_back(ssim(truth, r.estimate, setup.ssim));
        if (cfg.dump_trials) {
            write_pgm(cfg.out_dir / ("recon_" + spec.name() + "_" + std::to_string(trial) + ".pgm"), r.estimate);
        }
        out.traces.push_back(std::move(r.trace));
    }
    return out;
}

/// Per-iteration mean over trials.  A trial that stopped early contributes its
/// final record to every later iteration.
inline SolverTrace average_traces(const std::vector<const SolverTrace*>& traces) {
    std::size_t len = 0;
    for (const auto* t : traces) len = std::max(len, t->records.size());
    SolverTrace mean;
    mean.oracle = !traces.empty() && traces.front()->oracle;
    mean.terminated_by = traces.empty() ? Termination::max_iters : traces.front()->terminated_by;
    std::vector<double> obj(traces.size()), rel(traces.size()), err(traces.size());
    for (std::size_t i = 0; i < len; ++i) {
        bool have_nmse = true;
        for (std::size_t k = 0; k < traces.size(); ++k) {
            const auto& recs = traces[k]->records;
            const TraceRecord& r = recs[std::min(i, recs.size() - 1)];
            obj[k] = r.objective;
            rel[k] = r.rel_change;
            have_nmse = have_nmse && r.nmse.has_value();
            err[k] = r.nmse.value_or(0.0);
        }
        TraceRecord rec{i + 1, average_trials(obj).mean, average_trials(rel).mean, std::nullopt};
        if (have_nmse) rec.nmse = average_trials(err).mean;
        mean.records.push_back(rec);
    }
    mean.selected_iter = len;
    return mean;
}

}  // namespace detail

/// Runs every trial, writes metrics.csv and trace_<solver>.csv under
/// cfg.out_dir, and returns the aggregated numbers.  Output depends only on
/// the configuration, not on cfg.jobs.
inline ExperimentResult run_experiment_collect(const ExperimentConfig& cfg) {
    cfg.validate();
    std::filesystem::create_directories(cfg.out_dir);
    const detail::ExperimentSetup setup = detail::make_setup(cfg);

    std::vector<std::optional<TrialOutcome>> outcomes(cfg.n_trials);
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    auto worker = [&] {
        for (std::size_t t; (t = next.fetch_add(1)) < cfg.n_trials;) {
            try {
                outcomes[t] = detail::run_trial(cfg, setup, t);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (std::size_t j = 1; j < std::min(cfg.jobs, cfg.n_trials); ++j) pool.emplace_back(worker);
        worker();
    }
    if (error) std::rethrow_exception(error);

    ExperimentResult result;
    for (std::size_t s = 0; s < cfg.solvers.size(); ++s) {
        std::vector<double> nm, ss;
        std::vector<const SolverTrace*> traces;
        for (const auto& o : outcomes) {
            nm.push_back(o->nmse[s]);
            ss.push_back(o->ssim[s]);
            traces.push_back(&o->traces[s]);
        }
        const SolverSpec& spec = cfg.solvers[s];
        result.reports.push_back(make_report(spec.name(), nm, ss, spec.stop == StopRule::nmse_optimal));
        result.mean_traces.push_back(detail::average_traces(traces));
    }

    {
        std::ofstream out(cfg.out_dir / "metrics.csv");
        if (!out) throw Error("cannot write metrics.csv in " + cfg.out_dir.string());
        out << "# experiment=" << to_string(cfg.experiment) << " seed=" << cfg.seed << " ssim_window="
            << setup.ssim.window_rows << "x" << setup.ssim.window_cols << " ssim_k1=" << setup.ssim.k1
            << " ssim_k2=" << setup.ssim.k2 << " ssim_range=max_of_both\n";
        out << kMetricCsvHeader << '\n';
        for (const auto& r : result.reports) write_metric_row(out, r);
    }
    for (std::size_t s = 0; s < cfg.solvers.size(); ++s) {
        std::ofstream out(cfg.out_dir / ("trace_" + cfg.solvers[s].name() + ".csv"));
        if (!out) throw Error("cannot write trace file in " + cfg.out_dir.string());
        write_trace_csv(out, result.mean_traces[s]);
    }
    return result;
}

/// Exit-code wrapper for the command line.
inline int run_experiment(const ExperimentConfig& cfg, std::ostream& err = std::cerr) {
    try {
        run_experiment_collect(cfg);
        return 0;
    } catch (const std::exception& e) {
        err << "poisson-deconv: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace pdeconv
