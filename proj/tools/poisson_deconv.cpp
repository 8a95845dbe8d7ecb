// poisson-deconv: command-line front end for the deconvolution experiments.
//
//   poisson-deconv run [config] [--preset P] [--lambda L] [--n-trials N] ...
//   poisson-deconv kernels dump [--out-dir DIR]
//   poisson-deconv dict info <atoms-file>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pdeconv/pdeconv.hpp"

namespace {

int dump_kernels(const std::string& out_dir) {
    const pdeconv::Image gauss = pdeconv::make_gaussian_kernel_1d(0.2 * std::numbers::pi).as_image();
    const pdeconv::Image invq = pdeconv::make_inverse_quadratic_kernel_2d().as_image();
    if (out_dir.empty()) {
        std::cout << "# gaussian_1d cutoff=0.2pi sigma=" << pdeconv::gaussian_sigma_for_cutoff(0.2 * std::numbers::pi)
                  << '\n';
        pdeconv::write_matrix_text(std::cout, gauss.rows(), gauss.cols(), gauss.values());
        std::cout << "# inverse_quadratic_2d h[i,j]=1/(i^2+j^2+1), i,j=-7..7, normalized\n";
        pdeconv::write_matrix_text(std::cout, invq.rows(), invq.cols(), invq.values());
        return 0;
    }
    std::filesystem::create_directories(out_dir);
    pdeconv::write_matrix_text(std::filesystem::path(out_dir) / "gaussian_1d.txt", gauss);
    pdeconv::write_matrix_text(std::filesystem::path(out_dir) / "inverse_quadratic_2d.txt", invq);
    return 0;
}

int dict_info(const std::string& path) {
    const pdeconv::PatchAtoms atoms = pdeconv::patch_load(path);
    double lo = 1e300, hi = 0.0;
    for (const auto& a : atoms.atoms) {
        lo = std::min(lo, *std::min_element(a.begin(), a.end()));
        hi = std::max(hi, *std::max_element(a.begin(), a.end()));
    }
    std::cout << "patch_rows " << atoms.patch_rows << '\n'
              << "patch_cols " << atoms.patch_cols << '\n'
              << "num_atoms " << atoms.num_atoms() << '\n'
              << "stride " << atoms.stride << '\n'
              << "overcompleteness " << atoms.overcompleteness() << '\n'
              << "min_value " << lo << '\n'
              << "max_value " << hi << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Poisson deconvolution with Richardson-Lucy, sparse RL and RLTV"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run an experiment from a key=value config and/or a preset");
    std::string config_path, preset, out_dir, solvers;
    std::vector<std::string> extra;
    double lambda = -1.0;
    long long n_trials = -1, seed = -1, jobs = -1;
    bool dump = false;
    run->add_option("config", config_path, "key=value configuration file")->check(CLI::ExistingFile);
    run->add_option("--preset", preset, "oned_high | oned_low | twod_splines | twod_patches | custom");
    run->add_option("--lambda", lambda, "regularization weight for SRL");
    run->add_option("--n-trials", n_trials, "number of independent trials");
    run->add_option("--seed", seed, "base random seed");
    run->add_option("--solver", solvers, "comma-separated solver list, e.g. rl_oracle,srl");
    run->add_flag("--dump-trials", dump, "write ground truth, data and reconstructions per trial");
    run->add_option("--out-dir", out_dir, "output directory");
    run->add_option("--jobs", jobs, "number of worker threads");
    run->add_option("--set", extra, "extra key=value override (repeatable)");

    auto* kernels = app.add_subcommand("kernels", "Kernel utilities");
    auto* kdump = kernels->add_subcommand("dump", "Print the stock blur kernels in matrix text format");
    std::string kernel_dir;
    kdump->add_option("--out-dir", kernel_dir, "write gaussian_1d.txt and inverse_quadratic_2d.txt here");
    kernels->require_subcommand(1);

    auto* dict = app.add_subcommand("dict", "Dictionary utilities");
    auto* dinfo = dict->add_subcommand("info", "Summarize a patch atom file");
    std::string atoms_path;
    dinfo->add_option("atoms-file", atoms_path, "atom file")->required();
    dict->require_subcommand(1);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            pdeconv::Settings settings;
            if (!config_path.empty()) settings = pdeconv::read_settings_file(config_path);
            if (!preset.empty()) settings.emplace_back("preset", preset);
            if (config_path.empty() && preset.empty()) {
                std::cerr << "poisson-deconv run: give a config file or --preset\n";
                return 2;
            }
            if (lambda >= 0.0) settings.emplace_back("lambda", std::to_string(lambda));
            if (n_trials >= 0) settings.emplace_back("n_trials", std::to_string(n_trials));
            if (seed >= 0) settings.emplace_back("seed", std::to_string(seed));
            if (jobs >= 0) settings.emplace_back("jobs", std::to_string(jobs));
            if (!solvers.empty()) settings.emplace_back("solvers", solvers);
            if (dump) settings.emplace_back("dump_trials", "true");
            if (!out_dir.empty()) settings.emplace_back("out_dir", out_dir);
            for (const auto& kv : extra) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) throw pdeconv::Error("--set expects key=value, got '" + kv + "'");
                settings.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
            }
            return pdeconv::run_experiment(pdeconv::build_config(settings));
        }
        if (*kdump) return dump_kernels(kernel_dir);
        if (*dinfo) return dict_info(atoms_path);
    } catch (const std::exception& e) {
        std::cerr << "poisson-deconv: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
