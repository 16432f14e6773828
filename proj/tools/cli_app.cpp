#include "cli_app.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include "redct/ct_sim.hpp"
#include "redct/errors.hpp"
#include "redct/image_io.hpp"
#include "redct/metrics.hpp"
#include "redct/red_model.hpp"
#include "redct/tensor_io.hpp"
#include "redct/training.hpp"

namespace fs = std::filesystem;

namespace redct::cli {
namespace {

// Configuration problems the user must fix; mapped to exit code 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct SimulateArgs {
    std::string out;
    std::size_t count = 9;
    std::size_t size = 64;
    std::size_t views = 180;
    std::size_t detectors = 0;
    double photons = 1e4;
    double attenuation = 16.0;
    std::uint64_t seed = 1;
};

struct TrainArgs {
    std::string config;
    std::string out;
};

struct DenoiseArgs {
    std::string model;
    std::string in;
    std::string out;
};

struct EvalArgs {
    std::string model;
    std::string manifest;
    std::string out;
};

struct SweepArgs {
    std::vector<int> layers{4, 8, 12};
    std::string config;
    std::string out;
    std::string eval_manifest;
    bool parallel = false;
};

TrainConfig load_config_or_usage(const std::string& path) {
    if (!fs::exists(path)) throw UsageError("config file not found: " + path);
    try {
        return load_train_config(path);
    } catch (const InvalidConfig& e) {
        throw UsageError(path + ": " + e.what());
    } catch (const IoError& e) {
        throw UsageError(e.what());
    }
}

int do_simulate(const SimulateArgs& a, std::ostream& out) {
    out << "simulate\n"
        << "out=" << a.out << "\ncount=" << a.count << "\nsize=" << a.size << "\nviews=" << a.views
        << "\ndetectors=" << (a.detectors ? a.detectors : default_detectors(a.size)) << "\nphotons=" << num(a.photons)
        << "\nattenuation_scale=" << num(a.attenuation) << "\nseed=" << a.seed << '\n';
    if (a.size < 32) throw UsageError("--size must be >= 32");
    if (!(a.photons > 0.0)) throw UsageError("--photons must be positive");
    fs::create_directories(a.out);
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < a.count; ++i) {
        PairConfig pc;
        pc.seed = a.seed + i;
        pc.size = a.size;
        pc.views = a.views;
        pc.detectors = a.detectors;
        pc.photons = a.photons;
        pc.attenuation_scale = a.attenuation;
        const ImagePair pair = make_pair(pc);
        char stem[32];
        std::snprintf(stem, sizeof stem, "pair_%03zu", i);
        const std::string clean = std::string(stem) + "_clean";
        const std::string noisy = std::string(stem) + "_noisy";
        write_rtf(fs::path(a.out) / (clean + ".rtf"), pair.clean);
        write_rtf(fs::path(a.out) / (noisy + ".rtf"), pair.noisy);
        write_pgm(fs::path(a.out) / (clean + ".pgm"), pair.clean);
        write_pgm(fs::path(a.out) / (noisy + ".pgm"), pair.noisy);
        entries.push_back({pc.seed, pc.photons, pc.views, clean + ".rtf", noisy + ".rtf"});
    }
    write_manifest(fs::path(a.out) / "manifest.tsv", entries);
    out << "wrote " << entries.size() << " pairs to " << (fs::path(a.out) / "manifest.tsv").string() << '\n';
    return kOk;
}

int do_train(const TrainArgs& a, std::ostream& out) {
    const TrainConfig config = load_config_or_usage(a.config);
    const std::size_t threads = default_thread_count();
    out << "train\n" << format_train_config(config) << "out=" << a.out << "\nthreads=" << threads << '\n';
    TrainOptions opts;
    opts.out_dir = a.out;
    opts.threads = threads;
    const std::size_t every = std::max<std::size_t>(1, config.iterations / 10);
    opts.on_iteration = [&](const HistoryRecord& r) {
        if (r.iteration % every == 0 || r.iteration == 1)
            out << "iter " << r.iteration << " total=" << num(r.total) << " mse=" << num(r.mse)
                << " perceptual=" << num(r.perceptual) << '\n';
    };
    train(config, opts);
    out << "final checkpoint: " << (fs::path(a.out) / "final.rdck").string() << '\n';
    return kOk;
}

int do_denoise(const DenoiseArgs& a, std::ostream& out) {
    out << "denoise\nmodel=" << a.model << "\nin=" << a.in << "\nout=" << a.out << '\n';
    const RedModel model = load_checkpoint(a.model);
    const ImageFile input = read_image(a.in);
    const Tensor result = model.denoise(input.image);
    write_image(a.out, result, input.format, input.maxval);
    return kOk;
}

QualityReport evaluate_model(const fs::path& checkpoint, const fs::path& manifest) {
    const RedModel model = load_checkpoint(checkpoint);
    QualityReport report = evaluate(
        manifest, [&](const Tensor& x) { return model.denoise(x); }, default_thread_count());
    report.model_id = checkpoint.filename().string();
    return report;
}

int do_eval(const EvalArgs& a, std::ostream& out) {
    out << "eval\nmodel=" << a.model << "\nmanifest=" << a.manifest << "\nout=" << a.out << '\n';
    const QualityReport report = evaluate_model(a.model, a.manifest);
    write_report(fs::path(a.out), report);
    for (const auto& g : report.groups()) {
        if (const auto agg = report.aggregate(g)) {
            out << g << ": ssim=" << num(agg->ssim.mean) << " rmse=" << num(agg->rmse.mean)
                << " psnr=" << (agg->psnr_identical ? std::string("identical") : num(agg->psnr.mean)) << '\n';
        }
    }
    return kOk;
}

int do_sweep(const SweepArgs& a, std::ostream& out) {
    for (int l : a.layers)
        if (l < 2 || l % 2 != 0) throw UsageError("--layers values must be even and >= 2, got " + std::to_string(l));
    const TrainConfig base = load_config_or_usage(a.config);
    const fs::path eval_manifest = a.eval_manifest.empty() ? base.manifest : fs::path(a.eval_manifest);
    const std::size_t threads = default_thread_count();
    out << "sweep-depth\nlayers=";
    for (std::size_t i = 0; i < a.layers.size(); ++i) out << (i ? "," : "") << a.layers[i];
    out << "\neval_manifest=" << eval_manifest.generic_string() << "\nparallel=" << (a.parallel ? 1 : 0)
        << "\nthreads=" << threads << '\n'
        << format_train_config(base);
    fs::create_directories(a.out);

    struct Row {
        int layers = 0;
        QualityReport report;
        double seconds = 0.0;
    };
    std::vector<Row> rows(a.layers.size());
    std::mutex log;
    auto run_depth = [&](std::size_t i, std::size_t worker_threads) {
        TrainConfig c = base;
        c.red.num_layers = a.layers[i];
        char dir[32];
        std::snprintf(dir, sizeof dir, "layers_%02d", a.layers[i]);
        const fs::path depth_dir = fs::path(a.out) / dir;
        TrainOptions opts;
        opts.out_dir = depth_dir;
        opts.threads = worker_threads;
        const auto t0 = std::chrono::steady_clock::now();
        train(c, opts);
        rows[i].seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rows[i].layers = a.layers[i];
        rows[i].report = evaluate_model(depth_dir / "final.rdck", eval_manifest);
        write_report(depth_dir / "report.tsv", rows[i].report);
        std::lock_guard lock(log);
        out << "layers=" << a.layers[i] << " trained in " << num(rows[i].seconds) << " s\n";
    };
    if (a.parallel && a.layers.size() > 1) {
        std::vector<std::exception_ptr> errors(a.layers.size());
        {
            std::vector<std::jthread> pool;
            for (std::size_t i = 0; i < a.layers.size(); ++i) {
                pool.emplace_back([&, i] {
                    try {
                        run_depth(i, std::max<std::size_t>(1, threads / a.layers.size()));
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                });
            }
        }
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    } else {
        for (std::size_t i = 0; i < a.layers.size(); ++i) run_depth(i, threads);
    }

    std::ofstream table(fs::path(a.out) / "sweep.tsv", std::ios::binary | std::ios::trunc);
    if (!table) throw IoError("cannot write " + (fs::path(a.out) / "sweep.tsv").string());
    table << "layers\tSSIM\tRMSE\tPSNR\twall_seconds\n";
    for (const auto& r : rows) {
        const auto agg = r.report.aggregate("denoised");
        if (!agg) throw IoError("no evaluable pairs in " + eval_manifest.string());
        table << r.layers << '\t' << num(agg->ssim.mean) << '\t' << num(agg->rmse.mean) << '\t'
              << (agg->psnr_identical ? std::string("identical") : num(agg->psnr.mean)) << '\t' << num(r.seconds)
              << '\n';
        out << r.layers << '\t' << num(agg->ssim.mean) << '\t' << num(agg->rmse.mean) << '\t'
            << num(agg->psnr.mean) << '\t' << num(r.seconds) << " s\n";
    }
    if (!rows.empty()) {
        if (const auto noisy = rows.front().report.aggregate("noisy")) {
            table << "#noisy\t" << num(noisy->ssim.mean) << '\t' << num(noisy->rmse.mean) << '\t'
                  << num(noisy->psnr.mean) << "\tNA\n";
        }
    }
    return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Residual encoder-decoder denoising for simulated low-dose CT"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Generate phantom / low-dose image pairs and a manifest");
    simulate->add_option("--out", sim.out, "Output directory")->required();
    simulate->add_option("--count", sim.count, "Number of pairs");
    simulate->add_option("--size", sim.size, "Image size N (N x N)");
    simulate->add_option("--views", sim.views, "Projection views over [0, pi)");
    simulate->add_option("--detectors", sim.detectors, "Detector count (0: smallest odd >= N*sqrt(2))");
    simulate->add_option("--photons", sim.photons, "Incident photons per ray (N0)");
    simulate->add_option("--attenuation", sim.attenuation, "Line integral across the image through unit intensity");
    simulate->add_option("--seed", sim.seed, "Seed of the first pair; pair i uses seed + i");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a key=value config");
    train_cmd->add_option("--config", tr.config, "Config file")->required();
    train_cmd->add_option("--out", tr.out, "Output directory for checkpoints and history")->required();

    DenoiseArgs dn;
    auto* denoise = app.add_subcommand("denoise", "Denoise one PGM or RTF1 image");
    denoise->add_option("--model", dn.model, "Checkpoint (.rdck)")->required();
    denoise->add_option("--in", dn.in, "Input image")->required();
    denoise->add_option("--out", dn.out, "Output image, written in the input's format")->required();

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
    eval->add_option("--model", ev.model, "Checkpoint (.rdck)")->required();
    eval->add_option("--manifest", ev.manifest, "Manifest of image pairs")->required();
    eval->add_option("--out", ev.out, "Report path (TSV)")->required();

    SweepArgs sw;
    auto* sweep = app.add_subcommand("sweep-depth", "Train and evaluate one model per network depth");
    sweep->add_option("--layers", sw.layers, "Comma-separated even layer counts")->delimiter(',');
    sweep->add_option("--config", sw.config, "Base training config")->required();
    sweep->add_option("--out", sw.out, "Output directory")->required();
    sweep->add_option("--eval-manifest", sw.eval_manifest, "Held-out manifest (default: the training manifest)");
    sweep->add_flag("--parallel", sw.parallel, "Train depths concurrently");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    }

    try {
        if (*simulate) return do_simulate(sim, out);
        if (*train_cmd) return do_train(tr, out);
        if (*denoise) return do_denoise(dn, out);
        if (*eval) return do_eval(ev, out);
        if (*sweep) return do_sweep(sw, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const DivergedError& e) {
        err << "error: " << e.what();
        if (!e.last_good_checkpoint().empty()) err << " (last good checkpoint: " << e.last_good_checkpoint() << ")";
        err << '\n';
        return kRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kUsage;
}

}  // namespace redct::cli
