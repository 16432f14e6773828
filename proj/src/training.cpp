#include "redct/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "redct/autodiff.hpp"
#include "redct/errors.hpp"
#include "redct/image_io.hpp"
#include "redct/metrics.hpp"
#include "redct/perceptual.hpp"
#include "redct/rng.hpp"
#include "redct/tensor_io.hpp"

namespace redct {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        T out{};
        if constexpr (std::is_same_v<T, double>) {
            out = std::stod(value, &used);
        } else if constexpr (std::is_same_v<T, int>) {
            out = std::stoi(value, &used);
        } else {
            if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
            out = static_cast<T>(std::stoull(value, &used));
        }
        if (used != value.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::logic_error&) {
        throw InvalidConfig("bad value for " + key + ": '" + value + "'");
    }
}

Tensor crop(const Tensor& image, std::size_t row, std::size_t col, std::size_t size) {
    const std::size_t w = image.dim(2);
    std::vector<double> out(size * size);
    for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c) out[r * size + c] = image[(row + r) * w + col + c];
    return Tensor({1, size, size}, std::move(out));
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

struct SampleResult {
    std::vector<std::vector<double>> grads;
    double total = 0.0;
    double mse = 0.0;
    double perceptual = 0.0;
};

SampleResult sample_gradient(const RedModel& model, const FeatureExtractor& phi, const PatchPair& patch,
                             double lambda_p) {
    Tape tape;
    const auto out = model.forward(patch.noisy, &tape);
    const auto loss = joint_loss(phi, out.denoised, patch.clean, lambda_p, &tape);
    backward(tape, loss.total);
    SampleResult r;
    r.total = loss.total.item();
    r.mse = loss.mse;
    r.perceptual = loss.perceptual;
    for (const auto& p : model.parameters()) {
        const Tensor g = tape.grad(p);
        r.grads.emplace_back(g.values().begin(), g.values().end());
    }
    return r;
}

// Patches are drawn epoch by epoch: each epoch re-extracts patches_per_image
// fresh positions from every image and shuffles them.
class PatchStream {
public:
    PatchStream(const TrainConfig& config, const std::vector<ImagePair>& data) : config_(config), data_(data) {}

    struct Item {
        PatchPair patch;
        std::size_t image;
    };

    std::vector<Item> next_batch() {
        std::vector<Item> batch;
        while (batch.size() < config_.batch_size) {
            if (cursor_ >= order_.size()) refill();
            const auto& [img, idx] = order_[cursor_++];
            batch.push_back({pool_[img][idx], img});
        }
        return batch;
    }

private:
    void refill() {
        pool_.clear();
        order_.clear();
        for (std::size_t i = 0; i < data_.size(); ++i) {
            pool_.push_back(extract_patches(data_[i], config_.patch_size, config_.patches_per_image,
                                            mix_seed(config_.seed, (epoch_ << 20) + i)));
            for (std::size_t j = 0; j < config_.patches_per_image; ++j) order_.emplace_back(i, j);
        }
        std::mt19937_64 rng(mix_seed(config_.seed, 0x5f0ff1e000ULL + epoch_));
        std::shuffle(order_.begin(), order_.end(), rng);
        cursor_ = 0;
        ++epoch_;
    }

    const TrainConfig& config_;
    const std::vector<ImagePair>& data_;
    std::vector<std::vector<PatchPair>> pool_;
    std::vector<std::pair<std::size_t, std::size_t>> order_;
    std::size_t cursor_ = 0;
    std::uint64_t epoch_ = 0;
};

std::filesystem::path checkpoint_name(const std::filesystem::path& dir, std::size_t iteration) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "checkpoint_%06zu.rdck", iteration);
    return dir / buf;
}

void write_timing(const std::filesystem::path& path, const RunHistory& history) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "iteration\twall_seconds\tcheckpoint\n";
    for (const auto& c : history.checkpoints)
        out << c.iteration << '\t' << format_double(c.wall_seconds) << '\t' << c.path.filename().string() << '\n';
}

}  // namespace

void TrainConfig::validate() const {
    red.validate();
    if (patch_size < static_cast<std::size_t>(red.kernel_size))
        throw InvalidConfig("patch_size must be >= kernel_size");
    if (patches_per_image < 1) throw InvalidConfig("patches_per_image must be >= 1");
    if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
    if (iterations < 1) throw InvalidConfig("iterations must be >= 1");
    if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw InvalidConfig("adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw InvalidConfig("eps must be > 0");
    if (!(lambda_p >= 0.0)) throw InvalidConfig("lambda_p must be >= 0");
    if (checkpoint_every < 1) throw InvalidConfig("checkpoint_every must be >= 1");
}

TrainConfig parse_train_config(const std::string& text, const std::filesystem::path& base_dir) {
    TrainConfig c;
    bool model_seed_set = false;
    auto resolve = [&](const std::string& v) {
        std::filesystem::path p(v);
        return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
    };
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidConfig("line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "manifest") c.manifest = resolve(value);
        else if (key == "patch_size") c.patch_size = parse_number<std::size_t>(key, value);
        else if (key == "patches_per_image") c.patches_per_image = parse_number<std::size_t>(key, value);
        else if (key == "batch_size") c.batch_size = parse_number<std::size_t>(key, value);
        else if (key == "iterations") c.iterations = parse_number<std::size_t>(key, value);
        else if (key == "learning_rate") c.learning_rate = parse_number<double>(key, value);
        else if (key == "beta1") c.beta1 = parse_number<double>(key, value);
        else if (key == "beta2") c.beta2 = parse_number<double>(key, value);
        else if (key == "eps") c.eps = parse_number<double>(key, value);
        else if (key == "lambda_p") c.lambda_p = parse_number<double>(key, value);
        else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
        else if (key == "checkpoint_every") c.checkpoint_every = parse_number<std::size_t>(key, value);
        else if (key == "warmup_iterations") c.warmup_iterations = parse_number<std::size_t>(key, value);
        else if (key == "extractor_weights") c.extractor_weights = value.empty() ? std::filesystem::path{} : resolve(value);
        else if (key == "layers" || key == "num_layers") c.red.num_layers = parse_number<int>(key, value);
        else if (key == "channels") c.red.channels = parse_number<int>(key, value);
        else if (key == "kernel_size") c.red.kernel_size = parse_number<int>(key, value);
        else if (key == "model_seed") {
            c.red.seed = parse_number<std::uint64_t>(key, value);
            model_seed_set = true;
        } else {
            throw InvalidConfig("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        }
    }
    if (!model_seed_set) c.red.seed = c.seed;
    c.validate();
    return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str(), path.parent_path());
}

std::string format_train_config(const TrainConfig& c) {
    std::ostringstream os;
    os << "manifest=" << c.manifest.generic_string() << '\n'
       << "patch_size=" << c.patch_size << '\n'
       << "patches_per_image=" << c.patches_per_image << '\n'
       << "batch_size=" << c.batch_size << '\n'
       << "iterations=" << c.iterations << '\n'
       << "learning_rate=" << format_double(c.learning_rate) << '\n'
       << "beta1=" << format_double(c.beta1) << '\n'
       << "beta2=" << format_double(c.beta2) << '\n'
       << "eps=" << format_double(c.eps) << '\n'
       << "lambda_p=" << format_double(c.lambda_p) << '\n'
       << "seed=" << c.seed << '\n'
       << "checkpoint_every=" << c.checkpoint_every << '\n'
       << "warmup_iterations=" << c.warmup_iterations << '\n'
       << "extractor_weights=" << c.extractor_weights.generic_string() << '\n'
       << "layers=" << c.red.num_layers << '\n'
       << "channels=" << c.red.channels << '\n'
       << "kernel_size=" << c.red.kernel_size << '\n'
       << "model_seed=" << c.red.seed << '\n';
    return os.str();
}

std::vector<PatchPair> extract_patches(const ImagePair& pair, std::size_t patch_size, std::size_t count,
                                       std::uint64_t seed) {
    const Tensor& img = pair.clean;
    if (img.rank() != 3 || img.dim(0) != 1 || pair.noisy.shape() != img.shape())
        throw ShapeMismatch("image pair must be two [1,H,W] images of equal shape");
    if (patch_size == 0 || patch_size > img.dim(1) || patch_size > img.dim(2)) {
        throw PatchTooLarge("patch " + std::to_string(patch_size) + " does not fit image " +
                            shape_string(img.shape()));
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> rows(0, img.dim(1) - patch_size);
    std::uniform_int_distribution<std::size_t> cols(0, img.dim(2) - patch_size);
    std::vector<PatchPair> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t r = rows(rng);
        const std::size_t c = cols(rng);
        out.push_back({crop(pair.noisy, r, c, patch_size), crop(pair.clean, r, c, patch_size), r, c});
    }
    return out;
}

void write_history(const std::filesystem::path& path, const RunHistory& history) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write history " + path.string());
    out << "iteration\ttotal\tmse\tperceptual\tlambda_p\tpatch_hash\n";
    for (const auto& r : history.records) {
        char hash[20];
        std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(r.patch_hash));
        out << r.iteration << '\t' << format_double(r.total) << '\t' << format_double(r.mse) << '\t'
            << format_double(r.perceptual) << '\t' << format_double(r.lambda_p) << '\t' << hash << '\n';
    }
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<ImagePair> load_pairs(const std::filesystem::path& manifest) {
    std::vector<ImagePair> pairs;
    for (const auto& e : read_manifest(manifest)) {
        ImagePair p{read_image(e.clean).image, read_image(e.noisy).image};
        if (p.clean.shape() != p.noisy.shape())
            throw ShapeMismatch("clean and noisy images differ in shape: " + e.clean.string());
        pairs.push_back(std::move(p));
    }
    return pairs;
}

std::size_t default_thread_count() {
    if (const char* env = std::getenv("RED_DENOISE_THREADS")) {
        try {
            const auto n = std::stoul(env);
            if (n > 0) return n;
        } catch (const std::logic_error&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

TrainResult train(const TrainConfig& config, const std::vector<ImagePair>& data, const TrainOptions& options) {
    config.validate();
    if (data.empty()) throw IoError("training data is empty");
    for (const auto& p : data) {
        if (p.clean.rank() != 3 || p.clean.dim(1) < config.patch_size || p.clean.dim(2) < config.patch_size)
            throw PatchTooLarge("patch_size " + std::to_string(config.patch_size) + " exceeds a training image");
    }
    const FeatureExtractor phi = config.extractor_weights.empty() ? FeatureExtractor::seeded()
                                                                   : load_extractor(config.extractor_weights);
    const bool write = !options.out_dir.empty();
    if (write) std::filesystem::create_directories(options.out_dir);

    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

    RedModel model = RedModel::build(config.red);
    const auto shapes = model.parameters();
    std::vector<std::vector<double>> m1, m2;
    for (const auto& p : shapes) {
        m1.emplace_back(p.numel(), 0.0);
        m2.emplace_back(p.numel(), 0.0);
    }

    RunHistory history;
    PatchStream stream(config, data);
    const std::size_t workers = std::max<std::size_t>(1, std::min(options.threads, config.batch_size));

    for (std::size_t it = 1; it <= config.iterations; ++it) {
        const double lambda = it <= config.warmup_iterations ? 0.0 : config.lambda_p;
        const auto batch = stream.next_batch();

        std::uint64_t hash = 0xcbf29ce484222325ULL;
        for (const auto& item : batch) {
            const std::uint64_t pos[3] = {item.image, item.patch.row, item.patch.col};
            hash = fnv1a64(reinterpret_cast<const std::uint8_t*>(pos), sizeof pos, hash);
        }

        std::vector<SampleResult> results(batch.size());
        if (workers == 1) {
            for (std::size_t b = 0; b < batch.size(); ++b)
                results[b] = sample_gradient(model, phi, batch[b].patch, lambda);
        } else {
            std::atomic<std::size_t> next{0};
            std::vector<std::exception_ptr> errors(workers);
            {
                std::vector<std::jthread> pool;
                for (std::size_t w = 0; w < workers; ++w) {
                    pool.emplace_back([&, w] {
                        try {
                            for (std::size_t b = next++; b < batch.size(); b = next++)
                                results[b] = sample_gradient(model, phi, batch[b].patch, lambda);
                        } catch (...) {
                            errors[w] = std::current_exception();
                        }
                    });
                }
            }
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);
        }

        // Fixed reduction order keeps the result independent of scheduling.
        const double inv = 1.0 / static_cast<double>(batch.size());
        HistoryRecord rec{it, 0.0, 0.0, 0.0, lambda, hash};
        std::vector<std::vector<double>> grad = std::move(results[0].grads);
        for (std::size_t b = 1; b < results.size(); ++b)
            for (std::size_t p = 0; p < grad.size(); ++p)
                for (std::size_t j = 0; j < grad[p].size(); ++j) grad[p][j] += results[b].grads[p][j];
        for (const auto& r : results) {
            rec.total += r.total;
            rec.mse += r.mse;
            rec.perceptual += r.perceptual;
        }
        rec.total *= inv;
        rec.mse *= inv;
        rec.perceptual *= inv;
        for (auto& g : grad)
            for (auto& v : g) v *= inv;

        const bool finite = std::isfinite(rec.total) && std::all_of(grad.begin(), grad.end(), all_finite);
        if (!finite) {
            std::string saved;
            if (write) {
                const auto path = options.out_dir / "last_good.rdck";
                save_checkpoint(model, path);
                write_history(options.out_dir / "history.tsv", history);
                saved = path.string();
            }
            throw DivergedError("training diverged at iteration " + std::to_string(it) + " (non-finite loss)", saved);
        }

        // Adam with bias correction.
        const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(it));
        const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(it));
        std::vector<Tensor> deltas;
        deltas.reserve(grad.size());
        for (std::size_t p = 0; p < grad.size(); ++p) {
            std::vector<double> d(grad[p].size());
            for (std::size_t j = 0; j < d.size(); ++j) {
                const double g = grad[p][j];
                m1[p][j] = config.beta1 * m1[p][j] + (1.0 - config.beta1) * g;
                m2[p][j] = config.beta2 * m2[p][j] + (1.0 - config.beta2) * g * g;
                const double mhat = m1[p][j] / bc1;
                const double vhat = m2[p][j] / bc2;
                d[j] = -config.learning_rate * mhat / (std::sqrt(vhat) + config.eps);
            }
            deltas.emplace_back(shapes[p].shape(), std::move(d));
        }
        model = model.apply_update(deltas);

        history.records.push_back(rec);
        if (options.on_iteration) options.on_iteration(rec);

        const bool last = it == config.iterations;
        if (write && (it % config.checkpoint_every == 0 || last)) {
            const auto path = last ? options.out_dir / "final.rdck" : checkpoint_name(options.out_dir, it);
            save_checkpoint(model, path);
            history.checkpoints.push_back({it, elapsed(), path});
        } else if (!write && last) {
            history.checkpoints.push_back({it, elapsed(), {}});
        }
    }
    if (write) {
        write_history(options.out_dir / "history.tsv", history);
        write_timing(options.out_dir / "timing.tsv", history);
    }
    return {std::move(model), std::move(history)};
}

TrainResult train(const TrainConfig& config, const TrainOptions& options) {
    config.validate();
    const auto pairs = load_pairs(config.manifest);
    if (pairs.empty()) throw IoError("manifest " + config.manifest.string() + " lists no image pairs");
    return train(config, pairs, options);
}

}  // namespace redct
