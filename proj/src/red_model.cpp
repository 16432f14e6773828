#include "redct/red_model.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "redct/errors.hpp"
#include "redct/ops.hpp"
#include "redct/tensor_io.hpp"

namespace redct {
namespace {

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor(std::move(shape), std::move(v), true);
}

std::vector<Shape> parameter_shapes(const RedConfig& config) {
    const std::size_t c = static_cast<std::size_t>(config.channels);
    const std::size_t k = static_cast<std::size_t>(config.kernel_size);
    const int m = config.half();
    std::vector<Shape> shapes;
    for (int i = 0; i < m; ++i) {
        shapes.push_back({c, i == 0 ? 1 : c, k, k});
        shapes.push_back({c});
    }
    for (int i = 0; i < m; ++i) {
        const std::size_t c_out = i == m - 1 ? 1 : c;
        shapes.push_back({c, c_out, k, k});
        shapes.push_back({c_out});
    }
    return shapes;
}

ConvOptions same_padding(int kernel) {
    return ConvOptions{1, static_cast<std::size_t>((kernel - 1) / 2), false};
}

}  // namespace

void RedConfig::validate() const {
    if (num_layers < 2 || num_layers % 2 != 0)
        throw InvalidConfig("num_layers must be even and >= 2, got " + std::to_string(num_layers));
    if (channels < 1) throw InvalidConfig("channels must be >= 1, got " + std::to_string(channels));
    if (kernel_size < 1 || kernel_size % 2 == 0)
        throw InvalidConfig("kernel_size must be odd and >= 1, got " + std::to_string(kernel_size));
}

std::size_t red_parameter_count(const RedConfig& config) {
    config.validate();
    const std::size_t c = static_cast<std::size_t>(config.channels);
    const std::size_t kk = static_cast<std::size_t>(config.kernel_size) * static_cast<std::size_t>(config.kernel_size);
    const std::size_t m = static_cast<std::size_t>(config.half());
    // first encoder (1 -> c), m-1 hidden encoders, m-1 hidden decoders, last decoder (c -> 1)
    return (c * kk + c) + 2 * (m - 1) * (c * c * kk + c) + (c * kk + 1);
}

RedModel RedModel::build(const RedConfig& config) {
    config.validate();
    RedModel model;
    model.config_ = config;
    std::mt19937_64 rng(config.seed);
    const std::size_t c = static_cast<std::size_t>(config.channels);
    const std::size_t k = static_cast<std::size_t>(config.kernel_size);
    const int m = config.half();

    for (int i = 0; i < m; ++i) {
        const std::size_t c_in = i == 0 ? 1 : c;
        const double bound = 1.0 / std::sqrt(static_cast<double>(c_in * k * k));
        model.encoder_.push_back({uniform_tensor({c, c_in, k, k}, bound, rng), Tensor::zeros({c}, true)});
    }
    for (int i = 0; i < m; ++i) {
        const bool last = i == m - 1;
        const std::size_t c_out = last ? 1 : c;
        if (last) {
            model.decoder_.push_back({Tensor::zeros({c, c_out, k, k}, true), Tensor::zeros({c_out}, true)});
        } else {
            const double bound = 1.0 / std::sqrt(static_cast<double>(c * k * k));
            model.decoder_.push_back({uniform_tensor({c, c_out, k, k}, bound, rng), Tensor::zeros({c_out}, true)});
        }
    }
    return model;
}

RedModel RedModel::from_parameters(const RedConfig& config, std::vector<Tensor> params) {
    config.validate();
    const auto ref = parameter_shapes(config);
    if (params.size() != ref.size()) {
        throw LengthMismatch("model with " + std::to_string(config.num_layers) + " layers needs " +
                             std::to_string(ref.size()) + " parameter tensors, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < ref.size(); ++i) {
        if (params[i].shape() != ref[i]) {
            throw ShapeMismatch("parameter " + std::to_string(i) + " has shape " + shape_string(params[i].shape()) +
                                ", expected " + shape_string(ref[i]));
        }
    }
    RedModel model;
    model.config_ = config;
    const int m = config.half();
    std::size_t p = 0;
    auto next = [&] { return params[p++].as_leaf(); };
    for (int i = 0; i < m; ++i) {
        auto w = next();
        model.encoder_.push_back({w, next()});
    }
    for (int i = 0; i < m; ++i) {
        auto w = next();
        model.decoder_.push_back({w, next()});
    }
    return model;
}

std::vector<std::pair<int, int>> RedModel::skip_plan() const {
    const int m = config_.half();
    std::vector<std::pair<int, int>> plan;
    for (int j = 0; j + 1 < m; ++j) plan.emplace_back(m - 2 - j, j);
    return plan;
}

std::vector<Tensor> RedModel::parameters() const {
    std::vector<Tensor> out;
    out.reserve(2 * (encoder_.size() + decoder_.size()));
    for (const auto& l : encoder_) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
    for (const auto& l : decoder_) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
    return out;
}

std::size_t RedModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : parameters()) n += t.numel();
    return n;
}

RedModel RedModel::apply_update(std::span<const Tensor> deltas) const {
    auto params = parameters();
    if (deltas.size() != params.size()) {
        throw LengthMismatch("apply_update: expected " + std::to_string(params.size()) + " deltas, got " +
                             std::to_string(deltas.size()));
    }
    std::vector<Tensor> updated;
    updated.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (deltas[i].shape() != params[i].shape()) {
            throw ShapeMismatch("apply_update: delta " + std::to_string(i) + " has shape " +
                                shape_string(deltas[i].shape()) + ", parameter is " + shape_string(params[i].shape()));
        }
        std::vector<double> v(params[i].values().begin(), params[i].values().end());
        const auto d = deltas[i].values();
        for (std::size_t j = 0; j < v.size(); ++j)
            if (d[j] != 0.0) v[j] += d[j];
        updated.emplace_back(params[i].shape(), std::move(v), true);
    }
    return from_parameters(config_, std::move(updated));
}

RedOutput RedModel::forward(const Tensor& x, Tape* tape) const {
    if (x.rank() != 3 || x.dim(0) != 1)
        throw ShapeMismatch("forward expects a [1,H,W] image, got " + shape_string(x.shape()));
    const auto k = static_cast<std::size_t>(config_.kernel_size);
    if (x.dim(1) < k || x.dim(2) < k)
        throw ShapeMismatch("image " + shape_string(x.shape()) + " smaller than kernel " + std::to_string(k));

    const ConvOptions opt = same_padding(config_.kernel_size);
    const int m = config_.half();

    std::vector<Tensor> enc;
    enc.reserve(static_cast<std::size_t>(m));
    Tensor h = x;
    for (const auto& layer : encoder_) {
        h = relu(conv2d(h, layer.weight, layer.bias, opt, tape), tape);
        enc.push_back(h);
    }
    for (int j = 0; j < m; ++j) {
        const auto& layer = decoder_[static_cast<std::size_t>(j)];
        h = conv2d_transposed(h, layer.weight, layer.bias, opt, tape);
        if (j + 1 < m) h = relu(add(h, enc[static_cast<std::size_t>(m - 2 - j)], tape), tape);
    }
    Tensor denoised = sub(x, h, tape);
    return {h, denoised};
}

std::string red_config_block(const RedConfig& config) {
    std::ostringstream os;
    os << "num_layers=" << config.num_layers << '\n'
       << "channels=" << config.channels << '\n'
       << "kernel_size=" << config.kernel_size << '\n'
       << "seed=" << config.seed << '\n';
    return os.str();
}

namespace {

RedConfig parse_config_block(const std::string& block) {
    RedConfig config;
    std::istringstream in(block);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError("malformed checkpoint config line: " + line);
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "num_layers") config.num_layers = std::stoi(value);
            else if (key == "channels") config.channels = std::stoi(value);
            else if (key == "kernel_size") config.kernel_size = std::stoi(value);
            else if (key == "seed") config.seed = std::stoull(value);
            else throw IoError("unknown checkpoint config key: " + key);
        } catch (const std::logic_error&) {
            throw IoError("bad checkpoint config value: " + line);
        }
    }
    return config;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const RedModel& model) {
    std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    const std::string block = red_config_block(model.config());
    put_u32(out, static_cast<std::uint32_t>(block.size()));
    out.insert(out.end(), block.begin(), block.end());
    const auto params = model.parameters();
    put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) append_rtf(out, p);
    const auto payload = sizeof(kCheckpointMagic);
    put_u64(out, fnv1a64(out.data() + payload, out.size() - payload));
    return out;
}

RedModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
    constexpr auto magic = sizeof(kCheckpointMagic);
    if (bytes.size() < magic || std::memcmp(bytes.data(), kCheckpointMagic, magic) != 0)
        throw VersionMismatch("not an RDCK1 checkpoint (bad magic)");
    if (bytes.size() < magic + 8) throw ChecksumMismatch("checkpoint truncated");
    std::size_t tail = bytes.size() - 8;
    const std::uint64_t stored = get_u64(bytes, tail);
    if (stored != fnv1a64(bytes.data() + magic, bytes.size() - 8 - magic))
        throw ChecksumMismatch("checkpoint checksum mismatch (corrupt or truncated file)");

    const std::vector<std::uint8_t> body(bytes.begin(), bytes.end() - 8);
    std::size_t offset = magic;
    const auto block_len = get_u32(body, offset);
    if (offset + block_len > body.size()) throw IoError("checkpoint config block overruns file");
    const std::string block(body.begin() + static_cast<std::ptrdiff_t>(offset),
                            body.begin() + static_cast<std::ptrdiff_t>(offset + block_len));
    offset += block_len;
    const RedConfig config = parse_config_block(block);
    const auto count = get_u32(body, offset);
    std::vector<Tensor> params;
    params.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) params.push_back(parse_rtf(body, offset));
    if (offset != body.size()) throw IoError("trailing bytes in checkpoint");
    return RedModel::from_parameters(config, std::move(params));
}

void save_checkpoint(const RedModel& model, const std::filesystem::path& path) {
    write_file_bytes(path, serialize_checkpoint(model));
}

RedModel load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(read_file_bytes(path));
}

}  // namespace redct
