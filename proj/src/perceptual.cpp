#include "redct/perceptual.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include "redct/errors.hpp"
#include "redct/ops.hpp"
#include "redct/tensor_io.hpp"

namespace redct {
namespace {

ConvOptions stage_options(const Tensor& kernel) {
    return ConvOptions{2, (kernel.dim(2) - 1) / 2, true};
}

}  // namespace

FeatureExtractor FeatureExtractor::seeded(std::uint64_t seed, std::vector<std::size_t> channels,
                                          std::size_t kernel_size, std::size_t tap_index) {
    if (channels.empty()) throw InvalidConfig("feature extractor needs at least one stage");
    if (kernel_size % 2 == 0) throw InvalidConfig("feature extractor kernel must be odd");
    std::mt19937_64 rng(seed);
    std::vector<Tensor> stages;
    std::size_t c_in = 1;
    for (auto c_out : channels) {
        const double bound = std::sqrt(6.0 / static_cast<double>(c_in * kernel_size * kernel_size));
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<double> w(c_out * c_in * kernel_size * kernel_size);
        for (auto& v : w) v = dist(rng);
        stages.emplace_back(Shape{c_out, c_in, kernel_size, kernel_size}, std::move(w), false);
        c_in = c_out;
    }
    return from_weights(std::move(stages), tap_index);
}

FeatureExtractor FeatureExtractor::from_weights(std::vector<Tensor> stages, std::size_t tap_index) {
    if (stages.empty()) throw InvalidConfig("feature extractor needs at least one stage");
    if (tap_index >= stages.size())
        throw InvalidConfig("tap index " + std::to_string(tap_index) + " out of range for " +
                            std::to_string(stages.size()) + " stages");
    std::size_t c_in = 1;
    FeatureExtractor phi;
    for (const auto& s : stages) {
        if (s.rank() != 4 || s.dim(1) != c_in || s.dim(2) % 2 == 0 || s.dim(3) % 2 == 0)
            throw ShapeMismatch("bad extractor stage shape " + shape_string(s.shape()));
        c_in = s.dim(0);
        phi.stages_.push_back(s.detach());
    }
    phi.tap_ = tap_index;
    return phi;
}

Tensor FeatureExtractor::extract(const Tensor& image, Tape* tape) const {
    if (image.rank() != 3 || image.dim(0) != 1)
        throw ShapeMismatch("feature extractor expects a [1,H,W] image, got " + shape_string(image.shape()));
    Tensor h = image;
    for (std::size_t i = 0; i <= tap_; ++i) {
        if (h.dim(1) < 2 || h.dim(2) < 2) {
            throw ImageTooSmall("image " + shape_string(image.shape()) + " too small for extractor stage " +
                                std::to_string(i));
        }
        h = relu(conv2d(h, stages_[i], Tensor{}, stage_options(stages_[i]), tape), tape);
    }
    return h;
}

Tensor perceptual_loss(const FeatureExtractor& phi, const Tensor& denoised, const Tensor& target, Tape* tape) {
    if (denoised.shape() != target.shape())
        throw ShapeMismatch("perceptual_loss: shapes " + shape_string(denoised.shape()) + " and " +
                            shape_string(target.shape()) + " differ");
    const Tensor fa = phi.extract(denoised, tape);
    const Tensor fb = phi.extract(target, tape);
    const double area = static_cast<double>(fa.dim(1) * fa.dim(2));
    return scale(squared_distance(fa, fb, tape), 1.0 / area, tape);
}

JointLoss joint_loss(const FeatureExtractor& phi, const Tensor& denoised, const Tensor& target, double lambda_p,
                     Tape* tape) {
    if (!(lambda_p >= 0.0)) throw InvalidConfig("lambda_p must be >= 0");
    const Tensor mse = mse_loss(denoised, target, tape);
    const Tensor per = perceptual_loss(phi, denoised, target, tape);
    Tensor total = add(mse, scale(per, lambda_p, tape), tape);
    return {total, mse.item(), per.item()};
}

void save_extractor(const FeatureExtractor& phi, const std::filesystem::path& path) {
    std::ostringstream header;
    header << "REDFX1\nstages=" << phi.stage_count() << "\ntap=" << phi.tap_index() << '\n';
    for (const auto& s : phi.stages())
        header << "stage=" << s.dim(0) << ',' << s.dim(1) << ',' << s.dim(2) << ',' << s.dim(3) << '\n';
    header << "end\n";
    const std::string text = header.str();
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    for (const auto& s : phi.stages()) append_rtf(bytes, s);
    write_file_bytes(path, bytes);
}

FeatureExtractor load_extractor(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    std::size_t offset = 0;
    auto next_line = [&]() {
        std::string line;
        while (offset < bytes.size() && bytes[offset] != '\n') line.push_back(static_cast<char>(bytes[offset++]));
        if (offset >= bytes.size()) throw IoError("truncated extractor manifest in " + path.string());
        ++offset;
        return line;
    };
    if (next_line() != "REDFX1") throw VersionMismatch("not an extractor weight file: " + path.string());
    std::size_t stages = 0;
    std::size_t tap = 0;
    std::vector<Shape> declared;
    try {
        for (std::string line = next_line(); line != "end"; line = next_line()) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw IoError("malformed extractor manifest line: " + line);
            const std::string key = line.substr(0, eq);
            const std::string value = line.substr(eq + 1);
            if (key == "stages") {
                stages = std::stoul(value);
            } else if (key == "tap") {
                tap = std::stoul(value);
            } else if (key == "stage") {
                Shape s;
                std::istringstream in(value);
                std::string part;
                while (std::getline(in, part, ',')) s.push_back(std::stoul(part));
                declared.push_back(std::move(s));
            } else {
                throw IoError("unknown extractor manifest key: " + key);
            }
        }
    } catch (const std::logic_error&) {
        throw IoError("bad number in extractor manifest " + path.string());
    }
    if (declared.size() != stages) throw IoError("extractor manifest declares a different number of stages");
    std::vector<Tensor> weights;
    for (std::size_t i = 0; i < stages; ++i) {
        weights.push_back(parse_rtf(bytes, offset));
        if (weights.back().shape() != declared[i])
            throw ShapeMismatch("extractor stage " + std::to_string(i) + " does not match its manifest shape");
    }
    if (offset != bytes.size()) throw IoError("trailing bytes in extractor file " + path.string());
    return FeatureExtractor::from_weights(std::move(weights), tap);
}

}  // namespace redct
