#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "redct/autodiff.hpp"
#include "redct/tensor.hpp"

namespace redct {

inline constexpr std::uint64_t kDefaultExtractorSeed = 0x5e9e7a11ULL;

// Fixed-weight strided conv stack used as the perceptual feature map.
//
// Each stage is a bias-free conv (stride 2, same padding, trailing
// row/column dropped on odd spans) followed by ReLU. Weights never require
// gradients, so backward() flows through to the image only.
class FeatureExtractor {
public:
    // Seeded random stack, He-uniform init. Defaults: channels 16/32/64,
    // kernel 3, tap at the last stage.
    static FeatureExtractor seeded(std::uint64_t seed = kDefaultExtractorSeed,
                                   std::vector<std::size_t> channels = {16, 32, 64},
                                   std::size_t kernel_size = 3, std::size_t tap_index = 2);
    // Stage kernels [C_out, C_in, k, k]; the first stage takes 1 channel.
    static FeatureExtractor from_weights(std::vector<Tensor> stages, std::size_t tap_index);

    std::size_t tap_index() const noexcept { return tap_; }
    std::size_t stage_count() const noexcept { return stages_.size(); }
    const std::vector<Tensor>& stages() const noexcept { return stages_; }

    // phi_i(image), image [1, H, W]. Throws ImageTooSmall when some stage
    // input up to the tap is narrower than 2.
    Tensor extract(const Tensor& image, Tape* tape = nullptr) const;

private:
    std::vector<Tensor> stages_;
    std::size_t tap_ = 0;
};

// Weight file: a UTF-8 manifest followed by RTF1 tensors, one per stage.
//   REDFX1\n
//   stages=<n>\n
//   tap=<i>\n
//   stage=<c_out>,<c_in>,<kh>,<kw>\n   (n lines)
//   end\n
//   RTF1 x n
void save_extractor(const FeatureExtractor& phi, const std::filesystem::path& path);
FeatureExtractor load_extractor(const std::filesystem::path& path);

// (1 / (W_i * H_i)) * ||phi_i(denoised) - phi_i(target)||^2, summed over
// all channels and positions of the tapped map.
Tensor perceptual_loss(const FeatureExtractor& phi, const Tensor& denoised, const Tensor& target,
                       Tape* tape = nullptr);

struct JointLoss {
    Tensor total;  // mse + lambda_p * perceptual
    double mse = 0.0;
    double perceptual = 0.0;
};

JointLoss joint_loss(const FeatureExtractor& phi, const Tensor& denoised, const Tensor& target, double lambda_p,
                     Tape* tape = nullptr);

}  // namespace redct
