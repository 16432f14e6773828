#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "redct/autodiff.hpp"
#include "redct/tensor.hpp"

namespace redct {

struct RedConfig {
    int num_layers = 8;  // conv + deconv layers, split evenly
    int channels = 32;
    int kernel_size = 3;
    std::uint64_t seed = 1;

    // Throws InvalidConfig.
    void validate() const;
    int half() const { return num_layers / 2; }
};

struct ConvLayer {
    Tensor weight;  // encoder: [C_out, C_in, k, k]; decoder: [C_in, C_out, k, k]
    Tensor bias;    // [C_out]
};

struct RedOutput {
    Tensor residual;  // F(x)
    Tensor denoised;  // x - F(x)
};

// Residual encoder-decoder denoiser.
//
// Encoder: num_layers/2 stride-1 same-padded conv + ReLU layers, 1 -> C -> C ...
// Decoder: num_layers/2 transposed convs C -> ... -> C -> 1. Every decoder
// layer but the last adds the mirrored encoder output and applies ReLU; the
// last emits the signed residual. The final layer starts at exactly zero, so
// a freshly built model is the identity denoiser.
class RedModel {
public:
    static RedModel build(const RedConfig& config);
    // Reassembles a model from tensors in parameters() order.
    static RedModel from_parameters(const RedConfig& config, std::vector<Tensor> params);

    const RedConfig& config() const noexcept { return config_; }
    const std::vector<ConvLayer>& encoder() const noexcept { return encoder_; }
    const std::vector<ConvLayer>& decoder() const noexcept { return decoder_; }

    // (encoder layer, decoder layer) pairs: the encoder output is added to
    // the output of the decoder layer's transposed convolution, before ReLU.
    std::vector<std::pair<int, int>> skip_plan() const;

    // Encoder weight/bias pairs first, then decoder, in layer order.
    std::vector<Tensor> parameters() const;
    std::size_t parameter_count() const;

    // Elementwise parameter += delta. Throws LengthMismatch / ShapeMismatch.
    RedModel apply_update(std::span<const Tensor> deltas) const;

    // x is [1, H, W] with H, W >= kernel_size.
    RedOutput forward(const Tensor& x, Tape* tape = nullptr) const;
    Tensor denoise(const Tensor& x) const { return forward(x).denoised; }

private:
    RedConfig config_;
    std::vector<ConvLayer> encoder_;
    std::vector<ConvLayer> decoder_;
};

// Closed-form parameter count for a configuration.
std::size_t red_parameter_count(const RedConfig& config);

// RDCK1 checkpoint:
//   "RDCK1\0\0\0"   8-byte magic
//   u32             length of the config block
//   bytes           config block, "key=value\n" lines (UTF-8)
//   u32             parameter tensor count
//   RTF1 x count    tensors in parameters() order
//   u64             FNV-1a 64 of every byte between the magic and this field
inline constexpr char kCheckpointMagic[8] = {'R', 'D', 'C', 'K', '1', '\0', '\0', '\0'};

std::vector<std::uint8_t> serialize_checkpoint(const RedModel& model);
RedModel deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const RedModel& model, const std::filesystem::path& path);
// Throws IoError, ChecksumMismatch (including truncation), VersionMismatch.
RedModel load_checkpoint(const std::filesystem::path& path);

std::string red_config_block(const RedConfig& config);

}  // namespace redct
