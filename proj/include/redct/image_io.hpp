#pragma once

#include <filesystem>

#include "redct/tensor.hpp"

namespace redct {

enum class ImageFormat { Pgm, Rtf };

struct ImageFile {
    Tensor image;  // [1, H, W]
    ImageFormat format = ImageFormat::Rtf;
    unsigned maxval = 65535;  // PGM only
};

// Binary PGM (P5). Samples are big-endian when maxval > 255. Pixel values
// are stored as round(clamp(v, 0, 1) * maxval) and read back as sample / maxval.
void write_pgm(const std::filesystem::path& path, const Tensor& image, unsigned maxval = 65535);
ImageFile read_pgm(const std::filesystem::path& path);

// Detects the format from the file's magic bytes. RTF1 tensors of rank 2 are
// promoted to [1, H, W].
ImageFile read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Tensor& image, ImageFormat format,
                 unsigned maxval = 65535);

}  // namespace redct
