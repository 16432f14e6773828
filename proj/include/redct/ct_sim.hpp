#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "redct/tensor.hpp"

namespace redct {

// Ellipse in normalized coordinates: the image spans [-1, 1] on both axes.
struct Ellipse {
    double cx = 0.0, cy = 0.0;
    double a = 0.0, b = 0.0;  // semi-axes
    double angle = 0.0;       // radians
    double intensity = 0.0;
};

struct Phantom {
    Tensor image;  // [1, N, N], values in [0, 1]
    std::vector<Ellipse> ellipses;
};

// Ellipses painted in order (later ones overwrite), sampled at pixel centres.
Tensor rasterize_ellipses(const std::vector<Ellipse>& ellipses, std::size_t size);

// A background ellipse plus 3-8 seeded interior ellipses of distinct
// intensity. Throws SizeTooSmall for size < 32.
Phantom make_phantom(std::uint64_t seed, std::size_t size);

// Parallel-beam sinogram. Angles are uniform on [0, pi), detector d sits at
// offset d - (detectors - 1) / 2 pixels from the centre.
struct Sinogram {
    Tensor data;  // [views, detectors]
    std::size_t views() const { return data.dim(0); }
    std::size_t detectors() const { return data.dim(1); }
};

// Smallest odd detector count >= size * sqrt(2).
std::size_t default_detectors(std::size_t size);

// Line integrals with unit pixel size, sampled by bilinear interpolation at
// unit steps along each ray. Throws BadGeometry for views < 1 or detectors < N.
Sinogram radon(const Tensor& image, std::size_t views, std::size_t detectors);

// Per ray: c ~ Poisson(photons * exp(-p)), c clamped to >= 1, p' = -ln(c / photons).
Sinogram simulate_low_dose(const Sinogram& sino, double photons, std::uint64_t seed);

struct FbpOptions {
    bool clamp = true;  // clamp the result to [0, 1.5]
};

// Ram-Lak filtered back projection onto a [1, size, size] grid.
Tensor fbp(const Sinogram& sino, std::size_t size, const FbpOptions& options = {});

struct PairConfig {
    std::uint64_t seed = 0;
    std::size_t size = 64;
    std::size_t views = 180;
    std::size_t detectors = 0;  // 0 selects default_detectors(size)
    double photons = 1e4;
    // Line integral through unit-intensity material spanning the full image
    // width. Pixel attenuation is intensity * attenuation_scale / size.
    double attenuation_scale = 16.0;
};

struct ImagePair {
    Tensor clean;  // [1, N, N]
    Tensor noisy;  // [1, N, N], clamped to [0, 1]
};

// clean = phantom; noisy = fbp(low-dose(radon(clean))) clamped to [0, 1].
ImagePair make_pair(const PairConfig& config);

}  // namespace redct
