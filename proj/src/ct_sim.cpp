#include "redct/ct_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "redct/errors.hpp"
#include "redct/rng.hpp"

namespace redct {
namespace {

constexpr double kPi = std::numbers::pi;

// Bilinear sample of an N x N image at (row, col), zero outside.
double bilinear(const double* img, std::size_t n, double row, double col) {
    const double r0 = std::floor(row);
    const double c0 = std::floor(col);
    const double fr = row - r0;
    const double fc = col - c0;
    const auto ir = static_cast<long>(r0);
    const auto ic = static_cast<long>(c0);
    const long ln = static_cast<long>(n);
    auto at = [&](long r, long c) -> double {
        if (r < 0 || c < 0 || r >= ln || c >= ln) return 0.0;
        return img[static_cast<std::size_t>(r) * n + static_cast<std::size_t>(c)];
    };
    return (1.0 - fr) * ((1.0 - fc) * at(ir, ic) + fc * at(ir, ic + 1)) +
           fr * ((1.0 - fc) * at(ir + 1, ic) + fc * at(ir + 1, ic + 1));
}

void check_image(const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 1 || image.dim(1) != image.dim(2))
        throw BadGeometry("expected a square [1,N,N] image, got " + shape_string(image.shape()));
}

}  // namespace

Tensor rasterize_ellipses(const std::vector<Ellipse>& ellipses, std::size_t size) {
    std::vector<double> img(size * size, 0.0);
    const double n = static_cast<double>(size);
    for (const auto& e : ellipses) {
        const double ca = std::cos(e.angle);
        const double sa = std::sin(e.angle);
        for (std::size_t r = 0; r < size; ++r) {
            const double y = (2.0 * static_cast<double>(r) + 1.0) / n - 1.0 - e.cy;
            for (std::size_t c = 0; c < size; ++c) {
                const double x = (2.0 * static_cast<double>(c) + 1.0) / n - 1.0 - e.cx;
                const double u = (x * ca + y * sa) / e.a;
                const double v = (-x * sa + y * ca) / e.b;
                if (u * u + v * v <= 1.0) img[r * size + c] = e.intensity;
            }
        }
    }
    for (auto& v : img) v = std::clamp(v, 0.0, 1.0);
    return Tensor({1, size, size}, std::move(img));
}

Phantom make_phantom(std::uint64_t seed, std::size_t size) {
    if (size < 32) throw SizeTooSmall("phantom size must be >= 32, got " + std::to_string(size));
    std::mt19937_64 rng(mix_seed(seed, 0x70a7));
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    std::vector<Ellipse> ellipses;
    Ellipse body;
    body.cx = uni(-0.03, 0.03);
    body.cy = uni(-0.03, 0.03);
    body.a = uni(0.75, 0.9);
    body.b = uni(0.7, 0.85);
    body.angle = uni(0.0, kPi);
    body.intensity = uni(0.15, 0.3);
    ellipses.push_back(body);

    const int count = std::uniform_int_distribution<int>(3, 8)(rng);
    std::vector<double> levels{body.intensity};
    for (int i = 0; i < count; ++i) {
        Ellipse e;
        const double radius = 0.45 * std::sqrt(uni(0.0, 1.0));
        const double phi = uni(0.0, 2.0 * kPi);
        e.cx = body.cx + radius * std::cos(phi);
        e.cy = body.cy + radius * std::sin(phi);
        e.a = uni(0.08, 0.22);
        e.b = uni(0.08, 0.22);
        e.angle = uni(0.0, kPi);
        // Keep intensities at least 0.05 apart so the levels stay distinct.
        double level = 0.0;
        do {
            level = uni(0.05, 1.0);
        } while (std::any_of(levels.begin(), levels.end(), [&](double l) { return std::abs(l - level) < 0.05; }));
        levels.push_back(level);
        e.intensity = level;
        ellipses.push_back(e);
    }
    return Phantom{rasterize_ellipses(ellipses, size), std::move(ellipses)};
}

std::size_t default_detectors(std::size_t size) {
    auto d = static_cast<std::size_t>(std::ceil(static_cast<double>(size) * std::numbers::sqrt2));
    return d % 2 == 0 ? d + 1 : d;
}

Sinogram radon(const Tensor& image, std::size_t views, std::size_t detectors) {
    check_image(image);
    const std::size_t n = image.dim(1);
    if (views < 1) throw BadGeometry("radon needs at least one view");
    if (detectors < n) {
        throw BadGeometry("radon needs at least " + std::to_string(n) + " detectors, got " +
                          std::to_string(detectors));
    }
    const double centre = (static_cast<double>(n) - 1.0) / 2.0;
    const double det_centre = (static_cast<double>(detectors) - 1.0) / 2.0;
    const long half_len = static_cast<long>(std::ceil(static_cast<double>(n) / std::numbers::sqrt2)) + 1;
    const double* img = image.data();

    std::vector<double> out(views * detectors, 0.0);
    for (std::size_t v = 0; v < views; ++v) {
        const double theta = kPi * static_cast<double>(v) / static_cast<double>(views);
        const double ct = std::cos(theta);
        const double st = std::sin(theta);
        for (std::size_t d = 0; d < detectors; ++d) {
            const double s = static_cast<double>(d) - det_centre;
            double acc = 0.0;
            for (long t = -half_len; t <= half_len; ++t) {
                const double td = static_cast<double>(t);
                const double x = s * ct - td * st;
                const double y = s * st + td * ct;
                acc += bilinear(img, n, y + centre, x + centre);
            }
            out[v * detectors + d] = acc;
        }
    }
    return Sinogram{Tensor({views, detectors}, std::move(out))};
}

Sinogram simulate_low_dose(const Sinogram& sino, double photons, std::uint64_t seed) {
    if (!(photons > 0.0)) throw BadGeometry("photon count must be positive");
    std::mt19937_64 rng(seed);
    std::vector<double> out(sino.data.numel());
    const auto p = sino.data.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double expected = photons * std::exp(-p[i]);
        long long counts = 0;
        if (expected > 0.0) counts = std::poisson_distribution<long long>(expected)(rng);
        counts = std::max<long long>(counts, 1);
        out[i] = -std::log(static_cast<double>(counts) / photons);
    }
    return Sinogram{Tensor(sino.data.shape(), std::move(out))};
}

Tensor fbp(const Sinogram& sino, std::size_t size, const FbpOptions& options) {
    if (sino.data.rank() != 2) throw BadGeometry("sinogram must be [views, detectors]");
    const std::size_t views = sino.views();
    const std::size_t det = sino.detectors();
    if (views < 1 || size < 1) throw BadGeometry("fbp needs at least one view and a positive size");
    if (det < size) {
        throw BadGeometry("fbp: " + std::to_string(det) + " detectors cannot cover a " + std::to_string(size) +
                          "-pixel grid");
    }

    // Zero-padded DFT length; 2*det leaves no circular wrap-around.
    const std::size_t len = 2 * det;
    std::vector<double> cos_t(len), sin_t(len);
    for (std::size_t i = 0; i < len; ++i) {
        const double w = 2.0 * kPi * static_cast<double>(i) / static_cast<double>(len);
        cos_t[i] = std::cos(w);
        sin_t[i] = std::sin(w);
    }
    // Ramp response: DFT of the band-limited spatial Ram-Lak kernel, which is
    // real and even, so its spectrum is real.
    std::vector<double> kernel(len, 0.0);
    for (std::size_t i = 0; i < len; ++i) {
        const long n = i < len / 2 ? static_cast<long>(i) : static_cast<long>(i) - static_cast<long>(len);
        if (n == 0) kernel[i] = 0.25;
        else if (n % 2 != 0) kernel[i] = -1.0 / (kPi * kPi * static_cast<double>(n) * static_cast<double>(n));
    }
    std::vector<double> ramp(len, 0.0);
    for (std::size_t k = 0; k < len; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < len; ++i) acc += kernel[i] * cos_t[(k * i) % len];
        ramp[k] = acc;
    }

    std::vector<double> filtered(views * det);
    std::vector<double> re(len), im(len);
    const auto p = sino.data.values();
    for (std::size_t v = 0; v < views; ++v) {
        const double* row = p.data() + v * det;
        for (std::size_t k = 0; k < len; ++k) {
            double a = 0.0, b = 0.0;
            for (std::size_t i = 0; i < det; ++i) {
                const std::size_t idx = (k * i) % len;
                a += row[i] * cos_t[idx];
                b -= row[i] * sin_t[idx];
            }
            re[k] = a * ramp[k];
            im[k] = b * ramp[k];
        }
        for (std::size_t i = 0; i < det; ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < len; ++k) {
                const std::size_t idx = (k * i) % len;
                acc += re[k] * cos_t[idx] - im[k] * sin_t[idx];
            }
            filtered[v * det + i] = acc / static_cast<double>(len);
        }
    }

    const double centre = (static_cast<double>(size) - 1.0) / 2.0;
    const double det_centre = (static_cast<double>(det) - 1.0) / 2.0;
    std::vector<double> img(size * size, 0.0);
    for (std::size_t v = 0; v < views; ++v) {
        const double theta = kPi * static_cast<double>(v) / static_cast<double>(views);
        const double ct = std::cos(theta);
        const double st = std::sin(theta);
        const double* q = filtered.data() + v * det;
        for (std::size_t r = 0; r < size; ++r) {
            const double y = static_cast<double>(r) - centre;
            for (std::size_t c = 0; c < size; ++c) {
                const double x = static_cast<double>(c) - centre;
                const double pos = x * ct + y * st + det_centre;
                const double f = std::floor(pos);
                const auto i0 = static_cast<long>(f);
                const double w = pos - f;
                double val = 0.0;
                if (i0 >= 0 && i0 < static_cast<long>(det)) val += (1.0 - w) * q[i0];
                if (i0 + 1 >= 0 && i0 + 1 < static_cast<long>(det)) val += w * q[i0 + 1];
                img[r * size + c] += val;
            }
        }
    }
    const double norm = kPi / static_cast<double>(views);
    for (auto& v : img) {
        v *= norm;
        if (options.clamp) v = std::clamp(v, 0.0, 1.5);
    }
    return Tensor({1, size, size}, std::move(img));
}

ImagePair make_pair(const PairConfig& config) {
    if (!(config.attenuation_scale > 0.0)) throw BadGeometry("attenuation_scale must be positive");
    const Phantom phantom = make_phantom(config.seed, config.size);
    const std::size_t det = config.detectors ? config.detectors : default_detectors(config.size);
    const Sinogram sino = radon(phantom.image, config.views, det);

    const double mu = config.attenuation_scale / static_cast<double>(config.size);
    std::vector<double> scaled(sino.data.values().begin(), sino.data.values().end());
    for (auto& v : scaled) v *= mu;
    const Sinogram noisy = simulate_low_dose(Sinogram{Tensor(sino.data.shape(), std::move(scaled))},
                                             config.photons, mix_seed(config.seed, 0xd05e));
    std::vector<double> back(noisy.data.values().begin(), noisy.data.values().end());
    for (auto& v : back) v /= mu;
    Tensor recon = fbp(Sinogram{Tensor(noisy.data.shape(), std::move(back))}, config.size, FbpOptions{false});
    std::vector<double> clamped(recon.values().begin(), recon.values().end());
    for (auto& v : clamped) v = std::clamp(v, 0.0, 1.0);
    return ImagePair{phantom.image, Tensor(recon.shape(), std::move(clamped))};
}

}  // namespace redct
