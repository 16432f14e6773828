#include "redct/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <string>

#include "redct/errors.hpp"
#include "redct/tensor_io.hpp"

namespace redct {
namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
    while (pos < bytes.size()) {
        if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(bytes[pos])) {
            ++pos;
        } else {
            break;
        }
    }
    std::string tok;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
    return tok;
}

std::size_t parse_positive(const std::string& tok, const std::filesystem::path& path) {
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(c); }))
        throw IoError("malformed PGM header in " + path.string());
    return std::stoul(tok);
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Tensor& image, unsigned maxval) {
    if (maxval < 1 || maxval > 65535) throw IoError("PGM maxval must be in [1, 65535]");
    Shape s = image.shape();
    if (s.size() == 3 && s[0] == 1) s.erase(s.begin());
    if (s.size() != 2) throw ShapeMismatch("PGM needs a single-channel image, got " + shape_string(image.shape()));
    const std::string header = "P5\n" + std::to_string(s[1]) + " " + std::to_string(s[0]) + "\n" +
                               std::to_string(maxval) + "\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    const bool wide = maxval > 255;
    for (double v : image.values()) {
        const auto q = static_cast<unsigned>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
        if (wide) bytes.push_back(static_cast<std::uint8_t>(q >> 8));
        bytes.push_back(static_cast<std::uint8_t>(q & 0xff));
    }
    write_file_bytes(path, bytes);
}

ImageFile read_pgm(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    std::size_t pos = 0;
    if (header_token(bytes, pos) != "P5") throw IoError("not a binary PGM (P5): " + path.string());
    const auto width = parse_positive(header_token(bytes, pos), path);
    const auto height = parse_positive(header_token(bytes, pos), path);
    const auto maxval = parse_positive(header_token(bytes, pos), path);
    if (maxval < 1 || maxval > 65535) throw IoError("PGM maxval out of range in " + path.string());
    ++pos;  // single whitespace byte before the raster
    const bool wide = maxval > 255;
    const std::size_t n = width * height;
    if (pos + n * (wide ? 2 : 1) > bytes.size()) throw IoError("truncated PGM raster in " + path.string());
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
        unsigned q = bytes[pos++];
        if (wide) q = (q << 8) | bytes[pos++];
        values[i] = static_cast<double>(q) / static_cast<double>(maxval);
    }
    return ImageFile{Tensor({1, height, width}, std::move(values)), ImageFormat::Pgm, static_cast<unsigned>(maxval)};
}

ImageFile read_image(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return read_pgm(path);
    if (bytes.size() >= sizeof(kRtfMagic) && std::memcmp(bytes.data(), kRtfMagic, sizeof(kRtfMagic)) == 0) {
        std::size_t offset = 0;
        Tensor t = parse_rtf(bytes, offset);
        if (t.rank() == 2) t = t.reshape({1, t.dim(0), t.dim(1)});
        if (t.rank() != 3 || t.dim(0) != 1)
            throw ShapeMismatch("image tensor must be [1,H,W], got " + shape_string(t.shape()) + " in " + path.string());
        return ImageFile{t.detach(), ImageFormat::Rtf, 0};
    }
    throw IoError("unrecognised image format: " + path.string());
}

void write_image(const std::filesystem::path& path, const Tensor& image, ImageFormat format, unsigned maxval) {
    if (format == ImageFormat::Pgm) write_pgm(path, image, maxval);
    else write_rtf(path, image);
}

}  // namespace redct
