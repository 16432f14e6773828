#include "redct/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "redct/errors.hpp"

namespace redct {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& bytes, std::size_t& offset) {
    if (offset + 4 > bytes.size()) throw IoError("unexpected end of data reading u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
    offset += 4;
    return v;
}

std::uint64_t get_u64(const std::vector<std::uint8_t>& bytes, std::size_t& offset) {
    if (offset + 8 > bytes.size()) throw IoError("unexpected end of data reading u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
    offset += 8;
    return v;
}

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

void append_rtf(std::vector<std::uint8_t>& out, const Tensor& t) {
    out.insert(out.end(), std::begin(kRtfMagic), std::end(kRtfMagic));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

Tensor parse_rtf(const std::vector<std::uint8_t>& bytes, std::size_t& offset) {
    if (offset + sizeof(kRtfMagic) > bytes.size()) throw IoError("truncated RTF1 header");
    if (std::memcmp(bytes.data() + offset, kRtfMagic, sizeof(kRtfMagic)) != 0)
        throw VersionMismatch("not an RTF1 tensor (bad magic)");
    offset += sizeof(kRtfMagic);
    const auto rank = get_u32(bytes, offset);
    if (rank > 4) throw IoError("RTF1 rank " + std::to_string(rank) + " exceeds 4");
    Shape shape(rank);
    for (auto& e : shape) e = get_u32(bytes, offset);
    const auto n = shape_numel(shape);
    if (offset + n * 8 > bytes.size()) throw IoError("truncated RTF1 payload");
    std::vector<double> values(n);
    for (auto& v : values) v = std::bit_cast<double>(get_u64(bytes, offset));
    return Tensor(std::move(shape), std::move(values));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

void write_rtf(const std::filesystem::path& path, const Tensor& t) {
    std::vector<std::uint8_t> bytes;
    append_rtf(bytes, t);
    write_file_bytes(path, bytes);
}

Tensor read_rtf(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    std::size_t offset = 0;
    Tensor t = parse_rtf(bytes, offset);
    if (offset != bytes.size()) throw IoError("trailing bytes after RTF1 tensor in " + path.string());
    return t;
}

}  // namespace redct
