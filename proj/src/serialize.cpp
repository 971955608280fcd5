#include "fogids/serialize.hpp"

#include <istream>
#include <ostream>

namespace fogids {

void BinaryWriter::u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }

void BinaryWriter::u32(std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(b, 4);
}

void BinaryWriter::u64(std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(b, 8);
}

void BinaryWriter::str(std::string_view s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void BinaryWriter::vec_f64(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
}

void BinaryWriter::vec_u32(std::span<const std::uint32_t> v) {
    u64(v.size());
    for (auto x : v) u32(x);
}

void BinaryWriter::vec_str(std::span<const std::string> v) {
    u64(v.size());
    for (const auto& s : v) str(s);
}

void BinaryReader::raw(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
        throw SerializeError("unexpected end of stream");
}

std::uint8_t BinaryReader::u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
}

std::uint32_t BinaryReader::u32() {
    unsigned char b[4];
    raw(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t BinaryReader::u64() {
    unsigned char b[8];
    raw(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::string BinaryReader::str() {
    const std::uint64_t n = u64();
    if (n > (1ULL << 32)) throw SerializeError("string length out of range");
    std::string s(n, '\0');
    if (n) raw(s.data(), n);
    return s;
}

std::vector<double> BinaryReader::vec_f64() {
    const std::uint64_t n = u64();
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
}

std::vector<std::uint32_t> BinaryReader::vec_u32() {
    const std::uint64_t n = u64();
    std::vector<std::uint32_t> v(n);
    for (auto& x : v) x = u32();
    return v;
}

std::vector<std::string> BinaryReader::vec_str() {
    const std::uint64_t n = u64();
    std::vector<std::string> v(n);
    for (auto& s : v) s = str();
    return v;
}

}  // namespace fogids
