#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fogids/util.hpp"

namespace fogids {

// Little-endian binary stream with length-prefixed strings. Doubles travel
// as raw IEEE-754 bits so serialized models are bit-exact.
class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream& out) : out_(out) {}

    void u8(std::uint8_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s);
    void vec_f64(std::span<const double> v);
    void vec_u32(std::span<const std::uint32_t> v);
    void vec_str(std::span<const std::string> v);

private:
    std::ostream& out_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::istream& in) : in_(in) {}

    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str();
    std::vector<double> vec_f64();
    std::vector<std::uint32_t> vec_u32();
    std::vector<std::string> vec_str();

private:
    void raw(void* dst, std::size_t n);
    std::istream& in_;
};

}  // namespace fogids
