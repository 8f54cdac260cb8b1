#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "lidarsim/error.hpp"

namespace lidarsim::detail {

template <typename T>
T byteswap_if_big(T value) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &value, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
            std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
        }
        std::memcpy(&value, bytes, sizeof(T));
    }
    return value;
}

template <typename T>
T load_le(const std::uint8_t* src) {
    T value;
    std::memcpy(&value, src, sizeof(T));
    return byteswap_if_big(value);
}

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T value) {
    value = byteswap_if_big(value);
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(&value);
    out.insert(out.end(), bytes, bytes + sizeof(T));
}

// Bounds-checked little-endian reader over an in-memory buffer.
class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    template <typename T>
    T read() {
        need(sizeof(T));
        T value = load_le<T>(bytes_.data() + pos_);
        pos_ += sizeof(T);
        return value;
    }

    std::string read_string(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw Error(ErrorCode::MalformedFile, "unexpected end of data");
        }
    }

    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace lidarsim::detail
