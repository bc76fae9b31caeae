#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kpcodec/errors.hpp"

namespace kpcodec {

/// MSB-first bit packer. Bits fill each byte from the most significant end;
/// the final byte is zero-padded only when the buffer is taken.
class BitWriter {
public:
    void write_bit(bool bit) {
        if (bit_count_ % 8 == 0) bytes_.push_back(0);
        if (bit) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bit_count_ % 8));
        ++bit_count_;
    }

    /// Writes the low `nbits` of `value`, most significant first.
    void write_bits(std::uint64_t value, int nbits) {
        for (int i = nbits - 1; i >= 0; --i) write_bit((value >> i) & 1u);
    }

    void append(const BitWriter& other) {
        for (std::size_t i = 0; i < other.bit_count_; ++i)
            write_bit((other.bytes_[i / 8] >> (7 - i % 8)) & 1u);
    }

    std::size_t bit_count() const noexcept { return bit_count_; }
    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
    std::vector<std::uint8_t> take() && { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
    std::size_t bit_count_ = 0;
};

/// MSB-first reader over [begin, end) bit positions of a byte buffer. Reads
/// past `end` throw CorruptStream with the absolute offset.
class BitReader {
public:
    explicit BitReader(std::span<const std::uint8_t> data)
        : data_(data), pos_(0), end_(data.size() * 8) {}

    BitReader(std::span<const std::uint8_t> data, std::size_t begin, std::size_t end)
        : data_(data), pos_(begin), end_(end) {}

    bool read_bit() {
        if (pos_ >= end_) throw CorruptStream(pos_, "unexpected end of data");
        const bool b = (data_[pos_ / 8] >> (7 - pos_ % 8)) & 1u;
        ++pos_;
        return b;
    }

    /// Bit past the limit reads as zero (arithmetic decoder look-ahead).
    bool read_bit_or_zero() { return pos_ < end_ ? read_bit() : (++pos_, false); }

    std::uint64_t read_bits(int nbits) {
        if (pos_ + static_cast<std::size_t>(nbits) > end_)
            throw CorruptStream(end_, "truncated field of " + std::to_string(nbits) + " bits at bit " +
                                          std::to_string(pos_));
        std::uint64_t v = 0;
        for (int i = 0; i < nbits; ++i) v = (v << 1) | static_cast<std::uint64_t>(read_bit());
        return v;
    }

    /// Carves the next `nbits` into an independent reader and skips them here.
    BitReader sub_reader(std::size_t nbits) {
        if (pos_ + nbits > end_) throw CorruptStream(end_, "segment of " + std::to_string(nbits) +
                                                               " bits overruns the stream at bit " +
                                                               std::to_string(pos_));
        BitReader r(data_, pos_, pos_ + nbits);
        pos_ += nbits;
        return r;
    }

    void skip(std::size_t nbits) { (void)sub_reader(nbits); }

    std::size_t position() const noexcept { return pos_; }
    std::size_t end() const noexcept { return end_; }
    std::size_t remaining() const noexcept { return pos_ < end_ ? end_ - pos_ : 0; }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_;
    std::size_t end_;
};

}  // namespace kpcodec
