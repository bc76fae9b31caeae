#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kpcodec {

// Base for everything the codec throws on bad input or a broken stream.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DegenerateTransform : public Error {
public:
    using Error::Error;
};

class InvalidDecomposition : public Error {
public:
    using Error::Error;
};

class MissingDescriptors : public Error {
public:
    using Error::Error;
};

class ScaleOutOfRange : public Error {
public:
    using Error::Error;
};

class InsufficientSamples : public Error {
public:
    using Error::Error;
};

class LocationOutOfGrid : public Error {
public:
    using Error::Error;
};

class ResidualOutOfRange : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class CorruptStream : public Error {
public:
    CorruptStream(std::size_t bit_offset, const std::string& what)
        : Error("corrupt stream at bit " + std::to_string(bit_offset) + " (byte " +
                std::to_string(bit_offset / 8) + "): " + what),
          bit_offset_(bit_offset) {}

    std::size_t bit_offset() const noexcept { return bit_offset_; }

private:
    std::size_t bit_offset_;
};

// Raised by the encoder when a frame cannot be coded; carries the frame index.
class FrameError : public Error {
public:
    FrameError(long long frame_index, const std::string& what)
        : Error("frame " + std::to_string(frame_index) + ": " + what), frame_index_(frame_index) {}

    long long frame_index() const noexcept { return frame_index_; }

private:
    long long frame_index_;
};

}  // namespace kpcodec
