#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include "unfoldseg/tensor.hpp"

namespace unfoldseg {

/// Malformed or truncated netpbm input; offset is the byte position at
/// which parsing failed (also embedded in the message).
struct parse_error : std::runtime_error {
    std::size_t offset;
    parse_error(const std::string& msg, std::size_t off)
        : std::runtime_error(msg + " at byte " + std::to_string(off)), offset(off) {}
};

/// Structurally valid netpbm input that this reader does not handle
/// (anything with maxval != 255).
struct unsupported_format : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Parses P2/P5 (grayscale) and P3/P6 (RGB) netpbm images with maxval 255.
/// Values map to [0, 1] as v/255. `name` labels error messages.
Tensor parse_netpbm(const std::string& bytes, const std::string& name);

/// Serializes to PGM (1 channel) or PPM (3 channels); binary P5/P6 by
/// default, plain P2/P3 otherwise. Values are quantized as round(v*255)
/// clamped to [0, 255].
std::string render_netpbm(const Tensor& image, bool binary = true);

Tensor load_image(const std::string& path);
void save_image(const std::string& path, const Tensor& image, bool binary = true);
void save_mask(const std::string& path, const Tensor& mask, bool binary = true);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace unfoldseg
