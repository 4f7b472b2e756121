#include "unfoldseg/image_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace unfoldseg {

namespace {

struct Cursor {
    const std::string& bytes;
    const std::string& name;
    std::size_t pos = 0;

    bool eof() const { return pos >= bytes.size(); }
    char peek() const { return bytes[pos]; }

    [[noreturn]] void fail(const std::string& what) const {
        throw parse_error(name + ": " + what, pos);
    }

    void skip_space_and_comments() {
        while (!eof()) {
            const char ch = bytes[pos];
            if (ch == '#') {
                while (!eof() && bytes[pos] != '\n') ++pos;
            } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
                ++pos;
            } else {
                break;
            }
        }
    }

    int read_int(const char* what) {
        skip_space_and_comments();
        if (eof()) fail(std::string("unexpected end of file reading ") + what);
        if (bytes[pos] < '0' || bytes[pos] > '9')
            fail(std::string("expected digit for ") + what);
        long v = 0;
        while (!eof() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1 << 26) fail(std::string("value out of range for ") + what);
            ++pos;
        }
        return static_cast<int>(v);
    }
};

}  // namespace

Tensor parse_netpbm(const std::string& bytes, const std::string& name) {
    Cursor cur{bytes, name};
    if (bytes.size() < 2 || bytes[0] != 'P') cur.fail("missing netpbm magic");
    const char kind = bytes[1];
    if (kind != '2' && kind != '3' && kind != '5' && kind != '6')
        throw unsupported_format(name + ": unsupported netpbm variant P" +
                                 std::string(1, kind));
    cur.pos = 2;
    const bool ascii = (kind == '2' || kind == '3');
    const int channels = (kind == '2' || kind == '5') ? 1 : 3;

    const int width = cur.read_int("width");
    const int height = cur.read_int("height");
    const int maxval = cur.read_int("maxval");
    if (width <= 0 || height <= 0) cur.fail("non-positive image dimensions");
    if (maxval != 255)
        throw unsupported_format(name + ": unsupported maxval " + std::to_string(maxval) +
                                 " (only 255 is handled)");

    Tensor out(height, width, channels);
    const std::size_t count = out.size();
    if (ascii) {
        for (std::size_t i = 0; i < count; ++i) {
            const int v = cur.read_int("sample");
            if (v > 255) cur.fail("sample exceeds maxval");
            out[i] = v / 255.0;
        }
    } else {
        if (cur.eof()) cur.fail("unexpected end of file before raster");
        ++cur.pos;  // the single whitespace byte after maxval
        if (bytes.size() - cur.pos < count) {
            cur.pos = bytes.size();
            cur.fail("truncated raster, expected " + std::to_string(count) + " bytes");
        }
        for (std::size_t i = 0; i < count; ++i)
            out[i] = static_cast<unsigned char>(bytes[cur.pos + i]) / 255.0;
    }
    return out;
}

std::string render_netpbm(const Tensor& image, bool binary) {
    const int ch = image.channels();
    if (ch != 1 && ch != 3)
        throw std::invalid_argument("render_netpbm: image must have 1 or 3 channels, got " +
                                    image.shape_str());
    if (image.height() == 0 || image.width() == 0)
        throw std::invalid_argument("render_netpbm: empty image");
    std::string out;
    const char magic = ch == 1 ? (binary ? '5' : '2') : (binary ? '6' : '3');
    out += 'P';
    out += magic;
    out += '\n';
    out += std::to_string(image.width()) + " " + std::to_string(image.height()) + "\n255\n";
    auto quantize = [](double v) -> int {
        const int q = static_cast<int>(std::lround(v * 255.0));
        return q < 0 ? 0 : (q > 255 ? 255 : q);
    };
    if (binary) {
        out.reserve(out.size() + image.size());
        for (std::size_t i = 0; i < image.size(); ++i)
            out += static_cast<char>(quantize(image[i]));
    } else {
        for (int y = 0; y < image.height(); ++y) {
            for (int x = 0; x < image.width(); ++x)
                for (int c = 0; c < ch; ++c) {
                    out += std::to_string(quantize(image.at(y, x, c)));
                    out += (x + 1 == image.width() && c + 1 == ch) ? '\n' : ' ';
                }
        }
    }
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

Tensor load_image(const std::string& path) { return parse_netpbm(read_file(path), path); }

void save_image(const std::string& path, const Tensor& image, bool binary) {
    write_file(path, render_netpbm(image, binary));
}

void save_mask(const std::string& path, const Tensor& mask, bool binary) {
    if (mask.channels() != 1)
        throw std::invalid_argument("save_mask: masks must be single-channel");
    save_image(path, mask, binary);
}

}  // namespace unfoldseg
