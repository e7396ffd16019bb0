#include "gvs/io.hpp"

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gvs/errors.hpp"

namespace gvs {

void write_pgm16(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 2) throw InvalidInputError("write_pgm16: expected 2-d tensor");
    const std::int64_t h = image.dim(0), w = image.dim(1);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInputError("write_pgm16: cannot open " + path.string());
    out << "P5\n" << w << ' ' << h << "\n65535\n";
    std::vector<unsigned char> buf(static_cast<std::size_t>(h * w * 2));
    for (std::int64_t i = 0; i < h * w; ++i) {
        double v = image[i];
        if (v < 0.0) v = 0.0;
        if (v > 1.0) v = 1.0;
        const auto raw = static_cast<std::uint16_t>(v * 65535.0 + 0.5);
        buf[static_cast<std::size_t>(2 * i)] = static_cast<unsigned char>(raw >> 8);
        buf[static_cast<std::size_t>(2 * i + 1)] = static_cast<unsigned char>(raw & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw InvalidInputError("write_pgm16: short write to " + path.string());
}

namespace {
// Skips whitespace and '#' comment lines between header tokens.
std::string next_token(std::istream& in) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    return tok;
}
}  // namespace

Tensor read_pgm16(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInputError("read_pgm16: cannot open " + path.string());
    if (next_token(in) != "P5") throw InvalidInputError("read_pgm16: not a binary PGM: " + path.string());
    std::int64_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoll(next_token(in));
        h = std::stoll(next_token(in));
        maxval = std::stoll(next_token(in));
    } catch (const std::exception&) {
        throw InvalidInputError("read_pgm16: malformed header: " + path.string());
    }
    if (w <= 0 || h <= 0 || (maxval != 255 && maxval != 65535)) {
        throw InvalidInputError("read_pgm16: unsupported header in " + path.string());
    }
    const int bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(static_cast<std::size_t>(h * w * bytes));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
        throw InvalidInputError("read_pgm16: truncated pixel data in " + path.string());
    }
    Tensor t({h, w});
    const double denom = static_cast<double>(maxval);
    for (std::int64_t i = 0; i < h * w; ++i) {
        std::uint32_t raw;
        if (bytes == 2) {
            raw = (static_cast<std::uint32_t>(buf[static_cast<std::size_t>(2 * i)]) << 8) |
                  buf[static_cast<std::size_t>(2 * i + 1)];
        } else {
            raw = buf[static_cast<std::size_t>(i)];
        }
        t[i] = static_cast<double>(raw) / denom;
    }
    return t;
}

}  // namespace gvs
