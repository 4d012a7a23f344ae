#include "implant/image_io.hpp"

#include <png.h>

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "implant/error.hpp"

namespace implant {

namespace {

Mask threshold(int width, int height, const std::vector<std::uint8_t>& gray) {
    std::vector<std::uint8_t> bin(gray.size());
    for (std::size_t i = 0; i < gray.size(); ++i) bin[i] = gray[i] >= 128 ? 255 : 0;
    return Mask(width, height, std::move(bin));
}

// Reads the next whitespace-delimited PGM header token, skipping comments.
std::string next_token(const std::string& bytes, std::size_t& pos) {
    while (pos < bytes.size()) {
        if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
            ++pos;
        } else {
            break;
        }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
}

Mask read_pgm(const std::string& bytes, const std::filesystem::path& path) {
    std::size_t pos = 2;
    int width = 0, height = 0, maxval = 0;
    try {
        width = std::stoi(next_token(bytes, pos));
        height = std::stoi(next_token(bytes, pos));
        maxval = std::stoi(next_token(bytes, pos));
    } catch (const std::exception&) {
        throw FormatError("malformed PGM header: " + path.string());
    }
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
        throw FormatError("PGM must be 8-bit with positive dimensions: " + path.string());
    }
    ++pos;  // single whitespace after maxval
    const std::size_t n = static_cast<std::size_t>(width) * height;
    if (bytes.size() < pos + n) throw FormatError("truncated PGM raster: " + path.string());
    std::vector<std::uint8_t> gray(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int v = static_cast<unsigned char>(bytes[pos + i]);
        gray[i] = static_cast<std::uint8_t>(v * 255 / maxval);
    }
    return threshold(width, height, gray);
}

Mask read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw FormatError("unreadable PNG " + path.string() + ": " + image.message);
    }
    if (image.format & PNG_FORMAT_FLAG_COLOR) {
        png_image_free(&image);
        throw FormatError("mask image is not grayscale: " + path.string());
    }
    if (image.format & PNG_FORMAT_FLAG_LINEAR) {
        png_image_free(&image);
        throw FormatError("mask image is not 8-bit: " + path.string());
    }
    image.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> gray(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, gray.data(), 0, nullptr)) {
        throw FormatError("failed decoding PNG " + path.string() + ": " + image.message);
    }
    return threshold(static_cast<int>(image.width), static_cast<int>(image.height), gray);
}

}  // namespace

Mask import_mask(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open mask image " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() >= 2 && bytes[0] == 'P') {
        if (bytes[1] == '5') return read_pgm(bytes, path);
        if (bytes[1] == '6' || bytes[1] == '3') throw FormatError("mask image is not grayscale: " + path.string());
        throw FormatError("unsupported PNM variant (expected binary P5): " + path.string());
    }
    static const unsigned char kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() >= 8 && std::equal(kPngMagic, kPngMagic + 8, reinterpret_cast<const unsigned char*>(bytes.data()))) {
        return read_png(path);
    }
    throw FormatError("unrecognized mask image format: " + path.string());
}

void write_pgm(const Mask& mask, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "P5\n" << mask.width() << ' ' << mask.height() << "\n255\n";
    out.write(reinterpret_cast<const char*>(mask.pixels().data()), static_cast<std::streamsize>(mask.pixels().size()));
    if (!out) throw IoError("failed writing " + path.string());
}

void write_png(const Mask& mask, const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(mask.width());
    image.height = static_cast<png_uint_32>(mask.height());
    image.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, mask.pixels().data(), 0, nullptr)) {
        throw IoError("failed writing PNG " + path.string() + ": " + image.message);
    }
}

}  // namespace implant
