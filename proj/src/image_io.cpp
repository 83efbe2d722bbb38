#include "ocular/image_io.hpp"

#include <fstream>

#include "ocular/common.hpp"

namespace ocular {

namespace {

bool is_pnm_space(int c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

// Skips whitespace and '#' comments (which run to end of line).
void skip_separators(std::istream& in) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (is_pnm_space(c)) {
            in.get();
        } else {
            return;
        }
    }
}

int read_header_int(std::istream& in, const std::string& path, const char* what) {
    skip_separators(in);
    int value = 0;
    bool any = false;
    for (;;) {
        int c = in.peek();
        if (c < '0' || c > '9') break;
        in.get();
        value = value * 10 + (c - '0');
        any = true;
        if (value > 1 << 20) throw FormatError(path + ": implausible " + std::string(what));
    }
    if (!any) throw FormatError(path + ": missing " + std::string(what) + " in header");
    return value;
}

}  // namespace

ImageBuffer read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path.string());

    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (!in || m0 != 'P' || (m1 != '5' && m1 != '6'))
        throw FormatError(path.string() + ": not a P5/P6 image (bad magic)");

    ImageBuffer img;
    img.channels = m1 == '5' ? 1 : 3;
    img.width = read_header_int(in, path.string(), "width");
    img.height = read_header_int(in, path.string(), "height");
    const int maxval = read_header_int(in, path.string(), "maxval");
    if (maxval != 255)
        throw FormatError(path.string() + ": unsupported maxval " + std::to_string(maxval) +
                          " (only 255)");
    if (img.width <= 0 || img.height <= 0)
        throw FormatError(path.string() + ": non-positive image dimensions");

    // Exactly one whitespace byte separates the header from the raster.
    int sep = in.get();
    if (!is_pnm_space(sep)) throw FormatError(path.string() + ": missing raster separator");

    const size_t expected =
        static_cast<size_t>(img.width) * img.height * static_cast<size_t>(img.channels);
    img.pixels.resize(expected);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(expected));
    if (static_cast<size_t>(in.gcount()) != expected)
        throw FormatError(path.string() + ": truncated raster, expected " +
                          std::to_string(expected) + " bytes, got " + std::to_string(in.gcount()));
    return img;
}

void write_pnm(const std::filesystem::path& path, const ImageBuffer& image) {
    if (image.width <= 0 || image.height <= 0)
        throw Error("write_pnm: non-positive dimensions");
    if (image.channels != 1 && image.channels != 3)
        throw Error("write_pnm: channels must be 1 or 3");
    const size_t expected =
        static_cast<size_t>(image.width) * image.height * static_cast<size_t>(image.channels);
    if (image.pixels.size() != expected)
        throw Error("write_pnm: pixel buffer size does not match dimensions");

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open image for writing: " + path.string());
    out << (image.channels == 1 ? "P5" : "P6") << "\n"
        << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace ocular
