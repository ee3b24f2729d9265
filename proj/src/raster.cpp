#include "osp/raster.hpp"

#include <cmath>
#include <fstream>
#include <string>

namespace osp {

namespace {

void write_header(std::ofstream& out, const char* magic, int w, int h) {
    out << magic << "\n" << w << " " << h << "\n255\n";
}

// Reads one whitespace-delimited token, skipping '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

struct PnmHeader {
    int width = 0, height = 0;
};

PnmHeader read_header(std::istream& in, const char* magic, const std::filesystem::path& path) {
    if (next_token(in) != magic)
        throw FormatError(path.string() + ": expected " + magic + " header");
    PnmHeader h;
    try {
        h.width = std::stoi(next_token(in));
        h.height = std::stoi(next_token(in));
        if (std::stoi(next_token(in)) != 255)
            throw FormatError(path.string() + ": maxval must be 255");
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception&) {
        throw FormatError(path.string() + ": malformed header");
    }
    if (h.width < 1 || h.height < 1) throw FormatError(path.string() + ": bad dimensions");
    return h;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    if (image.ndim() != 3 || image.dim(2) != 3) throw ShapeError("write_ppm: need [H,W,3]");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    const int h = image.dim(0), w = image.dim(1);
    write_header(out, "P6", w, h);
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = image.at(y, x, c);
                v = std::clamp(v, 0.0, 1.0);
                row[static_cast<size_t>(x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0));
            }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IoError("short write to " + path.string());
}

Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    PnmHeader hdr = read_header(in, "P6", path);
    std::vector<unsigned char> bytes(static_cast<size_t>(hdr.width) * hdr.height * 3);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw FormatError(path.string() + ": truncated pixel data");
    Tensor img = Tensor::zeros({hdr.height, hdr.width, 3});
    for (size_t i = 0; i < bytes.size(); ++i)
        img.data()[i] = static_cast<double>(bytes[i]) / 255.0;
    return img;
}

void write_pgm(const std::filesystem::path& path, const LabelMask& mask) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_header(out, "P5", mask.width, mask.height);
    out.write(reinterpret_cast<const char*>(mask.labels.data()),
              static_cast<std::streamsize>(mask.labels.size()));
    if (!out) throw IoError("short write to " + path.string());
}

LabelMask read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    PnmHeader hdr = read_header(in, "P5", path);
    LabelMask mask(hdr.height, hdr.width);
    in.read(reinterpret_cast<char*>(mask.labels.data()),
            static_cast<std::streamsize>(mask.labels.size()));
    if (in.gcount() != static_cast<std::streamsize>(mask.labels.size()))
        throw FormatError(path.string() + ": truncated pixel data");
    return mask;
}

}  // namespace osp
