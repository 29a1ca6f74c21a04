#include "ssmsnake/imageio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <ostream>
#include <string>

#include "ssmsnake/errors.hpp"

namespace ssmsnake {

void write_pgm(std::ostream& out, const Image8& img) {
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
}

void write_pgm(const std::filesystem::path& path, const Image8& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    write_pgm(out, img);
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in, const std::filesystem::path& path) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty())
        throw FormatError(path.string() + ": truncated PGM header at offset " +
                          std::to_string(static_cast<long long>(in.tellg())));
    return tok;
}

}  // namespace

Image8 read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("cannot open image " + path.string());
    if (header_token(in, path) != "P5") throw FormatError(path.string() + ": not a binary PGM (P5) at offset 0");
    std::size_t w = 0, h = 0, maxval = 0;
    try {
        w = std::stoul(header_token(in, path));
        h = std::stoul(header_token(in, path));
        maxval = std::stoul(header_token(in, path));
    } catch (const std::logic_error&) {
        throw FormatError(path.string() + ": malformed PGM header");
    }
    if (maxval != 255) throw FormatError(path.string() + ": maxval must be 255");
    Image8 img(h, w);
    if (!in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size())))
        throw FormatError(path.string() + ": truncated pixel data at offset " +
                          std::to_string(static_cast<long long>(in.gcount())));
    return img;
}

Image8 quantize_u8(const RealGrid& g) {
    Image8 out(g.height, g.width);
    for (std::size_t i = 0; i < g.size(); ++i)
        out.data[i] = static_cast<std::uint8_t>(std::clamp(std::floor(g.data[i] + 0.5), 0.0, 255.0));
    return out;
}

}  // namespace ssmsnake
