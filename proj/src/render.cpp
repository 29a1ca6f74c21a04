#include "ssmsnake/render.hpp"

#include <png.h>

#include <cstdio>
#include <sstream>

#include "ssmsnake/errors.hpp"

namespace ssmsnake {

namespace {

void png_append(png_structp png, png_bytep data, png_size_t len) {
    auto* out = static_cast<std::string*>(png_get_io_ptr(png));
    out->append(reinterpret_cast<const char*>(data), len);
}

const char* kClassColors[] = {"#e6194b", "#3cb44b", "#4363d8"};

std::string points_attr(const std::vector<Point>& pts, double zoom) {
    std::string s;
    char buf[64];
    for (const Point& p : pts) {
        std::snprintf(buf, sizeof buf, "%s%.3f,%.3f", s.empty() ? "" : " ", p.x * zoom, p.y * zoom);
        s += buf;
    }
    return s;
}

}  // namespace

std::string encode_png(const Image8& img) {
    std::string out;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw Error("png: cannot create writer");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("png: encoding failed");
    }
    png_set_write_fn(png, &out, png_append, nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t r = 0; r < img.height; ++r)
        png_write_row(png, const_cast<png_bytep>(img.data.data() + r * img.width));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

std::string base64(const std::string& bytes) {
    static const char* tbl = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                           (static_cast<unsigned char>(bytes[i + 1]) << 8) | static_cast<unsigned char>(bytes[i + 2]);
        out += {tbl[v >> 18], tbl[(v >> 12) & 63], tbl[(v >> 6) & 63], tbl[v & 63]};
    }
    if (i + 1 == bytes.size()) {
        const unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
        out += {tbl[v >> 18], tbl[(v >> 12) & 63], '=', '='};
    } else if (i + 2 == bytes.size()) {
        const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) | (static_cast<unsigned char>(bytes[i + 1]) << 8);
        out += {tbl[v >> 18], tbl[(v >> 12) & 63], tbl[(v >> 6) & 63], '='};
    }
    return out;
}

std::string render_svg(const Scene& scene, const std::vector<Trajectory>& trajectories, double zoom) {
    std::ostringstream os;
    const double w = static_cast<double>(scene.image.width) * zoom, h = static_cast<double>(scene.image.height) * zoom;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" xmlns:xlink=\"http://www.w3.org/1999/xlink\" width=\"" << w
       << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n";
    os << "<image x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h
       << "\" style=\"image-rendering:pixelated\" xlink:href=\"data:image/png;base64," << base64(encode_png(scene.image))
       << "\"/>\n";
    for (std::size_t i = 0; i < scene.instances.size(); ++i) {
        const Instance& inst = scene.instances[i];
        os << "<g class=\"gt\" id=\"gt-" << i << "\" data-class=\"" << inst.class_id << "\" fill=\"none\" stroke=\""
           << kClassColors[static_cast<std::size_t>(inst.class_id) % 3] << "\" stroke-width=\"2\">"
           << "<polygon points=\"" << points_attr(inst.polygon.vertices(), zoom) << "\"/></g>\n";
    }
    std::size_t snaps = 0;
    for (const Trajectory& t : trajectories) snaps = std::max(snaps, t.snapshots.size());
    for (std::size_t k = 0; k < snaps; ++k) {
        const double opacity = snaps > 1 ? 0.25 + 0.75 * static_cast<double>(k) / static_cast<double>(snaps - 1) : 1.0;
        char op[32];
        std::snprintf(op, sizeof op, "%.3f", opacity);
        os << "<g class=\"snapshot\" id=\"snapshot-" << k << "\" fill=\"none\" stroke=\"#ffe119\" stroke-width=\"1\" "
           << "stroke-opacity=\"" << op << "\">";
        for (const Trajectory& t : trajectories)
            if (k < t.snapshots.size()) os << "<polygon points=\"" << points_attr(t.snapshots[k], zoom) << "\"/>";
        os << "</g>\n";
    }
    os << "<g class=\"points\" fill=\"#f58231\">";
    char buf[96];
    for (const Trajectory& t : trajectories) {
        if (t.snapshots.empty()) continue;
        for (const Point& p : t.snapshots.back()) {
            std::snprintf(buf, sizeof buf, "<circle cx=\"%.3f\" cy=\"%.3f\" r=\"1.5\"/>", p.x * zoom, p.y * zoom);
            os << buf;
        }
    }
    os << "</g>\n</svg>\n";
    return os.str();
}

}  // namespace ssmsnake
