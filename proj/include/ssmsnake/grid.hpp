#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace ssmsnake {

// Row-major 2-D raster.
template <class T>
struct Grid {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(std::size_t h, std::size_t w, T fill = T{}) : height(h), width(w), data(h * w, fill) {}

    T& operator()(std::size_t r, std::size_t c) { return data[r * width + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * width + c]; }
    std::size_t size() const { return data.size(); }

    friend bool operator==(const Grid& a, const Grid& b) {
        return a.height == b.height && a.width == b.width && a.data == b.data;
    }
};

using Mask = Grid<std::uint8_t>;
using RealGrid = Grid<double>;

}  // namespace ssmsnake
