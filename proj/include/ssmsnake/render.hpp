#pragma once

#include <string>
#include <vector>

#include "ssmsnake/evolution.hpp"
#include "ssmsnake/imageio.hpp"
#include "ssmsnake/synthcorpus.hpp"

namespace ssmsnake {

// In-memory 8-bit grayscale PNG.
std::string encode_png(const Image8& img);
std::string base64(const std::string& bytes);

// Image as an embedded raster, one <g class="gt"> per instance, one
// <g class="snapshot"> per trajectory snapshot (opacity ramps up with the
// iteration) and point markers on the final contour.
std::string render_svg(const Scene& scene, const std::vector<Trajectory>& trajectories, double zoom = 4.0);

}  // namespace ssmsnake
