#pragma once

#include <string>
#include <vector>

namespace lumvit {

// Plain (P2, ASCII) PGM writer for mask heatmaps. Values are clamped to
// [0,1] and quantized to maxval 255.
void write_pgm(const std::string& path, int width, int height, const std::vector<double>& values);

}  // namespace lumvit
