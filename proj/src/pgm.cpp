#include "lumvit/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "lumvit/errors.hpp"

namespace lumvit {

void write_pgm(const std::string& path, int width, int height,
               const std::vector<double>& values) {
  if (static_cast<std::size_t>(width) * static_cast<std::size_t>(height) != values.size())
    throw DimensionError("write_pgm: values size != width*height");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing", 0);
  out << "P2\n" << width << " " << height << "\n255\n";
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double v = std::clamp(values[static_cast<std::size_t>(y) * width + x], 0.0, 1.0);
      out << static_cast<int>(std::lround(v * 255.0)) << (x + 1 == width ? '\n' : ' ');
    }
  }
  if (!out) throw FormatError(path + ": write failed", 0);
}

}  // namespace lumvit
