#include "lumvit/hsc.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lumvit {

namespace {

struct HscHeader {
  std::int64_t H = 0, W = 0, bands = 0;
  bool f64 = false;
  std::vector<int> exclude;
  std::uint64_t payload_offset = 0;
};

std::string read_line(std::ifstream& in, std::uint64_t& offset, const std::string& path) {
  std::string line;
  if (!std::getline(in, line))
    throw FormatError(path + ": unexpected end of file in header", offset);
  offset += line.size() + 1;
  return line;
}

HscHeader parse_header(std::ifstream& in, const std::string& path) {
  HscHeader h;
  std::uint64_t offset = 0;
  std::istringstream first(read_line(in, offset, path));
  std::string magic, dtype, order;
  if (!(first >> magic) || magic != "HSC1")
    throw FormatError(path + ": bad magic, expected HSC1", 0);
  if (!(first >> h.H >> h.W >> h.bands >> dtype >> order) || h.H <= 0 || h.W <= 0 || h.bands <= 0)
    throw FormatError(path + ": malformed header dimensions", 5);
  if (dtype == "f32")
    h.f64 = false;
  else if (dtype == "f64")
    h.f64 = true;
  else
    throw FormatError(path + ": dtype must be f32 or f64", 5);
  if (order != "hwc") throw FormatError(path + ": order must be hwc", 5);

  if (in.peek() == 'E') {
    std::istringstream second(read_line(in, offset, path));
    std::string kw;
    second >> kw;
    if (kw != "EXCLUDE") throw FormatError(path + ": malformed EXCLUDE line", offset);
    std::string rest;
    std::getline(second, rest);
    std::istringstream bands(rest);
    std::string tok;
    while (std::getline(bands, tok, ',')) {
      try {
        h.exclude.push_back(std::stoi(tok));
      } catch (const std::exception&) {
        throw FormatError(path + ": bad band index '" + tok + "' in EXCLUDE", offset);
      }
    }
    std::sort(h.exclude.begin(), h.exclude.end());
    h.exclude.erase(std::unique(h.exclude.begin(), h.exclude.end()), h.exclude.end());
    for (int b : h.exclude)
      if (b < 0 || b >= h.bands)
        throw FormatError(path + ": EXCLUDE band " + std::to_string(b) + " out of range", offset);
  }
  h.payload_offset = offset;
  return h;
}

template <class Real>
Cube<Real> load_cube_impl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open", 0);
  HscHeader h = parse_header(in, path);

  const std::size_t scalar = h.f64 ? 8 : 4;
  const std::uint64_t expect = static_cast<std::uint64_t>(h.H) * h.W * h.bands * scalar;
  in.seekg(0, std::ios::end);
  const std::uint64_t fsize = static_cast<std::uint64_t>(in.tellg());
  if (fsize != h.payload_offset + expect)
    throw FormatError(path + ": payload size mismatch, expected " + std::to_string(expect) +
                          " bytes",
                      fsize < h.payload_offset + expect ? fsize : h.payload_offset + expect);
  in.seekg(static_cast<std::streamoff>(h.payload_offset));

  std::vector<char> raw(expect);
  in.read(raw.data(), static_cast<std::streamsize>(expect));
  if (!in) throw FormatError(path + ": truncated payload", h.payload_offset);

  std::vector<std::uint8_t> keep(static_cast<std::size_t>(h.bands), 1);
  for (int b : h.exclude) keep[static_cast<std::size_t>(b)] = 0;

  Cube<Real> cube;
  cube.H = static_cast<int>(h.H);
  cube.W = static_cast<int>(h.W);
  cube.source_bands = static_cast<int>(h.bands);
  for (int b = 0; b < h.bands; ++b)
    if (keep[static_cast<std::size_t>(b)]) cube.band_mask.push_back(b);
  cube.bands = static_cast<int>(cube.band_mask.size());
  cube.data.resize(static_cast<std::size_t>(h.H) * h.W * cube.bands);

  const std::int64_t pixels = h.H * h.W;
  for (std::int64_t p = 0; p < pixels; ++p) {
    const char* src = raw.data() + static_cast<std::uint64_t>(p) * h.bands * scalar;
    Real* dst = cube.data.data() + p * cube.bands;
    int out = 0;
    for (int b = 0; b < h.bands; ++b) {
      if (!keep[static_cast<std::size_t>(b)]) continue;
      if (h.f64) {
        double v;
        std::memcpy(&v, src + static_cast<std::size_t>(b) * 8, 8);
        dst[out++] = static_cast<Real>(v);
      } else {
        float v;
        std::memcpy(&v, src + static_cast<std::size_t>(b) * 4, 4);
        dst[out++] = static_cast<Real>(v);
      }
    }
  }
  return cube;
}

template <class Real>
void save_cube_impl(const std::string& path, const Cube<Real>& cube, bool as_f64) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing", 0);
  out << "HSC1 " << cube.H << " " << cube.W << " " << cube.bands << " "
      << (as_f64 ? "f64" : "f32") << " hwc\n";
  for (Real v : cube.data) {
    if (as_f64) {
      const double d = static_cast<double>(v);
      out.write(reinterpret_cast<const char*>(&d), 8);
    } else {
      const float f = static_cast<float>(v);
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  if (!out) throw FormatError(path + ": write failed", 0);
}

}  // namespace

Cube<float> load_cube_f32(const std::string& path) { return load_cube_impl<float>(path); }
Cube<double> load_cube_f64(const std::string& path) { return load_cube_impl<double>(path); }

template <>
Cube<float> load_cube<float>(const std::string& path) {
  return load_cube_impl<float>(path);
}
template <>
Cube<double> load_cube<double>(const std::string& path) {
  return load_cube_impl<double>(path);
}

void save_cube(const std::string& path, const Cube<float>& cube, bool as_f64) {
  save_cube_impl(path, cube, as_f64);
}
void save_cube(const std::string& path, const Cube<double>& cube, bool as_f64) {
  save_cube_impl(path, cube, as_f64);
}

LabelMap load_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open", 0);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": missing header", 0);
  std::istringstream hdr(line);
  std::string magic, dtype;
  std::int64_t H, W;
  if (!(hdr >> magic >> H >> W >> dtype) || magic != "HSL1" || dtype != "u16" || H <= 0 || W <= 0)
    throw FormatError(path + ": bad HSL1 header", 0);
  const std::uint64_t offset = line.size() + 1;
  const std::uint64_t expect = static_cast<std::uint64_t>(H) * W * 2;
  in.seekg(0, std::ios::end);
  if (static_cast<std::uint64_t>(in.tellg()) != offset + expect)
    throw FormatError(path + ": payload size mismatch", offset);
  in.seekg(static_cast<std::streamoff>(offset));
  LabelMap map;
  map.H = static_cast<int>(H);
  map.W = static_cast<int>(W);
  map.labels.resize(static_cast<std::size_t>(H * W));
  in.read(reinterpret_cast<char*>(map.labels.data()), static_cast<std::streamsize>(expect));
  if (!in) throw FormatError(path + ": truncated payload", offset);
  return map;
}

void save_labels(const std::string& path, const LabelMap& map) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing", 0);
  out << "HSL1 " << map.H << " " << map.W << " u16\n";
  out.write(reinterpret_cast<const char*>(map.labels.data()),
            static_cast<std::streamsize>(map.labels.size() * 2));
  if (!out) throw FormatError(path + ": write failed", 0);
}

}  // namespace lumvit
