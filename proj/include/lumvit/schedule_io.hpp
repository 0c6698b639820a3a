#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lumvit/dmd.hpp"
#include "lumvit/mask.hpp"

namespace lumvit {

// DMD schedule container: everything a hardware driver needs to replay the
// acquisition. Bit-exact format:
//   header line: "DMDSCHED1 <K> <C> <C_h> <N>\n"
//   C pattern records: ceil(K*K/8) bytes of bits (row-major, 8 per byte,
//     LSB first, zero-padded), then the scale s_i as a little-endian f64,
//     then C_h little-endian f64 spectral weights v_i
//   fixed mask: ceil(N*C/8) bytes of bits (patch-major)
//   fill token: C little-endian f64
struct DmdSchedule {
  int K = 0;
  int C = 0;
  int Ch = 0;
  std::int64_t N = 0;
  BinaryKernelBank<double> bank;      // patterns + scales + spectral weights
  FixedMask mask;                     // N*C retain bits
  std::vector<double> fill_token;     // C
};

void write_schedule(const std::string& path, const DmdSchedule& sched);
DmdSchedule read_schedule(const std::string& path);

}  // namespace lumvit
