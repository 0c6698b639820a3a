#include "lumvit/schedule_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace lumvit {

namespace {

std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& bits) {
  std::vector<std::uint8_t> packed((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  return packed;
}

std::vector<std::uint8_t> unpack_bits(const std::vector<std::uint8_t>& packed, std::size_t count) {
  std::vector<std::uint8_t> bits(count, 0);
  for (std::size_t i = 0; i < count; ++i) bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
  return bits;
}

void write_f64(std::ofstream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), 8);
}

double read_f64(std::ifstream& in, std::uint64_t& offset, const std::string& path) {
  double v;
  in.read(reinterpret_cast<char*>(&v), 8);
  if (!in) throw FormatError(path + ": truncated record", offset);
  offset += 8;
  return v;
}

void read_exact(std::ifstream& in, char* dst, std::size_t n, std::uint64_t& offset,
                const std::string& path) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (!in) throw FormatError(path + ": truncated record", offset);
  offset += n;
}

}  // namespace

void write_schedule(const std::string& path, const DmdSchedule& sched) {
  if (sched.bank.K != sched.K || sched.bank.C != sched.C || sched.bank.Ch != sched.Ch)
    throw DimensionError("write_schedule: bank geometry mismatch");
  if (static_cast<std::int64_t>(sched.mask.bits.size()) != sched.N * sched.C)
    throw DimensionError("write_schedule: mask size != N*C");
  if (static_cast<int>(sched.fill_token.size()) != sched.C)
    throw DimensionError("write_schedule: fill token size != C");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing", 0);
  out << "DMDSCHED1 " << sched.K << " " << sched.C << " " << sched.Ch << " " << sched.N << "\n";
  for (int j = 0; j < sched.C; ++j) {
    const auto& pat = sched.bank.patterns[static_cast<std::size_t>(j)];
    const auto packed = pack_bits(pat.bits);
    out.write(reinterpret_cast<const char*>(packed.data()),
              static_cast<std::streamsize>(packed.size()));
    write_f64(out, pat.scale);
    for (int c = 0; c < sched.Ch; ++c)
      write_f64(out, sched.bank.spectral[static_cast<std::size_t>(j) * sched.Ch + c]);
  }
  const auto mask_packed = pack_bits(sched.mask.bits);
  out.write(reinterpret_cast<const char*>(mask_packed.data()),
            static_cast<std::streamsize>(mask_packed.size()));
  for (double v : sched.fill_token) write_f64(out, v);
  if (!out) throw FormatError(path + ": write failed", 0);
}

DmdSchedule read_schedule(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open", 0);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": missing header", 0);
  std::istringstream hdr(line);
  std::string magic;
  DmdSchedule s;
  if (!(hdr >> magic >> s.K >> s.C >> s.Ch >> s.N) || magic != "DMDSCHED1" || s.K <= 0 ||
      s.C <= 0 || s.Ch <= 0 || s.N <= 0)
    throw FormatError(path + ": bad DMDSCHED1 header", 0);
  std::uint64_t offset = line.size() + 1;

  s.bank.K = s.K;
  s.bank.C = s.C;
  s.bank.Ch = s.Ch;
  s.bank.patterns.resize(static_cast<std::size_t>(s.C));
  s.bank.spectral.resize(static_cast<std::size_t>(s.C) * s.Ch);
  const std::size_t pat_bytes = (static_cast<std::size_t>(s.K) * s.K + 7) / 8;
  std::vector<std::uint8_t> packed(pat_bytes);
  for (int j = 0; j < s.C; ++j) {
    read_exact(in, reinterpret_cast<char*>(packed.data()), pat_bytes, offset, path);
    auto& pat = s.bank.patterns[static_cast<std::size_t>(j)];
    pat.K = s.K;
    pat.bits = unpack_bits(packed, static_cast<std::size_t>(s.K) * s.K);
    pat.scale = read_f64(in, offset, path);
    for (int c = 0; c < s.Ch; ++c)
      s.bank.spectral[static_cast<std::size_t>(j) * s.Ch + c] = read_f64(in, offset, path);
  }

  const std::size_t mask_bytes = (static_cast<std::size_t>(s.N) * s.C + 7) / 8;
  std::vector<std::uint8_t> mask_packed(mask_bytes);
  read_exact(in, reinterpret_cast<char*>(mask_packed.data()), mask_bytes, offset, path);
  s.mask.N = s.N;
  s.mask.C = s.C;
  s.mask.bits = unpack_bits(mask_packed, static_cast<std::size_t>(s.N) * s.C);
  s.mask.rate = static_cast<double>(s.mask.retained()) / static_cast<double>(s.N * s.C);

  s.fill_token.resize(static_cast<std::size_t>(s.C));
  for (int j = 0; j < s.C; ++j) s.fill_token[static_cast<std::size_t>(j)] = read_f64(in, offset, path);

  // No trailing bytes allowed.
  in.peek();
  if (!in.eof()) throw FormatError(path + ": trailing bytes after fill token", offset);
  return s;
}

}  // namespace lumvit
