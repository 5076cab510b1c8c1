// SPDX-License-Identifier: Apache-2.0
//
// ngso-bf: user-terminal receive beamforming for NGSO co-frequency
// interference mitigation.

#ifndef NGSOBF_IO_HPP
#define NGSOBF_IO_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace ngsobf {

/// Filesystem failures get their own type so callers can map them to a
/// distinct exit code.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shortest exact decimal form of a double ("%.17g" round-trips bit-exact).
inline std::string fmt_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << content;
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return ss.str();
}

}  // namespace ngsobf

#endif  // NGSOBF_IO_HPP
