// SPDX-License-Identifier: Apache-2.0
//
// ngso-bf: user-terminal receive beamforming for NGSO co-frequency
// interference mitigation.
//
// Symbol streams and the M x L received snapshot matrix.

#ifndef NGSOBF_SIGNALS_HPP
#define NGSOBF_SIGNALS_HPP

#include <array>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "ngsobf/io.hpp"
#include "ngsobf/rng.hpp"
#include "ngsobf/scenario.hpp"

namespace ngsobf {

enum class Modulation { kQpsk, kQam8 };

inline std::string to_string(Modulation m) {
  return m == Modulation::kQpsk ? "QPSK" : "8QAM";
}

/// Unit-average-power symbol stream.
struct SymbolStream {
  Eigen::VectorXcd symbols;
  Modulation modulation = Modulation::kQpsk;
};

namespace detail {

// QPSK: (+-1 +-j)/sqrt(2), constant modulus 1.
inline std::complex<double> qpsk_point(std::uint64_t bits) {
  constexpr double s = 0.7071067811865476;  // 1/sqrt(2)
  return {(bits & 1) ? s : -s, (bits & 2) ? s : -s};
}

// Rectangular 8-QAM on a 4x2 grid, I in {-3,-1,1,3}, Q in {-1,1}, scaled by
// 1/sqrt(6) for unit average power (two amplitude rings).
inline std::complex<double> qam8_point(std::uint64_t bits) {
  constexpr double s = 0.4082482904638631;  // 1/sqrt(6)
  constexpr std::array<double, 4> levels{-3.0, -1.0, 1.0, 3.0};
  const double i = levels[bits & 3];
  const double q = (bits & 4) ? 1.0 : -1.0;
  return {i * s, q * s};
}

}  // namespace detail

/// I.i.d. uniform draws from the constellation, seeded.
inline SymbolStream gen_symbols(Modulation modulation, int length,
                                std::uint64_t seed) {
  if (length < 1) throw std::invalid_argument("symbol stream needs L >= 1");
  Rng rng(seed);
  SymbolStream stream;
  stream.modulation = modulation;
  stream.symbols.resize(length);
  for (int l = 0; l < length; ++l) {
    const std::uint64_t bits = rng.bits();
    stream.symbols[l] = modulation == Modulation::kQpsk
                            ? detail::qpsk_point(bits)
                            : detail::qam8_point(bits);
  }
  return stream;
}

/// Complex M x L array samples. One column per snapshot.
struct SnapshotMatrix {
  Eigen::MatrixXcd data;
  double sample_rate_hz = 0.0;
};

/// Synthesizes y[l] = h_d s_x[l] + sum_k h_k s_k[l] + n[l] for L snapshots.
/// Desired stream is QPSK, interferer streams 8QAM, noise is CN(0, sigma_n^2)
/// per entry; all streams use disjoint sub-seeds of `seed` and are mutually
/// independent. Noise is drawn element-major within each snapshot, snapshots
/// in order.
inline SnapshotMatrix synthesize_snapshots(const Scenario& scenario,
                                           int snapshots, std::uint64_t seed) {
  if (snapshots < 1) throw std::invalid_argument("need at least one snapshot");
  const int m = scenario.geometry.element_count();

  SnapshotMatrix out;
  out.sample_rate_hz = 2.0 * scenario.desired_link.bandwidth_hz;
  const SymbolStream desired =
      gen_symbols(Modulation::kQpsk, snapshots,
                  derive_seed(seed, seed_stream::kDesiredSymbols));
  out.data.noalias() =
      scenario.desired.coefficients * desired.symbols.transpose();
  for (std::size_t k = 0; k < scenario.interferers.size(); ++k) {
    const SymbolStream s = gen_symbols(
        Modulation::kQam8, snapshots,
        derive_seed(seed, seed_stream::kInterfererSymbolsBase + k));
    out.data.noalias() +=
        scenario.interferers[k].coefficients * s.symbols.transpose();
  }
  Rng noise(derive_seed(seed, seed_stream::kNoise));
  for (int l = 0; l < snapshots; ++l)
    for (int i = 0; i < m; ++i)
      out.data(i, l) += noise.complex_gaussian(scenario.noise_power_w);
  return out;
}

// Binary snapshot dump: magic "NGSOSNP1", u32 version, u32 M, u32 L, then
// M*L re/im f64 pairs row-major by element index. Little-endian, as written
// by the host. The sample rate is not part of the dump.
inline constexpr char kSnapshotMagic[8] = {'N', 'G', 'S', 'O',
                                           'S', 'N', 'P', '1'};
inline constexpr std::uint32_t kSnapshotVersion = 1;

inline void write_snapshots(const std::filesystem::path& path,
                            const SnapshotMatrix& snap) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(kSnapshotMagic, sizeof(kSnapshotMagic));
  const std::uint32_t version = kSnapshotVersion;
  const std::uint32_t m = static_cast<std::uint32_t>(snap.data.rows());
  const std::uint32_t l = static_cast<std::uint32_t>(snap.data.cols());
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&m), sizeof(m));
  out.write(reinterpret_cast<const char*>(&l), sizeof(l));
  for (std::uint32_t i = 0; i < m; ++i) {
    for (std::uint32_t j = 0; j < l; ++j) {
      const double re = snap.data(i, j).real();
      const double im = snap.data(i, j).imag();
      out.write(reinterpret_cast<const char*>(&re), sizeof(re));
      out.write(reinterpret_cast<const char*>(&im), sizeof(im));
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline SnapshotMatrix read_snapshots(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  char magic[8];
  std::uint32_t version = 0, m = 0, l = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&m), sizeof(m));
  in.read(reinterpret_cast<char*>(&l), sizeof(l));
  if (!in || std::memcmp(magic, kSnapshotMagic, sizeof(magic)) != 0)
    throw IoError("not a snapshot dump: " + path.string());
  if (version != kSnapshotVersion)
    throw IoError("unsupported snapshot dump version in " + path.string());
  SnapshotMatrix snap;
  snap.data.resize(m, l);
  for (std::uint32_t i = 0; i < m; ++i) {
    for (std::uint32_t j = 0; j < l; ++j) {
      double re = 0.0, im = 0.0;
      in.read(reinterpret_cast<char*>(&re), sizeof(re));
      in.read(reinterpret_cast<char*>(&im), sizeof(im));
      snap.data(i, j) = {re, im};
    }
  }
  if (!in) throw IoError("truncated snapshot dump: " + path.string());
  return snap;
}

}  // namespace ngsobf

#endif  // NGSOBF_SIGNALS_HPP
