// SPDX-License-Identifier: Apache-2.0
//
// ngso-bf: user-terminal receive beamforming for NGSO co-frequency
// interference mitigation.
//
// Covariance estimation, the classical beamformers (MRC, ZF, SMI, MVDR),
// SINR metrics and beam-pattern evaluation.

#ifndef NGSOBF_BEAMFORM_HPP
#define NGSOBF_BEAMFORM_HPP

#include <cmath>
#include <complex>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ngsobf/io.hpp"
#include "ngsobf/scenario.hpp"
#include "ngsobf/signals.hpp"

namespace ngsobf {

enum class BeamformerMethod { kInitial, kMrc, kZf, kSmi, kMvdr, kMambaBf };

inline std::string to_string(BeamformerMethod m) {
  switch (m) {
    case BeamformerMethod::kInitial: return "initial";
    case BeamformerMethod::kMrc: return "mrc";
    case BeamformerMethod::kZf: return "zf";
    case BeamformerMethod::kSmi: return "smi";
    case BeamformerMethod::kMvdr: return "mvdr";
    case BeamformerMethod::kMambaBf: return "mamba";
  }
  return "unknown";
}

/// Universal beamformer output: a complex weight vector of length M.
/// MRC/ZF/MambaBF weights are unit norm by construction; MVDR/SMI weights
/// satisfy w^H v_d = 1 instead.
struct BeamWeights {
  Eigen::VectorXcd weights;
  BeamformerMethod method = BeamformerMethod::kInitial;
};

/// Structured covariances of one coherence interval plus the sample estimate.
struct CovarianceSet {
  Eigen::MatrixXcd r_desired;    // h_d h_d^H
  Eigen::MatrixXcd r_int_noise;  // H_i H_i^H + sigma_n^2 I
  Eigen::MatrixXcd r_sample;     // (1/L) Y Y^H
};

/// (1/L) sum_l y[l] y[l]^H. Hermitian PSD by construction.
inline Eigen::MatrixXcd sample_covariance(const SnapshotMatrix& y) {
  if (y.data.cols() < 1)
    throw std::invalid_argument("need at least one snapshot");
  Eigen::MatrixXcd r = y.data * y.data.adjoint();
  r /= static_cast<double>(y.data.cols());
  return r;
}

inline CovarianceSet make_covariance_set(const Scenario& scenario,
                                         const SnapshotMatrix& y) {
  CovarianceSet set;
  const auto& h_d = scenario.desired.coefficients;
  const Eigen::MatrixXcd h_int = scenario.interference_matrix();
  set.r_desired = h_d * h_d.adjoint();
  set.r_int_noise = h_int * h_int.adjoint();
  set.r_int_noise += scenario.noise_power_w *
                     Eigen::MatrixXcd::Identity(h_d.size(), h_d.size());
  set.r_sample = sample_covariance(y);
  return set;
}

/// Maximum ratio combining: w = h_d / ||h_d||.
inline BeamWeights mrc(const Eigen::VectorXcd& h_d) {
  const double n = h_d.norm();
  if (!(n > 0.0)) throw std::invalid_argument("mrc: zero channel vector");
  return {h_d / n, BeamformerMethod::kMrc};
}

/// Zero forcing: the desired channel projected onto the orthogonal
/// complement of the interference subspace, then normalized. The projection
/// uses a rank-revealing least-squares solve (complete orthogonal
/// decomposition), so collinear interferer columns are handled; it is applied
/// twice to push the residual correlation down to rounding level.
inline BeamWeights zf(const Eigen::VectorXcd& h_d,
                      const Eigen::MatrixXcd& h_int) {
  if (!(h_d.norm() > 0.0)) throw std::invalid_argument("zf: zero channel");
  if (h_int.cols() >= h_d.size())
    throw std::invalid_argument("zf: needs K < M");
  if (h_int.cols() == 0) return {h_d / h_d.norm(), BeamformerMethod::kZf};

  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXcd> cod(h_int);
  Eigen::VectorXcd p = h_d - h_int * cod.solve(h_d);
  p -= h_int * cod.solve(p);  // re-orthogonalization pass

  const double n = p.norm();
  if (!(n > 1e-8 * h_d.norm()))
    throw std::runtime_error(
        "zf: desired channel lies in the interference subspace");
  return {p / n, BeamformerMethod::kZf};
}

/// MVDR / Capon weights w = R^-1 v_d / (v_d^H R^-1 v_d), computed as a
/// Hermitian positive definite solve (never an explicit inverse). With the
/// sample covariance this is the SMI beamformer. `diagonal_loading` adds
/// eps * trace(R)/M to the diagonal before factorizing (off by default).
inline BeamWeights mvdr(const Eigen::MatrixXcd& r,
                        const Eigen::VectorXcd& v_d,
                        BeamformerMethod tag = BeamformerMethod::kMvdr,
                        double diagonal_loading = 0.0) {
  if (r.rows() != r.cols() || r.rows() != v_d.size())
    throw std::invalid_argument("mvdr: dimension mismatch");
  if (!(v_d.norm() > 0.0))
    throw std::invalid_argument("mvdr: zero steering vector");

  Eigen::MatrixXcd reg = r;
  if (diagonal_loading > 0.0) {
    const double load = diagonal_loading * r.real().trace() / r.rows();
    reg += load * Eigen::MatrixXcd::Identity(r.rows(), r.cols());
  }
  Eigen::LLT<Eigen::MatrixXcd> llt(reg);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(
        "mvdr: covariance is not positive definite (try diagonal loading)");

  // Cheap condition heuristic from the Cholesky diagonal.
  const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal().real();
  const double dmax = diag.maxCoeff(), dmin = diag.minCoeff();
  if (dmin > 0.0 && (dmax / dmin) * (dmax / dmin) > 1e12)
    std::cerr << "mvdr: warning: covariance condition estimate exceeds 1e12\n";

  const Eigen::VectorXcd x = llt.solve(v_d);
  const std::complex<double> denom = v_d.dot(x);  // v_d^H x, real for HPD R
  if (!(std::abs(denom) > 0.0))
    throw std::runtime_error("mvdr: degenerate constraint");
  return {x / denom, tag};
}

/// SMI: MVDR with the sample covariance of the observed snapshots.
inline BeamWeights smi(const SnapshotMatrix& y, const Eigen::VectorXcd& v_d,
                       double diagonal_loading = 0.0) {
  return mvdr(sample_covariance(y), v_d, BeamformerMethod::kSmi,
              diagonal_loading);
}

/// Output SINR |w^H h_d|^2 / (sum_k |w^H h_k|^2 + sigma_n^2 ||w||^2), in
/// linear scale. Invariant to nonzero complex scaling of w.
inline double sinr(const BeamWeights& w, const Eigen::VectorXcd& h_d,
                   const Eigen::MatrixXcd& h_int, double noise_w) {
  const double wnorm2 = w.weights.squaredNorm();
  if (!(wnorm2 > 0.0)) throw std::invalid_argument("sinr: zero weights");
  const double sig = std::norm(std::complex<double>(w.weights.dot(h_d)));
  double interference = 0.0;
  for (int k = 0; k < h_int.cols(); ++k)
    interference += std::norm(std::complex<double>(w.weights.dot(h_int.col(k))));
  return sig / (interference + noise_w * wnorm2);
}

/// Average output SINR over L snapshots. The channels are constant within a
/// coherence interval, so every per-snapshot term equals sinr(); the average
/// is still formed literally.
inline double asinr(const BeamWeights& w, const Scenario& scenario,
                    int snapshots) {
  if (snapshots < 1) throw std::invalid_argument("asinr: L >= 1 required");
  const Eigen::MatrixXcd h_int = scenario.interference_matrix();
  double acc = 0.0;
  for (int l = 0; l < snapshots; ++l)
    acc += sinr(w, scenario.desired.coefficients, h_int,
                scenario.noise_power_w);
  return acc / snapshots;
}

/// Array receive gain toward a DOA for arbitrary weights:
/// G = eta * M * |w^H v(doa)|^2 / ||w||^2. Boresight matched weights give
/// eta * M.
inline double beam_gain(const ArrayGeometry& geometry, const BeamWeights& w,
                        const Doa& doa, double efficiency) {
  const double wnorm2 = w.weights.squaredNorm();
  if (!(wnorm2 > 0.0)) throw std::invalid_argument("beam_gain: zero weights");
  const std::complex<double> corr =
      w.weights.dot(steering_vector(geometry, doa));
  return efficiency * geometry.element_count() * std::norm(corr) / wnorm2;
}

inline constexpr double kBeamPatternDbFloor = -300.0;

/// Linear gain to dB with a -300 dB floor (nulls would otherwise be -inf).
inline double to_db_floored(double linear) {
  if (!(linear > 1e-30)) return kBeamPatternDbFloor;
  return 10.0 * std::log10(linear);
}

/// Beam gain in dB on a regular azimuth x elevation grid. Row i corresponds
/// to elevation_deg[i], column j to azimuth_deg[j].
struct BeamPatternGrid {
  std::vector<double> azimuth_deg;
  std::vector<double> elevation_deg;
  Eigen::MatrixXd db;
};

inline BeamPatternGrid beam_pattern_grid(const ArrayGeometry& geometry,
                                         const BeamWeights& w, double az_min,
                                         double az_max, double el_min,
                                         double el_max, double step_deg,
                                         double efficiency) {
  if (!(step_deg > 0.0)) throw std::invalid_argument("grid step must be > 0");
  BeamPatternGrid grid;
  for (double az = az_min; az <= az_max + 1e-9; az += step_deg)
    grid.azimuth_deg.push_back(az);
  for (double el = el_min; el <= el_max + 1e-9; el += step_deg)
    grid.elevation_deg.push_back(el);
  grid.db.resize(static_cast<int>(grid.elevation_deg.size()),
                 static_cast<int>(grid.azimuth_deg.size()));
  for (int i = 0; i < grid.db.rows(); ++i)
    for (int j = 0; j < grid.db.cols(); ++j)
      grid.db(i, j) = to_db_floored(
          beam_gain(geometry, w,
                    Doa{grid.azimuth_deg[j], grid.elevation_deg[i]},
                    efficiency));
  return grid;
}

/// CSV layout: optional '#' comment lines, then a header row of azimuth
/// values (first cell "el\az"), then one row per elevation with the
/// elevation value in the first column and dB cells after it.
inline std::string beam_pattern_csv(const BeamPatternGrid& grid,
                                    const std::string& comment_header = "") {
  std::string out = comment_header;
  out += "el\\az";
  for (double az : grid.azimuth_deg) out += "," + fmt_g17(az);
  out += "\n";
  for (int i = 0; i < grid.db.rows(); ++i) {
    out += fmt_g17(grid.elevation_deg[i]);
    for (int j = 0; j < grid.db.cols(); ++j) out += "," + fmt_g17(grid.db(i, j));
    out += "\n";
  }
  return out;
}

}  // namespace ngsobf

#endif  // NGSOBF_BEAMFORM_HPP
