// SPDX-License-Identifier: Apache-2.0
//
// Classical beamformer tests: covariance, MRC/ZF/MVDR/SMI, SINR metrics and
// beam patterns, including the hand-derived 2x2 MVDR case and the random
// search optimality oracle.

#include "ngsobf/beamform.hpp"

#include <cmath>
#include <complex>

#include <gtest/gtest.h>

namespace ngsobf {
namespace {

using Complex = std::complex<double>;

TEST(SampleCovariance, ConstantColumns) {
  SnapshotMatrix y;
  Eigen::VectorXcd c(2);
  c << Complex(1.0, 2.0), Complex(-0.5, 0.25);
  y.data.resize(2, 5);
  for (int l = 0; l < 5; ++l) y.data.col(l) = c;
  const Eigen::MatrixXcd r = sample_covariance(y);
  const Eigen::MatrixXcd expect = c * c.adjoint();
  EXPECT_LT((r - expect).norm(), 1e-14);
}

TEST(SampleCovariance, SingleBasisSnapshot) {
  SnapshotMatrix y;
  y.data = Eigen::MatrixXcd::Zero(3, 1);
  y.data(0, 0) = 1.0;
  const Eigen::MatrixXcd r = sample_covariance(y);
  EXPECT_DOUBLE_EQ(r(0, 0).real(), 1.0);
  EXPECT_DOUBLE_EQ(r.norm(), 1.0);
}

TEST(SampleCovariance, HermitianByConstruction) {
  Rng rng(5);
  SnapshotMatrix y;
  y.data.resize(6, 40);
  for (int i = 0; i < 6; ++i)
    for (int l = 0; l < 40; ++l)
      y.data(i, l) = Complex(rng.gaussian(), rng.gaussian());
  const Eigen::MatrixXcd r = sample_covariance(y);
  EXPECT_LT((r - r.adjoint().eval()).norm(), 1e-10 * r.norm());
}

TEST(Mrc, NormalizesChannel) {
  Eigen::VectorXcd h(2);
  h << 3.0, 4.0;
  const BeamWeights w = mrc(h);
  EXPECT_NEAR(w.weights[0].real(), 0.6, 1e-15);
  EXPECT_NEAR(w.weights[1].real(), 0.8, 1e-15);
  EXPECT_NEAR(w.weights.norm(), 1.0, 1e-14);
  EXPECT_EQ(w.method, BeamformerMethod::kMrc);
  EXPECT_THROW(mrc(Eigen::VectorXcd::Zero(2)), std::invalid_argument);
}

TEST(Mrc, UnitChannelIsIdentity) {
  const ArrayGeometry g = ArrayGeometry::half_wavelength(4, 4, 11.75e9);
  const Eigen::VectorXcd v = steering_vector(g, {12.0, -7.0});
  EXPECT_LT((mrc(v).weights - v).norm(), 1e-14);
}

TEST(Zf, NoInterferersEqualsMrc) {
  Eigen::VectorXcd h(3);
  h << Complex(1, 1), Complex(0, -2), 0.5;
  const BeamWeights w = zf(h, Eigen::MatrixXcd(3, 0));
  EXPECT_LT((w.weights - mrc(h).weights).norm(), 1e-15);
  EXPECT_EQ(w.method, BeamformerMethod::kZf);
}

TEST(Zf, OrthogonalInterferenceIsPassThrough) {
  Eigen::VectorXcd h(3);
  h << 2.0, 0.0, 0.0;
  Eigen::MatrixXcd hi(3, 1);
  hi << 0.0, 1.0, 0.0;
  const BeamWeights w = zf(h, hi);
  EXPECT_NEAR(w.weights[0].real(), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(w.weights[1]), 0.0, 1e-14);
}

TEST(Zf, NullDepthOnRandomScenario) {
  const ScenarioConfig config;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Scenario s = sample_scenario(config, seed);
    const Eigen::MatrixXcd h_int = s.interference_matrix();
    const BeamWeights w = zf(s.desired.coefficients, h_int);
    EXPECT_NEAR(w.weights.norm(), 1.0, 1e-12);
    for (int k = 0; k < h_int.cols(); ++k) {
      const double num = std::norm(Complex(w.weights.dot(h_int.col(k))));
      const double den = h_int.col(k).squaredNorm();
      EXPECT_LT(num / den, 1e-20) << "seed " << seed << " interferer " << k;
    }
  }
}

TEST(Zf, DegenerateGeometryThrows) {
  Eigen::VectorXcd h(3);
  h << Complex(1, 0.5), -1.0, Complex(0, 2);
  Eigen::MatrixXcd hi(3, 2);
  hi.col(0) = h * Complex(0.3, -0.7);  // desired lies in the span
  hi.col(1) = h * 2.0;
  EXPECT_THROW(zf(h, hi), std::runtime_error);
}

TEST(Mvdr, WhiteNoiseGivesMatchedFilter) {
  const ArrayGeometry g = ArrayGeometry::half_wavelength(3, 3, 11.75e9);
  const Eigen::VectorXcd v = steering_vector(g, {25.0, 10.0});
  const Eigen::MatrixXcd r = 2.0 * Eigen::MatrixXcd::Identity(9, 9);
  const BeamWeights w = mvdr(r, v);
  // R = sigma^2 I: w = v / ||v||^2 = v.
  EXPECT_LT((w.weights - v).norm(), 1e-12);
  EXPECT_NEAR(std::abs(Complex(w.weights.dot(v)) - 1.0), 0.0, 1e-10);
}

TEST(Mvdr, HandComputedTwoElementCase) {
  // h_d = e1, one interferer on e2, sigma_n^2 = 1:
  // R = diag(2, 2), w proportional to e1, SINR(w) = 1.
  Eigen::VectorXcd h_d(2), h_i(2);
  h_d << 1.0, 0.0;
  h_i << 0.0, 1.0;
  Eigen::MatrixXcd r = h_d * h_d.adjoint() + h_i * h_i.adjoint() +
                       Eigen::MatrixXcd::Identity(2, 2);
  const BeamWeights w = mvdr(r, h_d);
  EXPECT_NEAR(std::abs(w.weights[1]), 0.0, 1e-14);
  Eigen::MatrixXcd h_int(2, 1);
  h_int.col(0) = h_i;
  EXPECT_NEAR(sinr(w, h_d, h_int, 1.0), 1.0, 1e-12);
}

TEST(Mvdr, ConstraintHolds) {
  const ScenarioConfig config;
  const Scenario s = sample_scenario(config, 77);
  const Eigen::MatrixXcd h_int = s.interference_matrix();
  const Eigen::MatrixXcd r =
      s.desired.coefficients * s.desired.coefficients.adjoint() +
      h_int * h_int.adjoint() +
      s.noise_power_w * Eigen::MatrixXcd::Identity(100, 100);
  const Eigen::VectorXcd v_d = s.desired_steering();
  const BeamWeights w = mvdr(r, v_d);
  EXPECT_NEAR(std::abs(Complex(w.weights.dot(v_d)) - 1.0), 0.0, 1e-10);
}

TEST(Mvdr, SingularCovarianceThrowsUnlessLoaded) {
  Eigen::MatrixXcd r = Eigen::MatrixXcd::Zero(3, 3);
  r(0, 0) = 1.0;  // rank one
  Eigen::VectorXcd v(3);
  v << 1.0, 1.0, 1.0;
  EXPECT_THROW(mvdr(r, v), std::runtime_error);
  const BeamWeights w =
      mvdr(r, v, BeamformerMethod::kMvdr, /*diagonal_loading=*/1e-3);
  EXPECT_NEAR(std::abs(Complex(w.weights.dot(v)) - 1.0), 0.0, 1e-10);
}

TEST(Mvdr, OptimalityAgainstRandomSearch) {
  const ScenarioConfig config;
  Rng rng(31337);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Scenario s = sample_scenario(config, seed);
    const Eigen::MatrixXcd h_int = s.interference_matrix();
    const int m = s.geometry.element_count();
    const Eigen::MatrixXcd r_true =
        s.desired.coefficients * s.desired.coefficients.adjoint() +
        h_int * h_int.adjoint() +
        s.noise_power_w * Eigen::MatrixXcd::Identity(m, m);
    const BeamWeights best = mvdr(r_true, s.desired_steering());
    const double best_sinr =
        sinr(best, s.desired.coefficients, h_int, s.noise_power_w);
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::VectorXcd w(m);
      for (int i = 0; i < m; ++i) w[i] = Complex(rng.gaussian(), rng.gaussian());
      w.normalize();
      const double cand = sinr({w, BeamformerMethod::kInitial},
                               s.desired.coefficients, h_int, s.noise_power_w);
      EXPECT_LE(cand, best_sinr + 1e-9);
    }
  }
}

TEST(Sinr, HandCases) {
  Eigen::VectorXcd h_d(2), w1(2), w2(2);
  Eigen::MatrixXcd h_i(2, 1);
  h_d << 1.0, 0.0;
  h_i << 0.0, 1.0;
  w1 << 1.0, 0.0;
  EXPECT_DOUBLE_EQ(sinr({w1, BeamformerMethod::kInitial}, h_d, h_i, 1.0), 1.0);
  const double s = 1.0 / std::sqrt(2.0);
  w2 << s, s;
  EXPECT_NEAR(sinr({w2, BeamformerMethod::kInitial}, h_d, h_i, 0.5), 0.5,
              1e-14);
}

TEST(Sinr, ScaleInvariance) {
  const ScenarioConfig config;
  const Scenario s = sample_scenario(config, 4);
  const Eigen::MatrixXcd h_int = s.interference_matrix();
  Rng rng(8);
  Eigen::VectorXcd w(100);
  for (int i = 0; i < 100; ++i) w[i] = Complex(rng.gaussian(), rng.gaussian());
  const double base = sinr({w, BeamformerMethod::kInitial},
                           s.desired.coefficients, h_int, s.noise_power_w);
  const double scaled =
      sinr({w * Complex(3.0, 0.0), BeamformerMethod::kInitial},
           s.desired.coefficients, h_int, s.noise_power_w);
  EXPECT_NEAR(scaled / base, 1.0, 1e-12);
}

TEST(Asinr, EqualsSinrUnderConstantChannels) {
  const ScenarioConfig config;
  const Scenario s = sample_scenario(config, 10);
  const BeamWeights w = mrc(s.desired.coefficients);
  const double single =
      sinr(w, s.desired.coefficients, s.interference_matrix(),
           s.noise_power_w);
  EXPECT_DOUBLE_EQ(asinr(w, s, 1), single);
  EXPECT_NEAR(asinr(w, s, 200), single, 1e-12 * single);
}

TEST(BeamGain, BoresightArrayGain) {
  const ArrayGeometry g = ArrayGeometry::half_wavelength(10, 10, 11.75e9);
  const Eigen::VectorXcd v = steering_vector(g, {0.0, 0.0});
  const BeamWeights w{v, BeamformerMethod::kInitial};
  const double gain = beam_gain(g, w, {0.0, 0.0}, 0.99);
  EXPECT_NEAR(gain, 99.0, 1e-9);
  EXPECT_NEAR(10.0 * std::log10(gain), 19.9563519459755, 1e-9);
  EXPECT_DOUBLE_EQ(beam_gain(g, w, {0.0, 0.0}, 0.0), 0.0);
}

TEST(BeamGain, FirstArrayFactorNullIsDeep) {
  // ULA factor along azimuth: first null at sin(az) = 2/M_x.
  const ArrayGeometry g = ArrayGeometry::half_wavelength(10, 10, 11.75e9);
  const Eigen::VectorXcd v = steering_vector(g, {0.0, 0.0});
  const BeamWeights w{v, BeamformerMethod::kInitial};
  const double null_az = std::asin(0.2) * 180.0 / std::numbers::pi;
  const double peak = beam_gain(g, w, {0.0, 0.0}, 0.99);
  const double null = beam_gain(g, w, {null_az, 0.0}, 0.99);
  EXPECT_LT(10.0 * std::log10(null / peak), -40.0);
}

TEST(BeamPattern, SingleCellBoresight) {
  const ArrayGeometry g = ArrayGeometry::half_wavelength(10, 10, 11.75e9);
  const BeamWeights w{steering_vector(g, {0.0, 0.0}),
                      BeamformerMethod::kInitial};
  const BeamPatternGrid grid =
      beam_pattern_grid(g, w, 0.0, 0.0, 0.0, 0.0, 1.0, 0.99);
  ASSERT_EQ(grid.db.rows(), 1);
  ASSERT_EQ(grid.db.cols(), 1);
  EXPECT_NEAR(grid.db(0, 0), 10.0 * std::log10(0.99 * 100.0), 1e-9);
}

TEST(BeamPattern, PeakAtDesiredDoaForMatchedWeights) {
  const ArrayGeometry g = ArrayGeometry::half_wavelength(10, 10, 11.75e9);
  const Doa pointing{10.0, -5.0};
  const BeamWeights w{steering_vector(g, pointing),
                      BeamformerMethod::kInitial};
  const BeamPatternGrid grid =
      beam_pattern_grid(g, w, -90.0, 90.0, -90.0, 90.0, 5.0, 0.99);
  int bi = 0, bj = 0;
  grid.db.maxCoeff(&bi, &bj);
  EXPECT_DOUBLE_EQ(grid.azimuth_deg[bj], 10.0);
  EXPECT_DOUBLE_EQ(grid.elevation_deg[bi], -5.0);
}

TEST(BeamPattern, ZfNullsVisibleOnGrid) {
  // Interferers on integer grid DOAs so the 1-degree grid samples them
  // exactly.
  const ArrayGeometry g = ArrayGeometry::half_wavelength(10, 10, 11.75e9);
  const Eigen::VectorXcd h_d = steering_vector(g, {0.0, 0.0});
  const std::vector<Doa> doas{{10.0, 5.0}, {-20.0, 15.0}, {30.0, -10.0}};
  Eigen::MatrixXcd h_int(100, 3);
  for (int k = 0; k < 3; ++k) h_int.col(k) = steering_vector(g, doas[k]);
  const BeamWeights w = zf(h_d, h_int);
  const BeamPatternGrid grid =
      beam_pattern_grid(g, w, -40.0, 40.0, -40.0, 40.0, 1.0, 0.99);
  const double peak = grid.db.maxCoeff();
  for (const Doa& doa : doas) {
    const int j = static_cast<int>(doa.azimuth_deg + 40.0);
    const int i = static_cast<int>(doa.elevation_deg + 40.0);
    EXPECT_LE(grid.db(i, j), peak - 60.0);
  }
}

TEST(BeamPattern, CsvLayout) {
  BeamPatternGrid grid;
  grid.azimuth_deg = {-1.0, 0.0};
  grid.elevation_deg = {2.0};
  grid.db.resize(1, 2);
  grid.db << -3.5, 7.25;
  const std::string csv = beam_pattern_csv(grid, "# seed: 1\n");
  EXPECT_EQ(csv, "# seed: 1\nel\\az,-1,0\n2,-3.5,7.25\n");
}

TEST(SmiBehavior, SmallSampleDegradesLargeSampleConverges) {
  // Compact version of the convergence story at M = 16 for speed; the
  // acceptance suite runs the reference-scale variant.
  ScenarioConfig config;
  config.array_mx = 4;
  config.array_my = 4;
  config.interferer_count = 2;
  int small_worse = 0;
  const int trials = 5;
  for (std::uint64_t seed = 1; seed <= trials; ++seed) {
    const Scenario s = sample_scenario(config, seed);
    const Eigen::MatrixXcd h_int = s.interference_matrix();
    const Eigen::MatrixXcd r_true =
        s.desired.coefficients * s.desired.coefficients.adjoint() +
        h_int * h_int.adjoint() +
        s.noise_power_w * Eigen::MatrixXcd::Identity(16, 16);
    const Eigen::VectorXcd v_d = s.desired_steering();
    const double opt = sinr(mvdr(r_true, v_d), s.desired.coefficients, h_int,
                            s.noise_power_w);
    const SnapshotMatrix few = synthesize_snapshots(s, 32, seed);
    const SnapshotMatrix many = synthesize_snapshots(s, 20000, seed);
    const double smi_few = sinr(smi(few, v_d), s.desired.coefficients, h_int,
                                s.noise_power_w);
    const double smi_many = sinr(smi(many, v_d), s.desired.coefficients,
                                 h_int, s.noise_power_w);
    EXPECT_LE(smi_few, opt + 1e-9);
    EXPECT_LE(smi_many, opt + 1e-9);
    // 20k snapshots at M=16 sit well within 0.5 dB of the optimum.
    EXPECT_LT(10.0 * std::log10(opt) - 10.0 * std::log10(smi_many), 0.5);
    if (smi_few < smi_many) ++small_worse;
  }
  EXPECT_GE(small_worse, trials - 1);
}

}  // namespace
}  // namespace ngsobf
