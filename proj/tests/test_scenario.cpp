// SPDX-License-Identifier: Apache-2.0
//
// Scenario module tests: steering vectors, link budgets, noise power,
// seeded scenario sampling and the imperfect-CSI perturbation.

#include "ngsobf/scenario.hpp"

#include <cmath>
#include <complex>
#include <vector>

#include <gtest/gtest.h>

namespace ngsobf {
namespace {

TEST(SteeringVector, BoresightIsUniform) {
  const ArrayGeometry g = ArrayGeometry::half_wavelength(10, 10, 11.75e9);
  const Eigen::VectorXcd v = steering_vector(g, {0.0, 0.0});
  ASSERT_EQ(v.size(), 100);
  for (int i = 0; i < v.size(); ++i) {
    EXPECT_DOUBLE_EQ(v[i].real(), 0.1);
    EXPECT_DOUBLE_EQ(v[i].imag(), 0.0);
  }
}

TEST(SteeringVector, TwoElementEndfire) {
  // M_x=2, M_y=1, a = lambda/2, az=90, el=0: phase = pi * m_x.
  ArrayGeometry g{2, 1, 0.5, 1.0};
  const Eigen::VectorXcd v = steering_vector(g, {90.0, 0.0});
  const double s = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(v[0].real(), s, 1e-12);
  EXPECT_NEAR(v[0].imag(), 0.0, 1e-12);
  EXPECT_NEAR(v[1].real(), -s, 1e-12);
  EXPECT_NEAR(v[1].imag(), 0.0, 1e-12);
}

TEST(SteeringVector, UnitNormForRandomGeometries) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    ArrayGeometry g{1 + static_cast<int>(rng.bits() % 12),
                    1 + static_cast<int>(rng.bits() % 12),
                    rng.uniform(0.005, 0.05), rng.uniform(0.01, 0.05)};
    const Doa doa{rng.uniform(-90.0, 90.0), rng.uniform(-90.0, 90.0)};
    EXPECT_NEAR(steering_vector(g, doa).norm(), 1.0, 1e-12);
  }
}

TEST(SteeringVector, ConjugateSymmetryUnderAzimuthFlip) {
  ArrayGeometry g{8, 1, 0.0127, 0.0255};
  for (double az : {5.0, 17.0, 61.0}) {
    const Eigen::VectorXcd vp = steering_vector(g, {az, 0.0});
    const Eigen::VectorXcd vm = steering_vector(g, {-az, 0.0});
    for (int i = 0; i < vp.size(); ++i) {
      EXPECT_NEAR(vm[i].real(), vp[i].real(), 1e-12);
      EXPECT_NEAR(vm[i].imag(), -vp[i].imag(), 1e-12);
    }
  }
}

TEST(SteeringVector, ElementOrderIsXMajor) {
  // m = m_x * M_y + m_y: with M_y = 3, element (1, 2) sits at index 5.
  ArrayGeometry g{2, 3, 0.5, 1.0};
  const Doa doa{30.0, 40.0};
  const Eigen::VectorXcd v = steering_vector(g, doa);
  const double wave = 2.0 * std::numbers::pi / g.wavelength_m;
  const double phase =
      wave * g.spacing_m *
      (1.0 * std::sin(deg_to_rad(30.0)) * std::cos(deg_to_rad(40.0)) +
       2.0 * std::sin(deg_to_rad(40.0)));
  EXPECT_NEAR(v[5].real(), std::cos(phase) / std::sqrt(6.0), 1e-12);
  EXPECT_NEAR(v[5].imag(), std::sin(phase) / std::sqrt(6.0), 1e-12);
}

TEST(LinkBudget, ReferenceDownlink) {
  // 45 dBW EIRP at 1000 km and 11.75 GHz, unit receive gain.
  const SatelliteLink link{45.0, 1e6, 11.75e9, 50e6, {0.0, 0.0}};
  const double chi = link_budget_gain(link, 1.0);
  EXPECT_NEAR(chi, 3.6105467467489106e-07, 1e-18);
  // Equivalent free-space path loss is 173.85 dB.
  const double l = chi * chi / std::pow(10.0, 4.5);
  EXPECT_NEAR(-10.0 * std::log10(l), 173.84854055403846, 1e-9);
}

TEST(LinkBudget, UnitAtQuarterWavelengthOver4Pi) {
  const double lambda = kSpeedOfLight / 11.75e9;
  const SatelliteLink link{0.0, lambda / (4.0 * std::numbers::pi), 11.75e9,
                           50e6, {0.0, 0.0}};
  EXPECT_NEAR(link_budget_gain(link, 1.0), 1.0, 1e-12);
}

TEST(LinkBudget, ZeroGainAndBadRange) {
  const SatelliteLink link{45.0, 1e6, 11.75e9, 50e6, {0.0, 0.0}};
  EXPECT_DOUBLE_EQ(link_budget_gain(link, 0.0), 0.0);
  SatelliteLink bad = link;
  bad.slant_range_m = 0.0;
  EXPECT_THROW(link_budget_gain(bad, 1.0), std::invalid_argument);
}

TEST(NoisePower, ReferenceTerminal) {
  const double p = noise_power(230.0, 50e6);
  EXPECT_NEAR(p, 1.58774635e-13, 1e-21);
  EXPECT_NEAR(10.0 * std::log10(p), -127.99218876968155, 1e-9);
}

TEST(NoisePower, ZeroBandwidthAndLinearity) {
  EXPECT_DOUBLE_EQ(noise_power(230.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(noise_power(230.0, 2 * 50e6), 2.0 * noise_power(230.0, 50e6));
}

TEST(SampleScenario, DeterministicForSeed) {
  const ScenarioConfig config;
  const Scenario a = sample_scenario(config, 42);
  const Scenario b = sample_scenario(config, 42);
  ASSERT_EQ(a.interferers.size(), b.interferers.size());
  EXPECT_TRUE(a.desired.coefficients == b.desired.coefficients);
  for (std::size_t k = 0; k < a.interferers.size(); ++k) {
    EXPECT_TRUE(a.interferers[k].coefficients == b.interferers[k].coefficients);
    EXPECT_DOUBLE_EQ(a.interferer_links[k].doa.azimuth_deg,
                     b.interferer_links[k].doa.azimuth_deg);
  }
  const Scenario c = sample_scenario(config, 43);
  EXPECT_NE(a.interferer_links[0].doa.azimuth_deg,
            c.interferer_links[0].doa.azimuth_deg);
}

TEST(SampleScenario, NoInterferers) {
  ScenarioConfig config;
  config.interferer_count = 0;
  const Scenario s = sample_scenario(config, 5);
  EXPECT_TRUE(s.interferers.empty());
  EXPECT_EQ(s.interference_matrix().cols(), 0);
}

TEST(SampleScenario, ChannelPowerMatchesGainScalar) {
  const Scenario s = sample_scenario(ScenarioConfig{}, 11);
  EXPECT_NEAR(s.desired.coefficients.squaredNorm(),
              s.desired.gain_scalar * s.desired.gain_scalar,
              1e-12 * s.desired.gain_scalar * s.desired.gain_scalar);
  for (const auto& h : s.interferers)
    EXPECT_NEAR(h.coefficients.squaredNorm(), h.gain_scalar * h.gain_scalar,
                1e-12 * h.gain_scalar * h.gain_scalar + 1e-300);
}

TEST(SampleScenario, NoisePowerInvariant) {
  const ScenarioConfig config;
  const Scenario s = sample_scenario(config, 3);
  EXPECT_DOUBLE_EQ(s.noise_power_w,
                   kBoltzmann * config.noise_temp_k * config.bandwidth_mhz * 1e6);
}

TEST(SampleScenario, RejectsTooManyInterferers) {
  ScenarioConfig config;
  config.array_mx = 2;
  config.array_my = 2;
  config.interferer_count = 4;  // K must stay < M
  EXPECT_THROW(sample_scenario(config, 1), std::invalid_argument);
}

TEST(SampleScenario, RejectsEmptyRangeInterval) {
  ScenarioConfig config;
  config.interferer_range_km_min = 700.0;
  config.interferer_range_km_max = 600.0;
  EXPECT_THROW(sample_scenario(config, 1), std::invalid_argument);
}

// Kolmogorov-Smirnov p-value (asymptotic) for the uniform law on [lo, hi].
double ks_uniform_p_value(std::vector<double> xs, double lo, double hi) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = (xs[i] - lo) / (hi - lo);
    d = std::max(d, std::abs(f - (i + 1) / n));
    d = std::max(d, std::abs(f - i / n));
  }
  const double t = std::sqrt(n) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k)
    p += 2.0 * ((k % 2 == 1) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * t * t);
  return std::clamp(p, 0.0, 1.0);
}

TEST(SampleScenario, InterfererAzimuthsAreUniform) {
  const ScenarioConfig config;
  std::vector<double> az;
  for (int seed = 0; seed < 1000; ++seed) {
    const Scenario s = sample_scenario(config, seed);
    for (const auto& link : s.interferer_links)
      az.push_back(link.doa.azimuth_deg);
  }
  EXPECT_GT(ks_uniform_p_value(az, -40.0, 40.0), 0.01);
}

TEST(PerturbCsi, ZeroVarianceIsExact) {
  const Scenario s = sample_scenario(ScenarioConfig{}, 9);
  const Eigen::VectorXcd h = perturb_csi(s.desired, 0.0, 123);
  EXPECT_TRUE(h == s.desired.coefficients);
}

TEST(PerturbCsi, SeededAndReproducible) {
  const Scenario s = sample_scenario(ScenarioConfig{}, 9);
  const Eigen::VectorXcd a = perturb_csi(s.desired, 0.15, 123);
  const Eigen::VectorXcd b = perturb_csi(s.desired, 0.15, 123);
  const Eigen::VectorXcd c = perturb_csi(s.desired, 0.15, 124);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
}

TEST(PerturbCsi, ErrorVarianceMatchesMonteCarlo) {
  // Unit-gain channel: the added error is then exactly the unit-steering
  // perturbation, whose squared norm per entry averages sigma_e^2.
  ChannelVector h;
  h.gain_scalar = 1.0;
  h.coefficients = steering_vector(
      ArrayGeometry::half_wavelength(10, 10, 11.75e9), {0.0, 0.0});
  const double var = 0.15;
  const int m = 100, draws = 10000;
  double acc = 0.0, re_acc = 0.0, im_acc = 0.0;
  for (int d = 0; d < draws; ++d) {
    const Eigen::VectorXcd p = perturb_csi(h, var, 50000 + d);
    const Eigen::VectorXcd e = p - h.coefficients;
    acc += e.squaredNorm() / m;
    re_acc += e.real().squaredNorm() / m;
    im_acc += e.imag().squaredNorm() / m;
  }
  EXPECT_NEAR(acc / draws, var, 0.03 * var);
  // Circular symmetry: each part carries half the variance. 3-sigma bound on
  // the Monte-Carlo mean of chi^2-distributed terms.
  const double sigma_mc = (var / 2) * std::sqrt(2.0 / (m * draws)) * 3.0;
  EXPECT_NEAR(re_acc / draws, var / 2, sigma_mc);
  EXPECT_NEAR(im_acc / draws, var / 2, sigma_mc);
}

TEST(ScenarioConfigJson, DefaultsRoundTrip) {
  const ScenarioConfig def;
  const ScenarioConfig parsed = scenario_config_from_json(to_json(def));
  EXPECT_EQ(parsed.array_mx, 10);
  EXPECT_EQ(parsed.array_my, 10);
  EXPECT_DOUBLE_EQ(parsed.desired_eirp_dbw, 45.0);
  EXPECT_DOUBLE_EQ(parsed.desired_range_km, 1000.0);
  EXPECT_EQ(parsed.interferer_count, 3);
  EXPECT_DOUBLE_EQ(parsed.interferer_eirp_dbw, 40.0);
  EXPECT_DOUBLE_EQ(parsed.interferer_range_km_min, 500.0);
  EXPECT_DOUBLE_EQ(parsed.interferer_range_km_max, 600.0);
  EXPECT_DOUBLE_EQ(parsed.interferer_doa_abs_max_deg, 40.0);
  EXPECT_DOUBLE_EQ(parsed.carrier_ghz, 11.75);
  EXPECT_DOUBLE_EQ(parsed.bandwidth_mhz, 50.0);
  EXPECT_DOUBLE_EQ(parsed.noise_temp_k, 230.0);
  EXPECT_DOUBLE_EQ(parsed.csi_error_variance, 0.15);
}

TEST(ScenarioConfigJson, PartialOverridesAndUnknownKeys) {
  const auto j = nlohmann::json::parse(R"({"array": {"mx": 4, "my": 5}})");
  const ScenarioConfig c = scenario_config_from_json(j);
  EXPECT_EQ(c.array_mx, 4);
  EXPECT_EQ(c.array_my, 5);
  EXPECT_EQ(c.interferer_count, 3);

  const auto bad = nlohmann::json::parse(R"({"arrray": {"mx": 4}})");
  EXPECT_THROW(scenario_config_from_json(bad), std::invalid_argument);
}

TEST(ScenarioConfigJson, HalfWavelengthSpacing) {
  const ScenarioConfig c;
  const ArrayGeometry g = c.geometry();
  EXPECT_DOUBLE_EQ(g.wavelength_m, kSpeedOfLight / 11.75e9);
  EXPECT_DOUBLE_EQ(g.spacing_m, g.wavelength_m / 2.0);
}

}  // namespace
}  // namespace ngsobf
