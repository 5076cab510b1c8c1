// SPDX-License-Identifier: Apache-2.0
//
// ngso-bf: user-terminal receive beamforming for NGSO co-frequency
// interference mitigation.
//
// Scenario synthesis: UPA geometry, steering vectors, link budgets and the
// per-coherence-interval channel realization used by every beamformer.

#ifndef NGSOBF_SCENARIO_HPP
#define NGSOBF_SCENARIO_HPP

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ngsobf/io.hpp"
#include "ngsobf/rng.hpp"

namespace ngsobf {

inline constexpr double kBoltzmann = 1.380649e-23;  // J/K
inline constexpr double kSpeedOfLight = 299792458.0;  // m/s
inline constexpr double kDefaultUtEfficiency = 0.99;

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

/// Direction of arrival: azimuth / elevation pair in degrees, both in
/// [-90, 90].
struct Doa {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
};

inline void validate_doa(const Doa& doa) {
  if (std::abs(doa.azimuth_deg) > 90.0 || std::abs(doa.elevation_deg) > 90.0)
    throw std::invalid_argument("DOA angles must lie in [-90, 90] degrees");
}

/// Uniform planar array in the xy-plane. Element (m_x, m_y) is flattened to
/// index m = m_x * m_y_count + m_y; this order is fixed and every consumer of
/// length-M vectors relies on it.
struct ArrayGeometry {
  int m_x_count = 1;
  int m_y_count = 1;
  double spacing_m = 0.0;     // inter-element spacing a
  double wavelength_m = 0.0;  // carrier wavelength

  int element_count() const { return m_x_count * m_y_count; }

  /// Standard half-wavelength grid at the given carrier.
  static ArrayGeometry half_wavelength(int mx, int my, double carrier_hz) {
    const double lambda = kSpeedOfLight / carrier_hz;
    return {mx, my, lambda / 2.0, lambda};
  }
};

inline void validate_geometry(const ArrayGeometry& g) {
  if (g.m_x_count < 1 || g.m_y_count < 1)
    throw std::invalid_argument("array must have at least one element");
  if (!(g.spacing_m > 0.0) || !(g.wavelength_m > 0.0))
    throw std::invalid_argument("spacing and wavelength must be positive");
}

/// Unit-norm array response toward a DOA. Element (m_x, m_y) carries phase
/// (2*pi/lambda) * a * (m_x*sin(az)*cos(el) + m_y*sin(el)); the 1/sqrt(M)
/// prefactor makes the Euclidean norm exactly one.
inline Eigen::VectorXcd steering_vector(const ArrayGeometry& geometry,
                                        const Doa& doa) {
  validate_geometry(geometry);
  validate_doa(doa);
  const double az = deg_to_rad(doa.azimuth_deg);
  const double el = deg_to_rad(doa.elevation_deg);
  const double wave = 2.0 * std::numbers::pi / geometry.wavelength_m;
  const double kx = wave * geometry.spacing_m * std::sin(az) * std::cos(el);
  const double ky = wave * geometry.spacing_m * std::sin(el);
  const int m = geometry.element_count();
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));
  Eigen::VectorXcd v(m);
  for (int mx = 0; mx < geometry.m_x_count; ++mx) {
    for (int my = 0; my < geometry.m_y_count; ++my) {
      const double phase = kx * mx + ky * my;
      v[mx * geometry.m_y_count + my] =
          scale * std::complex<double>(std::cos(phase), std::sin(phase));
    }
  }
  return v;
}

/// One satellite downlink as seen by the terminal.
struct SatelliteLink {
  double eirp_dbw = 0.0;
  double slant_range_m = 0.0;
  double carrier_hz = 0.0;
  double bandwidth_hz = 0.0;
  Doa doa;
};

/// Amplitude gain chi = sqrt(P * L * G_rx) with P the EIRP in Watts and
/// L = (lambda / (4*pi*r))^2 the inverse free-space path loss.
inline double link_budget_gain(const SatelliteLink& link,
                               double rx_gain_linear) {
  if (!(link.slant_range_m > 0.0))
    throw std::invalid_argument("slant range must be positive");
  if (!(link.carrier_hz > 0.0))
    throw std::invalid_argument("carrier frequency must be positive");
  if (rx_gain_linear < 0.0)
    throw std::invalid_argument("receive gain must be non-negative");
  const double p_watts = std::pow(10.0, link.eirp_dbw / 10.0);
  const double lambda = kSpeedOfLight / link.carrier_hz;
  const double path = lambda / (4.0 * std::numbers::pi * link.slant_range_m);
  return std::sqrt(p_watts * path * path * rx_gain_linear);
}

/// Thermal noise power kappa * T * BW in Watts.
inline double noise_power(double temperature_k, double bandwidth_hz) {
  if (temperature_k < 0.0 || bandwidth_hz < 0.0)
    throw std::invalid_argument("temperature and bandwidth must be >= 0");
  return kBoltzmann * temperature_k * bandwidth_hz;
}

/// Effective channel h = chi * v(doa). The scalar chi is stored alongside the
/// coefficients so the unit steering direction is always reconstructible.
struct ChannelVector {
  Eigen::VectorXcd coefficients;
  double gain_scalar = 0.0;  // chi
};

inline ChannelVector make_channel(const ArrayGeometry& geometry,
                                  const SatelliteLink& link,
                                  double rx_gain_linear) {
  const double chi = link_budget_gain(link, rx_gain_linear);
  ChannelVector h;
  h.gain_scalar = chi;
  h.coefficients = chi * steering_vector(geometry, link.doa);
  return h;
}

/// Everything fixed over one coherence interval.
struct Scenario {
  ArrayGeometry geometry;
  SatelliteLink desired_link;
  ChannelVector desired;
  std::vector<SatelliteLink> interferer_links;
  std::vector<ChannelVector> interferers;
  double noise_power_w = 0.0;
  double ut_efficiency = kDefaultUtEfficiency;
  std::uint64_t seed = 0;

  /// Interference channel matrix H_i, one column per interferer (M x K).
  Eigen::MatrixXcd interference_matrix() const {
    const int m = geometry.element_count();
    Eigen::MatrixXcd h(m, static_cast<int>(interferers.size()));
    for (int k = 0; k < h.cols(); ++k) h.col(k) = interferers[k].coefficients;
    return h;
  }

  /// Unit steering vector toward the desired satellite (also the initial
  /// beamformer w_in).
  Eigen::VectorXcd desired_steering() const {
    return steering_vector(geometry, desired_link.doa);
  }
};

/// Scenario distribution parameters. Defaults reproduce the reference
/// setup: 10x10 half-wavelength UPA at 11.75 GHz, one 45 dBW desired
/// satellite at 1000 km boresight, three 40 dBW interferers uniformly drawn
/// from +-40 degrees and 500-600 km, 50 MHz bandwidth, 230 K terminal.
struct ScenarioConfig {
  int array_mx = 10;
  int array_my = 10;
  double desired_eirp_dbw = 45.0;
  double desired_range_km = 1000.0;
  Doa desired_doa{0.0, 0.0};
  int interferer_count = 3;
  double interferer_eirp_dbw = 40.0;
  double interferer_range_km_min = 500.0;
  double interferer_range_km_max = 600.0;
  double interferer_doa_abs_max_deg = 40.0;
  double carrier_ghz = 11.75;
  double bandwidth_mhz = 50.0;
  double noise_temp_k = 230.0;
  double csi_error_variance = 0.15;
  std::uint64_t seed = 1;

  ArrayGeometry geometry() const {
    return ArrayGeometry::half_wavelength(array_mx, array_my,
                                          carrier_ghz * 1e9);
  }
};

inline void validate_config(const ScenarioConfig& c) {
  if (c.array_mx < 1 || c.array_my < 1)
    throw std::invalid_argument("array.mx and array.my must be >= 1");
  if (c.interferer_count < 0)
    throw std::invalid_argument("interferers.count must be >= 0");
  if (c.interferer_count >= c.array_mx * c.array_my)
    throw std::invalid_argument("interferer count must be < element count");
  if (!(c.desired_range_km > 0.0) || !(c.interferer_range_km_min > 0.0))
    throw std::invalid_argument("ranges must be positive");
  if (c.interferer_range_km_min > c.interferer_range_km_max)
    throw std::invalid_argument("empty interferer range interval");
  if (c.interferer_doa_abs_max_deg < 0.0 ||
      c.interferer_doa_abs_max_deg > 90.0)
    throw std::invalid_argument("interferers.doa_abs_max_deg not in [0, 90]");
  if (!(c.carrier_ghz > 0.0) || !(c.bandwidth_mhz > 0.0))
    throw std::invalid_argument("carrier and bandwidth must be positive");
  if (!(c.noise_temp_k > 0.0))
    throw std::invalid_argument("noise temperature must be positive");
  if (c.csi_error_variance < 0.0)
    throw std::invalid_argument("csi.error_variance must be >= 0");
  validate_doa(c.desired_doa);
}

namespace detail {

inline void require_known_keys(const nlohmann::json& j,
                               std::initializer_list<const char*> known,
                               const std::string& scope) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || (it.key() == k);
    if (!ok)
      throw std::invalid_argument("unknown config key: " + scope + it.key());
  }
}

}  // namespace detail

inline nlohmann::json to_json(const ScenarioConfig& c) {
  return nlohmann::json{
      {"array", {{"mx", c.array_mx}, {"my", c.array_my}}},
      {"desired",
       {{"eirp_dbw", c.desired_eirp_dbw},
        {"range_km", c.desired_range_km},
        {"doa_az", c.desired_doa.azimuth_deg},
        {"doa_el", c.desired_doa.elevation_deg}}},
      {"interferers",
       {{"count", c.interferer_count},
        {"eirp_dbw", c.interferer_eirp_dbw},
        {"range_km_min", c.interferer_range_km_min},
        {"range_km_max", c.interferer_range_km_max},
        {"doa_abs_max_deg", c.interferer_doa_abs_max_deg}}},
      {"carrier_ghz", c.carrier_ghz},
      {"bandwidth_mhz", c.bandwidth_mhz},
      {"noise_temp_k", c.noise_temp_k},
      {"csi", {{"error_variance", c.csi_error_variance}}},
      {"seed", c.seed}};
}

/// Parses a config, starting from defaults; unknown keys are rejected.
inline ScenarioConfig scenario_config_from_json(const nlohmann::json& j) {
  ScenarioConfig c;
  detail::require_known_keys(j,
                             {"array", "desired", "interferers", "carrier_ghz",
                              "bandwidth_mhz", "noise_temp_k", "csi", "seed"},
                             "");
  if (j.contains("array")) {
    const auto& a = j.at("array");
    detail::require_known_keys(a, {"mx", "my"}, "array.");
    c.array_mx = a.value("mx", c.array_mx);
    c.array_my = a.value("my", c.array_my);
  }
  if (j.contains("desired")) {
    const auto& d = j.at("desired");
    detail::require_known_keys(d, {"eirp_dbw", "range_km", "doa_az", "doa_el"},
                               "desired.");
    c.desired_eirp_dbw = d.value("eirp_dbw", c.desired_eirp_dbw);
    c.desired_range_km = d.value("range_km", c.desired_range_km);
    c.desired_doa.azimuth_deg = d.value("doa_az", c.desired_doa.azimuth_deg);
    c.desired_doa.elevation_deg =
        d.value("doa_el", c.desired_doa.elevation_deg);
  }
  if (j.contains("interferers")) {
    const auto& i = j.at("interferers");
    detail::require_known_keys(i,
                               {"count", "eirp_dbw", "range_km_min",
                                "range_km_max", "doa_abs_max_deg"},
                               "interferers.");
    c.interferer_count = i.value("count", c.interferer_count);
    c.interferer_eirp_dbw = i.value("eirp_dbw", c.interferer_eirp_dbw);
    c.interferer_range_km_min =
        i.value("range_km_min", c.interferer_range_km_min);
    c.interferer_range_km_max =
        i.value("range_km_max", c.interferer_range_km_max);
    c.interferer_doa_abs_max_deg =
        i.value("doa_abs_max_deg", c.interferer_doa_abs_max_deg);
  }
  c.carrier_ghz = j.value("carrier_ghz", c.carrier_ghz);
  c.bandwidth_mhz = j.value("bandwidth_mhz", c.bandwidth_mhz);
  c.noise_temp_k = j.value("noise_temp_k", c.noise_temp_k);
  if (j.contains("csi")) {
    const auto& e = j.at("csi");
    detail::require_known_keys(e, {"error_variance"}, "csi.");
    c.csi_error_variance = e.value("error_variance", c.csi_error_variance);
  }
  c.seed = j.value("seed", c.seed);
  validate_config(c);
  return c;
}

inline ScenarioConfig load_scenario_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config parse error in " + path + ": " +
                                e.what());
  }
  return scenario_config_from_json(j);
}

namespace detail {

/// Array receive gain toward `doa` with the terminal pointed by unit weights
/// `pointing`: eta * M * |pointing^H v(doa)|^2.
inline double pointing_gain(const ArrayGeometry& geometry,
                            const Eigen::VectorXcd& pointing, const Doa& doa,
                            double efficiency) {
  const std::complex<double> corr = pointing.adjoint() * steering_vector(geometry, doa);
  return efficiency * geometry.element_count() * std::norm(corr);
}

}  // namespace detail

/// Draws one scenario. Deterministic for a given (config, seed): interferer
/// azimuth, elevation and range are drawn in that order per interferer from
/// the seed_stream::kScenario sub-stream. Receive gains embedded in the
/// channel gains use the initial pointing v_d.
inline Scenario sample_scenario(const ScenarioConfig& config,
                                std::uint64_t seed) {
  validate_config(config);
  Scenario s;
  s.seed = seed;
  s.geometry = config.geometry();
  s.ut_efficiency = kDefaultUtEfficiency;
  s.noise_power_w =
      noise_power(config.noise_temp_k, config.bandwidth_mhz * 1e6);

  const double carrier_hz = config.carrier_ghz * 1e9;
  const double bandwidth_hz = config.bandwidth_mhz * 1e6;
  s.desired_link = {config.desired_eirp_dbw, config.desired_range_km * 1e3,
                    carrier_hz, bandwidth_hz, config.desired_doa};

  const Eigen::VectorXcd v_d = steering_vector(s.geometry, config.desired_doa);
  const double gain_d = detail::pointing_gain(s.geometry, v_d,
                                              config.desired_doa,
                                              s.ut_efficiency);
  s.desired = make_channel(s.geometry, s.desired_link, gain_d);

  Rng rng(derive_seed(seed, seed_stream::kScenario));
  const double doa_max = config.interferer_doa_abs_max_deg;
  for (int k = 0; k < config.interferer_count; ++k) {
    Doa doa{rng.uniform(-doa_max, doa_max), rng.uniform(-doa_max, doa_max)};
    const double range_m = rng.uniform(config.interferer_range_km_min,
                                       config.interferer_range_km_max) *
                           1e3;
    SatelliteLink link{config.interferer_eirp_dbw, range_m, carrier_hz,
                       bandwidth_hz, doa};
    const double gain_k =
        detail::pointing_gain(s.geometry, v_d, doa, s.ut_efficiency);
    s.interferer_links.push_back(link);
    s.interferers.push_back(make_channel(s.geometry, link, gain_k));
  }
  return s;
}

/// Imperfect CSI model: the estimation error perturbs the unit steering
/// direction and is rescaled by chi, i.e. h_hat = h + chi * e with e drawn
/// CN(0, error_variance) per entry. With error_variance = 0 the input is
/// returned bit-exactly. Interference channels are never perturbed.
inline Eigen::VectorXcd perturb_csi(const ChannelVector& h,
                                    double error_variance,
                                    std::uint64_t seed) {
  if (error_variance < 0.0)
    throw std::invalid_argument("error variance must be >= 0");
  Rng rng(derive_seed(seed, seed_stream::kCsiError));
  Eigen::VectorXcd out = h.coefficients;
  for (int i = 0; i < out.size(); ++i) {
    const std::complex<double> e = rng.complex_gaussian(error_variance);
    out[i] += h.gain_scalar * e;
  }
  return out;
}

}  // namespace ngsobf

#endif  // NGSOBF_SCENARIO_HPP
