// SPDX-License-Identifier: Apache-2.0
//
// ngso-bf: user-terminal receive beamforming for NGSO co-frequency
// interference mitigation.
//
// Dataset construction, the self-supervised negative-SINR loss, the
// adaptive-moment optimizer, the training loop and evaluation against the
// classical baselines.

#ifndef NGSOBF_TRAINING_HPP
#define NGSOBF_TRAINING_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ngsobf/autodiff.hpp"
#include "ngsobf/beamform.hpp"
#include "ngsobf/io.hpp"
#include "ngsobf/mamba.hpp"
#include "ngsobf/parallel.hpp"
#include "ngsobf/rng.hpp"
#include "ngsobf/scenario.hpp"
#include "ngsobf/signals.hpp"

namespace ngsobf {

enum class CsiMode { kPerfect, kImperfect };

inline std::string to_string(CsiMode m) {
  return m == CsiMode::kPerfect ? "perfect" : "imperfect";
}

inline CsiMode csi_mode_from_string(const std::string& s) {
  if (s == "perfect") return CsiMode::kPerfect;
  if (s == "imperfect") return CsiMode::kImperfect;
  throw std::invalid_argument("csi mode must be 'perfect' or 'imperfect'");
}

/// One training/evaluation sample. The stored channels are exactly the ones
/// the snapshots were synthesized from; they feed the loss and the classical
/// baselines, never the network input. est_h_d is present only in
/// imperfect-CSI mode.
struct DatasetSample {
  SnapshotMatrix snapshots;
  Eigen::VectorXcd true_h_d;
  Eigen::MatrixXcd true_h_int;
  std::optional<Eigen::VectorXcd> est_h_d;
  double noise_w = 0.0;
  std::uint64_t seed = 0;
  Doa desired_doa;
  std::vector<Doa> interferer_doas;
};

/// Channel handed to the CSI-consuming baselines: the perturbed estimate in
/// imperfect mode, the true channel otherwise.
inline const Eigen::VectorXcd& baseline_channel(const DatasetSample& s) {
  return s.est_h_d ? *s.est_h_d : s.true_h_d;
}

/// Initial pointing w_in = v_d (the desired steering direction is assumed
/// known).
inline BeamWeights initial_weights(const DatasetSample& s) {
  const double n = s.true_h_d.norm();
  if (!(n > 0.0))
    throw std::invalid_argument("sample has a zero desired channel");
  return {s.true_h_d / n, BeamformerMethod::kInitial};
}

/// Builds n independent samples. Sample i uses the sub-seed
/// derive_seed(master_seed, i) for its scenario, snapshots and CSI error, so
/// datasets are pure functions of (config, n, master_seed) and can be
/// regenerated from the manifest seeds alone.
inline std::vector<DatasetSample> build_dataset(const ScenarioConfig& config,
                                                int n_samples,
                                                std::uint64_t master_seed,
                                                CsiMode csi_mode,
                                                int snapshots) {
  if (n_samples < 1) throw std::invalid_argument("dataset needs n >= 1");
  std::vector<DatasetSample> out;
  out.reserve(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    const std::uint64_t seed = derive_seed(master_seed, i);
    const Scenario scenario = sample_scenario(config, seed);
    DatasetSample s;
    s.seed = seed;
    s.snapshots = synthesize_snapshots(scenario, snapshots, seed);
    s.true_h_d = scenario.desired.coefficients;
    s.true_h_int = scenario.interference_matrix();
    s.noise_w = scenario.noise_power_w;
    s.desired_doa = scenario.desired_link.doa;
    for (const auto& link : scenario.interferer_links)
      s.interferer_doas.push_back(link.doa);
    if (csi_mode == CsiMode::kImperfect)
      s.est_h_d =
          perturb_csi(scenario.desired, config.csi_error_variance, seed);
    out.push_back(std::move(s));
  }
  return out;
}

/// Negative output SINR of the tape-attached packed weights against the
/// sample's true channels, composed from real/imaginary tensor arithmetic so
/// it is differentiable end to end. With `in_db` the loss is -10*log10(SINR)
/// instead of the linear default.
inline ad::NodeId loss_asinr(ad::Tape& t, ad::NodeId packed_weights,
                             const DatasetSample& sample, bool in_db = false) {
  const int m = static_cast<int>(sample.true_h_d.size());
  const ad::NodeId wr = t.slice(packed_weights, 0, 0, m);
  const ad::NodeId wi = t.slice(packed_weights, 0, m, m);
  const ad::NodeId neg_one = t.scalar_const(-1.0);

  // |w^H h|^2 = (wr.hr + wi.hi)^2 + (wr.hi - wi.hr)^2
  const auto response_power = [&](const Eigen::VectorXcd& h) {
    std::vector<double> hr(m), hi(m);
    for (int i = 0; i < m; ++i) {
      hr[i] = h[i].real();
      hi[i] = h[i].imag();
    }
    const ad::NodeId hrc = t.constant(ad::Tensor::from({m}, std::move(hr)));
    const ad::NodeId hic = t.constant(ad::Tensor::from({m}, std::move(hi)));
    const ad::NodeId re =
        t.add(t.sum(t.mul(wr, hrc)), t.sum(t.mul(wi, hic)));
    const ad::NodeId im = t.add(t.sum(t.mul(wr, hic)),
                                t.mul(t.sum(t.mul(wi, hrc)), neg_one));
    return t.add(t.square(re), t.square(im));
  };

  const ad::NodeId desired_power = response_power(sample.true_h_d);
  ad::NodeId denom = t.mul(t.scalar_const(sample.noise_w),
                           t.sum(t.square(packed_weights)));
  for (int k = 0; k < sample.true_h_int.cols(); ++k)
    denom = t.add(denom, response_power(sample.true_h_int.col(k)));
  const ad::NodeId ratio = t.div(desired_power, denom);
  if (in_db)
    return t.mul(t.log(ratio), t.scalar_const(-10.0 / std::log(10.0)));
  return t.mul(ratio, neg_one);
}

// -- optimizer ---------------------------------------------------------------

struct AdamConfig {
  double learn_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Per-tensor gradients in visit order (trainable tensors only).
using GradientList = std::vector<std::vector<double>>;

inline GradientList zero_gradients(const ModelParams& params) {
  GradientList g;
  visit_params(params,
               [&](const std::string&, const ad::Tensor& t, bool trainable) {
                 if (trainable) g.emplace_back(t.numel(), 0.0);
               });
  return g;
}

struct AdamState {
  GradientList m, v;
  long step = 0;
};

inline AdamState init_adam_state(const ModelParams& params) {
  return {zero_gradients(params), zero_gradients(params), 0};
}

/// One bias-corrected adaptive-moment update. Throws on non-finite
/// gradients, naming the offending tensor.
inline void adam_step(ModelParams& params, const GradientList& grads,
                      AdamState& state, const AdamConfig& config) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, state.step);
  const double bc2 = 1.0 - std::pow(config.beta2, state.step);
  std::size_t idx = 0;
  visit_params(params, [&](const std::string& name, ad::Tensor& t,
                           bool trainable) {
    if (!trainable) return;
    const std::vector<double>& g = grads.at(idx);
    std::vector<double>& m = state.m[idx];
    std::vector<double>& v = state.v[idx];
    if (g.size() != t.v.size())
      throw std::invalid_argument("adam: gradient size mismatch for " + name);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw std::runtime_error("adam: non-finite gradient in " + name);
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      t.v[i] -= config.learn_rate * mhat / (std::sqrt(vhat) + config.eps);
    }
    ++idx;
  });
}

// -- training loop -----------------------------------------------------------

struct TrainConfig {
  int n_train = 4000;
  int n_test = 1000;
  int batch = 16;
  int epochs = 30;
  double learn_rate = 1e-3;
  std::uint64_t seed = 1;
  CsiMode csi_mode = CsiMode::kPerfect;
  int snapshots = 200;  // L per sample
  bool loss_db = false;
};

inline void validate_train_config(const TrainConfig& c) {
  if (c.n_train < 1 || c.n_test < 0)
    throw std::invalid_argument("train config: n_train >= 1, n_test >= 0");
  if (c.batch < 1 || c.batch > c.n_train)
    throw std::invalid_argument("train config: 1 <= batch <= n_train");
  if (c.epochs < 0) throw std::invalid_argument("train config: epochs >= 0");
  if (!(c.learn_rate >= 0.0))
    throw std::invalid_argument("train config: learn_rate >= 0");
  if (c.snapshots < ModelConfig::kPoolKernel)
    throw std::invalid_argument("train config: snapshots too small");
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"n_train", c.n_train},     {"n_test", c.n_test},
          {"batch", c.batch},         {"epochs", c.epochs},
          {"learn_rate", c.learn_rate}, {"seed", c.seed},
          {"csi_mode", to_string(c.csi_mode)}, {"snapshots", c.snapshots},
          {"loss_db", c.loss_db}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  detail::require_known_keys(j,
                             {"n_train", "n_test", "batch", "epochs",
                              "learn_rate", "seed", "csi_mode", "snapshots",
                              "loss_db"},
                             "");
  c.n_train = j.value("n_train", c.n_train);
  c.n_test = j.value("n_test", c.n_test);
  c.batch = j.value("batch", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.learn_rate = j.value("learn_rate", c.learn_rate);
  c.seed = j.value("seed", c.seed);
  if (j.contains("csi_mode"))
    c.csi_mode = csi_mode_from_string(j.at("csi_mode").get<std::string>());
  c.snapshots = j.value("snapshots", c.snapshots);
  c.loss_db = j.value("loss_db", c.loss_db);
  validate_train_config(c);
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("train config parse error in " + path + ": " +
                                e.what());
  }
  return train_config_from_json(j);
}

struct EpochStats {
  int epoch = 0;
  double mean_train_loss = 0.0;
  double mean_test_asinr_db = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  bool diverged = false;
};

inline double sinr_db(const BeamWeights& w, const DatasetSample& s) {
  const double lin = sinr(w, s.true_h_d, s.true_h_int, s.noise_w);
  return 10.0 * std::log10(std::max(lin, 1e-300));
}

/// Mean MambaBF output SINR (dB) over a sample set, inference mode.
inline double mean_model_asinr_db(const ModelParams& params,
                                  const std::vector<DatasetSample>& samples,
                                  int threads) {
  if (samples.empty()) return 0.0;
  std::vector<double> db(samples.size(), 0.0);
  parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
    db[i] = sinr_db(forward(samples[i].snapshots, params, RunMode::kInfer),
                    samples[i]);
  });
  double acc = 0.0;
  for (double x : db) acc += x;
  return acc / static_cast<double>(db.size());
}

namespace detail {

/// Per-sample forward/backward product consumed by the batch reducer.
struct SampleGrad {
  double loss = 0.0;
  ad::Tape tape;
  std::vector<ad::NodeId> param_nodes;
  std::vector<double> bn_mean, bn_var;
};

inline void run_sample(const ModelParams& params, const DatasetSample& sample,
                       bool loss_db, SampleGrad& slot) {
  const ForwardNodes nodes = forward_on_tape(
      slot.tape, preprocess(sample.snapshots), params, RunMode::kTrain);
  const ad::NodeId loss =
      loss_asinr(slot.tape, nodes.packed_weights, sample, loss_db);
  slot.loss = slot.tape.scalar_value(loss);
  slot.tape.backward(loss);
  slot.param_nodes = nodes.param_nodes;
  slot.tape.normalization_stats(nodes.bn_node, &slot.bn_mean, &slot.bn_var);
}

inline void update_running_stats(ModelParams& params,
                                 const std::vector<double>& mean,
                                 const std::vector<double>& var, int span) {
  const double mom = ModelConfig::kBnMomentum;
  // Unbiased variance feeds the running estimate, as is conventional.
  const double correction =
      span > 1 ? static_cast<double>(span) / (span - 1) : 1.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    params.bn_running_mean.v[i] =
        (1.0 - mom) * params.bn_running_mean.v[i] + mom * mean[i];
    params.bn_running_var.v[i] =
        (1.0 - mom) * params.bn_running_var.v[i] + mom * var[i] * correction;
  }
}

}  // namespace detail

/// Self-supervised training: per-epoch seeded shuffling, mini-batches with
/// the arithmetic mean of the per-sample losses, adaptive-moment updates.
/// Within a batch the per-sample passes run in parallel, but gradients are
/// reduced in sample order, so the result is independent of the thread count
/// and bitwise reproducible for a given (config, seed). A non-finite batch
/// (loss or gradient) aborts training, restoring the epoch-start parameters.
inline TrainResult train(ModelParams& params,
                         const std::vector<DatasetSample>& train_set,
                         const std::vector<DatasetSample>& test_set,
                         const TrainConfig& config, int threads = 0) {
  validate_train_config(config);
  if (train_set.empty()) throw std::invalid_argument("train: empty dataset");
  const int n = static_cast<int>(train_set.size());
  const int workers = resolve_threads(threads);
  const int bn_span = params.config.latent_length();

  TrainResult result;
  AdamState adam = init_adam_state(params);
  AdamConfig adam_config;
  adam_config.learn_rate = config.learn_rate;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const ModelParams epoch_start = params;  // divergence fallback

    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(config.seed, seed_stream::kShuffleBase + epoch));
    for (int i = n - 1; i >= 1; --i)
      std::swap(order[i],
                order[static_cast<int>(shuffle_rng.bits() %
                                       static_cast<std::uint64_t>(i + 1))]);

    std::vector<double> sample_loss(n, 0.0);
    bool finite = true;
    for (int batch_start = 0; batch_start < n && finite;
         batch_start += config.batch) {
      const int batch_size = std::min(config.batch, n - batch_start);
      GradientList batch_grad = zero_gradients(params);

      // Waves of at most `workers` samples bound the number of live tapes;
      // reduction stays in batch order across waves.
      for (int wave = 0; wave < batch_size; wave += workers) {
        const int wave_size = std::min(workers, batch_size - wave);
        std::vector<detail::SampleGrad> slots(wave_size);
        parallel_for(wave_size, workers, [&](int w) {
          detail::run_sample(params,
                             train_set[order[batch_start + wave + w]],
                             config.loss_db, slots[w]);
        });
        for (int w = 0; w < wave_size; ++w) {
          detail::SampleGrad& slot = slots[w];
          sample_loss[order[batch_start + wave + w]] = slot.loss;
          if (!std::isfinite(slot.loss)) finite = false;
          for (std::size_t p = 0; p < slot.param_nodes.size(); ++p) {
            const auto g = slot.tape.grad(slot.param_nodes[p]);
            std::vector<double>& acc = batch_grad[p];
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
          }
          detail::update_running_stats(params, slot.bn_mean, slot.bn_var,
                                       bn_span);
        }
      }
      if (!finite) break;
      const double scale = 1.0 / batch_size;
      for (auto& g : batch_grad) {
        for (double& x : g) {
          x *= scale;
          if (!std::isfinite(x)) finite = false;
        }
      }
      if (!finite) break;
      adam_step(params, batch_grad, adam, adam_config);
    }

    if (!finite) {
      params = epoch_start;
      result.diverged = true;
      return result;
    }

    EpochStats stats;
    stats.epoch = epoch;
    double acc = 0.0;
    for (double l : sample_loss) acc += l;
    stats.mean_train_loss = acc / n;
    stats.mean_test_asinr_db =
        mean_model_asinr_db(params, test_set, threads);
    result.history.push_back(stats);
  }
  return result;
}

// -- evaluation ---------------------------------------------------------------

struct EvalRow {
  int sample_id = 0;
  double sinr_in_db = 0.0;
  std::map<BeamformerMethod, double> sinr_out_db;
  Doa desired_doa;
  std::vector<Doa> interferer_doas;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_in_db = 0.0;
  std::map<BeamformerMethod, double> mean_out_db;
  CsiMode csi_mode = CsiMode::kPerfect;
};

/// Per-sample SINR_in (initial pointing) and SINR_out for each requested
/// method. Baselines consume the stored channels (the perturbed desired
/// estimate in imperfect mode); MambaBF consumes only the snapshots. The
/// measured SINR always uses the true channels.
inline EvalReport evaluate(const std::vector<DatasetSample>& samples,
                           const std::set<BeamformerMethod>& methods,
                           const ModelParams* mamba_params, CsiMode csi_mode,
                           int threads = 0) {
  if (methods.contains(BeamformerMethod::kMambaBf) && mamba_params == nullptr)
    throw std::invalid_argument("evaluate: MambaBF requested without params");
  EvalReport report;
  report.csi_mode = csi_mode;
  report.rows.resize(samples.size());
  parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
    const DatasetSample& s = samples[i];
    EvalRow row;
    row.sample_id = i;
    row.desired_doa = s.desired_doa;
    row.interferer_doas = s.interferer_doas;
    row.sinr_in_db = sinr_db(initial_weights(s), s);
    const Eigen::VectorXcd& h = baseline_channel(s);
    for (BeamformerMethod m : methods) {
      BeamWeights w;
      switch (m) {
        case BeamformerMethod::kMrc:
          w = mrc(h);
          break;
        case BeamformerMethod::kZf:
          w = zf(h, s.true_h_int);
          break;
        case BeamformerMethod::kSmi:
          w = smi(s.snapshots, h);
          break;
        case BeamformerMethod::kMvdr: {
          const Eigen::MatrixXcd r_true =
              s.true_h_d * s.true_h_d.adjoint() +
              s.true_h_int * s.true_h_int.adjoint() +
              s.noise_w * Eigen::MatrixXcd::Identity(s.true_h_d.size(),
                                                     s.true_h_d.size());
          w = mvdr(r_true, h);
          break;
        }
        case BeamformerMethod::kMambaBf:
          w = forward(s.snapshots, *mamba_params, RunMode::kInfer);
          break;
        case BeamformerMethod::kInitial:
          w = initial_weights(s);
          break;
      }
      row.sinr_out_db[m] = sinr_db(w, s);
    }
    report.rows[i] = std::move(row);
  });

  double in_acc = 0.0;
  std::map<BeamformerMethod, double> out_acc;
  for (const EvalRow& row : report.rows) {
    in_acc += row.sinr_in_db;
    for (const auto& [m, db] : row.sinr_out_db) out_acc[m] += db;
  }
  const double count = std::max<std::size_t>(report.rows.size(), 1);
  report.mean_in_db = in_acc / count;
  for (auto& [m, acc] : out_acc) report.mean_out_db[m] = acc / count;
  return report;
}

// -- CSV serialization ---------------------------------------------------------

inline std::string history_csv(const TrainResult& result,
                               const std::string& comment_header = "") {
  std::string out = comment_header;
  out += "epoch,mean_train_loss,mean_test_asinr_db\n";
  for (const EpochStats& e : result.history)
    out += std::to_string(e.epoch) + "," + fmt_g17(e.mean_train_loss) + "," +
           fmt_g17(e.mean_test_asinr_db) + "\n";
  return out;
}

inline std::string doa_list_field(const std::vector<Doa>& doas) {
  std::string s;
  for (std::size_t i = 0; i < doas.size(); ++i) {
    if (i) s += ";";
    s += fmt_g17(doas[i].azimuth_deg) + ":" + fmt_g17(doas[i].elevation_deg);
  }
  return s;
}

inline std::string eval_csv(const EvalReport& report,
                            const std::set<BeamformerMethod>& methods,
                            const std::string& comment_header = "") {
  std::string out = comment_header;
  out += "sample_id,sinr_in_db";
  for (BeamformerMethod m : methods) out += ",sinr_" + to_string(m) + "_db";
  out += ",desired_az_deg,desired_el_deg,interferer_doas,csi_mode\n";
  for (const EvalRow& row : report.rows) {
    out += std::to_string(row.sample_id) + "," + fmt_g17(row.sinr_in_db);
    for (BeamformerMethod m : methods)
      out += "," + fmt_g17(row.sinr_out_db.at(m));
    out += "," + fmt_g17(row.desired_doa.azimuth_deg) + "," +
           fmt_g17(row.desired_doa.elevation_deg) + "," +
           doa_list_field(row.interferer_doas) + "," +
           to_string(report.csi_mode) + "\n";
  }
  return out;
}

}  // namespace ngsobf

#endif  // NGSOBF_TRAINING_HPP
