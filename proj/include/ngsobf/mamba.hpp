// SPDX-License-Identifier: Apache-2.0
//
// ngso-bf: user-terminal receive beamforming for NGSO co-frequency
// interference mitigation.
//
// The MambaBF network: real/imaginary input packing, convolutional
// front-end, two stacked gated sequence layers (SeLU skip path, conv+GRU
// path, elementwise gating, output projection) and a dense head that emits a
// unit-norm complex weight vector.

#ifndef NGSOBF_MAMBA_HPP
#define NGSOBF_MAMBA_HPP

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ngsobf/autodiff.hpp"
#include "ngsobf/beamform.hpp"
#include "ngsobf/io.hpp"
#include "ngsobf/rng.hpp"
#include "ngsobf/signals.hpp"

namespace ngsobf {

struct ModelConfig {
  int array_elements = 100;   // M
  int snapshots = 200;        // L
  int latent_channels = 100;  // M_z
  int frontend_kernel = 3;    // k_f
  int mamba_kernel = 3;       // k
  int head_hidden = 256;

  static constexpr int kPoolKernel = 2;
  static constexpr int kPoolStride = 2;
  static constexpr double kBnEps = 1e-5;
  static constexpr double kBnMomentum = 0.1;
  static constexpr int kMambaLayers = 2;

  int latent_length() const {
    return (snapshots - kPoolKernel) / kPoolStride + 1;  // L'
  }
};

inline void validate_model_config(const ModelConfig& c) {
  if (c.array_elements < 1 || c.snapshots < ModelConfig::kPoolKernel)
    throw std::invalid_argument("model: M >= 1 and L >= pool kernel required");
  if (c.latent_channels < 1 || c.latent_channels >= 2 * c.array_elements)
    throw std::invalid_argument("model: wants 1 <= M_z < 2M");
  if (c.frontend_kernel < 1 || c.mamba_kernel < 1 || c.head_hidden < 1)
    throw std::invalid_argument("model: kernel and hidden sizes must be >= 1");
}

struct GruParams {
  ad::Tensor w_update, u_update, b_update;
  ad::Tensor w_reset, u_reset, b_reset;
  ad::Tensor w_cand, u_cand, b_cand;
};

struct MambaLayerParams {
  ad::Tensor w_in_a, b_in_a;  // skip-path affine, M_z -> M_z
  ad::Tensor w_in_b, b_in_b;  // conv-path affine, M_z -> M_z
  ad::Tensor conv_kernel;     // (M_z, M_z, k)
  GruParams gru;              // hidden size M_z
  ad::Tensor w_out;           // output projection (M_z, M_z)
};

struct ModelParams {
  ModelConfig config;
  ad::Tensor frontend_kernel;  // (M_z, 2M, k_f)
  ad::Tensor bn_scale, bn_shift;
  ad::Tensor bn_running_mean, bn_running_var;  // inference statistics
  std::array<MambaLayerParams, ModelConfig::kMambaLayers> layers;
  ad::Tensor head_w1, head_b1;  // (hidden, M_z*L'), (hidden)
  ad::Tensor head_w2, head_b2;  // (2M, hidden), (2M)
};

/// Visits every parameter tensor in a fixed order: frontend, batchnorm
/// (running statistics are visited too, flagged non-trainable), the two
/// sequence layers, then the head. Initialization, the optimizer, gradient
/// extraction and checkpoints all rely on this order.
template <typename Params, typename Fn>
void visit_params(Params& p, Fn&& fn) {
  fn("frontend.kernel", p.frontend_kernel, true);
  fn("frontend.bn_scale", p.bn_scale, true);
  fn("frontend.bn_shift", p.bn_shift, true);
  fn("frontend.bn_running_mean", p.bn_running_mean, false);
  fn("frontend.bn_running_var", p.bn_running_var, false);
  for (int i = 0; i < ModelConfig::kMambaLayers; ++i) {
    auto& l = p.layers[i];
    const std::string prefix = "mamba" + std::to_string(i) + ".";
    fn(prefix + "w_in_a", l.w_in_a, true);
    fn(prefix + "b_in_a", l.b_in_a, true);
    fn(prefix + "w_in_b", l.w_in_b, true);
    fn(prefix + "b_in_b", l.b_in_b, true);
    fn(prefix + "conv_kernel", l.conv_kernel, true);
    fn(prefix + "gru.w_update", l.gru.w_update, true);
    fn(prefix + "gru.u_update", l.gru.u_update, true);
    fn(prefix + "gru.b_update", l.gru.b_update, true);
    fn(prefix + "gru.w_reset", l.gru.w_reset, true);
    fn(prefix + "gru.u_reset", l.gru.u_reset, true);
    fn(prefix + "gru.b_reset", l.gru.b_reset, true);
    fn(prefix + "gru.w_cand", l.gru.w_cand, true);
    fn(prefix + "gru.u_cand", l.gru.u_cand, true);
    fn(prefix + "gru.b_cand", l.gru.b_cand, true);
    fn(prefix + "w_out", l.w_out, true);
  }
  fn("head.w1", p.head_w1, true);
  fn("head.b1", p.head_b1, true);
  fn("head.w2", p.head_w2, true);
  fn("head.b2", p.head_b2, true);
}

inline std::int64_t count_params(const ModelParams& p,
                                 bool trainable_only = true) {
  std::int64_t n = 0;
  visit_params(p, [&](const std::string&, const ad::Tensor& t, bool train) {
    if (train || !trainable_only) n += t.numel();
  });
  return n;
}

namespace detail {

inline ad::Tensor uniform_init(Rng& rng, std::vector<int> shape, int fan_in) {
  ad::Tensor t = ad::Tensor::zeros(std::move(shape));
  const double bound = std::sqrt(1.0 / fan_in);
  for (double& x : t.v) x = rng.uniform(-bound, bound);
  return t;
}

}  // namespace detail

/// Seeded initialization: every weight matrix (and its bias) uniform in
/// +-sqrt(1/fan_in); GRU biases zero; batchnorm scale 1, shift 0, running
/// stats (0, 1). Draw order equals visit order.
inline ModelParams init_model_params(const ModelConfig& config,
                                     std::uint64_t seed) {
  validate_model_config(config);
  Rng rng(derive_seed(seed, seed_stream::kParamInit));
  const int m2 = 2 * config.array_elements;
  const int mz = config.latent_channels;
  const int lp = config.latent_length();
  const int hidden = config.head_hidden;

  ModelParams p;
  p.config = config;
  p.frontend_kernel = detail::uniform_init(
      rng, {mz, m2, config.frontend_kernel}, m2 * config.frontend_kernel);
  p.bn_scale = ad::Tensor::from({mz}, std::vector<double>(mz, 1.0));
  p.bn_shift = ad::Tensor::zeros({mz});
  p.bn_running_mean = ad::Tensor::zeros({mz});
  p.bn_running_var = ad::Tensor::from({mz}, std::vector<double>(mz, 1.0));
  for (auto& l : p.layers) {
    l.w_in_a = detail::uniform_init(rng, {mz, mz}, mz);
    l.b_in_a = detail::uniform_init(rng, {mz}, mz);
    l.w_in_b = detail::uniform_init(rng, {mz, mz}, mz);
    l.b_in_b = detail::uniform_init(rng, {mz}, mz);
    l.conv_kernel = detail::uniform_init(rng, {mz, mz, config.mamba_kernel},
                                         mz * config.mamba_kernel);
    l.gru.w_update = detail::uniform_init(rng, {mz, mz}, mz);
    l.gru.u_update = detail::uniform_init(rng, {mz, mz}, mz);
    l.gru.b_update = ad::Tensor::zeros({mz});
    l.gru.w_reset = detail::uniform_init(rng, {mz, mz}, mz);
    l.gru.u_reset = detail::uniform_init(rng, {mz, mz}, mz);
    l.gru.b_reset = ad::Tensor::zeros({mz});
    l.gru.w_cand = detail::uniform_init(rng, {mz, mz}, mz);
    l.gru.u_cand = detail::uniform_init(rng, {mz, mz}, mz);
    l.gru.b_cand = ad::Tensor::zeros({mz});
    l.w_out = detail::uniform_init(rng, {mz, mz}, mz);
  }
  p.head_w1 = detail::uniform_init(rng, {hidden, mz * lp}, mz * lp);
  p.head_b1 = detail::uniform_init(rng, {hidden}, mz * lp);
  p.head_w2 = detail::uniform_init(rng, {m2, hidden}, hidden);
  p.head_b2 = detail::uniform_init(rng, {m2}, hidden);
  return p;
}

/// Stacks Re(Y) over Im(Y) row-wise into a (2M, L) real tensor.
inline ad::Tensor stack_reim(const SnapshotMatrix& y) {
  const int m = static_cast<int>(y.data.rows());
  const int l = static_cast<int>(y.data.cols());
  ad::Tensor t = ad::Tensor::zeros({2 * m, l});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < l; ++j) {
      t.v[i * l + j] = y.data(i, j).real();
      t.v[(m + i) * l + j] = y.data(i, j).imag();
    }
  }
  return t;
}

/// Input pipeline: stack real/imaginary parts, then standardize to zero mean
/// and unit variance over all entries. The peak magnitude is divided out
/// first; an exact uniform rescaling of the input therefore cancels in one
/// rounding step and leaves the result bit-identical. All-zero input maps to
/// zeros. This transform has no learnable part.
inline ad::Tensor preprocess(const SnapshotMatrix& y) {
  ad::Tensor stacked = stack_reim(y);
  double peak = 0.0;
  for (double x : stacked.v) peak = std::max(peak, std::abs(x));
  if (peak == 0.0) return stacked;
  for (double& x : stacked.v) x /= peak;
  ad::Tape scratch;
  const ad::NodeId out = scratch.batch_stats_normalize(
      scratch.constant(std::move(stacked)), ad::NormMode::kGlobal, 0.0);
  return scratch.value_copy(out);
}

enum class RunMode { kTrain, kInfer };

struct ForwardNodes {
  ad::NodeId packed_weights = -1;       // (2M), unit norm
  std::vector<ad::NodeId> param_nodes;  // trainable leaves, visit order
  ad::NodeId bn_node = -1;              // train mode: the normalize node
};

namespace detail {

struct FrontendNodes {
  ad::NodeId output = -1;   // (M_z, L'), after SeLU
  ad::NodeId bn_node = -1;  // train mode only
};

/// Convolutional front end: conv1d (2M -> M_z channels) -> maxpool ->
/// batch normalization -> SeLU. Train mode normalizes with this sample's
/// statistics; infer mode applies the running statistics as constants.
inline FrontendNodes frontend_on_tape(ad::Tape& t, ad::NodeId input,
                                      ad::NodeId kernel, ad::NodeId bn_scale,
                                      ad::NodeId bn_shift,
                                      const ModelParams& params,
                                      RunMode mode) {
  FrontendNodes out;
  const ad::NodeId conv = t.conv1d(input, kernel);
  const ad::NodeId pooled =
      t.maxpool1d(conv, ModelConfig::kPoolKernel, ModelConfig::kPoolStride);
  ad::NodeId normed;
  if (mode == RunMode::kTrain) {
    out.bn_node = t.batch_stats_normalize(pooled, ad::NormMode::kPerChannel,
                                          ModelConfig::kBnEps);
    normed = out.bn_node;
  } else {
    const ad::NodeId neg_mean =
        t.mul(t.constant_ref(params.bn_running_mean), t.scalar_const(-1.0));
    const ad::NodeId std_dev =
        t.sqrt(t.add(t.constant_ref(params.bn_running_var),
                     t.scalar_const(ModelConfig::kBnEps)));
    normed = t.div(t.add(pooled, neg_mean), std_dev);
  }
  out.output = t.selu(t.add(t.mul(normed, bn_scale), bn_shift));
  return out;
}

/// Dense head: flatten -> hidden layer with SeLU -> linear to 2M packed
/// reals -> exact unit-norm normalization. Throws if the raw output is
/// exactly zero.
inline ad::NodeId head_on_tape(ad::Tape& t, ad::NodeId x, ad::NodeId w1,
                               ad::NodeId b1, ad::NodeId w2, ad::NodeId b2) {
  const auto& shape = t.shape(x);
  const ad::NodeId flat = t.reshape(x, {shape[0] * shape[1]});
  const ad::NodeId h1 = t.selu(t.add(t.matmul(w1, flat), b1));
  const ad::NodeId raw = t.add(t.matmul(w2, h1), b2);
  const ad::NodeId norm2 = t.sum(t.square(raw));
  if (!(t.scalar_value(norm2) > 0.0))
    throw std::runtime_error("mamba head produced a zero weight vector");
  return t.div(raw, t.sqrt(norm2));
}

struct LayerNodes {
  ad::NodeId w_in_a, b_in_a, w_in_b, b_in_b, conv_kernel, w_out;
  ad::NodeId gw_z, gu_z, gb_z, gw_r, gu_r, gb_r, gw_h, gu_h, gb_h;
};

/// One gated sequence layer (input (M_z, L') -> output (M_z, L')):
///   skip    x~ = SeLU(W_a x + b_a)
///   conv    c  = SeLU(Conv1D_k(W_b x + b_b))
///   state   g(l) = GRU(c(l), g(l-1)),  g(0) = 0
///   gate    f(l) = W_out (g(l) .* x~(l))
/// GRU cell: z = sigma(W_z c + U_z g + b_z), r = sigma(W_r c + U_r g + b_r),
/// g~ = tanh(W_h c + U_h (r .* g) + b_h), g' = (1 - z) .* g + z .* g~.
inline ad::NodeId mamba_layer(ad::Tape& t, ad::NodeId x, const LayerNodes& p,
                              int latent_channels, int steps) {
  const ad::NodeId xt = t.selu(t.add(t.matmul(p.w_in_a, x), p.b_in_a));
  const ad::NodeId pre = t.add(t.matmul(p.w_in_b, x), p.b_in_b);
  const ad::NodeId c = t.selu(t.conv1d(pre, p.conv_kernel));

  const ad::NodeId ones =
      t.constant(ad::Tensor::from({latent_channels, 1},
                                  std::vector<double>(latent_channels, 1.0)));
  const ad::NodeId neg_one = t.scalar_const(-1.0);
  ad::NodeId g_prev =
      t.constant(ad::Tensor::zeros({latent_channels, 1}));

  std::vector<ad::NodeId> outputs;
  outputs.reserve(steps);
  for (int l = 0; l < steps; ++l) {
    const ad::NodeId cl = t.slice(c, 1, l, 1);
    const ad::NodeId z = t.sigmoid(
        t.add(t.add(t.matmul(p.gw_z, cl), t.matmul(p.gu_z, g_prev)), p.gb_z));
    const ad::NodeId r = t.sigmoid(
        t.add(t.add(t.matmul(p.gw_r, cl), t.matmul(p.gu_r, g_prev)), p.gb_r));
    const ad::NodeId cand = t.tanh(t.add(
        t.add(t.matmul(p.gw_h, cl), t.matmul(p.gu_h, t.mul(r, g_prev))),
        p.gb_h));
    const ad::NodeId keep = t.add(ones, t.mul(z, neg_one));  // 1 - z
    const ad::NodeId g = t.add(t.mul(keep, g_prev), t.mul(z, cand));
    outputs.push_back(t.matmul(p.w_out, t.mul(g, t.slice(xt, 1, l, 1))));
    g_prev = g;
  }
  return t.concat(outputs, 1);
}

}  // namespace detail

/// Records the full network on `tape`. In train mode the trainable tensors
/// are registered as differentiable leaves (referenced, not copied; `params`
/// must outlive the tape) and batch normalization uses the statistics of this
/// sample. In infer mode parameters enter as constants and batch
/// normalization uses the stored running statistics.
inline ForwardNodes forward_on_tape(ad::Tape& tape,
                                    const ad::Tensor& preprocessed,
                                    const ModelParams& params, RunMode mode) {
  const ModelConfig& c = params.config;
  validate_model_config(c);
  if (preprocessed.shape !=
      std::vector<int>{2 * c.array_elements, c.snapshots})
    throw std::invalid_argument("forward: input shape mismatch");

  const int lp = c.latent_length();
  tape.reserve(64 + 26 * lp * ModelConfig::kMambaLayers);

  ForwardNodes out;
  std::vector<ad::NodeId> ids;
  visit_params(params,
               [&](const std::string&, const ad::Tensor& t, bool train) {
                 if (!train) {
                   ids.push_back(-1);
                   return;
                 }
                 if (mode == RunMode::kTrain) {
                   ids.push_back(tape.leaf(t));
                   out.param_nodes.push_back(ids.back());
                 } else {
                   ids.push_back(tape.constant_ref(t));
                 }
               });
  // ids follow visit order: frontend kernel, bn scale/shift, (running stats
  // skipped), 15 tensors per layer, 4 head tensors.
  int next = 0;
  const ad::NodeId frontend_kernel = ids[next++];
  const ad::NodeId bn_scale = ids[next++];
  const ad::NodeId bn_shift = ids[next++];
  next += 2;  // running stats are not tape inputs
  std::array<detail::LayerNodes, ModelConfig::kMambaLayers> layer_nodes;
  for (auto& l : layer_nodes) {
    l.w_in_a = ids[next++];
    l.b_in_a = ids[next++];
    l.w_in_b = ids[next++];
    l.b_in_b = ids[next++];
    l.conv_kernel = ids[next++];
    l.gw_z = ids[next++];
    l.gu_z = ids[next++];
    l.gb_z = ids[next++];
    l.gw_r = ids[next++];
    l.gu_r = ids[next++];
    l.gb_r = ids[next++];
    l.gw_h = ids[next++];
    l.gu_h = ids[next++];
    l.gb_h = ids[next++];
    l.w_out = ids[next++];
  }
  const ad::NodeId head_w1 = ids[next++];
  const ad::NodeId head_b1 = ids[next++];
  const ad::NodeId head_w2 = ids[next++];
  const ad::NodeId head_b2 = ids[next++];

  const ad::NodeId input = tape.constant(preprocessed);
  const detail::FrontendNodes front = detail::frontend_on_tape(
      tape, input, frontend_kernel, bn_scale, bn_shift, params, mode);
  out.bn_node = front.bn_node;

  ad::NodeId x = front.output;
  for (const auto& l : layer_nodes)
    x = detail::mamba_layer(tape, x, l, c.latent_channels, lp);

  out.packed_weights =
      detail::head_on_tape(tape, x, head_w1, head_b1, head_w2, head_b2);
  return out;
}

/// Packed real layout -> complex weights: entry i is (packed[i],
/// packed[M + i]).
inline Eigen::VectorXcd unpack_weights(std::span<const double> packed) {
  const int m = static_cast<int>(packed.size()) / 2;
  Eigen::VectorXcd w(m);
  for (int i = 0; i < m; ++i) w[i] = {packed[i], packed[m + i]};
  return w;
}

/// Convenience single-shot inference (or a train-mode dry run): returns the
/// unit-norm beamforming weights for one snapshot matrix.
inline BeamWeights forward(const SnapshotMatrix& y, const ModelParams& params,
                           RunMode mode = RunMode::kInfer) {
  ad::Tape tape;
  const ForwardNodes nodes = forward_on_tape(tape, preprocess(y), params, mode);
  return {unpack_weights(tape.values(nodes.packed_weights)),
          BeamformerMethod::kMambaBf};
}

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_to_json(const ModelParams& p) {
  nlohmann::json params = nlohmann::json::array();
  visit_params(p, [&](const std::string& name, const ad::Tensor& t,
                      bool trainable) {
    if (!trainable) return;
    params.push_back(
        {{"name", name}, {"shape", t.shape}, {"data", t.v}});
  });
  return nlohmann::json{
      {"format_version", kCheckpointVersion},
      {"hyperparams",
       {{"m", p.config.array_elements},
        {"l", p.config.snapshots},
        {"m_z", p.config.latent_channels},
        {"k_f", p.config.frontend_kernel},
        {"k", p.config.mamba_kernel},
        {"hidden", p.config.head_hidden}}},
      {"params", params},
      {"batchnorm_running",
       {{"mean", p.bn_running_mean.v}, {"var", p.bn_running_var.v}}}};
}

inline void save_checkpoint(const std::string& path, const ModelParams& p) {
  write_text_file(path, checkpoint_to_json(p).dump() + "\n");
}

inline ModelParams checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format_version", -1) != kCheckpointVersion)
    throw std::invalid_argument("checkpoint: unsupported format version");
  const auto& h = j.at("hyperparams");
  ModelConfig config;
  config.array_elements = h.at("m").get<int>();
  config.snapshots = h.at("l").get<int>();
  config.latent_channels = h.at("m_z").get<int>();
  config.frontend_kernel = h.at("k_f").get<int>();
  config.mamba_kernel = h.at("k").get<int>();
  config.head_hidden = h.at("hidden").get<int>();
  ModelParams p = init_model_params(config, 0);

  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& entry : j.at("params"))
    by_name[entry.at("name").get<std::string>()] = &entry;
  visit_params(p, [&](const std::string& name, ad::Tensor& t, bool trainable) {
    if (!trainable) return;
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::invalid_argument("checkpoint: missing parameter " + name);
    const auto& entry = *it->second;
    if (entry.at("shape").get<std::vector<int>>() != t.shape)
      throw std::invalid_argument("checkpoint: shape mismatch for " + name);
    t.v = entry.at("data").get<std::vector<double>>();
    by_name.erase(it);
  });
  if (!by_name.empty())
    throw std::invalid_argument("checkpoint: unknown parameter " +
                                by_name.begin()->first);
  p.bn_running_mean.v =
      j.at("batchnorm_running").at("mean").get<std::vector<double>>();
  p.bn_running_var.v =
      j.at("batchnorm_running").at("var").get<std::vector<double>>();
  if (static_cast<int>(p.bn_running_mean.v.size()) != config.latent_channels ||
      static_cast<int>(p.bn_running_var.v.size()) != config.latent_channels)
    throw std::invalid_argument("checkpoint: bad running statistics size");
  return p;
}

inline ModelParams load_checkpoint(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("checkpoint parse error in " + path + ": " +
                                e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace ngsobf

#endif  // NGSOBF_MAMBA_HPP
