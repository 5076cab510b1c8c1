// SPDX-License-Identifier: Apache-2.0
//
// ngso-bf: user-terminal receive beamforming for NGSO co-frequency
// interference mitigation.
//
// Self-contained gradient verification: every tape primitive, one full gated
// sequence layer, and the end-to-end training loss at reduced sizes, all
// checked against central finite differences.

#ifndef NGSOBF_GRADCHECK_HPP
#define NGSOBF_GRADCHECK_HPP

#include <algorithm>
#include <ostream>
#include <string>
#include <vector>

#include "ngsobf/autodiff.hpp"
#include "ngsobf/io.hpp"
#include "ngsobf/mamba.hpp"
#include "ngsobf/rng.hpp"
#include "ngsobf/training.hpp"

namespace ngsobf {

/// Runs the whole battery, streaming one line per check, and returns the
/// worst relative error seen (pass threshold: 1e-4).
inline double run_gradient_self_check(std::ostream& out) {
  using ad::NodeId;
  using ad::Tape;
  using ad::Tensor;
  Rng rng(2718281828ull);
  const auto random_tensor = [&](std::vector<int> shape, double lo,
                                 double hi) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& x : t.v) x = rng.uniform(lo, hi);
    return t;
  };

  double worst = 0.0;
  const auto report = [&](const char* label, double err) {
    out << "gradcheck " << label << ": max relative error " << fmt_g17(err)
        << "\n";
    worst = std::max(worst, err);
  };

  // (a) every primitive.
  report("add/mul/div",
         ad::gradient_check_max_rel_error(
             {random_tensor({3, 4}, -1, 1), random_tensor({3, 4}, 0.5, 1.5),
              random_tensor({3}, 0.5, 1.5)},
             [](Tape& t, const std::vector<NodeId>& l) {
               const NodeId u = t.add(t.mul(l[0], l[1]), t.div(l[0], l[2]));
               return t.sum(u);
             }));
  report("matmul",
         ad::gradient_check_max_rel_error(
             {random_tensor({3, 4}, -1, 1), random_tensor({4, 2}, -1, 1)},
             [](Tape& t, const std::vector<NodeId>& l) {
               return t.sum(t.square(t.matmul(l[0], l[1])));
             }));
  report("conv1d",
         ad::gradient_check_max_rel_error(
             {random_tensor({2, 6}, -1, 1), random_tensor({3, 2, 3}, -1, 1)},
             [](Tape& t, const std::vector<NodeId>& l) {
               return t.sum(t.square(t.conv1d(l[0], l[1])));
             }));
  report("maxpool1d", ad::gradient_check_max_rel_error(
                          {random_tensor({2, 7}, -1, 1)},
                          [](Tape& t, const std::vector<NodeId>& l) {
                            return t.sum(t.maxpool1d(l[0], 3, 2));
                          }));
  report("selu/sigmoid/tanh",
         ad::gradient_check_max_rel_error(
             {random_tensor({6}, -2, 2)},
             [](Tape& t, const std::vector<NodeId>& l) {
               return t.sum(t.selu(t.tanh(t.sigmoid(l[0]))));
             }));
  report("sum/mean/square/sqrt/log",
         ad::gradient_check_max_rel_error(
             {random_tensor({5}, 0.5, 2.0)},
             [](Tape& t, const std::vector<NodeId>& l) {
               const NodeId a = t.sum(t.square(l[0]));
               const NodeId b = t.mean(t.log(l[0]));
               return t.add(t.sqrt(a), b);
             }));
  report("concat/slice/reshape",
         ad::gradient_check_max_rel_error(
             {random_tensor({2, 3}, -1, 1), random_tensor({2, 2}, -1, 1)},
             [](Tape& t, const std::vector<NodeId>& l) {
               const NodeId cat = t.concat({l[0], l[1]}, 1);
               return t.sum(t.square(t.reshape(t.slice(cat, 1, 1, 3), {6})));
             }));
  report("batch_stats_normalize",
         ad::gradient_check_max_rel_error(
             {random_tensor({3, 5}, -1, 1)},
             [](Tape& t, const std::vector<NodeId>& l) {
               const NodeId n = t.batch_stats_normalize(
                   l[0], ad::NormMode::kPerChannel, 1e-5);
               return t.sum(t.square(n));
             }));

  // (b) one full gated sequence layer at reduced size.
  {
    ModelConfig mc;
    mc.array_elements = 4;
    mc.snapshots = 8;
    mc.latent_channels = 6;
    mc.head_hidden = 16;
    const ModelParams p = init_model_params(mc, 41);
    const MambaLayerParams& l = p.layers[0];
    std::vector<Tensor> leaves{l.w_in_a,        l.b_in_a,       l.w_in_b,
                               l.b_in_b,        l.conv_kernel,  l.gru.w_update,
                               l.gru.u_update,  l.gru.b_update, l.gru.w_reset,
                               l.gru.u_reset,   l.gru.b_reset,  l.gru.w_cand,
                               l.gru.u_cand,    l.gru.b_cand,   l.w_out};
    leaves.push_back(random_tensor({6, 4}, -1, 1));  // layer input
    report("mamba_layer",
           ad::gradient_check_max_rel_error(
               leaves, [](Tape& t, const std::vector<NodeId>& ids) {
                 detail::LayerNodes n;
                 n.w_in_a = ids[0];
                 n.b_in_a = ids[1];
                 n.w_in_b = ids[2];
                 n.b_in_b = ids[3];
                 n.conv_kernel = ids[4];
                 n.gw_z = ids[5];
                 n.gu_z = ids[6];
                 n.gb_z = ids[7];
                 n.gw_r = ids[8];
                 n.gu_r = ids[9];
                 n.gb_r = ids[10];
                 n.gw_h = ids[11];
                 n.gu_h = ids[12];
                 n.gb_h = ids[13];
                 n.w_out = ids[14];
                 return t.sum(
                     t.square(detail::mamba_layer(t, ids[15], n, 6, 4)));
               }));
  }

  // (c) the end-to-end loss at reduced sizes (M=4, L=8, M_z=6).
  {
    ModelConfig mc;
    mc.array_elements = 4;
    mc.snapshots = 8;
    mc.latent_channels = 6;
    mc.head_hidden = 16;
    ModelParams params = init_model_params(mc, 9);
    ScenarioConfig sc;
    sc.array_mx = 2;
    sc.array_my = 2;
    sc.interferer_count = 2;
    const auto set = build_dataset(sc, 1, 5, CsiMode::kPerfect, mc.snapshots);

    ad::Tape tape;
    const ForwardNodes nodes = forward_on_tape(
        tape, preprocess(set[0].snapshots), params, RunMode::kTrain);
    tape.backward(loss_asinr(tape, nodes.packed_weights, set[0]));

    const auto loss_value = [&](const ModelParams& p) {
      ad::Tape t;
      const ForwardNodes n = forward_on_tape(t, preprocess(set[0].snapshots),
                                             p, RunMode::kTrain);
      return t.scalar_value(loss_asinr(t, n.packed_weights, set[0]));
    };
    const double h = 1e-6;
    double err = 0.0;
    std::size_t idx = 0;
    visit_params(params,
                 [&](const std::string&, ad::Tensor& t, bool trainable) {
                   if (!trainable) return;
                   const auto g = tape.grad(nodes.param_nodes[idx]);
                   const int stride = std::max(1, t.numel() / 13);
                   for (int i = 0; i < t.numel(); i += stride) {
                     const double x0 = t.v[i];
                     t.v[i] = x0 + h;
                     const double fp = loss_value(params);
                     t.v[i] = x0 - h;
                     const double fm = loss_value(params);
                     t.v[i] = x0;
                     const double fd = (fp - fm) / (2.0 * h);
                     err = std::max(err,
                                    std::abs(g[i] - fd) /
                                        std::max({1.0, std::abs(g[i]),
                                                  std::abs(fd)}));
                   }
                   ++idx;
                 });
    report("end_to_end_loss", err);
  }

  out << "gradcheck overall max relative error: " << fmt_g17(worst) << "\n";
  return worst;
}

}  // namespace ngsobf

#endif  // NGSOBF_GRADCHECK_HPP
