#pragma once

// Random tiny layer graphs (well under 200 parameters, T <= 3) plus the
// surrogate-consistency check: with fast-sigmoid firing in the forward pass,
// BPTT gradients must match central finite differences of the smoothed
// network.

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "snne/network.hpp"
#include "snne/training.hpp"

namespace tiny {

// Depth-1 encoder-decoder covering conv, deconv, pool, concat, LIF and the
// readout, with 1x1 convs where possible to keep the parameter count tiny.
template <typename Scalar>
snne::LayerGraph<Scalar> build_tiny_graph(snne::Rng& rng, int in_c, int mid_c,
                                          int height, int width,
                                          int timesteps) {
  snne::detail::LayerListBuilder b;
  b.c = in_c;
  b.h = height;
  b.w = width;
  b.conv(mid_c, 1, 1, 0);
  b.lif();
  b.conv(mid_c, 3, 1, 1);
  b.lif(/*skip_tap=*/0);
  b.pool();
  b.conv(mid_c + 1, 1, 1, 0);
  b.lif();
  b.deconv(mid_c, 2, 2);
  b.lif();
  b.concat(mid_c, 0);
  b.conv(mid_c, 1, 1, 0);
  b.lif();
  b.conv(in_c, 1, 1, 0);
  b.readout();

  snne::LayerGraph<Scalar> graph;
  graph.cfg.depth = 3;  // unused by the interpreter; placate validation users
  graph.cfg.base_channels = mid_c;
  graph.cfg.timesteps = timesteps;
  graph.cfg.in_channels = in_c;
  graph.cfg.height = height;
  graph.cfg.width = width;
  graph.cfg.lif.threshold = 0.25;
  graph.cfg.lif.surrogate_slope = 25.0;
  graph.layers = b.layers;
  for (const auto& l : graph.layers) {
    switch (l.kind) {
      case snne::LayerKind::Conv:
      case snne::LayerKind::Deconv: {
        snne::ConvParams<Scalar> p;
        p.weight = snne::Tensor4<Scalar>(l.out_c, l.in_c, l.kernel, l.kernel);
        p.bias.assign(static_cast<std::size_t>(l.out_c), Scalar(0));
        p.stride = l.stride;
        p.padding = l.padding;
        const double bound =
            1.2 / std::sqrt(static_cast<double>(l.in_c) * l.kernel * l.kernel);
        for (auto& v : p.weight.data) {
          v = static_cast<Scalar>(rng.uniform_signed(bound));
        }
        for (auto& v : p.bias) {
          v = static_cast<Scalar>(rng.uniform_signed(0.05));
        }
        graph.conv_params.push_back(std::move(p));
        break;
      }
      case snne::LayerKind::Lif:
      case snne::LayerKind::LifReadout:
        graph.decay_raw.push_back(
            static_cast<Scalar>(rng.uniform_signed(1.0)));
        break;
      default:
        break;
    }
  }
  return graph;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t parameter_count = 0;
};

// Forward (smooth mode) -> MSE against a fixed reference -> BPTT, then
// central finite differences over every parameter.
inline GradCheckResult check_tiny_graph(snne::LayerGraph<double>& graph,
                                        snne::Rng& rng, double fd_step = 1e-5,
                                        double floor = 1e-5) {
  const auto& cfg = graph.cfg;
  snne::Tensor4d image = oracles::random_tensor(rng, 1, cfg.in_channels,
                                                cfg.height, cfg.width, 0.05,
                                                0.95);
  snne::Tensor4d reference = oracles::random_tensor(
      rng, 1, cfg.in_channels, cfg.height, cfg.width, 0.0, 1.0);

  auto loss_value = [&]() {
    snne::ForwardOptions opts;
    opts.mode = snne::SpikeMode::Smooth;
    const auto fr = snne::forward(graph, image, opts);
    return static_cast<double>(snne::mse_loss(fr.output, reference).loss);
  };

  snne::ForwardOptions opts;
  opts.mode = snne::SpikeMode::Smooth;
  opts.record_tape = true;
  auto fr = snne::forward(graph, image, opts);
  const auto mse = snne::mse_loss(fr.output, reference);
  const snne::GradStore<double> grads =
      snne::bptt_backward(graph, fr.tape, mse.grad);

  GradCheckResult result;
  result.parameter_count = graph.parameter_count();
  for (std::size_t pi = 0; pi < graph.conv_params.size(); ++pi) {
    auto& p = graph.conv_params[pi];
    for (std::size_t i = 0; i < p.weight.size(); ++i) {
      const double fd =
          oracles::central_diff(loss_value, p.weight.data[i], fd_step);
      result.max_rel_error =
          std::max(result.max_rel_error,
                   oracles::rel_error(fd, grads.weight[pi].data[i], floor));
    }
    for (std::size_t i = 0; i < p.bias.size(); ++i) {
      const double fd = oracles::central_diff(loss_value, p.bias[i], fd_step);
      result.max_rel_error =
          std::max(result.max_rel_error,
                   oracles::rel_error(fd, grads.bias[pi][i], floor));
    }
  }
  for (std::size_t i = 0; i < graph.decay_raw.size(); ++i) {
    const double fd =
        oracles::central_diff(loss_value, graph.decay_raw[i], fd_step);
    result.max_rel_error = std::max(
        result.max_rel_error, oracles::rel_error(fd, grads.decay[i], floor));
  }
  return result;
}

}  // namespace tiny
