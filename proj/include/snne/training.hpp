#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "snne/errors.hpp"
#include "snne/kernels.hpp"
#include "snne/network.hpp"
#include "snne/neuron.hpp"
#include "snne/parallel.hpp"
#include "snne/rng.hpp"
#include "snne/tape.hpp"
#include "snne/tensor.hpp"

// Surrogate-gradient BPTT over the recorded tape, the MSE-on-membrane loss,
// Adam, and the epoch loop with best-validation checkpoint selection.

namespace snne {

template <typename Scalar>
struct MseResult {
  Scalar loss = Scalar(0);
  Tensor4<Scalar> grad;
};

// Mean squared error over every element (batch and channels averaged along
// with the spatial dims, so magnitudes are resolution- and batch-invariant).
template <typename Scalar>
MseResult<Scalar> mse_loss(const Tensor4<Scalar>& output,
                           const Tensor4<Scalar>& reference) {
  require_same_shape(output, reference, "mse_loss");
  MseResult<Scalar> r;
  r.grad = Tensor4<Scalar>::zeros_like(output);
  const Scalar inv_n = Scalar(1) / Scalar(output.size());
  Scalar acc(0);
  for (std::size_t i = 0; i < output.size(); ++i) {
    const Scalar d = output.data[i] - reference.data[i];
    acc += d * d;
    r.grad.data[i] = Scalar(2) * d * inv_n;
  }
  r.loss = acc * inv_n;
  return r;
}

// Per-parameter gradient accumulator, mirroring the graph's parameter store.
template <typename Scalar>
struct GradStore {
  std::vector<Tensor4<Scalar>> weight;
  std::vector<std::vector<Scalar>> bias;
  std::vector<Scalar> decay;

  template <typename S2>
  static GradStore zeros_like(const LayerGraph<S2>& graph) {
    GradStore g;
    g.weight.reserve(graph.conv_params.size());
    g.bias.reserve(graph.conv_params.size());
    for (const auto& p : graph.conv_params) {
      g.weight.push_back(Tensor4<Scalar>(p.weight.batch, p.weight.channels,
                                         p.weight.height, p.weight.width));
      g.bias.emplace_back(p.bias.size(), Scalar(0));
    }
    g.decay.assign(graph.decay_raw.size(), Scalar(0));
    return g;
  }

  void add_scaled(const GradStore& other, Scalar scale) {
    for (std::size_t i = 0; i < weight.size(); ++i) {
      flat(weight[i]) += flat(other.weight[i]) * scale;
      for (std::size_t j = 0; j < bias[i].size(); ++j) {
        bias[i][j] += scale * other.bias[i][j];
      }
    }
    for (std::size_t i = 0; i < decay.size(); ++i) {
      decay[i] += scale * other.decay[i];
    }
  }

  void zero() {
    for (auto& w : weight) std::fill(w.data.begin(), w.data.end(), Scalar(0));
    for (auto& b : bias) std::fill(b.begin(), b.end(), Scalar(0));
    std::fill(decay.begin(), decay.end(), Scalar(0));
  }

  void scale(Scalar factor) {
    for (auto& w : weight) flat(w) *= factor;
    for (auto& b : bias) {
      for (auto& v : b) v *= factor;
    }
    for (auto& d : decay) d *= factor;
  }
};

// Reverse pass over a completed tape, adding every parameter's contribution
// from all timesteps into `grads`; spike nonlinearities use the surrogate and
// the temporal recurrence uses dV[t]/dV[t-1] = beta.
template <typename Scalar>
void bptt_accumulate(const LayerGraph<Scalar>& graph, Tape<Scalar>& tape,
                     const Tensor4<Scalar>& loss_grad,
                     GradStore<Scalar>& grads) {
  if (!tape.finished) {
    throw InternalError("bptt_backward: tape is incomplete");
  }
  if (tape.consumed) {
    throw InternalError("bptt_backward: tape already consumed");
  }
  tape.consumed = true;
  std::vector<Tensor4<Scalar>> slot_grads(tape.values.size());
  std::vector<char> produced(tape.values.size(), 0);
  for (const auto& node : tape.nodes) {
    if (node.out0 >= 0) produced[static_cast<std::size_t>(node.out0)] = 1;
    if (node.out1 >= 0) produced[static_cast<std::size_t>(node.out1)] = 1;
  }

  auto add_grad = [&](int slot, Tensor4<Scalar>&& g) {
    if (slot < 0) return;
    Tensor4<Scalar>& dst = slot_grads[static_cast<std::size_t>(slot)];
    if (dst.empty()) {
      dst = std::move(g);
    } else {
      flat(dst) += flat(g);
    }
  };
  auto take_grad = [&](int slot) -> Tensor4<Scalar> {
    if (slot < 0) return Tensor4<Scalar>();
    return std::move(slot_grads[static_cast<std::size_t>(slot)]);
  };

  require_same_shape(tape.values[static_cast<std::size_t>(tape.output_slot)],
                     loss_grad, "bptt_backward seed");
  {
    Tensor4<Scalar> seed = loss_grad;
    add_grad(tape.output_slot, std::move(seed));
  }

  for (auto it = tape.nodes.rbegin(); it != tape.nodes.rend(); ++it) {
    const TapeNode& node = *it;
    Tensor4<Scalar> g0 = take_grad(node.out0);
    Tensor4<Scalar> g1 = take_grad(node.out1);
    if (g0.empty() && g1.empty()) continue;  // dead branch

    switch (node.kind) {
      case OpKind::Conv2d:
      case OpKind::Deconv2d: {
        const std::size_t pi = static_cast<std::size_t>(node.param_index);
        const ConvParams<Scalar>& p = graph.conv_params[pi];
        const Tensor4<Scalar>& input =
            tape.values[static_cast<std::size_t>(node.in0)];
        const bool need_input = produced[static_cast<std::size_t>(node.in0)];
        ConvGrads<Scalar> cg =
            node.kind == OpKind::Conv2d
                ? conv2d_backward(g0, input, p, need_input)
                : deconv2d_backward(g0, input, p, need_input);
        flat(grads.weight[pi]) += flat(cg.weight);
        for (std::size_t j = 0; j < cg.bias.size(); ++j) {
          grads.bias[pi][j] += cg.bias[j];
        }
        if (need_input) add_grad(node.in0, std::move(cg.input));
        break;
      }
      case OpKind::LifSpike: {
        const Tensor4<Scalar>& membrane =
            tape.values[static_cast<std::size_t>(node.out0)];
        static const Tensor4<Scalar> kEmpty;
        const Tensor4<Scalar>& prev_membrane =
            node.in1 >= 0 ? tape.values[static_cast<std::size_t>(node.in1)]
                          : kEmpty;
        if (g0.empty()) g0 = Tensor4<Scalar>::zeros_like(membrane);
        if (g1.empty()) g1 = Tensor4<Scalar>::zeros_like(membrane);
        LifGrads<Scalar> lg =
            lif_backward(membrane, prev_membrane,
                         graph.beta(node.param_index), graph.cfg.lif, g1, g0);
        add_grad(node.in0, std::move(lg.input));
        if (node.in1 >= 0) add_grad(node.in1, std::move(lg.prev_membrane));
        if (node.in2 >= 0) add_grad(node.in2, std::move(lg.prev_spikes));
        grads.decay[static_cast<std::size_t>(node.param_index)] +=
            lg.decay_param;
        break;
      }
      case OpKind::LifIntegrate: {
        static const Tensor4<Scalar> kEmpty;
        const Tensor4<Scalar>& prev_membrane =
            node.in1 >= 0 ? tape.values[static_cast<std::size_t>(node.in1)]
                          : kEmpty;
        LifGrads<Scalar> lg = lif_integrate_backward(
            prev_membrane, graph.beta(node.param_index), g0);
        add_grad(node.in0, std::move(lg.input));
        if (node.in1 >= 0) add_grad(node.in1, std::move(lg.prev_membrane));
        grads.decay[static_cast<std::size_t>(node.param_index)] +=
            lg.decay_param;
        break;
      }
      case OpKind::MaxPool: {
        add_grad(node.in0, maxpool2x2_backward(g0, node.pool, node.pool_in_h,
                                               node.pool_in_w));
        break;
      }
      case OpKind::Concat: {
        auto [ga, gb] = split_channels(g0, node.concat_left_channels);
        add_grad(node.in0, std::move(ga));
        add_grad(node.in1, std::move(gb));
        break;
      }
    }
  }
}

template <typename Scalar>
GradStore<Scalar> bptt_backward(const LayerGraph<Scalar>& graph,
                                Tape<Scalar>& tape,
                                const Tensor4<Scalar>& loss_grad) {
  GradStore<Scalar> grads = GradStore<Scalar>::zeros_like(graph);
  bptt_accumulate(graph, tape, loss_grad, grads);
  return grads;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Span-level bias-corrected Adam update.
template <typename Scalar>
void adam_update(Scalar* param, const Scalar* grad, Scalar* m, Scalar* v,
                 std::size_t n, long long step, const AdamConfig& cfg) {
  const Scalar b1 = Scalar(cfg.beta1);
  const Scalar b2 = Scalar(cfg.beta2);
  const Scalar corr1 = Scalar(1) - Scalar(std::pow(cfg.beta1, step));
  const Scalar corr2 = Scalar(1) - Scalar(std::pow(cfg.beta2, step));
  const Scalar lr = Scalar(cfg.lr);
  const Scalar eps = Scalar(cfg.eps);
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (Scalar(1) - b1) * grad[i];
    v[i] = b2 * v[i] + (Scalar(1) - b2) * grad[i] * grad[i];
    const Scalar mhat = m[i] / corr1;
    const Scalar vhat = v[i] / corr2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <typename Scalar>
struct AdamState {
  AdamConfig cfg;
  long long step = 0;
  GradStore<Scalar> m;
  GradStore<Scalar> v;

  static AdamState init(const LayerGraph<Scalar>& graph,
                        const AdamConfig& cfg) {
    AdamState s;
    s.cfg = cfg;
    s.m = GradStore<Scalar>::zeros_like(graph);
    s.v = GradStore<Scalar>::zeros_like(graph);
    return s;
  }
};

template <typename Scalar>
void adam_step(LayerGraph<Scalar>& graph, const GradStore<Scalar>& grads,
               AdamState<Scalar>& state) {
  if (grads.weight.size() != graph.conv_params.size() ||
      grads.decay.size() != graph.decay_raw.size()) {
    throw ShapeError("adam_step: gradient store does not match graph");
  }
  ++state.step;
  for (std::size_t i = 0; i < graph.conv_params.size(); ++i) {
    auto& p = graph.conv_params[i];
    require_same_shape(p.weight, grads.weight[i], "adam_step weight");
    adam_update(p.weight.data.data(), grads.weight[i].data.data(),
                state.m.weight[i].data.data(), state.v.weight[i].data.data(),
                p.weight.size(), state.step, state.cfg);
    adam_update(p.bias.data(), grads.bias[i].data(), state.m.bias[i].data(),
                state.v.bias[i].data(), p.bias.size(), state.step, state.cfg);
  }
  adam_update(graph.decay_raw.data(), grads.decay.data(),
              state.m.decay.data(), state.v.decay.data(),
              graph.decay_raw.size(), state.step, state.cfg);
}

// ---------------------------------------------------------------------------
// Train loop

struct TrainSchedule {
  int epochs = 200;
  int validation_start_epoch = 50;  // 1-based epoch at which validation begins
  int batch_size = 4;
  std::uint64_t seed = 0;
  double lr = 1e-3;
  int threads = 1;

  void validate() const {
    std::vector<std::string> problems;
    if (epochs < 1) problems.push_back("epochs must be >= 1");
    if (validation_start_epoch > epochs) {
      problems.push_back("validation_start_epoch (" +
                         std::to_string(validation_start_epoch) +
                         ") must be <= epochs (" + std::to_string(epochs) +
                         ")");
    }
    if (batch_size < 1) problems.push_back("batch_size must be >= 1");
    if (threads < 1) problems.push_back("threads must be >= 1");
    if (!problems.empty()) {
      std::string msg = "invalid train schedule:";
      for (const auto& p : problems) msg += "\n  - " + p;
      throw ConfigError(msg);
    }
  }
};

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_mse = 0.0;
  std::optional<double> val_mse;
  double seconds = 0.0;
};

struct TrainResult {
  int best_epoch = 0;  // epoch of the persisted best checkpoint
  double best_val_mse = 0.0;
  double final_train_mse = 0.0;
  std::vector<EpochStats> log;
};

// Sample provider + persistence hooks, so the loop stays independent of
// image IO. load(i) must be safe to call from several threads.
struct TrainHooks {
  std::function<std::pair<Tensor4f, Tensor4f>(std::size_t)> load_train;
  std::size_t train_count = 0;
  std::function<std::pair<Tensor4f, Tensor4f>(std::size_t)> load_val;
  std::size_t val_count = 0;
  std::function<void(const LayerGraph<float>&, const std::string& tag)>
      save_checkpoint;                                  // tags: best, last
  std::function<void(const EpochStats&)> on_epoch;      // metrics sink
  std::function<bool(const EpochStats&)> stop_early;    // optional
};

namespace detail {

inline double validate_pass(const LayerGraph<float>& graph,
                            const TrainHooks& hooks, int threads) {
  const std::size_t n = hooks.val_count;
  std::vector<double> losses(n, 0.0);
  parallel_for(n, threads, [&](std::size_t i) {
    auto [raw, ref] = hooks.load_val(i);
    ForwardResult<float> fr = forward(graph, raw);
    losses[i] = static_cast<double>(mse_loss(fr.output, ref).loss);
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(n);
}

}  // namespace detail

// Runs the schedule: shuffled mini-batches, per-sample forward/backward in
// parallel with an ordered mean reduction, Adam updates, validation from
// validation_start_epoch on, best-checkpoint selection by validation loss.
// Aborts on a non-finite loss after persisting the last finite epoch.
inline TrainResult train(LayerGraph<float>& graph, const TrainSchedule& sched,
                         const TrainHooks& hooks) {
  sched.validate();
  if (hooks.train_count == 0) {
    throw ConfigError("train: dataset is empty");
  }
  AdamConfig adam_cfg;
  adam_cfg.lr = sched.lr;
  AdamState<float> adam = AdamState<float>::init(graph, adam_cfg);
  Rng rng(sched.seed);

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;

  std::vector<std::size_t> order(hooks.train_count);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  // One gradient accumulator per worker, reused across batches. Worker w
  // handles samples w, w+threads, ... in order, so results are deterministic
  // for a fixed thread count.
  const std::size_t workers = static_cast<std::size_t>(sched.threads);
  std::vector<GradStore<float>> worker_grads;
  for (std::size_t w = 0; w < workers; ++w) {
    worker_grads.push_back(GradStore<float>::zeros_like(graph));
  }
  GradStore<float> batch_grads = GradStore<float>::zeros_like(graph);

  for (int epoch = 1; epoch <= sched.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng epoch_rng = rng.fork(static_cast<std::uint64_t>(epoch));
    epoch_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(sched.batch_size)) {
      const std::size_t batch_end = std::min(
          order.size(), at + static_cast<std::size_t>(sched.batch_size));
      const std::size_t bsz = batch_end - at;
      const std::size_t active = std::min(bsz, workers);
      std::vector<double> sample_loss(bsz, 0.0);
      for (std::size_t w = 0; w < active; ++w) worker_grads[w].zero();
      parallel_for(bsz, sched.threads, [&](std::size_t j) {
        auto [raw, ref] = hooks.load_train(order[at + j]);
        ForwardOptions opts;
        opts.record_tape = true;
        ForwardResult<float> fr = forward(graph, raw, opts);
        MseResult<float> mse = mse_loss(fr.output, ref);
        sample_loss[j] = static_cast<double>(mse.loss);
        bptt_accumulate(graph, fr.tape, mse.grad, worker_grads[j % active]);
      });
      batch_grads.zero();
      for (std::size_t w = 0; w < active; ++w) {
        batch_grads.add_scaled(worker_grads[w], 1.0f);
      }
      batch_grads.scale(1.0f / static_cast<float>(bsz));
      for (std::size_t j = 0; j < bsz; ++j) loss_sum += sample_loss[j];
      seen += bsz;
      adam_step(graph, batch_grads, adam);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_mse = loss_sum / static_cast<double>(seen);
    if (epoch >= sched.validation_start_epoch && hooks.val_count > 0) {
      stats.val_mse = detail::validate_pass(graph, hooks, sched.threads);
    }
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();

    if (!std::isfinite(stats.train_mse) ||
        (stats.val_mse && !std::isfinite(*stats.val_mse))) {
      throw DivergenceError(
          "train: non-finite loss at epoch " + std::to_string(epoch) +
          " (train_mse=" + std::to_string(stats.train_mse) +
          "); last finite checkpoint is epoch " + std::to_string(epoch - 1));
    }

    if (hooks.save_checkpoint) hooks.save_checkpoint(graph, "last");
    if (stats.val_mse && *stats.val_mse < best_val) {
      best_val = *stats.val_mse;
      best_epoch = epoch;
      if (hooks.save_checkpoint) hooks.save_checkpoint(graph, "best");
    }
    if (hooks.on_epoch) hooks.on_epoch(stats);
    result.log.push_back(stats);
    result.final_train_mse = stats.train_mse;
    if (hooks.stop_early && hooks.stop_early(stats)) break;
  }

  // Without validation data the final state is the best available model.
  if (best_epoch == 0) {
    best_epoch = result.log.empty() ? 0 : result.log.back().epoch;
    best_val = std::numeric_limits<double>::quiet_NaN();
    if (hooks.save_checkpoint) hooks.save_checkpoint(graph, "best");
  }
  result.best_epoch = best_epoch;
  result.best_val_mse = best_val;
  return result;
}

}  // namespace snne
