#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "snne/errors.hpp"
#include "snne/kernels.hpp"
#include "snne/neuron.hpp"
#include "snne/rng.hpp"
#include "snne/tape.hpp"
#include "snne/tensor.hpp"

// Spiking convolutional encoder-decoder assembly: direct input coding,
// spiking encoder blocks (conv-LIF-conv-LIF-pool), a two-conv bottleneck,
// decoder blocks (deconv-LIF-concat-conv-LIF-conv-LIF) with spike-to-spike
// skip connections, and a membrane-potential readout. At depth 4 with base 64
// this is the 19-convolution / 31.03M-parameter configuration; depth and
// widths are the ablation surface.

namespace snne {

struct NetworkConfig {
  int depth = 4;  // encoder/decoder stages, one of {3,4,5}
  int base_channels = 64;
  int timesteps = 5;
  LifConfig lif;
  int in_channels = 3;
  int height = 64;
  int width = 64;

  void validate() const {
    std::vector<std::string> problems;
    if (depth < 3 || depth > 5) {
      problems.push_back("depth must be one of {3,4,5}, got " +
                         std::to_string(depth));
    }
    if (base_channels < 1) {
      problems.push_back("base_channels must be >= 1, got " +
                         std::to_string(base_channels));
    }
    if (timesteps < 1) {
      problems.push_back("timesteps must be >= 1, got " +
                         std::to_string(timesteps));
    }
    if (in_channels < 1) {
      problems.push_back("in_channels must be >= 1, got " +
                         std::to_string(in_channels));
    }
    const int div = 1 << (depth >= 3 && depth <= 5 ? depth : 5);
    if (height < div || height % div != 0) {
      problems.push_back("height " + std::to_string(height) +
                         " must be a positive multiple of 2^depth = " +
                         std::to_string(div));
    }
    if (width < div || width % div != 0) {
      problems.push_back("width " + std::to_string(width) +
                         " must be a positive multiple of 2^depth = " +
                         std::to_string(div));
    }
    try {
      lif.validate();
    } catch (const ConfigError& e) {
      problems.push_back(e.what());
    }
    if (!problems.empty()) {
      std::string msg = "invalid network config:";
      for (const auto& p : problems) msg += "\n  - " + p;
      throw ConfigError(msg);
    }
  }
};

enum class LayerKind { Conv, Deconv, MaxPool, Concat, Lif, LifReadout };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Deconv: return "deconv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Concat: return "concat";
    case LayerKind::Lif: return "lif";
    case LayerKind::LifReadout: return "lif_readout";
  }
  return "?";
}

struct LayerDesc {
  LayerKind kind;
  int id = 0;
  int in_c = 0, in_h = 0, in_w = 0;
  int out_c = 0, out_h = 0, out_w = 0;
  int kernel = 0, stride = 1, padding = 0;
  int param_index = -1;  // conv/deconv parameter id
  int lif_index = -1;    // LIF layer id (including the readout)
  int skip_tap = -1;     // encoder stage whose skip this LIF provides
  int concat_skip = -1;  // encoder stage whose stored spikes this concat reads
};

template <typename Scalar>
struct LayerGraph {
  NetworkConfig cfg;
  std::vector<LayerDesc> layers;
  std::vector<ConvParams<Scalar>> conv_params;  // declaration order
  std::vector<Scalar> decay_raw;                // one per LIF layer

  int conv_layer_count() const {
    int n = 0;
    for (const auto& l : layers) n += l.kind == LayerKind::Conv ? 1 : 0;
    return n;
  }

  int lif_layer_count() const { return static_cast<int>(decay_raw.size()); }

  std::size_t parameter_count() const {
    std::size_t n = decay_raw.size();
    for (const auto& p : conv_params) n += p.weight.size() + p.bias.size();
    return n;
  }

  Scalar beta(int lif_index) const {
    return decay_beta(decay_raw[static_cast<std::size_t>(lif_index)]);
  }
};

using LayerGraphF = LayerGraph<float>;

namespace detail {

struct LayerListBuilder {
  std::vector<LayerDesc> layers;
  int next_param = 0;
  int next_lif = 0;
  int h = 0, w = 0, c = 0;

  LayerDesc& push(LayerKind kind) {
    LayerDesc d;
    d.kind = kind;
    d.id = static_cast<int>(layers.size());
    d.in_c = c;
    d.in_h = h;
    d.in_w = w;
    layers.push_back(d);
    return layers.back();
  }

  void conv(int out_c, int k, int stride, int pad) {
    LayerDesc& d = push(LayerKind::Conv);
    d.kernel = k;
    d.stride = stride;
    d.padding = pad;
    d.out_c = out_c;
    d.out_h = conv_output_dim(h, k, stride, pad);
    d.out_w = conv_output_dim(w, k, stride, pad);
    d.param_index = next_param++;
    c = out_c;
    h = d.out_h;
    w = d.out_w;
  }

  void deconv(int out_c, int k, int stride) {
    LayerDesc& d = push(LayerKind::Deconv);
    d.kernel = k;
    d.stride = stride;
    d.padding = 0;
    d.out_c = out_c;
    d.out_h = deconv_output_dim(h, k, stride, 0);
    d.out_w = deconv_output_dim(w, k, stride, 0);
    d.param_index = next_param++;
    c = out_c;
    h = d.out_h;
    w = d.out_w;
  }

  void lif(int skip_tap = -1) {
    LayerDesc& d = push(LayerKind::Lif);
    d.out_c = c;
    d.out_h = h;
    d.out_w = w;
    d.lif_index = next_lif++;
    d.skip_tap = skip_tap;
  }

  void readout() {
    LayerDesc& d = push(LayerKind::LifReadout);
    d.out_c = c;
    d.out_h = h;
    d.out_w = w;
    d.lif_index = next_lif++;
  }

  void pool() {
    LayerDesc& d = push(LayerKind::MaxPool);
    d.out_c = c;
    d.out_h = h / 2;
    d.out_w = w / 2;
    h = d.out_h;
    w = d.out_w;
  }

  void concat(int skip_channels, int stage) {
    LayerDesc& d = push(LayerKind::Concat);
    d.out_c = c + skip_channels;
    d.out_h = h;
    d.out_w = w;
    d.concat_skip = stage;
    c = d.out_c;
  }
};

}  // namespace detail

// Layer layout for a given config. Convolutions are 3x3/stride-1/pad-1 so the
// spatial size changes only at pools and deconvs (kernel 2, stride 2).
inline std::vector<LayerDesc> make_layers(const NetworkConfig& cfg) {
  detail::LayerListBuilder b;
  b.c = cfg.in_channels;
  b.h = cfg.height;
  b.w = cfg.width;
  std::vector<int> stage_channels(cfg.depth);
  for (int i = 0; i < cfg.depth; ++i) {
    stage_channels[i] = cfg.base_channels << i;
  }
  // Encoder: per stage conv-LIF-conv-LIF(skip tap)-pool.
  for (int i = 0; i < cfg.depth; ++i) {
    b.conv(stage_channels[i], 3, 1, 1);
    b.lif();
    b.conv(stage_channels[i], 3, 1, 1);
    b.lif(/*skip_tap=*/i);
    b.pool();
  }
  // Bottleneck: two convolutions at twice the deepest stage width.
  const int bottleneck = cfg.base_channels << cfg.depth;
  b.conv(bottleneck, 3, 1, 1);
  b.lif();
  b.conv(bottleneck, 3, 1, 1);
  b.lif();
  // Decoder: per stage deconv-LIF-concat-conv-LIF-conv-LIF.
  for (int i = cfg.depth - 1; i >= 0; --i) {
    b.deconv(stage_channels[i], 2, 2);
    b.lif();
    b.concat(stage_channels[i], i);
    b.conv(stage_channels[i], 3, 1, 1);
    b.lif();
    b.conv(stage_channels[i], 3, 1, 1);
    b.lif();
  }
  // Output convolution feeding the non-firing readout.
  b.conv(cfg.in_channels, 3, 1, 1);
  b.readout();
  return b.layers;
}

// Structural audit: channel/spatial progression, mirror symmetry and the
// convolution-count rule (2*depth + 2 + 2*depth + 1).
template <typename Scalar>
void audit(const LayerGraph<Scalar>& graph) {
  const NetworkConfig& cfg = graph.cfg;
  const int expected_convs = 4 * cfg.depth + 3;
  if (graph.conv_layer_count() != expected_convs) {
    throw InternalError("audit: expected " + std::to_string(expected_convs) +
                        " convolution layers, found " +
                        std::to_string(graph.conv_layer_count()));
  }
  int deconvs = 0;
  for (const auto& l : graph.layers) deconvs += l.kind == LayerKind::Deconv;
  if (deconvs != cfg.depth) {
    throw InternalError("audit: expected " + std::to_string(cfg.depth) +
                        " deconv layers, found " + std::to_string(deconvs));
  }
  // Encoder stage i emits base*2^i channels at input/2^i resolution; the
  // decoder mirrors it.
  int stage = 0;
  for (const auto& l : graph.layers) {
    if (l.kind == LayerKind::MaxPool) {
      const int want_c = cfg.base_channels << stage;
      const int want_h = cfg.height >> stage;
      if (l.in_c != want_c || l.in_h != want_h) {
        throw InternalError("audit: encoder stage " + std::to_string(stage) +
                            " has " + std::to_string(l.in_c) + "ch@" +
                            std::to_string(l.in_h) + ", expected " +
                            std::to_string(want_c) + "ch@" +
                            std::to_string(want_h));
      }
      ++stage;
    }
    if (l.kind == LayerKind::Concat) {
      const int want_c = 2 * (cfg.base_channels << l.concat_skip);
      if (l.out_c != want_c) {
        throw InternalError("audit: concat at stage " +
                            std::to_string(l.concat_skip) + " yields " +
                            std::to_string(l.out_c) + " channels, expected " +
                            std::to_string(want_c));
      }
    }
  }
  const LayerDesc& last = graph.layers.back();
  if (last.kind != LayerKind::LifReadout || last.out_c != cfg.in_channels ||
      last.out_h != cfg.height || last.out_w != cfg.width) {
    throw InternalError("audit: readout shape mismatch");
  }
  if (static_cast<int>(graph.decay_raw.size()) != 5 * cfg.depth + 3) {
    throw InternalError("audit: expected " + std::to_string(5 * cfg.depth + 3) +
                        " LIF layers, found " +
                        std::to_string(graph.decay_raw.size()));
  }
}

// Deterministic Kaiming-style init: weights uniform in +-1/sqrt(fan_in),
// biases zero, decay parameters at the configured initial rate.
template <typename Scalar>
LayerGraph<Scalar> build(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  LayerGraph<Scalar> graph;
  graph.cfg = cfg;
  graph.layers = make_layers(cfg);
  Rng rng(seed);
  for (const auto& l : graph.layers) {
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Deconv: {
        ConvParams<Scalar> p;
        p.weight = Tensor4<Scalar>(l.out_c, l.in_c, l.kernel, l.kernel);
        p.bias.assign(static_cast<std::size_t>(l.out_c), Scalar(0));
        p.stride = l.stride;
        p.padding = l.padding;
        const double bound =
            1.0 / std::sqrt(static_cast<double>(l.in_c) * l.kernel * l.kernel);
        for (auto& v : p.weight.data) {
          v = static_cast<Scalar>(rng.uniform_signed(bound));
        }
        graph.conv_params.push_back(std::move(p));
        break;
      }
      case LayerKind::Lif:
      case LayerKind::LifReadout:
        graph.decay_raw.push_back(
            static_cast<Scalar>(decay_param_for(cfg.lif.decay_init)));
        break;
      default:
        break;
    }
  }
  audit(graph);
  return graph;
}

// Direct coding: the image is presented unchanged at every timestep; all
// frames reference the same pixel data.
template <typename Scalar>
struct DirectCoded {
  Tensor4<Scalar> pixels;
  int timesteps = 0;

  const Tensor4<Scalar>& frame(int t) const {
    if (t < 0 || t >= timesteps) {
      throw InternalError("direct_code: frame " + std::to_string(t) +
                          " out of range");
    }
    return pixels;
  }
};

template <typename Scalar>
DirectCoded<Scalar> direct_code(const Tensor4<Scalar>& image, int timesteps) {
  if (timesteps < 1) {
    throw ConfigError("direct_code: timesteps must be >= 1, got " +
                      std::to_string(timesteps));
  }
  for (const Scalar v : image.data) {
    if (!(v >= Scalar(0) && v <= Scalar(1))) {
      throw PreconditionError(
          "direct_code: image values must lie in [0,1]");
    }
  }
  return DirectCoded<Scalar>{image, timesteps};
}

// Spike counts per LIF layer per timestep, batch-summed. The readout layer is
// excluded (it never fires).
struct SpikeTrace {
  int timesteps = 0;
  long images = 0;
  struct LayerActivity {
    int layer_id = 0;                       // position in the layer list
    long long neurons_per_image = 0;        // C*H*W
    std::vector<double> spikes_per_step;    // summed over the batch
    double total_spikes = 0.0;
  };
  std::vector<LayerActivity> lif;

  void accumulate(const SpikeTrace& other) {
    if (lif.empty()) {
      *this = other;
      return;
    }
    if (other.lif.size() != lif.size() || other.timesteps != timesteps) {
      throw InternalError("SpikeTrace: cannot accumulate mismatched traces");
    }
    images += other.images;
    for (std::size_t i = 0; i < lif.size(); ++i) {
      for (int t = 0; t < timesteps; ++t) {
        lif[i].spikes_per_step[t] += other.lif[i].spikes_per_step[t];
      }
      lif[i].total_spikes += other.lif[i].total_spikes;
    }
  }
};

struct ForwardOptions {
  bool record_tape = false;
  SpikeMode mode = SpikeMode::Binary;
  // Diagnostic: feed zeros instead of the stored skip spikes of one encoder
  // stage (used to verify skips are live paths).
  int zero_skip_stage = -1;
};

template <typename Scalar>
struct ForwardResult {
  Tensor4<Scalar> output;
  Tape<Scalar> tape;
  SpikeTrace trace;
};

// Evaluates the graph over all timesteps with persistent LIF state. The
// output is the readout membrane at the final timestep.
template <typename Scalar>
ForwardResult<Scalar> forward(const LayerGraph<Scalar>& graph,
                              const Tensor4<Scalar>& image,
                              const ForwardOptions& opts = {}) {
  const NetworkConfig& cfg = graph.cfg;
  if (image.channels != cfg.in_channels || image.height != cfg.height ||
      image.width != cfg.width) {
    throw ConfigError("forward: image " + image.shape_string() +
                      " does not match configured input (" +
                      std::to_string(cfg.in_channels) + "," +
                      std::to_string(cfg.height) + "," +
                      std::to_string(cfg.width) + ")");
  }
  const int T = cfg.timesteps;
  const DirectCoded<Scalar> coded = direct_code(image, T);
  const bool record = opts.record_tape;

  ForwardResult<Scalar> result;
  Tape<Scalar>& tape = result.tape;

  const int n_lif = graph.lif_layer_count();
  std::vector<Scalar> betas(n_lif);
  for (int i = 0; i < n_lif; ++i) betas[i] = graph.beta(i);

  // Trace skeleton (readout excluded).
  result.trace.timesteps = T;
  result.trace.images = image.batch;
  for (const auto& l : graph.layers) {
    if (l.kind == LayerKind::Lif) {
      SpikeTrace::LayerActivity a;
      a.layer_id = l.id;
      a.neurons_per_image =
          static_cast<long long>(l.out_c) * l.out_h * l.out_w;
      a.spikes_per_step.assign(static_cast<std::size_t>(T), 0.0);
      result.trace.lif.push_back(std::move(a));
    }
  }

  if (record) {
    tape.nodes.reserve(graph.layers.size() * static_cast<std::size_t>(T));
  }

  // Previous-step slots (record mode) / owned state (plain mode), per LIF.
  std::vector<int> prev_v_slot(n_lif, -1), prev_s_slot(n_lif, -1);
  std::vector<Tensor4<Scalar>> state_v(n_lif), state_s(n_lif);
  std::vector<Tensor4<Scalar>> zero_state(n_lif);  // V[0] = S[0] = 0

  // Current value cursor.
  Tensor4<Scalar> cur_own;
  const Tensor4<Scalar>* cur = nullptr;
  int cur_slot = -1;
  auto emit = [&](Tensor4<Scalar>&& t) {
    if (record) {
      cur_slot = tape.make_slot();
      tape.values[static_cast<std::size_t>(cur_slot)] = std::move(t);
      cur = &tape.values[static_cast<std::size_t>(cur_slot)];
    } else {
      cur_own = std::move(t);
      cur = &cur_own;
      cur_slot = -1;
    }
  };

  int image_slot = -1;
  if (record) {
    image_slot = tape.make_slot();
    tape.values[static_cast<std::size_t>(image_slot)] = coded.pixels;
  }

  std::vector<Tensor4<Scalar>> skip_vals(
      static_cast<std::size_t>(cfg.depth));
  std::vector<int> skip_slots(static_cast<std::size_t>(cfg.depth), -1);

  int lif_trace_slot = 0;
  for (int t = 0; t < T; ++t) {
    if (record) {
      cur = &tape.values[static_cast<std::size_t>(image_slot)];
      cur_slot = image_slot;
    } else {
      cur = &coded.frame(t);
      cur_slot = -1;
    }
    lif_trace_slot = 0;
    for (const auto& l : graph.layers) {
      switch (l.kind) {
        case LayerKind::Conv:
        case LayerKind::Deconv: {
          const ConvParams<Scalar>& p =
              graph.conv_params[static_cast<std::size_t>(l.param_index)];
          Tensor4<Scalar> out = l.kind == LayerKind::Conv
                                    ? conv2d_forward(*cur, p)
                                    : deconv2d_forward(*cur, p);
          const int in_slot = cur_slot;
          emit(std::move(out));
          if (record) {
            TapeNode node;
            node.kind = l.kind == LayerKind::Conv ? OpKind::Conv2d
                                                  : OpKind::Deconv2d;
            node.param_index = l.param_index;
            node.in0 = in_slot;
            node.out0 = cur_slot;
            tape.nodes.push_back(std::move(node));
          }
          break;
        }
        case LayerKind::Lif: {
          const int li = l.lif_index;
          const Tensor4<Scalar>& v_prev =
              record ? (prev_v_slot[li] >= 0
                            ? tape.values[static_cast<std::size_t>(
                                  prev_v_slot[li])]
                            : zero_state[li])
                     : (state_v[li].empty() ? zero_state[li] : state_v[li]);
          const Tensor4<Scalar>& s_prev =
              record ? (prev_s_slot[li] >= 0
                            ? tape.values[static_cast<std::size_t>(
                                  prev_s_slot[li])]
                            : zero_state[li])
                     : (state_s[li].empty() ? zero_state[li] : state_s[li]);
          if (v_prev.empty()) {
            zero_state[li] = Tensor4<Scalar>::zeros_like(*cur);
          }
          const Tensor4<Scalar>& v_ref =
              v_prev.empty() ? zero_state[li] : v_prev;
          const Tensor4<Scalar>& s_ref =
              s_prev.empty() ? zero_state[li] : s_prev;
          LifState<Scalar> next =
              lif_step(v_ref, s_ref, *cur, betas[li], cfg.lif, opts.mode);
          // Trace (binary mode counts spikes; smooth mode sums activations).
          auto& activity =
              result.trace.lif[static_cast<std::size_t>(lif_trace_slot)];
          activity.spikes_per_step[static_cast<std::size_t>(t)] +=
              static_cast<double>(flat(next.spikes).template cast<double>().sum());
          ++lif_trace_slot;

          const int in_slot = cur_slot;
          if (record) {
            TapeNode node;
            node.kind = OpKind::LifSpike;
            node.param_index = li;
            node.in0 = in_slot;
            node.in1 = prev_v_slot[li];
            node.in2 = prev_s_slot[li];
            const int v_slot = tape.make_slot();
            tape.values[static_cast<std::size_t>(v_slot)] =
                std::move(next.membrane);
            node.out0 = v_slot;
            emit(std::move(next.spikes));
            node.out1 = cur_slot;
            prev_v_slot[li] = v_slot;
            prev_s_slot[li] = cur_slot;
            tape.nodes.push_back(std::move(node));
          } else {
            state_v[li] = std::move(next.membrane);
            emit(std::move(next.spikes));
            state_s[li] = *cur;
          }
          if (l.skip_tap >= 0) {
            if (opts.zero_skip_stage == l.skip_tap) {
              Tensor4<Scalar> zeros = Tensor4<Scalar>::zeros_like(*cur);
              if (record) {
                const int zslot = tape.make_slot();
                tape.values[static_cast<std::size_t>(zslot)] =
                    std::move(zeros);
                skip_slots[static_cast<std::size_t>(l.skip_tap)] = zslot;
              } else {
                skip_vals[static_cast<std::size_t>(l.skip_tap)] =
                    std::move(zeros);
              }
            } else if (record) {
              skip_slots[static_cast<std::size_t>(l.skip_tap)] = cur_slot;
            } else {
              skip_vals[static_cast<std::size_t>(l.skip_tap)] = *cur;
            }
          }
          break;
        }
        case LayerKind::LifReadout: {
          const int li = l.lif_index;
          const Tensor4<Scalar>& v_prev =
              record ? (prev_v_slot[li] >= 0
                            ? tape.values[static_cast<std::size_t>(
                                  prev_v_slot[li])]
                            : zero_state[li])
                     : (state_v[li].empty() ? zero_state[li] : state_v[li]);
          if (v_prev.empty()) {
            zero_state[li] = Tensor4<Scalar>::zeros_like(*cur);
          }
          const Tensor4<Scalar>& v_ref =
              v_prev.empty() ? zero_state[li] : v_prev;
          Tensor4<Scalar> v_new = lif_integrate(v_ref, *cur, betas[li]);
          const int in_slot = cur_slot;
          if (record) {
            TapeNode node;
            node.kind = OpKind::LifIntegrate;
            node.param_index = li;
            node.in0 = in_slot;
            node.in1 = prev_v_slot[li];
            emit(std::move(v_new));
            node.out0 = cur_slot;
            prev_v_slot[li] = cur_slot;
            tape.nodes.push_back(std::move(node));
          } else {
            state_v[li] = std::move(v_new);
            cur = &state_v[li];
            cur_slot = -1;
          }
          break;
        }
        case LayerKind::MaxPool: {
          auto [out, idx] = maxpool2x2(*cur);
          const int in_slot = cur_slot;
          const int in_h = cur->height, in_w = cur->width;
          emit(std::move(out));
          if (record) {
            TapeNode node;
            node.kind = OpKind::MaxPool;
            node.in0 = in_slot;
            node.out0 = cur_slot;
            node.pool = std::move(idx);
            node.pool_in_h = in_h;
            node.pool_in_w = in_w;
            tape.nodes.push_back(std::move(node));
          }
          break;
        }
        case LayerKind::Concat: {
          const std::size_t stage = static_cast<std::size_t>(l.concat_skip);
          const Tensor4<Scalar>& skip =
              record ? tape.values[static_cast<std::size_t>(skip_slots[stage])]
                     : skip_vals[stage];
          const int left_channels = cur->channels;
          Tensor4<Scalar> out = concat_channels(*cur, skip);
          const int in_slot = cur_slot;
          emit(std::move(out));
          if (record) {
            TapeNode node;
            node.kind = OpKind::Concat;
            node.in0 = in_slot;
            node.in1 = skip_slots[stage];
            node.out0 = cur_slot;
            node.concat_left_channels = left_channels;
            tape.nodes.push_back(std::move(node));
          }
          break;
        }
      }
    }
  }

  for (auto& activity : result.trace.lif) {
    for (double s : activity.spikes_per_step) activity.total_spikes += s;
  }

  if (record) {
    tape.output_slot = cur_slot;
    tape.finished = true;
    result.output = tape.values[static_cast<std::size_t>(cur_slot)];
  } else {
    const int li = graph.layers.back().lif_index;
    result.output = std::move(state_v[li]);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization: magic + version + text config header + raw f32
// little-endian parameter blobs in declaration order.

inline constexpr char kCheckpointMagic[8] = {'S', 'N', 'N', 'E',
                                             'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void append_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

inline void append_f32(std::string& out, const float* data, std::size_t n) {
  out.append(reinterpret_cast<const char*>(data), n * sizeof(float));
}

struct ByteReader {
  const std::string& bytes;
  std::size_t at = 0;

  void read(void* dst, std::size_t n) {
    if (at + n > bytes.size()) {
      throw CheckpointError("checkpoint: truncated stream");
    }
    std::memcpy(dst, bytes.data() + at, n);
    at += n;
  }

  std::uint32_t read_u32() {
    std::uint32_t v;
    read(&v, 4);
    return v;
  }
};

}  // namespace detail

inline std::string serialize(const LayerGraph<float>& graph) {
  std::string out;
  out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::append_u32(out, kCheckpointVersion);
  std::string header;
  const NetworkConfig& cfg = graph.cfg;
  header += "depth=" + std::to_string(cfg.depth) + "\n";
  header += "base_channels=" + std::to_string(cfg.base_channels) + "\n";
  header += "timesteps=" + std::to_string(cfg.timesteps) + "\n";
  header += "threshold=" + detail::format_double(cfg.lif.threshold) + "\n";
  header += "surrogate_slope=" +
            detail::format_double(cfg.lif.surrogate_slope) + "\n";
  header += "decay_init=" + detail::format_double(cfg.lif.decay_init) + "\n";
  header += "in_channels=" + std::to_string(cfg.in_channels) + "\n";
  header += "height=" + std::to_string(cfg.height) + "\n";
  header += "width=" + std::to_string(cfg.width) + "\n";
  detail::append_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  std::size_t next_param = 0, next_lif = 0;
  for (const auto& l : graph.layers) {
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Deconv: {
        const auto& p = graph.conv_params[next_param++];
        detail::append_f32(out, p.weight.data.data(), p.weight.size());
        detail::append_f32(out, p.bias.data(), p.bias.size());
        break;
      }
      case LayerKind::Lif:
      case LayerKind::LifReadout:
        detail::append_f32(out, &graph.decay_raw[next_lif++], 1);
        break;
      default:
        break;
    }
  }
  return out;
}

inline LayerGraph<float> deserialize(const std::string& bytes) {
  detail::ByteReader r{bytes};
  char magic[8];
  r.read(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw CheckpointError("checkpoint: bad magic bytes");
  }
  const std::uint32_t version = r.read_u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " +
                          std::to_string(version));
  }
  const std::uint32_t header_len = r.read_u32();
  std::string header(header_len, '\0');
  r.read(header.data(), header_len);

  NetworkConfig cfg;
  std::istringstream lines(header);
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "depth") cfg.depth = std::stoi(value);
    else if (key == "base_channels") cfg.base_channels = std::stoi(value);
    else if (key == "timesteps") cfg.timesteps = std::stoi(value);
    else if (key == "threshold") cfg.lif.threshold = std::stod(value);
    else if (key == "surrogate_slope") cfg.lif.surrogate_slope = std::stod(value);
    else if (key == "decay_init") cfg.lif.decay_init = std::stod(value);
    else if (key == "in_channels") cfg.in_channels = std::stoi(value);
    else if (key == "height") cfg.height = std::stoi(value);
    else if (key == "width") cfg.width = std::stoi(value);
    else throw CheckpointError("checkpoint: unknown header key '" + key + "'");
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: invalid config: ") +
                          e.what());
  }

  LayerGraph<float> graph;
  graph.cfg = cfg;
  graph.layers = make_layers(cfg);
  for (const auto& l : graph.layers) {
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Deconv: {
        ConvParams<float> p;
        p.weight = Tensor4<float>(l.out_c, l.in_c, l.kernel, l.kernel);
        p.bias.assign(static_cast<std::size_t>(l.out_c), 0.0f);
        p.stride = l.stride;
        p.padding = l.padding;
        r.read(p.weight.data.data(), p.weight.size() * sizeof(float));
        r.read(p.bias.data(), p.bias.size() * sizeof(float));
        graph.conv_params.push_back(std::move(p));
        break;
      }
      case LayerKind::Lif:
      case LayerKind::LifReadout: {
        float raw;
        r.read(&raw, sizeof(float));
        graph.decay_raw.push_back(raw);
        break;
      }
      default:
        break;
    }
  }
  if (r.at != bytes.size()) {
    throw CheckpointError("checkpoint: trailing bytes after parameters");
  }
  audit(graph);
  return graph;
}

inline void save_checkpoint(const std::string& path,
                            const LayerGraph<float>& graph) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open for write: " + path);
  const std::string bytes = serialize(graph);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed: " + path);
}

inline LayerGraph<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

}  // namespace snne
