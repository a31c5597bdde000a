#pragma once

#include <cmath>
#include <utility>

#include "snne/errors.hpp"
#include "snne/tensor.hpp"

// Leaky integrate-and-fire dynamics with learnable decay, soft reset and the
// fast-sigmoid surrogate gradient:
//
//   V[t]   = beta * V[t-1] + I[t] - S[t-1] * v_th
//   S[t]   = heaviside(V[t] - v_th)
//   dS/dV ~= 1 / (1 + slope * |V - v_th|)^2
//
// The decay beta is parameterized through a logistic map so it always stays
// in (0,1). In Smooth mode the Heaviside is replaced by the fast-sigmoid
// itself, which makes the whole network differentiable; the surrogate is the
// exact derivative of that smoothed forward, which is what the gradient
// checks rely on.

namespace snne {

struct LifConfig {
  double threshold = 0.25;
  double surrogate_slope = 25.0;
  double decay_init = 0.5;

  void validate() const {
    if (!(threshold > 0.0)) {
      throw ConfigError("LifConfig: threshold must be > 0");
    }
    if (!(surrogate_slope > 0.0)) {
      throw ConfigError("LifConfig: surrogate_slope must be > 0");
    }
    if (!(decay_init > 0.0 && decay_init < 1.0)) {
      throw ConfigError("LifConfig: decay_init must lie in (0,1)");
    }
  }
};

enum class SpikeMode {
  Binary,  // production: Heaviside firing
  Smooth,  // gradient checking: fast-sigmoid firing
};

template <typename Scalar>
Scalar logistic(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

// Decay rate from its raw learnable parameter. Clamped away from the
// saturation points so beta stays strictly inside (0,1) even when the raw
// parameter drifts far out.
template <typename Scalar>
Scalar decay_beta(Scalar raw) {
  constexpr Scalar kMargin = Scalar(1e-6);
  const Scalar b = logistic(raw);
  return b < kMargin ? kMargin
                     : (b > Scalar(1) - kMargin ? Scalar(1) - kMargin : b);
}

// Raw learnable parameter for a desired initial decay rate.
inline double decay_param_for(double beta) {
  return std::log(beta / (1.0 - beta));
}

// Membrane potential and last spike map of one LIF layer.
template <typename Scalar>
struct LifState {
  Tensor4<Scalar> membrane;
  Tensor4<Scalar> spikes;

  static LifState zeros(int n, int c, int h, int w) {
    return LifState{Tensor4<Scalar>(n, c, h, w), Tensor4<Scalar>(n, c, h, w)};
  }
};

template <typename Scalar>
Tensor4<Scalar> heaviside(const Tensor4<Scalar>& v, Scalar v_th) {
  Tensor4<Scalar> out = Tensor4<Scalar>::zeros_like(v);
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.data[i] = v.data[i] >= v_th ? Scalar(1) : Scalar(0);
  }
  return out;
}

template <typename Scalar>
Tensor4<Scalar> fast_sigmoid(const Tensor4<Scalar>& v, Scalar v_th,
                             Scalar slope) {
  Tensor4<Scalar> out = Tensor4<Scalar>::zeros_like(v);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Scalar centered = v.data[i] - v_th;
    out.data[i] = centered / (Scalar(1) + slope * std::abs(centered));
  }
  return out;
}

// Elementwise 1/(1 + slope*|V - v_th|)^2: strictly positive, peaks at 1 for
// V = v_th.
template <typename Scalar>
Tensor4<Scalar> surrogate_grad(const Tensor4<Scalar>& v,
                               const LifConfig& cfg) {
  const Scalar v_th = Scalar(cfg.threshold);
  const Scalar slope = Scalar(cfg.surrogate_slope);
  Tensor4<Scalar> out = Tensor4<Scalar>::zeros_like(v);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Scalar denom =
        Scalar(1) + slope * std::abs(v.data[i] - v_th);
    out.data[i] = Scalar(1) / (denom * denom);
  }
  return out;
}

// One LIF timestep with soft reset, reference form. Returns the new state;
// `spikes` of the returned state is the layer output.
template <typename Scalar>
LifState<Scalar> lif_step(const Tensor4<Scalar>& prev_membrane,
                          const Tensor4<Scalar>& prev_spikes,
                          const Tensor4<Scalar>& input, Scalar beta,
                          const LifConfig& cfg,
                          SpikeMode mode = SpikeMode::Binary) {
  require_same_shape(prev_membrane, input, "lif_step membrane/input");
  require_same_shape(prev_spikes, input, "lif_step spikes/input");
  const Scalar v_th = Scalar(cfg.threshold);
  LifState<Scalar> next;
  next.membrane = Tensor4<Scalar>::zeros_like(input);
  for (std::size_t i = 0; i < input.size(); ++i) {
    next.membrane.data[i] = beta * prev_membrane.data[i] + input.data[i] -
                            prev_spikes.data[i] * v_th;
  }
  next.spikes = mode == SpikeMode::Binary
                    ? heaviside(next.membrane, v_th)
                    : fast_sigmoid(next.membrane, v_th,
                                   Scalar(cfg.surrogate_slope));
  return next;
}

template <typename Scalar>
LifState<Scalar> lif_step(const LifState<Scalar>& state,
                          const Tensor4<Scalar>& input, Scalar beta,
                          const LifConfig& cfg,
                          SpikeMode mode = SpikeMode::Binary) {
  return lif_step(state.membrane, state.spikes, input, beta, cfg, mode);
}

// Readout variant: pure leaky integration, no firing and no reset. The final
// layer of the network uses this so its membrane is the pixel prediction.
template <typename Scalar>
Tensor4<Scalar> lif_integrate(const Tensor4<Scalar>& membrane,
                              const Tensor4<Scalar>& input, Scalar beta) {
  require_same_shape(membrane, input, "lif_integrate membrane/input");
  Tensor4<Scalar> next = Tensor4<Scalar>::zeros_like(input);
  for (std::size_t i = 0; i < input.size(); ++i) {
    next.data[i] = beta * membrane.data[i] + input.data[i];
  }
  return next;
}

// Gradients of one LIF step. The reset path through S[t-1] is reported
// separately (grad_prev_spikes); callers accumulate it into the producing
// step, where the surrogate of that step applies.
template <typename Scalar>
struct LifGrads {
  Tensor4<Scalar> input;        // dL/dI[t]
  Tensor4<Scalar> prev_membrane;  // dL/dV[t-1]
  Tensor4<Scalar> prev_spikes;    // dL/dS[t-1]
  Scalar decay_param = Scalar(0);  // dL/d(raw decay parameter)
};

template <typename Scalar>
LifGrads<Scalar> lif_backward(const Tensor4<Scalar>& membrane,
                              const Tensor4<Scalar>& prev_membrane,
                              Scalar beta, const LifConfig& cfg,
                              const Tensor4<Scalar>& grad_spikes,
                              const Tensor4<Scalar>& grad_membrane) {
  if (membrane.empty()) {
    throw InternalError("lif_backward: missing saved membrane");
  }
  require_same_shape(membrane, grad_membrane, "lif_backward membrane grads");
  require_same_shape(membrane, grad_spikes, "lif_backward spike grads");
  const Scalar v_th = Scalar(cfg.threshold);
  const Scalar slope = Scalar(cfg.surrogate_slope);
  LifGrads<Scalar> grads;
  grads.input = Tensor4<Scalar>::zeros_like(membrane);
  grads.prev_membrane = Tensor4<Scalar>::zeros_like(membrane);
  grads.prev_spikes = Tensor4<Scalar>::zeros_like(membrane);
  const Scalar dbeta = beta * (Scalar(1) - beta);  // d(logistic)/d(raw)
  Scalar decay_acc(0);
  const bool first_step = prev_membrane.empty();
  for (std::size_t i = 0; i < membrane.size(); ++i) {
    const Scalar denom =
        Scalar(1) + slope * std::abs(membrane.data[i] - v_th);
    const Scalar sg = Scalar(1) / (denom * denom);
    const Scalar gv = grad_membrane.data[i] + sg * grad_spikes.data[i];
    grads.input.data[i] = gv;
    grads.prev_membrane.data[i] = beta * gv;
    grads.prev_spikes.data[i] = -v_th * gv;
    if (!first_step) decay_acc += gv * prev_membrane.data[i];
  }
  grads.decay_param = decay_acc * dbeta;
  return grads;
}

// Readout counterpart: V[t] = beta*V[t-1] + I[t].
template <typename Scalar>
LifGrads<Scalar> lif_integrate_backward(const Tensor4<Scalar>& prev_membrane,
                                        Scalar beta,
                                        const Tensor4<Scalar>& grad_membrane) {
  LifGrads<Scalar> grads;
  grads.input = grad_membrane;
  grads.prev_membrane = Tensor4<Scalar>::zeros_like(grad_membrane);
  const Scalar dbeta = beta * (Scalar(1) - beta);
  Scalar decay_acc(0);
  const bool first_step = prev_membrane.empty();
  for (std::size_t i = 0; i < grad_membrane.size(); ++i) {
    grads.prev_membrane.data[i] = beta * grad_membrane.data[i];
    if (!first_step) decay_acc += grad_membrane.data[i] * prev_membrane.data[i];
  }
  grads.decay_param = decay_acc * dbeta;
  return grads;
}

}  // namespace snne
