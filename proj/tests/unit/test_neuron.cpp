#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "snne/neuron.hpp"
#include "snne/rng.hpp"

using namespace snne;

namespace {

Tensor4d scalar_tensor(double v) {
  Tensor4d t(1, 1, 1, 1);
  t.data[0] = v;
  return t;
}

}  // namespace

TEST_CASE("lif_step soft-reset worked sequence") {
  LifConfig cfg;
  cfg.threshold = 0.25;
  const double beta = 0.8;
  LifState<double> state = LifState<double>::zeros(1, 1, 1, 1);
  state.membrane.data[0] = 0.2;

  // V = 0.8*0.2 + 0.2 = 0.36 -> spike
  LifState<double> s1 = lif_step(state, scalar_tensor(0.2), beta, cfg);
  CHECK(s1.membrane.data[0] == doctest::Approx(0.36));
  CHECK(s1.spikes.data[0] == 1.0);

  // V = 0.8*0.36 - 0.25 = 0.038 -> no spike
  LifState<double> s2 = lif_step(s1, scalar_tensor(0.0), beta, cfg);
  CHECK(s2.membrane.data[0] == doctest::Approx(0.038));
  CHECK(s2.spikes.data[0] == 0.0);
}

TEST_CASE("quiescent neuron stays quiescent") {
  LifConfig cfg;
  LifState<double> state = LifState<double>::zeros(1, 1, 1, 1);
  const LifState<double> next = lif_step(state, scalar_tensor(0.0), 0.9, cfg);
  CHECK(next.membrane.data[0] == 0.0);
  CHECK(next.spikes.data[0] == 0.0);
}

TEST_CASE("lif_step rejects shape mismatch") {
  LifConfig cfg;
  LifState<double> state = LifState<double>::zeros(1, 1, 2, 2);
  Tensor4d input(1, 1, 2, 3);
  CHECK_THROWS_AS((void)lif_step(state, input, 0.5, cfg), ShapeError);
}

TEST_CASE("heaviside boundary fires at exactly V_th") {
  Tensor4d v(1, 1, 1, 3);
  v.data = {0.25, 0.25 - 1e-9, -2.0};
  const Tensor4d s = heaviside(v, 0.25);
  CHECK(s.data[0] == 1.0);
  CHECK(s.data[1] == 0.0);
  CHECK(s.data[2] == 0.0);
}

TEST_CASE("spikes are always binary along random trajectories") {
  LifConfig cfg;
  Rng rng(3);
  LifState<double> state = LifState<double>::zeros(1, 2, 3, 3);
  for (int t = 0; t < 20; ++t) {
    const Tensor4d input = oracles::random_tensor(rng, 1, 2, 3, 3, -0.5, 0.8);
    state = lif_step(state, input, 0.7, cfg);
    for (double s : state.spikes.data) CHECK((s == 0.0 || s == 1.0));
  }
}

TEST_CASE("membrane decays geometrically under zero input") {
  LifConfig cfg;
  cfg.threshold = 10.0;  // keep it below threshold throughout
  const double beta = 0.625;
  const double v0 = 1.0;
  LifState<double> state = LifState<double>::zeros(1, 1, 1, 1);
  state.membrane.data[0] = v0;
  for (int t = 1; t <= 12; ++t) {
    state = lif_step(state, scalar_tensor(0.0), beta, cfg);
    CHECK(state.membrane.data[0] == std::pow(beta, t) * v0);
  }
}

TEST_CASE("surrogate gradient: peak, worked value, symmetry, monotone decay") {
  LifConfig cfg;
  cfg.threshold = 0.25;
  cfg.surrogate_slope = 25.0;

  Tensor4d v(1, 1, 1, 1);
  v.data[0] = cfg.threshold;
  CHECK(surrogate_grad(v, cfg).data[0] == 1.0);

  v.data[0] = cfg.threshold + 0.04;  // 1/(1+1)^2
  CHECK(surrogate_grad(v, cfg).data[0] == doctest::Approx(0.25));

  // Even about V_th, bounded in (0,1], decreasing in |V - V_th|.
  double prev = 1.0;
  for (double d = 0.01; d < 3.0; d += 0.13) {
    Tensor4d hi(1, 1, 1, 1), lo(1, 1, 1, 1);
    hi.data[0] = cfg.threshold + d;
    lo.data[0] = cfg.threshold - d;
    const double gh = surrogate_grad(hi, cfg).data[0];
    const double gl = surrogate_grad(lo, cfg).data[0];
    CHECK(gh == doctest::Approx(gl));
    CHECK(gh > 0.0);
    CHECK(gh < prev);
    prev = gh;
  }
}

TEST_CASE("fast-sigmoid derivative equals the surrogate") {
  LifConfig cfg;
  Rng rng(19);
  for (int i = 0; i < 50; ++i) {
    Tensor4d v(1, 1, 1, 1);
    v.data[0] = rng.uniform_signed(2.0);
    auto smoothed = [&]() {
      return fast_sigmoid(v, cfg.threshold, cfg.surrogate_slope).data[0];
    };
    const double fd = oracles::central_diff(smoothed, v.data[0], 1e-6);
    CHECK(oracles::rel_error(fd, surrogate_grad(v, cfg).data[0]) < 1e-5);
  }
}

TEST_CASE("lif_backward: zero cotangents give zero gradients") {
  LifConfig cfg;
  const Tensor4d membrane = scalar_tensor(0.3);
  const Tensor4d prev = scalar_tensor(0.2);
  const Tensor4d zero = scalar_tensor(0.0);
  const LifGrads<double> g =
      lif_backward(membrane, prev, 0.6, cfg, zero, zero);
  CHECK(g.input.data[0] == 0.0);
  CHECK(g.prev_membrane.data[0] == 0.0);
  CHECK(g.prev_spikes.data[0] == 0.0);
  CHECK(g.decay_param == 0.0);
}

TEST_CASE("lif_backward: loss = spike output gives surrogate as input grad") {
  LifConfig cfg;
  const Tensor4d membrane = scalar_tensor(0.21);
  const LifGrads<double> g = lif_backward(
      membrane, Tensor4d(), 0.5, cfg, scalar_tensor(1.0), scalar_tensor(0.0));
  CHECK(g.input.data[0] ==
        doctest::Approx(surrogate_grad(membrane, cfg).data[0]));
}

TEST_CASE("two-step smoothed unroll matches finite differences") {
  // Loss = S~[2] of a single smoothed neuron driven by (i1, i2); gradients
  // via the step-level backward against central differences.
  LifConfig cfg;
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    double i1 = rng.uniform_signed(1.0);
    double i2 = rng.uniform_signed(1.0);
    double raw = rng.uniform_signed(1.5);  // decay parameter

    auto run = [&](bool want_grads, double* gi1, double* gi2, double* graw) {
      const double beta = logistic(raw);
      LifState<double> s0 = LifState<double>::zeros(1, 1, 1, 1);
      const LifState<double> s1 =
          lif_step(s0, scalar_tensor(i1), beta, cfg, SpikeMode::Smooth);
      const LifState<double> s2 =
          lif_step(s1, scalar_tensor(i2), beta, cfg, SpikeMode::Smooth);
      const double loss = s2.spikes.data[0];
      if (!want_grads) return loss;
      // Step 2 backward (loss = S[2]).
      const LifGrads<double> g2 =
          lif_backward(s2.membrane, s1.membrane, beta, cfg,
                       scalar_tensor(1.0), scalar_tensor(0.0));
      // Step 1 backward: cotangents flow into V[1] and S[1].
      const LifGrads<double> g1 = lif_backward(
          s1.membrane, s0.membrane, beta, cfg, g2.prev_spikes,
          g2.prev_membrane);
      *gi1 = g1.input.data[0];
      *gi2 = g2.input.data[0];
      *graw = g1.decay_param + g2.decay_param;
      return loss;
    };

    double gi1 = 0, gi2 = 0, graw = 0;
    run(true, &gi1, &gi2, &graw);
    auto loss_only = [&]() { return run(false, nullptr, nullptr, nullptr); };
    CHECK(oracles::rel_error(oracles::central_diff(loss_only, i1, 1e-5), gi1,
                             1e-4) < 1e-3);
    CHECK(oracles::rel_error(oracles::central_diff(loss_only, i2, 1e-5), gi2,
                             1e-4) < 1e-3);
    CHECK(oracles::rel_error(oracles::central_diff(loss_only, raw, 1e-5), graw,
                             1e-4) < 1e-3);
  }
}

TEST_CASE("decay parameterization keeps beta inside (0,1)") {
  for (double raw : {-50.0, -3.0, 0.0, 3.0, 50.0}) {
    const double beta = decay_beta(raw);
    CHECK(beta > 0.0);
    CHECK(beta < 1.0);
  }
  CHECK(decay_beta(decay_param_for(0.5)) == doctest::Approx(0.5));
  CHECK(decay_beta(decay_param_for(0.9)) == doctest::Approx(0.9));
}
