#include <doctest.h>

#include <cstring>

#include "oracles.hpp"
#include "snne/network.hpp"
#include "snne/rng.hpp"

using namespace snne;

namespace {

NetworkConfig small_cfg() {
  NetworkConfig cfg;
  cfg.depth = 3;
  cfg.base_channels = 2;
  cfg.timesteps = 2;
  cfg.height = 16;
  cfg.width = 16;
  return cfg;
}

Tensor4f random_image(Rng& rng, const NetworkConfig& cfg, int batch = 1) {
  Tensor4f img(batch, cfg.in_channels, cfg.height, cfg.width);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("depth-4 graph has 19 convolutions and 31.03M parameters") {
  NetworkConfig cfg;
  cfg.depth = 4;
  cfg.base_channels = 64;
  cfg.height = 512;
  cfg.width = 512;
  const LayerGraph<float> graph = build<float>(cfg, 1);
  CHECK(graph.conv_layer_count() == 19);
  // 31,026,560 weights + 6,851 biases + 23 decay scalars; +0.011% vs 31.03M.
  CHECK(graph.parameter_count() == 31033434u);
  const double rel =
      std::abs(static_cast<double>(graph.parameter_count()) - 31.03e6) /
      31.03e6;
  CHECK(rel < 0.005);
  CHECK(graph.lif_layer_count() == 23);
}

TEST_CASE("depth-3 graph has 15 convolutions") {
  NetworkConfig cfg;
  cfg.depth = 3;
  cfg.height = 64;
  cfg.width = 64;
  const LayerGraph<float> graph = build<float>(cfg, 1);
  CHECK(graph.conv_layer_count() == 15);
}

TEST_CASE("same seed builds bitwise-identical parameters") {
  const NetworkConfig cfg = small_cfg();
  const LayerGraph<float> a = build<float>(cfg, 99);
  const LayerGraph<float> b = build<float>(cfg, 99);
  REQUIRE(a.conv_params.size() == b.conv_params.size());
  for (std::size_t i = 0; i < a.conv_params.size(); ++i) {
    CHECK(std::memcmp(a.conv_params[i].weight.data.data(),
                      b.conv_params[i].weight.data.data(),
                      a.conv_params[i].weight.size() * sizeof(float)) == 0);
  }
  const LayerGraph<float> c = build<float>(cfg, 100);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.conv_params[0].weight.size(); ++i) {
    any_diff |= a.conv_params[0].weight.data[i] !=
                c.conv_params[0].weight.data[i];
  }
  CHECK(any_diff);
}

TEST_CASE("config validation reports all problems at once") {
  NetworkConfig cfg;
  cfg.depth = 7;
  cfg.timesteps = 0;
  cfg.height = 100;  // not divisible
  cfg.width = 64;
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("depth") != std::string::npos);
    CHECK(msg.find("timesteps") != std::string::npos);
    CHECK(msg.find("height") != std::string::npos);
  }
}

TEST_CASE("direct coding repeats the image and shares pixel data") {
  Rng rng(1);
  NetworkConfig cfg = small_cfg();
  const Tensor4f img = random_image(rng, cfg);
  const DirectCoded<float> coded = direct_code(img, 5);
  for (int t = 0; t < 5; ++t) {
    const Tensor4f& frame = coded.frame(t);
    REQUIRE(frame.same_shape(img));
    CHECK(&frame == &coded.frame(0));  // same storage for every timestep
    for (std::size_t i = 0; i < img.size(); ++i) {
      CHECK(frame.data[i] == img.data[i]);
    }
  }
  CHECK_THROWS_AS((void)direct_code(img, 0), ConfigError);
  Tensor4f bad = img;
  bad.data[0] = 1.5f;
  CHECK_THROWS_AS((void)direct_code(bad, 2), PreconditionError);
}

TEST_CASE("forward output shape equals input shape") {
  Rng rng(2);
  const NetworkConfig cfg = small_cfg();
  const LayerGraph<float> graph = build<float>(cfg, 7);
  const Tensor4f img = random_image(rng, cfg);
  const ForwardResult<float> fr = forward(graph, img);
  CHECK(fr.output.same_shape(img));
}

TEST_CASE("quiescent network: zero input with zero biases yields zeros") {
  const NetworkConfig cfg = small_cfg();
  const LayerGraph<float> graph = build<float>(cfg, 7);
  Tensor4f img(1, cfg.in_channels, cfg.height, cfg.width);
  const ForwardResult<float> fr = forward(graph, img);
  for (float v : fr.output.data) CHECK(v == 0.0f);
  for (const auto& a : fr.trace.lif) CHECK(a.total_spikes == 0.0);
}

TEST_CASE("spike trace covers all LIF layers except the readout") {
  Rng rng(3);
  const NetworkConfig cfg = small_cfg();
  const LayerGraph<float> graph = build<float>(cfg, 11);
  const Tensor4f img = random_image(rng, cfg, 2);
  const ForwardResult<float> fr = forward(graph, img);
  CHECK(static_cast<int>(fr.trace.lif.size()) == graph.lif_layer_count() - 1);
  CHECK(fr.trace.images == 2);
  for (const auto& a : fr.trace.lif) {
    REQUIRE(static_cast<int>(a.spikes_per_step.size()) == cfg.timesteps);
    for (double s : a.spikes_per_step) {
      CHECK(s >= 0.0);
      CHECK(s <= static_cast<double>(a.neurons_per_image) * fr.trace.images);
    }
  }
}

TEST_CASE("forward is repeatable: state resets between sequences") {
  Rng rng(4);
  const NetworkConfig cfg = small_cfg();
  const LayerGraph<float> graph = build<float>(cfg, 13);
  const Tensor4f img = random_image(rng, cfg);
  const ForwardResult<float> a = forward(graph, img);
  const ForwardResult<float> b = forward(graph, img);
  REQUIRE(a.output.same_shape(b.output));
  CHECK(std::memcmp(a.output.data.data(), b.output.data.data(),
                    a.output.size() * sizeof(float)) == 0);
}

TEST_CASE("skip connections are live paths") {
  // Pick a seed whose taps all carry spikes (a silent tap says nothing about
  // the wiring), then check that cutting any one of them changes the output.
  Rng rng(5);
  NetworkConfig cfg = small_cfg();
  cfg.base_channels = 4;
  cfg.timesteps = 3;
  const Tensor4f img = random_image(rng, cfg);
  LayerGraph<float> graph;
  bool taps_alive = false;
  for (std::uint64_t seed = 17; seed < 47 && !taps_alive; ++seed) {
    graph = build<float>(cfg, seed);
    const ForwardResult<float> probe = forward(graph, img);
    taps_alive = true;
    for (const auto& l : graph.layers) {
      if (l.skip_tap < 0) continue;
      double spikes = 0.0;
      for (const auto& a : probe.trace.lif) {
        if (a.layer_id == l.id) spikes = a.total_spikes;
      }
      taps_alive &= spikes > 0.0;
    }
  }
  REQUIRE(taps_alive);
  // Binary firing can absorb a cut skip (no downstream spike flips) and the
  // fast-sigmoid bounds activations by 1/slope, which attenuates deep-skip
  // perturbations below float resolution. Liveness of the dataflow path is
  // therefore asserted on the smoothed forward in double precision.
  LayerGraph<double> dgraph = build<double>(cfg, 17);
  Tensor4d dimg = tensor_cast<double>(img);
  ForwardOptions smooth;
  smooth.mode = SpikeMode::Smooth;
  const Tensor4d base = forward(dgraph, dimg, smooth).output;
  for (int stage = 0; stage < cfg.depth; ++stage) {
    ForwardOptions opts = smooth;
    opts.zero_skip_stage = stage;
    const Tensor4d cut = forward(dgraph, dimg, opts).output;
    bool differs = false;
    for (std::size_t i = 0; i < base.size(); ++i) {
      differs |= base.data[i] != cut.data[i];
    }
    CHECK_MESSAGE(differs, "stage " << stage << " skip appears dead");
  }
}

TEST_CASE("forward rejects mismatched input shape") {
  const NetworkConfig cfg = small_cfg();
  const LayerGraph<float> graph = build<float>(cfg, 1);
  Tensor4f wrong(1, 3, 32, 32);
  CHECK_THROWS_AS((void)forward(graph, wrong), ConfigError);
}

TEST_CASE("checkpoint round-trip is bitwise identity") {
  Rng rng(6);
  NetworkConfig cfg = small_cfg();
  cfg.lif.threshold = 0.3125;
  const LayerGraph<float> graph = build<float>(cfg, 23);
  const std::string bytes = serialize(graph);
  const LayerGraph<float> back = deserialize(bytes);
  CHECK(back.cfg.depth == cfg.depth);
  CHECK(back.cfg.lif.threshold == cfg.lif.threshold);
  REQUIRE(back.conv_params.size() == graph.conv_params.size());
  for (std::size_t i = 0; i < graph.conv_params.size(); ++i) {
    CHECK(std::memcmp(back.conv_params[i].weight.data.data(),
                      graph.conv_params[i].weight.data.data(),
                      graph.conv_params[i].weight.size() * sizeof(float)) ==
          0);
  }
  CHECK(back.decay_raw == graph.decay_raw);

  const Tensor4f img = random_image(rng, cfg);
  const Tensor4f out_a = forward(graph, img).output;
  const Tensor4f out_b = forward(back, img).output;
  CHECK(std::memcmp(out_a.data.data(), out_b.data.data(),
                    out_a.size() * sizeof(float)) == 0);
}

TEST_CASE("checkpoint corruption is detected") {
  const LayerGraph<float> graph = build<float>(small_cfg(), 3);
  std::string bytes = serialize(graph);

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS((void)deserialize(bad_magic), CheckpointError);

  std::string truncated = bytes.substr(0, bytes.size() - 17);
  CHECK_THROWS_AS((void)deserialize(truncated), CheckpointError);

  std::string bad_version = bytes;
  bad_version[8] = 42;
  CHECK_THROWS_AS((void)deserialize(bad_version), CheckpointError);

  std::string trailing = bytes + "extra";
  CHECK_THROWS_AS((void)deserialize(trailing), CheckpointError);
}
