#pragma once

#include <deque>
#include <vector>

#include "snne/tensor.hpp"

// Reverse-mode tape for BPTT. The forward pass appends one node per
// operation across the whole unrolled time axis; replaying the nodes in
// reverse visits each exactly once. Values are addressed by slot id so that
// tensors shared across timesteps (the direct-coded input, membrane chains)
// are stored once.

namespace snne {

enum class OpKind {
  Conv2d,
  Deconv2d,
  MaxPool,
  Concat,
  LifSpike,
  LifIntegrate,
};

struct TapeNode {
  OpKind kind;
  // Conv/Deconv: index into the graph's conv parameter store.
  // LifSpike/LifIntegrate: index of the LIF layer (decay parameter).
  int param_index = -1;
  // Input slots. Conv/Deconv/MaxPool: in0 = input. Concat: in0 = left,
  // in1 = right. Lif*: in0 = presynaptic input, in1 = previous membrane,
  // in2 = previous spikes (-1 on the first timestep).
  int in0 = -1, in1 = -1, in2 = -1;
  // Output slots. Lif: out0 = membrane, out1 = spikes. Others: out0.
  int out0 = -1, out1 = -1;
  PoolIndices pool;  // MaxPool only
  int pool_in_h = 0, pool_in_w = 0;
  int concat_left_channels = 0;  // Concat only
};

template <typename Scalar>
struct Tape {
  std::vector<TapeNode> nodes;
  // Slot id -> saved forward value. A deque so references held by the
  // forward walker stay valid while slots are appended.
  std::deque<Tensor4<Scalar>> values;
  int output_slot = -1;
  bool finished = false;
  bool consumed = false;

  int make_slot() {
    values.emplace_back();
    return static_cast<int>(values.size()) - 1;
  }
};

}  // namespace snne
