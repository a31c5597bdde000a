#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "snne/errors.hpp"

namespace snne {

// Dense rank-4 array (batch, channels, height, width), row-major with width
// fastest. The universal value type for images, feature maps and weights.
template <typename Scalar>
struct Tensor4 {
  int batch = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<Scalar> data;

  Tensor4() = default;

  Tensor4(int n, int c, int h, int w)
      : batch(n), channels(c), height(h), width(w) {
    if (n < 1 || c < 1 || h < 1 || w < 1) {
      throw ShapeError("Tensor4 dimensions must all be >= 1, got " +
                       shape_to_string(n, c, h, w));
    }
    data.assign(static_cast<std::size_t>(n) * c * h * w, Scalar(0));
  }

  static Tensor4 zeros_like(const Tensor4& other) {
    return Tensor4(other.batch, other.channels, other.height, other.width);
  }

  bool empty() const { return data.empty(); }

  std::size_t size() const { return data.size(); }

  bool same_shape(const Tensor4& o) const {
    return batch == o.batch && channels == o.channels && height == o.height &&
           width == o.width;
  }

  Scalar& operator()(int n, int c, int y, int x) {
    return data[flat_index(n, c, y, x)];
  }
  Scalar operator()(int n, int c, int y, int x) const {
    return data[flat_index(n, c, y, x)];
  }

  // Pointer to the contiguous (height x width) plane of sample n, channel c.
  Scalar* plane(int n, int c) { return data.data() + flat_index(n, c, 0, 0); }
  const Scalar* plane(int n, int c) const {
    return data.data() + flat_index(n, c, 0, 0);
  }

  std::size_t flat_index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * channels + c) * height + y) * width + x;
  }

  std::string shape_string() const {
    return shape_to_string(batch, channels, height, width);
  }

  static std::string shape_to_string(int n, int c, int h, int w) {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

template <typename Scalar>
using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
template <typename Scalar>
using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

// Flat elementwise view over the whole tensor.
template <typename Scalar>
ArrayMap<Scalar> flat(Tensor4<Scalar>& t) {
  return ArrayMap<Scalar>(t.data.data(), static_cast<Eigen::Index>(t.size()));
}

template <typename Scalar>
ConstArrayMap<Scalar> flat(const Tensor4<Scalar>& t) {
  return ConstArrayMap<Scalar>(t.data.data(),
                               static_cast<Eigen::Index>(t.size()));
}

template <typename Scalar>
void require_same_shape(const Tensor4<Scalar>& a, const Tensor4<Scalar>& b,
                        const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " +
                     a.shape_string() + " vs " + b.shape_string());
  }
}

template <typename Scalar>
Tensor4<Scalar> tensor_cast(const Tensor4<float>& t) {
  Tensor4<Scalar> out(t.batch, t.channels, t.height, t.width);
  for (std::size_t i = 0; i < t.size(); ++i) out.data[i] = Scalar(t.data[i]);
  return out;
}

// Convolution / transposed-convolution parameters. Weight layout is
// (out_channels, in_channels, k, k); one bias per output channel.
template <typename Scalar>
struct ConvParams {
  Tensor4<Scalar> weight;
  std::vector<Scalar> bias;
  int stride = 1;
  int padding = 0;

  int out_channels() const { return weight.batch; }
  int in_channels() const { return weight.channels; }
  int kernel() const { return weight.height; }

  void validate() const {
    if (weight.height != weight.width) {
      throw ShapeError("ConvParams: kernel must be square, got " +
                       weight.shape_string());
    }
    if (kernel() < 1 || stride < 1 || padding < 0) {
      throw ShapeError("ConvParams: require k >= 1, stride >= 1, padding >= 0");
    }
    if (static_cast<int>(bias.size()) != out_channels()) {
      throw ShapeError("ConvParams: bias length " +
                       std::to_string(bias.size()) + " != out_channels " +
                       std::to_string(out_channels()));
    }
  }
};

using ConvParamsF = ConvParams<float>;

// Argmax bookkeeping for max-pool backward: for every output element, the
// flat offset (y * width + x) of the winning element inside its input plane.
struct PoolIndices {
  int out_height = 0;
  int out_width = 0;
  std::vector<std::int32_t> winner;
};

}  // namespace snne
