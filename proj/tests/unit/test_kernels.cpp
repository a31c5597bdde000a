#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "snne/kernels.hpp"
#include "snne/rng.hpp"

using namespace snne;

namespace {

ConvParams<double> random_params(Rng& rng, int out_c, int in_c, int k,
                                 int stride, int pad) {
  ConvParams<double> p;
  p.weight = oracles::random_tensor(rng, out_c, in_c, k, k);
  p.bias.resize(static_cast<std::size_t>(out_c));
  for (auto& b : p.bias) b = rng.uniform_signed(0.5);
  p.stride = stride;
  p.padding = pad;
  return p;
}

}  // namespace

TEST_CASE("conv2d identity kernel") {
  Tensor4f input(1, 1, 1, 1);
  input.data[0] = 2.0f;
  ConvParamsF p;
  p.weight = Tensor4f(1, 1, 1, 1);
  p.weight.data[0] = 1.0f;
  p.bias = {0.0f};
  const Tensor4f out = conv2d_forward(input, p);
  CHECK(out.size() == 1);
  CHECK(out.data[0] == doctest::Approx(2.0));
}

TEST_CASE("conv2d 2x2 worked example") {
  Tensor4f input(1, 1, 2, 2);
  input.data = {1, 2, 3, 4};
  ConvParamsF p;
  p.weight = Tensor4f(1, 1, 2, 2);
  p.weight.data = {1, 0, 0, 1};
  p.bias = {0.0f};
  const Tensor4f out = conv2d_forward(input, p);
  CHECK(out.height == 1);
  CHECK(out.width == 1);
  CHECK(out.data[0] == doctest::Approx(5.0));
}

TEST_CASE("conv2d rejects channel mismatch naming both shapes") {
  Tensor4f input(1, 5, 4, 4);
  ConvParamsF p;
  p.weight = Tensor4f(2, 3, 3, 3);
  p.bias.assign(2, 0.0f);
  CHECK_THROWS_AS((void)conv2d_forward(input, p), ShapeError);
}

TEST_CASE("conv2d matches the naive oracle on random shapes") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const int in_c = 1 + static_cast<int>(rng.below(3));
    const int out_c = 1 + static_cast<int>(rng.below(3));
    const int k = 1 + 2 * static_cast<int>(rng.below(2));  // 1 or 3
    const int pad = static_cast<int>(rng.below(2));
    const Tensor4d input = oracles::random_tensor(
        rng, 1 + static_cast<int>(rng.below(2)), in_c, 6, 7);
    const ConvParams<double> p = random_params(rng, out_c, in_c, k, 1, pad);
    const Tensor4d got = conv2d_forward(input, p);
    const Tensor4d want = oracles::conv2d_naive(input, p);
    REQUIRE(got.same_shape(want));
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d backward: zero cotangent and bias identity") {
  Rng rng(5);
  const Tensor4d input = oracles::random_tensor(rng, 2, 3, 6, 6);
  const ConvParams<double> p = random_params(rng, 4, 3, 3, 1, 1);
  const Tensor4d out = conv2d_forward(input, p);

  Tensor4d zero_cot = Tensor4d::zeros_like(out);
  const ConvGrads<double> zero_grads = conv2d_backward(zero_cot, input, p);
  for (double v : zero_grads.weight.data) CHECK(v == 0.0);
  for (double v : zero_grads.input.data) CHECK(v == 0.0);
  for (double v : zero_grads.bias) CHECK(v == 0.0);

  Tensor4d cot = oracles::random_tensor(rng, 2, 4, 6, 6);
  const ConvGrads<double> grads = conv2d_backward(cot, input, p);
  for (int oc = 0; oc < 4; ++oc) {
    double want = 0.0;
    for (int n = 0; n < cot.batch; ++n) {
      for (int y = 0; y < cot.height; ++y) {
        for (int x = 0; x < cot.width; ++x) want += cot(n, oc, y, x);
      }
    }
    CHECK(grads.bias[static_cast<std::size_t>(oc)] ==
          doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor4d input = oracles::random_tensor(rng, 1, 2, 5, 5);
    ConvParams<double> p = random_params(rng, 2, 2, 3, 1, 1);
    const Tensor4d cot = oracles::random_tensor(rng, 1, 2, 5, 5);
    auto loss = [&]() { return oracles::dot(conv2d_forward(input, p), cot); };
    const ConvGrads<double> grads = conv2d_backward(cot, input, p);
    CHECK(oracles::max_grad_error(loss, input, grads.input, 1e-4) < 1e-4);
    CHECK(oracles::max_grad_error(loss, p.weight, grads.weight, 1e-4) < 1e-4);
    for (std::size_t i = 0; i < p.bias.size(); ++i) {
      const double fd = oracles::central_diff(loss, p.bias[i], 1e-4);
      CHECK(oracles::rel_error(fd, grads.bias[i]) < 1e-4);
    }
  }
}

TEST_CASE("deconv2d upsamples a single pixel") {
  Tensor4f input(1, 1, 1, 1);
  input.data[0] = 1.0f;
  ConvParamsF p;
  p.weight = Tensor4f(1, 1, 2, 2);
  p.weight.data = {1, 1, 1, 1};
  p.bias = {0.0f};
  p.stride = 2;
  const Tensor4f out = deconv2d_forward(input, p);
  CHECK(out.height == 2);
  CHECK(out.width == 2);
  for (float v : out.data) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("deconv2d of zero input is zero") {
  Tensor4f input(1, 3, 4, 4);
  ConvParamsF p;
  p.weight = Tensor4f(2, 3, 2, 2);
  for (auto& v : p.weight.data) v = 0.5f;
  p.bias.assign(2, 0.0f);
  p.stride = 2;
  const Tensor4f out = deconv2d_forward(input, p);
  CHECK(out.height == 8);
  for (float v : out.data) CHECK(v == 0.0f);
}

TEST_CASE("deconv2d is the exact adjoint of conv2d") {
  // <conv(x), y> == <x, deconv(y)> with channel-transposed weights.
  Rng rng(23);
  for (int trial = 0; trial < 8; ++trial) {
    const int in_c = 1 + static_cast<int>(rng.below(3));
    const int out_c = 1 + static_cast<int>(rng.below(3));
    const bool strided = rng.below(2) == 0;
    const int k = strided ? 2 : 3;
    const int stride = strided ? 2 : 1;
    const int pad = strided ? 0 : 1;
    const Tensor4d x = oracles::random_tensor(rng, 2, in_c, 8, 8);
    ConvParams<double> conv = random_params(rng, out_c, in_c, k, stride, pad);
    for (auto& b : conv.bias) b = 0.0;
    const Tensor4d cx = conv2d_forward(x, conv);
    const Tensor4d y = oracles::random_tensor(rng, 2, out_c, cx.height,
                                              cx.width);
    ConvParams<double> deconv;
    deconv.weight = Tensor4d(in_c, out_c, k, k);
    for (int oc = 0; oc < out_c; ++oc) {
      for (int ic = 0; ic < in_c; ++ic) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            deconv.weight(ic, oc, ky, kx) = conv.weight(oc, ic, ky, kx);
          }
        }
      }
    }
    deconv.bias.assign(static_cast<std::size_t>(in_c), 0.0);
    deconv.stride = stride;
    deconv.padding = pad;
    const Tensor4d dy = deconv2d_forward(y, deconv);
    REQUIRE(dy.same_shape(x));
    CHECK(oracles::dot(cx, y) ==
          doctest::Approx(oracles::dot(x, dy)).epsilon(1e-6));
  }
}

TEST_CASE("deconv2d gradients match finite differences") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor4d input = oracles::random_tensor(rng, 1, 3, 3, 3);
    ConvParams<double> p = random_params(rng, 2, 3, 2, 2, 0);
    const Tensor4d probe = deconv2d_forward(input, p);
    const Tensor4d cot = oracles::random_tensor(rng, 1, 2, probe.height,
                                                probe.width);
    auto loss = [&]() {
      return oracles::dot(deconv2d_forward(input, p), cot);
    };
    const ConvGrads<double> grads = deconv2d_backward(cot, input, p);
    CHECK(oracles::max_grad_error(loss, input, grads.input, 1e-4) < 1e-4);
    CHECK(oracles::max_grad_error(loss, p.weight, grads.weight, 1e-4) < 1e-4);
    for (std::size_t i = 0; i < p.bias.size(); ++i) {
      const double fd = oracles::central_diff(loss, p.bias[i], 1e-4);
      CHECK(oracles::rel_error(fd, grads.bias[i]) < 1e-4);
    }
  }
}

TEST_CASE("maxpool picks window maxima and routes gradients to winners") {
  Tensor4f input(1, 1, 2, 2);
  input.data = {1, 2, 3, 4};
  auto [out, idx] = maxpool2x2(input);
  CHECK(out.size() == 1);
  CHECK(out.data[0] == 4.0f);
  CHECK(idx.winner[0] == 3);

  Tensor4f grad_out(1, 1, 1, 1);
  grad_out.data[0] = 1.0f;
  const Tensor4f grad_in = maxpool2x2_backward(grad_out, idx, 2, 2);
  CHECK(grad_in.data[0] == 0.0f);
  CHECK(grad_in.data[1] == 0.0f);
  CHECK(grad_in.data[2] == 0.0f);
  CHECK(grad_in.data[3] == 1.0f);
}

TEST_CASE("maxpool ties break to the first element in row-major order") {
  Tensor4f input(1, 1, 2, 2);
  input.data = {5, 5, 5, 5};
  auto [out, idx] = maxpool2x2(input);
  CHECK(out.data[0] == 5.0f);
  CHECK(idx.winner[0] == 0);
}

TEST_CASE("maxpool rejects odd spatial dims") {
  Tensor4f input(1, 1, 3, 4);
  CHECK_THROWS_AS((void)maxpool2x2(input), PreconditionError);
}

TEST_CASE("concat_channels shape arithmetic and errors") {
  Tensor4f a(1, 2, 4, 4), b(1, 3, 4, 4);
  const Tensor4f out = concat_channels(a, b);
  CHECK(out.channels == 5);
  CHECK(out.height == 4);

  Tensor4f c(1, 3, 6, 4);
  CHECK_THROWS_AS((void)concat_channels(a, c), ShapeError);
}

TEST_CASE("concat backward then re-concat is the identity on cotangents") {
  Rng rng(7);
  const Tensor4d a = oracles::random_tensor(rng, 2, 3, 4, 4);
  const Tensor4d b = oracles::random_tensor(rng, 2, 2, 4, 4);
  const Tensor4d grad = oracles::random_tensor(rng, 2, 5, 4, 4);
  auto [ga, gb] = split_channels(grad, 3);
  CHECK(ga.channels == 3);
  CHECK(gb.channels == 2);
  const Tensor4d rejoined = concat_channels(ga, gb);
  REQUIRE(rejoined.same_shape(grad));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    CHECK(rejoined.data[i] == grad.data[i]);
  }
}
