#pragma once

// Test-side oracles, independent of the implementation paths they check:
// central finite differences, a naive O(n^4) cross-correlation, and random
// tensor generators. Oracles run in double precision.

#include <cmath>
#include <functional>
#include <vector>

#include "snne/rng.hpp"
#include "snne/tensor.hpp"

namespace oracles {

inline snne::Tensor4d random_tensor(snne::Rng& rng, int n, int c, int h, int w,
                                    double lo = -1.0, double hi = 1.0) {
  snne::Tensor4d t(n, c, h, w);
  for (auto& v : t.data) v = lo + (hi - lo) * rng.uniform();
  return t;
}

// Central finite difference of `loss` with respect to one scalar.
inline double central_diff(const std::function<double()>& loss, double& param,
                           double eps) {
  const double saved = param;
  param = saved + eps;
  const double up = loss();
  param = saved - eps;
  const double down = loss();
  param = saved;
  return (up - down) / (2.0 * eps);
}

inline double rel_error(double a, double b, double floor = 1e-6) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

// Finite-difference gradient of `loss` with respect to every element of a
// tensor; returns max relative error against `analytic`.
inline double max_grad_error(const std::function<double()>& loss,
                             snne::Tensor4d& params,
                             const snne::Tensor4d& analytic, double eps,
                             double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double fd = central_diff(loss, params.data[i], eps);
    worst = std::max(worst, rel_error(fd, analytic.data[i], floor));
  }
  return worst;
}

// Brute-force cross-correlation, the independent reference for conv2d.
inline snne::Tensor4d conv2d_naive(const snne::Tensor4d& input,
                                   const snne::ConvParams<double>& p) {
  const int oh = (input.height + 2 * p.padding - p.kernel()) / p.stride + 1;
  const int ow = (input.width + 2 * p.padding - p.kernel()) / p.stride + 1;
  snne::Tensor4d out(input.batch, p.out_channels(), oh, ow);
  for (int n = 0; n < input.batch; ++n) {
    for (int oc = 0; oc < p.out_channels(); ++oc) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = p.bias[static_cast<std::size_t>(oc)];
          for (int ic = 0; ic < input.channels; ++ic) {
            for (int ky = 0; ky < p.kernel(); ++ky) {
              for (int kx = 0; kx < p.kernel(); ++kx) {
                const int y = oy * p.stride + ky - p.padding;
                const int x = ox * p.stride + kx - p.padding;
                if (y < 0 || y >= input.height || x < 0 || x >= input.width) {
                  continue;
                }
                acc += input(n, ic, y, x) * p.weight(oc, ic, ky, kx);
              }
            }
          }
          out(n, oc, oy, ox) = acc;
        }
      }
    }
  }
  return out;
}

inline double dot(const snne::Tensor4d& a, const snne::Tensor4d& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.data[i] * b.data[i];
  return acc;
}

}  // namespace oracles
