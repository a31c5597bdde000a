#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "snne/errors.hpp"
#include "snne/tensor.hpp"

// Image quality metrics: full-reference PSNR/SSIM and the non-reference
// underwater scores UCIQE and UIQM. Inputs are single images (1,3,H,W) with
// values in [0,1]; all internal arithmetic is double precision.

namespace snne {

struct MetricWeights {
  // UCIQE: chroma std, luminance contrast, mean saturation.
  double uciqe_c1 = 0.4680;
  double uciqe_c2 = 0.2745;
  double uciqe_c3 = 0.2576;
  // UIQM: colorfulness, sharpness, contrast.
  double uiqm_c1 = 0.0282;
  double uiqm_c2 = 0.2953;
  double uiqm_c3 = 3.5753;
  // SSIM stabilizers relative to the dynamic range.
  double ssim_k1 = 0.01;
  double ssim_k2 = 0.03;
  double p_max = 1.0;
};

struct PsnrResult {
  bool identical = false;
  double db = 0.0;
};

inline PsnrResult psnr(const Tensor4f& reference, const Tensor4f& image,
                       double p_max = 1.0) {
  require_same_shape(reference, image, "psnr");
  double mse = 0.0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double d = static_cast<double>(reference.data[i]) - image.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(image.size());
  if (mse == 0.0) return {true, 0.0};
  return {false, 10.0 * std::log10(p_max * p_max / mse)};
}

namespace detail {

inline void require_single_rgb(const Tensor4f& img, const char* what) {
  if (img.batch != 1 || img.channels != 3) {
    throw PreconditionError(std::string(what) +
                            ": expected a single RGB image (1,3,H,W), got " +
                            img.shape_string());
  }
}

// Luma plane; weights 0.299/0.587/0.114.
inline std::vector<double> to_gray(const Tensor4f& img) {
  std::vector<double> gray(static_cast<std::size_t>(img.height) * img.width);
  const float* r = img.plane(0, 0);
  const float* g = img.plane(0, 1);
  const float* b = img.plane(0, 2);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    gray[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  }
  return gray;
}

inline std::vector<double> gaussian_taps(int radius, double sigma) {
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
    taps[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

// Separable valid-mode filtering of an h x w plane.
inline std::vector<double> filter_valid(const std::vector<double>& plane,
                                        int h, int w,
                                        const std::vector<double>& taps) {
  const int r = static_cast<int>(taps.size());
  const int ow = w - r + 1;
  const int oh = h - r + 1;
  std::vector<double> horiz(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < r; ++k) {
        acc += taps[static_cast<std::size_t>(k)] *
               plane[static_cast<std::size_t>(y) * w + x + k];
      }
      horiz[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < r; ++k) {
        acc += taps[static_cast<std::size_t>(k)] *
               horiz[static_cast<std::size_t>(y + k) * ow + x];
      }
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

// Linear-interpolation quantile of unsorted values, q in [0,1].
inline double quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

struct LabPixel {
  double l, a, b;
};

inline LabPixel rgb_to_lab(double r, double g, double b) {
  auto linearize = [](double c) {
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
  };
  const double rl = linearize(r), gl = linearize(g), bl = linearize(b);
  const double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
  const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
  const double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
  auto f = [](double t) {
    constexpr double delta = 6.0 / 29.0;
    return t > delta * delta * delta
               ? std::cbrt(t)
               : t / (3.0 * delta * delta) + 4.0 / 29.0;
  };
  const double fx = f(x / 0.95047), fy = f(y), fz = f(z / 1.08883);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

// Two-sided alpha-trimmed mean (drop ceil(alpha*K) lowest and floor(alpha*K)
// highest samples).
inline double trimmed_mean(std::vector<double> values, double alpha) {
  std::sort(values.begin(), values.end());
  const std::size_t k = values.size();
  const std::size_t lo =
      static_cast<std::size_t>(std::ceil(alpha * static_cast<double>(k)));
  const std::size_t hi =
      static_cast<std::size_t>(std::floor(alpha * static_cast<double>(k)));
  if (lo + hi >= k) return 0.0;
  double acc = 0.0;
  for (std::size_t i = lo; i < k - hi; ++i) acc += values[i];
  return acc / static_cast<double>(k - lo - hi);
}

inline double variance_about(const std::vector<double>& values, double mu) {
  double acc = 0.0;
  for (double v : values) acc += (v - mu) * (v - mu);
  return acc / static_cast<double>(values.size());
}

// Sobel gradient magnitude with reflected borders, one plane.
inline std::vector<double> sobel_magnitude(const std::vector<double>& plane,
                                           int h, int w) {
  auto at = [&](int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return plane[static_cast<std::size_t>(y) * w + x];
  };
  std::vector<double> mag(static_cast<std::size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = -at(y - 1, x - 1) - 2 * at(y, x - 1) - at(y + 1, x - 1) +
                        at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1);
      const double gy = -at(y - 1, x - 1) - 2 * at(y - 1, x) - at(y - 1, x + 1) +
                        at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1);
      mag[static_cast<std::size_t>(y) * w + x] = std::hypot(gx, gy);
    }
  }
  return mag;
}

// EME over full window x window blocks: (2/N) * sum log(max/min), blocks
// touching zero skipped.
inline double eme(const std::vector<double>& plane, int h, int w, int window) {
  const int by = h / window;
  const int bx = w / window;
  double acc = 0.0;
  for (int i = 0; i < by; ++i) {
    for (int j = 0; j < bx; ++j) {
      double mx = plane[static_cast<std::size_t>(i * window) * w + j * window];
      double mn = mx;
      for (int y = i * window; y < (i + 1) * window; ++y) {
        for (int x = j * window; x < (j + 1) * window; ++x) {
          const double v = plane[static_cast<std::size_t>(y) * w + x];
          mx = std::max(mx, v);
          mn = std::min(mn, v);
        }
      }
      if (mx > 0.0 && mn > 0.0) acc += std::log(mx / mn);
    }
  }
  return 2.0 / (static_cast<double>(by) * bx) * acc;
}

}  // namespace detail

// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5), computed on the
// luma plane.
inline double ssim(const Tensor4f& reference, const Tensor4f& image,
                   const MetricWeights& weights = {}) {
  require_same_shape(reference, image, "ssim");
  detail::require_single_rgb(reference, "ssim");
  constexpr int kWindow = 11;
  if (reference.height < kWindow || reference.width < kWindow) {
    throw PreconditionError("ssim: image " + reference.shape_string() +
                            " smaller than the 11x11 window");
  }
  const int h = reference.height, w = reference.width;
  const std::vector<double> x = detail::to_gray(reference);
  const std::vector<double> y = detail::to_gray(image);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const std::vector<double> taps = detail::gaussian_taps(kWindow / 2, 1.5);
  const auto mu_x = detail::filter_valid(x, h, w, taps);
  const auto mu_y = detail::filter_valid(y, h, w, taps);
  const auto m_xx = detail::filter_valid(xx, h, w, taps);
  const auto m_yy = detail::filter_valid(yy, h, w, taps);
  const auto m_xy = detail::filter_valid(xy, h, w, taps);
  const double c1 = weights.ssim_k1 * weights.p_max;
  const double c2 = weights.ssim_k2 * weights.p_max;
  const double C1 = c1 * c1;
  const double C2 = c2 * c2;
  double acc = 0.0;
  for (std::size_t i = 0; i < mu_x.size(); ++i) {
    const double var_x = m_xx[i] - mu_x[i] * mu_x[i];
    const double var_y = m_yy[i] - mu_y[i] * mu_y[i];
    const double cov = m_xy[i] - mu_x[i] * mu_y[i];
    acc += ((2.0 * mu_x[i] * mu_y[i] + C1) * (2.0 * cov + C2)) /
           ((mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + C1) *
            (var_x + var_y + C2));
  }
  return acc / static_cast<double>(mu_x.size());
}

struct UciqeComponents {
  double chroma_std = 0.0;
  double luminance_contrast = 0.0;
  double mean_saturation = 0.0;
};

inline double uciqe_from_components(const UciqeComponents& c,
                                    const MetricWeights& w = {}) {
  return w.uciqe_c1 * c.chroma_std + w.uciqe_c2 * c.luminance_contrast +
         w.uciqe_c3 * c.mean_saturation;
}

// CIELab statistics: population std of chroma, top-minus-bottom 1% luminance
// quantiles, mean saturation chroma/L (zero for near-black pixels). L, a, b
// are rescaled by 1/100.
inline UciqeComponents uciqe_components(const Tensor4f& img) {
  detail::require_single_rgb(img, "uciqe");
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  const float* r = img.plane(0, 0);
  const float* g = img.plane(0, 1);
  const float* b = img.plane(0, 2);
  std::vector<double> lum(n), chroma(n);
  double sat_sum = 0.0;
  double chroma_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const detail::LabPixel lab = detail::rgb_to_lab(r[i], g[i], b[i]);
    lum[i] = lab.l / 100.0;
    chroma[i] = std::hypot(lab.a, lab.b) / 100.0;
    chroma_sum += chroma[i];
    sat_sum += lum[i] > 1e-6 ? chroma[i] / lum[i] : 0.0;
  }
  const double chroma_mean = chroma_sum / static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    var += (chroma[i] - chroma_mean) * (chroma[i] - chroma_mean);
  }
  UciqeComponents c;
  c.chroma_std = std::sqrt(var / static_cast<double>(n));
  c.luminance_contrast =
      detail::quantile(lum, 0.99) - detail::quantile(lum, 0.01);
  c.mean_saturation = sat_sum / static_cast<double>(n);
  return c;
}

inline double uciqe(const Tensor4f& img, const MetricWeights& w = {}) {
  return uciqe_from_components(uciqe_components(img), w);
}

struct UiqmComponents {
  double colorfulness = 0.0;  // UICM
  double sharpness = 0.0;     // UISM
  double contrast = 0.0;      // UIConM
};

inline double uiqm_from_components(const UiqmComponents& c,
                                   const MetricWeights& w = {}) {
  return w.uiqm_c1 * c.colorfulness + w.uiqm_c2 * c.sharpness +
         w.uiqm_c3 * c.contrast;
}

// UICM: asymmetric alpha-trimmed colorfulness over the RG/YB opponent
// channels. UISM: Sobel edge maps weighted by the channel, EME over 10x10
// blocks with luma weights. UIConM: Michelson contrast entropy over 10x10
// blocks across all channels. All on the 0..255 scale of the source metric.
inline UiqmComponents uiqm_components(const Tensor4f& img) {
  detail::require_single_rgb(img, "uiqm");
  constexpr int kWindow = 10;
  if (img.height < kWindow || img.width < kWindow) {
    throw PreconditionError("uiqm: image " + img.shape_string() +
                            " smaller than the 10x10 block decomposition");
  }
  const int h = img.height, w = img.width;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> red(n), green(n), blue(n);
  for (std::size_t i = 0; i < n; ++i) {
    red[i] = 255.0 * img.plane(0, 0)[i];
    green[i] = 255.0 * img.plane(0, 1)[i];
    blue[i] = 255.0 * img.plane(0, 2)[i];
  }

  UiqmComponents out;
  {
    std::vector<double> rg(n), yb(n);
    for (std::size_t i = 0; i < n; ++i) {
      rg[i] = red[i] - green[i];
      yb[i] = 0.5 * (red[i] + green[i]) - blue[i];
    }
    const double mu_rg = detail::trimmed_mean(rg, 0.1);
    const double mu_yb = detail::trimmed_mean(yb, 0.1);
    const double s_rg = detail::variance_about(rg, mu_rg);
    const double s_yb = detail::variance_about(yb, mu_yb);
    out.colorfulness = -0.0268 * std::hypot(mu_rg, mu_yb) +
                       0.1586 * std::sqrt(s_rg + s_yb);
  }
  {
    const double lambdas[3] = {0.299, 0.587, 0.114};
    const std::vector<double>* channels[3] = {&red, &green, &blue};
    for (int c = 0; c < 3; ++c) {
      std::vector<double> mag = detail::sobel_magnitude(*channels[c], h, w);
      double peak = 0.0;
      for (double v : mag) peak = std::max(peak, v);
      std::vector<double> edge(n, 0.0);
      if (peak > 0.0) {
        for (std::size_t i = 0; i < n; ++i) {
          edge[i] = mag[i] * (255.0 / peak) * (*channels[c])[i];
        }
      }
      out.sharpness += lambdas[c] * detail::eme(edge, h, w, kWindow);
    }
  }
  {
    const int by = h / kWindow;
    const int bx = w / kWindow;
    double acc = 0.0;
    for (int i = 0; i < by; ++i) {
      for (int j = 0; j < bx; ++j) {
        double mx = red[static_cast<std::size_t>(i * kWindow) * w + j * kWindow];
        double mn = mx;
        for (int y = i * kWindow; y < (i + 1) * kWindow; ++y) {
          for (int x = j * kWindow; x < (j + 1) * kWindow; ++x) {
            const std::size_t at = static_cast<std::size_t>(y) * w + x;
            for (const auto* ch : {&red, &green, &blue}) {
              mx = std::max(mx, (*ch)[at]);
              mn = std::min(mn, (*ch)[at]);
            }
          }
        }
        const double top = mx - mn;
        const double bot = mx + mn;
        if (top > 0.0 && bot > 0.0) acc += top / bot * std::log(top / bot);
      }
    }
    out.contrast = -acc / (static_cast<double>(by) * bx);
  }
  return out;
}

inline double uiqm(const Tensor4f& img, const MetricWeights& w = {}) {
  return uiqm_from_components(uiqm_components(img), w);
}

}  // namespace snne
