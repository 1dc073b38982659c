#pragma once

// Reference implementations and numeric checks shared by the unit tests and
// the acceptance runner. Everything here is deliberately naive.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <map>

#include "deephuman/mesh.hpp"
#include "deephuman/ops.hpp"
#include "deephuman/tensor.hpp"

namespace dh::oracle {

using TensorD = Tensor<double>;

inline TensorD random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                             bool requires_grad = true) {
  TensorD t(std::move(shape), requires_grad);
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.mutable_values()) v = d(rng);
  return t;
}

/// Scalar probe sum(w .* y) with fixed random weights, so every output
/// element contributes a distinct gradient.
inline TensorD weighted_sum(const TensorD& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5bd1e995ull);
  const TensorD w = random_tensor(y.shape(), rng, -1.0, 1.0, false);
  return ops::sum(ops::mul(y, w));
}

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t checked = 0;
};

/// Central differences of `loss(inputs)` against the backward pass.
/// Relative error is |a - n| / max(|a|, |n|, floor); at most `max_per_input`
/// randomly chosen elements per input are probed.
inline GradCheckResult gradcheck(const std::function<TensorD(const std::vector<TensorD>&)>& loss,
                                 std::vector<TensorD>& inputs, std::uint64_t seed, std::size_t max_per_input = 48,
                                 double h = 1e-6, double floor = 1e-3) {
  for (auto& x : inputs) x.zero_grad();
  backward(loss(inputs));
  std::vector<std::vector<double>> analytic;
  for (auto& x : inputs) analytic.emplace_back(x.grad().begin(), x.grad().end());

  GradCheckResult r;
  std::mt19937_64 rng(seed);
  NoGradGuard guard;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& x = inputs[k];
    std::vector<std::size_t> idx(x.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), max_per_input));
    for (std::size_t i : idx) {
      auto v = x.mutable_values();
      const double orig = v[i];
      v[i] = orig + h;
      const double up = loss(inputs).item();
      v[i] = orig - h;
      const double down = loss(inputs).item();
      v[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      r.max_rel_error = std::max(r.max_rel_error, rel);
      ++r.checked;
    }
  }
  return r;
}

/// Direct-loop cross-correlation for [C, H, W] or [C, D, H, W] inputs.
inline std::vector<double> naive_conv(const TensorD& x, const TensorD& w, const TensorD& b, std::size_t stride,
                                      std::size_t pad, Shape& out_shape) {
  const bool vol = x.rank() == 4;
  const std::size_t ci = x.dim(0), co = w.dim(0), k = w.dim(2);
  const std::size_t D = vol ? x.dim(1) : 1, H = x.dim(vol ? 2 : 1), W = x.dim(vol ? 3 : 2);
  const std::size_t kd = vol ? k : 1;
  auto ext = [&](std::size_t n, std::size_t kk) { return (n + 2 * pad - kk) / stride + 1; };
  const std::size_t od = vol ? ext(D, k) : 1, oh = ext(H, k), ow = ext(W, k);
  out_shape = vol ? Shape{co, od, oh, ow} : Shape{co, oh, ow};
  std::vector<double> out(co * od * oh * ow, 0.0);
  const auto xv = x.values();
  const auto wv = w.values();
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = b.defined() ? b.values()[o] : 0.0;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t dz = 0; dz < kd; ++dz)
              for (std::size_t dy = 0; dy < k; ++dy)
                for (std::size_t dx = 0; dx < k; ++dx) {
                  const long iz = vol ? long(z * stride + dz) - long(pad) : 0;
                  const long iy = long(y * stride + dy) - long(pad);
                  const long ix = long(xx * stride + dx) - long(pad);
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= long(D) || iy >= long(H) || ix >= long(W)) continue;
                  const double xval = xv[((c * D + std::size_t(iz)) * H + std::size_t(iy)) * W + std::size_t(ix)];
                  const double wval = wv[((o * ci + c) * kd + dz) * k * k + dy * k + dx];
                  acc += xval * wval;
                }
          out[((o * od + z) * oh + y) * ow + xx] = acc;
        }
  return out;
}

/// Visible-surface depth by scanning each ray front to back: the first voxel
/// with occupancy 1 gives its z; an empty ray gives `background`. Binary input only.
inline std::vector<double> scan_depth(const std::vector<double>& occ, std::size_t Z, std::size_t Y, std::size_t X,
                                      double background) {
  std::vector<double> d(Y * X, background);
  for (std::size_t y = 0; y < Y; ++y)
    for (std::size_t x = 0; x < X; ++x)
      for (std::size_t z = 0; z < Z; ++z)
        if (occ[(z * Y + y) * X + x] == 1.0) {
          d[y * X + x] = double(z);
          break;
        }
  return d;
}

/// Mean of -[gamma t ln p + (1 - gamma)(1 - t) ln(1 - p)], unclamped.
inline double plain_weighted_bce(const std::vector<double>& p, const std::vector<double>& t, double gamma) {
  double acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    acc -= gamma * t[i] * std::log(p[i]) + (1 - gamma) * (1 - t[i]) * std::log(1 - p[i]);
  return acc / double(p.size());
}


/// Closed axis-aligned box with outward winding.
inline TriMesh box_mesh(const Vec3& lo, const Vec3& hi) {
  TriMesh m;
  for (int i = 0; i < 8; ++i)
    m.vertices.emplace_back(i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(), i & 4 ? hi.z() : lo.z());
  const std::array<std::array<std::uint32_t, 4>, 6> quads{{{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4},
                                                           {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}}};
  for (const auto& q : quads) {
    m.faces.push_back({q[0], q[1], q[2]});
    m.faces.push_back({q[0], q[2], q[3]});
  }
  return m;
}

/// Subdivided icosahedron projected onto a sphere, outward winding.
inline TriMesh icosphere(const Vec3& center, double radius, int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v{{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  std::vector<Face> f{{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                      {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (auto& p : v) p.normalize();
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      return mid[key] = std::uint32_t(v.size() - 1);
    };
    std::vector<Face> next;
    for (const auto& tri : f) {
      const auto ab = midpoint(tri[0], tri[1]), bc = midpoint(tri[1], tri[2]), ca = midpoint(tri[2], tri[0]);
      next.insert(next.end(), {{tri[0], ab, ca}, {tri[1], bc, ab}, {tri[2], ca, bc}, {ab, bc, ca}});
    }
    f = std::move(next);
  }
  TriMesh m;
  for (const auto& p : v) m.vertices.push_back(center + radius * p);
  m.faces = std::move(f);
  return m;
}

}  // namespace dh::oracle
