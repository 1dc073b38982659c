#include "deephuman/geometric.hpp"

#include <array>
#include <cmath>

namespace dh::geo {

namespace {

template <typename T>
void require_occupancy(const Tensor<T>& v, const char* op) {
  if (v.rank() != 4 || v.dim(0) != 1)
    throw ShapeError(std::string(op) + ": expected occupancy [1, Z, Y, X], got " + shape_str(v.shape()));
}

inline std::size_t reflect(long i, std::size_t n) {
  if (i < 0) return 0;
  if (i >= long(n)) return n - 1;
  return std::size_t(i);
}

}  // namespace

template <typename T>
ModulationPair<T> vft_modulators(const Tensor<T>& feature_map, const VftBranches<T>& branches,
                                 std::size_t channels, T slope) {
  if (feature_map.rank() != 3) throw ShapeError("vft_modulators: expected [C, H, W], got " + shape_str(feature_map.shape()));
  if (branches.alpha_weight.dim(0) != channels || branches.beta_weight.dim(0) != channels)
    throw ShapeError("vft_modulators: branches produce " + std::to_string(branches.alpha_weight.dim(0)) +
                     " channels but the volume level has " + std::to_string(channels));
  const ops::ConvSpec same{1, 1};
  ModulationPair<T> out;
  out.alpha = ops::leaky_relu(ops::conv(feature_map, branches.alpha_weight, branches.alpha_bias, same), slope);
  out.beta = ops::leaky_relu(ops::conv(feature_map, branches.beta_weight, branches.beta_bias, same), slope);
  return out;
}

template <typename T>
Tensor<T> vft_apply(const Tensor<T>& volume, const ModulationPair<T>& mods) {
  if (volume.rank() != 4) throw ShapeError("vft_apply: expected volume [C, Z, Y, X], got " + shape_str(volume.shape()));
  const Shape slice{volume.dim(0), volume.dim(2), volume.dim(3)};
  if (mods.alpha.shape() != slice || mods.beta.shape() != slice)
    throw ShapeError("vft_apply: modulation " + shape_str(mods.alpha.shape()) + "/" + shape_str(mods.beta.shape()) +
                     " does not match z-slice " + shape_str(slice) + " of volume " + shape_str(volume.shape()));
  const std::size_t C = volume.dim(0), Z = volume.dim(1), plane = volume.dim(2) * volume.dim(3);
  std::vector<T> y(volume.numel());
  auto v = volume.values();
  auto a = mods.alpha.values();
  auto b = mods.beta.values();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t z = 0; z < Z; ++z) {
      const std::size_t base = (c * Z + z) * plane;
      for (std::size_t i = 0; i < plane; ++i) y[base + i] = a[c * plane + i] * v[base + i] + b[c * plane + i];
    }
  return Tensor<T>::make_result(volume.shape(), std::move(y), {volume, mods.alpha, mods.beta},
                                [C, Z, plane](Node<T>& self) {
                                  auto& vn = *self.inputs[0];
                                  auto& an = *self.inputs[1];
                                  auto& bn = *self.inputs[2];
                                  if (vn.requires_grad) vn.ensure_grad();
                                  if (an.requires_grad) an.ensure_grad();
                                  if (bn.requires_grad) bn.ensure_grad();
                                  for (std::size_t c = 0; c < C; ++c)
                                    for (std::size_t z = 0; z < Z; ++z) {
                                      const std::size_t base = (c * Z + z) * plane;
                                      for (std::size_t i = 0; i < plane; ++i) {
                                        const T g = self.grad[base + i];
                                        if (vn.requires_grad) vn.grad[base + i] += g * an.value[c * plane + i];
                                        if (an.requires_grad) an.grad[c * plane + i] += g * vn.value[base + i];
                                        if (bn.requires_grad) bn.grad[c * plane + i] += g;
                                      }
                                    }
                                });
}

template <typename T>
Tensor<T> project_depth(const Tensor<T>& occupancy, T background) {
  require_occupancy(occupancy, "project_depth");
  const std::size_t Z = occupancy.dim(1), plane = occupancy.dim(2) * occupancy.dim(3);
  std::vector<T> depth(plane);
  auto argmin = std::make_shared<std::vector<std::size_t>>(plane);
  auto v = occupancy.values();
  for (std::size_t p = 0; p < plane; ++p) {
    T best = background * (T(1) - v[p]);
    std::size_t arg = 0;
    for (std::size_t z = 1; z < Z; ++z) {
      const T o = v[z * plane + p];
      const T d = background * (T(1) - o) + T(z) * o;
      if (d < best) {
        best = d;
        arg = z;
      }
    }
    depth[p] = best;
    (*argmin)[p] = arg;
  }
  return Tensor<T>::make_result(Shape{1, occupancy.dim(2), occupancy.dim(3)}, std::move(depth), {occupancy},
                                [argmin, plane, background](Node<T>& self) {
                                  auto& in = *self.inputs[0];
                                  if (!in.requires_grad) return;
                                  in.ensure_grad();
                                  for (std::size_t p = 0; p < plane; ++p) {
                                    const std::size_t z = (*argmin)[p];
                                    in.grad[z * plane + p] += self.grad[p] * (T(z) - background);
                                  }
                                });
}

template <typename T>
Tensor<T> project_silhouette(const Tensor<T>& occupancy, View view) {
  require_occupancy(occupancy, "project_silhouette");
  const std::size_t Z = occupancy.dim(1), Y = occupancy.dim(2), X = occupancy.dim(3);
  auto v = occupancy.values();
  const bool front = view == View::Front;
  const std::size_t W = front ? X : Z;
  const std::size_t ray_len = front ? Z : X;
  std::vector<T> out(Y * W);
  auto arg = std::make_shared<std::vector<std::size_t>>(Y * W);
  auto flat = [=](std::size_t y, std::size_t col, std::size_t t) {
    return front ? (t * Y + y) * X + col : (col * Y + y) * X + t;
  };
  for (std::size_t y = 0; y < Y; ++y)
    for (std::size_t col = 0; col < W; ++col) {
      std::size_t best_i = flat(y, col, 0);
      for (std::size_t t = 1; t < ray_len; ++t) {
        const std::size_t i = flat(y, col, t);
        if (v[i] > v[best_i]) best_i = i;
      }
      out[y * W + col] = v[best_i];
      (*arg)[y * W + col] = best_i;
    }
  return Tensor<T>::make_result(Shape{1, Y, W}, std::move(out), {occupancy}, [arg](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    in.ensure_grad();
    for (std::size_t p = 0; p < arg->size(); ++p) in.grad[(*arg)[p]] += self.grad[p];
  });
}

template <typename T>
Tensor<T> depth_to_vertex(const Tensor<T>& depth) {
  if (depth.rank() != 3 || depth.dim(0) != 1)
    throw ShapeError("depth_to_vertex: expected [1, H, W], got " + shape_str(depth.shape()));
  const std::size_t H = depth.dim(1), W = depth.dim(2), plane = H * W;
  std::vector<T> out(3 * plane);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      out[r * W + c] = T(c);
      out[plane + r * W + c] = T(r);
      out[2 * plane + r * W + c] = depth.at(r * W + c);
    }
  return Tensor<T>::make_result(Shape{3, H, W}, std::move(out), {depth}, [plane](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    in.ensure_grad();
    for (std::size_t p = 0; p < plane; ++p) in.grad[p] += self.grad[2 * plane + p];
  });
}

namespace {

// Sobel taps: Sx[dr][dc] = dc * (2 - |dr|), Sy[dr][dc] = dr * (2 - |dc|).
constexpr int sobel_x(int dr, int dc) { return dc * (2 - (dr < 0 ? -dr : dr)); }
constexpr int sobel_y(int dr, int dc) { return dr * (2 - (dc < 0 ? -dc : dc)); }

template <typename T>
using V3 = std::array<T, 3>;

template <typename T>
V3<T> cross(const V3<T>& a, const V3<T>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

template <typename T>
struct PixelNormal {
  bool active = false;
  V3<T> gx{}, gy{}, n{};
  T len = 0;
  T sign = 1;
};

template <typename T>
PixelNormal<T> pixel_normal(std::span<const T> mv, std::size_t H, std::size_t W, std::size_t r, std::size_t c,
                            T max_fg) {
  const std::size_t plane = H * W;
  PixelNormal<T> px;
  for (int dr = -1; dr <= 1; ++dr)
    for (int dc = -1; dc <= 1; ++dc) {
      const std::size_t rr = reflect(long(r) + dr, H), cc = reflect(long(c) + dc, W);
      if (mv[2 * plane + rr * W + cc] > max_fg) return px;
    }
  for (int dr = -1; dr <= 1; ++dr)
    for (int dc = -1; dc <= 1; ++dc) {
      const std::size_t q = reflect(long(r) + dr, H) * W + reflect(long(c) + dc, W);
      const T wx = T(sobel_x(dr, dc)), wy = T(sobel_y(dr, dc));
      for (int k = 0; k < 3; ++k) {
        px.gx[k] += wx * mv[k * plane + q];
        px.gy[k] += wy * mv[k * plane + q];
      }
    }
  px.n = cross(px.gx, px.gy);
  px.len = std::sqrt(px.n[0] * px.n[0] + px.n[1] * px.n[1] + px.n[2] * px.n[2]);
  if (!(px.len > T(1e-12))) return px;
  px.active = true;
  px.sign = px.n[2] > T(0) ? T(-1) : T(1);
  return px;
}

}  // namespace

template <typename T>
Tensor<T> vertex_to_normal(const Tensor<T>& vertex_map, T max_foreground_depth) {
  if (vertex_map.rank() != 3 || vertex_map.dim(0) != 3)
    throw ShapeError("vertex_to_normal: expected [3, H, W], got " + shape_str(vertex_map.shape()));
  const std::size_t H = vertex_map.dim(1), W = vertex_map.dim(2), plane = H * W;
  std::vector<T> out(3 * plane, T(0));
  auto mv = vertex_map.values();
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      const auto px = pixel_normal<T>(mv, H, W, r, c, max_foreground_depth);
      if (!px.active) continue;
      for (int k = 0; k < 3; ++k) out[k * plane + r * W + c] = px.sign * px.n[k] / px.len;
    }
  return Tensor<T>::make_result(
      Shape{3, H, W}, std::move(out), {vertex_map}, [H, W, plane, max_foreground_depth](Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        in.ensure_grad();
        std::span<const T> mv(in.value);
        for (std::size_t r = 0; r < H; ++r)
          for (std::size_t c = 0; c < W; ++c) {
            const auto px = pixel_normal<T>(mv, H, W, r, c, max_foreground_depth);
            if (!px.active) continue;
            const std::size_t p = r * W + c;
            const V3<T> g{self.grad[p], self.grad[plane + p], self.grad[2 * plane + p]};
            // u = s n / |n|  =>  dL/dn = s (g - u (u . g)) / |n|
            V3<T> u{px.sign * px.n[0] / px.len, px.sign * px.n[1] / px.len, px.sign * px.n[2] / px.len};
            const T ug = u[0] * g[0] + u[1] * g[1] + u[2] * g[2];
            V3<T> dn;
            for (int k = 0; k < 3; ++k) dn[k] = px.sign * (g[k] - u[k] * ug) / px.len;
            const V3<T> dgx = cross(px.gy, dn);
            const V3<T> dgy = cross(dn, px.gx);
            for (int dr = -1; dr <= 1; ++dr)
              for (int dc = -1; dc <= 1; ++dc) {
                const std::size_t q = reflect(long(r) + dr, H) * W + reflect(long(c) + dc, W);
                const T wx = T(sobel_x(dr, dc)), wy = T(sobel_y(dr, dc));
                for (int k = 0; k < 3; ++k) in.grad[k * plane + q] += wx * dgx[k] + wy * dgy[k];
              }
          }
      });
}

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& map) {
  if (map.rank() != 3) throw ShapeError("upsample2x: expected [C, H, W], got " + shape_str(map.shape()));
  const std::size_t C = map.dim(0), H = map.dim(1), W = map.dim(2);
  const std::size_t H2 = 2 * H, W2 = 2 * W;
  // Each output sample averages source taps (r0, r1) x (c0, c1).
  auto taps = [](std::size_t o, std::size_t n) {
    const std::size_t i = o / 2;
    return std::pair<std::size_t, std::size_t>{i, (o % 2 == 0) ? i : std::min(i + 1, n - 1)};
  };
  std::vector<T> out(C * H2 * W2);
  auto in = map.values();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t r = 0; r < H2; ++r) {
      const auto [r0, r1] = taps(r, H);
      for (std::size_t col = 0; col < W2; ++col) {
        const auto [c0, c1] = taps(col, W);
        const T* src = in.data() + c * H * W;
        out[(c * H2 + r) * W2 + col] =
            T(0.25) * (src[r0 * W + c0] + src[r0 * W + c1] + src[r1 * W + c0] + src[r1 * W + c1]);
      }
    }
  return Tensor<T>::make_result(Shape{C, H2, W2}, std::move(out), {map}, [C, H, W, taps](Node<T>& self) {
    auto& inn = *self.inputs[0];
    if (!inn.requires_grad) return;
    inn.ensure_grad();
    const std::size_t H2 = 2 * H, W2 = 2 * W;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t r = 0; r < H2; ++r) {
        const auto [r0, r1] = taps(r, H);
        for (std::size_t col = 0; col < W2; ++col) {
          const auto [c0, c1] = taps(col, W);
          const T g = T(0.25) * self.grad[(c * H2 + r) * W2 + col];
          T* dst = inn.grad.data() + c * H * W;
          dst[r0 * W + c0] += g;
          dst[r0 * W + c1] += g;
          dst[r1 * W + c0] += g;
          dst[r1 * W + c1] += g;
        }
      }
  });
}

#define DH_INSTANTIATE_GEO(T)                                                                              \
  template ModulationPair<T> vft_modulators(const Tensor<T>&, const VftBranches<T>&, std::size_t, T);      \
  template Tensor<T> vft_apply(const Tensor<T>&, const ModulationPair<T>&);                                \
  template Tensor<T> project_depth(const Tensor<T>&, T);                                                   \
  template Tensor<T> project_silhouette(const Tensor<T>&, View);                                           \
  template Tensor<T> depth_to_vertex(const Tensor<T>&);                                                    \
  template Tensor<T> vertex_to_normal(const Tensor<T>&, T);                                                \
  template Tensor<T> upsample2x(const Tensor<T>&);

DH_INSTANTIATE_GEO(float)
DH_INSTANTIATE_GEO(double)

}  // namespace dh::geo
