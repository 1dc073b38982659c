#include "deephuman/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace dh::ops {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <typename T>
void accumulate(Node<T>& in, std::span<const T> g) {
  if (!in.requires_grad) return;
  in.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) in.grad[i] += g[i];
}

template <typename T, typename F, typename D>
Tensor<T> unary(const Tensor<T>& x, F f, D dfdx_from_xy) {
  std::vector<T> y(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  return Tensor<T>::make_result(x.shape(), std::move(y), {x}, [dfdx_from_xy](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    in.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      in.grad[i] += self.grad[i] * dfdx_from_xy(in.value[i], self.value[i]);
  });
}

// Geometry of a strided 3D cross-correlation from a "big" signal (C channels,
// extents in[]) to a "small" one (extents out[]). 2D ops use depth 1.
struct ConvGeom {
  std::size_t channels = 0;
  std::array<std::size_t, 3> in{1, 1, 1};
  std::array<std::size_t, 3> kernel{1, 1, 1};
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> pad{0, 0, 0};
  std::array<std::size_t, 3> out{1, 1, 1};

  std::size_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
  std::size_t rows() const { return channels * kernel_volume(); }
  std::size_t in_volume() const { return in[0] * in[1] * in[2]; }
  std::size_t out_plane() const { return out[1] * out[2]; }
  std::size_t out_volume() const { return out[0] * out_plane(); }

  // Number of output depth planes per GEMM slab, bounding the column buffer.
  std::size_t slab_depth() const {
    constexpr std::size_t kBudget = std::size_t(1) << 22;
    std::size_t per_plane = rows() * out_plane();
    return std::clamp<std::size_t>(kBudget / std::max<std::size_t>(per_plane, 1), 1, out[0]);
  }
};

// Range of output indices o in [0, n_out) with 0 <= o*s - p + k < n_in.
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t n_out, std::size_t n_in,
                                                       std::size_t s, std::size_t p, std::size_t k) {
  long lo_num = long(p) - long(k);
  long lo = lo_num <= 0 ? 0 : (lo_num + long(s) - 1) / long(s);
  long hi_num = long(n_in) - 1 + long(p) - long(k);
  long hi = hi_num < 0 ? -1 : hi_num / long(s);
  hi = std::min<long>(hi, long(n_out) - 1);
  if (hi < lo) return {0, 0};
  return {std::size_t(lo), std::size_t(hi) + 1};
}

template <typename T>
void im2col(const ConvGeom& g, const T* src, std::size_t od0, std::size_t od1, T* col) {
  const std::size_t n = (od1 - od0) * g.out_plane();
  const auto [kd, kh, kw] = g.kernel;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* chan = src + c * g.in_volume();
    for (std::size_t a = 0; a < kd; ++a)
      for (std::size_t b = 0; b < kh; ++b)
        for (std::size_t e = 0; e < kw; ++e, ++row) {
          T* dst = col + row * n;
          std::fill(dst, dst + n, T(0));
          auto [w0, w1] = valid_range(g.out[2], g.in[2], g.stride[2], g.pad[2], e);
          for (std::size_t od = od0; od < od1; ++od) {
            long id = long(od * g.stride[0]) - long(g.pad[0]) + long(a);
            if (id < 0 || id >= long(g.in[0])) continue;
            for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
              long ih = long(oh * g.stride[1]) - long(g.pad[1]) + long(b);
              if (ih < 0 || ih >= long(g.in[1])) continue;
              const T* line = chan + (std::size_t(id) * g.in[1] + std::size_t(ih)) * g.in[2];
              T* out = dst + ((od - od0) * g.out[1] + oh) * g.out[2];
              const long off = long(e) - long(g.pad[2]);
              for (std::size_t ow = w0; ow < w1; ++ow) out[ow] = line[long(ow * g.stride[2]) + off];
            }
          }
        }
  }
}

template <typename T>
void col2im(const ConvGeom& g, const T* col, std::size_t od0, std::size_t od1, T* dst) {
  const std::size_t n = (od1 - od0) * g.out_plane();
  const auto [kd, kh, kw] = g.kernel;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* chan = dst + c * g.in_volume();
    for (std::size_t a = 0; a < kd; ++a)
      for (std::size_t b = 0; b < kh; ++b)
        for (std::size_t e = 0; e < kw; ++e, ++row) {
          const T* src = col + row * n;
          auto [w0, w1] = valid_range(g.out[2], g.in[2], g.stride[2], g.pad[2], e);
          for (std::size_t od = od0; od < od1; ++od) {
            long id = long(od * g.stride[0]) - long(g.pad[0]) + long(a);
            if (id < 0 || id >= long(g.in[0])) continue;
            for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
              long ih = long(oh * g.stride[1]) - long(g.pad[1]) + long(b);
              if (ih < 0 || ih >= long(g.in[1])) continue;
              T* line = chan + (std::size_t(id) * g.in[1] + std::size_t(ih)) * g.in[2];
              const T* in = src + ((od - od0) * g.out[1] + oh) * g.out[2];
              const long off = long(e) - long(g.pad[2]);
              for (std::size_t ow = w0; ow < w1; ++ow) line[long(ow * g.stride[2]) + off] += in[ow];
            }
          }
        }
  }
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Spatial rank (2 or 3) and per-axis geometry for a conv whose big side has
// `big` extents. Weight extents are read from the trailing axes of `weight`.
struct SpatialInfo {
  std::size_t rank = 0;
  std::array<std::size_t, 3> extents{1, 1, 1};
  std::array<std::size_t, 3> kernel{1, 1, 1};
};

template <typename T>
SpatialInfo spatial_info(const Tensor<T>& input, const Tensor<T>& weight, const char* op) {
  SpatialInfo s;
  if (input.rank() == 3 && weight.rank() == 4) {
    s.rank = 2;
    s.extents = {1, input.dim(1), input.dim(2)};
    s.kernel = {1, weight.dim(2), weight.dim(3)};
  } else if (input.rank() == 4 && weight.rank() == 5) {
    s.rank = 3;
    s.extents = {input.dim(1), input.dim(2), input.dim(3)};
    s.kernel = {weight.dim(2), weight.dim(3), weight.dim(4)};
  } else {
    throw ShapeError(std::string(op) + ": unsupported input/weight ranks " + shape_str(input.shape()) +
                     " / " + shape_str(weight.shape()));
  }
  return s;
}

ConvGeom make_geom(std::size_t channels, const std::array<std::size_t, 3>& big,
                   const std::array<std::size_t, 3>& kernel, std::size_t rank, ConvSpec spec) {
  ConvGeom g;
  g.channels = channels;
  g.in = big;
  g.kernel = kernel;
  for (std::size_t ax = 0; ax < 3; ++ax) {
    const bool active = !(rank == 2 && ax == 0);
    g.stride[ax] = active ? spec.stride : 1;
    g.pad[ax] = active ? spec.padding : 0;
    g.out[ax] = conv_out_extent(g.in[ax], g.kernel[ax], g.stride[ax], g.pad[ax]);
  }
  return g;
}

template <typename T>
Shape make_shape(std::size_t channels, const std::array<std::size_t, 3>& ext, std::size_t rank) {
  if (rank == 2) return {channels, ext[1], ext[2]};
  return {channels, ext[0], ext[1], ext[2]};
}

template <typename T>
void check_bias(const Tensor<T>& bias, std::size_t channels, const char* op) {
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != channels))
    throw ShapeError(std::string(op) + ": bias shape " + shape_str(bias.shape()) + " expected [" +
                     std::to_string(channels) + "]");
}

}  // namespace

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ShapeError("conv: stride must be positive");
  if (in + 2 * padding < kernel)
    throw ShapeError("conv: kernel " + std::to_string(kernel) + " larger than padded extent " +
                     std::to_string(in + 2 * padding));
  return (in + 2 * padding - kernel) / stride + 1;
}

std::size_t conv_transpose_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                      std::size_t padding) {
  if ((in - 1) * stride + kernel < 2 * padding + 1)
    throw ShapeError("conv_transpose: padding too large");
  return (in - 1) * stride + kernel - 2 * padding;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.at(i) + b.at(i);
  return Tensor<T>::make_result(a.shape(), std::move(y), {a, b}, [](Node<T>& self) {
    accumulate<T>(*self.inputs[0], self.grad);
    accumulate<T>(*self.inputs[1], self.grad);
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.at(i) - b.at(i);
  return Tensor<T>::make_result(a.shape(), std::move(y), {a, b}, [](Node<T>& self) {
    accumulate<T>(*self.inputs[0], self.grad);
    auto& rhs = *self.inputs[1];
    if (!rhs.requires_grad) return;
    rhs.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) rhs.grad[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.at(i) * b.at(i);
  return Tensor<T>::make_result(a.shape(), std::move(y), {a, b}, [](Node<T>& self) {
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    if (lhs.requires_grad) {
      lhs.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) lhs.grad[i] += self.grad[i] * rhs.value[i];
    }
    if (rhs.requires_grad) {
      rhs.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) rhs.grad[i] += self.grad[i] * lhs.value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary(a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  return unary(a, [offset](T x) { return x + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.values()) total += v;
  return Tensor<T>::make_result(Shape{1}, {total}, {a}, [](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    in.ensure_grad();
    for (auto& g : in.grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / T(a.numel()));
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return unary(
      x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t channels = 0;
  std::vector<T> y;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail)
      throw ShapeError("concat: trailing extents differ " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    channels += p.dim(0);
    y.insert(y.end(), p.values().begin(), p.values().end());
  }
  Shape shape{channels};
  shape.insert(shape.end(), tail.begin(), tail.end());
  std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
  return Tensor<T>::make_result(std::move(shape), std::move(y), std::move(inputs), [](Node<T>& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      const std::size_t n = in->value.size();
      accumulate<T>(*in, std::span<const T>(self.grad).subspan(offset, n));
      offset += n;
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || weight.dim(1) != x.numel())
    throw ShapeError("linear: weight " + shape_str(weight.shape()) + " incompatible with input of " +
                     std::to_string(x.numel()) + " elements");
  const std::size_t out = weight.dim(0);
  const std::size_t in = weight.dim(1);
  check_bias(bias, out, "linear");
  Eigen::Map<const RowMat<T>> w(weight.values().data(), out, in);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xv(x.values().data(), in);
  std::vector<T> y(out);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> yv(y.data(), out);
  yv.noalias() = w * xv;
  if (bias.defined())
    for (std::size_t i = 0; i < out; ++i) y[i] += bias.at(i);
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor<T>::make_result(Shape{out}, std::move(y), std::move(inputs), [out, in](Node<T>& self) {
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> gy(self.grad.data(), out);
    auto& xn = *self.inputs[0];
    auto& wn = *self.inputs[1];
    if (xn.requires_grad) {
      xn.ensure_grad();
      Eigen::Map<const RowMat<T>> w(wn.value.data(), out, in);
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gx(xn.grad.data(), in);
      gx.noalias() += w.transpose() * gy;
    }
    if (wn.requires_grad) {
      wn.ensure_grad();
      Eigen::Map<RowMat<T>> gw(wn.grad.data(), out, in);
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> xr(xn.value.data(), in);
      gw.noalias() += gy * xr;
    }
    if (self.inputs.size() > 2) accumulate<T>(*self.inputs[2], self.grad);
  });
}

template <typename T>
Tensor<T> broadcast_spatial(const Tensor<T>& channels, const Shape& spatial) {
  if (channels.rank() != 1) throw ShapeError("broadcast_spatial: expected a channel vector");
  const std::size_t c = channels.dim(0);
  const std::size_t plane = numel(spatial);
  std::vector<T> y(c * plane);
  for (std::size_t i = 0; i < c; ++i) std::fill_n(y.begin() + i * plane, plane, channels.at(i));
  Shape shape{c};
  shape.insert(shape.end(), spatial.begin(), spatial.end());
  return Tensor<T>::make_result(std::move(shape), std::move(y), {channels}, [c, plane](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    in.ensure_grad();
    for (std::size_t i = 0; i < c; ++i) {
      T s = 0;
      for (std::size_t j = 0; j < plane; ++j) s += self.grad[i * plane + j];
      in.grad[i] += s;
    }
  });
}

template <typename T>
Tensor<T> conv(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, ConvSpec spec) {
  const SpatialInfo info = spatial_info(input, weight, "conv");
  const std::size_t c_in = input.dim(0);
  const std::size_t c_out = weight.dim(0);
  if (weight.dim(1) != c_in)
    throw ShapeError("conv: weight " + shape_str(weight.shape()) + " expects " +
                     std::to_string(weight.dim(1)) + " input channels but input " +
                     shape_str(input.shape()) + " has " + std::to_string(c_in));
  check_bias(bias, c_out, "conv");
  const ConvGeom g = make_geom(c_in, info.extents, info.kernel, info.rank, spec);

  std::vector<T> y(c_out * g.out_volume());
  {
    const std::size_t slab = g.slab_depth();
    std::vector<T> col(g.rows() * slab * g.out_plane());
    Eigen::Map<const RowMat<T>> w(weight.values().data(), c_out, g.rows());
    for (std::size_t od0 = 0; od0 < g.out[0]; od0 += slab) {
      const std::size_t od1 = std::min(g.out[0], od0 + slab);
      const std::size_t n = (od1 - od0) * g.out_plane();
      im2col(g, input.values().data(), od0, od1, col.data());
      Eigen::Map<const RowMat<T>> cm(col.data(), g.rows(), n);
      StridedMap<T> ym(y.data() + od0 * g.out_plane(), c_out, n, Eigen::OuterStride<>(g.out_volume()));
      ym.noalias() = w * cm;
    }
  }
  if (bias.defined())
    for (std::size_t co = 0; co < c_out; ++co) {
      const T b = bias.at(co);
      for (std::size_t i = 0; i < g.out_volume(); ++i) y[co * g.out_volume() + i] += b;
    }

  std::vector<Tensor<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor<T>::make_result(
      make_shape<T>(c_out, g.out, info.rank), std::move(y), std::move(inputs), [g, c_out](Node<T>& self) {
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        const std::size_t slab = g.slab_depth();
        std::vector<T> col(g.rows() * slab * g.out_plane());
        Eigen::Map<const RowMat<T>> w(wn.value.data(), c_out, g.rows());
        if (xn.requires_grad) xn.ensure_grad();
        if (wn.requires_grad) wn.ensure_grad();
        for (std::size_t od0 = 0; od0 < g.out[0]; od0 += slab) {
          const std::size_t od1 = std::min(g.out[0], od0 + slab);
          const std::size_t n = (od1 - od0) * g.out_plane();
          ConstStridedMap<T> gy(self.grad.data() + od0 * g.out_plane(), c_out, n,
                                Eigen::OuterStride<>(g.out_volume()));
          if (wn.requires_grad) {
            im2col(g, xn.value.data(), od0, od1, col.data());
            Eigen::Map<const RowMat<T>> cm(col.data(), g.rows(), n);
            Eigen::Map<RowMat<T>> gw(wn.grad.data(), c_out, g.rows());
            gw.noalias() += gy * cm.transpose();
          }
          if (xn.requires_grad) {
            Eigen::Map<RowMat<T>> cm(col.data(), g.rows(), n);
            cm.noalias() = w.transpose() * gy;
            col2im(g, col.data(), od0, od1, xn.grad.data());
          }
        }
        if (self.inputs.size() > 2) {
          auto& bn = *self.inputs[2];
          if (bn.requires_grad) {
            bn.ensure_grad();
            for (std::size_t co = 0; co < c_out; ++co) {
              T s = 0;
              for (std::size_t i = 0; i < g.out_volume(); ++i) s += self.grad[co * g.out_volume() + i];
              bn.grad[co] += s;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> conv_transpose(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                         ConvSpec spec) {
  const SpatialInfo info = spatial_info(input, weight, "conv_transpose");
  const std::size_t c_in = input.dim(0);
  const std::size_t c_out = weight.dim(1);
  if (weight.dim(0) != c_in)
    throw ShapeError("conv_transpose: weight " + shape_str(weight.shape()) + " expects " +
                     std::to_string(weight.dim(0)) + " input channels but input " +
                     shape_str(input.shape()) + " has " + std::to_string(c_in));
  check_bias(bias, c_out, "conv_transpose");

  std::array<std::size_t, 3> big{1, 1, 1};
  for (std::size_t ax = 0; ax < 3; ++ax) {
    const bool active = !(info.rank == 2 && ax == 0);
    big[ax] = active ? conv_transpose_out_extent(info.extents[ax], info.kernel[ax], spec.stride, spec.padding)
                     : 1;
  }
  // Conv geometry in the adjoint direction: big side is our output.
  const ConvGeom g = make_geom(c_out, big, info.kernel, info.rank, spec);
  if (g.out != info.extents)
    throw ShapeError("conv_transpose: inconsistent geometry for input " + shape_str(input.shape()));

  std::vector<T> y(c_out * g.in_volume(), T(0));
  {
    const std::size_t slab = g.slab_depth();
    std::vector<T> col(g.rows() * slab * g.out_plane());
    Eigen::Map<const RowMat<T>> w(weight.values().data(), c_in, g.rows());
    for (std::size_t od0 = 0; od0 < g.out[0]; od0 += slab) {
      const std::size_t od1 = std::min(g.out[0], od0 + slab);
      const std::size_t n = (od1 - od0) * g.out_plane();
      ConstStridedMap<T> xm(input.values().data() + od0 * g.out_plane(), c_in, n,
                            Eigen::OuterStride<>(g.out_volume()));
      Eigen::Map<RowMat<T>> cm(col.data(), g.rows(), n);
      cm.noalias() = w.transpose() * xm;
      col2im(g, col.data(), od0, od1, y.data());
    }
  }
  if (bias.defined())
    for (std::size_t co = 0; co < c_out; ++co) {
      const T b = bias.at(co);
      for (std::size_t i = 0; i < g.in_volume(); ++i) y[co * g.in_volume() + i] += b;
    }

  std::vector<Tensor<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor<T>::make_result(
      make_shape<T>(c_out, big, info.rank), std::move(y), std::move(inputs), [g, c_in, c_out](Node<T>& self) {
        auto& xn = *self.inputs[0];
        auto& wn = *self.inputs[1];
        const std::size_t slab = g.slab_depth();
        std::vector<T> col(g.rows() * slab * g.out_plane());
        Eigen::Map<const RowMat<T>> w(wn.value.data(), c_in, g.rows());
        if (xn.requires_grad) xn.ensure_grad();
        if (wn.requires_grad) wn.ensure_grad();
        for (std::size_t od0 = 0; od0 < g.out[0]; od0 += slab) {
          const std::size_t od1 = std::min(g.out[0], od0 + slab);
          const std::size_t n = (od1 - od0) * g.out_plane();
          im2col(g, self.grad.data(), od0, od1, col.data());
          Eigen::Map<const RowMat<T>> cm(col.data(), g.rows(), n);
          if (xn.requires_grad) {
            StridedMap<T> gx(xn.grad.data() + od0 * g.out_plane(), c_in, n, Eigen::OuterStride<>(g.out_volume()));
            gx.noalias() += w * cm;
          }
          if (wn.requires_grad) {
            ConstStridedMap<T> xm(xn.value.data() + od0 * g.out_plane(), c_in, n,
                                  Eigen::OuterStride<>(g.out_volume()));
            Eigen::Map<RowMat<T>> gw(wn.grad.data(), c_in, g.rows());
            gw.noalias() += xm * cm.transpose();
          }
        }
        if (self.inputs.size() > 2) {
          auto& bn = *self.inputs[2];
          if (bn.requires_grad) {
            bn.ensure_grad();
            for (std::size_t co = 0; co < c_out; ++co) {
              T s = 0;
              for (std::size_t i = 0; i < g.in_volume(); ++i) s += self.grad[co * g.in_volume() + i];
              bn.grad[co] += s;
            }
          }
        }
      });
}

#define DH_INSTANTIATE_OPS(T)                                                                     \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                                  \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                             \
  template Tensor<T> sum(const Tensor<T>&);                                                       \
  template Tensor<T> mean(const Tensor<T>&);                                                      \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                             \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                   \
  template Tensor<T> tanh(const Tensor<T>&);                                                      \
  template Tensor<T> concat(std::span<const Tensor<T>>);                                          \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> broadcast_spatial(const Tensor<T>&, const Shape&);                           \
  template Tensor<T> conv(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ConvSpec);        \
  template Tensor<T> conv_transpose(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ConvSpec);

DH_INSTANTIATE_OPS(float)
DH_INSTANTIATE_OPS(double)

}  // namespace dh::ops
