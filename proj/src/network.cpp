#include "deephuman/network.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

#include "deephuman/geometric.hpp"
#include "deephuman/ops.hpp"

namespace dh {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::MultiScale: return "multi_scale";
    case FusionMode::FinestOnly: return "finest_only";
    case FusionMode::CoarsestOnly: return "coarsest_only";
    case FusionMode::LatentConcat: return "latent_concat";
  }
  return "unknown";
}

FusionMode parse_fusion_mode(std::string_view text) {
  if (text == "multi_scale") return FusionMode::MultiScale;
  if (text == "finest_only") return FusionMode::FinestOnly;
  if (text == "coarsest_only") return FusionMode::CoarsestOnly;
  if (text == "latent_concat") return FusionMode::LatentConcat;
  throw std::invalid_argument("unknown fusion_mode '" + std::string(text) +
                              "' (expected multi_scale, finest_only, coarsest_only or latent_concat)");
}

std::size_t NetworkSpec::levels() const {
  const std::size_t full = channels_h.size();
  const std::size_t shift = std::size_t(std::countr_zero(scale_divisor));
  return shift < full ? full - shift : 0;
}

void NetworkSpec::validate() const {
  if (scale_divisor == 0 || !std::has_single_bit(scale_divisor))
    throw std::invalid_argument("scale_divisor must be a power of two >= 1, got " + std::to_string(scale_divisor));
  if (channels_g.size() != channels_h.size() || channels_r.size() != channels_h.size())
    throw std::invalid_argument("G, H and R must have the same number of levels");
  for (std::size_t i = 0; i < channels_g.size(); ++i)
    if (channels_g[i] == 0 || channels_h[i] == 0 || channels_r[i] == 0)
      throw std::invalid_argument("channel widths must be positive");
  const std::size_t l = levels();
  if (l == 0)
    throw std::invalid_argument("scale_divisor " + std::to_string(scale_divisor) + " leaves no encoder level");
  const std::size_t unit = scale_divisor << l;
  for (auto e : volume_dims)
    if (e % unit != 0)
      throw std::invalid_argument("volume extent " + std::to_string(e) + " is not divisible by " + std::to_string(unit));
  for (auto e : image_dims)
    if (e % unit != 0)
      throw std::invalid_argument("image extent " + std::to_string(e) + " is not divisible by " + std::to_string(unit));
  if (image_dims[0] != volume_dims[1] || image_dims[1] != volume_dims[0])
    throw std::invalid_argument("image rows/cols must match volume y/x extents");
}

std::array<std::size_t, 3> NetworkSpec::scaled_volume() const {
  return {volume_dims[0] / scale_divisor, volume_dims[1] / scale_divisor, volume_dims[2] / scale_divisor};
}

std::vector<bool> NetworkSpec::vft_levels() const {
  const std::size_t l = levels();
  std::vector<bool> on(l, false);
  switch (fusion_mode) {
    case FusionMode::MultiScale: on.assign(l, true); break;
    case FusionMode::FinestOnly: on.front() = true; break;
    case FusionMode::CoarsestOnly: on.back() = true; break;
    case FusionMode::LatentConcat: break;
  }
  return on;
}

namespace {

std::uint64_t stream_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (char c : name) {
    h ^= std::uint8_t(c);
    h *= 1099511628211ull;
  }
  std::uint64_t z = seed + h + 0x9E3779B97F4A7C15ull;  // splitmix64 finalizer
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

template <typename T>
void add_weight(ParameterStore<T>& store, std::uint64_t seed, const std::string& name, Shape shape, double fan_in) {
  std::mt19937_64 rng(stream_seed(seed, name));
  store.add_uniform(name, std::move(shape), std::sqrt(1.0 / fan_in), rng);
}

template <typename T>
void add_bias(ParameterStore<T>& store, const std::string& name, std::size_t n, T fill = T(0)) {
  auto& b = store.add(name, Shape{n});
  for (auto& v : b.mutable_values()) v = fill;
}

std::vector<std::size_t> image_dims_of(const Shape& s) { return {s[1], s[2], s[0]}; }
std::vector<std::size_t> volume_dims_of(const Shape& s) { return {s[3], s[2], s[1], s[0]}; }

void record(ShapeTrace* trace, const char* net, const std::string& layer, std::vector<std::size_t> dims) {
  if (trace) trace->push_back({net, layer, std::move(dims)});
}

}  // namespace

template <typename T>
DeepHumanNet<T>::DeepHumanNet(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  const std::size_t L = spec_.levels();
  const auto& cg = spec_.channels_g;
  const auto& ch = spec_.channels_h;
  const auto& cr = spec_.channels_r;
  const double k2 = 16.0, k3 = 64.0;  // 4x4 and 4x4x4 taps

  for (std::size_t k = 0; k < L; ++k) {
    const std::size_t in = k == 0 ? 6 : cg[k - 1];
    const std::string n = "g.conv" + std::to_string(k);
    add_weight(params_, seed, n + ".weight", {cg[k], in, 4, 4}, double(in) * k2);
    add_bias(params_, n + ".bias", cg[k]);
  }

  for (std::size_t k = 0; k < L; ++k) {
    const std::size_t in = k == 0 ? 3 : ch[k - 1];
    const std::string n = "h.enc" + std::to_string(k);
    add_weight(params_, seed, n + ".weight", {ch[k], in, 4, 4, 4}, double(in) * k3);
    add_bias(params_, n + ".bias", ch[k]);
  }
  // Every level gets modulation branches regardless of fusion mode. The alpha
  // branch starts at identity modulation (bias 1).
  for (std::size_t k = 0; k < L; ++k) {
    const std::string n = "h.vft" + std::to_string(k);
    add_weight(params_, seed, n + ".alpha.weight", {ch[k], cg[k], 3, 3}, double(cg[k]) * 9.0);
    add_bias(params_, n + ".alpha.bias", ch[k], T(1));
    add_weight(params_, seed, n + ".beta.weight", {ch[k], cg[k], 3, 3}, double(cg[k]) * 9.0);
    add_bias(params_, n + ".beta.bias", ch[k]);
  }
  const bool latent = spec_.fusion_mode == FusionMode::LatentConcat;
  if (latent) {
    const std::size_t h_img = spec_.image_height() >> L, w_img = spec_.image_width() >> L;
    const std::size_t flat = cg[L - 1] * h_img * w_img;
    add_weight(params_, seed, "h.latent.weight", {ch[L - 1], flat}, double(flat));
    add_bias(params_, "h.latent.bias", ch[L - 1]);
  }
  for (std::size_t k = L; k-- > 0;) {
    const std::size_t in = (k == L - 1) ? ch[L - 1] * (latent ? 2 : 1) : 2 * ch[k];
    const std::size_t out = k > 0 ? ch[k - 1] : spec_.h_head_channels;
    const std::string n = "h.dec" + std::to_string(k);
    add_weight(params_, seed, n + ".weight", {in, out, 4, 4, 4}, double(in) * k3 / 8.0);
    add_bias(params_, n + ".bias", out);
  }
  add_weight(params_, seed, "h.head.weight", {1, spec_.h_head_channels, 3, 3, 3}, double(spec_.h_head_channels) * 27.0);
  add_bias(params_, "h.head.bias", 1);

  for (std::size_t k = 0; k < L; ++k) {
    const std::size_t in = k == 0 ? 9 : cr[k - 1];
    const std::string n = "r.enc" + std::to_string(k);
    add_weight(params_, seed, n + ".weight", {cr[k], in, 4, 4}, double(in) * k2);
    add_bias(params_, n + ".bias", cr[k]);
  }
  for (std::size_t k = L; k-- > 0;) {
    const std::size_t in = (k == L - 1) ? cr[L - 1] : 2 * cr[k];
    const std::size_t out = k > 0 ? cr[k - 1] : spec_.r_head_channels;
    const std::string n = "r.dec" + std::to_string(k);
    add_weight(params_, seed, n + ".weight", {in, out, 4, 4}, double(in) * k2 / 4.0);
    add_bias(params_, n + ".bias", out);
  }
  add_weight(params_, seed, "r.head.weight", {3, spec_.r_head_channels, 3, 3}, double(spec_.r_head_channels) * 9.0);
  add_bias(params_, "r.head.bias", 3);
}

template <typename T>
void DeepHumanNet<T>::check_inputs(const Tensor<T>& image, const Tensor<T>& semantic_map,
                                   const Tensor<T>& semantic_volume) const {
  const auto [X, Y, Z] = spec_.scaled_volume();
  const Shape img{3, spec_.image_height(), spec_.image_width()};
  if (image.shape() != img)
    throw ShapeError("image must be " + shape_str(img) + " at divisor " + std::to_string(spec_.scale_divisor) +
                     ", got " + shape_str(image.shape()));
  if (semantic_map.shape() != img)
    throw ShapeError("semantic map must be " + shape_str(img) + ", got " + shape_str(semantic_map.shape()));
  const Shape vol{3, Z, Y, X};
  if (semantic_volume.shape() != vol)
    throw ShapeError("semantic volume must be " + shape_str(vol) + ", got " + shape_str(semantic_volume.shape()));
}

template <typename T>
std::vector<Tensor<T>> DeepHumanNet<T>::encode_image(const Tensor<T>& image, const Tensor<T>& semantic_map,
                                                     ShapeTrace* trace) const {
  const T slope = T(spec_.leaky_slope);
  const ops::ConvSpec down{2, 1};
  std::vector<Tensor<T>> feats;
  Tensor<T> x = ops::concat<T>(std::vector<Tensor<T>>{image, semantic_map});
  for (std::size_t k = 0; k < spec_.levels(); ++k) {
    const std::string n = "g.conv" + std::to_string(k);
    x = ops::leaky_relu(ops::conv(x, p(n + ".weight"), p(n + ".bias"), down), slope);
    record(trace, "G", "conv+lrelu", image_dims_of(x.shape()));
    feats.push_back(x);
  }
  return feats;
}

template <typename T>
Tensor<T> DeepHumanNet<T>::translate_volume(const Tensor<T>& semantic_volume, const std::vector<Tensor<T>>& features,
                                            ShapeTrace* trace) const {
  const std::size_t L = spec_.levels();
  if (features.size() != L) throw ShapeError("translate_volume: expected " + std::to_string(L) + " feature maps");
  const T slope = T(spec_.leaky_slope);
  const ops::ConvSpec down{2, 1};
  const auto vft = spec_.vft_levels();

  std::vector<Tensor<T>> skips;
  Tensor<T> v = semantic_volume;
  for (std::size_t k = 0; k < L; ++k) {
    const std::string n = "h.enc" + std::to_string(k);
    v = ops::leaky_relu(ops::conv(v, p(n + ".weight"), p(n + ".bias"), down), slope);
    record(trace, "H", "conv+lrelu", volume_dims_of(v.shape()));
    if (vft[k]) {
      const std::string b = "h.vft" + std::to_string(k);
      geo::VftBranches<T> br{p(b + ".alpha.weight"), p(b + ".alpha.bias"), p(b + ".beta.weight"), p(b + ".beta.bias")};
      v = geo::vft_apply(v, geo::vft_modulators(features[k], br, v.dim(0), slope));
    }
    skips.push_back(v);
  }
  if (spec_.fusion_mode == FusionMode::LatentConcat) {
    const Tensor<T>& deepest = features.back();
    Tensor<T> code = ops::leaky_relu(ops::linear(deepest, p("h.latent.weight"), p("h.latent.bias")), slope);
    Shape spatial(v.shape().begin() + 1, v.shape().end());
    v = ops::concat<T>(std::vector<Tensor<T>>{v, ops::broadcast_spatial(code, spatial)});
  }
  for (std::size_t k = L; k-- > 0;) {
    const std::string n = "h.dec" + std::to_string(k);
    v = ops::leaky_relu(ops::conv_transpose(v, p(n + ".weight"), p(n + ".bias"), down), slope);
    record(trace, "H", "transconv+lrelu", volume_dims_of(v.shape()));
    if (k > 0) v = ops::concat<T>(std::vector<Tensor<T>>{v, skips[k - 1]});
  }
  Tensor<T> occ = ops::sigmoid(ops::conv(v, p("h.head.weight"), p("h.head.bias"), ops::ConvSpec{1, 1}));
  record(trace, "H", "conv+sigmoid", volume_dims_of(occ.shape()));
  return occ;
}

template <typename T>
Tensor<T> DeepHumanNet<T>::project_normals(const Tensor<T>& occupancy) const {
  const std::size_t Z = occupancy.dim(1);
  Tensor<T> depth = geo::project_depth(occupancy, T(geo::background_depth(Z)));
  return geo::vertex_to_normal(geo::depth_to_vertex(depth), T(Z - 1));
}

template <typename T>
Tensor<T> DeepHumanNet<T>::refine_normals(const Tensor<T>& image, const Tensor<T>& semantic_map,
                                          const Tensor<T>& normal_raw, ShapeTrace* trace) const {
  const std::size_t L = spec_.levels();
  const T slope = T(spec_.leaky_slope);
  const ops::ConvSpec down{2, 1};
  Tensor<T> x = ops::concat<T>(
      std::vector<Tensor<T>>{geo::upsample2x(image), geo::upsample2x(semantic_map), geo::upsample2x(normal_raw)});
  std::vector<Tensor<T>> skips;
  for (std::size_t k = 0; k < L; ++k) {
    const std::string n = "r.enc" + std::to_string(k);
    x = ops::leaky_relu(ops::conv(x, p(n + ".weight"), p(n + ".bias"), down), slope);
    record(trace, "R", "conv+lrelu", image_dims_of(x.shape()));
    skips.push_back(x);
  }
  for (std::size_t k = L; k-- > 0;) {
    const std::string n = "r.dec" + std::to_string(k);
    x = ops::leaky_relu(ops::conv_transpose(x, p(n + ".weight"), p(n + ".bias"), down), slope);
    record(trace, "R", "transconv+lrelu", image_dims_of(x.shape()));
    if (k > 0) x = ops::concat<T>(std::vector<Tensor<T>>{x, skips[k - 1]});
  }
  Tensor<T> n = ops::tanh(ops::conv(x, p("r.head.weight"), p("r.head.bias"), ops::ConvSpec{1, 1}));
  record(trace, "R", "conv+tanh", image_dims_of(n.shape()));
  return n;
}

template <typename T>
ForwardOutputs<T> DeepHumanNet<T>::forward(const Tensor<T>& image, const Tensor<T>& semantic_map,
                                           const Tensor<T>& semantic_volume, ShapeTrace* trace) const {
  check_inputs(image, semantic_map, semantic_volume);
  ForwardOutputs<T> out;
  const auto feats = encode_image(image, semantic_map, trace);
  out.occupancy = translate_volume(semantic_volume, feats, trace);
  out.sil_front = geo::project_silhouette(out.occupancy, geo::View::Front);
  out.sil_side = geo::project_silhouette(out.occupancy, geo::View::Side);
  const std::size_t Z = out.occupancy.dim(1);
  out.depth = geo::project_depth(out.occupancy, T(geo::background_depth(Z)));
  out.normal_raw = geo::vertex_to_normal(geo::depth_to_vertex(out.depth), T(Z - 1));
  out.normal = refine_normals(image, semantic_map, out.normal_raw, trace);
  return out;
}

template class DeepHumanNet<float>;
template class DeepHumanNet<double>;

}  // namespace dh
