#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "deephuman/checkpoint.hpp"
#include "deephuman/geometric.hpp"
#include "deephuman/grid.hpp"
#include "deephuman/mesh_pipeline.hpp"
#include "deephuman/synth.hpp"
#include "deephuman/training.hpp"

namespace py = pybind11;
using namespace dh;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

// [C, Z, Y, X] array <-> grid.
VoxelGrid grid_from(const FloatArray& a) {
  if (a.ndim() != 3 && a.ndim() != 4) throw py::value_error("expected a [Z,Y,X] or [C,Z,Y,X] array");
  const bool chan = a.ndim() == 4;
  const auto s = [&](int i) { return std::size_t(a.shape(chan ? i + 1 : i)); };
  VoxelGrid g({s(2), s(1), s(0)}, chan ? std::size_t(a.shape(0)) : 1);
  std::copy(a.data(), a.data() + a.size(), g.values.begin());
  return g;
}

FloatArray array_from(const VoxelGrid& g) {
  FloatArray a({g.channels, g.nz(), g.ny(), g.nx()});
  std::copy(g.values.begin(), g.values.end(), a.mutable_data());
  return a;
}

FloatArray array_from(const ImageMap& m) {
  FloatArray a({m.channels, m.height, m.width});
  std::copy(m.values.begin(), m.values.end(), a.mutable_data());
  return a;
}

Tensor<double> tensor_from(const DoubleArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor<double>(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

DoubleArray array_from(const Tensor<double>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  DoubleArray a(shape);
  std::copy(t.values().begin(), t.values().end(), a.mutable_data());
  return a;
}

py::tuple mesh_arrays(const TriMesh& m) {
  DoubleArray v({m.vertices.size(), std::size_t(3)});
  py::array_t<std::uint32_t> f({m.faces.size(), std::size_t(3)});
  auto vv = v.mutable_unchecked<2>();
  auto ff = f.mutable_unchecked<2>();
  for (std::size_t i = 0; i < m.vertices.size(); ++i)
    for (int k = 0; k < 3; ++k) vv(i, k) = m.vertices[i][k];
  for (std::size_t i = 0; i < m.faces.size(); ++i)
    for (int k = 0; k < 3; ++k) ff(i, k) = m.faces[i][std::size_t(k)];
  return py::make_tuple(v, f);
}

TriMesh mesh_from(const DoubleArray& v, const py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>& f) {
  if (v.ndim() != 2 || v.shape(1) != 3 || f.ndim() != 2 || f.shape(1) != 3)
    throw py::value_error("expected vertices [N,3] and faces [M,3]");
  TriMesh m;
  for (py::ssize_t i = 0; i < v.shape(0); ++i) m.vertices.emplace_back(v.at(i, 0), v.at(i, 1), v.at(i, 2));
  for (py::ssize_t i = 0; i < f.shape(0); ++i) m.faces.push_back({f.at(i, 0), f.at(i, 1), f.at(i, 2)});
  m.validate();
  return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the deephuman package";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<MeshError>(m, "MeshError", PyExc_ValueError);

  m.def("read_dhvg", [](const std::filesystem::path& p) { return array_from(read_dhvg(p)); }, py::arg("path"),
        "Volume as float32 [C, Z, Y, X]; image-plane maps come back with Z = 1.");
  m.def("write_dhvg", [](const std::filesystem::path& p, const FloatArray& a) { write_dhvg(p, grid_from(a)); },
        py::arg("path"), py::arg("array"));
  m.def("read_png", [](const std::filesystem::path& p) { return array_from(read_png(p)); }, py::arg("path"),
        "8-bit PNG as float32 [C, H, W] in [0, 1].");

  m.def(
      "read_checkpoint",
      [](const std::filesystem::path& p) {
        py::dict out;
        for (const auto& e : read_checkpoint(p)) {
          std::vector<py::ssize_t> shape(e.shape.begin(), e.shape.end());
          FloatArray a(shape);
          std::copy(e.values.begin(), e.values.end(), a.mutable_data());
          out[py::str(e.name)] = a;
        }
        return out;
      },
      py::arg("path"), "Checkpoint entries as an ordered name -> float32 array dict.");

  m.def(
      "marching_cubes",
      [](const FloatArray& volume, double iso) { return mesh_arrays(marching_cubes(grid_from(volume), iso)); },
      py::arg("volume"), py::arg("iso") = 0.5,
      "Watertight isosurface of a [Z,Y,X] volume; returns (vertices [N,3] as x,y,z, faces [M,3]).");
  m.def(
      "is_watertight",
      [](const DoubleArray& v, const py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>& f) {
        return is_watertight(mesh_from(v, f));
      },
      py::arg("vertices"), py::arg("faces"));
  m.def(
      "enclosed_volume",
      [](const DoubleArray& v, const py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>& f) {
        return enclosed_volume(mesh_from(v, f));
      },
      py::arg("vertices"), py::arg("faces"));

  m.def(
      "iou_zshift",
      [](const FloatArray& pred, const FloatArray& gt, int window) {
        const auto r = iou_zshift(grid_from(pred), grid_from(gt), window);
        return py::make_tuple(r.best_shift, r.iou, r.curve);
      },
      py::arg("pred"), py::arg("gt"), py::arg("window") = -1,
      "Best z-shift, its IoU, and the IoU curve over shifts -window..window.");

  m.def(
      "project_depth",
      [](const DoubleArray& occ, double background) { return array_from(geo::project_depth(tensor_from(occ), background)); },
      py::arg("occupancy"), py::arg("background"), "Front depth [1,Y,X] of a [1,Z,Y,X] occupancy volume.");
  m.def(
      "project_silhouette",
      [](const DoubleArray& occ, const std::string& view) {
        if (view != "front" && view != "side") throw py::value_error("view must be 'front' or 'side'");
        return array_from(geo::project_silhouette(tensor_from(occ), view == "front" ? geo::View::Front : geo::View::Side));
      },
      py::arg("occupancy"), py::arg("view") = "front");
  m.def(
      "depth_to_normal",
      [](const DoubleArray& depth, double max_foreground_depth) {
        return array_from(geo::vertex_to_normal(geo::depth_to_vertex(tensor_from(depth)), max_foreground_depth));
      },
      py::arg("depth"), py::arg("max_foreground_depth"), "Sobel normals [3,Y,X] of a [1,Y,X] depth map.");

  m.def(
      "generate_body",
      [](std::uint64_t seed, double amplitude, std::size_t cells) {
        const Body b = generate_body(seed, amplitude, cells);
        py::dict out;
        out["coarse"] = mesh_arrays(b.coarse);
        out["detailed"] = mesh_arrays(b.detailed);
        out["diagnostics"] = b.diagnostics;
        return out;
      },
      py::arg("seed"), py::arg("detail_amplitude") = kDefaultDetailAmplitude, py::arg("cells") = kDefaultBodyCells,
      "Procedural body meshes in model space (y up).");

  m.def(
      "build_corpus",
      [](const std::filesystem::path& root, std::size_t bodies, std::size_t views, std::size_t divisor,
         std::uint64_t seed, double detail) {
        CorpusOptions o{bodies, views, divisor, seed, detail};
        py::gil_scoped_release release;
        return build_corpus(root, o).size();
      },
      py::arg("root"), py::arg("bodies") = 16, py::arg("views") = 4, py::arg("divisor") = 4, py::arg("seed") = 0,
      py::arg("detail") = kDefaultDetailAmplitude, "Writes a synthetic corpus; returns the item count.");

  m.def(
      "parse_config",
      [](const std::string& text) {
        const TrainConfig c = parse_config(text);
        py::dict d;
        d["scale_divisor"] = c.scale_divisor;
        d["fusion_mode"] = to_string(c.fusion_mode);
        d["lambda_fs"] = c.weights.lambda_fs;
        d["lambda_ss"] = c.weights.lambda_ss;
        d["lambda_n"] = c.weights.lambda_n;
        d["gamma"] = c.weights.gamma;
        d["lr"] = c.lr;
        d["batch"] = c.batch;
        d["stage1_iters"] = c.stage1_iters;
        d["stage2_iters"] = c.stage2_iters;
        d["seed"] = c.seed;
        return d;
      },
      py::arg("text"), "Resolved training configuration from `key = value` text.");
}
