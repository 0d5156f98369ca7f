#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "pifukit/camera.hpp"
#include "pifukit/gradcheck.hpp"
#include "pifukit/json_io.hpp"
#include "pifukit/metrics.hpp"
#include "pifukit/reconstruct.hpp"
#include "pifukit/sampling.hpp"
#include "pifukit/synthdata.hpp"

namespace py = pybind11;
using namespace pifukit;
using nlohmann::json;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U32 = py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>;

TriMesh mesh_from_arrays(const F64& vertices, const U32& faces, const std::vector<int>& labels) {
  if (vertices.ndim() != 2 || vertices.shape(1) != 3) throw ShapeMismatch("vertices must be (n, 3)");
  if (faces.ndim() != 2 || faces.shape(1) != 3) throw ShapeMismatch("faces must be (m, 3)");
  std::vector<Vec3> v(static_cast<std::size_t>(vertices.shape(0)));
  const double* pv = vertices.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = {pv[3 * i], pv[3 * i + 1], pv[3 * i + 2]};
  std::vector<Face> f(static_cast<std::size_t>(faces.shape(0)));
  const std::uint32_t* pf = faces.data();
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = {pf[3 * i], pf[3 * i + 1], pf[3 * i + 2]};
  return TriMesh(std::move(v), std::move(f), labels);
}

py::array_t<double> vertex_array(const TriMesh& m) {
  py::array_t<double> out({static_cast<py::ssize_t>(m.vertex_count()), py::ssize_t{3}});
  auto a = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < m.vertex_count(); ++i)
    for (int k = 0; k < 3; ++k) a(static_cast<py::ssize_t>(i), k) = m.vertices()[i][k];
  return out;
}

py::array_t<std::uint32_t> face_array(const TriMesh& m) {
  py::array_t<std::uint32_t> out({static_cast<py::ssize_t>(m.face_count()), py::ssize_t{3}});
  auto a = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < m.face_count(); ++i)
    for (int k = 0; k < 3; ++k) a(static_cast<py::ssize_t>(i), k) = m.faces()[i][static_cast<std::size_t>(k)];
  return out;
}

// (h, w, c) float32 copy of a map.
py::array_t<float> map_array(const Map2D& m) {
  py::array_t<float> out({m.height, m.width, m.channels});
  std::copy(m.data.begin(), m.data.end(), out.mutable_data());
  return out;
}

py::array_t<double> sample_array(const std::vector<TrainingSample>& samples) {
  py::array_t<double> out({static_cast<py::ssize_t>(samples.size()), py::ssize_t{4}});
  auto a = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto r = static_cast<py::ssize_t>(i);
    a(r, 0) = samples[i].point.x;
    a(r, 1) = samples[i].point.y;
    a(r, 2) = samples[i].point.z;
    a(r, 3) = samples[i].label;
  }
  return out;
}

template <typename T>
T from_json_text(const std::string& text, const char* what) {
  return text.empty() ? T{} : parse_json(text, what).get<T>();
}

py::dict map_stack_dict(const MapStack& s) {
  py::dict d;
  d["camera"] = json(s.camera).dump();
  d["parse_classes"] = s.parse_classes;
  d["normal"] = map_array(s.normal);
  d["rel_depth"] = map_array(s.rel_depth);
  d["parse"] = map_array(s.parse);
  d["mask"] = map_array(s.mask);
  return d;
}

}  // namespace

PYBIND11_MODULE(_pifukit, m) {
  m.doc() = "Native core of pifukit";
  static py::exception<Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.def("version", &version_string);

  py::class_<TriMesh>(m, "TriMesh")
      .def(py::init(&mesh_from_arrays), py::arg("vertices"), py::arg("faces"),
           py::arg("labels") = std::vector<int>{})
      .def_property_readonly("vertices", &vertex_array)
      .def_property_readonly("faces", &face_array)
      .def_property_readonly("labels", [](const TriMesh& t) { return t.face_part_labels(); })
      .def("face_count", &TriMesh::face_count)
      .def("vertex_count", &TriMesh::vertex_count)
      .def("is_watertight", &TriMesh::is_watertight)
      .def("signed_volume", &TriMesh::signed_volume)
      .def("bbox", [](const TriMesh& t) {
        const Aabb b = t.bbox();
        return py::make_tuple(py::make_tuple(b.lo.x, b.lo.y, b.lo.z), py::make_tuple(b.hi.x, b.hi.y, b.hi.z));
      });

  m.def("load_mesh", &load_mesh, py::arg("path"), py::arg("normalize") = false);
  m.def("save_obj", &save_obj, py::arg("mesh"), py::arg("path"));
  m.def("icosphere", [](int level, double radius) { return icosphere(level, radius); }, py::arg("level"),
        py::arg("radius") = 1.0);
  m.def("make_shape", [](const std::string& spec) { return make_shape(from_json_text<ShapeSpec>(spec, "shape")); },
        py::arg("spec_json"));
  m.def("is_inside", [](const TriMesh& t, double x, double y, double z) { return is_inside(t, {x, y, z}); });
  m.def("signed_z_distance",
        [](const TriMesh& t, double x, double y, double z) { return signed_z_distance(t, {x, y, z}); });

  m.def("dos_label", [](double s, double c) { return dos_label(s, c); }, py::arg("signed_distance"), py::arg("c"));
  m.def("spatial_samples",
        [](const TriMesh& t, const std::string& cfg) {
          return sample_array(spatial_samples(t, from_json_text<SamplerConfig>(cfg, "sampler")));
        },
        py::arg("mesh"), py::arg("config_json") = "");
  m.def("dos_samples",
        [](const TriMesh& t, const std::string& cfg) {
          return sample_array(dos_samples(t, from_json_text<SamplerConfig>(cfg, "sampler")));
        },
        py::arg("mesh"), py::arg("config_json") = "");

  m.def("render_maps",
        [](const TriMesh& t, int resolution, double yaw, int parse_classes) {
          RenderOptions o;
          o.parse_classes = parse_classes;
          return map_stack_dict(render_maps(t, Camera::with_default_scale(resolution, yaw), o));
        },
        py::arg("mesh"), py::arg("resolution"), py::arg("yaw") = 0.0, py::arg("parse_classes") = 0);
  m.def("load_map_stack", [](const std::filesystem::path& p) { return map_stack_dict(load_map_stack(p)); });

  m.def("marching_cubes",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& values, double iso,
           bool close_boundary) {
          if (values.ndim() != 3 || values.shape(0) != values.shape(1) || values.shape(1) != values.shape(2))
            throw ShapeMismatch("values must be a (G, G, G) array indexed [z, y, x]");
          OccupancyGrid g(static_cast<int>(values.shape(0)));
          std::copy(values.data(), values.data() + values.size(), g.values.begin());
          return marching_cubes(g, iso, close_boundary);
        },
        py::arg("values"), py::arg("iso") = 0.5, py::arg("close_boundary") = false);
  m.def("reconstruct",
        [](const std::filesystem::path& checkpoint, const std::filesystem::path& maps, int grid,
           const std::string& mode) {
          const Model<float> model = load_checkpoint(checkpoint);
          const QueryMode q = mode.empty() ? (model.hri_trained ? QueryMode::Full : QueryMode::LowOnly)
                                           : parse_query_mode(mode);
          py::gil_scoped_release release;
          const auto features = model.encode(model.prepare(load_map_stack(maps)), q);
          return marching_cubes(eval_grid(model, features, grid, q), 0.5, true);
        },
        py::arg("checkpoint"), py::arg("maps"), py::arg("grid") = 128, py::arg("mode") = "");

  m.def("chamfer", &chamfer, py::arg("a"), py::arg("b"), py::arg("n") = 100000, py::arg("seed") = 0);
  m.def("p2s", &p2s, py::arg("recon"), py::arg("gt"), py::arg("n") = 100000, py::arg("seed") = 0);
  m.def("roughness", &roughness);
  m.def("region_iou",
        [](const TriMesh& recon, const TriMesh& gt, std::array<double, 3> lo, std::array<double, 3> hi, int g) {
          return region_iou(recon, gt, Aabb{{lo[0], lo[1], lo[2]}, {hi[0], hi[1], hi[2]}}, g);
        },
        py::arg("recon"), py::arg("gt"), py::arg("lo"), py::arg("hi"), py::arg("g") = 32);
  m.def("evaluate",
        [](const TriMesh& recon, const TriMesh& gt, const std::string& camera, std::size_t n, std::uint64_t seed) {
          EvalOptions o;
          o.n_samples = n;
          o.seed = seed;
          return json(evaluate(recon, gt, parse_json(camera, "camera").get<Camera>(), o)).dump();
        },
        py::arg("recon"), py::arg("gt"), py::arg("camera_json"), py::arg("n") = 100000, py::arg("seed") = 0);

  m.def("gradcheck", [](std::uint64_t seed) {
    py::list out;
    for (const auto& k : run_gradcheck_suite(seed)) {
      py::dict d;
      d["kernel"] = k.kernel;
      d["max_rel_error"] = k.max_rel_error;
      d["threshold"] = k.threshold;
      d["passed"] = k.passed;
      out.append(d);
    }
    return out;
  }, py::arg("seed") = 0);
}
