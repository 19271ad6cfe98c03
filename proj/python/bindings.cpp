#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "apnt/error.hpp"
#include "apnt/evaluation.hpp"
#include "apnt/rgbe.hpp"
#include "cli.hpp"

namespace py = pybind11;
using namespace apnt;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 3) throw py::value_error("expected a (C, H, W) array");
  Tensor t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
           static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

Array to_array(const Tensor& t) {
  Array a({t.channels(), t.height(), t.width()});
  std::copy(t.data(), t.data() + t.size(), a.mutable_data());
  return a;
}

FeaturePyramid to_pyramid(const std::vector<Array>& levels) {
  if (levels.size() != 3) throw py::value_error("a pyramid has three levels");
  FeaturePyramid p;
  for (int l = 0; l < 3; ++l) p.levels[l] = to_tensor(levels[static_cast<std::size_t>(l)]);
  return p;
}

py::array_t<int> match_array(const MatchLevel& m) {
  py::array_t<int> a({m.height, m.width, 2});
  auto v = a.mutable_unchecked<3>();
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      v(y, x, 0) = m.at(y, x).row;
      v(y, x, 1) = m.at(y, x).col;
    }
  return a;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<StructuralError>(m, "StructuralError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_OSError);
  py::register_exception<LoadError>(m, "LoadError", PyExc_OSError);

  m.def("exposure_ratios", [](const std::vector<double>& b) { return exposure_ratios(b); });
  m.def("mu_law", [](const Array& h, double mu) { return to_array(mu_law(to_tensor(h), mu)); },
        py::arg("h"), py::arg("mu") = 5000.0);
  m.def("saturation_mask", [](const Array& img, double threshold) {
    return to_array(saturation_mask(to_tensor(img), threshold).mask);
  });
  m.def("ms_hdr_transform", [](const Array& h_s, double t_s, double t_m, double eps_sat) {
    DomainParams d;
    d.eps_sat = eps_sat;
    return to_array(ms_hdr_transform(RadianceMap{to_tensor(h_s)}, t_s, t_m, d).pixels);
  }, py::arg("h_s"), py::arg("t_s"), py::arg("t_m"), py::arg("eps_sat") = 1.0);

  m.def("psnr_linear", [](const Array& o, const Array& g) {
    return psnr_linear(to_tensor(o), to_tensor(g));
  });
  m.def("psnr_mu", [](const Array& o, const Array& g, double mu) {
    return psnr_mu(to_tensor(o), to_tensor(g), mu);
  }, py::arg("out"), py::arg("gt"), py::arg("mu") = 5000.0);
  m.def("ssim", [](const Array& o, const Array& g, bool tonemapped, double mu) {
    return ssim(to_tensor(o), to_tensor(g), tonemapped ? SsimDomain::mu : SsimDomain::linear, mu);
  }, py::arg("out"), py::arg("gt"), py::arg("tonemapped") = false, py::arg("mu") = 5000.0);

  m.def("float_to_rgbe", [](double r, double g, double b) {
    const Rgbe p = float_to_rgbe(r, g, b);
    return std::array<int, 4>{p[0], p[1], p[2], p[3]};
  });
  m.def("rgbe_to_float", [](std::array<int, 4> p) {
    return rgbe_to_float(Rgbe{static_cast<std::uint8_t>(p[0]), static_cast<std::uint8_t>(p[1]),
                              static_cast<std::uint8_t>(p[2]), static_cast<std::uint8_t>(p[3])});
  });
  m.def("read_hdr", [](const std::filesystem::path& p) { return to_array(read_hdr(p).pixels); });
  m.def("write_hdr", [](const std::filesystem::path& p, const Array& img) {
    write_hdr(p, RadianceMap{to_tensor(img)});
  });

  m.def("synthesize_scene", [](int height, int width, std::uint64_t seed, int dy, int dx) {
    SyntheticSceneOptions o;
    o.height = height;
    o.width = width;
    o.seed = seed;
    o.motion_dy = dy;
    o.motion_dx = dx;
    const SceneRecord rec = synthesize_scene(o);
    py::dict d;
    d["ldr"] = py::make_tuple(to_array(rec.ldr[0].pixels), to_array(rec.ldr[1].pixels),
                              to_array(rec.ldr[2].pixels));
    d["biases"] = rec.biases;
    d["gt"] = to_array(rec.gt_hdr->pixels);
    return d;
  }, py::arg("height") = 64, py::arg("width") = 64, py::arg("seed") = 0, py::arg("motion_dy") = 0,
     py::arg("motion_dx") = 0);

  m.def("handcrafted_pyramid", [](const Array& img) {
    const FeaturePyramid p = handcrafted_pyramid(to_tensor(img));
    return std::vector<Array>{to_array(p.levels[0]), to_array(p.levels[1]),
                              to_array(p.levels[2])};
  });
  m.def("backbone_pyramid", [](const std::filesystem::path& weights, const Array& img) {
    const FeaturePyramid p = extract_pyramid(to_tensor(img), load_backbone(weights));
    return std::vector<Array>{to_array(p.levels[0]), to_array(p.levels[1]),
                              to_array(p.levels[2])};
  });
  m.def("progressive_match", [](const std::vector<Array>& source, const std::vector<Array>& target,
                                std::array<int, 3> radius, bool brute_force) {
    WindowSpec w;
    w.radius = radius;
    const FeaturePyramid s = to_pyramid(source), t = to_pyramid(target);
    const MatchField f = brute_force ? brute_force_match(s, t, w) : progressive_match(s, t, w);
    return std::vector<py::array_t<int>>{match_array(f.levels[0]), match_array(f.levels[1]),
                                         match_array(f.levels[2])};
  }, py::arg("source"), py::arg("target"), py::arg("radius") = std::array<int, 3>{2, 2, 8},
     py::arg("brute_force") = false);

  m.def("run_cli", [](std::vector<std::string> args) {
    args.insert(args.begin(), "apnt");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
  });
}
