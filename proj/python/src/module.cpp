#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "pulsemap/cli.hpp"
#include "pulsemap/error.hpp"
#include "pulsemap/model.hpp"
#include "pulsemap/optim.hpp"
#include "pulsemap/patch_embed.hpp"
#include "pulsemap/signal.hpp"
#include "pulsemap/train.hpp"
#include "pulsemap/transform2d.hpp"

namespace py = pybind11;
using namespace pulsemap;

namespace {

Segment as_segment(std::vector<double> samples, double fs) {
  Segment s;
  s.samples = std::move(samples);
  s.sample_rate_hz = fs;
  s.duration_s = fs > 0.0 ? double(s.samples.size()) / fs : 0.0;
  return s;
}

py::tuple map_result(const TimeFreqMap& m) { return py::make_tuple(m.values, m.row_axis); }

}  // namespace

PYBIND11_MODULE(_pulsemap, m) {
  m.doc() = "Biosensor-to-image transforms and training utilities.";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericsError>(m, "NumericsError", base.ptr());

  m.def("toeplitz_map", [](std::vector<double> x) { return toeplitz_map(as_segment(std::move(x), 1.0)).values; },
        py::arg("samples"), "P/2 x P/2 map with map[i, j] = samples[i + j].");

  m.def(
      "spwvd_map",
      [](std::vector<double> x, double fs, std::size_t n_freq_bins, std::size_t window_length, double beta) {
        return map_result(
            spwvd_map(as_segment(std::move(x), fs), SmoothingWindows::kaiser(window_length, beta), n_freq_bins));
      },
      py::arg("samples"), py::arg("sample_rate_hz"), py::arg("n_freq_bins") = 256, py::arg("window_length") = 31,
      py::arg("beta") = 8.6, "Returns (values, frequencies_hz); rows ascend from 0 Hz.");

  m.def(
      "cwt_scalogram",
      [](std::vector<double> x, double fs, double gamma, double time_bandwidth, int voices) {
        return map_result(cwt_scalogram(as_segment(std::move(x), fs), {gamma, time_bandwidth, voices}));
      },
      py::arg("samples"), py::arg("sample_rate_hz"), py::arg("gamma") = 3.0, py::arg("time_bandwidth") = 60.0,
      py::arg("voices_per_octave") = 10, "Returns (values, frequencies_hz); rows descend from Nyquist.");

  m.def(
      "render_image",
      [](const Matrix& values, std::size_t size) {
        TimeFreqMap map;
        map.values = values;
        const ImageTensor img = render_image(map, size);
        py::array_t<double> out({img.height, img.width, img.channels});
        std::copy(img.values.begin(), img.values.end(), out.mutable_data());
        return out;
      },
      py::arg("values"), py::arg("size") = kImageSize, "size x size x 3 image in [0, 1].");

  m.def(
      "normalize_personal",
      [](std::vector<double> x, double person_min, double person_max, double alpha) {
        return normalize_personal(as_segment(std::move(x), 1.0), {person_min, person_max, alpha}).samples;
      },
      py::arg("samples"), py::arg("person_min"), py::arg("person_max"), py::arg("alpha") = 1000.0);

  m.def(
      "plan_mask",
      [](std::size_t n, double ratio, std::uint64_t seed) { return plan_mask(n, ratio, seed).masked_indices; },
      py::arg("n_patches"), py::arg("ratio"), py::arg("seed"), "Sorted masked patch indices.");

  m.def(
      "pretrain_loss",
      [](double l_m, double l_c, double lambda_m, double lambda_c) {
        TransformerConfig c = TransformerConfig::desk();
        c.lambda_m = lambda_m;
        c.lambda_c = lambda_c;
        return pretrain_loss(l_m, l_c, c);
      },
      py::arg("l_m"), py::arg("l_c"), py::arg("lambda_m") = 0.4, py::arg("lambda_c") = 1.0);

  m.def("lr_schedule", &lr_schedule, py::arg("step"), py::arg("total_steps"), py::arg("base_lr"),
        py::arg("floor_fraction") = 0.0);

  m.def(
      "kfold_split",
      [](const std::vector<std::string>& ids, int k, std::uint64_t seed) {
        const FoldPlan plan = kfold_split(ids, k, seed);
        std::vector<std::vector<std::string>> folds;
        for (int f = 0; f < plan.k; ++f) folds.push_back(plan.test_subjects(f));
        return folds;
      },
      py::arg("subject_ids"), py::arg("k"), py::arg("seed") = 0, "Test subjects of each fold.");

  m.def(
      "compute_metrics",
      [](const std::vector<int>& pred, const std::vector<int>& labels, int n_classes) {
        const Metrics mt = compute_metrics(pred, labels, n_classes);
        py::dict d;
        d["accuracy"] = mt.accuracy;
        d["f1"] = mt.f1;
        d["confusion"] = mt.confusion;
        return d;
      },
      py::arg("predictions"), py::arg("labels"), py::arg("n_classes"));

  m.def(
      "run_command",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_command(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a CLI subcommand in-process; returns (exit_code, stdout, stderr).");
}
