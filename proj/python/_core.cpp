#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ddspseg/config.hpp"
#include "ddspseg/gradcheck.hpp"
#include "ddspseg/losses.hpp"
#include "ddspseg/metrics.hpp"
#include "ddspseg/theory.hpp"
#include "ddspseg/train.hpp"
#include "ddspseg/volio.hpp"

namespace py = pybind11;
using namespace ddspseg;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;

std::span<const double> flat(const F64& a) { return {a.data(), static_cast<std::size_t>(a.size())}; }

py::tuple loss_result(const loss::LossEval& e, const F64& like) {
  F64 grad(std::vector<py::ssize_t>(like.shape(), like.shape() + like.ndim()));
  std::copy(e.grad.begin(), e.grad.end(), grad.mutable_data());
  return py::make_tuple(e.value, grad);
}

void same_size(const F64& a, const F64& b) {
  if (a.size() != b.size()) throw py::value_error("pred and gt differ in size");
}

// Arrays are indexed [z, y, x]; x varies fastest, matching Volume storage.
Volume to_volume(const F32& a, std::array<double, 3> spacing) {
  if (a.ndim() != 3) throw py::value_error("expected a 3-d array indexed [z, y, x]");
  const Dims d{static_cast<int>(a.shape(2)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0))};
  return Volume(d, Spacing{spacing[0], spacing[1], spacing[2]}, std::vector<float>(a.data(), a.data() + a.size()));
}

F32 to_array(const Volume& v) {
  const Dims d = v.dims();
  F32 out({d.nz, d.ny, d.nx});
  std::copy(v.data().begin(), v.data().end(), out.mutable_data());
  return out;
}

py::object opt(const std::optional<double>& v) { return v ? py::object(py::float_(*v)) : py::object(py::none()); }

config::RunConfig run_config(const std::map<std::string, std::string>& kv) {
  return config::apply(config::KeyValues(kv.begin(), kv.end()));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Losses, metrics, volume I/O and training from the ddspseg C++ core.";

  m.def("dsc_loss", [](const F64& p, const F64& g) { same_size(p, g); return loss_result(loss::dsc_loss(flat(p), flat(g)), p); },
        py::arg("pred"), py::arg("gt"), "Squared-denominator Dice loss; returns (value, gradient).");
  m.def("jaccard_loss",
        [](const F64& p, const F64& g) { same_size(p, g); return loss_result(loss::jaccard_loss(flat(p), flat(g)), p); },
        py::arg("pred"), py::arg("gt"));
  m.def(
      "dsc_loss_nosquare",
      [](const F64& p, const F64& g, const std::string& form) {
        same_size(p, g);
        if (form != "printed" && form != "exact") throw py::value_error("form must be 'printed' or 'exact'");
        const auto f = form == "exact" ? loss::NoSquareGradient::exact : loss::NoSquareGradient::printed;
        return loss_result(loss::dsc_loss_nosquare(flat(p), flat(g), f), p);
      },
      py::arg("pred"), py::arg("gt"), py::arg("form") = "printed");
  m.def(
      "reweighted_ce_loss",
      [](const F64& p, const F64& g, std::optional<std::pair<double, double>> w) {
        same_size(p, g);
        std::optional<loss::ClassWeights> cw;
        if (w) cw = loss::ClassWeights{w->first, w->second};
        return loss_result(loss::reweighted_ce_loss(flat(p), flat(g), cw), p);
      },
      py::arg("pred"), py::arg("gt"), py::arg("weights") = py::none(),
      "weights = (foreground, background); inverse class frequency when omitted.");

  m.def("kl_divergence", [](const F64& p, const F64& q) { same_size(p, q); return theory::kl_divergence(flat(p), flat(q)); });
  m.def("tv_distance", [](const F64& p, const F64& q) { same_size(p, q); return theory::tv_distance(flat(p), flat(q)); });

  m.def(
      "evaluate",
      [](const F32& pred, const F32& gt, std::array<double, 3> spacing, double threshold) {
        const auto p = BinaryMask::threshold(to_volume(pred, spacing), static_cast<float>(threshold));
        const auto g = BinaryMask::threshold(to_volume(gt, spacing), 0.5f);
        if (p.dims() != g.dims()) throw py::value_error("pred and gt differ in shape");
        const auto r = metrics::evaluate(p, g);
        py::dict d;
        d["dsc"] = r.dsc;
        d["arvd_pct"] = opt(r.arvd_pct);
        d["abd_mm"] = opt(r.abd_mm);
        d["hd95_mm"] = opt(r.hd95_mm);
        d["flags"] = r.flags;
        return d;
      },
      py::arg("pred"), py::arg("gt"), py::arg("spacing") = std::array<double, 3>{1.0, 1.0, 1.0},
      py::arg("threshold") = 0.5, "Metrics of pred (> threshold) against gt (> 0.5); spacing is (x, y, z) in mm.");

  m.def(
      "read_volume",
      [](const std::string& path) {
        const Volume v = io::read_volume(path);
        const Spacing s = v.spacing();
        return py::make_tuple(to_array(v), py::make_tuple(s.sx, s.sy, s.sz));
      },
      py::arg("path"), "Reads VVF or MetaImage; returns (array[z, y, x], spacing (x, y, z)).");
  m.def(
      "write_vvf",
      [](const std::string& path, const F32& a, std::array<double, 3> spacing, const std::string& dtype) {
        if (dtype != "u8" && dtype != "f32") throw py::value_error("dtype must be 'u8' or 'f32'");
        io::write_vvf(to_volume(a, spacing), dtype == "u8" ? io::VoxelType::u8 : io::VoxelType::f32, path);
      },
      py::arg("path"), py::arg("array"), py::arg("spacing") = std::array<double, 3>{1.0, 1.0, 1.0},
      py::arg("dtype") = "f32");

  m.def(
      "gradcheck",
      [](const std::string& name, std::size_t trials, std::uint64_t seed) {
        gradcheck::Options o;
        o.trials = trials;
        o.seed = seed;
        const auto r = gradcheck::run(loss::parse_kind(name), o);
        py::dict d;
        d["loss"] = r.loss;
        d["trials"] = r.trials;
        d["failures"] = r.failures;
        d["max_rel_err"] = r.max_rel_err;
        d["passed"] = r.passed();
        if (r.defect) d["constant_gradient"] = r.defect->constant_gradient;
        return d;
      },
      py::arg("loss"), py::arg("trials") = 100, py::arg("seed") = 0);

  m.def("config_keys", &config::known_keys);
  m.def(
      "synth_case",
      [](int index, const std::map<std::string, std::string>& kv) {
        const auto cfg = run_config(kv);
        const auto c = train::validation_case(cfg.train, index);
        return py::make_tuple(to_array(c.image), to_array(c.truth.volume()));
      },
      py::arg("index") = 0, py::arg("config") = std::map<std::string, std::string>{},
      "Held-out synthetic case (image, mask) for a key = value configuration.");
  m.def(
      "train",
      [](const std::map<std::string, std::string>& kv) {
        const auto cfg = run_config(kv);
        train::TrainResult r;
        {
          py::gil_scoped_release release;
          r = train::train_run(cfg.train);
        }
        py::list log;
        for (const auto& row : r.log) {
          py::dict d;
          d["iter"] = row.iter;
          d["loss_main"] = row.loss_main;
          d["loss_stage2"] = row.loss_stage2;
          d["loss_stage3"] = row.loss_stage3;
          d["loss_total"] = row.loss_total;
          d["lr"] = row.lr;
          log.append(d);
        }
        py::list val;
        for (const auto& row : r.validation) val.append(py::make_tuple(row.iter, row.dice));
        py::dict out;
        out["log"] = log;
        out["validation"] = val;
        out["final_val_dice"] = r.final_val_dice;
        out["checkpoint"] = py::bytes(reinterpret_cast<const char*>(r.checkpoint.data()), r.checkpoint.size());
        out["aborted_at"] = r.aborted_at ? py::object(py::int_(*r.aborted_at)) : py::object(py::none());
        out["abort_reason"] = r.abort_reason;
        return out;
      },
      py::arg("config") = std::map<std::string, std::string>{}, "Trains one network; config uses the CLI keys.");

  py::register_exception<config::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<io::FormatError>(m, "FormatError", PyExc_IOError);
}
