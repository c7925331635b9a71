#include "report.hpp"

#include <cmath>

namespace ddspseg::cli {

namespace {

Json opt_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

/// JSON has no infinity; non-finite numbers become strings.
Json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

Json numbers(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(number(x));
  return a;
}

Json witness(const gradcheck::Witness& w) {
  return Json{{"trial", w.trial}, {"index", w.index},          {"analytic", number(w.analytic)},
              {"numeric", number(w.numeric)}, {"rel_err", number(w.rel_err)}, {"pred", numbers(w.pred)},
              {"gt", numbers(w.gt)}};
}

}  // namespace

Json to_json(const metrics::MetricsReport& r) {
  return Json{{"dsc", r.dsc},
              {"arvd_pct", opt_number(r.arvd_pct)},
              {"abd_mm", opt_number(r.abd_mm)},
              {"hd95_mm", opt_number(r.hd95_mm)},
              {"flags", r.flags}};
}

Json to_json(const gradcheck::Report& r, const gradcheck::Options& opt) {
  Json j{{"loss", r.loss},
         {"trials", r.trials},
         {"voxels", opt.voxels},
         {"step", opt.step},
         {"rel_tolerance", opt.rel_tolerance},
         {"failures", r.failures},
         {"passed", r.passed()},
         {"max_rel_err", number(r.max_rel_err)},
         {"worst", r.worst ? witness(*r.worst) : Json(nullptr)}};
  if (r.defect) {
    const auto& d = *r.defect;
    j["defect"] = Json{{"constant_gradient", d.constant_gradient},
                       {"constant_trials", d.constant_trials},
                       {"dsc_counterexamples", d.dsc_counterexamples},
                       {"dsc_witness", d.dsc_witness ? witness(*d.dsc_witness) : Json(nullptr)},
                       {"printed_form_max_rel_err", number(d.printed_form_max_rel_err)}};
  }
  j["notes"] = r.notes;
  return j;
}

Json to_json(const theory::TheoremReport& r) {
  Json checks = Json::array();
  for (const auto& c : r.checks) {
    Json w = nullptr;
    if (c.witness) {
      w = Json{{"what", c.witness->what},
               {"p", numbers(c.witness->p)},
               {"q", numbers(c.witness->q)},
               {"lhs", number(c.witness->lhs)},
               {"rhs", number(c.witness->rhs)}};
    }
    checks.push_back(Json{{"name", c.name},
                          {"trials", c.trials},
                          {"failures", c.failures},
                          {"worst_violation", number(c.worst_violation)},
                          {"witness", w}});
  }
  return Json{{"theorem", r.theorem},   {"trials", r.trials}, {"failures", r.failures},
              {"passed", r.passed()},   {"checks", checks},   {"notes", r.notes}};
}

Json to_json(const config::KeyValues& kv) {
  Json j = Json::object();
  for (const auto& [k, v] : kv) j[k] = v;
  return j;
}

}  // namespace ddspseg::cli
