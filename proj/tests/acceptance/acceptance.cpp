// Acceptance suite: one PASS/FAIL line per criterion. Tolerances are pinned
// here; nothing is read from the environment. `--only N` runs one criterion.

#include <fmt/core.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ddspseg/checkpoint.hpp"
#include "ddspseg/gradcheck.hpp"
#include "ddspseg/layers.hpp"
#include "ddspseg/losses.hpp"
#include "ddspseg/metrics.hpp"
#include "ddspseg/network.hpp"
#include "ddspseg/theory.hpp"
#include "ddspseg/train.hpp"
#include "ddspseg/volio.hpp"
#include "fd.hpp"
#include "oracles.hpp"

using namespace ddspseg;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  std::function<Outcome()> run;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::vector<double> binary(std::mt19937_64& rng, std::size_t n, double p) {
  std::bernoulli_distribution b(p);
  std::vector<double> v(n);
  for (auto& x : v) x = b(rng) ? 1.0 : 0.0;
  return v;
}

// 1. Central differences at h = 1e-3 within relative 1e-4, 100 pairs of 4^3
// voxels per loss, all three losses inside 10 s.
Outcome gradient_fidelity() {
  gradcheck::Options opt;
  opt.trials = 100;
  opt.voxels = 64;
  opt.step = 1e-3;
  opt.rel_tolerance = 1e-4;
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (auto kind : {loss::Kind::dsc, loss::Kind::jaccard, loss::Kind::wce}) {
    const auto r = gradcheck::run(kind, opt);
    ok = ok && r.passed() && r.trials == 100;
    detail += fmt::format("{} {}/{} worst {:.2e}; ", r.loss, r.trials - r.failures, r.trials, r.max_rel_err);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 10.0;
  return {ok, detail + fmt::format("{:.2f} s (limit 10 s)", secs)};
}

// 2. L_J = 2 L_D / (1 + L_D) within 1e-9 on 1e4 pairs.
Outcome jaccard_identity() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> len(1, 512);
  std::size_t violations = 0;
  double worst = 0.0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t n = len(rng);
    const auto p = uniform(rng, n);
    const auto g = t % 2 == 0 ? binary(rng, n, 0.1) : uniform(rng, n);
    const double d = loss::dsc_loss(p, g).value;
    const double j = loss::jaccard_loss(p, g).value;
    const double gap = std::abs(j - 2.0 * d / (1.0 + d));
    worst = std::max(worst, gap);
    violations += gap > 1e-9;
  }
  return {violations == 0, fmt::format("10000 pairs, {} violations, worst gap {:.2e} (limit 1e-9)", violations, worst)};
}

// 3. Ordering, convergence envelope over n = 1..1024, Pinsker.
Outcome theorem3_chain() {
  const auto r = theory::check_theorem3_ordering(10000, 3);
  bool ok = true;
  std::string detail;
  for (const char* name : {"dsc_le_jaccard_le_2dsc", "dsc_converges_under_sup_distance", "pinsker"}) {
    const auto* c = r.find(name);
    if (!c) return {false, fmt::format("missing sub-check {}", name)};
    ok = ok && c->trials == 10000 && c->failures == 0;
    detail += fmt::format("{} {}/{}; ", name, c->trials - c->failures, c->trials);
  }
  // Independent pass over (a) and (c) with a separate generator.
  std::mt19937_64 rng(33);
  std::size_t bad = 0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t n = 1 + t % 200;
    const auto p = uniform(rng, n), g = binary(rng, n, 0.3);
    const double d = loss::dsc_loss(p, g).value, j = loss::jaccard_loss(p, g).value;
    bad += !(d <= j + 1e-12 && j <= 2.0 * d + 1e-12);
    auto a = uniform(rng, n, 1e-3, 1.0), b = uniform(rng, n, 1e-3, 1.0);
    double sa = 0, sb = 0;
    for (std::size_t i = 0; i < n; ++i) sa += a[i], sb += b[i];
    for (std::size_t i = 0; i < n; ++i) a[i] /= sa, b[i] /= sb;
    double kl = 0.0, tv = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      kl += a[i] * std::log(a[i] / b[i]);
      tv = std::max(tv, std::abs(a[i] - b[i]));
    }
    bad += tv > std::sqrt(kl / 2.0) + 1e-12;
  }
  ok = ok && bad == 0;
  return {ok, detail + fmt::format("independent recheck {} violations", bad)};
}

// 4. Support mismatch gives +inf in every trial; an asymmetric pair exists.
Outcome theorem1() {
  const auto r = theory::check_theorem1(1000, 4);
  const auto* inf = r.find("kl_infinite_on_support_mismatch");
  const auto* asym = r.find("kl_asymmetry_witness");
  if (!inf || !asym || !asym->witness) return {false, "missing sub-check or witness"};
  const auto& w = *asym->witness;
  const double fwd = theory::kl_divergence(w.p, w.q), bwd = theory::kl_divergence(w.q, w.p);
  const bool ok = inf->trials == 1000 && inf->failures == 0 && fwd != bwd && std::isfinite(fwd) && std::isfinite(bwd);
  return {ok, fmt::format("+inf in {}/{} trials; witness KL(p||q) = {:.6f}, KL(q||p) = {:.6f}",
                          inf->trials - inf->failures, inf->trials, fwd, bwd)};
}

bool constant_per_class(const std::vector<double>& grad, const std::vector<double>& gt) {
  std::optional<double> fg, bg;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    auto& slot = gt[i] > 0.5 ? fg : bg;
    if (!slot) slot = grad[i];
    else if (*slot != grad[i]) return false;
  }
  return true;
}

// 5. The no-square gradient is exactly constant within each class; the
// squared form is not.
Outcome nosquare_defect() {
  std::mt19937_64 rng(5);
  int constant = 0, counter = 0;
  for (int t = 0; t < 100; ++t) {
    auto p = uniform(rng, 64, 0.05, 0.95);
    auto g = binary(rng, 64, 0.3);
    g[t % 64] = 1.0;
    g[(t + 1) % 64] = 0.0;
    constant += constant_per_class(loss::dsc_loss_nosquare(p, g).grad, g) &&
                constant_per_class(loss::dsc_loss_nosquare(p, g, loss::NoSquareGradient::exact).grad, g);
    counter += !constant_per_class(loss::dsc_loss(p, g).grad, g);
  }
  gradcheck::Options opt;
  opt.trials = 100;
  const auto r = gradcheck::run(loss::Kind::dsc_nosquare, opt);
  const bool lib = r.defect && r.defect->constant_gradient && r.defect->dsc_counterexamples == 100;
  return {constant == 100 && counter == 100 && lib,
          fmt::format("class-constant {}/100, dsc counterexamples {}/100, gradcheck defect report {}", constant,
                      counter, lib ? "agrees" : "disagrees")};
}

// 6. Layer and network backward passes against central differences.
Outcome layer_correctness() {
  using testing::check_module;
  using testing::random_tensor;
  constexpr double tol = 1e-3;
  std::mt19937_64 rng(6);
  std::vector<std::pair<std::string, double>> worst;
  auto randomize = [&](nn::Parameter<double>& p) { testing::fill_uniform(p.value, rng); };

  {
    double w = 0.0;
    for (auto [stride, dil] : std::vector<std::array<int, 2>>{{1, 1}, {1, 2}, {2, 1}}) {
      nn::Conv3d<double> c("c", 2, 3, 3, stride, dil);
      randomize(c.weight());
      randomize(c.bias());
      w = std::max(w, check_module(c, random_tensor({1, 2, 6, 6, 6}, rng), nn::Mode::train, rng, 200).worst);
    }
    worst.emplace_back("conv3d", w);
  }
  {
    nn::ConvTranspose3d<double> up("u", 2, 3);
    randomize(up.weight());
    randomize(up.bias());
    worst.emplace_back("conv_transpose3d",
                       check_module(up, random_tensor({1, 2, 4, 4, 4}, rng), nn::Mode::train, rng, 200).worst);
  }
  {
    double w = 0.0;
    for (int rate : {2, 3, 6}) {
      nn::AvgPool3d<double> pool(rate);
      w = std::max(w, check_module(pool, random_tensor({1, 2, 8, 8, 8}, rng), nn::Mode::train, rng, 200).worst);
    }
    worst.emplace_back("avg_pool3d", w);
  }
  {
    double w = 0.0;
    for (auto mode : {nn::Mode::train, nn::Mode::eval}) {
      nn::BatchNorm3d<double> bn("bn", 3);
      randomize(bn.gamma());
      randomize(bn.beta());
      w = std::max(w, check_module(bn, random_tensor({2, 3, 4, 4, 4}, rng), mode, rng, 200).worst);
    }
    worst.emplace_back("batch_norm3d", w);
  }
  {
    nn::NetConfig cfg;
    cfg.widths = {2, 3, 4};
    cfg.ddsp.growth = 2;
    nn::Network<double> net(cfg);
    for (auto* p : net.parameters().params) testing::fill_uniform(p->value, rng, -0.5, 0.5);
    const auto x = random_tensor({2, 1, 8, 8, 8}, rng, 0.0, 1.0);
    std::vector<double> gt(512);
    for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = i % 7 == 0 ? 1.0 : 0.0;
    auto total = [&](const nn::Heads<double>& h, nn::Heads<double>* grads) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        if (grads) (*grads)[k] = nn::Tensor5<double>(h[k].shape());
        for (int b = 0; b < 2; ++b) {
          const auto e = loss::dsc_loss(std::span<const double>(h[k].sample(b), 512), gt);
          s += cfg.supervision[k] * e.value / 2;
          if (grads)
            for (std::size_t i = 0; i < 512; ++i) (*grads)[k].sample(b)[i] = cfg.supervision[k] * e.grad[i] / 2;
        }
      }
      return s;
    };
    net.zero_grad();
    nn::Heads<double> d;
    total(net.forward(x, nn::Mode::train), &d);
    net.backward(d);
    auto f = [&] { return total(net.forward(x, nn::Mode::train), nullptr); };
    double w = 0.0;
    for (auto* p : net.parameters().params) {
      const auto analytic = p->grad;
      for (std::size_t i = 0; i < std::min<std::size_t>(p->size(), 2); ++i)
        w = std::max(w, testing::fd_rel_err(f, p->value[i], analytic[i], 1e-5, tol));
    }
    worst.emplace_back("network", w);
  }

  bool ok = true;
  std::string detail;
  for (const auto& [name, w] : worst) {
    ok = ok && w < tol;
    detail += fmt::format("{} {:.1e}; ", name, w);
  }
  // Channel count of the default block.
  const nn::DdspConfig dflt;
  nn::DdspBlock<double> block("b", 16, dflt);
  const int got = block.forward(nn::Tensor5<double>({1, 16, 8, 8, 8}, 0.5), nn::Mode::eval).shape().c;
  const int want = 16 + 7 * dflt.growth;
  ok = ok && got == want && dflt.output_channels(16) == want;
  return {ok, detail + fmt::format("ddsp channels {} = 16 + 7*{} (limit rel {:.0e})", got, dflt.growth, tol)};
}

// 7. Metrics against the all-pairs oracle, plus the shifted-cube fixture.
Outcome metrics_oracle() {
  std::mt19937_64 rng(7);
  const double choices[] = {0.5, 1.0, 1.25, 2.0};
  std::uniform_int_distribution<int> ext(1, 12), pick(0, 3);
  int mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    const Dims d{ext(rng), ext(rng), ext(rng)};
    const Spacing s{choices[pick(rng)], choices[pick(rng)], choices[pick(rng)]};
    const auto a = testing::random_mask(rng, d, s, true);
    const auto b = testing::random_mask(rng, d, s, true);
    const auto got = metrics::evaluate(a, b);
    const auto want = testing::brute_metrics(a, b);
    const bool same = got.dsc == want.dsc && got.arvd_pct == want.arvd && got.abd_mm == want.abd &&
                      got.hd95_mm == want.hd95;
    mismatches += !same;
  }
  Volume va({10, 10, 10}), vb({10, 10, 10});
  for (int z = 3; z < 7; ++z)
    for (int y = 3; y < 7; ++y)
      for (int x = 2; x < 6; ++x) {
        va(x, y, z) = 1.0f;
        vb(x + 1, y, z) = 1.0f;
      }
  const auto fx = metrics::evaluate(BinaryMask(va), BinaryMask(vb));
  const bool fixture = fx.dsc == 0.75 && fx.arvd_pct && *fx.arvd_pct == 0.0;
  return {mismatches == 0 && fixture,
          fmt::format("200 pairs, {} mismatches (exact equality); fixture dsc {} arvd {}", mismatches, fx.dsc,
                      fx.arvd_pct ? *fx.arvd_pct : -1.0)};
}

// 8. DSC loss learns the rare class; unweighted CE collapses to background.
Outcome imbalance() {
  const auto t0 = Clock::now();
  std::string detail;
  bool ok = true;
  for (auto kind : {loss::Kind::dsc, loss::Kind::ce}) {
    for (std::uint64_t seed : {0, 1, 2}) {
      train::TrainConfig cfg;
      cfg.loss = kind;
      cfg.seed = seed;
      cfg.iterations = 2000;
      const auto r = train::train_run(cfg);
      const bool pass = !r.aborted_at && (kind == loss::Kind::dsc ? r.final_val_dice >= 0.7 : r.final_val_dice <= 0.1);
      ok = ok && pass;
      detail += fmt::format("{} s{} {:.3f}{}; ", loss::to_string(kind), seed, r.final_val_dice, pass ? "" : " (fail)");
      std::fflush(stdout);
    }
  }
  const double secs = seconds_since(t0);
  ok = ok && secs <= 3600.0;
  return {ok, detail + fmt::format("dsc >= 0.7, ce <= 0.1, {:.0f} s (limit 3600 s)", secs)};
}

train::TrainConfig small_run(std::uint64_t seed) {
  train::TrainConfig c;
  c.net.widths = {4, 6, 8};
  c.net.ddsp.growth = 4;
  c.data.dims = {16, 16, 16};
  c.data.radius_min = 1.5;
  c.data.radius_max = 3.0;
  c.iterations = 30;
  c.val_every = 10;
  c.val_cases = 2;
  c.seed = seed;
  return c;
}

// 9. Bit-identical reruns and a byte-identical VVF round trip.
Outcome reproducibility() {
  const auto a = train::train_run(small_run(11)), b = train::train_run(small_run(11));
  const auto c = train::train_run(small_run(12));
  const bool same = a.checkpoint == b.checkpoint && train::log_csv(a.log) == train::log_csv(b.log) &&
                    train::validation_csv(a.validation) == train::validation_csv(b.validation);
  const bool differs = a.checkpoint != c.checkpoint;

  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> ext(1, 9), byte(0, 255);
  std::uniform_real_distribution<double> sp(0.1, 4.0);
  std::normal_distribution<float> val(0.0f, 100.0f);
  int bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const bool u8 = i % 2 == 0;
    Volume v(Dims{ext(rng), ext(rng), ext(rng)}, Spacing{sp(rng), sp(rng), sp(rng)});
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = u8 ? static_cast<float>(byte(rng)) : val(rng);
    const auto type = u8 ? io::VoxelType::u8 : io::VoxelType::f32;
    const auto bytes = io::encode_vvf(v, type);
    const auto back = io::decode_vvf(bytes);
    bad += !(back == v && io::encode_vvf(back, type) == bytes);
  }
  return {same && differs && bad == 0,
          fmt::format("rerun {}, other seed {}, vvf 1000 volumes {} mismatches", same ? "bit-identical" : "differs",
                      differs ? "differs" : "identical", bad)};
}

// 10. Every ablation grid runs to completion and yields a full CSV.
Outcome ablation_harness() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (auto table : {train::AblationTable::table2, train::AblationTable::table3, train::AblationTable::table4,
                     train::AblationTable::table5, train::AblationTable::table6}) {
    auto base = small_run(0);
    base.iterations = 10;
    base.val_every = 0;
    const auto plan = train::make_plan(table, base, {0});
    const auto rows = train::run_ablation(plan, 1);
    const auto csv = train::ablation_csv(rows);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    const auto columns = std::count(line.begin(), line.end(), ',') + 1;
    std::size_t lines = 0, complete = 0;
    while (std::getline(in, line)) {
      ++lines;
      // NA marks a metric that is undefined for an empty prediction, not a gap.
      const bool full = std::count(line.begin(), line.end(), ',') + 1 == columns &&
                        line.find(",,") == std::string::npos && line.back() != ',';
      complete += full;
    }
    std::size_t failed = 0;
    for (const auto& r : rows) failed += r.status != "ok";
    const bool t_ok = !rows.empty() && lines == plan.configs.size() && complete == lines && failed == 0;
    ok = ok && t_ok;
    detail += fmt::format("{} {}/{} rows; ", train::to_string(table), complete, plan.configs.size());
  }
  return {ok, detail + fmt::format("{:.0f} s", seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Acceptance criteria");
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria (1-10)")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> all{
      {1, "gradient fidelity", gradient_fidelity},
      {2, "jaccard/dice identity", jaccard_identity},
      {3, "loss ordering, convergence and pinsker", theorem3_chain},
      {4, "kl support mismatch and asymmetry", theorem1},
      {5, "no-square gradient defect", nosquare_defect},
      {6, "layer and network gradients", layer_correctness},
      {7, "metrics oracle equivalence", metrics_oracle},
      {8, "imbalance demonstration", imbalance},
      {9, "reproducibility", reproducibility},
      {10, "ablation harness", ablation_harness},
  };
  const std::set<int> wanted(only.begin(), only.end());
  int failures = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, fmt::format("exception: {}", e.what())};
    }
    failures += !o.pass;
    fmt::print("[{}] criterion {:>2} {}: {} [{:.1f} s]\n", o.pass ? "PASS" : "FAIL", c.id, c.title, o.detail,
               seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
