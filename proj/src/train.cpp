#include "ddspseg/train.hpp"

#include <fmt/format.h>

#include <atomic>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "ddspseg/checkpoint.hpp"
#include "ddspseg/seed.hpp"

namespace ddspseg::train {

void TrainConfig::validate() const {
  net.validate();
  data.validate();
  sgd.validate();
  if (loss == loss::Kind::dsc_nosquare) throw std::invalid_argument("dsc-nosquare is a diagnostic loss, not trainable");
  if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (val_cases < 1) throw std::invalid_argument("val_cases must be >= 1");
  if (val_every < 0) throw std::invalid_argument("val_every must be >= 0");
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("threshold must lie in (0, 1)");
  if (net.in_channels != 1) throw std::invalid_argument("synthetic training data has one input channel");
}

synth::Case training_case(const TrainConfig& cfg, int iteration, int slot) {
  synth::SynthSpec spec = cfg.data;
  const auto it = static_cast<std::uint64_t>(iteration), sl = static_cast<std::uint64_t>(slot);
  spec.seed = derive_seed({cfg.seed, 1, it, sl});
  auto c = synth::gen_synthetic_case(spec);
  if (!cfg.augment) return c;
  return synth::deform_augment(c, spec, derive_seed({cfg.seed, 2, it, sl}));
}

synth::Case validation_case(const TrainConfig& cfg, int i) {
  synth::SynthSpec spec = cfg.data;
  spec.seed = derive_seed({cfg.val_seed, 3, static_cast<std::uint64_t>(i)});
  return synth::gen_synthetic_case(spec);
}

nn::Tensor5<float> stack_images(const std::vector<synth::Case>& cases) {
  if (cases.empty()) throw std::invalid_argument("empty batch");
  const Dims d = cases.front().image.dims();
  nn::Tensor5<float> x({static_cast<int>(cases.size()), 1, d.nx, d.ny, d.nz});
  for (std::size_t b = 0; b < cases.size(); ++b) {
    if (cases[b].image.dims() != d) throw std::invalid_argument("batch members differ in dims");
    auto src = cases[b].image.data();
    std::copy(src.begin(), src.end(), x.sample(static_cast<int>(b)));
  }
  return x;
}

std::vector<BinaryMask> predict_masks(nn::Network<float>& net, const std::vector<synth::Case>& cases,
                                      const TrainConfig& cfg) {
  std::vector<BinaryMask> out;
  out.reserve(cases.size());
  for (const auto& c : cases) {
    auto heads = net.forward(stack_images({c}), nn::Mode::eval);
    auto fused = nn::fuse_outputs(heads, cfg.net.fusion);
    Volume p(c.image.dims(), c.image.spacing(), std::move(fused.vec()));
    out.push_back(BinaryMask::threshold(p, static_cast<float>(cfg.threshold)));
  }
  return out;
}

HeadLoss batch_loss(loss::Kind kind, const nn::Tensor5<float>& probs, const std::vector<synth::Case>& cases) {
  const int n = probs.shape().n;
  if (static_cast<std::size_t>(n) != cases.size()) throw std::invalid_argument("batch size mismatch");
  const std::size_t sp = probs.shape().spatial();
  HeadLoss h{0.0, nn::Tensor5<float>(probs.shape())};
  std::vector<double> p(sp), g(sp);
  for (int b = 0; b < n; ++b) {
    const float* src = probs.sample(b);
    for (std::size_t i = 0; i < sp; ++i) {
      p[i] = src[i];
      g[i] = cases[b].truth.at(i) ? 1.0 : 0.0;
    }
    const auto e = loss::evaluate(kind, p, g);
    h.value += e.value / n;
    float* dst = h.grad.sample(b);
    for (std::size_t i = 0; i < sp; ++i) dst[i] = static_cast<float>(e.grad[i] / n);
  }
  return h;
}

namespace {

double mean_dice(nn::Network<float>& net, const std::vector<synth::Case>& val, const TrainConfig& cfg) {
  const auto masks = predict_masks(net, val, cfg);
  double s = 0.0;
  for (std::size_t i = 0; i < val.size(); ++i) s += metrics::dice_coefficient(masks[i], val[i].truth);
  return s / static_cast<double>(val.size());
}

}  // namespace

TrainResult train_run(const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  nn::Network<float> net(cfg.net);
  return train_run(cfg, net, progress);
}

TrainResult train_run(const TrainConfig& cfg, nn::Network<float>& net, const ProgressFn& progress) {
  cfg.validate();
  net = nn::Network<float>(cfg.net);
  net.initialize(derive_seed({cfg.seed, 0}));
  OptimizerState opt(cfg.sgd);

  std::vector<synth::Case> val;
  for (int i = 0; i < cfg.val_cases; ++i) val.push_back(validation_case(cfg, i));

  TrainResult res;
  const auto& w = cfg.net.supervision;
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<synth::Case> cases;
    for (int b = 0; b < cfg.batch; ++b) cases.push_back(training_case(cfg, it, b));
    auto heads = net.forward(stack_images(cases), nn::Mode::train);

    LogRow row;
    row.iter = it + 1;
    row.lr = opt.lr();
    nn::Heads<float> grads;
    double parts[3];
    for (std::size_t k = 0; k < 3; ++k) {
      auto h = batch_loss(cfg.loss, heads[k], cases);
      parts[k] = h.value;
      const auto wk = static_cast<float>(w[k]);
      for (auto& v : h.grad.vec()) v *= wk;
      grads[k] = std::move(h.grad);
    }
    row.loss_main = parts[0];
    row.loss_stage2 = parts[1];
    row.loss_stage3 = parts[2];
    row.loss_total = w[0] * parts[0] + w[1] * parts[1] + w[2] * parts[2];
    if (!std::isfinite(row.loss_total)) {
      res.aborted_at = row.iter;
      res.abort_reason = "non-finite loss";
      break;
    }
    net.zero_grad();
    net.backward(grads);
    try {
      opt.step(net.parameters().params);
    } catch (const NonFiniteGradient& e) {
      res.aborted_at = row.iter;
      res.abort_reason = e.what();
      break;
    }
    res.log.push_back(row);
    if (progress) progress(row);
    if (cfg.val_every > 0 && row.iter % cfg.val_every == 0 && row.iter < cfg.iterations) {
      res.validation.push_back({row.iter, mean_dice(net, val, cfg)});
    }
  }
  const int done = res.log.empty() ? 0 : res.log.back().iter;
  res.final_val_dice = mean_dice(net, val, cfg);
  res.validation.push_back({done, res.final_val_dice});
  res.checkpoint = nn::encode_checkpoint(net.parameters());
  return res;
}

std::string log_csv(const std::vector<LogRow>& rows) {
  std::string out = "iter,loss_main,loss_stage2,loss_stage3,loss_total,lr\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{},{},{}\n", r.iter, r.loss_main, r.loss_stage2, r.loss_stage3, r.loss_total, r.lr);
  }
  return out;
}

std::string validation_csv(const std::vector<ValRow>& rows) {
  std::string out = "iter,val_dice\n";
  for (const auto& r : rows) out += fmt::format("{},{}\n", r.iter, r.dice);
  return out;
}

// ------------------------------------------------------------- ablation

const char* to_string(AblationTable t) {
  switch (t) {
    case AblationTable::table2: return "table2";
    case AblationTable::table3: return "table3";
    case AblationTable::table4: return "table4";
    case AblationTable::table5: return "table5";
    case AblationTable::table6: return "table6";
  }
  return "?";
}

AblationTable parse_table(std::string_view s) {
  for (auto t : {AblationTable::table2, AblationTable::table3, AblationTable::table4, AblationTable::table5,
                 AblationTable::table6}) {
    if (s == to_string(t)) return t;
  }
  throw std::invalid_argument("unknown ablation table '" + std::string(s) + "' (table2..table6)");
}

namespace {

std::string join(const std::vector<int>& v) {
  if (v.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i]);
  return s;
}

std::string weights_label(const loss::SupervisionWeights& w) { return fmt::format("{};{};{}", w[0], w[1], w[2]); }

std::string fusion_label(const std::array<bool, 3>& f) {
  return fmt::format("{};{};{}", int(f[0]), int(f[1]), int(f[2]));
}

}  // namespace

AblationPlan make_plan(AblationTable table, const TrainConfig& base, std::vector<std::uint64_t> seeds) {
  if (seeds.empty()) throw std::invalid_argument("ablation needs at least one seed");
  AblationPlan plan;
  plan.table = table;
  plan.seeds = std::move(seeds);
  auto add = [&](std::string label, TrainConfig cfg) {
    cfg.validate();
    plan.configs.push_back({std::move(label), std::move(cfg)});
  };
  // Every table except the loss comparison trains with the DSC loss.
  TrainConfig dsc = base;
  dsc.loss = loss::Kind::dsc;
  switch (table) {
    case AblationTable::table2:
      for (auto block : {nn::BlockKind::none, nn::BlockKind::ddsp, nn::BlockKind::aspp}) {
        for (auto kind : {loss::Kind::wce, loss::Kind::dsc, loss::Kind::jaccard}) {
          TrainConfig c = base;
          c.net.block = block;
          c.loss = kind;
          add(fmt::format("{}/{}", nn::to_string(block), loss::to_string(kind)), c);
        }
      }
      break;
    case AblationTable::table3: {
      const std::vector<std::pair<std::vector<int>, std::vector<int>>> rates{
          {{1, 2, 3, 4}, {2, 4, 6}}, {{1, 2, 3, 4}, {}}, {{}, {2, 4, 6}}};
      for (const auto& [d, p] : rates) {
        TrainConfig c = dsc;
        c.net.block = nn::BlockKind::ddsp;
        c.net.ddsp.dilation_rates = d;
        c.net.ddsp.pooling_rates = p;
        add(join(d) + "/" + join(p), c);
      }
      break;
    }
    case AblationTable::table4:
      for (auto lc : {nn::LongConnection::none, nn::LongConnection::residual, nn::LongConnection::concat}) {
        TrainConfig c = dsc;
        c.net.long_connection = lc;
        add(nn::to_string(lc), c);
      }
      break;
    case AblationTable::table5: {
      const double rows[][3] = {{1, 0, 0},         {0.5, 0.333, 0.167}, {0.6, 0.25, 0.15},
                                {0.8, 0.15, 0.05}, {0.8, 0.2, 0},       {0.9, 0.075, 0.025}};
      for (const auto& r : rows) {
        TrainConfig c = dsc;
        c.net.supervision = loss::SupervisionWeights(r[0], r[1], r[2]);
        add(weights_label(c.net.supervision), c);
      }
      break;
    }
    case AblationTable::table6:
      for (auto mask : {std::array<bool, 3>{true, false, false}, std::array<bool, 3>{true, true, true}}) {
        TrainConfig c = dsc;
        c.net.fusion = mask;
        add(fusion_label(mask), c);
      }
      break;
  }
  return plan;
}

namespace {

std::optional<double> mean_of(const std::vector<std::optional<double>>& v) {
  double s = 0.0;
  int n = 0;
  for (const auto& x : v) {
    if (x) {
      s += *x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / n;
}

AblationRow run_one(AblationTable table, const AblationConfig& ac, std::uint64_t seed) {
  AblationRow row;
  const auto& n = ac.train.net;
  row.table = to_string(table);
  row.label = ac.label;
  row.loss = loss::to_string(ac.train.loss);
  row.block = nn::to_string(n.block);
  row.dilation_rates = join(n.ddsp.dilation_rates);
  row.pooling_rates = join(n.ddsp.pooling_rates);
  row.long_connection = nn::to_string(n.long_connection);
  row.supervision = weights_label(n.supervision);
  row.fusion = fusion_label(n.fusion);
  row.seed = seed;
  row.iterations = ac.train.iterations;
  try {
    TrainConfig cfg = ac.train;
    cfg.seed = seed;
    nn::Network<float> net(cfg.net);
    auto res = train_run(cfg, net);
    row.val_dice = res.final_val_dice;
    if (res.aborted_at) row.status = fmt::format("failed: {} at iteration {}", res.abort_reason, *res.aborted_at);

    std::vector<synth::Case> val;
    for (int i = 0; i < cfg.val_cases; ++i) val.push_back(validation_case(cfg, i));
    const auto masks = predict_masks(net, val, cfg);
    std::vector<std::optional<double>> arvd, abd, hd95;
    double dsc = 0.0;
    for (std::size_t i = 0; i < val.size(); ++i) {
      const auto m = metrics::evaluate(masks[i], val[i].truth);
      dsc += m.dsc;
      arvd.push_back(m.arvd_pct);
      abd.push_back(m.abd_mm);
      hd95.push_back(m.hd95_mm);
    }
    row.dsc = dsc / static_cast<double>(val.size());
    row.arvd_pct = mean_of(arvd);
    row.abd_mm = mean_of(abd);
    row.hd95_mm = mean_of(hd95);
  } catch (const std::exception& e) {
    row.status = std::string("failed: ") + e.what();
  }
  return row;
}

}  // namespace

std::vector<AblationRow> run_ablation(const AblationPlan& plan, int jobs) {
  struct Task {
    const AblationConfig* cfg;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (const auto& c : plan.configs)
    for (auto s : plan.seeds) tasks.push_back({&c, s});
  std::vector<AblationRow> rows(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < tasks.size();) rows[i] = run_one(plan.table, *tasks[i].cfg, tasks[i].seed);
  };
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(tasks.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  auto opt = [](const std::optional<double>& v) { return v ? fmt::format("{}", *v) : std::string("NA"); };
  std::string out =
      "table,config,loss,block,dilation_rates,pooling_rates,long_connection,supervision,fusion,seed,iterations,"
      "val_dice,dsc,arvd_pct,abd_mm,hd95_mm,status\n";
  for (const auto& r : rows) {
    const bool ok = r.status == "ok";
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},\"{}\"\n", r.table, r.label, r.loss, r.block,
                       r.dilation_rates, r.pooling_rates, r.long_connection, r.supervision, r.fusion, r.seed,
                       r.iterations, ok ? fmt::format("{}", r.val_dice) : "NA", ok ? fmt::format("{}", r.dsc) : "NA",
                       ok ? opt(r.arvd_pct) : "NA", ok ? opt(r.abd_mm) : "NA", ok ? opt(r.hd95_mm) : "NA", r.status);
  }
  return out;
}

}  // namespace ddspseg::train
