// ddspseg: command line front end. JSON goes to stdout, diagnostics to stderr.
// Exit codes: 0 success, 1 a check or run failed, 2 bad input.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <iostream>

#include "ddspseg/checkpoint.hpp"
#include "ddspseg/volio.hpp"
#include "report.hpp"

namespace fs = std::filesystem;
using namespace ddspseg;
using cli::Json;

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kInputError = 2;

/// Input problems the user has to fix; mapped to exit code 2.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void emit(const Json& j) { std::cout << j.dump(2) << '\n'; }

Volume load(const std::string& path, const std::string& format) {
  try {
    if (format == "mhd") return io::read_mhd_subset(path);
    if (format == "vvf") return io::read_vvf(path);
    return io::read_volume(path);
  } catch (const std::exception& e) {
    throw InputError(fmt::format("{}: {}", path, e.what()));
  }
}

struct RunArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out = ".";
  bool quiet = false;
};

config::RunConfig load_config(const RunArgs& a) {
  try {
    config::KeyValues kv;
    if (!a.config_path.empty()) kv = config::read_key_values(a.config_path);
    for (const auto& o : a.overrides) {
      auto extra = config::parse_key_values(o);
      for (auto& p : extra) {
        auto it = std::find_if(kv.begin(), kv.end(), [&](const auto& q) { return q.first == p.first; });
        if (it != kv.end()) it->second = p.second;
        else kv.push_back(std::move(p));
      }
    }
    return config::apply(kv);
  } catch (const config::ConfigError& e) {
    throw InputError(e.what());
  }
}

fs::path prepare_out(const RunArgs& a) {
  const fs::path out(a.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw InputError(fmt::format("cannot create {}: {}", out.string(), ec.message()));
  return out;
}

void write_text(const fs::path& p, const std::string& s) {
  io::write_file_bytes(p, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

int cmd_evaluate(const std::string& pred_path, const std::string& gt_path, const std::string& format, double t) {
  const Volume pred = load(pred_path, format);
  const Volume gt = load(gt_path, format);
  if (pred.dims() != gt.dims()) {
    throw InputError(fmt::format("dims differ: {} vs {}", to_string(pred.dims()), to_string(gt.dims())));
  }
  const auto p = BinaryMask::threshold(pred, static_cast<float>(t));
  const auto g = BinaryMask::threshold(gt, 0.5f);
  emit(cli::to_json(metrics::evaluate(p, g)));
  return kOk;
}

int cmd_gradcheck(const std::string& name, const gradcheck::Options& opt) {
  loss::Kind kind;
  try {
    kind = loss::parse_kind(name);
  } catch (const std::exception& e) {
    throw InputError(e.what());
  }
  const auto r = gradcheck::run(kind, opt);
  emit(cli::to_json(r, opt));
  if (!r.passed()) {
    std::cerr << fmt::format("gradcheck {}: {} of {} trials failed, worst rel err {:.3e} at voxel {}\n", r.loss,
                             r.failures, r.trials, r.max_rel_err, r.worst->index);
    return kFailed;
  }
  return kOk;
}

int cmd_theorems(const std::string& suite, std::size_t trials, std::uint64_t seed) {
  std::vector<theory::TheoremReport> reports;
  if (suite == "1" || suite == "all") reports.push_back(theory::check_theorem1(trials, seed));
  if (suite == "2" || suite == "all") {
    const theory::LinearSigmoidGenerator gen(64, 8, seed);
    reports.push_back(theory::check_theorem2_continuity(gen, loss::Kind::dsc, trials, seed));
    reports.push_back(theory::check_theorem2_continuity(gen, loss::Kind::jaccard, trials, seed));
  }
  if (suite == "3" || suite == "all") reports.push_back(theory::check_theorem3_ordering(trials, seed));
  Json arr = Json::array();
  std::size_t failures = 0;
  for (const auto& r : reports) {
    arr.push_back(cli::to_json(r));
    failures += r.failures;
  }
  emit(Json{{"suite", suite}, {"trials", trials}, {"seed", seed}, {"failures", failures}, {"reports", arr}});
  if (failures > 0) {
    for (const auto& r : reports)
      for (const auto& c : r.checks)
        if (c.failures > 0) std::cerr << fmt::format("{} / {}: {} failures\n", r.theorem, c.name, c.failures);
    return kFailed;
  }
  return kOk;
}

int cmd_synth(const RunArgs& a) {
  const auto cfg = load_config(a);
  const auto out = prepare_out(a);
  Json cases = Json::array();
  for (int i = 0; i < cfg.cases; ++i) {
    synth::Case c = train::validation_case(cfg.train, i);
    const auto stem = fmt::format("case_{:03d}", i);
    io::write_vvf(c.image, io::VoxelType::f32, out / (stem + "_image.vvf"));
    io::write_vvf(c.truth.volume(), io::VoxelType::u8, out / (stem + "_mask.vvf"));
    cases.push_back(Json{{"image", stem + "_image.vvf"},
                         {"mask", stem + "_mask.vvf"},
                         {"foreground_fraction", static_cast<double>(c.truth.count()) / c.truth.size()}});
  }
  const auto resolved = config::resolved(cfg);
  write_text(out / "config.txt", config::to_text(resolved));
  emit(Json{{"command", "synth"}, {"out", out.string()}, {"config", cli::to_json(resolved)}, {"cases", cases}});
  return kOk;
}

int cmd_train(const RunArgs& a) {
  const auto cfg = load_config(a);
  const auto out = prepare_out(a);
  const int every = std::max(1, cfg.train.iterations / 20);
  train::ProgressFn progress;
  if (!a.quiet) {
    progress = [every](const train::LogRow& r) {
      if (r.iter % every == 0) std::cerr << fmt::format("iter {} loss {:.4f} lr {:.3g}\n", r.iter, r.loss_total, r.lr);
    };
  }
  const auto res = train::train_run(cfg.train, progress);
  write_text(out / "log.csv", train::log_csv(res.log));
  write_text(out / "validation.csv", train::validation_csv(res.validation));
  io::write_file_bytes(out / "checkpoint.ckpt", res.checkpoint);
  const auto resolved = config::resolved(cfg);
  write_text(out / "config.txt", config::to_text(resolved));
  Json j{{"command", "train"},
         {"out", out.string()},
         {"config", cli::to_json(resolved)},
         {"iterations_run", res.log.size()},
         {"final_val_dice", res.final_val_dice},
         {"aborted_at", res.aborted_at ? Json(*res.aborted_at) : Json(nullptr)},
         {"abort_reason", res.abort_reason},
         {"files", {"log.csv", "validation.csv", "checkpoint.ckpt", "config.txt"}}};
  emit(j);
  if (res.aborted_at) {
    std::cerr << fmt::format("training aborted at iteration {}: {}\n", *res.aborted_at, res.abort_reason);
    return kFailed;
  }
  return kOk;
}

int cmd_ablate(const RunArgs& a) {
  const auto cfg = load_config(a);
  const auto out = prepare_out(a);
  const auto plan = train::make_plan(cfg.table, cfg.train, cfg.seeds);
  if (!a.quiet) {
    std::cerr << fmt::format("{}: {} configurations x {} seeds, {} iterations each\n", train::to_string(cfg.table),
                             plan.configs.size(), plan.seeds.size(), cfg.train.iterations);
  }
  const auto rows = train::run_ablation(plan, cfg.jobs);
  const auto name = fmt::format("ablation_{}.csv", train::to_string(cfg.table));
  write_text(out / name, train::ablation_csv(rows));
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.status != "ok";
  const auto resolved = config::resolved(cfg);
  write_text(out / "config.txt", config::to_text(resolved));
  emit(Json{{"command", "ablate"},
            {"out", out.string()},
            {"config", cli::to_json(resolved)},
            {"table", train::to_string(cfg.table)},
            {"rows", rows.size()},
            {"failed_rows", failed},
            {"csv", name}});
  return kOk;
}

void add_run_options(CLI::App* sub, RunArgs& a) {
  sub->add_option("config", a.config_path, "key = value run configuration file");
  sub->add_option("--set", a.overrides, "Override one key, e.g. --set iterations=10");
  sub->add_option("--out", a.out, "Output directory")->capture_default_str();
  sub->add_flag("--quiet", a.quiet, "No progress on stderr");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ddspseg: imbalanced 3D segmentation toolkit"};
  app.require_subcommand(1);

  std::string pred, gt, format = "auto";
  double threshold = 0.5;
  auto* ev = app.add_subcommand("evaluate", "Segmentation metrics of a prediction against a reference");
  ev->add_option("--pred", pred, "Prediction volume (mask or probability map)")->required();
  ev->add_option("--gt", gt, "Reference mask")->required();
  ev->add_option("--format", format, "vvf, mhd, or auto (by extension)")
      ->check(CLI::IsMember({"auto", "vvf", "mhd"}))
      ->capture_default_str();
  ev->add_option("--threshold", threshold, "Foreground when value > threshold")->capture_default_str();

  std::string loss_name = "dsc";
  gradcheck::Options gopt;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of a loss gradient");
  gc->add_option("--loss", loss_name, "dsc, jaccard, wce, ce or dsc-nosquare")->capture_default_str();
  gc->add_option("--trials", gopt.trials, "Random (pred, gt) pairs")->capture_default_str();
  gc->add_option("--seed", gopt.seed, "Seed")->capture_default_str();
  gc->add_option("--voxels", gopt.voxels, "Voxels per pair")->capture_default_str()->check(CLI::Range(2, 1 << 20));

  std::string suite = "all";
  std::size_t th_trials = 1000;
  std::uint64_t th_seed = 0;
  auto* th = app.add_subcommand("theorems", "Numerical checks of the divergence and loss-ordering results");
  th->add_option("--suite", suite, "1, 2, 3 or all")->check(CLI::IsMember({"1", "2", "3", "all"}))->capture_default_str();
  th->add_option("--trials", th_trials, "Trials per sub-check")->capture_default_str();
  th->add_option("--seed", th_seed, "Seed")->capture_default_str();

  RunArgs synth_args, train_args, ablate_args;
  add_run_options(app.add_subcommand("synth", "Write synthetic cases as VVF pairs"), synth_args);
  add_run_options(app.add_subcommand("train", "Train one network and write log, validation and checkpoint"),
                  train_args);
  add_run_options(app.add_subcommand("ablate", "Run one ablation table and write its CSV"), ablate_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInputError;
  }

  try {
    if (*ev) return cmd_evaluate(pred, gt, format, threshold);
    if (*gc) return cmd_gradcheck(loss_name, gopt);
    if (*th) return cmd_theorems(suite, th_trials, th_seed);
    if (app.got_subcommand("synth")) return cmd_synth(synth_args);
    if (app.got_subcommand("train")) return cmd_train(train_args);
    if (app.got_subcommand("ablate")) return cmd_ablate(ablate_args);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kInputError;
}
