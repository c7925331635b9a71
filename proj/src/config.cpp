#include "ddspseg/config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <functional>
#include <set>

#include "ddspseg/volio.hpp"

namespace ddspseg::config {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(fmt::format("{}: cannot parse '{}'", key, v));
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, v));
}

/// Comma-separated list; "-" or "" is the empty list.
template <class T>
std::vector<T> parse_list(std::string_view key, std::string_view v) {
  std::vector<T> out;
  if (v.empty() || v == "-") return out;
  while (true) {
    const auto comma = v.find(',');
    out.push_back(parse_number<T>(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

template <class T>
std::string list_text(const std::vector<T>& v) {
  return v.empty() ? "-" : fmt::format("{}", fmt::join(v, ","));
}

std::string num(double x) { return fmt::format("{}", x); }

struct Key {
  std::string name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T, std::size_t N>
std::array<T, N> fixed_list(std::string_view key, std::string_view v) {
  auto l = parse_list<T>(key, v);
  if (l.size() != N) throw ConfigError(fmt::format("{}: expected {} values, got {}", key, N, l.size()));
  std::array<T, N> a{};
  std::copy(l.begin(), l.end(), a.begin());
  return a;
}

const std::vector<Key>& keys() {
  using RC = RunConfig;
  using SV = std::string_view;
  static const std::vector<Key> k = [] {
    std::vector<Key> v;
    auto add = [&](std::string name, std::function<void(RC&, SV)> set, std::function<std::string(const RC&)> get) {
      v.push_back({std::move(name), std::move(set), std::move(get)});
    };
#define INT_KEY(NAME, FIELD)                                                                  \
  add(NAME, [](RC& c, SV s) { c.FIELD = parse_number<int>(NAME, s); },                         \
      [](const RC& c) { return std::to_string(c.FIELD); })
#define U64_KEY(NAME, FIELD)                                                                  \
  add(NAME, [](RC& c, SV s) { c.FIELD = parse_number<std::uint64_t>(NAME, s); },               \
      [](const RC& c) { return std::to_string(c.FIELD); })
#define DBL_KEY(NAME, FIELD)                                                                  \
  add(NAME, [](RC& c, SV s) { c.FIELD = parse_number<double>(NAME, s); },                      \
      [](const RC& c) { return num(c.FIELD); })

    U64_KEY("seed", train.seed);
    INT_KEY("iterations", train.iterations);
    INT_KEY("batch", train.batch);
    DBL_KEY("lr", train.sgd.lr);
    DBL_KEY("momentum", train.sgd.momentum);
    DBL_KEY("weight_decay", train.sgd.weight_decay);
    INT_KEY("lr_decay_period", train.sgd.decay_period);
    DBL_KEY("lr_decay_factor", train.sgd.decay_factor);

    add("loss", [](RC& c, SV s) { c.train.loss = loss::parse_kind(s); },
        [](const RC& c) { return std::string(loss::to_string(c.train.loss)); });
    add("block", [](RC& c, SV s) { c.train.net.block = nn::parse_block_kind(s); },
        [](const RC& c) { return std::string(nn::to_string(c.train.net.block)); });
    add("dilation_rates", [](RC& c, SV s) { c.train.net.ddsp.dilation_rates = parse_list<int>("dilation_rates", s); },
        [](const RC& c) { return list_text(c.train.net.ddsp.dilation_rates); });
    add("pooling_rates", [](RC& c, SV s) { c.train.net.ddsp.pooling_rates = parse_list<int>("pooling_rates", s); },
        [](const RC& c) { return list_text(c.train.net.ddsp.pooling_rates); });
    INT_KEY("growth", train.net.ddsp.growth);
    add("widths", [](RC& c, SV s) { c.train.net.widths = fixed_list<int, 3>("widths", s); },
        [](const RC& c) { return fmt::format("{}", fmt::join(c.train.net.widths, ",")); });
    add("long_connection", [](RC& c, SV s) { c.train.net.long_connection = nn::parse_long_connection(s); },
        [](const RC& c) { return std::string(nn::to_string(c.train.net.long_connection)); });
    DBL_KEY("skip_scale", train.net.skip_scale);
    add("supervision",
        [](RC& c, SV s) {
          const auto w = fixed_list<double, 3>("supervision", s);
          c.train.net.supervision = loss::SupervisionWeights(w[0], w[1], w[2]);
        },
        [](const RC& c) {
          const auto& w = c.train.net.supervision;
          return fmt::format("{},{},{}", w[0], w[1], w[2]);
        });
    add("fusion",
        [](RC& c, SV s) {
          const auto f = fixed_list<int, 3>("fusion", s);
          for (int i = 0; i < 3; ++i) {
            if (f[i] != 0 && f[i] != 1) throw ConfigError("fusion: entries must be 0 or 1");
            c.train.net.fusion[i] = f[i] == 1;
          }
        },
        [](const RC& c) {
          const auto& f = c.train.net.fusion;
          return fmt::format("{},{},{}", int(f[0]), int(f[1]), int(f[2]));
        });

    add("grid",
        [](RC& c, SV s) {
          auto g = parse_list<int>("grid", s);
          if (g.size() == 1) g.assign(3, g[0]);
          if (g.size() != 3) throw ConfigError("grid: expected 1 or 3 values");
          c.train.data.dims = {g[0], g[1], g[2]};
        },
        [](const RC& c) {
          const auto& d = c.train.data.dims;
          return fmt::format("{},{},{}", d.nx, d.ny, d.nz);
        });
    DBL_KEY("fg_fraction_max", train.data.fg_fraction_max);
    INT_KEY("blobs_min", train.data.blobs_min);
    INT_KEY("blobs_max", train.data.blobs_max);
    DBL_KEY("radius_min", train.data.radius_min);
    DBL_KEY("radius_max", train.data.radius_max);
    DBL_KEY("fg_intensity", train.data.fg_intensity);
    DBL_KEY("bg_intensity", train.data.bg_intensity);
    DBL_KEY("noise", train.data.noise);
    DBL_KEY("bias", train.data.bias);
    INT_KEY("deform_spacing", train.data.deform_spacing);
    DBL_KEY("deform_std", train.data.deform_std);
    add("augment", [](RC& c, SV s) { c.train.augment = parse_bool("augment", s); },
        [](const RC& c) { return std::string(c.train.augment ? "true" : "false"); });

    INT_KEY("val_cases", train.val_cases);
    INT_KEY("val_every", train.val_every);
    U64_KEY("val_seed", train.val_seed);
    DBL_KEY("threshold", train.threshold);

    INT_KEY("cases", cases);
    add("table", [](RC& c, SV s) { c.table = train::parse_table(s); },
        [](const RC& c) { return std::string(train::to_string(c.table)); });
    add("seeds", [](RC& c, SV s) { c.seeds = parse_list<std::uint64_t>("seeds", s); },
        [](const RC& c) { return list_text(c.seeds); });
    INT_KEY("jobs", jobs);
#undef INT_KEY
#undef U64_KEY
#undef DBL_KEY
    return v;
  }();
  return k;
}

}  // namespace

const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& k : keys()) n.push_back(k.name);
    return n;
  }();
  return names;
}

KeyValues parse_key_values(std::string_view text) {
  KeyValues out;
  std::set<std::string, std::less<>> seen;
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(fmt::format("line {}: expected key = value", line_no));
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(fmt::format("line {}: empty key", line_no));
    if (!seen.insert(key).second) throw ConfigError(fmt::format("line {}: duplicate key '{}'", line_no, key));
    out.emplace_back(key, std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = io::read_file_bytes(path);
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("cannot read config {}: {}", path.string(), e.what()));
  }
  return parse_key_values(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

RunConfig apply(const KeyValues& kv, RunConfig base) {
  std::vector<std::string> unknown;
  for (const auto& [k, v] : kv) {
    const auto it = std::find_if(keys().begin(), keys().end(), [&](const Key& x) { return x.name == k; });
    if (it == keys().end()) {
      unknown.push_back(k);
      continue;
    }
    try {
      it->set(base, v);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(fmt::format("{}: {}", k, e.what()));
    }
  }
  if (!unknown.empty()) throw ConfigError(fmt::format("unknown config keys: {}", fmt::join(unknown, ", ")));
  try {
    base.train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (base.cases < 1) throw ConfigError("cases must be >= 1");
  if (base.jobs < 1) throw ConfigError("jobs must be >= 1");
  if (base.seeds.empty()) throw ConfigError("seeds must list at least one seed");
  return base;
}

KeyValues resolved(const RunConfig& cfg) {
  KeyValues out;
  for (const auto& k : keys()) out.emplace_back(k.name, k.get(cfg));
  return out;
}

std::string to_text(const KeyValues& kv) {
  std::string s;
  for (const auto& [k, v] : kv) s += fmt::format("{} = {}\n", k, v);
  return s;
}

}  // namespace ddspseg::config
