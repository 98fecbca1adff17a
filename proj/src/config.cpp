#include "learnpath/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "learnpath/csv.hpp"

namespace learnpath {

namespace {

constexpr const char* kKindNames[] = {"gen-data", "correlate",  "paths",      "distance-gap",
                                      "recovery", "distill",    "ntk-verify", "zigzag"};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

template <class T>
std::string join_ints(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  for (const auto& f : split_csv_line(v)) {
    const std::string t = trim(f);
    if (t.empty()) throw ConfigError("empty list element in '" + v + "'");
    out.push_back(t);
  }
  return out;
}

double to_double(const std::string& v) {
  try {
    return parse_double(v);
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
}

std::size_t to_size(const std::string& v) {
  try {
    return parse_size(v);
  } catch (const std::exception&) {
    throw ConfigError("expected a nonnegative integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::vector<double> to_doubles(const std::string& v) {
  std::vector<double> out;
  for (const auto& s : split_list(v)) out.push_back(to_double(s));
  return out;
}

const char* stop_rule_name(StopRule r) {
  switch (r) {
    case StopRule::kValidPatience: return "valid_patience";
    case StopRule::kTrainConverged: return "train_converged";
    case StopRule::kFixedEpochs: return "fixed_epochs";
  }
  return "?";
}

StopRule stop_rule_from(const std::string& s) {
  for (StopRule r : {StopRule::kValidPatience, StopRule::kTrainConverged, StopRule::kFixedEpochs})
    if (s == stop_rule_name(r)) return r;
  throw ConfigError("unknown stop_rule '" + s + "'");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"master_seed", [](auto& c, const auto& v) { c.master_seed = to_size(v); }},
      {"num_samples", [](auto& c, const auto& v) { c.num_samples = to_size(v); }},
      {"num_classes", [](auto& c, const auto& v) { c.gaussian.num_classes = to_size(v); }},
      {"input_dim", [](auto& c, const auto& v) { c.gaussian.input_dim = to_size(v); }},
      {"sigma", [](auto& c, const auto& v) { c.gaussian.sigma = to_double(v); }},
      {"delta_mu", [](auto& c, const auto& v) { c.gaussian.delta_mu = to_double(v); }},
      {"split_train", [](auto& c, const auto& v) { c.split.train = to_double(v); }},
      {"split_valid", [](auto& c, const auto& v) { c.split.valid = to_double(v); }},
      {"split_test", [](auto& c, const auto& v) { c.split.test = to_double(v); }},
      {"dataset_csv", [](auto& c, const auto& v) { c.dataset_csv = v; }},
      {"dataset_header", [](auto& c, const auto& v) { c.dataset_header = v; }},
      {"hidden",
       [](auto& c, const auto& v) {
         c.train.hidden.clear();
         for (const auto& s : split_list(v)) c.train.hidden.push_back(to_size(s));
       }},
      {"learning_rate", [](auto& c, const auto& v) { c.train.learning_rate = to_double(v); }},
      {"max_epochs", [](auto& c, const auto& v) { c.train.max_epochs = to_size(v); }},
      {"patience", [](auto& c, const auto& v) { c.train.patience = to_size(v); }},
      {"temperature", [](auto& c, const auto& v) { c.train.temperature = to_double(v); }},
      {"beta", [](auto& c, const auto& v) { c.train.beta = to_double(v); }},
      {"stop_rule", [](auto& c, const auto& v) { c.train.stop_rule = stop_rule_from(v); }},
      {"output_init_scale", [](auto& c, const auto& v) { c.train.output_init_scale = to_double(v); }},
      {"param_ema_alpha", [](auto& c, const auto& v) { c.train.param_ema_alpha = to_double(v); }},
      {"path_granularity",
       [](auto& c, const auto& v) {
         if (v == "per_visit") c.train.path_granularity = Granularity::kPerVisit;
         else if (v == "per_epoch") c.train.path_granularity = Granularity::kPerEpoch;
         else throw ConfigError("unknown path_granularity '" + v + "'");
       }},
      {"seeds",
       [](auto& c, const auto& v) {
         c.seeds.clear();
         for (const auto& s : split_list(v)) c.seeds.push_back(to_size(s));
       }},
      {"noise_grid", [](auto& c, const auto& v) { c.noise_grid = to_doubles(v); }},
      {"ls_epsilon", [](auto& c, const auto& v) { c.ls_epsilon = to_double(v); }},
      {"shared_student_init", [](auto& c, const auto& v) { c.shared_student_init = to_bool(v); }},
      {"flip_ratio", [](auto& c, const auto& v) { c.flip_ratio = to_double(v); }},
      {"flip_grid", [](auto& c, const auto& v) { c.flip_grid = to_doubles(v); }},
      {"alpha_grid", [](auto& c, const auto& v) { c.alpha_grid = to_doubles(v); }},
      {"filter_alpha", [](auto& c, const auto& v) { c.filter_alpha = to_double(v); }},
      {"filter_freeze",
       [](auto& c, const auto& v) {
         if (v == "stop") c.filter_freeze = FilterFreeze::kStopEpoch;
         else if (v == "best") c.filter_freeze = FilterFreeze::kBestEpoch;
         else throw ConfigError("unknown filter_freeze '" + v + "'");
       }},
      {"ece_bins", [](auto& c, const auto& v) { c.ece_bins = to_size(v); }},
      {"loss_bound", [](auto& c, const auto& v) { c.loss_bound = to_double(v); }},
      {"ntk_pairs", [](auto& c, const auto& v) { c.ntk_pairs = to_size(v); }},
      {"ntk_eta", [](auto& c, const auto& v) { c.ntk_eta = to_double(v); }},
      {"ntk_levels", [](auto& c, const auto& v) { c.ntk_levels = to_size(v); }},
      {"ntk_checkpoints", [](auto& c, const auto& v) { c.ntk_checkpoints = to_size(v); }},
      {"output_dir", [](auto& c, const auto& v) { c.output_dir = v; }},
      {"jobs", [](auto& c, const auto& v) { c.jobs = to_size(v); }},
  };
  return table;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

const char* to_string(ExperimentKind k) { return kKindNames[static_cast<int>(k)]; }

ExperimentKind experiment_kind_from_string(const std::string& s) {
  for (int i = 0; i < 8; ++i)
    if (s == kKindNames[i]) return static_cast<ExperimentKind>(i);
  throw ConfigError("unknown experiment kind '" + s + "'");
}

std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0 && hi >= lo) || count == 0) throw std::invalid_argument("log_grid: bad range");
  if (count == 1) return {lo};
  std::vector<double> out(count);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < count; ++i)
    out[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  out.front() = lo;
  out.back() = hi;
  return out;
}

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  c.noise_grid = log_grid(0.02, 0.6, 12);
  switch (kind) {
    case ExperimentKind::kGenData:
    case ExperimentKind::kCorrelate:
    case ExperimentKind::kDistanceGap:
      break;
    case ExperimentKind::kDistill:
      c.seeds = {0, 1, 2, 3, 4};
      break;
    case ExperimentKind::kPaths:
      c.seeds = {0};
      c.train.stop_rule = StopRule::kTrainConverged;
      break;
    case ExperimentKind::kRecovery:
    case ExperimentKind::kZigzag:
      c.seeds = {0};
      c.flip_ratio = 0.2;
      c.train.stop_rule = StopRule::kTrainConverged;
      // Long enough runs for the filter window to matter.
      if (kind == ExperimentKind::kRecovery) {
        c.train.learning_rate = 1e-4;
        c.train.max_epochs = 400;
      }
      break;
    case ExperimentKind::kNtkVerify:
      c.seeds = {0};
      break;
  }
  return c;
}

void ExperimentConfig::validate() const {
  try {
    gaussian.validate();
    train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require(num_samples >= gaussian.num_classes, "num_samples must be at least num_classes");
  require(split.train > 0.0 && split.valid >= 0.0 && split.test >= 0.0,
          "split ratios must be nonnegative with a positive train share");
  require(std::abs(split.train + split.valid + split.test - 1.0) <= 1e-6,
          "split ratios must sum to 1");
  require(dataset_csv.has_value() == dataset_header.has_value(),
          "dataset_csv and dataset_header must be given together");
  require(!seeds.empty(), "seeds must be nonempty");
  require(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(),
          "seeds must be distinct");
  require(in_unit(flip_ratio) && flip_ratio < 1.0, "flip_ratio must lie in [0, 1)");
  require(ls_epsilon >= 0.0 && ls_epsilon <= 1.0, "ls_epsilon must lie in [0, 1]");
  require(filter_alpha > 0.0 && filter_alpha <= 1.0, "filter_alpha must lie in (0, 1]");
  require(ece_bins >= 1, "ece_bins must be positive");
  require(loss_bound > 0.0, "loss_bound must be positive");
  require(jobs >= 1, "jobs must be positive");
  require(!output_dir.empty(), "output_dir must be nonempty");

  switch (kind) {
    case ExperimentKind::kCorrelate:
      require(!noise_grid.empty(), "noise_grid must be nonempty");
      for (double s : noise_grid) require(s >= 0.0 && std::isfinite(s), "noise scales must be >= 0");
      break;
    case ExperimentKind::kDistill:
      require(!alpha_grid.empty(), "alpha_grid must be nonempty");
      require(!flip_grid.empty(), "flip_grid must be nonempty");
      for (double a : alpha_grid) require(a > 0.0 && a <= 1.0, "alpha values must lie in (0, 1]");
      for (double f : flip_grid) require(in_unit(f) && f < 1.0, "flip values must lie in [0, 1)");
      break;
    case ExperimentKind::kRecovery:
      require(flip_ratio > 0.0 || dataset_csv.has_value(), "recovery needs flip_ratio > 0");
      break;
    case ExperimentKind::kPaths:
      require(gaussian.num_classes == 3, "paths projection needs num_classes = 3");
      break;
    case ExperimentKind::kNtkVerify:
      require(ntk_pairs >= 1, "ntk_pairs must be positive");
      require(ntk_eta > 0.0, "ntk_eta must be positive");
      require(ntk_levels >= 2, "ntk_levels must be at least 2");
      require(ntk_checkpoints >= 1, "ntk_checkpoints must be positive");
      break;
    case ExperimentKind::kGenData:
    case ExperimentKind::kDistanceGap:
    case ExperimentKind::kZigzag:
      break;
  }

  // The output directory must be creatable and writable.
  std::error_code ec;
  std::filesystem::create_directories(output_dir, ec);
  require(!ec && std::filesystem::is_directory(output_dir),
          "output_dir '" + output_dir.string() + "' is not writable");
  const auto probe = output_dir / ".write_probe";
  {
    std::ofstream os(probe);
    require(static_cast<bool>(os), "output_dir '" + output_dir.string() + "' is not writable");
  }
  std::filesystem::remove(probe, ec);
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> e = {
      {"kind", to_string(kind)},
      {"master_seed", std::to_string(master_seed)},
      {"num_samples", std::to_string(num_samples)},
      {"num_classes", std::to_string(gaussian.num_classes)},
      {"input_dim", std::to_string(gaussian.input_dim)},
      {"sigma", format_double(gaussian.sigma)},
      {"delta_mu", format_double(gaussian.delta_mu)},
      {"split_train", format_double(split.train)},
      {"split_valid", format_double(split.valid)},
      {"split_test", format_double(split.test)},
      {"dataset_csv", dataset_csv ? dataset_csv->string() : ""},
      {"dataset_header", dataset_header ? dataset_header->string() : ""},
      {"hidden", join_ints(train.hidden)},
      {"learning_rate", format_double(train.learning_rate)},
      {"max_epochs", std::to_string(train.max_epochs)},
      {"patience", std::to_string(train.patience)},
      {"temperature", format_double(train.temperature)},
      {"beta", format_double(train.beta)},
      {"stop_rule", stop_rule_name(train.stop_rule)},
      {"output_init_scale", format_double(train.output_init_scale)},
      {"param_ema_alpha", format_double(train.param_ema_alpha)},
      {"path_granularity",
       train.path_granularity == Granularity::kPerVisit ? "per_visit" : "per_epoch"},
      {"seeds", join_ints(seeds)},
      {"noise_grid", join_doubles(noise_grid)},
      {"ls_epsilon", format_double(ls_epsilon)},
      {"shared_student_init", shared_student_init ? "true" : "false"},
      {"flip_ratio", format_double(flip_ratio)},
      {"flip_grid", join_doubles(flip_grid)},
      {"alpha_grid", join_doubles(alpha_grid)},
      {"filter_alpha", format_double(filter_alpha)},
      {"filter_freeze", filter_freeze == FilterFreeze::kStopEpoch ? "stop" : "best"},
      {"ece_bins", std::to_string(ece_bins)},
      {"loss_bound", format_double(loss_bound)},
      {"ntk_pairs", std::to_string(ntk_pairs)},
      {"ntk_eta", format_double(ntk_eta)},
      {"ntk_levels", std::to_string(ntk_levels)},
      {"ntk_checkpoints", std::to_string(ntk_checkpoints)},
  };
  std::sort(e.begin(), e.end());
  return e;
}

std::string ExperimentConfig::header_comment() const {
  std::string out;
  for (const auto& [k, v] : entries()) out += "# " + k + "=" + v + "\n";
  return out;
}

ExperimentConfig parse_config(const std::string& text, std::optional<ExperimentKind> kind_hint) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  std::optional<ExperimentKind> kind = kind_hint;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (!seen.insert(key).second)
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    if (key == "kind") {
      const ExperimentKind k = experiment_kind_from_string(value);
      if (kind_hint && *kind_hint != k)
        throw ConfigError(std::string("config kind '") + value + "' does not match subcommand '" +
                          to_string(*kind_hint) + "'");
      kind = k;
      continue;
    }
    if (!setters().count(key))
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    pairs.emplace_back(key, value);
  }
  if (!kind) throw ConfigError("missing 'kind'");
  ExperimentConfig c = default_config(*kind);
  for (const auto& [k, v] : pairs) {
    try {
      setters().at(k)(c, v);
    } catch (const ConfigError& e) {
      throw ConfigError(k + ": " + e.what());
    }
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path,
                             std::optional<ExperimentKind> kind_hint) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config '" + path.string() + "': " + e.what());
  }
  return parse_config(text, kind_hint);
}

}  // namespace learnpath
