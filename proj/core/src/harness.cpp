#include "walab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <regex>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/os.h>
#include <fmt/ostream.h>
#include <fmt/ranges.h>
#include <json.hpp>
#include <toml.hpp>

#include "overloaded.hpp"
#include "walab/averaging.hpp"
#include "walab/data.hpp"
#include "walab/errors.hpp"
#include "walab/landscape.hpp"
#include "walab/nn.hpp"
#include "walab/rng.hpp"

namespace walab {

namespace fs = std::filesystem;

namespace {

constexpr ControllerKind kAllKinds[] = {ControllerKind::sgd, ControllerKind::swa, ControllerKind::dswa,
                                        ControllerKind::tswa, ControllerKind::pswa};

int stage_count(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::swa: return 1;
    case ControllerKind::dswa: return 2;
    case ControllerKind::tswa: return 3;
    default: return 0;
  }
}

bool has(const std::vector<ControllerKind>& kinds, ControllerKind k) {
  return std::find(kinds.begin(), kinds.end(), k) != kinds.end();
}

}  // namespace

const char* to_string(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::sgd: return "sgd";
    case ControllerKind::swa: return "swa";
    case ControllerKind::dswa: return "dswa";
    case ControllerKind::tswa: return "tswa";
    case ControllerKind::pswa: return "pswa";
  }
  return "?";
}

ControllerKind controller_from_string(std::string_view name) {
  for (const auto k : kAllKinds) {
    if (name == to_string(k)) return k;
  }
  throw SpecError(fmt::format("unknown controller '{}' (sgd, swa, dswa, tswa, pswa)", name));
}

SeedStreams seed_streams(std::uint64_t master) {
  return SeedStreams{derive_seed(master, "init"), derive_seed(master, "shuffle"), derive_seed(master, "data"),
                     derive_seed(master, "noise")};
}

// ---------------------------------------------------------------- validation

void validate(const TrainPlan& plan) {
  if (plan.model.name == "mlp") {
    if (plan.model.mlp_dims.size() < 2) throw SpecError("mlp needs at least input and output dims");
  } else if (plan.model.name != "toy_cnn") {
    throw SpecError(fmt::format("unknown model '{}' (toy_cnn, mlp)", plan.model.name));
  }
  const auto& d = plan.dataset;
  if (d.name != "cifar10" && d.name != "mnist" && d.name != "blobs") {
    throw SpecError(fmt::format("unknown dataset '{}' (cifar10, mnist, blobs)", d.name));
  }
  if (plan.model.name == "toy_cnn" && d.name != "cifar10") throw SpecError("toy_cnn expects cifar10 inputs");
  validate(plan.optimizer);
  validate(ScheduleSpec{plan.schedule, 1});
  if (plan.controllers.empty()) throw SpecError("plan has no controllers");
  std::set<ControllerKind> seen;
  for (const auto k : plan.controllers) {
    if (!seen.insert(k).second) throw SpecError(fmt::format("controller {} listed twice", to_string(k)));
  }
  if (plan.batch_size < 1) throw SpecError("batch_size must be >= 1");
  if (plan.total_epochs < 0) throw SpecError("total_epochs must be >= 0");
  if (plan.seeds < 1) throw SpecError("seeds must be >= 1");
  const auto& a = plan.averaging;
  for (const auto k : plan.controllers) {
    if (const int stages = stage_count(k); stages > 0) {
      if (a.swa_epochs < 1) throw SpecError("averaging.swa_epochs must be >= 1");
      if (a.cycle_iters < 0) throw SpecError("averaging.cycle_iters must be >= 0");
      if (!(a.swa_lr_low > 0.0) || a.swa_lr_high < a.swa_lr_low) {
        throw SpecError("averaging needs 0 < swa_lr_low <= swa_lr_high");
      }
      // With c = one epoch the split is exact iff swa_epochs divides; other
      // cycle lengths are checked once steps_per_epoch is known.
      if (a.cycle_iters == 0 && a.swa_epochs % stages != 0) {
        throw SpecError(fmt::format("{} needs swa_epochs divisible by {} (got {})", to_string(k), stages,
                                    a.swa_epochs));
      }
    }
  }
  if (has(plan.controllers, ControllerKind::pswa)) {
    if (a.pswa_start_epoch < 0 || a.pswa_period_epochs < 1 || a.pswa_samples_per_epoch < 1) {
      throw SpecError("pswa needs start_epoch >= 0, period_epochs >= 1, samples_per_epoch >= 1");
    }
  }
  if (plan.probe.enabled) {
    if (plan.controllers.size() < 2) throw SpecError("probe needs two controllers to connect");
    (void)probe_grid(plan.probe.t_min, plan.probe.t_max, plan.probe.t_count);
  }
  if (plan.eval.eval_batch < 1) throw SpecError("eval.eval_batch must be >= 1");
}

void validate(const QuadPlan& plan) {
  if (plan.lrs.empty() || plan.windows.empty()) throw SpecError("quad plan needs lrs and windows");
  for (const double lr : plan.lrs) {
    for (const auto w : plan.windows) {
      QuadSpec s = plan.base;
      s.lr = lr;
      s.tail_window = w;
      validate(s);
    }
  }
  if (plan.seeds < 30) throw SpecError("quad plan needs seeds >= 30");
}

// ---------------------------------------------------------------- TOML

namespace {

std::string toml_float(double x) {
  std::string s = fmt::format("{}", x);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string toml_string(std::string_view s) {
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

class Emitter {
 public:
  explicit Emitter(const std::map<std::string, std::string>& provenance) : provenance_(provenance) {}

  void section(std::string_view name) {
    section_ = std::string(name);
    out_ << fmt::format("\n[{}]\n", name);
  }
  void str(std::string_view key, std::string_view value) { line(key, toml_string(value), false); }
  void boolean(std::string_view key, bool value) { line(key, value ? "true" : "false", false); }
  void integer(std::string_view key, std::int64_t value) { line(key, fmt::format("{}", value), true); }
  void real(std::string_view key, double value) { line(key, toml_float(value), true); }
  void reals(std::string_view key, const std::vector<double>& values) {
    std::vector<std::string> parts;
    for (const double v : values) parts.push_back(toml_float(v));
    line(key, fmt::format("[{}]", fmt::join(parts, ", ")), true);
  }
  void integers(std::string_view key, const std::vector<std::int64_t>& values) {
    line(key, fmt::format("[{}]", fmt::join(values, ", ")), true);
  }
  void names(std::string_view key, const std::vector<std::string>& values) {
    std::vector<std::string> parts;
    for (const auto& v : values) parts.push_back(toml_string(v));
    line(key, fmt::format("[{}]", fmt::join(parts, ", ")), false);
  }
  void raw(std::string_view text) { out_ << text; }
  [[nodiscard]] std::string str() const { return out_.str(); }

 private:
  void line(std::string_view key, const std::string& value, bool numeric) {
    const std::string path = section_.empty() ? std::string(key) : section_ + "." + std::string(key);
    std::string comment;
    if (const auto it = provenance_.find(path); it != provenance_.end()) {
      comment = it->second;
    } else if (numeric) {
      comment = "decision: library default";
    }
    if (comment.empty()) {
      out_ << fmt::format("{} = {}\n", key, value);
    } else {
      out_ << fmt::format("{:<24} # {}\n", fmt::format("{} = {}", key, value), comment);
    }
  }

  const std::map<std::string, std::string>& provenance_;
  std::string section_;
  std::ostringstream out_;
};

std::string emit_train(const TrainPlan& p) {
  Emitter e(p.provenance);
  e.raw("# walab train plan\n");
  e.str("kind", "train");
  e.str("name", p.name);

  e.section("model");
  e.str("name", p.model.name);
  if (p.model.name == "mlp") {
    e.integers("mlp_dims", std::vector<std::int64_t>(p.model.mlp_dims.begin(), p.model.mlp_dims.end()));
  }

  e.section("dataset");
  e.str("name", p.dataset.name);
  e.integer("subset_per_class", static_cast<std::int64_t>(p.dataset.subset_per_class));
  if (p.dataset.name == "blobs") {
    e.integer("blob_classes", p.dataset.blob_classes);
    e.integer("blob_dim", p.dataset.blob_dim);
    e.integer("blob_train_per_class", p.dataset.blob_train_per_class);
    e.integer("blob_test_per_class", p.dataset.blob_test_per_class);
    e.real("blob_separation", p.dataset.blob_separation);
  }

  e.section("optimizer");
  std::visit(Overloaded{
                 [&](const SgdConfig& c) {
                   e.str("kind", "sgd");
                   e.real("momentum", c.momentum);
                   e.real("weight_decay", c.weight_decay);
                 },
                 [&](const AdamConfig& c) {
                   e.str("kind", "adam");
                   e.real("beta1", c.beta1);
                   e.real("beta2", c.beta2);
                   e.real("eps", c.eps);
                 },
             },
             p.optimizer);

  e.section("schedule");
  std::visit(Overloaded{
                 [&](const sched::Backbone& b) {
                   e.str("kind", "backbone");
                   e.real("total_epochs", b.total_epochs);
                   e.real("high", b.high);
                   e.real("low", b.low);
                   e.real("plateau_frac", b.plateau_frac);
                   e.real("decay_end_frac", b.decay_end_frac);
                 },
                 [&](const sched::Constant& c) {
                   e.str("kind", "constant");
                   e.real("lr", c.lr);
                 },
                 [&](const sched::CyclicLinear& c) {
                   e.str("kind", "cyclic_linear");
                   e.integer("cycle_iters", c.cycle_iters);
                   e.real("high", c.high);
                   e.real("low", c.low);
                 },
             },
             p.schedule);

  e.section("controller");
  std::vector<std::string> kinds;
  for (const auto k : p.controllers) kinds.emplace_back(to_string(k));
  e.names("kinds", kinds);
  e.integer("swa_epochs", p.averaging.swa_epochs);
  e.integer("cycle_iters", p.averaging.cycle_iters);
  e.real("swa_lr_high", p.averaging.swa_lr_high);
  e.real("swa_lr_low", p.averaging.swa_lr_low);
  e.integer("pswa_start_epoch", p.averaging.pswa_start_epoch);
  e.integer("pswa_period_epochs", p.averaging.pswa_period_epochs);
  e.integer("pswa_samples_per_epoch", p.averaging.pswa_samples_per_epoch);

  e.section("probe");
  e.boolean("enabled", p.probe.enabled);
  e.real("t_min", p.probe.t_min);
  e.real("t_max", p.probe.t_max);
  e.integer("t_count", p.probe.t_count);

  e.section("run");
  e.integer("batch_size", static_cast<std::int64_t>(p.batch_size));
  e.integer("total_epochs", p.total_epochs);
  e.integer("seed", static_cast<std::int64_t>(p.seed));
  e.integer("seeds", p.seeds);

  e.section("eval");
  e.boolean("average_every_epoch", p.eval.average_every_epoch);
  e.boolean("sample_test", p.eval.sample_test);
  e.integer("train_eval_samples", static_cast<std::int64_t>(p.eval.train_eval_samples));
  e.integer("test_eval_samples", static_cast<std::int64_t>(p.eval.test_eval_samples));
  e.integer("eval_batch", static_cast<std::int64_t>(p.eval.eval_batch));
  return e.str();
}

std::string emit_quad(const QuadPlan& p) {
  Emitter e(p.provenance);
  e.raw("# walab quadratic variance plan\n");
  e.str("kind", "quad");
  e.str("name", p.name);
  e.section("quad");
  e.reals("curvatures", p.base.curvatures);
  e.real("noise_std", p.base.noise_std);
  e.integer("steps", p.base.steps);
  e.reals("initial", p.base.initial);
  e.reals("lrs", p.lrs);
  e.integers("windows", p.windows);
  e.integer("seeds", p.seeds);
  e.integer("seed", static_cast<std::int64_t>(p.seed));
  return e.str();
}

// Typed reads that leave `dst` alone when the key is absent.
class Reader {
 public:
  Reader(const toml::table& table, std::string section) : table_(table), section_(std::move(section)) {}

  template <class T>
  void get(std::string_view key, T& dst) {
    seen_.insert(std::string(key));
    const toml::node* node = table_.get(key);
    if (!node) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (auto v = node->value_exact<bool>()) return void(dst = *v);
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (auto v = node->value_exact<std::string>()) return void(dst = *v);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (auto v = node->value<double>()) return void(dst = *v);
    } else {
      if (auto v = node->value_exact<std::int64_t>()) {
        if constexpr (std::is_unsigned_v<T>) {
          if (*v < 0) throw SpecError(fmt::format("{}.{} must be >= 0", section_, key));
        }
        return void(dst = static_cast<T>(*v));
      }
    }
    throw SpecError(fmt::format("{}.{} has the wrong type", section_, key));
  }

  template <class T>
  void get_array(std::string_view key, std::vector<T>& dst) {
    seen_.insert(std::string(key));
    const toml::node* node = table_.get(key);
    if (!node) return;
    const toml::array* arr = node->as_array();
    if (!arr) throw SpecError(fmt::format("{}.{} must be an array", section_, key));
    std::vector<T> out;
    for (const auto& item : *arr) {
      if constexpr (std::is_same_v<T, std::string>) {
        auto v = item.value_exact<std::string>();
        if (!v) throw SpecError(fmt::format("{}.{} must hold strings", section_, key));
        out.push_back(*v);
      } else if constexpr (std::is_floating_point_v<T>) {
        auto v = item.value<double>();
        if (!v) throw SpecError(fmt::format("{}.{} must hold numbers", section_, key));
        out.push_back(*v);
      } else {
        auto v = item.value_exact<std::int64_t>();
        if (!v) throw SpecError(fmt::format("{}.{} must hold integers", section_, key));
        out.push_back(static_cast<T>(*v));
      }
    }
    dst = std::move(out);
  }

  // Keys present in the file but never asked for.
  void reject_unknown() const {
    for (const auto& [key, node] : table_) {
      if (!seen_.contains(std::string(key.str())) && !node.is_table()) {
        throw SpecError(fmt::format("unknown key '{}{}{}'", section_, section_.empty() ? "" : ".", key.str()));
      }
    }
  }

 private:
  const toml::table& table_;
  std::string section_;
  std::set<std::string> seen_;
};

const toml::table& sub(const toml::table& root, std::string_view name) {
  static const toml::table empty;
  const toml::node* node = root.get(name);
  if (!node) return empty;
  if (!node->is_table()) throw SpecError(fmt::format("[{}] must be a table", name));
  return *node->as_table();
}

void reject_unknown_sections(const toml::table& root, std::initializer_list<std::string_view> known) {
  for (const auto& [key, node] : root) {
    if (!node.is_table()) continue;
    if (std::find(known.begin(), known.end(), key.str()) == known.end()) {
      throw SpecError(fmt::format("unknown section [{}]", key.str()));
    }
  }
}

TrainPlan parse_train(const toml::table& root, TrainPlan p) {
  reject_unknown_sections(root, {"model", "dataset", "optimizer", "schedule", "controller", "probe", "run", "eval"});
  {
    Reader r(root, "");
    std::string kind, preset_name;
    r.get("kind", kind);
    r.get("preset", preset_name);
    r.get("name", p.name);
    r.reject_unknown();
  }
  {
    Reader r(sub(root, "model"), "model");
    r.get("name", p.model.name);
    r.get_array("mlp_dims", p.model.mlp_dims);
    r.reject_unknown();
  }
  {
    Reader r(sub(root, "dataset"), "dataset");
    auto& d = p.dataset;
    r.get("name", d.name);
    r.get("subset_per_class", d.subset_per_class);
    r.get("blob_classes", d.blob_classes);
    r.get("blob_dim", d.blob_dim);
    r.get("blob_train_per_class", d.blob_train_per_class);
    r.get("blob_test_per_class", d.blob_test_per_class);
    r.get("blob_separation", d.blob_separation);
    r.reject_unknown();
  }
  {
    const auto& t = sub(root, "optimizer");
    Reader r(t, "optimizer");
    std::string kind = std::holds_alternative<SgdConfig>(p.optimizer) ? "sgd" : "adam";
    r.get("kind", kind);
    if (kind == "sgd") {
      SgdConfig c = std::holds_alternative<SgdConfig>(p.optimizer) ? std::get<SgdConfig>(p.optimizer) : SgdConfig{};
      r.get("momentum", c.momentum);
      r.get("weight_decay", c.weight_decay);
      p.optimizer = c;
    } else if (kind == "adam") {
      AdamConfig c =
          std::holds_alternative<AdamConfig>(p.optimizer) ? std::get<AdamConfig>(p.optimizer) : AdamConfig{};
      r.get("beta1", c.beta1);
      r.get("beta2", c.beta2);
      r.get("eps", c.eps);
      p.optimizer = c;
    } else {
      throw SpecError(fmt::format("unknown optimizer '{}' (sgd, adam)", kind));
    }
    r.reject_unknown();
  }
  {
    Reader r(sub(root, "schedule"), "schedule");
    std::string kind = std::visit(Overloaded{[](const sched::Backbone&) { return "backbone"; },
                                             [](const sched::Constant&) { return "constant"; },
                                             [](const sched::CyclicLinear&) { return "cyclic_linear"; }},
                                  p.schedule);
    r.get("kind", kind);
    if (kind == "backbone") {
      auto b = std::holds_alternative<sched::Backbone>(p.schedule) ? std::get<sched::Backbone>(p.schedule)
                                                                    : sched::Backbone{};
      r.get("total_epochs", b.total_epochs);
      r.get("high", b.high);
      r.get("low", b.low);
      r.get("plateau_frac", b.plateau_frac);
      r.get("decay_end_frac", b.decay_end_frac);
      p.schedule = b;
    } else if (kind == "constant") {
      auto c = std::holds_alternative<sched::Constant>(p.schedule) ? std::get<sched::Constant>(p.schedule)
                                                                    : sched::Constant{};
      r.get("lr", c.lr);
      p.schedule = c;
    } else if (kind == "cyclic_linear") {
      auto c = std::holds_alternative<sched::CyclicLinear>(p.schedule) ? std::get<sched::CyclicLinear>(p.schedule)
                                                                        : sched::CyclicLinear{};
      r.get("cycle_iters", c.cycle_iters);
      r.get("high", c.high);
      r.get("low", c.low);
      p.schedule = c;
    } else {
      throw SpecError(fmt::format("unknown schedule '{}' (backbone, constant, cyclic_linear)", kind));
    }
    r.reject_unknown();
  }
  {
    Reader r(sub(root, "controller"), "controller");
    std::vector<std::string> kinds;
    r.get_array("kinds", kinds);
    if (!kinds.empty()) {
      p.controllers.clear();
      for (const auto& k : kinds) p.controllers.push_back(controller_from_string(k));
    }
    auto& a = p.averaging;
    r.get("swa_epochs", a.swa_epochs);
    r.get("cycle_iters", a.cycle_iters);
    r.get("swa_lr_high", a.swa_lr_high);
    r.get("swa_lr_low", a.swa_lr_low);
    r.get("pswa_start_epoch", a.pswa_start_epoch);
    r.get("pswa_period_epochs", a.pswa_period_epochs);
    r.get("pswa_samples_per_epoch", a.pswa_samples_per_epoch);
    r.reject_unknown();
  }
  {
    Reader r(sub(root, "probe"), "probe");
    r.get("enabled", p.probe.enabled);
    r.get("t_min", p.probe.t_min);
    r.get("t_max", p.probe.t_max);
    r.get("t_count", p.probe.t_count);
    r.reject_unknown();
  }
  {
    Reader r(sub(root, "run"), "run");
    r.get("batch_size", p.batch_size);
    r.get("total_epochs", p.total_epochs);
    r.get("seed", p.seed);
    r.get("seeds", p.seeds);
    r.reject_unknown();
  }
  {
    Reader r(sub(root, "eval"), "eval");
    r.get("average_every_epoch", p.eval.average_every_epoch);
    r.get("sample_test", p.eval.sample_test);
    r.get("train_eval_samples", p.eval.train_eval_samples);
    r.get("test_eval_samples", p.eval.test_eval_samples);
    r.get("eval_batch", p.eval.eval_batch);
    r.reject_unknown();
  }
  validate(p);
  return p;
}

QuadPlan parse_quad(const toml::table& root, QuadPlan p) {
  reject_unknown_sections(root, {"quad"});
  {
    Reader r(root, "");
    std::string kind, preset_name;
    r.get("kind", kind);
    r.get("preset", preset_name);
    r.get("name", p.name);
    r.reject_unknown();
  }
  Reader r(sub(root, "quad"), "quad");
  r.get_array("curvatures", p.base.curvatures);
  r.get("noise_std", p.base.noise_std);
  r.get("steps", p.base.steps);
  r.get_array("initial", p.base.initial);
  r.get_array("lrs", p.lrs);
  r.get_array("windows", p.windows);
  r.get("seeds", p.seeds);
  r.get("seed", p.seed);
  r.reject_unknown();
  validate(p);
  return p;
}

// Provenance lives in trailing comments, which the TOML parser drops.
std::map<std::string, std::string> read_provenance(std::string_view text) {
  static const std::regex section(R"(^\s*\[(\w+)\]\s*$)");
  static const std::regex tagged(R"(^\s*(\w+)\s*=[^"#]*#\s*((?:reference|scaled|decision): .*?)\s*$)");
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::string current;
  std::smatch m;
  for (std::string line; std::getline(in, line);) {
    if (std::regex_match(line, m, section)) {
      current = m[1];
    } else if (std::regex_match(line, m, tagged) && m[2] != "decision: library default") {
      out[current.empty() ? std::string(m[1]) : current + "." + std::string(m[1])] = m[2];
    }
  }
  return out;
}

Plan parse_plan_toml_values(std::string_view text, const std::optional<Plan>& base) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    throw FormatError(fmt::format("config: {} (line {}, column {})", e.description(), e.source().begin.line,
                                  e.source().begin.column));
  }
  std::optional<Plan> start = base;
  if (const auto name = root["preset"].value<std::string>(); name && !start) start = preset(*name);
  std::string kind;
  if (const auto k = root["kind"].value<std::string>()) {
    kind = *k;
  } else if (start) {
    kind = std::holds_alternative<QuadPlan>(*start) ? "quad" : "train";
  } else {
    kind = "train";
  }
  if (kind == "train") {
    if (start && !std::holds_alternative<TrainPlan>(*start)) throw SpecError("config kind 'train' over a quad preset");
    return parse_train(root, start ? std::get<TrainPlan>(*start) : TrainPlan{});
  }
  if (kind == "quad") {
    if (start && !std::holds_alternative<QuadPlan>(*start)) throw SpecError("config kind 'quad' over a train preset");
    return parse_quad(root, start ? std::get<QuadPlan>(*start) : QuadPlan{});
  }
  throw SpecError(fmt::format("unknown config kind '{}' (train, quad)", kind));
}

}  // namespace

Plan parse_plan_toml(std::string_view text, const std::optional<Plan>& base) {
  Plan plan = parse_plan_toml_values(text, base);
  std::visit(
      [&](auto& p) {
        for (auto& [path, note] : read_provenance(text)) p.provenance[path] = std::move(note);
      },
      plan);
  return plan;
}

Plan load_plan_toml(const fs::path& path, const std::optional<Plan>& base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot read config {}", path.string()));
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_plan_toml(text.str(), base);
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string emit_plan_toml(const Plan& plan) {
  return std::visit(Overloaded{[](const TrainPlan& p) { return emit_train(p); },
                               [](const QuadPlan& p) { return emit_quad(p); }},
                    plan);
}

// ---------------------------------------------------------------- metrics.csv

void write_metrics_header(std::ostream& out) {
  out << "epoch,lr,train_loss,train_acc,test_acc,controller_tag,wallclock_s\n";
}

void write_metrics_row(std::ostream& out, const MetricsRecord& r) {
  fmt::print(out, "{},{:.6g},{:.6g},{:.6g},{:.6g},{},{:.6g}\n", r.epoch, r.lr, r.train_loss, r.train_acc, r.test_acc,
             r.controller_tag, r.wallclock_s);
}

std::vector<MetricsRecord> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("{}: missing metrics.csv", path.parent_path().string()));
  std::string line;
  if (!std::getline(in, line) || line != "epoch,lr,train_loss,train_acc,test_acc,controller_tag,wallclock_s") {
    throw FormatError(fmt::format("{}: bad metrics header", path.string()));
  }
  std::vector<MetricsRecord> rows;
  for (int n = 2; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw FormatError(fmt::format("{}: line {}: expected 7 fields", path.string(), n));
    try {
      rows.push_back(MetricsRecord{std::stoll(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3]),
                                   std::stod(f[4]), f[5], std::stod(f[6])});
    } catch (const std::logic_error&) {
      throw FormatError(fmt::format("{}: line {}: bad number", path.string(), n));
    }
  }
  return rows;
}

// ---------------------------------------------------------------- running

namespace {

class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
      throw UsageError(fmt::format("{} is in use by another run (delete {} if it is stale)", dir.string(),
                                   path_.string()));
    }
    std::fclose(f);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

fs::path data_root(const RunOptions& options) {
  if (!options.data_dir.empty()) return options.data_dir;
  if (const char* env = std::getenv("WALAB_DATA_DIR"); env && *env) return env;
  throw FormatError(
      "WALAB_DATA_DIR is not set. Put the CIFAR-10 binary version under $WALAB_DATA_DIR/cifar-10-batches-bin/ "
      "(https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz) or MNIST IDX files under $WALAB_DATA_DIR/mnist/");
}

}  // namespace

PlanData load_plan_data(const TrainPlan& plan, const RunOptions& options, std::uint64_t seed) {
  const auto& d = plan.dataset;
  PlanData s;
  if (d.name == "blobs") {
    const std::uint64_t data_seed = seed_streams(seed).data;
    s.train = synthetic_blobs(d.blob_classes, d.blob_train_per_class, d.blob_dim, data_seed, d.blob_separation,
                              Split::train);
    s.test =
        synthetic_blobs(d.blob_classes, d.blob_test_per_class, d.blob_dim, data_seed, d.blob_separation, Split::test);
  } else {
    const fs::path root = data_root(options);
    const fs::path dir = root / (d.name == "cifar10" ? "cifar-10-batches-bin" : "mnist");
    if (!fs::is_directory(dir)) {
      throw FormatError(fmt::format("dataset directory {} not found; fetch the {} files there", dir.string(),
                                    d.name == "cifar10" ? "CIFAR-10 binary" : "MNIST IDX"));
    }
    s.train = d.name == "cifar10" ? load_cifar10(dir, Split::train) : load_mnist(dir, Split::train);
    s.test = d.name == "cifar10" ? load_cifar10(dir, Split::test) : load_mnist(dir, Split::test);
  }
  if (d.subset_per_class > 0) s.train = balanced_subset(s.train, d.subset_per_class);
  return s;
}

ModelSpec plan_model(const TrainPlan& plan) {
  if (plan.model.name == "mlp") return mlp_spec(plan.model.mlp_dims);
  return toy_cnn_spec();
}

namespace {

// Output files of one (controller, seed) member.
class MemberSink final : public RunObserver {
 public:
  MemberSink(ControllerKind kind, fs::path dir, std::string label, bool quiet)
      : kind_(kind), dir_(std::move(dir)), label_(std::move(label)), quiet_(quiet) {
    fs::create_directories(dir_ / "checkpoints");
    metrics_.open(dir_ / "metrics.csv", std::ios::trunc);
    if (!metrics_) throw FormatError(fmt::format("cannot write {}", (dir_ / "metrics.csv").string()));
    write_metrics_header(metrics_);
    metrics_.flush();
  }

  void on_metrics(const MetricsRecord& r) override {
    write_metrics_row(metrics_, r);
    metrics_.flush();
    rows_.push_back(r);
    if (!quiet_) {
      fmt::print(stderr, "[{}] epoch {:>3} {:<10} lr {:.4g} train_loss {:.4f} train_acc {:.4f} test_acc {:.4f}\n",
                 label_, r.epoch, r.controller_tag, r.lr, r.train_loss, r.train_acc, r.test_acc);
    }
  }
  void on_checkpoint(std::string_view name, const WeightVector& w) override {
    write_checkpoint(dir_ / "checkpoints" / fmt::format("{}.wav", name), w);
  }

  [[nodiscard]] ControllerKind kind() const { return kind_; }
  [[nodiscard]] const fs::path& dir() const { return dir_; }
  [[nodiscard]] const std::vector<MetricsRecord>& rows() const { return rows_; }

 private:
  ControllerKind kind_;
  fs::path dir_;
  std::string label_;
  bool quiet_;
  std::ofstream metrics_;
  std::vector<MetricsRecord> rows_;
};

// Fans the backbone run out to the members that share it and keeps the
// state PSWA starts from.
class BackboneFanout final : public RunObserver {
 public:
  BackboneFanout(std::vector<MemberSink*> plain, MemberSink* pswa, std::int64_t pswa_start)
      : plain_(std::move(plain)), pswa_(pswa), pswa_start_(pswa_start) {}

  void on_metrics(const MetricsRecord& r) override {
    for (auto* s : plain_) s->on_metrics(r);
    if (pswa_ && r.epoch <= pswa_start_) {
      MetricsRecord live = r;
      live.controller_tag = "pswa_live";
      pswa_->on_metrics(live);
      MetricsRecord out = r;
      out.controller_tag = "pswa";
      pswa_->on_metrics(out);
    }
  }
  void on_checkpoint(std::string_view name, const WeightVector& w) override {
    for (auto* s : plain_) s->on_checkpoint(name, w);
  }
  void on_epoch_end(std::string_view, const TrainState& state) override {
    if (pswa_ && state.iteration == pswa_start_iteration) pswa_state = state;
  }

  std::int64_t pswa_start_iteration = -1;
  std::optional<TrainState> pswa_state;

 private:
  std::vector<MemberSink*> plain_;
  MemberSink* pswa_;
  std::int64_t pswa_start_;
};

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(fmt::format("cannot write {}", path.string()));
  out << j.dump(2) << "\n";
}

TrainPlan member_plan(const TrainPlan& plan, ControllerKind kind, std::uint64_t seed) {
  TrainPlan p = plan;
  p.controllers = {kind};
  p.seed = seed;
  p.seeds = 1;
  p.probe.enabled = false;
  return p;
}

double final_accuracy(const TrainContext& ctx, const MemberSink& sink, const WeightVector& w) {
  return sink.rows().empty() ? ctx.test_accuracy(w) : sink.rows().back().test_acc;
}

void run_seed(const TrainPlan& plan, std::uint64_t seed, const PlanData& data, const fs::path& out_dir,
              const RunOptions& options, RunSummary& summary) {
  const SeedStreams streams = seed_streams(seed);
  const Model model(plan_model(plan));
  const BatchStream stream(data.train, plan.batch_size, streams.shuffle);
  const auto spe = static_cast<std::int64_t>(stream.steps_per_epoch());
  const ScheduleSpec backbone{plan.schedule, spe};
  const WeightVector w0 = model.init_weights(streams.init);
  const auto started = std::chrono::steady_clock::now();

  std::vector<std::unique_ptr<MemberSink>> sinks;
  MemberSink* pswa_sink = nullptr;
  std::vector<MemberSink*> plain;
  for (const auto kind : plan.controllers) {
    const fs::path dir = out_dir / to_string(kind) / fmt::format("seed{}", seed);
    fs::create_directories(dir);
    {
      std::ofstream cfg(dir / "config.toml", std::ios::trunc);
      cfg << emit_plan_toml(member_plan(plan, kind, seed));
    }
    sinks.push_back(std::make_unique<MemberSink>(kind, dir, fmt::format("{} {} s{}", plan.name, to_string(kind), seed),
                                                 options.quiet));
    if (kind == ControllerKind::pswa) {
      pswa_sink = sinks.back().get();
    } else {
      plain.push_back(sinks.back().get());
    }
  }

  const auto& avg = plan.averaging;
  std::map<ControllerKind, WeightVector> finals;
  auto finish = [&](MemberSink& sink, const TrainContext& ctx, const ControllerOutput& out) {
    sink.on_checkpoint("final", out.final_weights);
    const double acc = final_accuracy(ctx, sink, out.final_weights);
    nlohmann::ordered_json j;
    j["plan"] = plan.name;
    j["controller"] = to_string(sink.kind());
    j["seed"] = seed;
    j["final_test_acc"] = acc;
    j["rows"] = sink.rows().size();
    j["steps_per_epoch"] = spe;
    j["parameter_count"] = model.parameter_count();
    j["averaging_iterations"] = out.iterations;
    j["samples_folded"] = out.samples_folded;
    j["wallclock_s"] = ctx.elapsed_s();
    write_json(sink.dir() / "summary.json", j);
    summary.members.push_back(MemberResult{sink.kind(), seed, acc, sink.dir()});
    finals.insert_or_assign(sink.kind(), out.final_weights);
  };

  std::optional<TrainState> pswa_start;
  std::optional<ControllerOutput> backbone_out;
  if (!plain.empty()) {
    BackboneFanout fan(plain, pswa_sink, avg.pswa_start_epoch);
    fan.pswa_start_iteration = avg.pswa_start_epoch * spe;
    TrainContext ctx{model, stream, data.test, plan.eval, &fan, started};
    TrainState init = TrainState::fresh(w0, plan.optimizer);
    if (pswa_sink && avg.pswa_start_epoch == 0) fan.pswa_state = init;
    backbone_out = sgd_baseline_run(ctx, std::move(init), backbone, plan.total_epochs, "sgd");
    if (pswa_sink) {
      pswa_start = fan.pswa_state ? std::move(fan.pswa_state) : backbone_out->final_state;
    }
    for (auto* s : plain) {
      if (s->kind() == ControllerKind::sgd) finish(*s, ctx, *backbone_out);
    }
  } else {
    pswa_start = TrainState::fresh(w0, plan.optimizer);
  }

  for (auto* s : plain) {
    const int stages = stage_count(s->kind());
    if (stages == 0) continue;
    const std::int64_t c = avg.cycle_iters == 0 ? spe : avg.cycle_iters;
    SwaPlan swa{avg.swa_lr_high == avg.swa_lr_low
                    ? ScheduleSpec::constant(avg.swa_lr_high, spe)
                    : ScheduleSpec::cyclic_linear(c, avg.swa_lr_high, avg.swa_lr_low, spe),
                c, avg.swa_epochs * spe};
    TrainContext ctx{model, stream, data.test, plan.eval, s, started};
    const auto out = chained_swa_run(ctx, backbone_out->final_weights, swa, stages, plan.optimizer,
                                     plan.total_epochs * spe, to_string(s->kind()));
    finish(*s, ctx, out);
  }

  if (pswa_sink) {
    TrainContext ctx{model, stream, data.test, plan.eval, pswa_sink, started};
    const PswaPlan pp{avg.pswa_start_epoch, avg.pswa_period_epochs, avg.pswa_samples_per_epoch, backbone};
    const auto out = pswa_run(ctx, std::move(*pswa_start), pp, plan.total_epochs, "pswa");
    finish(*pswa_sink, ctx, out);
  }

  if (plan.probe.enabled) {
    const fs::path dir = out_dir / "probe" / fmt::format("seed{}", seed);
    fs::create_directories(dir);
    const auto ts = probe_grid(plan.probe.t_min, plan.probe.t_max, plan.probe.t_count);
    const ProbeOptions po{plan.eval.train_eval_samples, plan.eval.test_eval_samples, plan.eval.eval_batch};
    const auto result = line_probe(model, finals.at(plan.controllers[0]), finals.at(plan.controllers[1]), ts,
                                   data.train, data.test, po);
    write_probe_csv(dir / "probe.csv", result);
  }
}

RunSummary run_train(const TrainPlan& plan, const fs::path& out_dir, const RunOptions& options) {
  RunSummary summary{plan.name, {}};
  std::optional<PlanData> shared;
  if (plan.dataset.name != "blobs") shared = load_plan_data(plan, options, plan.seed);
  for (int k = 0; k < plan.seeds; ++k) {
    const std::uint64_t seed = plan.seed + static_cast<std::uint64_t>(k);
    if (shared) {
      run_seed(plan, seed, *shared, out_dir, options, summary);
    } else {
      run_seed(plan, seed, load_plan_data(plan, options, seed), out_dir, options, summary);
    }
  }

  nlohmann::ordered_json j;
  j["plan"] = plan.name;
  j["seeds"] = plan.seeds;
  auto& groups = j["controllers"];
  for (const auto kind : plan.controllers) {
    std::vector<double> accs;
    for (const auto& m : summary.members) {
      if (m.kind == kind) accs.push_back(m.final_test_acc);
    }
    double mean = 0.0;
    for (const double a : accs) mean += a;
    mean /= static_cast<double>(accs.size());
    double ss = 0.0;
    for (const double a : accs) ss += (a - mean) * (a - mean);
    const double sd = accs.size() > 1 ? std::sqrt(ss / static_cast<double>(accs.size() - 1)) : 0.0;
    groups[to_string(kind)] = {{"final_test_acc", accs},
                               {"mean", mean},
                               {"std", sd},
                               {"formatted", format_mean_std(mean, sd)}};
  }
  write_json(out_dir / "summary.json", j);
  return summary;
}

RunSummary run_quad(const QuadPlan& plan, const fs::path& out_dir) {
  std::ofstream csv(out_dir / "variance.csv", std::ios::trunc);
  if (!csv) throw FormatError(fmt::format("cannot write {}", (out_dir / "variance.csv").string()));
  write_variance_csv_header(csv);
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const double lr : plan.lrs) {
    for (const auto w : plan.windows) {
      QuadSpec s = plan.base;
      s.lr = lr;
      s.tail_window = w;
      const auto report = variance_report(s, plan.seeds, seed_streams(plan.seed).noise);
      write_variance_csv_row(csv, s, report);
      rows.push_back({{"lr", lr},
                      {"window", w},
                      {"var_final", report.var_final},
                      {"var_tail", report.var_tail},
                      {"ratio", report.ratio},
                      {"mean_iterate_variance", report.mean_iterate_variance}});
    }
  }
  nlohmann::ordered_json j;
  j["plan"] = plan.name;
  j["seeds"] = plan.seeds;
  j["rows"] = rows;
  write_json(out_dir / "summary.json", j);
  return RunSummary{plan.name, {}};
}

}  // namespace

RunSummary run_plan(const Plan& plan, const fs::path& out_dir, const RunOptions& options) {
  std::visit([](const auto& p) { validate(p); }, plan);
  DirLock lock(out_dir);
  {
    std::ofstream cfg(out_dir / "config.toml", std::ios::trunc);
    if (!cfg) throw FormatError(fmt::format("cannot write {}", (out_dir / "config.toml").string()));
    cfg << emit_plan_toml(plan);
  }
  return std::visit(Overloaded{[&](const TrainPlan& p) { return run_train(p, out_dir, options); },
                               [&](const QuadPlan& p) { return run_quad(p, out_dir); }},
                    plan);
}

}  // namespace walab
