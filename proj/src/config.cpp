#include "tinytrain/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <type_traits>

#include "tinytrain/errors.hpp"
#include "tinytrain/rng.hpp"

namespace tinytrain {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;  // throws std::invalid_argument with a reason
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
  requires std::is_unsigned_v<T> && (!std::is_same_v<T, bool>)
Field make_field(const char* key, T RunConfig::*m) {
  return {key,
          [m](RunConfig& c, const std::string& v) {
            if (!parse_number(v, c.*m)) throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
          },
          [m](const RunConfig& c) { return std::to_string(c.*m); }};
}

Field make_field(const char* key, double RunConfig::*m) {
  return {key,
          [m](RunConfig& c, const std::string& v) {
            if (!parse_number(v, c.*m)) throw std::invalid_argument("expected a number, got '" + v + "'");
          },
          [m](const RunConfig& c) { return format_double(c.*m); }};
}

Field make_field(const char* key, std::string RunConfig::*m) {
  return {key, [m](RunConfig& c, const std::string& v) { c.*m = v; }, [m](const RunConfig& c) { return c.*m; }};
}

Field make_field(const char* key, bool RunConfig::*m) {
  return {key,
          [m](RunConfig& c, const std::string& v) {
            if (v == "true" || v == "1" || v == "yes")
              c.*m = true;
            else if (v == "false" || v == "0" || v == "no")
              c.*m = false;
            else
              throw std::invalid_argument("expected true or false, got '" + v + "'");
          },
          [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      make_field("family", &RunConfig::family),
      make_field("width", &RunConfig::width),
      make_field("micro_blocks", &RunConfig::micro_blocks),
      make_field("micro_expand", &RunConfig::micro_expand),
      make_field("dtype", &RunConfig::dtype),
      make_field("budget_mem", &RunConfig::budget_mem),
      make_field("budget_mac", &RunConfig::budget_mac),
      make_field("ratio", &RunConfig::ratio),
      make_field("plan_source", &RunConfig::plan_source),
      make_field("plan_file", &RunConfig::plan_file),
      make_field("cost_batch", &RunConfig::cost_batch),
      make_field("iters", &RunConfig::iters),
      make_field("lr", &RunConfig::lr),
      make_field("momentum", &RunConfig::momentum),
      make_field("temperature", &RunConfig::temperature),
      make_field("flip_prob", &RunConfig::flip_prob),
      make_field("crop_pad", &RunConfig::crop_pad),
      make_field("trials", &RunConfig::trials),
      make_field("min_way", &RunConfig::min_way),
      make_field("max_way", &RunConfig::max_way),
      make_field("max_support", &RunConfig::max_support),
      make_field("max_support_per_class", &RunConfig::max_support_per_class),
      make_field("max_query_per_class", &RunConfig::max_query_per_class),
      make_field("epochs", &RunConfig::epochs),
      make_field("episodes_per_epoch", &RunConfig::episodes_per_epoch),
      make_field("warmup_epochs", &RunConfig::warmup_epochs),
      make_field("lr_start", &RunConfig::lr_start),
      make_field("lr_peak", &RunConfig::lr_peak),
      make_field("lr_end", &RunConfig::lr_end),
      make_field("meta_momentum", &RunConfig::meta_momentum),
      make_field("source_classes", &RunConfig::source_classes),
      make_field("target_classes", &RunConfig::target_classes),
      make_field("per_class", &RunConfig::per_class),
      make_field("image_size", &RunConfig::image_size),
      make_field("data_noise", &RunConfig::data_noise),
      make_field("data_shift", &RunConfig::data_shift),
      make_field("data_contrast", &RunConfig::data_contrast),
      make_field("sweep_ratios", &RunConfig::sweep_ratios),
      make_field("sweep_episodes", &RunConfig::sweep_episodes),
      make_field("include_bias", &RunConfig::include_bias),
      make_field("source_data", &RunConfig::source_data),
      make_field("target_data", &RunConfig::target_data),
      make_field("checkpoint", &RunConfig::checkpoint),
      make_field("out_dir", &RunConfig::out_dir),
      make_field("seed", &RunConfig::seed),
      make_field("jobs", &RunConfig::jobs),
  };
  return table;
}

}  // namespace

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value, int line) {
  for (const auto& f : fields()) {
    if (key != f.key) continue;
    try {
      f.set(*this, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(line, key + ": " + e.what());
    }
    if (line > 0)
      lines[key] = line;
    else
      lines.erase(key);
    return;
  }
  throw ConfigError(line, "unknown key '" + key + "'");
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "expected 'key = value'");
    const std::string key = trim(s.substr(0, eq));
    if (key.empty()) throw ConfigError(line, "missing key before '='");
    c.set(key, trim(s.substr(eq + 1)), line);
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot read config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void RunConfig::validate() const {
  auto fail = [&](const std::string& key, const std::string& why) {
    const auto it = lines.find(key);
    throw ConfigError(it == lines.end() ? 0 : it->second, key + ": " + why);
  };
  auto check = [&](const std::string& key, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      fail(key, e.what());
    }
  };
  auto finite_nonneg = [&](const std::string& key, double v) {
    if (!std::isfinite(v) || v < 0.0) fail(key, "must be finite and non-negative");
  };

  check("family", [&] { parse_family(family); });
  if (!(width > 0.0) || !std::isfinite(width)) fail("width", "must be positive");
  if (micro_blocks < 1 || micro_blocks > 4) fail("micro_blocks", "must be between 1 and 4");
  if (micro_expand < 1) fail("micro_expand", "must be at least 1");
  check("dtype", [&] { parse_dtype(dtype); });
  check("budget_mac", [&] { MacLimit::parse(budget_mac); });
  check("budget_mem", [&] { (void)budget(); });
  check("budget_mac", [&] { budget().validate(); });
  if (!(ratio > 0.0 && ratio <= 1.0)) fail("ratio", "must lie in (0, 1]");
  check("plan_source", [&] { parse_plan_source(plan_source); });
  if (plan_source == "imported" && plan_file.empty()) fail("plan_file", "required when plan_source = imported");
  if (cost_batch < 1) fail("cost_batch", "must be at least 1");
  finite_nonneg("lr", lr);
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum", "must lie in [0, 1)");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) fail("temperature", "must be positive");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) fail("flip_prob", "must lie in [0, 1]");
  if (trials < 1) fail("trials", "must be at least 1");
  check("min_way", [&] { sampler().validate(); });
  check("lr_peak", [&] { meta_options().schedule.validate(); });
  if (!(meta_momentum >= 0.0 && meta_momentum < 1.0)) fail("meta_momentum", "must lie in [0, 1)");
  if (source_classes < 1) fail("source_classes", "must be at least 1");
  if (target_classes < 1) fail("target_classes", "must be at least 1");
  if (per_class < 1) fail("per_class", "must be at least 1");
  if (image_size < 4) fail("image_size", "must be at least 4");
  finite_nonneg("data_noise", data_noise);
  if (!std::isfinite(data_shift)) fail("data_shift", "must be finite");
  finite_nonneg("data_contrast", data_contrast);
  check("sweep_ratios", [&] {
    for (double r : ratios())
      if (!(r > 0.0 && r <= 1.0)) throw ValidationError("every ratio must lie in (0, 1]");
  });
  if (sweep_episodes < 1) fail("sweep_episodes", "must be at least 1");
  if (jobs < 1) fail("jobs", "must be at least 1");
  if (source_data.empty()) fail("source_data", "path must not be empty");
  if (target_data.empty()) fail("target_data", "path must not be empty");
  if (checkpoint.empty()) fail("checkpoint", "path must not be empty");
  if (out_dir.empty()) fail("out_dir", "path must not be empty");
}

std::string RunConfig::resolved_text(bool include_run_control) const {
  std::string out;
  for (const auto& f : fields()) {
    const std::string_view key = f.key;
    if (!include_run_control && (key == "jobs" || key == "out_dir")) continue;
    out += f.key;
    out += " = ";
    out += f.get(*this);
    out += '\n';
  }
  return out;
}

std::uint64_t RunConfig::hash() const { return fnv1a(resolved_text(false)); }

std::string RunConfig::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

Budget RunConfig::budget() const {
  Budget b;
  if (budget_mem != "unbounded" && budget_mem != "none") {
    std::uint64_t bytes = 0;
    if (!parse_number(budget_mem, bytes)) throw ValidationError("expected a byte count or 'unbounded'");
    b.mem_bytes = bytes;
  }
  b.mac = MacLimit::parse(budget_mac);
  return b;
}

PlanSource RunConfig::source() const { return parse_plan_source(plan_source); }
DType RunConfig::scalar_type() const { return parse_dtype(dtype); }
BackboneFamily RunConfig::backbone() const { return parse_family(family); }

MicroCnnOptions RunConfig::micro() const {
  MicroCnnOptions m;
  m.blocks = micro_blocks;
  m.expand = micro_expand;
  return m;
}

AdaptOptions RunConfig::adapt_options() const {
  AdaptOptions o;
  o.source = source();
  o.budget = budget();
  o.channel_ratio = ratio;
  o.iterations = iters;
  o.optimizer = {lr, momentum};
  o.temperature = temperature;
  o.augment = {flip_prob, crop_pad};
  o.cost_batch = cost_batch;
  return o;
}

SamplerOptions RunConfig::sampler() const {
  return {min_way, max_way, max_support, max_support_per_class, max_query_per_class};
}

MetaTrainOptions RunConfig::meta_options() const {
  MetaTrainOptions o;
  o.schedule = {epochs, episodes_per_epoch, warmup_epochs, lr_start, lr_peak, lr_end};
  o.momentum = meta_momentum;
  o.temperature = temperature;
  o.sampler = sampler();
  return o;
}

ToyDataOptions RunConfig::toy_options() const {
  ToyDataOptions t;
  t.source_classes = source_classes;
  t.target_classes = target_classes;
  t.per_class = per_class;
  t.dims = {3, image_size, image_size};
  t.noise = data_noise;
  t.shift = data_shift;
  t.target_contrast = data_contrast;
  return t;
}

std::vector<double> RunConfig::ratios() const {
  std::vector<double> out;
  std::stringstream in(sweep_ratios);
  std::string item;
  while (std::getline(in, item, ',')) {
    double v = 0.0;
    if (!parse_number(trim(item), v)) throw ValidationError("bad ratio '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError("no ratios given");
  return out;
}

}  // namespace tinytrain
