#include "contextseg/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace contextseg {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* b = text.data();
  const char* e = b + text.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e || text.empty())
    throw ConfigError(key + ": cannot parse '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, double>)
      out += format_double(v[i]);
    else
      out += std::to_string(v[i]);
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (const auto& item : split(text, ',')) out.push_back(parse_number<T>(key, item));
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// Accessor helpers keep the table below one line per key.
template <typename Get>
Field int_field(std::string key, Get ref) {
  return {key, [ref](const RunConfig& c) { return std::to_string(ref(c)); },
          [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_number<int>(key, v); }};
}
template <typename Get>
Field u64_field(std::string key, Get ref) {
  return {key, [ref](const RunConfig& c) { return std::to_string(ref(c)); },
          [ref, key](RunConfig& c, const std::string& v) {
            ref(c) = parse_number<std::uint64_t>(key, v);
          }};
}
template <typename Get>
Field double_field(std::string key, Get ref) {
  return {key, [ref](const RunConfig& c) { return format_double(ref(c)); },
          [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_number<double>(key, v); }};
}
template <typename Get>
Field bool_field(std::string key, Get ref) {
  return {key,
          [ref](const RunConfig& c) {
            return std::string(ref(c) ? "true" : "false");
          },
          [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_bool(key, v); }};
}
template <typename T, typename Get>
Field list_field(std::string key, Get ref) {
  return {key, [ref](const RunConfig& c) { return join(ref(c)); },
          [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_list<T>(key, v); }};
}

#define REF(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(int_field("net.in_channels", REF(net.in_channels)));
    f.push_back({"net.trunk", [](const RunConfig& c) { return format_trunk(c.net.trunk); },
                 [](RunConfig& c, const std::string& v) { c.net.trunk = parse_trunk(v); }});
    f.push_back({"net.head", [](const RunConfig& c) { return to_string(c.net.head); },
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.net.head = parse_fusion_mode(v);
                   } catch (const ArgumentError& e) {
                     throw ConfigError(std::string("net.head: ") + e.what());
                   }
                 }});
    f.push_back(int_field("net.classes", REF(net.classes)));
    f.push_back(bool_field("net.normalize", REF(net.fusion_normalize)));
    f.push_back(bool_field("net.context", REF(net.context_enabled)));
    f.push_back(list_field<int>("net.taps", REF(net.taps)));
    f.push_back(int_field("net.context_tap", REF(net.context_tap)));
    f.push_back(list_field<double>("net.tap_scales", REF(net.tap_scales)));
    f.push_back(double_field("net.gamma_init", REF(net.gamma_init)));

    f.push_back(double_field("train.base_lr", REF(train.solver.base_lr)));
    f.push_back(double_field("train.momentum", REF(train.solver.momentum)));
    f.push_back({"train.lr_policy", [](const RunConfig& c) { return to_string(c.train.solver.policy); },
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.train.solver.policy = parse_lr_policy(v);
                   } catch (const ArgumentError& e) {
                     throw ConfigError(std::string("train.lr_policy: ") + e.what());
                   }
                 }});
    f.push_back(double_field("train.power", REF(train.solver.power)));
    f.push_back(int_field("train.max_iter", REF(train.solver.max_iter)));
    f.push_back(int_field("train.step_size", REF(train.solver.step_size)));
    f.push_back(double_field("train.step_gamma", REF(train.solver.step_gamma)));
    f.push_back(int_field("train.accum_steps", REF(train.solver.accum_steps)));
    f.push_back(double_field("train.weight_decay", REF(train.solver.weight_decay)));
    f.push_back(u64_field("train.seed", REF(train.solver.seed)));
    f.push_back(int_field("train.batch_size", REF(train.batch_size)));
    f.push_back(int_field("train.eval_interval", REF(train.eval_interval)));

    f.push_back(int_field("scene.image_size", REF(scene.image_size)));
    f.push_back(int_field("scene.num_cues", REF(scene.num_cues)));
    f.push_back(int_field("scene.num_shape_types", REF(scene.num_shape_types)));
    f.push_back(int_field("scene.min_shapes", REF(scene.min_shapes)));
    f.push_back(int_field("scene.max_shapes", REF(scene.max_shapes)));
    f.push_back(int_field("scene.min_shape_extent", REF(scene.min_shape_extent)));
    f.push_back(int_field("scene.max_shape_extent", REF(scene.max_shape_extent)));
    f.push_back(double_field("scene.cue_strength", REF(scene.cue_strength)));
    f.push_back(int_field("scene.noise", REF(scene.noise)));
    f.push_back(u64_field("scene.seed", REF(scene.seed)));
    f.push_back(int_field("scene.train_count", REF(data.train_count)));
    f.push_back(int_field("scene.val_count", REF(data.val_count)));

    f.push_back(int_field("probe.layer", REF(probe.layer)));
    f.push_back(int_field("probe.channel", REF(probe.channel)));
    f.push_back(int_field("probe.row", REF(probe.row)));
    f.push_back(int_field("probe.col", REF(probe.col)));
    f.push_back(int_field("probe.image_size", REF(probe.image_size)));
    f.push_back(int_field("probe.image_index", REF(probe.image_index)));
    f.push_back(int_field("probe.patch", REF(probe.probe.patch)));
    f.push_back(int_field("probe.stride", REF(probe.probe.stride)));
    f.push_back(int_field("probe.trials", REF(probe.probe.trials)));
    f.push_back(double_field("probe.threshold_fraction", REF(probe.probe.threshold_fraction)));
    f.push_back(double_field("probe.noise_lo", REF(probe.probe.noise_lo)));
    f.push_back(double_field("probe.noise_hi", REF(probe.probe.noise_hi)));
    f.push_back(u64_field("probe.seed", REF(probe.probe.seed)));
    f.push_back(bool_field("probe.crop_to_rf", REF(probe.probe.crop_to_rf)));

    f.push_back(list_field<int>("gradcheck.widths", REF(gradcheck.widths)));
    f.push_back(int_field("gradcheck.classes", REF(gradcheck.classes)));
    f.push_back(int_field("gradcheck.image_size", REF(gradcheck.image_size)));
    f.push_back(int_field("gradcheck.batch", REF(gradcheck.batch)));
    f.push_back(int_field("gradcheck.seeds", REF(gradcheck.seeds)));
    f.push_back(double_field("gradcheck.step", REF(gradcheck.step)));
    f.push_back(double_field("gradcheck.tol", REF(gradcheck.tol)));

    f.push_back({"output", [](const RunConfig& c) { return c.output.string(); },
                 [](RunConfig& c, const std::string& v) {
                   if (v.empty()) throw ConfigError("output: empty path");
                   c.output = v;
                 }});
    return f;
  }();
  return table;
}

#undef REF

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown key '" + key + "'");
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string format_trunk(const std::vector<LayerSpec>& trunk) {
  std::string out;
  for (const auto& l : trunk) {
    if (!out.empty()) out += ' ';
    if (l.kind == LayerKind::kRelu)
      out += "relu";
    else
      out += "conv:" + std::to_string(l.out_channels) + ':' + std::to_string(l.kernel) + ':' +
             std::to_string(l.stride) + ':' + std::to_string(l.pad);
  }
  return out;
}

std::vector<LayerSpec> parse_trunk(const std::string& text) {
  std::vector<LayerSpec> trunk;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    if (tok == "relu") {
      trunk.push_back(LayerSpec::relu());
      continue;
    }
    auto parts = split(tok, ':');
    if (parts.size() != 5 || parts[0] != "conv")
      throw ConfigError("net.trunk: bad layer token '" + tok + "'");
    trunk.push_back(LayerSpec::conv(parse_number<int>("net.trunk", parts[1]),
                                    parse_number<int>("net.trunk", parts[2]),
                                    parse_number<int>("net.trunk", parts[3]),
                                    parse_number<int>("net.trunk", parts[4])));
  }
  return trunk;
}

void RunConfig::validate() const {
  net.validate();
  train.solver.validate();
  scene.validate();
  probe.probe.validate();
  if (net.classes != scene.num_classes())
    throw ConfigError("net.classes is " + std::to_string(net.classes) + " but the scene has " +
                      std::to_string(scene.num_classes()) + " classes");
  if (net.in_channels != 3) throw ConfigError("net.in_channels must be 3 for RGB scenes");
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (train.eval_interval < 1) throw ConfigError("train.eval_interval must be >= 1");
  if (data.train_count < 0 || data.val_count < 0)
    throw ConfigError("scene.train_count and scene.val_count must be >= 0");
  if (probe.image_size < 1) throw ConfigError("probe.image_size must be >= 1");
  if (gradcheck.widths.empty() || gradcheck.classes < 2 || gradcheck.image_size < 1 ||
      gradcheck.batch < 1 || gradcheck.seeds < 1 || !(gradcheck.step > 0) ||
      !(gradcheck.tol > 0))
    throw ConfigError("gradcheck settings out of range");
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second)
      throw ConfigError("line " + std::to_string(lineno) + ": repeated key '" + key + "'");
    try {
      find_field(key).set(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " +
                        std::string(e.what()).substr(std::string("config error: ").size()));
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = dot == std::string::npos ? "" : f.key.substr(0, dot);
    if (s != section || out.empty()) {
      if (!out.empty()) out += '\n';
      out += "# " + (s.empty() ? std::string("paths") : s) + '\n';
      section = s;
    }
    out += f.key + " = " + f.get(config) + '\n';
  }
  return out;
}

std::string serialize_net(const NetSpec& net) {
  RunConfig config;
  config.net = net;
  std::string out;
  for (const auto& f : fields())
    if (f.key.starts_with("net.")) out += f.key + " = " + f.get(config) + '\n';
  return out;
}

NetSpec parse_net(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line.substr(0, line.find('#')));
    if (!line.empty() && !line.starts_with("net."))
      throw ConfigError("expected only net.* keys, got '" + line + "'");
  }
  return parse_config(text).net;
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' has no '='");
  find_field(trim(assignment.substr(0, eq))).set(config, trim(assignment.substr(eq + 1)));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace contextseg
