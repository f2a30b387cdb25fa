#include "nvae/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "nvae/error.hpp"

namespace nvae {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double to_double(const std::string& s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size()) throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size())
    throw ConfigError("expected a non-negative integer, got '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

std::vector<std::size_t> to_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& item : split(s, ',')) out.push_back(to_u64(item));
  return out;
}

std::vector<double> to_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split(s, ',')) out.push_back(to_double(item));
  return out;
}

FactorSpec factor_from(const std::vector<std::string>& parts, std::size_t first) {
  FactorSpec f;
  f.kind = parts[first];
  f.low = to_double(parts[first + 1]);
  f.high = to_double(parts[first + 2]);
  return f;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, std::map<std::string, Setter>>& setters() {
  static const std::map<std::string, std::map<std::string, Setter>> table = {
      {"data",
       {
           {"source",
            [](RunConfig& c, const std::string& v) {
              if (v != "idx" && v != "synthetic") throw ConfigError("data source must be idx or synthetic");
              c.data.source = v;
            }},
           {"train_images", [](RunConfig& c, const std::string& v) { c.data.train_images = v; }},
           {"train_labels", [](RunConfig& c, const std::string& v) { c.data.train_labels = v; }},
           {"test_images", [](RunConfig& c, const std::string& v) { c.data.test_images = v; }},
           {"test_labels", [](RunConfig& c, const std::string& v) { c.data.test_labels = v; }},
           {"classes", [](RunConfig& c, const std::string& v) { c.data.classes = to_u64(v); }},
           {"test_fraction", [](RunConfig& c, const std::string& v) { c.data.test_fraction = to_double(v); }},
           {"split_seed", [](RunConfig& c, const std::string& v) { c.data.split_seed = to_u64(v); }},
       }},
      {"synthetic",
       {
           {"classes", [](RunConfig& c, const std::string& v) { c.synthetic.classes = to_u64(v); }},
           {"side", [](RunConfig& c, const std::string& v) { c.synthetic.side = to_u64(v); }},
           {"count", [](RunConfig& c, const std::string& v) { c.synthetic.count = to_u64(v); }},
           {"seed", [](RunConfig& c, const std::string& v) { c.synthetic.seed = to_u64(v); }},
           {"shared", [](RunConfig& c, const std::string& v) { c.synthetic.shared = parse_factor_list(v); }},
           {"exclusive", [](RunConfig& c, const std::string& v) { c.synthetic.exclusive = parse_exclusive_list(v); }},
       }},
      {"model",
       {
           {"class_dims", [](RunConfig& c, const std::string& v) { c.model.layout.class_dims = to_u64(v); }},
           {"shared_dims", [](RunConfig& c, const std::string& v) { c.model.layout.shared_dims = to_u64(v); }},
           {"encoder_hidden", [](RunConfig& c, const std::string& v) { c.model.encoder_hidden = to_sizes(v); }},
           {"decoder_hidden", [](RunConfig& c, const std::string& v) { c.model.decoder_hidden = to_sizes(v); }},
           {"alpha_p", [](RunConfig& c, const std::string& v) { c.model.alpha_p = to_double(v); }},
           {"alpha_q", [](RunConfig& c, const std::string& v) { c.model.alpha_q = to_double(v); }},
           {"concentration_floor",
            [](RunConfig& c, const std::string& v) { c.model.concentration_floor = to_double(v); }},
           {"class_bias", [](RunConfig& c, const std::string& v) { c.model.class_bias = to_bool(v); }},
       }},
      {"train",
       {
           {"objective", [](RunConfig& c, const std::string& v) { c.train.objective = parse_objective_kind(v); }},
           {"beta_c", [](RunConfig& c, const std::string& v) { c.train.beta_c = to_double(v); }},
           {"beta_s", [](RunConfig& c, const std::string& v) { c.train.beta_s = to_double(v); }},
           {"lr", [](RunConfig& c, const std::string& v) { c.train.adam.lr = to_double(v); }},
           {"beta1", [](RunConfig& c, const std::string& v) { c.train.adam.beta1 = to_double(v); }},
           {"beta2", [](RunConfig& c, const std::string& v) { c.train.adam.beta2 = to_double(v); }},
           {"eps", [](RunConfig& c, const std::string& v) { c.train.adam.eps = to_double(v); }},
           {"batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = to_u64(v); }},
           {"epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = to_u64(v); }},
           {"seed", [](RunConfig& c, const std::string& v) { c.train.seed = to_u64(v); }},
           {"samples", [](RunConfig& c, const std::string& v) { c.train.samples = to_u64(v); }},
       }},
      {"augment",
       {
           {"p_sub", [](RunConfig& c, const std::string& v) { c.augment.p_sub = to_double(v); }},
           {"sigma", [](RunConfig& c, const std::string& v) { c.augment_sigmas = to_doubles(v); }},
           {"repetitions", [](RunConfig& c, const std::string& v) { c.augment.repetitions = to_u64(v); }},
           {"seed", [](RunConfig& c, const std::string& v) { c.augment.seed = to_u64(v); }},
           {"probe_hidden", [](RunConfig& c, const std::string& v) { c.augment.probe.hidden = to_u64(v); }},
           {"probe_epochs", [](RunConfig& c, const std::string& v) { c.augment.probe.epochs = to_u64(v); }},
           {"probe_batch", [](RunConfig& c, const std::string& v) { c.augment.probe.batch_size = to_u64(v); }},
           {"probe_lr", [](RunConfig& c, const std::string& v) { c.augment.probe.adam.lr = to_double(v); }},
       }},
  };
  return table;
}

}  // namespace

std::vector<FactorSpec> parse_factor_list(const std::string& value) {
  std::vector<FactorSpec> out;
  if (trim(value).empty()) return out;
  for (const auto& item : split(value, ',')) {
    auto parts = split(item, ':');
    if (parts.size() != 3) throw ConfigError("factor '" + item + "' is not kind:low:high");
    out.push_back(factor_from(parts, 0));
  }
  return out;
}

std::vector<ExclusiveFactorSpec> parse_exclusive_list(const std::string& value) {
  std::vector<ExclusiveFactorSpec> out;
  if (trim(value).empty()) return out;
  for (const auto& item : split(value, ',')) {
    auto parts = split(item, ':');
    if (parts.size() != 4) throw ConfigError("exclusive factor '" + item + "' is not class:kind:low:high");
    out.push_back({to_u64(parts[0]), factor_from(parts, 1)});
  }
  return out;
}

RunConfig parse_config(const std::string& text, const fs::path& base_dir) {
  RunConfig c;
  std::istringstream in(text);
  std::string raw, section;
  std::set<std::pair<std::string, std::string>> seen;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (auto hash = line.find_first_of("#;"); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("unterminated section header '" + line + "'", line_no);
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!setters().contains(section)) throw ConfigError("unknown section [" + section + "]", line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value, got '" + line + "'", line_no);
    if (section.empty()) throw ConfigError("key outside of any [section]", line_no);
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    const auto& keys = setters().at(section);
    auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError("unknown key '" + key + "' in [" + section + "]", line_no);
    if (!seen.emplace(section, key).second)
      throw ConfigError("duplicate key '" + key + "' in [" + section + "]", line_no);
    try {
      it->second(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " (key '" + key + "')", line_no);
    }
    c.entries.emplace_back(section, key, value);
  }

  for (fs::path* p : {&c.data.train_images, &c.data.train_labels, &c.data.test_images, &c.data.test_labels})
    if (!p->empty() && p->is_relative() && !base_dir.empty()) *p = base_dir / *p;

  if (c.data.source == "idx") {
    if (c.data.train_images.empty() || c.data.train_labels.empty() || c.data.test_images.empty() ||
        c.data.test_labels.empty())
      throw ConfigError("[data] source = idx needs train_images, train_labels, test_images and test_labels");
  } else {
    c.synthetic.validate();
    if (!(c.data.test_fraction > 0.0 && c.data.test_fraction < 1.0))
      throw ConfigError("[data] test_fraction must lie in (0, 1)");
  }
  c.train.validate();
  if (c.augment_sigmas.empty()) throw ConfigError("[augment] sigma needs at least one value");
  for (double s : c.augment_sigmas)
    if (!(s > 0.0)) throw ConfigError("[augment] sigma values must be > 0");
  if (!(c.augment.p_sub >= 0.0 && c.augment.p_sub <= 1.0)) throw ConfigError("[augment] p_sub must lie in [0, 1]");
  if (c.augment.repetitions < 1) throw ConfigError("[augment] repetitions must be >= 1");
  return c;
}

RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw MissingInput(path.string());
  std::ifstream in(path);
  if (!in) throw MissingInput(path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), path.parent_path());
  } catch (const ConfigError& e) {
    ConfigError located(path.string() + ": " + e.what());
    located.line = e.line;
    throw located;
  }
}

LoadedData load_data(const DataConfig& d, const SyntheticSpec& synthetic) {
  LoadedData out;
  if (d.source == "synthetic") {
    auto [train, test] = train_test_split(make_synthetic(synthetic), d.test_fraction, d.split_seed);
    out.train = std::move(train);
    out.test = std::move(test);
    return out;
  }
  for (const auto& p : {d.train_images, d.train_labels, d.test_images, d.test_labels})
    if (!fs::exists(p)) throw MissingInput(p.string());
  out.train = load_idx(d.train_images, d.train_labels, d.classes);
  out.test = load_idx(d.test_images, d.test_labels, d.classes ? d.classes : out.train.classes);
  if (out.test.dims() != out.train.dims()) throw FormatError("train and test images differ in size");
  out.files = {d.train_images, d.train_labels, d.test_images, d.test_labels};
  return out;
}

ModelConfig model_for(const RunConfig& c, const Dataset& data) {
  ModelConfig m = c.model;
  m.input_dims = data.dims();
  m.layout.classes = data.classes;
  m.validate();
  return m;
}

}  // namespace nvae
