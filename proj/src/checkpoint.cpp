#include "nvae/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "nvae/error.hpp"
#include "nvae/version.hpp"

namespace nvae {

namespace fs = std::filesystem;

void CheckpointFile::set(std::string key, std::string value) {
  if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos)
    throw std::invalid_argument("checkpoint metadata may not contain '=' in keys or newlines: " + key);
  for (auto& [k, v] : metadata)
    if (k == key) {
      v = std::move(value);
      return;
    }
  metadata.emplace_back(std::move(key), std::move(value));
}

std::optional<std::string> CheckpointFile::get(std::string_view key) const {
  for (const auto& [k, v] : metadata)
    if (k == key) return v;
  return std::nullopt;
}

std::string CheckpointFile::require(std::string_view key) const {
  auto v = get(key);
  if (!v) throw FormatError("checkpoint is missing metadata key '" + std::string(key) + "'");
  return *v;
}

const Tensor* CheckpointFile::tensor(std::string_view name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void write_checkpoint_file(const fs::path& path, const CheckpointFile& file) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << kCheckpointMagic << '\n';
    out << "meta " << file.metadata.size() << '\n';
    for (const auto& [k, v] : file.metadata) out << k << '=' << v << '\n';
    out << "tensors " << file.tensors.size() << '\n';
    std::vector<char> bytes;
    for (const auto& [name, t] : file.tensors) {
      if (name.empty() || name.find_first_of(" \n") != std::string::npos)
        throw std::invalid_argument("tensor name must be non-empty without spaces: '" + name + "'");
      out << name << ' ' << t.rank();
      for (auto d : t.shape()) out << ' ' << d;
      out << '\n';
      bytes.resize(t.size() * 8);
      for (std::size_t i = 0; i < t.size(); ++i) {
        const auto bits = std::bit_cast<std::uint64_t>(t[i]);
        for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
      }
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      out << '\n';
    }
    out << "end\n";
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

namespace {

std::string read_line(std::istream& in, const fs::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": truncated checkpoint");
  return line;
}

std::size_t parse_count(const std::string& line, std::string_view prefix, const fs::path& path) {
  if (line.rfind(prefix, 0) != 0) throw FormatError(path.string() + ": expected '" + std::string(prefix) + "'");
  std::size_t n = 0;
  const char* first = line.data() + prefix.size();
  auto [p, ec] = std::from_chars(first, line.data() + line.size(), n);
  if (ec != std::errc() || p != line.data() + line.size())
    throw FormatError(path.string() + ": bad count in '" + line + "'");
  return n;
}

}  // namespace

CheckpointFile read_checkpoint_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  if (read_line(in, path) != kCheckpointMagic) throw FormatError(path.string() + ": not an nvae checkpoint");
  CheckpointFile file;
  const std::size_t nmeta = parse_count(read_line(in, path), "meta ", path);
  for (std::size_t i = 0; i < nmeta; ++i) {
    std::string line = read_line(in, path);
    auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(path.string() + ": bad metadata line '" + line + "'");
    file.metadata.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  const std::size_t ntensors = parse_count(read_line(in, path), "tensors ", path);
  std::vector<char> bytes;
  for (std::size_t i = 0; i < ntensors; ++i) {
    std::istringstream header(read_line(in, path));
    std::string name;
    std::size_t rank = 0;
    if (!(header >> name >> rank) || rank == 0) throw FormatError(path.string() + ": bad tensor header");
    Shape shape(rank);
    for (auto& d : shape)
      if (!(header >> d) || d == 0) throw FormatError(path.string() + ": bad shape for tensor " + name);
    Tensor t(shape);
    bytes.resize(t.size() * 8);
    if (!in.read(bytes.data(), static_cast<std::streamsize>(bytes.size())))
      throw FormatError(path.string() + ": truncated data for tensor " + name);
    for (std::size_t k = 0; k < t.size(); ++k) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= std::uint64_t(static_cast<unsigned char>(bytes[k * 8 + b])) << (8 * b);
      t[k] = std::bit_cast<double>(bits);
    }
    if (in.get() != '\n') throw FormatError(path.string() + ": corrupt record after tensor " + name);
    file.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (read_line(in, path) != "end") throw FormatError(path.string() + ": missing end marker");
  return file;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw FormatError("bad number in checkpoint: " + s);
  return v;
}

std::size_t parse_size(const std::string& s) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw FormatError("bad integer in checkpoint: " + s);
  return v;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto comma = s.find(',', start);
    if (comma == std::string::npos) comma = s.size();
    out.push_back(parse_size(s.substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

}  // namespace

void store_model(CheckpointFile& file, const NvaeModel& model) {
  const auto& c = model.config();
  file.set("library_version", std::string(kLibraryVersion));
  file.set("input_dims", std::to_string(c.input_dims));
  file.set("classes", std::to_string(c.layout.classes));
  file.set("class_dims", std::to_string(c.layout.class_dims));
  file.set("shared_dims", std::to_string(c.layout.shared_dims));
  file.set("encoder_hidden", join(c.encoder_hidden));
  file.set("decoder_hidden", join(c.decoder_hidden));
  file.set("alpha_p", format_double(c.alpha_p));
  file.set("alpha_q", format_double(c.alpha_q));
  file.set("concentration_floor", format_double(c.concentration_floor));
  file.set("class_bias", c.class_bias ? "true" : "false");
  for (const auto& e : model.encoder().entries()) file.tensors.emplace_back("encoder/" + e.name, e.value);
  for (const auto& e : model.decoder().entries()) file.tensors.emplace_back("decoder/" + e.name, e.value);
}

NvaeModel restore_model(const CheckpointFile& file) {
  const std::string version = file.require("library_version");
  if (version != kLibraryVersion)
    throw VersionMismatch("checkpoint was written by library version " + version + ", this is " +
                          std::string(kLibraryVersion));
  ModelConfig c;
  c.input_dims = parse_size(file.require("input_dims"));
  c.layout.classes = parse_size(file.require("classes"));
  c.layout.class_dims = parse_size(file.require("class_dims"));
  c.layout.shared_dims = parse_size(file.require("shared_dims"));
  c.encoder_hidden = split_sizes(file.require("encoder_hidden"));
  c.decoder_hidden = split_sizes(file.require("decoder_hidden"));
  c.alpha_p = parse_double(file.require("alpha_p"));
  c.alpha_q = parse_double(file.require("alpha_q"));
  c.concentration_floor = parse_double(file.require("concentration_floor"));
  c.class_bias = file.require("class_bias") == "true";

  NvaeModel model(c, 0);
  auto load = [&](ParamStore& store, const char* prefix) {
    for (auto& e : store.entries()) {
      const Tensor* t = file.tensor(std::string(prefix) + e.name);
      if (!t) throw FormatError(std::string("checkpoint is missing tensor ") + prefix + e.name);
      store.set_value(e.name, *t);
    }
  };
  load(model.encoder(), "encoder/");
  load(model.decoder(), "decoder/");
  return model;
}

void save_model(const fs::path& path, const NvaeModel& model) {
  CheckpointFile file;
  store_model(file, model);
  write_checkpoint_file(path, file);
}

NvaeModel load_model(const fs::path& path) { return restore_model(read_checkpoint_file(path)); }

}  // namespace nvae
