#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mvfusion/errors.hpp"
#include "mvfusion/model.hpp"
#include "mvfusion/tensor.hpp"

namespace mvf {

// Checkpoint layout: the 4-byte magic "MVF1", then records back to back.
// Each record is a name line, a dims line ("ndims d0 d1 ..."), and the
// values as little-endian 8-byte doubles.  Model hyperparameters travel as
// meta/* records so a file alone is enough to rebuild the network.

namespace detail {

inline void put_f64(std::string& out, double x) {
  const auto u = std::bit_cast<std::uint64_t>(x);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

inline double get_f64(const std::string& in, std::size_t off) {
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i)
    u |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return std::bit_cast<double>(u);
}

inline void append_record(std::string& out, const std::string& name, const Tensor& t) {
  if (name.empty() || name.find('\n') != std::string::npos)
    throw ContractError("record name must be a single nonempty line");
  out += name;
  out += '\n';
  out += std::to_string(t.rank());
  for (std::size_t d : t.shape) out += ' ' + std::to_string(d);
  out += '\n';
  for (double x : t.v) put_f64(out, x);
}

inline void atomic_write_bytes(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw ConfigError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.good()) throw ConfigError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw ConfigError("rename " + tmp + " -> " + path + ": " + ec.message());
}

}  // namespace detail

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline std::string encode_records(const NamedTensors& records) {
  std::string out = "MVF1";
  for (const auto& [name, t] : records) detail::append_record(out, name, t);
  return out;
}

inline NamedTensors decode_records(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "MVF1") != 0)
    throw ConfigError(origin + ": not a checkpoint (bad magic)");
  NamedTensors records;
  std::size_t pos = 4;
  while (pos < bytes.size()) {
    const std::size_t name_end = bytes.find('\n', pos);
    if (name_end == std::string::npos) throw ConfigError(origin + ": truncated record name");
    std::string name = bytes.substr(pos, name_end - pos);
    pos = name_end + 1;

    const std::size_t dims_end = bytes.find('\n', pos);
    if (dims_end == std::string::npos) throw ConfigError(origin + ": truncated dims for " + name);
    std::istringstream dims(bytes.substr(pos, dims_end - pos));
    pos = dims_end + 1;
    std::size_t rank = 0;
    if (!(dims >> rank) || rank > 2) throw ConfigError(origin + ": bad rank for " + name);
    Tensor t;
    std::size_t numel = 1;
    for (std::size_t k = 0; k < rank; ++k) {
      std::size_t d = 0;
      if (!(dims >> d)) throw ConfigError(origin + ": bad dims for " + name);
      t.shape.push_back(d);
      numel *= d;
    }
    std::string leftover;
    if (dims >> leftover) throw ConfigError(origin + ": trailing dims for " + name);
    if (rank == 0) numel = 1;

    if (pos + 8 * numel > bytes.size()) throw ConfigError(origin + ": truncated payload for " + name);
    t.v.resize(numel);
    for (std::size_t k = 0; k < numel; ++k) t.v[k] = detail::get_f64(bytes, pos + 8 * k);
    pos += 8 * numel;
    records.emplace_back(std::move(name), std::move(t));
  }
  return records;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

inline NamedTensors model_records(const Model& m) {
  NamedTensors rec;
  auto scalar = [](double x) { return Tensor::scalar(x); };
  rec.emplace_back("meta/kind", scalar(static_cast<double>(static_cast<int>(m.cfg.kind))));
  rec.emplace_back("meta/num_classes", scalar(static_cast<double>(m.cfg.num_classes)));
  rec.emplace_back("meta/latent_dim", scalar(static_cast<double>(m.cfg.latent_dim)));
  rec.emplace_back("meta/missing_view", scalar(static_cast<double>(m.cfg.missing_view)));
  rec.emplace_back("meta/variance_floor", scalar(m.cfg.variance_floor));
  std::vector<double> vd;
  for (std::size_t d : m.cfg.view_dims) vd.push_back(static_cast<double>(d));
  rec.emplace_back("meta/view_dims", Tensor::vec(vd));
  std::vector<double> hd;
  for (std::size_t h : m.cfg.hidden) hd.push_back(static_cast<double>(h));
  rec.emplace_back("meta/hidden", Tensor::vec(hd));
  rec.emplace_back("meta/prior_y", Tensor::vec(m.cfg.prior_y));  // empty means uniform
  for (const auto& name : m.params.names()) rec.emplace_back(name, m.params.at(name));
  return rec;
}

inline void save_checkpoint(const std::string& path, const Model& m) {
  detail::atomic_write_bytes(path, encode_records(model_records(m)));
}

inline Model load_checkpoint(const std::string& path) {
  NamedTensors records = decode_records(read_file_bytes(path), path);
  std::map<std::string, Tensor> by_name;
  std::vector<std::string> order;
  for (auto& [name, t] : records) {
    if (by_name.count(name)) throw ConfigError(path + ": duplicate record " + name);
    by_name.emplace(name, std::move(t));
    order.push_back(name);
  }

  auto meta = [&](const std::string& key) -> const Tensor& {
    auto it = by_name.find("meta/" + key);
    if (it == by_name.end()) throw ConfigError(path + ": missing meta/" + key);
    return it->second;
  };
  auto meta_index = [&](const std::string& key) {
    const Tensor& t = meta(key);
    if (t.numel() != 1) throw ConfigError(path + ": meta/" + key + " must be scalar");
    const double x = t.v[0];
    if (x < 0 || x != std::floor(x)) throw ConfigError(path + ": meta/" + key + " must be a whole number");
    return static_cast<std::size_t>(x);
  };

  ModelConfig cfg;
  const std::size_t kind_idx = meta_index("kind");
  if (kind_idx > 2) throw ConfigError(path + ": unknown model kind");
  cfg.kind = static_cast<ModelKind>(kind_idx);
  cfg.num_classes = meta_index("num_classes");
  cfg.latent_dim = meta_index("latent_dim");
  cfg.missing_view = meta_index("missing_view");
  cfg.variance_floor = meta("variance_floor").v[0];
  cfg.view_dims.clear();
  for (double d : meta("view_dims").v) cfg.view_dims.push_back(static_cast<std::size_t>(d));
  cfg.hidden.clear();
  for (double h : meta("hidden").v) cfg.hidden.push_back(static_cast<std::size_t>(h));
  cfg.prior_y = meta("prior_y").v;

  Model m = build_model(cfg, 0);
  for (const auto& name : m.params.names()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError(path + ": missing parameter record " + name);
    if (!it->second.same_shape(m.params.at(name)))
      throw ConfigError(path + ": shape mismatch for " + name + " (" + it->second.shape_str() + ")");
    m.params.at(name) = it->second;
  }
  // scaler/* records carry feature scaling for the CLI and are not params
  for (const auto& name : order)
    if (name.rfind("meta/", 0) != 0 && name.rfind("scaler/", 0) != 0 && !m.params.has(name))
      throw ConfigError(path + ": unknown parameter record " + name);
  m.params.ensure_finite("checkpoint");
  return m;
}

}  // namespace mvf
