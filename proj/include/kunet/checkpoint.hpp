// SPDX-License-Identifier: Apache-2.0
//
// Plain-text checkpoints. Layout:
//
//   kunet-checkpoint 1
//   precision f64
//   plan.seq_len = 96            (model config lines, see config.hpp)
//   ...
//   param encoder.0.w 96 v0 v1 ...
//   end
//
// Values use the shortest round-trip form, so save/load is bit exact.
#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "kunet/config.hpp"
#include "kunet/errors.hpp"
#include "kunet/text.hpp"
#include "kunet/unet.hpp"

namespace kunet {

template <typename T>
constexpr const char* precision_name() {
  return sizeof(T) == 8 ? "f64" : "f32";
}

template <typename T>
void save_checkpoint(std::ostream& os, const KUNet<T>& model, const RunConfig& cfg) {
  os << "kunet-checkpoint 1\nprecision " << precision_name<T>() << '\n';
  RunConfig model_cfg = cfg;
  model_cfg.model = model.config();
  model_cfg.horizon_len = 0;
  os << model_config_text(model_cfg);
  for (const auto& p : model.parameters()) {
    os << "param " << p.name << ' ' << p.tensor.numel();
    for (auto v : p.tensor.data()) os << ' ' << format_real(v);
    os << '\n';
  }
  os << "end\n";
}

template <typename T>
void save_checkpoint(const std::string& path, const KUNet<T>& model, const RunConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write checkpoint '" + path + "'");
  save_checkpoint(os, model, cfg);
}

struct CheckpointHeader {
  std::string precision;
  RunConfig config;
  std::string first_param;  // first line after the config block
};

/// Reads the header and model config; stops at the first param (or end) line.
inline CheckpointHeader read_checkpoint_header(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "kunet-checkpoint 1") throw DataError("checkpoint: bad magic line");
  if (!std::getline(in, line) || !line.starts_with("precision ")) throw DataError("checkpoint: missing precision");
  CheckpointHeader h{line.substr(10), default_run_config(), {}};
  while (std::getline(in, line)) {
    if (line.starts_with("param ") || line == "end") {
      h.first_param = line;
      return h;
    }
    try {
      apply_override(h.config, line);
    } catch (const ConfigError& e) {
      throw DataError(std::string("checkpoint: ") + e.what());
    }
  }
  throw DataError("checkpoint: truncated after the config block");
}

/// Rebuilds a model and loads its parameters. Names and sizes must match the
/// registry of the model described by the stored config.
template <typename T>
KUNet<T> load_checkpoint(std::istream& in, RunConfig* config_out = nullptr) {
  auto header = read_checkpoint_header(in);
  if (header.precision != precision_name<T>()) {
    throw DataError("checkpoint: stored precision " + header.precision + " but " + precision_name<T>() +
                    " was requested");
  }
  KUNet<T> model(resolve_model(header.config), 0);
  std::string line = header.first_param;
  bool first = true;
  for (const auto& p : model.parameters()) {
    if (!first && !std::getline(in, line)) throw DataError("checkpoint: truncated before parameter " + p.name);
    first = false;
    std::istringstream ls(line);
    std::string tag, name;
    std::size_t n = 0;
    ls >> tag >> name >> n;
    if (tag != "param" || name != p.name || n != p.tensor.numel()) {
      throw DataError("checkpoint: expected parameter " + p.name + " with " + std::to_string(p.tensor.numel()) +
                      " values, found '" + name + "' with " + std::to_string(n));
    }
    auto t = p.tensor;
    auto values = t.data();
    std::string tok;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(ls >> tok) || !parse_real(tok, values[i])) {
        throw DataError("checkpoint: bad value " + std::to_string(i) + " of parameter " + p.name);
      }
    }
  }
  if (!first && !std::getline(in, line)) line.clear();
  if (line != "end") throw DataError("checkpoint: missing end marker");
  if (config_out) *config_out = header.config;
  return model;
}

template <typename T>
KUNet<T> load_checkpoint(const std::string& path, RunConfig* config_out = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  return load_checkpoint<T>(in, config_out);
}

}  // namespace kunet
