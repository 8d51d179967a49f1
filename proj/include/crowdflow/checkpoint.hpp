#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "crowdflow/convlstm.hpp"
#include "crowdflow/error.hpp"
#include "crowdflow/optim.hpp"
#include "crowdflow/tensor_io.hpp"
#include "crowdflow/version.hpp"

namespace crowdflow {

// Checkpoint file:
//   magic "CFCK" | u32 version | u32 config length + key=value text
//   | u32 record count | records of (u32 name length, name, CFTN tensor)
//
// Records hold the model parameters under their canonical names and, when
// training state is saved, the optimizer moments as adam.m.<name> /
// adam.v.<name> plus adam.step and the hyperparameters.

inline std::string network_config_text(const NetworkConfig& cfg) {
  std::ostringstream os;
  os << "layers = ";
  for (std::size_t i = 0; i < cfg.layer_channels.size(); ++i)
    os << (i ? "," : "") << cfg.layer_channels[i];
  os << "\nkernel = " << cfg.kernel_size;
  os << "\ndirection = " << direction_name(cfg.direction);
  os << "\ninput_channels = " << cfg.input_channels;
  os << "\nheight = " << cfg.height;
  os << "\nwidth = " << cfg.width << "\n";
  return os.str();
}

inline NetworkConfig network_config_from_text(const std::string& text) {
  NetworkConfig cfg;
  cfg.layer_channels.clear();
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "layers") {
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) cfg.layer_channels.push_back(std::stoi(item));
    } else if (key == "kernel") cfg.kernel_size = std::stoi(value);
    else if (key == "direction") cfg.direction = direction_from_name(value);
    else if (key == "input_channels") cfg.input_channels = std::stoi(value);
    else if (key == "height") cfg.height = std::stoi(value);
    else if (key == "width") cfg.width = std::stoi(value);
    else throw IoError("checkpoint config: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

namespace detail {

inline void write_record_name(std::ostream& os, const std::string& name) {
  write_u32le(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
}

inline std::string read_record_name(std::istream& is) {
  const std::uint32_t len = read_u32le(is);
  if (len > 4096) throw IoError("checkpoint: implausible record name length");
  std::string name(len, '\0');
  is.read(name.data(), len);
  if (!is) throw IoError("checkpoint: truncated record name");
  return name;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, NetworkParams<S>& net,
                     const AdamState<S>* adam = nullptr) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  os.write("CFCK", 4);
  detail::write_u32le(os, static_cast<std::uint32_t>(kCheckpointFormatVersion));
  const std::string cfg = network_config_text(net.config);
  detail::write_u32le(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

  auto named = named_parameters(net);
  std::uint32_t records = static_cast<std::uint32_t>(named.size());
  if (adam) records += static_cast<std::uint32_t>(2 * named.size()) + 5;
  detail::write_u32le(os, records);

  for (const auto& p : named) {
    detail::write_record_name(os, p.name);
    write_tensor(os, *p.tensor);
  }
  if (adam) {
    for (std::size_t i = 0; i < named.size(); ++i) {
      detail::write_record_name(os, "adam.m." + named[i].name);
      write_tensor(os, adam->m[i]);
      detail::write_record_name(os, "adam.v." + named[i].name);
      write_tensor(os, adam->v[i]);
    }
    auto scalar = [&](const std::string& name, double v) {
      detail::write_record_name(os, name);
      write_tensor(os, Tensor<double>::scalar(v));
    };
    scalar("adam.step", static_cast<double>(adam->step));
    scalar("adam.lr", adam->options.lr);
    scalar("adam.beta1", adam->options.beta1);
    scalar("adam.beta2", adam->options.beta2);
    scalar("adam.epsilon", adam->options.epsilon);
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

template <typename S>
struct Checkpoint {
  NetworkParams<S> net;
  std::optional<AdamState<S>> adam;
};

template <typename S>
Checkpoint<S> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CFCK", 4) != 0) throw IoError(path + ": not a checkpoint file");
  const std::uint32_t version = detail::read_u32le(is);
  if (version != static_cast<std::uint32_t>(kCheckpointFormatVersion))
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t cfg_len = detail::read_u32le(is);
  std::string cfg_text(cfg_len, '\0');
  is.read(cfg_text.data(), cfg_len);
  if (!is) throw IoError(path + ": truncated config block");

  Checkpoint<S> ck;
  ck.net.config = network_config_from_text(cfg_text);
  // allocate parameter shapes, then overwrite from records
  ck.net = init_params<S>(ck.net.config, 0);

  const std::uint32_t records = detail::read_u32le(is);
  std::map<std::string, Tensor<S>> loose;
  auto named = named_parameters(ck.net);
  std::map<std::string, Tensor<S>*> by_name;
  std::map<std::string, bool> seen;
  for (auto& p : named) by_name[p.name] = p.tensor;

  for (std::uint32_t r = 0; r < records; ++r) {
    const std::string name = detail::read_record_name(is);
    Tensor<S> t = read_tensor<S>(is);
    auto it = by_name.find(name);
    if (it != by_name.end()) {
      if (!it->second->same_shape(t))
        throw IoError(path + ": shape mismatch for '" + name + "'");
      *it->second = std::move(t);
      seen[name] = true;
    } else {
      loose.emplace(name, std::move(t));
    }
  }
  for (const auto& p : named)
    if (!seen.count(p.name))
      throw IoError(path + ": missing parameter record '" + p.name + "'");

  if (loose.count("adam.step")) {
    AdamState<S> adam;
    adam.step = static_cast<std::int64_t>(loose.at("adam.step").value());
    adam.options.lr = static_cast<double>(loose.at("adam.lr").value());
    adam.options.beta1 = static_cast<double>(loose.at("adam.beta1").value());
    adam.options.beta2 = static_cast<double>(loose.at("adam.beta2").value());
    adam.options.epsilon = static_cast<double>(loose.at("adam.epsilon").value());
    for (const auto& p : named) {
      auto m_it = loose.find("adam.m." + p.name);
      auto v_it = loose.find("adam.v." + p.name);
      if (m_it == loose.end() || v_it == loose.end())
        throw IoError(path + ": incomplete optimizer state for '" + p.name + "'");
      adam.m.push_back(std::move(m_it->second));
      adam.v.push_back(std::move(v_it->second));
    }
    ck.adam = std::move(adam);
  }
  return ck;
}

}  // namespace crowdflow
