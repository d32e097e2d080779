#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "sdg/model.hpp"
#include "sdg/train.hpp"

namespace sdg {

// Everything a run needs, read from flat `key = value` text.
struct RunConfig {
  SDGConfig model;
  TrainConfig train;
  double train_frac = 0.70;
  double val_frac = 0.15;
  std::string undirected_history = "auto";  // auto | true | false
  std::vector<std::size_t> hr_k = {1, 5, 10, 20};
  std::string data_dir;
  std::string out_dir;

  // auto resolves to !bipartite.
  bool resolve_undirected(bool bipartite) const;
  void validate() const;
};

// Lines are `key = value`; `#` starts a comment; blank lines are skipped.
// Unknown keys and malformed values raise FormatError with the line number.
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});
// `key=value` override from the command line.
void apply_override(RunConfig& cfg, std::string_view assignment);
void set_key(RunConfig& cfg, std::string_view key, std::string_view value);

// Every key in a fixed order; parse_run_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& cfg);
std::vector<std::string> known_keys();

// Model-defining keys plus num_nodes, used for checkpoint compatibility.
std::string model_config_text(const SDGConfig& cfg, std::size_t num_nodes);
SDGConfig parse_model_config_text(std::string_view text, std::size_t* num_nodes);
std::uint64_t fnv1a(std::string_view bytes);
std::uint64_t config_hash(const SDGConfig& cfg, std::size_t num_nodes);
std::string hex64(std::uint64_t v);

}  // namespace sdg
