#include "sdg/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "sdg/errors.hpp"

namespace sdg {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

std::size_t to_size(std::string_view v) {
  std::size_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw std::invalid_argument("expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

std::uint64_t to_u64(std::string_view v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw std::invalid_argument("expected an unsigned integer, got '" + std::string(v) + "'");
  return out;
}

double to_double(std::string_view v) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw std::invalid_argument("expected a number, got '" + std::string(v) + "'");
  return out;
}

bool to_bool(std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true or false, got '" + std::string(v) + "'");
}

const char* fmt_bool(bool b) { return b ? "true" : "false"; }

struct Field {
  const char* name;
  bool model;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(key, member, is_model)                                                \
  Field{key, is_model, [](RunConfig& c, std::string_view v) { c.member = to_size(v); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }}
#define DOUBLE_FIELD(key, member, is_model)                                                \
  Field{key, is_model, [](RunConfig& c, std::string_view v) { c.member = to_double(v); }, \
        [](const RunConfig& c) { return fmt_double(c.member); }}
#define BOOL_FIELD(key, member, is_model)                                                \
  Field{key, is_model, [](RunConfig& c, std::string_view v) { c.member = to_bool(v); }, \
        [](const RunConfig& c) { return std::string(fmt_bool(c.member)); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      SIZE_FIELD("history_length", model.history_length, true),
      SIZE_FIELD("dim", model.dim, true),
      SIZE_FIELD("diffusion_steps", model.diffusion_steps, true),
      SIZE_FIELD("layers", model.layers, true),
      SIZE_FIELD("heads", model.heads, true),
      SIZE_FIELD("ffn_dim", model.ffn_dim, true),
      DOUBLE_FIELD("dropout", model.dropout, true),
      Field{"schedule", true,
            [](RunConfig& c, std::string_view v) { c.model.schedule = parse_schedule_kind(v); },
            [](const RunConfig& c) { return to_string(c.model.schedule); }},
      DOUBLE_FIELD("lambda_diff", model.lambda_diff, true),
      DOUBLE_FIELD("lambda_inter", model.lambda_inter, true),
      Field{"task_loss", true,
            [](RunConfig& c, std::string_view v) { c.model.task_loss = parse_task_loss(v); },
            [](const RunConfig& c) { return to_string(c.model.task_loss); }},
      Field{"recon_loss", true,
            [](RunConfig& c, std::string_view v) { c.model.recon_loss = parse_recon_loss(v); },
            [](const RunConfig& c) { return to_string(c.model.recon_loss); }},
      BOOL_FIELD("detach_target", model.detach_target, true),
      BOOL_FIELD("sequence_diffusion", model.sequence_diffusion, true),
      BOOL_FIELD("use_diffusion", model.use_diffusion, true),
      Field{"denoiser", true,
            [](RunConfig& c, std::string_view v) { c.model.denoiser = parse_denoiser_kind(v); },
            [](const RunConfig& c) { return to_string(c.model.denoiser); }},
      BOOL_FIELD("repeat_time_encoding", model.repeat_time_encoding, true),

      SIZE_FIELD("batch_size", train.batch_size, false),
      DOUBLE_FIELD("lr", train.lr, false),
      SIZE_FIELD("max_epochs", train.max_epochs, false),
      SIZE_FIELD("patience", train.patience, false),
      Field{"seed", false, [](RunConfig& c, std::string_view v) { c.train.seed = to_u64(v); },
            [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      SIZE_FIELD("eval_negatives", train.eval_negatives, false),
      DOUBLE_FIELD("grad_clip", train.grad_clip, false),
      SIZE_FIELD("eval_batch_size", train.eval_batch_size, false),

      DOUBLE_FIELD("train_frac", train_frac, false),
      DOUBLE_FIELD("val_frac", val_frac, false),
      Field{"undirected_history", false,
            [](RunConfig& c, std::string_view v) {
              if (v != "auto" && v != "true" && v != "false")
                throw std::invalid_argument("undirected_history must be auto, true or false");
              c.undirected_history = std::string(v);
            },
            [](const RunConfig& c) { return c.undirected_history; }},
      Field{"hr_k", false,
            [](RunConfig& c, std::string_view v) {
              std::vector<std::size_t> ks;
              std::size_t pos = 0;
              while (pos <= v.size()) {
                const auto comma = v.find(',', pos);
                const auto tok = trim(v.substr(pos, comma == std::string_view::npos
                                                        ? std::string_view::npos
                                                        : comma - pos));
                const auto k = to_size(tok);
                if (k == 0) throw std::invalid_argument("hr_k entries must be positive");
                ks.push_back(k);
                if (comma == std::string_view::npos) break;
                pos = comma + 1;
              }
              c.hr_k = std::move(ks);
            },
            [](const RunConfig& c) {
              std::string s;
              for (std::size_t i = 0; i < c.hr_k.size(); ++i)
                s += (i ? "," : "") + std::to_string(c.hr_k[i]);
              return s;
            }},
      Field{"data_dir", false,
            [](RunConfig& c, std::string_view v) { c.data_dir = std::string(v); },
            [](const RunConfig& c) { return c.data_dir; }},
      Field{"out_dir", false, [](RunConfig& c, std::string_view v) { c.out_dir = std::string(v); },
            [](const RunConfig& c) { return c.out_dir; }},
  };
  return f;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD

const Field* find_field(std::string_view key) {
  for (const auto& f : fields())
    if (key == f.name) return &f;
  return nullptr;
}

}  // namespace

bool RunConfig::resolve_undirected(bool bipartite) const {
  if (undirected_history == "true") return true;
  if (undirected_history == "false") return false;
  return !bipartite;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (!(train_frac > 0 && train_frac < 1) || !(val_frac > 0 && val_frac < 1) ||
      train_frac + val_frac >= 1)
    throw std::invalid_argument("split fractions must lie in (0, 1) and sum below 1");
  if (hr_k.empty()) throw std::invalid_argument("hr_k must not be empty");
}

void set_key(RunConfig& cfg, std::string_view key, std::string_view value) {
  const Field* f = find_field(key);
  if (!f) throw std::invalid_argument("unknown config key '" + std::string(key) + "'");
  f->set(cfg, value);
}

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw FormatError("line " + std::to_string(line_no) + ": expected key = value", line_no);
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    try {
      set_key(base, key, value);
    } catch (const std::invalid_argument& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), std::move(base));
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw FormatError("override '" + std::string(assignment) + "' is not key=value");
  try {
    set_key(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("override: ") + e.what());
  }
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.name) + " = " + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.name);
  return out;
}

std::string model_config_text(const SDGConfig& cfg, std::size_t num_nodes) {
  RunConfig rc;
  rc.model = cfg;
  std::string out = "num_nodes = " + std::to_string(num_nodes) + "\n";
  for (const auto& f : fields())
    if (f.model) out += std::string(f.name) + " = " + f.get(rc) + "\n";
  return out;
}

SDGConfig parse_model_config_text(std::string_view text, std::size_t* num_nodes) {
  std::string rest;
  std::size_t pos = 0;
  bool have_nodes = false;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    const auto eq = line.find('=');
    if (eq != std::string_view::npos && trim(line.substr(0, eq)) == "num_nodes") {
      if (num_nodes) *num_nodes = to_size(trim(line.substr(eq + 1)));
      have_nodes = true;
      continue;
    }
    if (eq != std::string_view::npos) {
      const Field* f = find_field(trim(line.substr(0, eq)));
      if (f && !f->model)
        throw FormatError("non-model key in model config: " + std::string(f->name));
    }
    rest.append(line).push_back('\n');
  }
  if (!have_nodes) throw FormatError("model config lacks num_nodes");
  return parse_run_config(rest).model;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_hash(const SDGConfig& cfg, std::size_t num_nodes) {
  return fnv1a(model_config_text(cfg, num_nodes));
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace sdg
