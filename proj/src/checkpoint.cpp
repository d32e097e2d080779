#include "sdg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <string>

#include "sdg/config.hpp"
#include "sdg/errors.hpp"

namespace sdg {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'D', 'G', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U get(std::istream& in, const std::string& path) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw IoError("truncated checkpoint " + path);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const SDGModel<float>& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const auto text = model_config_text(model.config(), model.num_nodes());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint64_t>(out, fnv1a(text));
  const auto& entries = model.params().entries();
  put<std::uint64_t>(out, entries.size());
  for (const auto& [name, p] : entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.rank()));
    for (auto s : p.shape()) put<std::uint64_t>(out, s);
    out.write(reinterpret_cast<const char*>(p.value().data()),
              static_cast<std::streamsize>(p.numel() * sizeof(float)));
  }
  if (!out) throw IoError("write failed for checkpoint " + path.string());
}

std::unique_ptr<SDGModel<float>> load_checkpoint(const std::filesystem::path& path) {
  const std::string ps = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + ps);
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw CheckpointMismatch("not an SDG checkpoint: " + ps);
  const auto version = get<std::uint32_t>(in, ps);
  if (version != kVersion)
    throw CheckpointMismatch("unsupported checkpoint version " + std::to_string(version));
  const auto len = get<std::uint64_t>(in, ps);
  if (len > (1u << 20)) throw CheckpointMismatch("implausible config block in " + ps);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len)))
    throw IoError("truncated checkpoint " + ps);
  const auto hash = get<std::uint64_t>(in, ps);
  if (hash != fnv1a(text)) throw CheckpointMismatch("config hash mismatch in " + ps);

  std::size_t num_nodes = 0;
  SDGConfig cfg;
  try {
    cfg = parse_model_config_text(text, &num_nodes);
  } catch (const std::exception& e) {
    throw CheckpointMismatch(std::string("bad config block: ") + e.what());
  }
  auto model = std::make_unique<SDGModel<float>>(cfg, num_nodes, 0);
  auto& store = model->params();
  const auto count = get<std::uint64_t>(in, ps);
  if (count != store.size())
    throw CheckpointMismatch("checkpoint has " + std::to_string(count) +
                             " tensors, config implies " + std::to_string(store.size()));
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto nlen = get<std::uint32_t>(in, ps);
    if (nlen > 4096) throw CheckpointMismatch("implausible tensor name in " + ps);
    std::string name(nlen, '\0');
    if (!in.read(name.data(), nlen)) throw IoError("truncated checkpoint " + ps);
    if (!store.contains(name)) throw CheckpointMismatch("unexpected tensor " + name);
    auto& p = store.get(name);
    const auto rank = get<std::uint32_t>(in, ps);
    nn::Shape shape(rank);
    for (auto& s : shape) s = get<std::uint64_t>(in, ps);
    if (shape != p.shape())
      throw CheckpointMismatch("shape mismatch for " + name + ": " + nn::shape_string(shape) +
                               " vs " + nn::shape_string(p.shape()));
    auto dst = p.mutable_value();
    if (!in.read(reinterpret_cast<char*>(dst.data()),
                 static_cast<std::streamsize>(dst.size() * sizeof(float))))
      throw IoError("truncated checkpoint " + ps);
  }
  return model;
}

}  // namespace sdg
