#include "sdg/synthetic.hpp"

#include <charconv>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "sdg/errors.hpp"
#include "sdg/random.hpp"

namespace sdg {

SyntheticGraph make_round_robin_graph(std::size_t num_nodes, std::size_t num_events,
                                      std::uint64_t seed) {
  if (num_nodes < 2) throw std::invalid_argument("round-robin graph needs at least 2 nodes");
  SyntheticGraph g;
  g.partner.resize(num_nodes);
  std::iota(g.partner.begin(), g.partner.end(), NodeId{0});
  // Sattolo's shuffle: uniform over single-cycle permutations.
  Rng rng(derive_seed(seed, 0x5359));
  for (std::size_t i = num_nodes - 1; i > 0; --i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(g.partner[i], g.partner[j]);
  }
  std::vector<Event> events(num_events);
  for (std::size_t i = 0; i < num_events; ++i) {
    const auto u = static_cast<NodeId>(i % num_nodes);
    events[i] = {u, g.partner[u], static_cast<Timestamp>(i + 1), i};
  }
  g.log = make_log(std::move(events), num_nodes, false);
  return g;
}

void write_events_csv(const std::filesystem::path& path, const EventLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "src,dst,ts\n";
  char buf[32];
  for (const auto& e : log.events) {
    const auto r = std::to_chars(buf, buf + sizeof buf, e.ts);
    out << e.src << ',' << e.dst << ',' << std::string_view(buf, r.ptr - buf) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace sdg
