#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "sdg/event_store.hpp"

namespace sdg {

// Round-robin graph: event i has src = i mod num_nodes, dst = partner[src],
// ts = i + 1. `partner` is a seeded single-cycle permutation (no fixed points).
struct SyntheticGraph {
  EventLog log;
  std::vector<NodeId> partner;
};

SyntheticGraph make_round_robin_graph(std::size_t num_nodes, std::size_t num_events,
                                      std::uint64_t seed);

void write_events_csv(const std::filesystem::path& path, const EventLog& log);

}  // namespace sdg
