#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "sdg/random.hpp"

namespace sdg {

using NodeId = std::uint32_t;
using Timestamp = double;

struct Event {
  NodeId src = 0;
  NodeId dst = 0;
  Timestamp ts = 0.0;
  std::size_t idx = 0;
};

// Chronologically ordered interaction stream. Node ids are dense in
// [0, num_nodes); id `num_nodes` is reserved as the padding token.
struct EventLog {
  std::vector<Event> events;
  std::size_t num_nodes = 0;
  bool bipartite = false;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }
  NodeId padding_id() const { return static_cast<NodeId>(num_nodes); }

  // Throws std::invalid_argument if any invariant is violated.
  void validate() const;

  // Distinct destination ids, ascending. Negative pool for bipartite data.
  std::vector<NodeId> destination_nodes() const;
  // 0..num_nodes-1.
  std::vector<NodeId> all_nodes() const;
};

struct LoadResult {
  EventLog log;
  // original_ids[internal_id] is the token found in the source file.
  std::vector<std::string> original_ids;
  // Set when the input was not in timestamp order and had to be sorted.
  bool resorted = false;
};

// Reads a CSV with a header containing `src`, `dst` and `ts` columns (in any
// position; other columns are ignored). Node tokens are remapped to dense ids
// in order of first appearance in the (sorted) log.
LoadResult load_events(const std::filesystem::path& path, bool bipartite = false);

// Builds an EventLog from in-memory triples; same remapping-free contract as
// the on-disk log (ids must already be dense). Sorts stably if needed.
EventLog make_log(std::vector<Event> events, std::size_t num_nodes,
                  bool bipartite = false, bool* resorted = nullptr);

void write_node_map(const std::filesystem::path& path,
                    std::span<const std::string> original_ids);
std::vector<std::string> read_node_map(const std::filesystem::path& path);

// Compact binary form of an EventLog used by ingested data directories.
void write_event_log(const std::filesystem::path& path, const EventLog& log);
EventLog read_event_log(const std::filesystem::path& path);

struct Neighbor {
  NodeId node = 0;
  Timestamp ts = 0.0;
  std::size_t idx = 0;
};

// Per-node neighbour lists sorted by (ts, idx), stored CSR-style so a
// recency query is a single binary search over a contiguous time array.
class AdjacencyIndex {
 public:
  AdjacencyIndex() = default;
  AdjacencyIndex(const EventLog& log, bool undirected_history);

  std::size_t num_nodes() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  bool undirected_history() const { return undirected_; }
  std::size_t degree(NodeId u) const { return offsets_[u + 1] - offsets_[u]; }
  std::vector<Neighbor> neighbors(NodeId u) const;

  // Number of entries of u's list with ts strictly below t.
  std::size_t count_before(NodeId u, Timestamp t) const;

  std::span<const NodeId> nodes_of(NodeId u) const {
    return {nodes_.data() + offsets_[u], degree(u)};
  }
  std::span<const Timestamp> times_of(NodeId u) const {
    return {times_.data() + offsets_[u], degree(u)};
  }

 private:
  std::vector<std::size_t> offsets_;
  std::vector<NodeId> nodes_;
  std::vector<Timestamp> times_;
  std::vector<std::size_t> idx_;
  bool undirected_ = false;
};

AdjacencyIndex build_index(const EventLog& log, bool undirected_history);

// L most recent neighbours strictly before a query time, left-padded.
struct HistorySequence {
  std::vector<NodeId> nodes;
  std::vector<Timestamp> times;
  std::vector<std::uint8_t> valid;

  std::size_t length() const { return nodes.size(); }
  std::size_t num_valid() const;
};

HistorySequence recent_neighbors(const AdjacencyIndex& index, NodeId u, Timestamp t,
                                 std::size_t length, NodeId padding_id);

// Row-major (batch, length) stack of HistorySequence values.
struct HistoryBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<NodeId> nodes;
  std::vector<Timestamp> times;
  std::vector<std::uint8_t> valid;

  HistoryBatch() = default;
  HistoryBatch(std::size_t b, std::size_t l, NodeId padding_id)
      : batch(b), length(l), nodes(b * l, padding_id), times(b * l, 0.0),
        valid(b * l, 0) {}

  HistorySequence row(std::size_t b) const;
  void set_row(std::size_t b, const HistorySequence& h);
};

HistoryBatch recent_neighbors_batch(const AdjacencyIndex& index,
                                    std::span<const NodeId> sources,
                                    std::span<const Timestamp> times,
                                    std::size_t length, NodeId padding_id);

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool empty() const { return begin == end; }
};

struct DatasetSplit {
  IndexRange train;
  IndexRange val;
  IndexRange test;
  // Timestamps of the first validation / first test event (0 when empty).
  Timestamp val_start = 0.0;
  Timestamp test_start = 0.0;
};

DatasetSplit chronological_split(const EventLog& log, double train_frac, double val_frac);

double repeat_ratio(const EventLog& log);

// n draws uniform over pool \ exclude, with replacement.
std::vector<NodeId> sample_negatives(Rng& rng, std::size_t n, std::span<const NodeId> pool,
                                     const std::unordered_set<NodeId>& exclude);

// One line per evaluation event, whitespace-separated internal ids.
std::vector<std::vector<NodeId>> load_negatives_file(const std::filesystem::path& path,
                                                     std::size_t num_nodes,
                                                     std::size_t expected_lines);

void write_negatives_file(const std::filesystem::path& path,
                          const std::vector<std::vector<NodeId>>& lists);

}  // namespace sdg
