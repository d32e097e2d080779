#include "sdg/event_store.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string_view>
#include <unordered_map>

#include "sdg/errors.hpp"

namespace sdg {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("truncated binary event log");
  return v;
}

constexpr std::array<char, 8> kEventMagic = {'S', 'D', 'G', 'E', 'V', 'T', '0', '1'};

}  // namespace

void EventLog::validate() const {
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (e.src >= num_nodes || e.dst >= num_nodes)
      throw std::invalid_argument("event " + std::to_string(i) + " has node id out of range");
    if (e.idx != i) throw std::invalid_argument("event idx values are not contiguous");
    if (i > 0 && events[i - 1].ts > e.ts)
      throw std::invalid_argument("event timestamps decrease at " + std::to_string(i));
  }
}

std::vector<NodeId> EventLog::destination_nodes() const {
  std::vector<std::uint8_t> seen(num_nodes, 0);
  for (const auto& e : events) seen[e.dst] = 1;
  std::vector<NodeId> out;
  for (std::size_t v = 0; v < num_nodes; ++v)
    if (seen[v]) out.push_back(static_cast<NodeId>(v));
  return out;
}

std::vector<NodeId> EventLog::all_nodes() const {
  std::vector<NodeId> out(num_nodes);
  for (std::size_t v = 0; v < num_nodes; ++v) out[v] = static_cast<NodeId>(v);
  return out;
}

EventLog make_log(std::vector<Event> events, std::size_t num_nodes, bool bipartite,
                  bool* resorted) {
  const bool sorted = std::is_sorted(events.begin(), events.end(),
                                     [](const Event& a, const Event& b) { return a.ts < b.ts; });
  if (!sorted)
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.ts < b.ts; });
  if (resorted) *resorted = !sorted;
  for (std::size_t i = 0; i < events.size(); ++i) {
    events[i].idx = i;
    if (events[i].ts < 0.0) throw std::invalid_argument("negative timestamp");
  }
  EventLog log{std::move(events), num_nodes, bipartite};
  log.validate();
  return log;
}

LoadResult load_events(const std::filesystem::path& path, bool bipartite) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open events file: " + path.string());

  std::string line;
  std::size_t line_no = 0;
  std::size_t col_src = 0, col_dst = 0, col_ts = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cols = split(line, ',');
    bool s = false, d = false, t = false;
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (cols[i] == "src") { col_src = i; s = true; }
      if (cols[i] == "dst") { col_dst = i; d = true; }
      if (cols[i] == "ts") { col_ts = i; t = true; }
    }
    if (!(s && d && t))
      throw FormatError("header must contain src,dst,ts columns", line_no);
    have_header = true;
    break;
  }
  if (!have_header) throw FormatError("missing header line", line_no);

  struct Row {
    std::string src, dst;
    double ts;
  };
  std::vector<Row> rows;
  const std::size_t need = std::max({col_src, col_dst, col_ts}) + 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() < need)
      throw FormatError("line " + std::to_string(line_no) + ": expected at least " +
                            std::to_string(need) + " columns",
                        line_no);
    double ts = 0.0;
    if (!parse_double(cols[col_ts], ts))
      throw FormatError("line " + std::to_string(line_no) + ": bad timestamp '" +
                            std::string(cols[col_ts]) + "'",
                        line_no);
    if (ts < 0.0)
      throw FormatError("line " + std::to_string(line_no) + ": negative timestamp", line_no);
    if (cols[col_src].empty() || cols[col_dst].empty())
      throw FormatError("line " + std::to_string(line_no) + ": empty node id", line_no);
    rows.push_back({std::string(cols[col_src]), std::string(cols[col_dst]), ts});
  }

  LoadResult result;
  const bool sorted = std::is_sorted(rows.begin(), rows.end(),
                                     [](const Row& a, const Row& b) { return a.ts < b.ts; });
  if (!sorted)
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.ts < b.ts; });
  result.resorted = !sorted;

  std::unordered_map<std::string, NodeId> ids;
  auto intern = [&](const std::string& tok) {
    auto [it, inserted] = ids.try_emplace(tok, static_cast<NodeId>(result.original_ids.size()));
    if (inserted) result.original_ids.push_back(tok);
    return it->second;
  };
  std::vector<Event> events;
  events.reserve(rows.size());
  for (const auto& r : rows) {
    Event e;
    e.src = intern(r.src);
    e.dst = intern(r.dst);
    e.ts = r.ts;
    events.push_back(e);
  }
  result.log = make_log(std::move(events), result.original_ids.size(), bipartite);
  return result;
}

void write_node_map(const std::filesystem::path& path, std::span<const std::string> original_ids) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write node map: " + path.string());
  out << "original_id,internal_id\n";
  for (std::size_t i = 0; i < original_ids.size(); ++i) out << original_ids[i] << ',' << i << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<std::string> read_node_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open node map: " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<std::string> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 2 || cols[1] != std::to_string(out.size()))
      throw FormatError("node map line " + std::to_string(line_no) + " malformed", line_no);
    out.emplace_back(cols[0]);
  }
  return out;
}

void write_event_log(const std::filesystem::path& path, const EventLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write event log: " + path.string());
  out.write(kEventMagic.data(), kEventMagic.size());
  write_pod<std::uint64_t>(out, log.events.size());
  write_pod<std::uint64_t>(out, log.num_nodes);
  write_pod<std::uint8_t>(out, log.bipartite ? 1 : 0);
  for (const auto& e : log.events) {
    write_pod<std::uint32_t>(out, e.src);
    write_pod<std::uint32_t>(out, e.dst);
    write_pod<double>(out, e.ts);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

EventLog read_event_log(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open event log: " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kEventMagic) throw FormatError("not an event log: " + path.string());
  const auto n = read_pod<std::uint64_t>(in);
  const auto num_nodes = read_pod<std::uint64_t>(in);
  const bool bipartite = read_pod<std::uint8_t>(in) != 0;
  std::vector<Event> events(n);
  for (std::size_t i = 0; i < n; ++i) {
    events[i].src = read_pod<std::uint32_t>(in);
    events[i].dst = read_pod<std::uint32_t>(in);
    events[i].ts = read_pod<double>(in);
    events[i].idx = i;
  }
  EventLog log{std::move(events), num_nodes, bipartite};
  log.validate();
  return log;
}

AdjacencyIndex::AdjacencyIndex(const EventLog& log, bool undirected_history)
    : undirected_(undirected_history) {
  const std::size_t n = log.num_nodes;
  offsets_.assign(n + 1, 0);
  for (const auto& e : log.events) {
    ++offsets_[e.src + 1];
    if (undirected_ && e.dst != e.src) ++offsets_[e.dst + 1];
  }
  for (std::size_t u = 0; u < n; ++u) offsets_[u + 1] += offsets_[u];
  const std::size_t total = offsets_[n];
  nodes_.resize(total);
  times_.resize(total);
  idx_.resize(total);
  std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
  // Chronological input means appending in log order keeps every list sorted.
  auto push = [&](NodeId owner, NodeId other, const Event& e) {
    const auto pos = cursor[owner]++;
    nodes_[pos] = other;
    times_[pos] = e.ts;
    idx_[pos] = e.idx;
  };
  for (const auto& e : log.events) {
    push(e.src, e.dst, e);
    if (undirected_ && e.dst != e.src) push(e.dst, e.src, e);
  }
}

std::vector<Neighbor> AdjacencyIndex::neighbors(NodeId u) const {
  std::vector<Neighbor> out;
  out.reserve(degree(u));
  for (std::size_t p = offsets_[u]; p < offsets_[u + 1]; ++p)
    out.push_back({nodes_[p], times_[p], idx_[p]});
  return out;
}

std::size_t AdjacencyIndex::count_before(NodeId u, Timestamp t) const {
  const auto times = times_of(u);
  return static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), t) - times.begin());
}

AdjacencyIndex build_index(const EventLog& log, bool undirected_history) {
  return AdjacencyIndex(log, undirected_history);
}

std::size_t HistorySequence::num_valid() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

HistorySequence recent_neighbors(const AdjacencyIndex& index, NodeId u, Timestamp t,
                                 std::size_t length, NodeId padding_id) {
  if (length == 0) throw std::invalid_argument("history length must be >= 1");
  if (u >= index.num_nodes()) throw std::invalid_argument("node id out of range");
  HistorySequence h;
  h.nodes.assign(length, padding_id);
  h.times.assign(length, 0.0);
  h.valid.assign(length, 0);
  const std::size_t cut = index.count_before(u, t);
  const std::size_t take = std::min(cut, length);
  const auto nodes = index.nodes_of(u);
  const auto times = index.times_of(u);
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t src = cut - take + i;
    const std::size_t dst = length - take + i;
    h.nodes[dst] = nodes[src];
    h.times[dst] = times[src];
    h.valid[dst] = 1;
  }
  return h;
}

HistorySequence HistoryBatch::row(std::size_t b) const {
  HistorySequence h;
  const auto off = b * length;
  h.nodes.assign(nodes.begin() + off, nodes.begin() + off + length);
  h.times.assign(times.begin() + off, times.begin() + off + length);
  h.valid.assign(valid.begin() + off, valid.begin() + off + length);
  return h;
}

void HistoryBatch::set_row(std::size_t b, const HistorySequence& h) {
  if (h.length() != length) throw std::invalid_argument("history row length mismatch");
  std::copy(h.nodes.begin(), h.nodes.end(), nodes.begin() + b * length);
  std::copy(h.times.begin(), h.times.end(), times.begin() + b * length);
  std::copy(h.valid.begin(), h.valid.end(), valid.begin() + b * length);
}

HistoryBatch recent_neighbors_batch(const AdjacencyIndex& index, std::span<const NodeId> sources,
                                    std::span<const Timestamp> times, std::size_t length,
                                    NodeId padding_id) {
  if (sources.size() != times.size()) throw std::invalid_argument("sources/times size mismatch");
  HistoryBatch batch(sources.size(), length, padding_id);
  for (std::size_t b = 0; b < sources.size(); ++b)
    batch.set_row(b, recent_neighbors(index, sources[b], times[b], length, padding_id));
  return batch;
}

DatasetSplit chronological_split(const EventLog& log, double train_frac, double val_frac) {
  if (!(train_frac > 0.0 && train_frac < 1.0) || !(val_frac > 0.0 && val_frac < 1.0))
    throw std::invalid_argument("split fractions must lie in (0, 1)");
  if (!(train_frac + val_frac < 1.0))
    throw std::invalid_argument("train_frac + val_frac must be < 1");
  const std::size_t n = log.size();
  const auto a = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_frac));
  const auto b = static_cast<std::size_t>(std::floor(static_cast<double>(n) * (train_frac + val_frac)));
  DatasetSplit s;
  s.train = {0, a};
  s.val = {a, b};
  s.test = {b, n};
  s.val_start = a < n ? log.events[a].ts : 0.0;
  s.test_start = b < n ? log.events[b].ts : 0.0;
  return s;
}

double repeat_ratio(const EventLog& log) {
  if (log.empty()) return 0.0;
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(log.size() * 2);
  std::size_t repeats = 0;
  for (const auto& e : log.events) {
    const std::uint64_t key = (static_cast<std::uint64_t>(e.src) << 32) | e.dst;
    if (!seen.insert(key).second) ++repeats;
  }
  return static_cast<double>(repeats) / static_cast<double>(log.size());
}

std::vector<NodeId> sample_negatives(Rng& rng, std::size_t n, std::span<const NodeId> pool,
                                     const std::unordered_set<NodeId>& exclude) {
  std::size_t available = 0;
  for (auto v : pool)
    if (!exclude.contains(v)) ++available;
  if (available == 0) throw std::invalid_argument("negative pool exhausted by exclusions");
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<NodeId> out;
  out.reserve(n);
  while (out.size() < n) {
    const NodeId v = pool[pick(rng)];
    if (!exclude.contains(v)) out.push_back(v);
  }
  return out;
}

std::vector<std::vector<NodeId>> load_negatives_file(const std::filesystem::path& path,
                                                     std::size_t num_nodes,
                                                     std::size_t expected_lines) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open negatives file: " + path.string());
  std::vector<std::vector<NodeId>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::vector<NodeId> ids;
    std::string tok;
    while (ss >> tok) {
      std::uint64_t v = 0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw FormatError("bad node id '" + tok + "' at line " + std::to_string(line_no), line_no);
      if (v >= num_nodes)
        throw FormatError("unknown node id " + tok + " at line " + std::to_string(line_no), line_no);
      ids.push_back(static_cast<NodeId>(v));
    }
    if (ids.empty())
      throw FormatError("empty candidate list at line " + std::to_string(line_no), line_no);
    out.push_back(std::move(ids));
  }
  if (out.size() != expected_lines)
    throw FormatError("negatives file has " + std::to_string(out.size()) + " lines, expected " +
                      std::to_string(expected_lines));
  return out;
}

void write_negatives_file(const std::filesystem::path& path,
                          const std::vector<std::vector<NodeId>>& lists) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write negatives file: " + path.string());
  for (const auto& l : lists) {
    for (std::size_t i = 0; i < l.size(); ++i) out << (i ? " " : "") << l[i];
    out << '\n';
  }
}

}  // namespace sdg
