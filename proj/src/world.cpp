#include "cyclenav/world.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>

namespace cyclenav {

const char* dir_name(Dir d) {
  switch (d) {
    case Dir::North: return "north";
    case Dir::East: return "east";
    case Dir::South: return "south";
    case Dir::West: return "west";
  }
  return "?";
}

std::optional<Dir> dir_from_name(const std::string& s) {
  for (int i = 0; i < kNumDirs; ++i)
    if (s == dir_name(static_cast<Dir>(i))) return static_cast<Dir>(i);
  return std::nullopt;
}

double heading_cos(Dir d) {
  switch (d) {
    case Dir::East: return 1.0;
    case Dir::West: return -1.0;
    default: return 0.0;
  }
}

double heading_sin(Dir d) {
  switch (d) {
    case Dir::North: return 1.0;
    case Dir::South: return -1.0;
    default: return 0.0;
  }
}

namespace vocab {

static const char* kNames[kSize] = {"BOS",  "EOS",  "walk", "north", "south", "east",  "west",
                                    "to",   "the",  "then", "stop",  "at",    "door",  "table",
                                    "plant", "lamp", "sofa", "shelf", "stairs", "sink"};

const char* name(int id) {
  if (id < 0 || id >= kSize) throw DataError("vocab: token id out of range: " + std::to_string(id));
  return kNames[id];
}

int id_of(const std::string& s) {
  for (int i = 0; i < kSize; ++i)
    if (s == kNames[i]) return i;
  throw DataError("vocab: unknown token '" + s + "'");
}

int direction_word(Dir d) {
  switch (d) {
    case Dir::North: return kNorth;
    case Dir::South: return kSouth;
    case Dir::East: return kEast;
    case Dir::West: return kWest;
  }
  return kNorth;
}

std::string to_string(const std::vector<int>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += name(tokens[i]);
  }
  return out;
}

std::vector<int> parse(const std::string& text) {
  std::istringstream is(text);
  std::vector<int> out;
  std::string tok;
  while (is >> tok) out.push_back(id_of(tok));
  return out;
}

}  // namespace vocab

std::string action_name(const Action& a) { return a.stop ? "stop" : dir_name(a.dir); }

Action action_from_name(const std::string& s) {
  if (s == "stop") return Action::stop_action();
  auto d = dir_from_name(s);
  if (!d) throw DataError("unknown action name '" + s + "'");
  return Action::move(*d);
}

bool World::navigable(int node, Dir d) const {
  if (!is_node(node)) throw DataError("world " + std::to_string(id) + ": unknown node " + std::to_string(node));
  return sub[static_cast<std::size_t>(node)][static_cast<std::size_t>(d)].navigable;
}

int World::neighbor(int node, Dir d) const {
  if (!navigable(node, d)) return -1;
  return node_at(x_of(node) + dx_of(d), y_of(node) + dy_of(d));
}

std::vector<int> World::nodes() const {
  std::vector<int> out;
  for (int n = 0; n < width * height; ++n)
    if (open[static_cast<std::size_t>(n)]) out.push_back(n);
  return out;
}

std::size_t World::node_count() const {
  std::size_t c = 0;
  for (auto v : open) c += v;
  return c;
}

std::size_t World::edge_count() const {
  std::size_t c = 0;
  for (int n = 0; n < width * height; ++n) {
    if (!open[static_cast<std::size_t>(n)]) continue;
    if (navigable(n, Dir::North)) ++c;
    if (navigable(n, Dir::East)) ++c;
  }
  return c;
}

Feat World::subview_feature(int node, Dir d) const {
  if (!is_node(node)) throw DataError("world " + std::to_string(id) + ": unknown node " + std::to_string(node));
  const Subview& s = sub[static_cast<std::size_t>(node)][static_cast<std::size_t>(d)];
  Feat f{};
  f[static_cast<std::size_t>(s.landmark)] = 1.0;
  f[8] = heading_cos(d);
  f[9] = heading_sin(d);
  f[10] = s.navigable ? 1.0 : 0.0;
  return f;
}

std::array<Feat, kNumDirs> World::panorama(int node) const {
  std::array<Feat, kNumDirs> out;
  for (int d = 0; d < kNumDirs; ++d) out[static_cast<std::size_t>(d)] = subview_feature(node, static_cast<Dir>(d));
  return out;
}

int World::geodesic(int a, int b) const {
  if (!is_node(a) || !is_node(b))
    throw DataError("geodesic: unknown node in world " + std::to_string(id));
  if (a == b) return 0;
  std::vector<int> dist(static_cast<std::size_t>(width * height), -1);
  std::deque<int> q{a};
  dist[static_cast<std::size_t>(a)] = 0;
  while (!q.empty()) {
    const int n = q.front();
    q.pop_front();
    for (int d = 0; d < kNumDirs; ++d) {
      const int m = neighbor(n, static_cast<Dir>(d));
      if (m < 0 || dist[static_cast<std::size_t>(m)] >= 0) continue;
      dist[static_cast<std::size_t>(m)] = dist[static_cast<std::size_t>(n)] + 1;
      if (m == b) return dist[static_cast<std::size_t>(m)];
      q.push_back(m);
    }
  }
  throw DataError("geodesic: nodes " + std::to_string(a) + " and " + std::to_string(b) +
                  " are disconnected in world " + std::to_string(id));
}

std::string World::serialize() const {
  std::ostringstream os;
  os << "world " << id << " " << width << " " << height << "\n";
  for (int n = 0; n < width * height; ++n) {
    if (!open[static_cast<std::size_t>(n)]) continue;
    os << "node " << x_of(n) << " " << y_of(n);
    for (int d = 0; d < kNumDirs; ++d) os << " " << sub[static_cast<std::size_t>(n)][static_cast<std::size_t>(d)].landmark;
    for (int d = 0; d < kNumDirs; ++d) os << " " << (sub[static_cast<std::size_t>(n)][static_cast<std::size_t>(d)].navigable ? 1 : 0);
    os << "\n";
  }
  os << "end\n";
  return os.str();
}

static bool connected(const World& w) {
  const auto ns = w.nodes();
  if (ns.empty()) return false;
  std::set<int> seen{ns[0]};
  std::deque<int> q{ns[0]};
  while (!q.empty()) {
    const int n = q.front();
    q.pop_front();
    for (int d = 0; d < kNumDirs; ++d) {
      const int m = w.neighbor(n, static_cast<Dir>(d));
      if (m >= 0 && seen.insert(m).second) q.push_back(m);
    }
  }
  return seen.size() == ns.size();
}

World generate_world(std::uint64_t seed, int width, int height, double wall_density, int id) {
  if (width < 2 || height < 2) throw DataError("generate_world: width and height must be >= 2");
  if (wall_density < 0 || wall_density > 0.4)
    throw DataError("generate_world: wall density must lie in [0, 0.4]");
  for (int attempt = 0; attempt < 100; ++attempt) {
    Rng rng(splitmix64(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(attempt)));
    World w;
    w.id = id;
    w.width = width;
    w.height = height;
    w.open.assign(static_cast<std::size_t>(width * height), 1);
    w.sub.assign(static_cast<std::size_t>(width * height), {});
    for (auto& c : w.open) c = rng.uniform() >= wall_density ? 1 : 0;
    for (int n = 0; n < width * height; ++n) {
      for (int d = 0; d < kNumDirs; ++d) {
        auto& s = w.sub[static_cast<std::size_t>(n)][static_cast<std::size_t>(d)];
        s.landmark = static_cast<int>(rng.below(kNumLandmarks));
        const int nx = w.x_of(n) + dx_of(static_cast<Dir>(d));
        const int ny = w.y_of(n) + dy_of(static_cast<Dir>(d));
        s.navigable = w.open[static_cast<std::size_t>(n)] && w.in_bounds(nx, ny) &&
                      w.open[static_cast<std::size_t>(w.node_at(nx, ny))];
      }
    }
    if (w.node_count() >= 2 && connected(w)) return w;
  }
  throw DataError("generate_world: no connected world after 100 seeded retries (seed " +
                  std::to_string(seed) + ", " + std::to_string(width) + "x" + std::to_string(height) +
                  ", density " + std::to_string(wall_density) + ")");
}

Path sample_path(const World& w, Rng& rng, int min_len, int max_len) {
  if (min_len < 1 || min_len > max_len || max_len > 10)
    throw DataError("sample_path: need 1 <= min_len <= max_len <= 10");
  const auto ns = w.nodes();
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const int a = ns[rng.below(ns.size())];
    const int b = ns[rng.below(ns.size())];
    if (a == b) continue;
    // Canonical BFS tree: neighbors explored in N,E,S,W order.
    std::vector<int> parent(static_cast<std::size_t>(w.width * w.height), -2);
    std::deque<int> q{a};
    parent[static_cast<std::size_t>(a)] = -1;
    while (!q.empty()) {
      const int n = q.front();
      q.pop_front();
      for (int d = 0; d < kNumDirs; ++d) {
        const int m = w.neighbor(n, static_cast<Dir>(d));
        if (m < 0 || parent[static_cast<std::size_t>(m)] != -2) continue;
        parent[static_cast<std::size_t>(m)] = n;
        q.push_back(m);
      }
    }
    if (parent[static_cast<std::size_t>(b)] == -2) continue;
    std::vector<int> rev;
    for (int n = b; n != -1; n = parent[static_cast<std::size_t>(n)]) rev.push_back(n);
    const int dist = static_cast<int>(rev.size()) - 1;
    if (dist < min_len || dist > max_len) continue;
    Path p;
    p.nodes.assign(rev.rbegin(), rev.rend());
    for (std::size_t i = 0; i + 1 < p.nodes.size(); ++i) {
      const int from = p.nodes[i], to = p.nodes[i + 1];
      Dir dir = Dir::North;
      for (int d = 0; d < kNumDirs; ++d)
        if (w.neighbor(from, static_cast<Dir>(d)) == to) dir = static_cast<Dir>(d);
      p.actions.push_back(Action::move(dir));
    }
    p.actions.push_back(Action::stop_action());
    p.terminated = true;
    return p;
  }
  throw DataError("sample_path: no node pair with geodesic distance in [" + std::to_string(min_len) +
                  ", " + std::to_string(max_len) + "] after 1000 seeded retries in world " +
                  std::to_string(w.id));
}

std::vector<int> oracle_instruction(const World& w, const Path& path) {
  if (path.move_count() < 1) throw DataError("oracle_instruction: path has no moves");
  struct Segment {
    Dir dir;
    int end_node;
  };
  std::vector<Segment> segs;
  for (std::size_t i = 0; i + 1 < path.nodes.size(); ++i) {
    const Dir d = path.actions[i].dir;
    if (path.actions[i].stop) throw DataError("oracle_instruction: stop before path end");
    if (!segs.empty() && segs.back().dir == d)
      segs.back().end_node = path.nodes[i + 1];
    else
      segs.push_back({d, path.nodes[i + 1]});
  }
  auto landmark_at = [&](int node, Dir d) {
    return vocab::landmark_word(w.sub[static_cast<std::size_t>(node)][static_cast<std::size_t>(d)].landmark);
  };
  std::vector<int> out{vocab::kBos};
  for (std::size_t i = 0; i < segs.size(); ++i) {
    if (i) out.push_back(vocab::kThen);
    out.insert(out.end(), {vocab::kWalk, vocab::direction_word(segs[i].dir), vocab::kTo, vocab::kThe,
                           landmark_at(segs[i].end_node, segs[i].dir)});
  }
  out.insert(out.end(), {vocab::kThen, vocab::kStop, vocab::kAt, vocab::kThe,
                         landmark_at(segs.back().end_node, segs.back().dir)});
  out.push_back(vocab::kEos);
  if (out.size() > 48)
    throw DataError("oracle_instruction: instruction exceeds 48 tokens (" + std::to_string(out.size()) + ")");
  return out;
}

const World& DatasetBundle::world_by_id(int id) const {
  for (const auto& w : worlds)
    if (w.id == id) return w;
  throw DataError("dataset: unknown world id " + std::to_string(id));
}

// Sample one labeled/unlabeled episode; resamples paths whose instruction
// overflows the 48-token bound.
static Episode sample_episode(const World& w, Rng& rng, const SplitSpec& spec, bool labeled) {
  for (int tries = 0; tries < 100; ++tries) {
    Path p = sample_path(w, rng, spec.path_min, spec.path_max);
    Episode e;
    e.world_id = w.id;
    e.path = std::move(p);
    e.labeled = labeled;
    if (!labeled) return e;
    try {
      e.instruction = oracle_instruction(w, e.path);
    } catch (const DataError&) {
      continue;
    }
    return e;
  }
  throw DataError("make_datasets: could not sample a grammar-compatible path in world " + std::to_string(w.id));
}

// Instruction-grammar injectivity probe: among sampled paths sharing a start
// node, >=95% must have a unique instruction.
static bool injective_enough(const World& w, Rng rng, const SplitSpec& spec) {
  const int probes = 40;
  std::vector<std::pair<int, std::vector<int>>> items;  // (start, instruction)
  std::vector<std::vector<int>> node_seqs;
  for (int i = 0; i < probes; ++i) {
    Path p = sample_path(w, rng, spec.path_min, spec.path_max);
    std::vector<int> instr;
    try {
      instr = oracle_instruction(w, p);
    } catch (const DataError&) {
      continue;
    }
    items.emplace_back(p.start(), instr);
    node_seqs.push_back(p.nodes);
  }
  if (items.empty()) return false;
  int clashes = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t j = 0; j < items.size(); ++j) {
      if (i == j || items[i].first != items[j].first) continue;
      if (items[i].second == items[j].second && node_seqs[i] != node_seqs[j]) {
        ++clashes;
        break;
      }
    }
  }
  return static_cast<double>(items.size() - clashes) >= 0.95 * static_cast<double>(items.size());
}

DatasetBundle make_datasets(std::uint64_t seed, int n_labeled, int m_unlabeled, const SplitSpec& spec) {
  if (spec.train_worlds < 1 || spec.unseen_worlds < 1)
    throw DataError("make_datasets: every split partition must be non-empty");
  if (n_labeled < 1) throw DataError("make_datasets: need at least one labeled episode");
  DatasetBundle b;
  Rng master(seed);
  const int total_worlds = spec.train_worlds + spec.unseen_worlds;
  for (int i = 0; i < total_worlds; ++i) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (attempt >= 50)
        throw DataError("make_datasets: no grammar-injective world found for slot " + std::to_string(i));
      const std::uint64_t wseed = splitmix64(seed ^ (0x57ULL + 131ULL * static_cast<std::uint64_t>(i))) + attempt;
      World w = generate_world(wseed, spec.width, spec.height, spec.wall_density, i);
      if (injective_enough(w, master.fork(1000 + static_cast<std::uint64_t>(i)), spec)) {
        b.worlds.push_back(std::move(w));
        break;
      }
    }
  }
  b.first_unseen = spec.train_worlds;

  auto train_world = [&](Rng& rng) -> const World& {
    return b.worlds[rng.below(static_cast<std::uint64_t>(spec.train_worlds))];
  };
  Rng rng_d = master.fork(1);
  for (int i = 0; i < n_labeled; ++i) b.train_labeled.push_back(sample_episode(train_world(rng_d), rng_d, spec, true));
  Rng rng_u = master.fork(2);
  for (int i = 0; i < m_unlabeled; ++i) b.train_unlabeled.push_back(sample_episode(train_world(rng_u), rng_u, spec, false));
  Rng rng_vs = master.fork(3);
  for (int i = 0; i < spec.val_seen_episodes; ++i) b.val_seen.push_back(sample_episode(train_world(rng_vs), rng_vs, spec, true));
  Rng rng_vu = master.fork(4);
  for (int i = 0; i < spec.val_unseen_episodes; ++i) {
    const World& w = b.worlds[static_cast<std::size_t>(spec.train_worlds) +
                              rng_vu.below(static_cast<std::uint64_t>(spec.unseen_worlds))];
    b.val_unseen.push_back(sample_episode(w, rng_vu, spec, true));
  }
  return b;
}

void save_worlds(const std::vector<World>& worlds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("save_worlds: cannot open " + path);
  os << "cyclenav-worlds v1\n";
  for (const auto& w : worlds) os << w.serialize();
  if (!os) throw DataError("save_worlds: write failed for " + path);
}

std::vector<World> load_worlds(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("load_worlds: cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line != "cyclenav-worlds v1")
    throw DataError("load_worlds: bad header in " + path);
  std::vector<World> out;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "world") {
      World w;
      if (!(ls >> w.id >> w.width >> w.height) || w.width < 1 || w.height < 1)
        throw DataError("load_worlds: malformed world line " + std::to_string(lineno));
      w.open.assign(static_cast<std::size_t>(w.width * w.height), 0);
      w.sub.assign(static_cast<std::size_t>(w.width * w.height), {});
      out.push_back(std::move(w));
    } else if (tag == "node") {
      if (out.empty()) throw DataError("load_worlds: node before world at line " + std::to_string(lineno));
      World& w = out.back();
      int x, y;
      std::array<int, 4> lm;
      std::array<int, 4> nav;
      if (!(ls >> x >> y >> lm[0] >> lm[1] >> lm[2] >> lm[3] >> nav[0] >> nav[1] >> nav[2] >> nav[3]))
        throw DataError("load_worlds: malformed node line " + std::to_string(lineno));
      if (!w.in_bounds(x, y)) throw DataError("load_worlds: node out of bounds at line " + std::to_string(lineno));
      const int n = w.node_at(x, y);
      w.open[static_cast<std::size_t>(n)] = 1;
      for (int d = 0; d < kNumDirs; ++d) {
        if (lm[static_cast<std::size_t>(d)] < 0 || lm[static_cast<std::size_t>(d)] >= kNumLandmarks)
          throw DataError("load_worlds: landmark id out of range at line " + std::to_string(lineno));
        w.sub[static_cast<std::size_t>(n)][static_cast<std::size_t>(d)] = {lm[static_cast<std::size_t>(d)],
                                                                           nav[static_cast<std::size_t>(d)] != 0};
      }
    } else if (tag == "end") {
      continue;
    } else {
      throw DataError("load_worlds: unknown record '" + tag + "' at line " + std::to_string(lineno));
    }
  }
  return out;
}

void save_episodes(const std::vector<Episode>& eps, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("save_episodes: cannot open " + path);
  os << "# cyclenav-episodes v1\n";
  for (const auto& e : eps) {
    os << e.world_id << "\t";
    for (std::size_t i = 0; i < e.path.nodes.size(); ++i) os << (i ? "," : "") << e.path.nodes[i];
    os << "\t";
    for (std::size_t i = 0; i < e.path.actions.size(); ++i) os << (i ? "," : "") << action_name(e.path.actions[i]);
    os << "\t" << (e.labeled ? vocab::to_string(e.instruction) : std::string("-")) << "\n";
  }
  if (!os) throw DataError("save_episodes: write failed for " + path);
}

std::vector<Episode> load_episodes(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("load_episodes: cannot open " + path);
  std::vector<Episode> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string wid, nodes, actions, tokens;
    if (!std::getline(ls, wid, '\t') || !std::getline(ls, nodes, '\t') || !std::getline(ls, actions, '\t') ||
        !std::getline(ls, tokens))
      throw DataError("load_episodes: malformed record at line " + std::to_string(lineno));
    Episode e;
    e.world_id = std::stoi(wid);
    std::istringstream ns(nodes);
    std::string item;
    while (std::getline(ns, item, ',')) e.path.nodes.push_back(std::stoi(item));
    std::istringstream as(actions);
    while (std::getline(as, item, ',')) e.path.actions.push_back(action_from_name(item));
    e.path.terminated = !e.path.actions.empty() && e.path.actions.back().stop;
    if (tokens != "-") {
      e.instruction = vocab::parse(tokens);
      e.labeled = true;
    }
    if (e.path.nodes.empty()) throw DataError("load_episodes: empty node list at line " + std::to_string(lineno));
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace cyclenav
