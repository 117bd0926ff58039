#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cyclenav/rng.hpp"

namespace cyclenav {

// Compass directions in the fixed N,E,S,W panorama order.
enum class Dir : int { North = 0, East = 1, South = 2, West = 3 };
constexpr int kNumDirs = 4;

inline int dx_of(Dir d) { return d == Dir::East ? 1 : d == Dir::West ? -1 : 0; }
inline int dy_of(Dir d) { return d == Dir::North ? 1 : d == Dir::South ? -1 : 0; }
inline Dir opposite(Dir d) { return static_cast<Dir>((static_cast<int>(d) + 2) % 4); }
const char* dir_name(Dir d);
std::optional<Dir> dir_from_name(const std::string& s);

// Heading angles: E=0, N=90, W=180, S=270 degrees.
double heading_cos(Dir d);
double heading_sin(Dir d);

constexpr int kNumLandmarks = 8;
constexpr int kFeatDim = 11;  // dims 0-7 landmark one-hot, 8-9 (cos,sin), 10 navigability
using Feat = std::array<double, kFeatDim>;

// 20-token instruction vocabulary with stable ids; BOS=0, EOS=1.
namespace vocab {
constexpr int kBos = 0, kEos = 1, kWalk = 2, kNorth = 3, kSouth = 4, kEast = 5, kWest = 6,
              kTo = 7, kThe = 8, kThen = 9, kStop = 10, kAt = 11, kFirstLandmark = 12;
constexpr int kSize = 20;
const char* name(int id);
int id_of(const std::string& name);            // throws DataError on unknown token
inline int landmark_word(int lm) { return kFirstLandmark + lm; }
int direction_word(Dir d);
std::string to_string(const std::vector<int>& tokens);
std::vector<int> parse(const std::string& text);  // whitespace-separated token names
}  // namespace vocab

struct Subview {
  int landmark = 0;
  bool navigable = false;
};

// Grid graph of panoramic nodes. Node ids are cell indices y*width+x over the
// traversable cells; the graph is connected by construction.
struct World {
  int id = 0;
  int width = 0, height = 0;
  std::vector<std::uint8_t> open;                // width*height
  std::vector<std::array<Subview, kNumDirs>> sub;  // width*height, N,E,S,W

  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
  bool is_node(int node) const {
    return node >= 0 && node < width * height && open[static_cast<std::size_t>(node)];
  }
  int node_at(int x, int y) const { return y * width + x; }
  int x_of(int node) const { return node % width; }
  int y_of(int node) const { return node / width; }

  bool navigable(int node, Dir d) const;
  int neighbor(int node, Dir d) const;  // -1 when not navigable
  std::vector<int> nodes() const;
  std::size_t node_count() const;
  std::size_t edge_count() const;  // undirected

  Feat subview_feature(int node, Dir d) const;
  std::array<Feat, kNumDirs> panorama(int node) const;

  // BFS distance in edges; throws DataError if unreachable.
  int geodesic(int a, int b) const;

  std::string serialize() const;
};

// Action = move in a compass direction, or stop.
struct Action {
  bool stop = false;
  Dir dir = Dir::North;
  static Action move(Dir d) { return {false, d}; }
  static Action stop_action() { return {true, Dir::North}; }
  bool operator==(const Action& o) const { return stop == o.stop && (stop || dir == o.dir); }
};
std::string action_name(const Action& a);
Action action_from_name(const std::string& s);

// Node sequence plus the action sequence a_1..a_T, terminator STOP included
// when `terminated` (teacher paths always are; enumeration also covers cutoffs).
struct Path {
  std::vector<int> nodes;      // length T_moves + 1
  std::vector<Action> actions; // moves then optional STOP
  bool terminated = true;

  int start() const { return nodes.front(); }
  int end() const { return nodes.back(); }
  std::size_t move_count() const { return nodes.size() - 1; }
};

struct Episode {
  int world_id = 0;
  Path path;
  std::vector<int> instruction;  // BOS ... EOS; empty when unlabeled
  bool labeled = false;
};

World generate_world(std::uint64_t seed, int width, int height, double wall_density, int id = 0);

// Seeded shortest path whose geodesic endpoint distance lies in [min_len, max_len].
Path sample_path(const World& w, Rng& rng, int min_len, int max_len);

// Deterministic grammar over maximal constant-direction segments; includes BOS/EOS.
std::vector<int> oracle_instruction(const World& w, const Path& path);

struct SplitSpec {
  int train_worlds = 4;
  int unseen_worlds = 2;
  int val_seen_episodes = 20;
  int val_unseen_episodes = 20;
  int width = 5, height = 5;
  double wall_density = 0.15;
  int path_min = 2, path_max = 6;
};

struct DatasetBundle {
  std::vector<World> worlds;              // train worlds then unseen worlds
  int first_unseen = 0;                   // index of first val-unseen world
  std::vector<Episode> train_labeled;     // D
  std::vector<Episode> train_unlabeled;   // U
  std::vector<Episode> val_seen;
  std::vector<Episode> val_unseen;

  const World& world_by_id(int id) const;
};

DatasetBundle make_datasets(std::uint64_t seed, int n_labeled, int m_unlabeled, const SplitSpec& spec);

// File formats (External Interfaces).
void save_worlds(const std::vector<World>& worlds, const std::string& path);
std::vector<World> load_worlds(const std::string& path);
void save_episodes(const std::vector<Episode>& eps, const std::string& path);
std::vector<Episode> load_episodes(const std::string& path);

}  // namespace cyclenav
