#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "cyclenav/world.hpp"
#include "test_util.hpp"

using namespace cyclenav;
using namespace cyclenav::testutil;

TEST_CASE("open 4x4 grid has 16 nodes and 24 undirected edges") {
  World w = generate_world(7, 4, 4, 0.0);
  CHECK(w.node_count() == 16);
  CHECK(w.edge_count() == 24);
}

TEST_CASE("generation is deterministic: byte-identical serialization") {
  World a = generate_world(7, 4, 4, 0.2);
  World b = generate_world(7, 4, 4, 0.2);
  CHECK(a.serialize() == b.serialize());
}

TEST_CASE("walled worlds stay connected (flood-fill oracle)") {
  for (std::uint64_t seed : {7ULL, 8ULL, 9ULL, 100ULL, 555ULL}) {
    World w = generate_world(seed, 6, 6, 0.2);
    // independent flood fill
    auto ns = w.nodes();
    REQUIRE(!ns.empty());
    std::set<int> seen{ns[0]};
    std::vector<int> stack{ns[0]};
    while (!stack.empty()) {
      int n = stack.back();
      stack.pop_back();
      for (int d = 0; d < kNumDirs; ++d) {
        int m = w.neighbor(n, static_cast<Dir>(d));
        if (m >= 0 && seen.insert(m).second) stack.push_back(m);
      }
    }
    CHECK(seen.size() == ns.size());
    for (int n : ns) {
      int deg = 0;
      for (int d = 0; d < kNumDirs; ++d) deg += w.navigable(n, static_cast<Dir>(d)) ? 1 : 0;
      CHECK(deg >= 1);
      CHECK(deg <= 4);
    }
  }
}

TEST_CASE("feature vectors: one landmark dim, unit-circle heading, nav bit") {
  World w = generate_world(3, 5, 5, 0.1);
  for (int n : w.nodes()) {
    for (int d = 0; d < kNumDirs; ++d) {
      Feat f = w.subview_feature(n, static_cast<Dir>(d));
      int hot = 0;
      for (int i = 0; i < kNumLandmarks; ++i) hot += f[static_cast<std::size_t>(i)] == 1.0 ? 1 : 0;
      CHECK(hot == 1);
      CHECK(f[8] * f[8] + f[9] * f[9] == doctest::Approx(1.0).epsilon(1e-15));
      CHECK((f[10] == 0.0 || f[10] == 1.0));
    }
  }
}

TEST_CASE("panoramic observation conventions") {
  World w = corridor(3, /*landmark=*/2);  // plant
  // east wall at the last node
  Feat east_at_end = w.subview_feature(2, Dir::East);
  CHECK(east_at_end[10] == 0.0);
  // north heading dims: (cos 90, sin 90) = (0, 1)
  Feat north = w.subview_feature(0, Dir::North);
  CHECK(north[8] == 0.0);
  CHECK(north[9] == 1.0);
  // landmark plant (id 2) -> one-hot dim 2
  Feat south = w.subview_feature(1, Dir::South);
  CHECK(south[2] == 1.0);
  // observe-front equals the matching panorama entry
  auto pano = w.panorama(1);
  for (int d = 0; d < kNumDirs; ++d)
    CHECK(pano[static_cast<std::size_t>(d)] == w.subview_feature(1, static_cast<Dir>(d)));
  CHECK_THROWS_AS((void)w.subview_feature(99, Dir::North), DataError);
}

TEST_CASE("sampled paths are shortest paths in the requested band") {
  World w = generate_world(21, 5, 5, 0.15);
  Rng rng(3);
  for (int rep = 0; rep < 40; ++rep) {
    Path p = sample_path(w, rng, 2, 6);
    const int d = w.geodesic(p.start(), p.end());
    CHECK(d >= 2);
    CHECK(d <= 6);
    CHECK(static_cast<int>(p.move_count()) == d);  // BFS oracle: path length = geodesic
    CHECK(p.actions.back().stop);
    for (std::size_t i = 0; i + 1 < p.nodes.size(); ++i)
      CHECK(w.neighbor(p.nodes[i], p.actions[i].dir) == p.nodes[i + 1]);
  }
}

TEST_CASE("sample-path respects min=max=1") {
  World w = generate_world(2, 4, 4, 0.0);
  Rng rng(9);
  Path p = sample_path(w, rng, 1, 1);
  CHECK(p.move_count() == 1);
  CHECK(p.nodes.size() == 2);
  CHECK(p.actions.size() == 2);
}

TEST_CASE("open 4x4, range [2,2] gives 3 nodes, 2 moves + STOP") {
  World w = generate_world(7, 4, 4, 0.0);
  Rng rng(4);
  Path p = sample_path(w, rng, 2, 2);
  CHECK(p.nodes.size() == 3);
  CHECK(p.actions.size() == 3);
}

TEST_CASE("geodesic is a metric on sampled triples") {
  World w = generate_world(13, 5, 5, 0.2);
  auto ns = w.nodes();
  Rng rng(2);
  for (int rep = 0; rep < 30; ++rep) {
    int a = ns[rng.below(ns.size())], b = ns[rng.below(ns.size())], c = ns[rng.below(ns.size())];
    CHECK(w.geodesic(a, a) == 0);
    CHECK(w.geodesic(a, b) == w.geodesic(b, a));
    CHECK(w.geodesic(a, c) <= w.geodesic(a, b) + w.geodesic(b, c));
  }
}

TEST_CASE("oracle grammar: single segment east") {
  World w = corridor(4, /*landmark=*/2);  // plant everywhere
  Path p = path_of(w, {0, 1, 2});
  auto instr = oracle_instruction(w, p);
  CHECK(vocab::to_string(instr) == "BOS walk east to the plant then stop at the plant EOS");
}

TEST_CASE("oracle grammar: one move north toward a door") {
  World w = open_grid(2, 2);
  // node 2 = (0,1); its north-facing subview from node 0's move: arrival node is 2
  w.sub[2][static_cast<std::size_t>(Dir::North)].landmark = 0;  // door
  Path p = path_of(w, {0, 2});
  auto instr = oracle_instruction(w, p);
  CHECK(vocab::to_string(instr) == "BOS walk north to the door then stop at the door EOS");
}

TEST_CASE("oracle grammar: east-east-north yields two walk clauses and three 'the'") {
  World w = open_grid(3, 2);
  // path (0,0)->(1,0)->(2,0)->(2,1): nodes 0,1,2,5
  w.sub[2][static_cast<std::size_t>(Dir::East)].landmark = 2;   // plant at the turn
  w.sub[5][static_cast<std::size_t>(Dir::North)].landmark = 0;  // door at the goal
  Path p = path_of(w, {0, 1, 2, 5});
  auto instr = oracle_instruction(w, p);
  CHECK(vocab::to_string(instr) ==
        "BOS walk east to the plant then walk north to the door then stop at the door EOS");
  int the_count = 0;
  for (int tok : instr) the_count += tok == vocab::kThe ? 1 : 0;
  CHECK(the_count == 3);
}

TEST_CASE("oracle grammar rejects zero-move paths") {
  World w = corridor(3);
  Path p;
  p.nodes = {1};
  p.actions = {Action::stop_action()};
  CHECK_THROWS_AS((void)oracle_instruction(w, p), DataError);
}

TEST_CASE("make-datasets honors counts and split hygiene") {
  SplitSpec spec;
  spec.train_worlds = 3;
  spec.unseen_worlds = 2;
  spec.val_seen_episodes = 5;
  spec.val_unseen_episodes = 5;
  auto b = make_datasets(77, 100, 30, spec);
  CHECK(b.train_labeled.size() == 100);
  CHECK(b.train_unlabeled.size() == 30);
  CHECK(b.val_seen.size() == 5);
  CHECK(b.val_unseen.size() == 5);

  std::set<int> train_ids, unseen_ids;
  for (const auto& e : b.train_labeled) train_ids.insert(e.world_id);
  for (const auto& e : b.train_unlabeled) train_ids.insert(e.world_id);
  for (const auto& e : b.val_unseen) unseen_ids.insert(e.world_id);
  for (int id : unseen_ids) CHECK(train_ids.count(id) == 0);

  for (const auto& e : b.train_labeled) {
    CHECK(e.labeled);
    CHECK(!e.instruction.empty());
    // re-invocation oracle: stored instruction reproduces exactly
    CHECK(e.instruction == oracle_instruction(b.world_by_id(e.world_id), e.path));
  }
  for (const auto& e : b.train_unlabeled) {
    CHECK(!e.labeled);
    CHECK(e.instruction.empty());
  }
  CHECK_THROWS_AS((void)make_datasets(77, 100, 30, [] {
                    SplitSpec s;
                    s.unseen_worlds = 0;
                    return s;
                  }()),
                  DataError);
}

TEST_CASE("dataset generation is a pure function of the seed") {
  SplitSpec spec;
  auto a = make_datasets(5, 20, 10, spec);
  auto b = make_datasets(5, 20, 10, spec);
  REQUIRE(a.train_labeled.size() == b.train_labeled.size());
  for (std::size_t i = 0; i < a.train_labeled.size(); ++i) {
    CHECK(a.train_labeled[i].path.nodes == b.train_labeled[i].path.nodes);
    CHECK(a.train_labeled[i].instruction == b.train_labeled[i].instruction);
  }
  CHECK(a.worlds.size() == b.worlds.size());
  for (std::size_t i = 0; i < a.worlds.size(); ++i) CHECK(a.worlds[i].serialize() == b.worlds[i].serialize());
}

TEST_CASE("world and episode files round-trip") {
  auto b = make_datasets(31, 8, 4, SplitSpec{});
  namespace fs = std::filesystem;
  const auto wpath = fs::temp_directory_path() / "cyclenav_worlds_test.txt";
  const auto epath = fs::temp_directory_path() / "cyclenav_eps_test.tsv";
  save_worlds(b.worlds, wpath.string());
  auto worlds2 = load_worlds(wpath.string());
  REQUIRE(worlds2.size() == b.worlds.size());
  for (std::size_t i = 0; i < worlds2.size(); ++i) CHECK(worlds2[i].serialize() == b.worlds[i].serialize());

  std::vector<Episode> eps = b.train_labeled;
  eps.insert(eps.end(), b.train_unlabeled.begin(), b.train_unlabeled.end());
  save_episodes(eps, epath.string());
  auto eps2 = load_episodes(epath.string());
  REQUIRE(eps2.size() == eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    CHECK(eps2[i].world_id == eps[i].world_id);
    CHECK(eps2[i].path.nodes == eps[i].path.nodes);
    CHECK(eps2[i].labeled == eps[i].labeled);
    CHECK(eps2[i].instruction == eps[i].instruction);
    REQUIRE(eps2[i].path.actions.size() == eps[i].path.actions.size());
    for (std::size_t j = 0; j < eps[i].path.actions.size(); ++j)
      CHECK(eps2[i].path.actions[j] == eps[i].path.actions[j]);
  }
  fs::remove(wpath);
  fs::remove(epath);
}

TEST_CASE("generate_world rejects bad arguments") {
  CHECK_THROWS_AS((void)generate_world(1, 1, 4, 0.0), DataError);
  CHECK_THROWS_AS((void)generate_world(1, 4, 4, 0.9), DataError);
}
