#pragma once

#include <cmath>
#include <functional>

#include "cyclenav/param_store.hpp"
#include "cyclenav/world.hpp"

namespace cyclenav::testutil {

// Independent gradient oracle: central finite differences over every
// coordinate of `store`, rebuilding the loss from scratch per probe.
inline GradMap finite_diff(ParamStore& store, const std::function<double()>& loss, double h = 1e-5) {
  GradMap out;
  for (auto& [name, t] : store.tensors()) {
    Tensor g(t.shape);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double orig = t.data[i];
      t.data[i] = orig + h;
      const double up = loss();
      t.data[i] = orig - h;
      const double dn = loss();
      t.data[i] = orig;
      g.data[i] = (up - dn) / (2 * h);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(b), 1e-8);
}

inline double max_rel_err(const GradMap& got, const GradMap& want) {
  double worst = 0;
  for (const auto& [name, g] : want) {
    auto it = got.find(name);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double a = it == got.end() ? 0.0 : it->second.data[i];
      worst = std::max(worst, rel_err(a, g.data[i]));
    }
  }
  return worst;
}

// 1xN corridor world with chosen landmarks; every interior node has exactly
// east/west neighbors.
inline World corridor(int n, int landmark = 2) {
  World w;
  w.id = 900;
  w.width = n;
  w.height = 1;
  w.open.assign(static_cast<std::size_t>(n), 1);
  w.sub.assign(static_cast<std::size_t>(n), {});
  for (int x = 0; x < n; ++x) {
    for (int d = 0; d < kNumDirs; ++d) w.sub[static_cast<std::size_t>(x)][static_cast<std::size_t>(d)].landmark = landmark;
    w.sub[static_cast<std::size_t>(x)][static_cast<std::size_t>(Dir::East)].navigable = x + 1 < n;
    w.sub[static_cast<std::size_t>(x)][static_cast<std::size_t>(Dir::West)].navigable = x > 0;
  }
  return w;
}

// Fully open grid with seeded landmarks.
inline World open_grid(int width, int height, std::uint64_t seed = 5) {
  World w;
  w.id = 901;
  w.width = width;
  w.height = height;
  w.open.assign(static_cast<std::size_t>(width * height), 1);
  w.sub.assign(static_cast<std::size_t>(width * height), {});
  Rng rng(seed);
  for (int n = 0; n < width * height; ++n)
    for (int d = 0; d < kNumDirs; ++d) {
      auto& s = w.sub[static_cast<std::size_t>(n)][static_cast<std::size_t>(d)];
      s.landmark = static_cast<int>(rng.below(kNumLandmarks));
      const int nx = n % width + dx_of(static_cast<Dir>(d));
      const int ny = n / width + dy_of(static_cast<Dir>(d));
      s.navigable = w.in_bounds(nx, ny);
    }
  return w;
}

inline Path path_of(const World& w, std::vector<int> nodes) {
  Path p;
  p.nodes = std::move(nodes);
  for (std::size_t i = 0; i + 1 < p.nodes.size(); ++i) {
    Dir dir = Dir::North;
    bool found = false;
    for (int d = 0; d < kNumDirs; ++d)
      if (w.neighbor(p.nodes[i], static_cast<Dir>(d)) == p.nodes[i + 1]) {
        dir = static_cast<Dir>(d);
        found = true;
      }
    if (!found) throw DataError("path_of: nodes not adjacent");
    p.actions.push_back(Action::move(dir));
  }
  p.actions.push_back(Action::stop_action());
  return p;
}

}  // namespace cyclenav::testutil
