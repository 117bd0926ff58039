#pragma once

#include <optional>

#include "cyclenav/agents.hpp"

namespace cyclenav {

// Running scalar baseline: EMA of past rewards, initialized at the first
// observed value. Reads for the current sample happen before its update.
struct BaselineTracker {
  double momentum = 0.95;
  double value = 0.0;
  bool initialized = false;

  double read_or(double fallback) const { return initialized ? value : fallback; }
  void update(double reward) {
    value = initialized ? momentum * value + (1.0 - momentum) * reward : reward;
    initialized = true;
  }
};

struct CycleOpts {
  int samples = 1;            // intermediate samples averaged per estimate
  double reward_clip = -50.0; // floor applied to log-prob rewards outside the autodiff path
  int t_max = 12;
  int max_gen = 0;            // 0 -> speaker default
  const std::vector<std::uint8_t>* vocab_mask = nullptr;
};

// One-sample surrogate whose gradients reproduce the score-function estimator:
//   loss = -log P(primary|sampled) - stopgrad(clip(reward) - baseline) * log P(sampled|conditioning).
struct CycleEstimate {
  Var loss;
  double point_loss = 0;       // -log P(primary | sampled), averaged over samples
  double reward = 0;           // clipped reward fed to the baseline (last sample)
  double sampled_logprob = 0;  // log P(sampled | conditioning) (last sample)
  std::vector<int> sampled_instruction;  // delta-A: the sampled X-hat
  Path sampled_path;                     // delta-X: the sampled A-hat
};

// Cycle error for a path: sample X-hat ~ P(.|A;E), reward log P(A|X-hat;E).
CycleEstimate estimate_delta_A(Tape& tape, const Speaker& speaker, Binder& sb, const Follower& follower,
                               Binder& fb, const SceneSource& env, const Path& path,
                               const BaselineTracker& baseline_f, Rng& rng, const CycleOpts& opts = {});

// Cycle error for an instruction: sample A-hat ~ P(.|X;E), reward log P(X|A-hat;E).
CycleEstimate estimate_delta_X(Tape& tape, const Speaker& speaker, Binder& sb, const Follower& follower,
                               Binder& fb, const SceneSource& env, const std::vector<int>& instruction,
                               int start_node, const BaselineTracker& baseline_s, Rng& rng,
                               const CycleOpts& opts = {});

struct CycleBatchItem {
  const World* world = nullptr;
  const Episode* episode = nullptr;
  const CounterfactualEnv* counterfactual = nullptr;  // optional, labeled items only
};

struct CycleBatchResult {
  Var loss;
  double mean_dA = 0, mean_dX = 0, mean_dAu = 0, mean_dA_cf = 0, mean_dX_cf = 0;
  std::vector<double> rewards_f;  // for baseline_f updates, in evaluation order
  std::vector<double> rewards_s;  // for baseline_s updates
};

struct CycleBatchSwitches {
  bool dA = true, dX = true, dAu = true, dA_cf = false, dX_cf = false;
};

// Combined batch loss: mean over labeled of (dA + dX), plus mean over unlabeled
// of dA', plus mean over labeled of the counterfactual pair when enabled.
// Baselines are snapshotted once for the whole batch.
CycleBatchResult cycle_loss_batch(Tape& tape, const Speaker& speaker, Binder& sb, const Follower& follower,
                                  Binder& fb, const std::vector<CycleBatchItem>& labeled,
                                  const std::vector<CycleBatchItem>& unlabeled,
                                  const CycleBatchSwitches& sw, const BaselineTracker& baseline_f,
                                  const BaselineTracker& baseline_s, Rng& rng, const CycleOpts& opts = {});

}  // namespace cyclenav
