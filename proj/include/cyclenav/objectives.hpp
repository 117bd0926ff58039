#pragma once

#include "cyclenav/agents.hpp"

namespace cyclenav {

// Off-policy imitation loss -log P(A|X;E).
Var il_loss(Tape& tape, const Follower& follower, Binder& fb, const SceneSource& env,
            const std::vector<int>& instruction, const Path& path);

struct RlOpts {
  double discount = 0.95;
  int success_radius = 1;  // edges
  int t_max = 12;
};

struct RlResult {
  Var policy_loss;   // -sum_t log p_t(a_t) * advantage_t, advantages constant
  Var critic_loss;   // mean squared (return_t - value_t); hidden states detached
  Path trajectory;
  std::vector<double> rewards;     // per step: shaping + terminal
  std::vector<double> returns;     // discounted suffix sums
  std::vector<double> values;      // critic estimates
  std::vector<double> advantages;  // returns - values
};

// On-policy A2C-style loss over one sampled rollout. Terminal reward +1 within
// the success radius of `goal`; per-step shaping is the decrease in geodesic
// distance to the goal.
RlResult rl_loss(Tape& tape, const Follower& follower, Binder& fb, const Critic& critic, Binder& cb,
                 const SceneSource& env, const std::vector<int>& instruction, int start_node, int goal,
                 Rng& rng, const RlOpts& opts = {});

// Teacher-forced speaker loss -log P(X|A;E).
Var speaker_mle_loss(Tape& tape, const Speaker& speaker, Binder& sb, const SceneSource& env,
                     const Path& path, const std::vector<int>& instruction);

struct CreatorLoss {
  Var loss;      // l2 + adversarial
  Var gate_l2;   // ||lambda||_2 over all mixed subviews along the path
  Var adversarial;  // log(1 - d(mixed, X, A))
};

// Creator objective; discriminator parameters are bound frozen so no gradient
// reaches them.
CreatorLoss creator_loss(Tape& tape, const Creator& creator, Binder& cb, const Discriminator& discrim,
                         Binder& db_frozen, const CounterfactualEnv& env,
                         const std::vector<int>& instruction, const Path& path);

// d(mixed,X,A) - d(real,X,A); creator output enters as materialized constants.
Var discriminator_loss(Tape& tape, const Discriminator& discrim, Binder& db, const CounterfactualEnv& env,
                       const std::vector<int>& instruction, const Path& path);

// IL/RL mixing weight: beta_i = max(beta_min, beta0 * gamma^i).
struct AnnealSchedule {
  double beta0 = 1.0;
  double gamma = 0.995;
  double beta_min = 0.2;
  double beta(std::int64_t iteration) const;
};

}  // namespace cyclenav
