#include "cyclenav/objectives.hpp"

#include <cmath>

namespace cyclenav {

Var il_loss(Tape& tape, const Follower& follower, Binder& fb, const SceneSource& env,
            const std::vector<int>& instruction, const Path& path) {
  return tape.neg(follower.logprob(tape, fb, env, instruction, path));
}

RlResult rl_loss(Tape& tape, const Follower& follower, Binder& fb, const Critic& critic, Binder& cb,
                 const SceneSource& env, const std::vector<int>& instruction, int start_node, int goal,
                 Rng& rng, const RlOpts& opts) {
  auto roll = follower.rollout(tape, fb, env, instruction, start_node, RolloutMode::kSample, &rng, opts.t_max);
  RlResult out;
  out.trajectory = roll.path;
  const World& w = env.world();

  // Per-step reward: geodesic shaping on moves, terminal success bonus on the
  // last step. Turns and STOP have zero shaping.
  int node = start_node;
  int heading = static_cast<int>(Dir::North);
  for (std::size_t t = 0; t < roll.steps.size(); ++t) {
    double r = 0;
    int next = node;
    if (follower.cfg.space == ActionSpace::kPanoramic) {
      if (roll.steps[t].chosen != kSlotStop) next = w.neighbor(node, static_cast<Dir>(roll.steps[t].chosen));
    } else {
      switch (static_cast<LowAction>(roll.steps[t].chosen)) {
        case LowAction::kLeft: heading = (heading + 3) % 4; break;
        case LowAction::kRight: heading = (heading + 1) % 4; break;
        case LowAction::kForward: next = w.neighbor(node, static_cast<Dir>(heading)); break;
        case LowAction::kStop: break;
      }
    }
    if (next != node) r += static_cast<double>(w.geodesic(node, goal) - w.geodesic(next, goal));
    node = next;
    if (t + 1 == roll.steps.size() && w.geodesic(node, goal) <= opts.success_radius) r += 1.0;
    out.rewards.push_back(r);
  }

  out.returns.assign(out.rewards.size(), 0.0);
  double acc = 0;
  for (std::size_t t = out.rewards.size(); t-- > 0;) {
    acc = out.rewards[t] + opts.discount * acc;
    out.returns[t] = acc;
  }

  std::vector<Var> policy_terms;
  std::vector<Var> critic_terms;
  for (std::size_t t = 0; t < roll.steps.size(); ++t) {
    Var v = critic.value(tape, cb, tape.stop_gradient(roll.steps[t].hidden));
    const double value = tape.scalar_value(v);
    out.values.push_back(value);
    out.advantages.push_back(out.returns[t] - value);
    policy_terms.push_back(tape.scalar_mul(tape.constant_scalar(out.advantages[t]), roll.steps[t].logp));
    Var err = tape.sub(tape.constant_scalar(out.returns[t]), v);
    critic_terms.push_back(tape.mul(err, err));
  }
  out.policy_loss = tape.neg(tape.add_all(policy_terms));
  out.critic_loss = tape.mean_of(critic_terms);
  return out;
}

Var speaker_mle_loss(Tape& tape, const Speaker& speaker, Binder& sb, const SceneSource& env,
                     const Path& path, const std::vector<int>& instruction) {
  if (instruction.empty()) throw DataError("speaker_mle_loss: empty instruction");
  return tape.neg(speaker.logprob(tape, sb, env, path, instruction));
}

CreatorLoss creator_loss(Tape& tape, const Creator& creator, Binder& cb, const Discriminator& discrim,
                         Binder& db_frozen, const CounterfactualEnv& env,
                         const std::vector<int>& instruction, const Path& path) {
  auto mixes = creator.build_mix_graph(tape, cb, env, instruction, path);
  std::vector<Var> gate_sq;
  std::map<int, std::array<Var, kNumDirs>> mixed_vars;
  for (auto& [node, mv] : mixes) {
    mixed_vars[node] = mv.mixed;
    for (int d = 0; d < kNumDirs; ++d) {
      Var l = mv.gate[static_cast<std::size_t>(d)];
      gate_sq.push_back(tape.mul(l, l));
    }
  }
  CreatorLoss out;
  out.gate_l2 = tape.sqrt(tape.add_all(gate_sq));
  GraphScene mixed_scene(*env.base, tape, std::move(mixed_vars));
  Var d_score = discrim.score(tape, db_frozen, mixed_scene, path, instruction);
  out.adversarial = tape.log(tape.sub(tape.constant_scalar(1.0), d_score));
  out.loss = tape.add(out.gate_l2, out.adversarial);
  return out;
}

Var discriminator_loss(Tape& tape, const Discriminator& discrim, Binder& db, const CounterfactualEnv& env,
                       const std::vector<int>& instruction, const Path& path) {
  OverlayScene mixed = env.scene();
  WorldScene real(*env.base);
  Var d_mixed = discrim.score(tape, db, mixed, path, instruction);
  Var d_real = discrim.score(tape, db, real, path, instruction);
  return tape.sub(d_mixed, d_real);
}

double AnnealSchedule::beta(std::int64_t iteration) const {
  return std::max(beta_min, beta0 * std::pow(gamma, static_cast<double>(iteration)));
}

}  // namespace cyclenav
