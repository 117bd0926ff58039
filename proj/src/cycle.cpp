#include "cyclenav/cycle.hpp"

#include <algorithm>

namespace cyclenav {

namespace {

// Builds the surrogate for one realized sample:
//   -primary_logprob - stopgrad(reward - baseline) * sampled_logprob
// where reward is the primary log-prob, clipped below outside the autodiff path.
Var surrogate(Tape& tape, Var primary_logprob, Var sampled_logprob, bool clipped, double clip_value,
              double baseline) {
  Var reward_var = clipped ? tape.constant_scalar(clip_value) : primary_logprob;
  Var coeff = tape.stop_gradient(tape.sub(reward_var, tape.constant_scalar(baseline)));
  return tape.sub(tape.neg(primary_logprob), tape.scalar_mul(coeff, sampled_logprob));
}

}  // namespace

CycleEstimate estimate_delta_A(Tape& tape, const Speaker& speaker, Binder& sb, const Follower& follower,
                               Binder& fb, const SceneSource& env, const Path& path,
                               const BaselineTracker& baseline_f, Rng& rng, const CycleOpts& opts) {
  if (opts.samples < 1) throw DataError("estimate_delta_A: samples must be >= 1");
  std::vector<Var> losses;
  CycleEstimate out;
  double point_acc = 0;
  for (int s = 0; s < opts.samples; ++s) {
    auto sampled = speaker.rollout(tape, sb, env, path, RolloutMode::kSample, &rng, opts.max_gen, opts.vocab_mask);
    Var follow_lp = follower.logprob(tape, fb, env, sampled.tokens, path);
    const double reward_raw = tape.scalar_value(follow_lp);
    const double reward = std::max(reward_raw, opts.reward_clip);
    const double b = baseline_f.read_or(reward);
    losses.push_back(surrogate(tape, follow_lp, sampled.logprob, reward_raw < opts.reward_clip,
                               opts.reward_clip, b));
    point_acc += -reward_raw;
    out.reward = reward;
    out.sampled_logprob = sampled.logprob_value;
    out.sampled_instruction = sampled.tokens;
  }
  out.loss = tape.mean_of(losses);
  out.point_loss = point_acc / opts.samples;
  return out;
}

CycleEstimate estimate_delta_X(Tape& tape, const Speaker& speaker, Binder& sb, const Follower& follower,
                               Binder& fb, const SceneSource& env, const std::vector<int>& instruction,
                               int start_node, const BaselineTracker& baseline_s, Rng& rng,
                               const CycleOpts& opts) {
  if (opts.samples < 1) throw DataError("estimate_delta_X: samples must be >= 1");
  std::vector<Var> losses;
  CycleEstimate out;
  double point_acc = 0;
  for (int s = 0; s < opts.samples; ++s) {
    auto sampled = follower.rollout(tape, fb, env, instruction, start_node, RolloutMode::kSample, &rng, opts.t_max);
    Var speak_lp = speaker.logprob(tape, sb, env, sampled.path, instruction, opts.vocab_mask);
    const double reward_raw = tape.scalar_value(speak_lp);
    const double reward = std::max(reward_raw, opts.reward_clip);
    const double b = baseline_s.read_or(reward);
    losses.push_back(surrogate(tape, speak_lp, sampled.logprob, reward_raw < opts.reward_clip,
                               opts.reward_clip, b));
    point_acc += -reward_raw;
    out.reward = reward;
    out.sampled_logprob = sampled.logprob_value;
    out.sampled_path = sampled.path;
  }
  out.loss = tape.mean_of(losses);
  out.point_loss = point_acc / opts.samples;
  return out;
}

CycleBatchResult cycle_loss_batch(Tape& tape, const Speaker& speaker, Binder& sb, const Follower& follower,
                                  Binder& fb, const std::vector<CycleBatchItem>& labeled,
                                  const std::vector<CycleBatchItem>& unlabeled,
                                  const CycleBatchSwitches& sw, const BaselineTracker& baseline_f,
                                  const BaselineTracker& baseline_s, Rng& rng, const CycleOpts& opts) {
  if (labeled.empty() && (sw.dA || sw.dX || sw.dA_cf || sw.dX_cf))
    throw DataError("cycle_loss_batch: labeled batch is empty but labeled cycle terms are enabled");
  CycleBatchResult out;
  std::vector<Var> terms;

  std::vector<Var> labeled_losses;
  for (const auto& item : labeled) {
    WorldScene scene(*item.world);
    std::vector<Var> parts;
    if (sw.dA) {
      auto est = estimate_delta_A(tape, speaker, sb, follower, fb, scene, item.episode->path, baseline_f, rng, opts);
      parts.push_back(est.loss);
      out.mean_dA += est.point_loss / labeled.size();
      out.rewards_f.push_back(est.reward);
    }
    if (sw.dX) {
      auto est = estimate_delta_X(tape, speaker, sb, follower, fb, scene, item.episode->instruction,
                                  item.episode->path.start(), baseline_s, rng, opts);
      parts.push_back(est.loss);
      out.mean_dX += est.point_loss / labeled.size();
      out.rewards_s.push_back(est.reward);
    }
    if (item.counterfactual && (sw.dA_cf || sw.dX_cf)) {
      OverlayScene cf = item.counterfactual->scene();
      if (sw.dA_cf) {
        auto est = estimate_delta_A(tape, speaker, sb, follower, fb, cf, item.episode->path, baseline_f, rng, opts);
        parts.push_back(est.loss);
        out.mean_dA_cf += est.point_loss / labeled.size();
        out.rewards_f.push_back(est.reward);
      }
      if (sw.dX_cf) {
        auto est = estimate_delta_X(tape, speaker, sb, follower, fb, cf, item.episode->instruction,
                                    item.episode->path.start(), baseline_s, rng, opts);
        parts.push_back(est.loss);
        out.mean_dX_cf += est.point_loss / labeled.size();
        out.rewards_s.push_back(est.reward);
      }
    }
    if (!parts.empty()) labeled_losses.push_back(tape.add_all(parts));
  }
  if (!labeled_losses.empty()) terms.push_back(tape.mean_of(labeled_losses));

  if (sw.dAu && !unlabeled.empty()) {
    std::vector<Var> u_losses;
    for (const auto& item : unlabeled) {
      WorldScene scene(*item.world);
      auto est = estimate_delta_A(tape, speaker, sb, follower, fb, scene, item.episode->path, baseline_f, rng, opts);
      u_losses.push_back(est.loss);
      out.mean_dAu += est.point_loss / unlabeled.size();
      out.rewards_f.push_back(est.reward);
    }
    terms.push_back(tape.mean_of(u_losses));
  }

  if (terms.empty()) throw DataError("cycle_loss_batch: no cycle terms enabled");
  out.loss = tape.add_all(terms);
  return out;
}

}  // namespace cyclenav
