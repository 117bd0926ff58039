#include "cyclenav/agents.hpp"

#include <algorithm>
#include <set>

namespace cyclenav {

Var feat_const(Tape& tape, const Feat& f) {
  Tensor t({kFeatDim});
  std::copy(f.begin(), f.end(), t.data.begin());
  return tape.constant(std::move(t));
}

static Var zero_feat(Tape& tape) { return tape.constant(Tensor::zeros({kFeatDim})); }

std::array<Var, kNumDirs> WorldScene::subviews(Tape& tape, int node) const {
  std::array<Var, kNumDirs> out;
  for (int d = 0; d < kNumDirs; ++d) out[static_cast<std::size_t>(d)] = feat_const(tape, w_->subview_feature(node, static_cast<Dir>(d)));
  return out;
}

std::array<Var, kNumDirs> OverlayScene::subviews(Tape& tape, int node) const {
  auto it = overrides_->find(node);
  if (it == overrides_->end()) return WorldScene(*w_).subviews(tape, node);
  std::array<Var, kNumDirs> out;
  for (int d = 0; d < kNumDirs; ++d) out[static_cast<std::size_t>(d)] = feat_const(tape, it->second[static_cast<std::size_t>(d)]);
  return out;
}

Feat OverlayScene::subview_value(int node, Dir d) const {
  auto it = overrides_->find(node);
  if (it == overrides_->end()) return w_->subview_feature(node, d);
  return it->second[static_cast<std::size_t>(d)];
}

std::array<Var, kNumDirs> GraphScene::subviews(Tape& tape, int node) const {
  if (&tape != tape_) throw DataError("GraphScene: subviews requested on a foreign tape");
  auto it = mixed_.find(node);
  if (it == mixed_.end()) return WorldScene(*w_).subviews(tape, node);
  return it->second;
}

Feat GraphScene::subview_value(int node, Dir d) const {
  auto it = mixed_.find(node);
  if (it == mixed_.end()) return w_->subview_feature(node, d);
  const Tensor& t = tape_->value(it->second[static_cast<std::size_t>(d)]);
  Feat f{};
  std::copy(t.data.begin(), t.data.end(), f.begin());
  return f;
}

LstmCell LstmCell::create(ParamStore& store, const std::string& prefix, int in_dim, int hidden, Rng& rng) {
  const auto H = static_cast<std::size_t>(hidden);
  const auto Z = static_cast<std::size_t>(in_dim + hidden);
  for (const char* gate : {"i", "f", "o", "g"}) {
    store.add(prefix + ".W" + gate, {H, Z}, Z, rng);
    store.add(prefix + ".b" + gate, {H}, Z, rng);
  }
  return {prefix, in_dim, hidden};
}

LstmCell::State LstmCell::initial(Tape& tape) const {
  const Var z = tape.constant(Tensor::zeros({static_cast<std::size_t>(hidden)}));
  return {z, z};
}

LstmCell::State LstmCell::step(Tape& tape, Binder& p, Var x, const State& prev) const {
  Var z = tape.concat({x, prev.h});
  Var i = tape.sigmoid(tape.add(tape.matmul(p[prefix + ".Wi"], z), p[prefix + ".bi"]));
  Var f = tape.sigmoid(tape.add(tape.matmul(p[prefix + ".Wf"], z), p[prefix + ".bf"]));
  Var o = tape.sigmoid(tape.add(tape.matmul(p[prefix + ".Wo"], z), p[prefix + ".bo"]));
  Var g = tape.tanh(tape.add(tape.matmul(p[prefix + ".Wg"], z), p[prefix + ".bg"]));
  Var c = tape.add(tape.mul(f, prev.c), tape.mul(i, g));
  Var h = tape.mul(o, tape.tanh(c));
  return {h, c};
}

TextEncoder TextEncoder::create(ParamStore& store, const std::string& prefix, int embed, int hidden, Rng& rng) {
  store.add(prefix + ".emb", {static_cast<std::size_t>(vocab::kSize), static_cast<std::size_t>(embed)},
            static_cast<std::size_t>(embed), rng);
  LstmCell::create(store, prefix + ".rnn", embed, hidden, rng);
  return {prefix, embed, hidden};
}

TextEncoder::Out TextEncoder::encode(Tape& tape, Binder& p, const std::vector<int>& tokens) const {
  if (tokens.empty()) throw DataError("TextEncoder: empty token sequence");
  const LstmCell rnn = LstmCell::ref(prefix + ".rnn", embed, hidden);
  Out out;
  auto state = rnn.initial(tape);
  for (int tok : tokens) {
    if (tok < 0 || tok >= vocab::kSize) throw DataError("TextEncoder: token id out of range");
    Var x = tape.embed_lookup(p[prefix + ".emb"], static_cast<std::size_t>(tok));
    state = rnn.step(tape, p, x, state);
    out.token_enc.push_back(state.h);
  }
  out.final_state = state;
  return out;
}

Var dot_attention(Tape& tape, Var query, const std::vector<Var>& keys) {
  std::vector<Var> scores;
  scores.reserve(keys.size());
  for (Var k : keys) scores.push_back(tape.dot(query, k));
  Var w = tape.softmax(tape.concat(scores));
  Var ctx = tape.scalar_mul(tape.pick(w, 0), keys[0]);
  for (std::size_t l = 1; l < keys.size(); ++l)
    ctx = tape.add(ctx, tape.scalar_mul(tape.pick(w, l), keys[l]));
  return ctx;
}

Var mean_pool(Tape& tape, const std::vector<Var>& vs) {
  if (vs.empty()) throw DataError("mean_pool: empty list");
  Var acc = vs[0];
  for (std::size_t i = 1; i < vs.size(); ++i) acc = tape.add(acc, vs[i]);
  return tape.scale(acc, 1.0 / static_cast<double>(vs.size()));
}

// ---------------------------------------------------------------------------
// Follower
// ---------------------------------------------------------------------------

void Follower::init(std::uint64_t seed) {
  Rng rng(seed);
  params = ParamStore{};
  TextEncoder::create(params, "instr", cfg.embed, cfg.hidden, rng);
  // Decoder input: [scene(11), instruction context(H), previous action(11)].
  LstmCell::create(params, "dec", kFeatDim + cfg.hidden + kFeatDim, cfg.hidden, rng);
  if (cfg.space == ActionSpace::kPanoramic) {
    params.add("W2", {static_cast<std::size_t>(kFeatDim), static_cast<std::size_t>(cfg.hidden)},
               static_cast<std::size_t>(cfg.hidden), rng);
  } else {
    params.add("W1", {static_cast<std::size_t>(kLowSlots), static_cast<std::size_t>(cfg.hidden)},
               static_cast<std::size_t>(cfg.hidden), rng);
    params.add("act_emb", {static_cast<std::size_t>(kLowSlots), static_cast<std::size_t>(kFeatDim)},
               static_cast<std::size_t>(kFeatDim), rng);
  }
}

Var Follower::token_context(Tape& tape, Var h_prev, const std::vector<Var>& token_enc) const {
  if (cfg.mean_pool_context) return mean_pool(tape, token_enc);
  return dot_attention(tape, h_prev, token_enc);
}

namespace {

struct PanoStep {
  Var dist;
  std::vector<double> probs;
  std::vector<std::uint8_t> mask;
};

PanoStep pano_distribution(Tape& tape, Binder& p, const SceneSource& env, int node,
                           const std::array<Var, kNumDirs>& scene, Var h) {
  Var w2h = tape.matmul(p["W2"], h);  // (11)
  std::vector<Var> logits;
  std::vector<std::uint8_t> mask;
  for (int d = 0; d < kNumDirs; ++d) {
    logits.push_back(tape.dot(scene[static_cast<std::size_t>(d)], w2h));
    mask.push_back(env.world().navigable(node, static_cast<Dir>(d)) ? 1 : 0);
  }
  logits.push_back(tape.constant_scalar(0.0));  // STOP embedding is the zero vector
  mask.push_back(1);
  PanoStep out;
  out.dist = tape.softmax_masked(tape.concat(logits), mask);
  out.probs = tape.value(out.dist).data;
  out.mask = std::move(mask);
  return out;
}

int choose_slot(const std::vector<double>& probs, RolloutMode mode, Rng* rng) {
  if (mode == RolloutMode::kGreedy) {
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
  if (!rng) throw DataError("rollout: sample mode requires an rng");
  return static_cast<int>(rng->categorical(probs));
}

}  // namespace

std::vector<LowAction> Follower::expand_lowlevel(const Path& path) {
  std::vector<LowAction> out;
  int heading = static_cast<int>(Dir::North);
  for (const Action& a : path.actions) {
    if (a.stop) {
      out.push_back(LowAction::kStop);
      continue;
    }
    const int want = static_cast<int>(a.dir);
    const int delta = (want - heading + 4) % 4;
    if (delta == 1) out.push_back(LowAction::kRight);
    else if (delta == 3) out.push_back(LowAction::kLeft);
    else if (delta == 2) {
      out.push_back(LowAction::kRight);
      out.push_back(LowAction::kRight);
    }
    heading = want;
    out.push_back(LowAction::kForward);
  }
  return out;
}

FollowerRollout Follower::rollout(Tape& tape, Binder& p, const SceneSource& env,
                                  const std::vector<int>& instruction, int start_node, RolloutMode mode,
                                  Rng* rng, int t_max_override) const {
  if (instruction.empty()) throw DataError("follower rollout: empty instruction");
  const int t_max = t_max_override > 0 ? t_max_override : cfg.t_max;
  const TextEncoder enc_ref{"instr", cfg.embed, cfg.hidden};
  const LstmCell dec = LstmCell::ref("dec", kFeatDim + cfg.hidden + kFeatDim, cfg.hidden);
  auto enc = enc_ref.encode(tape, p, instruction);
  auto state = enc.final_state;
  Var prev_a = zero_feat(tape);

  FollowerRollout out;
  out.path.nodes.push_back(start_node);
  std::vector<Var> logps;
  int node = start_node;
  int heading = static_cast<int>(Dir::North);  // low-level only

  for (int t = 0; t < t_max; ++t) {
    auto scene = env.subviews(tape, node);
    Var ctx = token_context(tape, state.h, enc.token_enc);
    StepRecord rec;
    rec.node = node;
    bool stopped = false;
    if (cfg.space == ActionSpace::kPanoramic) {
      Var pooled = tape.max_pool_set({scene[0], scene[1], scene[2], scene[3]});
      state = dec.step(tape, p, tape.concat({pooled, ctx, prev_a}), state);
      auto step = pano_distribution(tape, p, env, node, scene, state.h);
      rec.dist = step.dist;
      rec.probs = step.probs;
      rec.chosen = choose_slot(step.probs, mode, rng);
      rec.logp = tape.log(tape.pick(step.dist, static_cast<std::size_t>(rec.chosen)));
      rec.hidden = state.h;
      if (rec.chosen == kSlotStop) {
        out.path.actions.push_back(Action::stop_action());
        prev_a = zero_feat(tape);
        stopped = true;
      } else {
        const Dir d = static_cast<Dir>(rec.chosen);
        out.path.actions.push_back(Action::move(d));
        prev_a = scene[static_cast<std::size_t>(rec.chosen)];
        node = env.world().neighbor(node, d);
        out.path.nodes.push_back(node);
      }
    } else {
      Var front = scene[static_cast<std::size_t>(heading)];
      state = dec.step(tape, p, tape.concat({front, ctx, prev_a}), state);
      std::vector<std::uint8_t> mask{1, 1,
                                     env.world().navigable(node, static_cast<Dir>(heading)) ? std::uint8_t{1} : std::uint8_t{0},
                                     1};
      Var dist = tape.softmax_masked(tape.matmul(p["W1"], state.h), mask);
      rec.dist = dist;
      rec.probs = tape.value(dist).data;
      rec.chosen = choose_slot(rec.probs, mode, rng);
      rec.logp = tape.log(tape.pick(dist, static_cast<std::size_t>(rec.chosen)));
      rec.hidden = state.h;
      prev_a = tape.embed_lookup(p["act_emb"], static_cast<std::size_t>(rec.chosen));
      switch (static_cast<LowAction>(rec.chosen)) {
        case LowAction::kLeft: heading = (heading + 3) % 4; break;
        case LowAction::kRight: heading = (heading + 1) % 4; break;
        case LowAction::kForward: {
          const Dir d = static_cast<Dir>(heading);
          out.path.actions.push_back(Action::move(d));
          node = env.world().neighbor(node, d);
          out.path.nodes.push_back(node);
          break;
        }
        case LowAction::kStop:
          out.path.actions.push_back(Action::stop_action());
          stopped = true;
          break;
      }
    }
    logps.push_back(rec.logp);
    out.steps.push_back(rec);
    if (stopped) {
      out.path.terminated = true;
      break;
    }
    out.path.terminated = false;
  }
  out.logprob = tape.add_all(logps);
  out.logprob_value = tape.scalar_value(out.logprob);
  return out;
}

Var Follower::logprob(Tape& tape, Binder& p, const SceneSource& env, const std::vector<int>& instruction,
                      const Path& path) const {
  if (instruction.empty()) throw DataError("follower logprob: empty instruction");
  if (path.nodes.empty()) throw DataError("follower logprob: empty path");
  const TextEncoder enc_ref{"instr", cfg.embed, cfg.hidden};
  const LstmCell dec = LstmCell::ref("dec", kFeatDim + cfg.hidden + kFeatDim, cfg.hidden);
  auto enc = enc_ref.encode(tape, p, instruction);
  auto state = enc.final_state;
  Var prev_a = zero_feat(tape);
  std::vector<Var> logps;

  if (cfg.space == ActionSpace::kPanoramic) {
    int node = path.nodes[0];
    std::size_t move_idx = 0;
    for (const Action& a : path.actions) {
      auto scene = env.subviews(tape, node);
      Var ctx = token_context(tape, state.h, enc.token_enc);
      Var pooled = tape.max_pool_set({scene[0], scene[1], scene[2], scene[3]});
      state = dec.step(tape, p, tape.concat({pooled, ctx, prev_a}), state);
      auto step = pano_distribution(tape, p, env, node, scene, state.h);
      const int slot = a.stop ? kSlotStop : static_cast<int>(a.dir);
      if (!step.mask[static_cast<std::size_t>(slot)])
        throw DataError("follower logprob: illegal action " + action_name(a) + " at node " + std::to_string(node));
      logps.push_back(tape.log(tape.pick(step.dist, static_cast<std::size_t>(slot))));
      if (!a.stop) {
        prev_a = scene[static_cast<std::size_t>(slot)];
        node = env.world().neighbor(node, a.dir);
        ++move_idx;
        if (move_idx >= path.nodes.size() || path.nodes[move_idx] != node)
          throw DataError("follower logprob: path nodes and actions disagree");
      } else {
        prev_a = zero_feat(tape);
      }
    }
  } else {
    const auto low = expand_lowlevel(path);
    int node = path.nodes[0];
    int heading = static_cast<int>(Dir::North);
    for (LowAction la : low) {
      auto scene = env.subviews(tape, node);
      Var ctx = token_context(tape, state.h, enc.token_enc);
      Var front = scene[static_cast<std::size_t>(heading)];
      state = dec.step(tape, p, tape.concat({front, ctx, prev_a}), state);
      const bool fwd_ok = env.world().navigable(node, static_cast<Dir>(heading));
      std::vector<std::uint8_t> mask{1, 1, fwd_ok ? std::uint8_t{1} : std::uint8_t{0}, 1};
      if (la == LowAction::kForward && !fwd_ok)
        throw DataError("follower logprob: illegal forward at node " + std::to_string(node));
      Var dist = tape.softmax_masked(tape.matmul(p["W1"], state.h), mask);
      logps.push_back(tape.log(tape.pick(dist, static_cast<std::size_t>(la))));
      prev_a = tape.embed_lookup(p["act_emb"], static_cast<std::size_t>(la));
      if (la == LowAction::kLeft) heading = (heading + 3) % 4;
      if (la == LowAction::kRight) heading = (heading + 1) % 4;
      if (la == LowAction::kForward) node = env.world().neighbor(node, static_cast<Dir>(heading));
    }
  }
  return tape.add_all(logps);
}

// ---------------------------------------------------------------------------
// Speaker
// ---------------------------------------------------------------------------

void Speaker::init(std::uint64_t seed) {
  Rng rng(seed);
  params = ParamStore{};
  // Encoder input: [scene(11), action embedding(11)].
  LstmCell::create(params, "enc", 2 * kFeatDim, cfg.hidden, rng);
  params.add("emb", {static_cast<std::size_t>(vocab::kSize), static_cast<std::size_t>(cfg.embed)},
             static_cast<std::size_t>(cfg.embed), rng);
  // Decoder input: [token embedding(E), attention context(H), encoder summary(H)].
  LstmCell::create(params, "dec", cfg.embed + 2 * cfg.hidden, cfg.hidden, rng);
  params.add("Wout", {static_cast<std::size_t>(vocab::kSize), static_cast<std::size_t>(cfg.hidden)},
             static_cast<std::size_t>(cfg.hidden), rng);
  params.add("bout", {static_cast<std::size_t>(vocab::kSize)}, static_cast<std::size_t>(cfg.hidden), rng);
}

Speaker::Enc Speaker::encode_path(Tape& tape, Binder& p, const SceneSource& env, const Path& path) const {
  if (path.nodes.empty() || path.actions.empty()) throw DataError("speaker: empty path");
  const LstmCell enc = LstmCell::ref("enc", 2 * kFeatDim, cfg.hidden);
  Enc out;
  auto state = enc.initial(tape);
  int node = path.nodes[0];
  std::size_t move_idx = 0;
  for (const Action& a : path.actions) {
    auto scene = env.subviews(tape, node);
    Var pooled = tape.max_pool_set({scene[0], scene[1], scene[2], scene[3]});
    Var act = a.stop ? zero_feat(tape) : scene[static_cast<std::size_t>(a.dir)];
    state = enc.step(tape, p, tape.concat({pooled, act}), state);
    out.outputs.push_back(state.h);
    if (!a.stop) {
      node = env.world().neighbor(node, a.dir);
      if (node < 0) throw DataError("speaker: path leaves the graph");
      ++move_idx;
      if (move_idx >= path.nodes.size() || path.nodes[move_idx] != node)
        throw DataError("speaker: path nodes and actions disagree");
    }
  }
  out.final_state = state;
  return out;
}

SpeakerRollout Speaker::rollout(Tape& tape, Binder& p, const SceneSource& env, const Path& path,
                                RolloutMode mode, Rng* rng, int max_gen_override,
                                const std::vector<std::uint8_t>* vocab_mask) const {
  const LstmCell dec = LstmCell::ref("dec", cfg.embed + 2 * cfg.hidden, cfg.hidden);
  auto enc = encode_path(tape, p, env, path);
  const int max_gen = max_gen_override > 0 ? max_gen_override : cfg.l_max - 1;

  SpeakerRollout out;
  out.tokens.push_back(vocab::kBos);
  auto state = enc.final_state;
  std::vector<Var> logps;
  int prev = vocab::kBos;
  for (int l = 0; l < max_gen; ++l) {
    Var ctx = dot_attention(tape, state.h, enc.outputs);
    Var x = tape.concat({tape.embed_lookup(p["emb"], static_cast<std::size_t>(prev)), ctx, enc.outputs.back()});
    state = dec.step(tape, p, x, state);
    Var logits = tape.add(tape.matmul(p["Wout"], state.h), p["bout"]);
    Var dist = vocab_mask ? tape.softmax_masked(logits, *vocab_mask) : tape.softmax(logits);
    StepRecord rec;
    rec.dist = dist;
    rec.probs = tape.value(dist).data;
    rec.chosen = choose_slot(rec.probs, mode, rng);
    rec.logp = tape.log(tape.pick(dist, static_cast<std::size_t>(rec.chosen)));
    rec.hidden = state.h;
    logps.push_back(rec.logp);
    out.steps.push_back(rec);
    out.tokens.push_back(rec.chosen);
    prev = rec.chosen;
    if (rec.chosen == vocab::kEos) break;
  }
  out.logprob = tape.add_all(logps);
  out.logprob_value = tape.scalar_value(out.logprob);
  return out;
}

Var Speaker::logprob(Tape& tape, Binder& p, const SceneSource& env, const Path& path,
                     const std::vector<int>& instruction, const std::vector<std::uint8_t>* vocab_mask) const {
  if (instruction.size() < 2 || instruction[0] != vocab::kBos)
    throw DataError("speaker logprob: instruction must start with BOS and carry at least one token");
  const LstmCell dec = LstmCell::ref("dec", cfg.embed + 2 * cfg.hidden, cfg.hidden);
  auto enc = encode_path(tape, p, env, path);
  auto state = enc.final_state;
  std::vector<Var> logps;
  for (std::size_t l = 1; l < instruction.size(); ++l) {
    Var ctx = dot_attention(tape, state.h, enc.outputs);
    Var x = tape.concat({tape.embed_lookup(p["emb"], static_cast<std::size_t>(instruction[l - 1])), ctx,
                         enc.outputs.back()});
    state = dec.step(tape, p, x, state);
    Var logits = tape.add(tape.matmul(p["Wout"], state.h), p["bout"]);
    Var dist = vocab_mask ? tape.softmax_masked(logits, *vocab_mask) : tape.softmax(logits);
    logps.push_back(tape.log(tape.pick(dist, static_cast<std::size_t>(instruction[l]))));
  }
  return tape.add_all(logps);
}

// ---------------------------------------------------------------------------
// Creator
// ---------------------------------------------------------------------------

void Creator::init(std::uint64_t seed) {
  Rng rng(seed);
  params = ParamStore{};
  TextEncoder::create(params, "instr", cfg.embed, cfg.hidden, rng);
  // Main recurrence input: [scene(11), action(11), pooled instruction(H)].
  LstmCell::create(params, "main", 2 * kFeatDim + cfg.hidden, cfg.hidden, rng);
  params.add("W3", {static_cast<std::size_t>(cfg.hidden), static_cast<std::size_t>(kFeatDim)},
             static_cast<std::size_t>(kFeatDim), rng);
}

Var Creator::descriptor(Tape& tape, Binder& p, const SceneSource& env, const Path& path,
                        const std::vector<int>& instruction) const {
  if (path.nodes.empty() || path.actions.empty()) throw DataError("creator: empty path");
  const TextEncoder enc_ref{"instr", cfg.embed, cfg.hidden};
  auto text = enc_ref.encode(tape, p, instruction);
  Var pooled_x = mean_pool(tape, text.token_enc);
  const LstmCell main = LstmCell::ref("main", 2 * kFeatDim + cfg.hidden, cfg.hidden);
  auto state = main.initial(tape);
  int node = path.nodes[0];
  for (const Action& a : path.actions) {
    auto scene = env.subviews(tape, node);
    Var pooled_v = tape.max_pool_set({scene[0], scene[1], scene[2], scene[3]});
    Var act = a.stop ? zero_feat(tape) : scene[static_cast<std::size_t>(a.dir)];
    state = main.step(tape, p, tape.concat({pooled_v, act, pooled_x}), state);
    if (!a.stop) node = env.world().neighbor(node, a.dir);
  }
  return state.h;
}

MixVars Creator::mix_scene(Tape& tape, Binder& p, Var u, const std::array<Var, kNumDirs>& scene,
                           const std::array<Var, kNumDirs>& reference, double gate_logit_bias) const {
  const Tensor& u_val = tape.value(u);
  if (u_val.numel() != static_cast<std::size_t>(cfg.hidden))
    throw ShapeError("creator mix: descriptor has shape " + u_val.shape_str());
  for (const auto& v : scene)
    if (tape.value(v).numel() != kFeatDim) throw ShapeError("creator mix: scene feature dim mismatch");
  for (const auto& v : reference)
    if (tape.value(v).numel() != kFeatDim) throw ShapeError("creator mix: reference feature dim mismatch");

  MixVars out;
  for (int k = 0; k < kNumDirs; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    std::vector<Var> corr;
    for (int j = 0; j < kNumDirs; ++j) corr.push_back(tape.dot(reference[static_cast<std::size_t>(j)], scene[ks]));
    Var q = tape.softmax(tape.concat(corr));
    Var g = tape.scalar_mul(tape.pick(q, 0), reference[0]);
    for (std::size_t j = 1; j < kNumDirs; ++j) g = tape.add(g, tape.scalar_mul(tape.pick(q, j), reference[j]));
    Var logit = tape.dot(u, tape.matmul(p["W3"], scene[ks]));
    if (gate_logit_bias != 0.0) logit = tape.add(logit, tape.constant_scalar(gate_logit_bias));
    Var lambda = tape.sigmoid(logit);
    Var keep = tape.scalar_mul(lambda, scene[ks]);
    Var swap = tape.scalar_mul(tape.sub(tape.constant_scalar(1.0), lambda), g);
    out.attn[ks] = q;
    out.summary[ks] = g;
    out.gate[ks] = lambda;
    out.mixed[ks] = tape.add(keep, swap);
  }
  return out;
}

CounterfactualEnv Creator::make_env(const World& base, const std::vector<int>& instruction, const Path& path,
                                    const World& reference, std::uint64_t node_map_seed) const {
  if (&base == &reference)
    throw DataError("creator make_env: reference world must differ from the base world");
  CounterfactualEnv env;
  env.base = &base;
  env.reference = &reference;
  env.node_map_seed = node_map_seed;

  Rng rng(node_map_seed);
  const auto ref_nodes = reference.nodes();
  for (int node : path.nodes) {
    if (env.ref_nodes.count(node)) continue;
    env.ref_nodes[node] = ref_nodes[rng.below(ref_nodes.size())];
  }

  Tape tape;
  Binder p(tape, params, "c", false);
  auto mixes = build_mix_graph(tape, p, env, instruction, path);
  for (const auto& [node, mv] : mixes) {
    std::array<Feat, kNumDirs> feats{};
    std::array<double, kNumDirs> gates{};
    for (int d = 0; d < kNumDirs; ++d) {
      const Tensor& t = tape.value(mv.mixed[static_cast<std::size_t>(d)]);
      std::copy(t.data.begin(), t.data.end(), feats[static_cast<std::size_t>(d)].begin());
      gates[static_cast<std::size_t>(d)] = tape.scalar_value(mv.gate[static_cast<std::size_t>(d)]);
    }
    env.mixed[node] = feats;
    env.gates[node] = gates;
  }
  return env;
}

std::map<int, MixVars> Creator::build_mix_graph(Tape& tape, Binder& p, const CounterfactualEnv& env,
                                                const std::vector<int>& instruction, const Path& path) const {
  WorldScene base_scene(*env.base);
  WorldScene ref_scene(*env.reference);
  Var u = descriptor(tape, p, base_scene, path, instruction);
  std::map<int, MixVars> out;
  for (const auto& [node, ref_node] : env.ref_nodes) {
    auto scene = base_scene.subviews(tape, node);
    auto ref = ref_scene.subviews(tape, ref_node);
    out.emplace(node, mix_scene(tape, p, u, scene, ref));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

void Discriminator::init(std::uint64_t seed) {
  Rng rng(seed);
  params = ParamStore{};
  TextEncoder::create(params, "instr", cfg.embed, cfg.hidden, rng);
  // Main recurrence input: [scene(11), geometric action(2)].
  LstmCell::create(params, "main", kFeatDim + 2, cfg.hidden, rng);
  params.add("Wcat", {1, static_cast<std::size_t>(2 * cfg.hidden)}, static_cast<std::size_t>(2 * cfg.hidden), rng);
  params.add("b", {1}, static_cast<std::size_t>(2 * cfg.hidden), rng);
}

Var Discriminator::score(Tape& tape, Binder& p, const SceneSource& env, const Path& path,
                         const std::vector<int>& instruction) const {
  if (path.nodes.empty() || path.actions.empty()) throw DataError("discriminator: empty path");
  const TextEncoder enc_ref{"instr", cfg.embed, cfg.hidden};
  auto text = enc_ref.encode(tape, p, instruction);
  const LstmCell main = LstmCell::ref("main", kFeatDim + 2, cfg.hidden);
  auto state = main.initial(tape);
  int node = path.nodes[0];
  for (const Action& a : path.actions) {
    auto scene = env.subviews(tape, node);
    Var pooled = tape.max_pool_set({scene[0], scene[1], scene[2], scene[3]});
    // Geometric action embedding only: (cos, sin) of the move direction, zero for STOP.
    Tensor geo({2});
    if (!a.stop) {
      geo.data[0] = heading_cos(a.dir);
      geo.data[1] = heading_sin(a.dir);
    }
    state = main.step(tape, p, tape.concat({pooled, tape.constant(std::move(geo))}), state);
    if (!a.stop) node = env.world().neighbor(node, a.dir);
  }
  Var ctx = dot_attention(tape, state.h, text.token_enc);
  Var logit = tape.add(tape.matmul(p["Wcat"], tape.concat({state.h, ctx})), p["b"]);
  return tape.sum(tape.sigmoid(logit));
}

// ---------------------------------------------------------------------------
// Critic
// ---------------------------------------------------------------------------

void Critic::init(std::uint64_t seed) {
  Rng rng(seed);
  params = ParamStore{};
  params.add("w", {1, static_cast<std::size_t>(hidden)}, static_cast<std::size_t>(hidden), rng);
  params.add("b", {1}, static_cast<std::size_t>(hidden), rng);
}

Var Critic::value(Tape& tape, Binder& p, Var h) const {
  return tape.sum(tape.add(tape.matmul(p["w"], h), p["b"]));
}

}  // namespace cyclenav
