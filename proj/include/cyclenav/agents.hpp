#pragma once

#include <map>
#include <string>
#include <vector>

#include "cyclenav/param_store.hpp"
#include "cyclenav/world.hpp"

namespace cyclenav {

Var feat_const(Tape& tape, const Feat& f);

// Where models read subview features from: the real world, a materialized
// counterfactual overlay, or live creator outputs on a tape (differentiable).
class SceneSource {
 public:
  virtual ~SceneSource() = default;
  virtual const World& world() const = 0;
  virtual std::array<Var, kNumDirs> subviews(Tape& tape, int node) const = 0;
  virtual Feat subview_value(int node, Dir d) const = 0;
};

class WorldScene final : public SceneSource {
 public:
  explicit WorldScene(const World& w) : w_(&w) {}
  const World& world() const override { return *w_; }
  std::array<Var, kNumDirs> subviews(Tape& tape, int node) const override;
  Feat subview_value(int node, Dir d) const override { return w_->subview_feature(node, d); }

 private:
  const World* w_;
};

// Real world geometry with feature vectors replaced on selected nodes.
class OverlayScene final : public SceneSource {
 public:
  OverlayScene(const World& w, const std::map<int, std::array<Feat, kNumDirs>>& overrides)
      : w_(&w), overrides_(&overrides) {}
  const World& world() const override { return *w_; }
  std::array<Var, kNumDirs> subviews(Tape& tape, int node) const override;
  Feat subview_value(int node, Dir d) const override;

 private:
  const World* w_;
  const std::map<int, std::array<Feat, kNumDirs>>* overrides_;
};

// Creator-built subview Vars bound to one tape; gradients flow to the creator.
class GraphScene final : public SceneSource {
 public:
  GraphScene(const World& w, Tape& tape, std::map<int, std::array<Var, kNumDirs>> mixed)
      : w_(&w), tape_(&tape), mixed_(std::move(mixed)) {}
  const World& world() const override { return *w_; }
  std::array<Var, kNumDirs> subviews(Tape& tape, int node) const override;
  Feat subview_value(int node, Dir d) const override;

 private:
  const World* w_;
  Tape* tape_;
  std::map<int, std::array<Var, kNumDirs>> mixed_;
};

// Gated recurrent cell (LSTM) with per-gate weights over [x, h].
struct LstmCell {
  std::string prefix;
  int in_dim = 0;
  int hidden = 0;

  static LstmCell create(ParamStore& store, const std::string& prefix, int in_dim, int hidden, Rng& rng);
  static LstmCell ref(const std::string& prefix, int in_dim, int hidden) { return {prefix, in_dim, hidden}; }

  struct State {
    Var h, c;
  };
  State initial(Tape& tape) const;
  State step(Tape& tape, Binder& p, Var x, const State& prev) const;
};

// Token embedding plus recurrent encoder shared by several models.
struct TextEncoder {
  std::string prefix;
  int embed = 0;
  int hidden = 0;

  static TextEncoder create(ParamStore& store, const std::string& prefix, int embed, int hidden, Rng& rng);

  struct Out {
    std::vector<Var> token_enc;  // one H-vector per token
    LstmCell::State final_state;
  };
  Out encode(Tape& tape, Binder& p, const std::vector<int>& tokens) const;
};

// Dot-product attention; returns the weighted summary of `keys`.
Var dot_attention(Tape& tape, Var query, const std::vector<Var>& keys);
Var mean_pool(Tape& tape, const std::vector<Var>& vs);

enum class RolloutMode { kGreedy, kSample };

struct StepRecord {
  Var dist;                   // per-step distribution on the tape
  std::vector<double> probs;  // numeric copy of the distribution
  int chosen = 0;             // slot index
  Var logp;                   // log prob of the chosen slot
  Var hidden;                 // h_t, feeds the critic
  int node = 0;               // node the action was taken from
};

// Panoramic action slots: N,E,S,W then STOP.
constexpr int kSlotStop = kNumDirs;
constexpr int kPanoSlots = kNumDirs + 1;

// Low-level visuomotor actions.
enum class LowAction : int { kLeft = 0, kRight = 1, kForward = 2, kStop = 3 };
constexpr int kLowSlots = 4;

enum class ActionSpace { kPanoramic, kLowLevel };

struct FollowerConfig {
  int hidden = 32;
  int embed = 16;
  ActionSpace space = ActionSpace::kPanoramic;
  bool mean_pool_context = false;  // documented fallback for the token attention
  int t_max = 12;
};

struct FollowerRollout {
  Path path;
  Var logprob;
  double logprob_value = 0;
  std::vector<StepRecord> steps;
};

class Follower {
 public:
  FollowerConfig cfg;
  ParamStore params;

  void init(std::uint64_t seed);

  FollowerRollout rollout(Tape& tape, Binder& p, const SceneSource& env, const std::vector<int>& instruction,
                          int start_node, RolloutMode mode, Rng* rng, int t_max_override = 0) const;

  // Teacher-forced log P(A|X;E); throws DataError on illegal actions.
  Var logprob(Tape& tape, Binder& p, const SceneSource& env, const std::vector<int>& instruction,
              const Path& path) const;

  // Canonical visuomotor expansion of a node path (initial heading north).
  static std::vector<LowAction> expand_lowlevel(const Path& path);

 private:
  struct Ctx;
  Var token_context(Tape& tape, Var h_prev, const std::vector<Var>& token_enc) const;
};

struct SpeakerConfig {
  int hidden = 32;
  int embed = 16;
  int l_max = 48;  // total tokens including BOS
};

struct SpeakerRollout {
  std::vector<int> tokens;  // BOS ... [EOS]
  Var logprob;
  double logprob_value = 0;
  std::vector<StepRecord> steps;
};

class Speaker {
 public:
  SpeakerConfig cfg;
  ParamStore params;

  void init(std::uint64_t seed);

  SpeakerRollout rollout(Tape& tape, Binder& p, const SceneSource& env, const Path& path, RolloutMode mode,
                         Rng* rng, int max_gen_override = 0,
                         const std::vector<std::uint8_t>* vocab_mask = nullptr) const;

  // Teacher-forced log P(X|A;E) over instruction[1..] given the BOS prefix.
  Var logprob(Tape& tape, Binder& p, const SceneSource& env, const Path& path,
              const std::vector<int>& instruction, const std::vector<std::uint8_t>* vocab_mask = nullptr) const;

 private:
  struct Enc {
    std::vector<Var> outputs;
    LstmCell::State final_state;
  };
  Enc encode_path(Tape& tape, Binder& p, const SceneSource& env, const Path& path) const;
};

struct CreatorConfig {
  int hidden = 32;
  int embed = 16;
};

struct MixVars {
  std::array<Var, kNumDirs> attn;    // q_k over reference subviews
  std::array<Var, kNumDirs> summary; // g_k
  std::array<Var, kNumDirs> gate;    // lambda_k, scalar each
  std::array<Var, kNumDirs> mixed;   // v-bar_k
};

// Materialized counterfactual environment plus its construction recipe, so the
// gate/mix graph can be rebuilt differentiably for the creator loss.
struct CounterfactualEnv {
  const World* base = nullptr;
  const World* reference = nullptr;
  std::uint64_t node_map_seed = 0;
  std::map<int, int> ref_nodes;                      // visited node -> reference node
  std::map<int, std::array<Feat, kNumDirs>> mixed;   // replacement features
  std::map<int, std::array<double, kNumDirs>> gates; // lambda values

  OverlayScene scene() const { return OverlayScene(*base, mixed); }
};

class Creator {
 public:
  CreatorConfig cfg;
  ParamStore params;

  void init(std::uint64_t seed);

  // Compact descriptor u = h^c_T over [V_t, a_t, pooled X].
  Var descriptor(Tape& tape, Binder& p, const SceneSource& env, const Path& path,
                 const std::vector<int>& instruction) const;

  // Gated feature mixing of one scene against a reference scene.
  MixVars mix_scene(Tape& tape, Binder& p, Var u, const std::array<Var, kNumDirs>& scene,
                    const std::array<Var, kNumDirs>& reference, double gate_logit_bias = 0.0) const;

  CounterfactualEnv make_env(const World& base, const std::vector<int>& instruction, const Path& path,
                             const World& reference, std::uint64_t node_map_seed) const;

  // Rebuilds the mixing graph of `env` on `tape` (differentiable through p).
  std::map<int, MixVars> build_mix_graph(Tape& tape, Binder& p, const CounterfactualEnv& env,
                                         const std::vector<int>& instruction, const Path& path) const;
};

struct DiscriminatorConfig {
  int hidden = 32;
  int embed = 16;
};

class Discriminator {
 public:
  DiscriminatorConfig cfg;
  ParamStore params;

  void init(std::uint64_t seed);

  // Alignment score in (0,1). The action stream carries geometry only (dims 8-9).
  Var score(Tape& tape, Binder& p, const SceneSource& env, const Path& path,
            const std::vector<int>& instruction) const;
};

class Critic {
 public:
  int hidden = 32;
  ParamStore params;

  void init(std::uint64_t seed);
  Var value(Tape& tape, Binder& p, Var h) const;  // scalar
};

}  // namespace cyclenav
