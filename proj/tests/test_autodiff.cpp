#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cyclenav/param_store.hpp"
#include "cyclenav/tape.hpp"
#include "test_util.hpp"

using namespace cyclenav;
using namespace cyclenav::testutil;

TEST_CASE("matmul identity") {
  Tape t;
  Var I = t.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var x = t.constant(Tensor::vec({3, 4}));
  Var y = t.matmul(I, x);
  CHECK(t.value(y).data == std::vector<double>{3, 4});
}

TEST_CASE("softmax symmetry and normalization") {
  Tape t;
  Var y = t.softmax(t.constant(Tensor::vec({0, 0, 0})));
  for (double v : t.value(y).data) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("softmax sums to one and stays positive on random logits") {
  Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    Tape t;
    Tensor logits({7});
    for (double& v : logits.data) v = rng.uniform(-30, 30);
    Var y = t.softmax(t.constant(logits));
    double s = 0;
    for (double v : t.value(y).data) {
      CHECK(v > 0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("sigmoid value and local derivative at zero") {
  Tape t;
  Var x = t.param("x", Tensor::scalar(0.0));
  Var y = t.sigmoid(x);
  CHECK(t.scalar_value(y) == 0.5);
  auto g = t.backward(y);
  CHECK(g.at("x").data[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("backward on linear case") {
  Tape t;
  Var W = t.param("W", Tensor::matrix(1, 2, {0.7, -1.3}));
  Var x = t.constant(Tensor::vec({1, 1}));
  auto g = t.backward(t.sum(t.matmul(W, x)));
  CHECK(g.at("W").shape == std::vector<std::size_t>{1, 2});
  CHECK(g.at("W").data == std::vector<double>{1, 1});
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape t;
  Var v = t.constant(Tensor::vec({1, 2}));
  CHECK_THROWS_AS((void)t.backward(v), ShapeError);
}

TEST_CASE("shape mismatch errors name the op and shapes") {
  Tape t;
  Var a = t.constant(Tensor::vec({1, 2, 3}));
  Var b = t.constant(Tensor::vec({1, 2}));
  try {
    (void)t.add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("(3)") != std::string::npos);
    CHECK(msg.find("(2)") != std::string::npos);
  }
}

// Three-layer net checked against the independent finite-difference oracle.
static double three_layer_loss(const ParamStore& ps, const Tensor& input) {
  Tape t;
  Binder p(t, ps, "net", false);
  Var x = t.constant(input);
  Var h1 = t.tanh(t.add(t.matmul(p["W1"], x), p["b1"]));
  Var h2 = t.sigmoid(t.add(t.matmul(p["W2"], h1), p["b2"]));
  Var y = t.softmax(t.add(t.matmul(p["W3"], h2), p["b3"]));
  return t.scalar_value(t.neg(t.log(t.pick(y, 1))));
}

TEST_CASE("three-layer net gradient vs central finite differences") {
  Rng rng(17);
  ParamStore ps;
  ps.add("W1", {5, 4}, 4, rng);
  ps.add("b1", {5}, 4, rng);
  ps.add("W2", {6, 5}, 5, rng);
  ps.add("b2", {6}, 5, rng);
  ps.add("W3", {3, 6}, 6, rng);
  ps.add("b3", {3}, 6, rng);
  Tensor input({4});
  for (double& v : input.data) v = rng.uniform(-1, 1);

  Tape t;
  Binder p(t, ps, "net", true);
  Var x = t.constant(input);
  Var h1 = t.tanh(t.add(t.matmul(p["W1"], x), p["b1"]));
  Var h2 = t.sigmoid(t.add(t.matmul(p["W2"], h1), p["b2"]));
  Var y = t.softmax(t.add(t.matmul(p["W3"], h2), p["b3"]));
  auto auto_g = extract_prefixed(t.backward(t.neg(t.log(t.pick(y, 1)))), "net");

  auto fd = finite_diff(ps, [&] { return three_layer_loss(ps, input); });
  CHECK(max_rel_err(auto_g, fd) <= 1e-4);
}

TEST_CASE("composed loss over every primitive matches finite differences") {
  Rng rng(23);
  ParamStore ps;
  ps.add("A", {3, 4}, 4, rng);
  ps.add("v", {4}, 4, rng);
  ps.add("u", {3}, 3, rng);
  ps.add("E", {5, 3}, 3, rng);
  ps.add("s", {1}, 1, rng);

  auto build = [&](const ParamStore& store) {
    Tape t;
    Binder p(t, store, "m", false);
    Var av = t.matmul(p["A"], p["v"]);                       // (3)
    Var mixed = t.mul(t.sigmoid(av), t.tanh(p["u"]));        // (3)
    Var e = t.embed_lookup(p["E"], 2);                       // (3)
    Var pooled = t.max_pool_set({mixed, e, t.neg(p["u"])});  // (3)
    Var cat = t.concat({pooled, t.scalar_mul(p["s"], av)});  // (6)
    Var sm = t.softmax(cat);
    Var picked = t.pick(sm, 4);
    Var normish = t.sqrt(t.sum(t.mul(cat, cat)));
    return t.scalar_value(t.add(t.neg(t.log(picked)), normish));
  };

  Tape t;
  Binder p(t, ps, "m", true);
  Var av = t.matmul(p["A"], p["v"]);
  Var mixed = t.mul(t.sigmoid(av), t.tanh(p["u"]));
  Var e = t.embed_lookup(p["E"], 2);
  Var pooled = t.max_pool_set({mixed, e, t.neg(p["u"])});
  Var cat = t.concat({pooled, t.scalar_mul(p["s"], av)});
  Var sm = t.softmax(cat);
  Var picked = t.pick(sm, 4);
  Var normish = t.sqrt(t.sum(t.mul(cat, cat)));
  Var loss = t.add(t.neg(t.log(picked)), normish);
  auto auto_g = extract_prefixed(t.backward(loss), "m");

  auto fd = finite_diff(ps, [&] { return build(ps); });
  CHECK(max_rel_err(auto_g, fd) <= 1e-4);
}

TEST_CASE("stop-gradient forward identity and zero backward") {
  Tape t;
  Var x = t.param("x", Tensor::scalar(2.0));
  Var y = t.stop_gradient(x);
  CHECK(t.scalar_value(y) == 2.0);
  auto g = t.backward(t.sum(y));
  CHECK(g.count("x") == 0);  // unreachable -> treated as zero
}

TEST_CASE("grad through stop_gradient(x)*x is x not 2x") {
  Tape t;
  Var x = t.param("x", Tensor::scalar(3.0));
  Var y = t.mul(t.stop_gradient(x), x);
  auto g = t.backward(t.sum(y));
  CHECK(g.at("x").data[0] == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("backward is deterministic") {
  auto run = [] {
    Rng rng(31);
    ParamStore ps;
    ps.add("W", {4, 4}, 4, rng);
    ps.add("x", {4}, 4, rng);
    Tape t;
    Binder p(t, ps, "q", true);
    Var y = t.sum(t.tanh(t.matmul(p["W"], p["x"])));
    return t.backward(y);
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (const auto& [k, g] : a) {
    CHECK(b.at(k).data == g.data);  // bit-identical
  }
}

TEST_CASE("sgd step basics") {
  ParamStore ps;
  ps.add_zeros("w", {1}).data[0] = 1.0;
  GradMap g;
  g.emplace("w", Tensor::scalar(2.0));
  ps.sgd_step(g, 0.1);
  CHECK(ps.get("w").data[0] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("sgd global norm clipping halves an overlong gradient") {
  ParamStore ps;
  ps.add_zeros("a", {2});
  ps.add_zeros("b", {1});
  GradMap g;
  g.emplace("a", Tensor::vec({6.0, 0.0}));
  g.emplace("b", Tensor::scalar(8.0));  // global norm 10
  ps.sgd_step(g, 1.0, 5.0);
  CHECK(ps.get("a").data[0] == doctest::Approx(-3.0).epsilon(1e-15));
  CHECK(ps.get("b").data[0] == doctest::Approx(-4.0).epsilon(1e-15));
}

TEST_CASE("sgd with zero grad or zero lr is a bit-exact no-op") {
  Rng rng(7);
  ParamStore ps;
  ps.add("w", {3, 3}, 3, rng);
  const Tensor before = ps.get("w");
  GradMap zero;
  zero.emplace("w", Tensor::zeros({3, 3}));
  ps.sgd_step(zero, 0.5);
  CHECK(ps.get("w").data == before.data);
  GradMap g;
  g.emplace("w", Tensor::matrix(3, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  ps.sgd_step(g, 0.0);
  CHECK(ps.get("w").data == before.data);
}

TEST_CASE("sgd rejects non-finite gradients naming the parameter") {
  ParamStore ps;
  ps.add_zeros("theta.bad", {1});
  GradMap g;
  g.emplace("theta.bad", Tensor::scalar(std::numeric_limits<double>::quiet_NaN()));
  try {
    ps.sgd_step(g, 0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("theta.bad") != std::string::npos);
  }
}

TEST_CASE("checkpoint container round-trips bit-exactly") {
  Rng rng(41);
  Checkpoint ck;
  ck.seed = 99;
  ck.extra = {"note hello"};
  ck.stores["beta"].add("w1", {3, 5}, 5, rng);
  ck.stores["beta"].add("w2", {7}, 7, rng);
  ck.stores["alpha"].add("emb", {4, 2}, 2, rng);
  const auto path = std::filesystem::temp_directory_path() / "cyclenav_ckpt_test.bin";
  ck.save(path.string());
  auto back = Checkpoint::load(path.string());
  CHECK(back.seed == 99);
  REQUIRE(back.extra.size() == 1);
  CHECK(back.extra[0] == "note hello");
  REQUIRE(back.stores.size() == 2);
  CHECK(back.stores.at("beta") == ck.stores.at("beta"));
  CHECK(back.stores.at("alpha") == ck.stores.at("alpha"));

  // save -> load -> save produces identical bytes
  const auto path2 = std::filesystem::temp_directory_path() / "cyclenav_ckpt_test2.bin";
  back.save(path2.string());
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("corrupted checkpoint header raises a structured error") {
  const auto path = std::filesystem::temp_directory_path() / "cyclenav_ckpt_bad.bin";
  std::ofstream(path.string()) << "not a checkpoint\n";
  CHECK_THROWS_AS((void)Checkpoint::load(path.string()), DataError);
  std::filesystem::remove(path);
}
