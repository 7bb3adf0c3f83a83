#include "op_cases.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

namespace ad = deepmap::ad;
using testing::check_gradients;
using testing::LossFn;
using testing::random_tensor;

TEST_CASE("operator gradients match central differences on 20 seeds") {
  for (const auto& c : testing::op_cases()) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(seed * 7919 + 1);
      std::vector<ad::Tensor> inputs;
      for (const auto& s : c.shapes) inputs.push_back(random_tensor(s, rng, c.lo, c.hi));
      const LossFn f = [&](ad::Graph& g, const std::vector<ad::Var>& v) { return testing::probe(g, c.body(g, v), seed); };
      const auto r = check_gradients(f, inputs);
      CAPTURE(c.name);
      CAPTURE(seed);
      CAPTURE(r.worst_rel);
      CHECK(r.ok);
    }
  }
}

TEST_CASE("elementwise examples") {
  ad::Graph g;
  const auto x = g.constant(ad::Tensor::vector({-1, 0, 2}));
  const auto r = ad::relu(x).value();
  CHECK(r(0, 0) == 0.0);
  CHECK(r(0, 1) == 0.0);
  CHECK(r(0, 2) == 2.0);
  CHECK(ad::sigmoid(g.constant(ad::Tensor::vector({0}))).item() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("conv1d with kernel 3 and dilation 2 keeps length 8") {
  ad::Graph g;
  std::mt19937_64 rng(1);
  const auto y = ad::conv1d(g.leaf(random_tensor({1, 8, 2}, rng)), g.leaf(random_tensor({3, 2, 5}, rng)), 2);
  CHECK(y.shape() == ad::Shape{1, 8, 5});
}

TEST_CASE("backward examples") {
  SUBCASE("sum of squares") {
    ad::Tensor w = ad::Tensor::vector({1, 2}, true);
    ad::Graph g;
    const auto v = g.leaf(w);
    g.backward(ad::sum(v * v));
    CHECK(w.grad()(0, 0) == 2.0);
    CHECK(w.grad()(0, 1) == 4.0);
  }
  SUBCASE("sigmoid at zero") {
    ad::Tensor x = ad::Tensor::scalar(0.0, true);
    ad::Graph g;
    g.backward(ad::sigmoid(g.leaf(x)));
    CHECK(x.grad()(0, 0) == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("a value used twice accumulates both paths") {
    ad::Tensor x = ad::Tensor::scalar(3.0, true);
    ad::Graph g;
    const auto v = g.leaf(x);
    g.backward(ad::sum(v * v + v));
    CHECK(x.grad()(0, 0) == 7.0);
  }
  SUBCASE("non-scalar loss is rejected") {
    ad::Tensor x = ad::Tensor::vector({1, 2}, true);
    ad::Graph g;
    CHECK_THROWS_AS(g.backward(g.leaf(x)), ad::ShapeError);
  }
  SUBCASE("a graph is consumed by backward") {
    ad::Tensor x = ad::Tensor::scalar(1.0, true);
    ad::Graph g;
    const auto l = ad::sum(g.leaf(x));
    g.backward(l);
    CHECK_THROWS(g.backward(l));
  }
  SUBCASE("gradients accumulate across graphs until cleared") {
    ad::Tensor x = ad::Tensor::scalar(2.0, true);
    for (int i = 0; i < 2; ++i) {
      ad::Graph g;
      const auto v = g.leaf(x);
      g.backward(v * v);
    }
    CHECK(x.grad()(0, 0) == 8.0);
  }
}

TEST_CASE("shape errors name the operation") {
  ad::Graph g;
  std::mt19937_64 rng(0);
  const auto a = g.leaf(random_tensor({2, 3}, rng));
  const auto b = g.leaf(random_tensor({2, 3}, rng));
  CHECK_THROWS_AS(ad::matmul(a, b), ad::ShapeError);
  CHECK_THROWS_AS(ad::add(a, g.leaf(random_tensor({3, 2}, rng))), ad::ShapeError);
  CHECK_THROWS_AS(ad::reshape(a, {4, 2}), ad::ShapeError);
  CHECK_THROWS_AS(ad::rows(a, 1, 2), ad::ShapeError);
  CHECK_THROWS_AS(ad::gather_rows(a, {2}), ad::ShapeError);
  CHECK_THROWS_AS(ad::Tensor({2, 2}, ad::Matrix::Zero(1, 3)), ad::ShapeError);
  try {
    ad::matmul(a, b);
  } catch (const ad::ShapeError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
}

TEST_CASE("adam") {
  SUBCASE("first step moves by lr against the gradient sign") {
    ad::Tensor p = ad::Tensor::scalar(0.5, true);
    p.grad().setConstant(1.0);
    ad::AdamState st;
    st.lr = 0.001;
    std::vector<ad::Tensor> ps{p};
    ad::adam_step(ps, st);
    CHECK(std::abs(p.values()(0, 0) - (0.5 - 0.001)) < 1e-9);
    CHECK(p.grad()(0, 0) == 0.0);
  }
  SUBCASE("zero gradient leaves the parameter unchanged") {
    ad::Tensor p = ad::Tensor::scalar(0.5, true);
    p.grad().setZero();
    ad::AdamState st;
    std::vector<ad::Tensor> ps{p};
    ad::adam_step(ps, st);
    CHECK(p.values()(0, 0) == 0.5);
  }
  SUBCASE("minimises x squared") {
    ad::Tensor x = ad::Tensor::scalar(1.0, true);
    ad::AdamState st;
    st.lr = 0.1;
    std::vector<ad::Tensor> ps{x};
    for (int i = 0; i < 1000; ++i) {
      ad::Graph g;
      const auto v = g.leaf(x);
      g.backward(v * v);
      ad::adam_step(ps, st);
    }
    CHECK(std::abs(x.values()(0, 0)) < 1e-3);
  }
  SUBCASE("missing gradient is reported by name") {
    ad::Tensor p = ad::Tensor::scalar(0.5, true);
    p.set_name("orphan");
    ad::AdamState st;
    std::vector<ad::Tensor> ps{p};
    try {
      ad::adam_step(ps, st);
      FAIL("expected GradError");
    } catch (const ad::GradError& e) {
      CHECK(std::string(e.what()).find("orphan") != std::string::npos);
    }
  }
}

TEST_CASE("sgd step") {
  ad::Tensor p = ad::Tensor::scalar(1.0, true);
  p.grad().setConstant(2.0);
  std::vector<ad::Tensor> ps{p};
  ad::sgd_step(ps, 0.25);
  CHECK(p.values()(0, 0) == 0.5);
}

TEST_CASE("init_uniform stays inside its bound and is seed-deterministic") {
  ad::Tensor a({20, 30}), b({20, 30});
  std::mt19937_64 r1(5), r2(5);
  ad::init_uniform(a, 0.3, r1);
  ad::init_uniform(b, 0.3, r2);
  CHECK(a.values() == b.values());
  CHECK(a.values().cwiseAbs().maxCoeff() <= 0.3);
  CHECK(a.values().cwiseAbs().maxCoeff() > 0.25);
}

TEST_CASE("checkpoint round trip is bit exact") {
  std::mt19937_64 rng(3);
  ad::NamedTensors t;
  t["w"] = random_tensor({3, 4}, rng);
  t["b"] = random_tensor({4}, rng);
  t["w"].values()(0, 0) = 0.1 + 0.2;  // not representable in short decimal
  const auto back = ad::checkpoint_from_json(ad::checkpoint_to_json(t));
  REQUIRE(back.size() == 2);
  for (const auto& [name, tensor] : t) {
    CHECK(back.at(name).shape() == tensor.shape());
    CHECK(back.at(name).values() == tensor.values());
  }
  const auto path = std::filesystem::temp_directory_path() / "deepmap_ckpt_test.json";
  ad::save_checkpoint(path.string(), t);
  CHECK(ad::load_checkpoint(path.string()).at("w").values() == t["w"].values());
  std::filesystem::remove(path);
  CHECK_THROWS(ad::checkpoint_from_json("{\"w\": {\"shape\": [2, 2], \"values\": [1, 2, 3]}}"));
}
