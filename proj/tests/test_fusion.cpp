#include "mqa/error.hpp"
#include "mqa/fusion.hpp"
#include "datasets.hpp"
#include "support.hpp"

#include <doctest.h>

#include <random>

using namespace mqa;

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

VectorXd gaussian(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

// Independent hinge loss: plain loops, no shared helpers.
double ref_loss(const std::vector<TrainingTriplet>& set, const std::vector<double>& w,
                double margin) {
  double total = 0;
  for (const auto& t : set) {
    double dp = 0, dn = 0;
    for (std::size_t m = 0; m < w.size(); ++m)
      for (Eigen::Index i = 0; i < t.query[m].size(); ++i) {
        dp += w[m] * (t.query[m][i] - t.positive[m][i]) * (t.query[m][i] - t.positive[m][i]);
        dn += w[m] * (t.query[m][i] - t.negative[m][i]) * (t.query[m][i] - t.negative[m][i]);
      }
    total += std::max(0.0, margin + dp - dn);
  }
  return total;
}

std::vector<TrainingTriplet> random_set(std::size_t n, std::size_t modalities, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrainingTriplet> set;
  for (std::size_t t = 0; t < n; ++t) {
    TrainingTriplet tr;
    for (std::size_t m = 0; m < modalities; ++m) {
      const auto d = static_cast<Eigen::Index>(2 + m * 3);
      tr.query.push_back(gaussian(rng, d));
      tr.positive.push_back(gaussian(rng, d));
      tr.negative.push_back(gaussian(rng, d));
    }
    set.push_back(std::move(tr));
  }
  return set;
}

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an mqa::Error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_SUITE("fusion") {
  TEST_CASE("weight vectors live on the simplex") {
    CHECK(on_simplex(vec({0.25, 0.75})));
    CHECK_FALSE(on_simplex(vec({0.7, 0.3, 0.1})));
    CHECK_FALSE(on_simplex(vec({1.5, -0.5})));
    CHECK_FALSE(on_simplex(VectorXd()));
    CHECK(code_of([] { WeightVector(vec({0.7, 0.3, 0.1})); }) == ErrorCode::InvalidArgument);
    CHECK(WeightVector::uniform(4).values() == VectorXd::Constant(4, 0.25));
  }

  TEST_CASE("weighted_distance examples") {
    const std::vector<VectorXd> q{vec({1, 0}), vec({0, 0})};
    const std::vector<VectorXd> o{vec({0, 0}), vec({0, 1})};
    CHECK(weighted_distance<double>(q, o, WeightVector(vec({0.6, 0.4}))) == doctest::Approx(1.0));
    CHECK(weighted_distance<double>(q, q, WeightVector(vec({0.6, 0.4}))) == 0.0);
    const std::vector<VectorXd> a{vec({3, 1}), vec({9, 9})};
    const std::vector<VectorXd> b{vec({0, 5}), vec({-9, 2})};
    CHECK(weighted_distance<double>(a, b, WeightVector(vec({1, 0}))) == 25.0);
    const std::vector<VectorXd> bad{vec({0, 0, 0}), vec({0, 1})};
    CHECK(code_of([&] { weighted_distance<double>(q, bad, WeightVector(vec({0.5, 0.5}))); }) ==
          ErrorCode::DimensionMismatch);
  }

  TEST_CASE("fuse examples") {
    const std::vector<VectorXd> one{vec({0.3, -2, 7})};
    CHECK(fuse<double>(one, WeightVector::uniform(1)) == one[0]);
    const std::vector<VectorXd> two{vec({2, 0}), vec({0, 2})};
    auto f = fuse<double>(two, WeightVector(vec({0.25, 0.75})));
    REQUIRE(f.size() == 4);
    CHECK(f[0] == doctest::Approx(1.0));
    CHECK(f[1] == 0.0);
    CHECK(f[2] == 0.0);
    CHECK(f[3] == doctest::Approx(1.7320508).epsilon(1e-7));
  }

  TEST_CASE("fusion identity on 100 random pairs") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> mods(2, 4), dims(8, 64);
    for (int trial = 0; trial < 100; ++trial) {
      const int m = mods(rng);
      std::vector<VectorXf> q, o;
      for (int i = 0; i < m; ++i) {
        const int d = dims(rng);
        q.push_back(gaussian(rng, d).cast<float>());
        o.push_back(gaussian(rng, d).cast<float>());
      }
      auto w = WeightVector::from_logits(gaussian(rng, m));
      const double fused = (fuse<float>(q, w) - fuse<float>(o, w)).cast<double>().squaredNorm();
      double direct = 0;
      for (int i = 0; i < m; ++i) direct += w[i] * (q[i] - o[i]).cast<double>().squaredNorm();
      CHECK(std::abs(fused - direct) <= 1e-5 * direct);
    }
  }

  TEST_CASE("fuse_all matches fuse row by row") {
    EncodedVectors v;
    v.per_modality = {test::random_matrix(5, 3, 1), test::random_matrix(5, 4, 2)};
    WeightVector w(vec({0.3, 0.7}));
    auto set = fuse_all(v, w);
    CHECK(set.layout.offsets == std::vector<Eigen::Index>{0, 3});
    CHECK(set.layout.total == 7);
    for (VertexId r = 0; r < 5; ++r) {
      auto obj = v.object(r);
      CHECK((set.data.row(r).transpose() - fuse<float>(obj, w)).norm() == 0.0f);
    }
  }

  TEST_CASE("argmin is invariant to a common scale of modality distances") {
    std::mt19937_64 rng(5);
    WeightVector w(vec({0.35, 0.65}));
    std::vector<VectorXd> q{gaussian(rng, 4), gaussian(rng, 6)};
    std::vector<std::vector<VectorXd>> cands;
    for (int i = 0; i < 30; ++i) cands.push_back({gaussian(rng, 4), gaussian(rng, 6)});
    auto argmin = [&](double scale) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < cands.size(); ++i) {
        std::vector<VectorXd> qs{q[0] * scale, q[1] * scale};
        std::vector<VectorXd> cs{cands[i][0] * scale, cands[i][1] * scale};
        double d = weighted_distance<double>(qs, cs, w);
        if (d < best_d) best_d = d, best = i;
      }
      return best;
    };
    CHECK(argmin(1.0) == argmin(3.7));
    CHECK(argmin(1.0) == argmin(0.01));
  }

  TEST_CASE("inactive hinge: zero gradient and uniform weights") {
    std::mt19937_64 rng(3);
    std::vector<TrainingTriplet> set;
    for (int t = 0; t < 20; ++t) {
      TrainingTriplet tr;
      tr.query = {gaussian(rng, 4), gaussian(rng, 4)};
      tr.positive = tr.query;
      tr.negative = {tr.query[0] + test::offset_vector(rng, 4, 5.0),
                     tr.query[1] + test::offset_vector(rng, 4, 5.0)};
      set.push_back(std::move(tr));
    }
    CHECK(loss_gradient(VectorXd::Zero(2), set, 0.1).isZero(0));
    auto r = learn_weights(set);
    CHECK(r.weights.values() == VectorXd::Constant(2, 0.5));
    CHECK(r.loss_history.back() == 0.0);
  }

  TEST_CASE("single modality always learns weight 1") {
    auto set = random_set(30, 1, 8);
    auto r = learn_weights(set);
    CHECK(r.weights.size() == 1);
    CHECK(r.weights[0] == 1.0);
  }

  TEST_CASE("empty training set is rejected") {
    std::vector<TrainingTriplet> none;
    CHECK(code_of([&] { learn_weights(none); }) == ErrorCode::EmptyTrainingSet);
  }

  TEST_CASE("adversarial set: grid search and learning both favour modality 1") {
    auto set = test::adversarial_triplets(200, 21);
    double best_w1 = 0, best_loss = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 1000; ++i) {
      double w1 = i / 1000.0;
      double l = ref_loss(set, {w1, 1 - w1}, 0.1);
      if (l < best_loss) best_loss = l, best_w1 = w1;
    }
    CHECK(best_w1 >= 0.99);

    auto r = learn_weights(set);
    CHECK(r.weights[0] >= 0.9);
    CHECK(r.loss_history.size() == 101);
    for (std::size_t e = 1; e < r.loss_history.size(); ++e)
      CHECK(r.loss_history[e] <= r.loss_history[e - 1] + 1e-9);
    CHECK(hinge_loss(r.logits, set, 0.1) ==
          doctest::Approx(ref_loss(set, {r.weights[0], r.weights[1]}, 0.1)));
  }

  TEST_CASE("loss never increases on random corpora") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      for (std::size_t m : {2u, 3u, 4u}) {
        auto set = random_set(60, m, seed * 10 + m);
        auto r = learn_weights(set);
        CHECK(on_simplex(r.weights.values()));
        for (std::size_t e = 1; e < r.loss_history.size(); ++e)
          CHECK(r.loss_history[e] <= r.loss_history[e - 1] + 1e-9);
      }
    }
  }

  TEST_CASE("analytic gradient matches central differences") {
    std::mt19937_64 rng(99);
    const double h = 1e-4;
    for (int instance = 0; instance < 50; ++instance) {
      const std::size_t m = 2 + instance % 3;
      auto set = random_set(15, m, 1000 + instance);
      VectorXd theta = gaussian(rng, static_cast<Eigen::Index>(m));
      VectorXd g = loss_gradient(theta, set, 0.1);
      VectorXd fd(theta.size());
      for (Eigen::Index i = 0; i < theta.size(); ++i) {
        VectorXd up = theta, down = theta;
        up[i] += h;
        down[i] -= h;
        fd[i] = (hinge_loss(up, set, 0.1) - hinge_loss(down, set, 0.1)) / (2 * h);
      }
      CHECK((g - fd).norm() <= 1e-4 * std::max(g.norm(), 1e-8));
    }
  }

  TEST_CASE("gradient is invariant to shifting every logit") {
    auto set = random_set(25, 3, 4);
    VectorXd theta = vec({0.2, -1.1, 0.7});
    auto g0 = loss_gradient(theta, set, 0.1);
    auto g1 = loss_gradient((theta.array() + 5.0).matrix(), set, 0.1);
    CHECK((g0 - g1).norm() <= 1e-12 * std::max(1.0, g0.norm()));
  }

  TEST_CASE("triplet file parsing") {
    const ModalitySchema schema{{"a", 2}, {"b", 1}};
    auto set = parse_triplets(
        R"({"q":{"a":[1,2],"b":[3]},"pos":{"a":[1,2]},"neg":{"b":[0]}})"
        "\n\n",
        schema);
    REQUIRE(set.size() == 1);
    CHECK(set[0].query[0] == vec({1, 2}));
    CHECK(set[0].positive[1] == vec({0}));
    CHECK(set[0].negative[0] == vec({0, 0}));
    CHECK(code_of([&] { parse_triplets(R"({"q":{"c":[1]},"pos":{},"neg":{}})", schema); }) ==
          ErrorCode::SchemaViolation);
    CHECK(code_of([&] { parse_triplets(R"({"q":{},"pos":{}})", schema); }) ==
          ErrorCode::ParseError);
  }

  TEST_CASE("weights file round-trips exactly and reorders by schema") {
    test::TempDir dir;
    const ModalitySchema schema{{"text", 4}, {"image", 48}};
    auto w = WeightVector::from_logits(vec({0.123456789, -0.3}));
    save_weights(dir / "w.json", schema, w);
    CHECK(load_weights(dir / "w.json", schema) == w);

    test::write_text(dir / "swapped.json",
                     R"({"modalities":["image","text"],"weights":[0.25,0.75]})");
    auto s = load_weights(dir / "swapped.json", schema);
    CHECK(s[0] == 0.75);
    CHECK(s[1] == 0.25);

    test::write_text(dir / "bad.json", R"({"modalities":["text","image"],"weights":[0.7,0.7]})");
    CHECK(code_of([&] { load_weights(dir / "bad.json", schema); }) == ErrorCode::FormatError);
  }
}
