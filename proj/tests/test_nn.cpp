#include "melsynth/nn.hpp"

#include "melsynth/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

using namespace melsynth;

namespace {

using TapeD = Tape<double>;
using VarD = TapeD::Var;

// Central finite differences against the analytic gradient for a scalar
// function of named parameter matrices.
struct GradCheck {
  std::vector<MatD> params;
  // Builds the graph on a fresh tape and returns the scalar loss.
  std::function<VarD(TapeD&, const std::vector<MatD>&)> build;

  double loss_at(const std::vector<MatD>& p) const {
    TapeD tape;
    return tape.value(build(tape, p))(0, 0);
  }

  double max_rel_err(double h = 1e-6) {
    TapeD tape;
    VarD loss = build(tape, params);
    tape.backward(loss);
    auto grads = tape.param_grads();

    double worst = 0.0;
    Rng rng(42);
    for (size_t pi = 0; pi < params.size(); ++pi) {
      const MatD& p = params[pi];
      MatD analytic = MatD::Zero(p.rows(), p.cols());
      auto it = grads.find(static_cast<int>(pi));
      if (it != grads.end()) analytic = it->second;
      // Probe every entry for small matrices, a random subset for large ones.
      const int probes = static_cast<int>(std::min<Eigen::Index>(p.size(), 24));
      for (int k = 0; k < probes; ++k) {
        const auto idx = static_cast<Eigen::Index>(rng.uniform_int(static_cast<uint64_t>(p.size())));
        const auto r = idx / p.cols(), c = idx % p.cols();
        std::vector<MatD> plus = params, minus = params;
        plus[pi](r, c) += h;
        minus[pi](r, c) -= h;
        const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
        const double an = analytic(r, c);
        const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-10});
        worst = std::max(worst, rel);
      }
    }
    return worst;
  }
};

}  // namespace

TEST_SUITE("nn_gradients") {
  TEST_CASE("matmul in all four transpose configurations") {
    Rng rng(1);
    for (int ta = 0; ta < 2; ++ta)
      for (int tb = 0; tb < 2; ++tb) {
        GradCheck gc;
        gc.params = {rng.normal_mat<double>(ta ? 5 : 3, ta ? 3 : 5),
                     rng.normal_mat<double>(tb ? 4 : 5, tb ? 5 : 4)};
        gc.build = [ta, tb](TapeD& t, const std::vector<MatD>& p) {
          return t.mean_sq(t.matmul(t.param(p[0], 0), t.param(p[1], 1), ta, tb));
        };
        CHECK(gc.max_rel_err() < 1e-7);
      }
  }

  TEST_CASE("add, sub, hadamard, scale, add_scalar") {
    Rng rng(2);
    GradCheck gc;
    gc.params = {rng.normal_mat<double>(4, 6), rng.normal_mat<double>(4, 6)};
    gc.build = [](TapeD& t, const std::vector<MatD>& p) {
      VarD a = t.param(p[0], 0), b = t.param(p[1], 1);
      VarD x = t.add(t.hadamard(t.sub(a, b), t.scale(b, 0.7)), t.add_scalar(a, 0.3));
      return t.mean_sq(x);
    };
    CHECK(gc.max_rel_err() < 1e-7);
  }

  TEST_CASE("row broadcast ops and tiling") {
    Rng rng(3);
    GradCheck gc;
    gc.params = {rng.normal_mat<double>(5, 7), rng.normal_mat<double>(1, 7),
                 rng.normal_mat<double>(1, 7)};
    gc.build = [](TapeD& t, const std::vector<MatD>& p) {
      VarD x = t.param(p[0], 0);
      VarD scale = t.param(p[1], 1), shift = t.param(p[2], 2);
      VarD y = t.add_row(t.mul_row(x, scale), shift);
      VarD tiled = t.tile_rows(shift, 5);
      return t.mean_abs(t.add(y, tiled));
    };
    CHECK(gc.max_rel_err() < 1e-6);
  }

  TEST_CASE("rmsnorm") {
    Rng rng(4);
    GradCheck gc;
    gc.params = {rng.normal_mat<double>(6, 9), rng.normal_mat<double>(1, 9)};
    gc.build = [](TapeD& t, const std::vector<MatD>& p) {
      return t.mean_sq(t.rmsnorm(t.param(p[0], 0), t.param(p[1], 1)));
    };
    CHECK(gc.max_rel_err() < 1e-5);
  }

  TEST_CASE("gelu") {
    Rng rng(5);
    GradCheck gc;
    gc.params = {rng.normal_mat<double>(5, 5)};
    gc.build = [](TapeD& t, const std::vector<MatD>& p) {
      return t.mean_sq(t.gelu(t.param(p[0], 0)));
    };
    CHECK(gc.max_rel_err() < 1e-7);
  }

  TEST_CASE("masked softmax") {
    Rng rng(6);
    GradCheck gc;
    gc.params = {rng.normal_mat<double>(4, 6)};
    std::vector<uint8_t> mask = {1, 1, 0, 1, 0, 1};
    gc.build = [mask](TapeD& t, const std::vector<MatD>& p) {
      VarD probs = t.softmax_rows(t.param(p[0], 0), mask, false);
      // Weight rows unevenly so the gradient is not symmetric.
      MatD w = MatD::Zero(4, 6);
      for (Eigen::Index r = 0; r < 4; ++r)
        for (Eigen::Index c = 0; c < 6; ++c) w(r, c) = 0.1 * static_cast<double>(r + 2 * c);
      return t.mean_sq(t.hadamard(probs, t.input(w)));
    };
    CHECK(gc.max_rel_err() < 1e-7);
  }

  TEST_CASE("causal softmax") {
    Rng rng(7);
    GradCheck gc;
    gc.params = {rng.normal_mat<double>(5, 5)};
    gc.build = [](TapeD& t, const std::vector<MatD>& p) {
      VarD probs = t.softmax_rows(t.param(p[0], 0), {}, true);
      MatD w(5, 5);
      for (Eigen::Index r = 0; r < 5; ++r)
        for (Eigen::Index c = 0; c < 5; ++c) w(r, c) = std::sin(0.3 * static_cast<double>(r * 5 + c));
      return t.mean_abs(t.hadamard(probs, t.input(w)));
    };
    CHECK(gc.max_rel_err(1e-7) < 1e-5);
  }

  TEST_CASE("slice and concat") {
    Rng rng(8);
    GradCheck gc;
    gc.params = {rng.normal_mat<double>(4, 8), rng.normal_mat<double>(4, 3)};
    gc.build = [](TapeD& t, const std::vector<MatD>& p) {
      VarD a = t.param(p[0], 0), b = t.param(p[1], 1);
      VarD joined = t.concat_cols(t.slice_cols(a, 2, 3), b);
      VarD stacked = t.concat_rows(joined, t.scale(joined, -0.5));
      return t.mean_sq(stacked);
    };
    CHECK(gc.max_rel_err() < 1e-7);
  }

  TEST_CASE("gather rows accumulates over repeated ids") {
    Rng rng(9);
    GradCheck gc;
    gc.params = {rng.normal_mat<double>(6, 4)};
    gc.build = [](TapeD& t, const std::vector<MatD>& p) {
      return t.mean_sq(t.gather_rows(t.param(p[0], 0), {0, 3, 3, 5, 0, 1}));
    };
    CHECK(gc.max_rel_err() < 1e-7);
  }

  TEST_CASE("full attention block") {
    Rng rng(10);
    const int L = 5, M = 7, E = 8, D = 4;
    GradCheck gc;
    gc.params = {rng.normal_mat<double>(L, E, 0.5), rng.normal_mat<double>(M, E, 0.5),
                 rng.normal_mat<double>(E, D, 0.5), rng.normal_mat<double>(E, D, 0.5),
                 rng.normal_mat<double>(E, D, 0.5), rng.normal_mat<double>(D, E, 0.5)};
    std::vector<uint8_t> mask = {1, 1, 1, 1, 1, 0, 0};
    gc.build = [mask](TapeD& t, const std::vector<MatD>& p) {
      VarD x = t.param(p[0], 0), mem = t.param(p[1], 1);
      VarD q = t.matmul(x, t.param(p[2], 2));
      VarD k = t.matmul(mem, t.param(p[3], 3));
      VarD v = t.matmul(mem, t.param(p[4], 4));
      VarD scores = t.scale(t.matmul(q, k, false, true), 0.5);
      VarD probs = t.softmax_rows(scores, mask, false);
      VarD ctx = t.matmul(probs, v);
      return t.mean_sq(t.matmul(ctx, t.param(p[5], 5)));
    };
    CHECK(gc.max_rel_err() < 1e-6);
  }

  TEST_CASE("mean_abs subgradient away from zero") {
    Rng rng(11);
    GradCheck gc;
    gc.params = {rng.normal_mat<double>(6, 6)};
    gc.build = [](TapeD& t, const std::vector<MatD>& p) {
      return t.mean_abs(t.param(p[0], 0));
    };
    CHECK(gc.max_rel_err(1e-7) < 1e-6);
  }
}

TEST_SUITE("nn_semantics") {
  TEST_CASE("softmax rows sum to one over unmasked keys and zero on masked") {
    Rng rng(20);
    Tape<double> tape;
    auto scores = tape.input(rng.normal_mat<double>(6, 8));
    std::vector<uint8_t> mask = {1, 0, 1, 1, 0, 1, 1, 0};
    auto probs = tape.softmax_rows(scores, mask, false);
    const MatD& p = tape.value(probs);
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      CHECK(p.row(r).sum() == doctest::Approx(1.0).epsilon(1e-6));
      for (Eigen::Index c = 0; c < p.cols(); ++c)
        if (!mask[static_cast<size_t>(c)]) CHECK(p(r, c) == 0.0);
    }
  }

  TEST_CASE("causal softmax puts no probability on future keys") {
    Rng rng(21);
    Tape<double> tape;
    auto probs = tape.softmax_rows(tape.input(rng.normal_mat<double>(5, 5)), {}, true);
    const MatD& p = tape.value(probs);
    for (Eigen::Index r = 0; r < 5; ++r) {
      CHECK(p.row(r).sum() == doctest::Approx(1.0).epsilon(1e-9));
      for (Eigen::Index c = r + 1; c < 5; ++c) CHECK(p(r, c) == 0.0);
    }
  }

  TEST_CASE("backward requires a scalar loss") {
    Tape<double> tape;
    auto x = tape.param(MatD::Ones(2, 2), 0);
    CHECK_THROWS_AS(tape.backward(x), ValueError);
  }

  TEST_CASE("pure-input subgraphs receive no gradient buffers") {
    Tape<double> tape;
    auto a = tape.input(MatD::Ones(2, 2));
    auto b = tape.param(MatD::Ones(2, 2), 0);
    auto loss = tape.mean_sq(tape.hadamard(a, b));
    tape.backward(loss);
    CHECK(tape.grad(a).size() == 0);
    CHECK(tape.grad(b).size() == 4);
  }
}
