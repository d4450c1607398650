#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>
#include <vector>

#include "lcps/losses.hpp"
#include "lcps/random.hpp"
#include "lcps/tensor.hpp"
#include "oracles.hpp"

using lcps::Rng;
using lcps::Tensor;

namespace {

std::vector<float> random_logits(Rng& rng, std::size_t n, std::size_t m) {
  std::vector<float> out(n * m);
  for (auto& v : out) v = static_cast<float>(rng.uniform(-2.0, 2.0));
  return out;
}

std::vector<std::int32_t> random_labels(Rng& rng, std::size_t n, std::size_t m) {
  std::vector<std::int32_t> out(n);
  for (auto& y : out) y = static_cast<std::int32_t>(rng.uniform_index(m));
  return out;
}

std::vector<float> softmax_rows(const std::vector<float>& logits, std::size_t m) {
  std::vector<float> probs(logits.size());
  for (std::size_t i = 0; i < logits.size() / m; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < m; ++j) denom += std::exp(static_cast<double>(logits[i * m + j]));
    for (std::size_t j = 0; j < m; ++j)
      probs[i * m + j] =
          static_cast<float>(std::exp(static_cast<double>(logits[i * m + j])) / denom);
  }
  return probs;
}

// Long-double re-derivation of the sorted-Jaccard extension.
long double lovasz_ref(const std::vector<float>& probs, std::size_t m,
                       const std::vector<std::int32_t>& labels) {
  const std::size_t n = labels.size();
  const std::set<std::int32_t> present(labels.begin(), labels.end());
  long double total = 0.0L;
  for (const std::int32_t c : present) {
    std::vector<std::pair<long double, bool>> err(n);
    long double gts = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      const bool fg = labels[i] == c;
      const long double p = probs[i * m + static_cast<std::size_t>(c)];
      err[i] = {fg ? 1.0L - p : p, fg};
      gts += fg ? 1.0L : 0.0L;
    }
    std::stable_sort(err.begin(), err.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    long double inter = gts, uni = gts, prev = 0.0L, dot = 0.0L;
    for (const auto& [e, fg] : err) {
      inter -= fg ? 1.0L : 0.0L;
      uni += fg ? 0.0L : 1.0L;
      const long double jac = 1.0L - inter / uni;
      dot += e * (jac - prev);
      prev = jac;
    }
    total += dot;
  }
  return total / static_cast<long double>(present.size());
}

}  // namespace

TEST_CASE("ce_loss", "[losses]") {
  SECTION("a saturated correct logit drives the loss to zero") {
    const std::vector<float> logits{100.0f, 0.0f, 0.0f};
    REQUIRE(lcps::ce_loss(logits, 3, {0}) <= 1e-6);
  }
  SECTION("uniform logits give log of the class count") {
    REQUIRE_THAT(lcps::ce_loss({0.0f, 0.0f}, 2, {1}),
                 Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));
    REQUIRE_THAT(lcps::ce_loss(std::vector<float>(4, 0.0f), 4, {2}),
                 Catch::Matchers::WithinAbs(std::log(4.0), 1e-12));
  }
  SECTION("random batches match the extended-precision reference") {
    Rng rng(89);
    for (int rep = 0; rep < 20; ++rep) {
      const std::size_t n = 5, m = 4;
      const auto logits = random_logits(rng, n, m);
      const auto labels = random_labels(rng, n, m);
      const auto want = static_cast<double>(oracle::ce_reference(logits, m, labels));
      REQUIRE_THAT(lcps::ce_loss(logits, m, labels),
                   Catch::Matchers::WithinAbs(want, 1e-9));
    }
  }
  SECTION("an empty batch contributes nothing") {
    REQUIRE(lcps::ce_loss({}, 3, {}) == 0.0);
  }
  SECTION("labels outside the class axis are rejected") {
    REQUIRE_THROWS_AS(lcps::ce_loss({0.0f, 0.0f}, 2, {2}), lcps::label_error);
  }
  SECTION("the analytic gradient matches central differences") {
    Rng rng(97);
    const std::size_t n = 3, m = 4;
    auto logits = random_logits(rng, n, m);
    const auto labels = random_labels(rng, n, m);
    const auto grad = lcps::ce_loss_grad(logits, m, labels);
    for (std::size_t k = 0; k < logits.size(); ++k) {
      const float orig = logits[k];
      const float hi = orig + 1e-3f;
      const float lo = orig - 1e-3f;
      logits[k] = hi;
      const double up = lcps::ce_loss(logits, m, labels);
      logits[k] = lo;
      const double down = lcps::ce_loss(logits, m, labels);
      logits[k] = orig;
      const double fd = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
      REQUIRE_THAT(grad[k], Catch::Matchers::WithinAbs(fd, 1e-4));
    }
  }
}

TEST_CASE("lovasz_loss", "[losses]") {
  SECTION("perfect one-hot predictions cost exactly zero") {
    const std::vector<std::int32_t> labels{0, 2, 1, 2};
    std::vector<float> probs(labels.size() * 3, 0.0f);
    for (std::size_t i = 0; i < labels.size(); ++i)
      probs[i * 3 + static_cast<std::size_t>(labels[i])] = 1.0f;
    REQUIRE(lcps::lovasz_loss(probs, 3, labels) == 0.0);
  }
  SECTION("a single ambivalent point costs its error") {
    REQUIRE_THAT(lcps::lovasz_loss({0.5f, 0.5f}, 2, {0}),
                 Catch::Matchers::WithinAbs(0.5, 1e-12));
  }
  SECTION("random batches match the long-double reference") {
    Rng rng(101);
    for (int rep = 0; rep < 20; ++rep) {
      const std::size_t n = 4, m = 3;
      const auto probs = softmax_rows(random_logits(rng, n, m), m);
      const auto labels = random_labels(rng, n, m);
      const auto want = static_cast<double>(lovasz_ref(probs, m, labels));
      const double got = lcps::lovasz_loss(probs, m, labels);
      REQUIRE_THAT(got, Catch::Matchers::WithinAbs(want, 1e-9));
      REQUIRE(got >= 0.0);
      REQUIRE(got <= 1.0);
    }
  }
  SECTION("rows that do not sum to one are rejected") {
    REQUIRE_THROWS_AS(lcps::lovasz_loss({0.9f, 0.3f}, 2, {0}), lcps::data_error);
  }
  SECTION("an empty batch contributes nothing") {
    REQUIRE(lcps::lovasz_loss({}, 3, {}) == 0.0);
  }
}

TEST_CASE("mse_heatmap_loss", "[losses]") {
  SECTION("identical maps cost zero") {
    const Tensor t({4, 4}, 0.3f);
    REQUIRE(lcps::mse_heatmap_loss(t, t) == 0.0);
  }
  SECTION("a uniform unit gap costs one") {
    const Tensor pred({2, 3}, 1.0f);
    const Tensor target({2, 3}, 0.0f);
    REQUIRE(lcps::mse_heatmap_loss(pred, target) == 1.0);
  }
  SECTION("random maps match a double-precision sum") {
    Rng rng(103);
    Tensor pred({3, 3}), target({3, 3});
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] = static_cast<float>(rng.uniform01());
      target[i] = static_cast<float>(rng.uniform01());
    }
    long double total = 0.0L;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const long double d = static_cast<long double>(pred[i]) - target[i];
      total += d * d;
    }
    REQUIRE_THAT(lcps::mse_heatmap_loss(pred, target),
                 Catch::Matchers::WithinAbs(static_cast<double>(total / 9.0L), 1e-12));
  }
  SECTION("shape mismatches are rejected") {
    REQUIRE_THROWS_AS(lcps::mse_heatmap_loss(Tensor({2, 2}), Tensor({2, 3})),
                      lcps::dimension_error);
  }
}

TEST_CASE("l1_offset_loss", "[losses]") {
  SECTION("matching offsets cost zero") {
    const Tensor t({2, 2, 2}, 0.7f);
    REQUIRE(lcps::l1_offset_loss(t, t, std::vector<bool>(4, true)) == 0.0);
  }
  SECTION("only masked cells count") {
    Tensor pred({2, 2, 2});
    const Tensor target({2, 2, 2});
    pred[0] = 1.0f;  // masked cell, unit gap in one channel
    pred[7] = 9.0f;  // unmasked cell must not matter
    std::vector<bool> mask{true, false, false, false};
    REQUIRE(lcps::l1_offset_loss(pred, target, mask) == 0.5);  // mean over 2 channels
  }
  SECTION("an empty mask costs zero") {
    Tensor pred({2, 2, 2}, 3.0f);
    const Tensor target({2, 2, 2});
    REQUIRE(lcps::l1_offset_loss(pred, target, std::vector<bool>(4, false)) == 0.0);
  }
  SECTION("random masked cells match a double-precision sum") {
    Rng rng(107);
    Tensor pred({3, 4, 2}), target({3, 4, 2});
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] = static_cast<float>(rng.uniform(-2.0, 2.0));
      target[i] = static_cast<float>(rng.uniform(-2.0, 2.0));
    }
    std::vector<bool> mask(12);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.bernoulli(0.5);
    long double total = 0.0L;
    std::size_t n = 0;
    for (std::size_t cell = 0; cell < 12; ++cell) {
      if (!mask[cell]) continue;
      for (std::size_t c = 0; c < 2; ++c) {
        total += std::abs(static_cast<long double>(pred[cell * 2 + c]) -
                          target[cell * 2 + c]);
        ++n;
      }
    }
    const double want = n == 0 ? 0.0 : static_cast<double>(total / n);
    REQUIRE_THAT(lcps::l1_offset_loss(pred, target, mask),
                 Catch::Matchers::WithinAbs(want, 1e-12));
  }
  SECTION("mask size must match the cell count") {
    const Tensor t({2, 2, 2});
    REQUIRE_THROWS_AS(lcps::l1_offset_loss(t, t, std::vector<bool>(3, true)),
                      lcps::dimension_error);
  }
}

TEST_CASE("bce_fog_loss", "[losses]") {
  SECTION("confident correct predictions cost nearly nothing") {
    const Tensor pred({2, 2}, 1.0f);
    const Tensor target({2, 2}, 1.0f);
    REQUIRE(lcps::bce_fog_loss(pred, target) <= 1e-6);
  }
  SECTION("a coin-flip prediction costs log two") {
    const Tensor pred({2, 2}, 0.5f);
    const Tensor target({2, 2}, 1.0f);
    REQUIRE_THAT(lcps::bce_fog_loss(pred, target),
                 Catch::Matchers::WithinAbs(std::log(2.0), 1e-12));
  }
  SECTION("random maps match the long-double reference") {
    Rng rng(109);
    Tensor pred({3, 3}), target({3, 3});
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] = static_cast<float>(rng.uniform(0.05, 0.95));
      target[i] = static_cast<float>(rng.uniform01());
    }
    long double total = 0.0L;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const long double p = pred[i];
      const long double t = target[i];
      total -= t * std::log(p) + (1.0L - t) * std::log(1.0L - p);
    }
    REQUIRE_THAT(lcps::bce_fog_loss(pred, target),
                 Catch::Matchers::WithinAbs(static_cast<double>(total / 9.0L), 1e-9));
  }
  SECTION("the analytic gradient matches central differences") {
    Rng rng(113);
    Tensor pred({2, 3}), target({2, 3});
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] = static_cast<float>(rng.uniform(0.1, 0.9));
      target[i] = static_cast<float>(rng.uniform01());
    }
    const auto grad = lcps::bce_fog_loss_grad(pred, target);
    for (std::size_t k = 0; k < pred.size(); ++k) {
      const float orig = pred[k];
      const float hi = orig + 1e-4f;
      const float lo = orig - 1e-4f;
      pred[k] = hi;
      const double up = lcps::bce_fog_loss(pred, target);
      pred[k] = lo;
      const double down = lcps::bce_fog_loss(pred, target);
      pred[k] = orig;
      const double fd = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
      REQUIRE_THAT(grad[k], Catch::Matchers::WithinAbs(fd, 1e-5));
    }
  }
}

TEST_CASE("total_loss", "[losses]") {
  SECTION("zero terms cost zero") { REQUIRE(lcps::total_loss({}) == 0.0); }
  SECTION("unit terms under the default weights sum to 114") {
    const lcps::LossTerms t{1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
    REQUIRE(lcps::total_loss(t) == 114.0);
  }
  SECTION("custom weights apply term by term") {
    const lcps::LossTerms t{0.5, 0.25, 0.1, 0.2, 0.3, 0.4};
    const lcps::LossWeights w{2.0, 1.0, 3.0, 4.0, 5.0};
    REQUIRE_THAT(lcps::total_loss(t, w),
                 Catch::Matchers::WithinAbs(
                     2.0 * 0.75 + 0.1 + 3.0 * 0.2 + 4.0 * 0.3 + 5.0 * 0.4, 1e-12));
  }
}
