#include <cmath>
#include <vector>

#include "doctest.h"
#include "dne/dropout.hpp"
#include "dne/error.hpp"
#include "dne/network.hpp"
#include "oracles.hpp"
#include "probe.hpp"

using namespace dne;

namespace {

std::vector<double> analytic_gradient(const NetworkSpec& s, const std::vector<double>& w, const OrbitSample& smp,
                                      Label label, std::uint64_t seed) {
  std::vector<double> g(w.size());
  const ForwardMode mode = s.dropout_rate > 0 ? ForwardMode::StochasticDropout : ForwardMode::Deterministic;
  backward_as<double>(s, w, smp, label, mode, seed, g);
  return g;
}

std::vector<std::vector<float>> masks_for(const NetworkSpec& s, std::uint64_t seed) {
  std::vector<std::vector<float>> m;
  for (int b = 0; b < s.branch_count(); ++b) {
    m.push_back(dropout_mask(static_cast<std::size_t>(s.branch_width), s.dropout_rate, branch_mask_seed(seed, b)));
  }
  return m;
}

}  // namespace

TEST_CASE("default dual-branch parameter count") {
  // conv 8*9+8, conv 16*8*9+16, fc 1024*32+32, head 64*16+16, out 16*2+2
  CHECK(parameter_count(NetworkSpec::dual_branch()) == 35122u);
  CHECK(parameter_count(NetworkSpec::single_branch()) == 35122u - 32u * 16u);
  CHECK(parameter_count(probe::small_spec()) == 281u);
}

TEST_CASE("layer description lists branch layers once") {
  const auto layers = describe_layers(NetworkSpec::dual_branch());
  int convs = 0;
  std::size_t covered = 0;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::Conv3x3) ++convs;
    covered += l.weights.count + l.bias.count;
  }
  CHECK(convs == 2);
  CHECK(covered == parameter_count(NetworkSpec::dual_branch()));
  CHECK(layers.back().out_shape[0] == 2);
}

TEST_CASE("inconsistent specs are rejected") {
  NetworkSpec s;
  s.input_height = 8;
  CHECK_THROWS_AS(describe_layers(s), ShapeError);
  s = NetworkSpec{};
  s.dropout_rate = 1.0;
  CHECK_THROWS_AS(describe_layers(s), ShapeError);
  s = NetworkSpec{};
  s.conv2_channels = 0;
  CHECK_THROWS_AS(describe_layers(s), ShapeError);
}

TEST_CASE("spec ids round-trip") {
  CHECK(spec_from_id(spec_id(NetworkSpec::dual_branch())) == NetworkSpec::dual_branch());
  CHECK(spec_from_id(spec_id(NetworkSpec::single_branch())) == NetworkSpec::single_branch());
  CHECK(spec_id(probe::small_spec()) == 0u);
  CHECK_THROWS_AS(spec_from_id(99), FormatError);
}

TEST_CASE("init is deterministic, seed dependent, fan-in scaled, with zero biases") {
  const auto spec = NetworkSpec::dual_branch();
  const auto a = init_weights(spec, 7);
  CHECK(a == init_weights(spec, 7));
  CHECK(a != init_weights(spec, 8));
  for (const auto& l : describe_layers(spec)) {
    for (std::size_t i = 0; i < l.bias.count; ++i) REQUIRE(a.values[l.bias.offset + i] == 0.0f);
    if (l.weights.count < 1000) continue;
    const int fan_in = l.kind == LayerKind::Conv3x3 ? l.in_shape[0] * 9 : l.in_shape[0];
    double m = 0, v = 0;
    for (std::size_t i = 0; i < l.weights.count; ++i) m += a.values[l.weights.offset + i];
    m /= static_cast<double>(l.weights.count);
    for (std::size_t i = 0; i < l.weights.count; ++i) {
      const double d = a.values[l.weights.offset + i] - m;
      v += d * d;
    }
    v /= static_cast<double>(l.weights.count);
    CHECK(std::sqrt(v) == doctest::Approx(std::sqrt(2.0 / fan_in)).epsilon(0.05));
  }
}

TEST_CASE("weight checks") {
  const auto spec = NetworkSpec::dual_branch();
  WeightVector w(parameter_count(spec));
  CHECK_NOTHROW(check_weights(spec, w.values));
  WeightVector short_w(10);
  CHECK_THROWS_AS(check_weights(spec, short_w.values), ShapeError);
  w.values[5] = NAN;
  CHECK_THROWS_AS(check_weights(spec, w.values), ShapeError);
}

TEST_CASE("zero weights give a uniform softmax and loss ln 2") {
  const auto spec = NetworkSpec::dual_branch();
  const WeightVector w(parameter_count(spec));
  const auto smp = probe::random_sample(spec, 3);
  const auto d = forward(spec, w, smp);
  CHECK(d.p_tumor == 0.5);
  CHECK(d.p_normal == 0.5);
  CHECK(d.predicted() == Label::Normal);
  const auto lg = backward(spec, w, smp, Label::Tumor);
  CHECK(lg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  CHECK(lg.grad.size() == w.size());
}

TEST_CASE("forward matches the straight-line reference") {
  for (auto arch : {Architecture::DualBranch, Architecture::SingleBranch}) {
    NetworkSpec spec;
    spec.architecture = arch;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto w = probe::random_weights(spec, seed);
      const auto smp = probe::random_sample(spec, 100 + seed);
      const auto d = forward(spec, w, smp);
      const auto ref = oracle::forward(spec, w.values, smp);
      CHECK(d.p_normal == doctest::Approx(ref[0]).epsilon(1e-5));
      CHECK(d.p_tumor == doctest::Approx(ref[1]).epsilon(1e-5));
      CHECK(d.p_tumor + d.p_normal == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(d.p_tumor > 0.0);
      CHECK(d.p_normal > 0.0);
      const auto again = forward(spec, w, smp);
      CHECK(again.p_tumor == d.p_tumor);
    }
  }
}

TEST_CASE("stochastic forward uses the documented dropout masks") {
  const auto spec = NetworkSpec::dual_branch().with_dropout(0.5);
  const auto w = probe::random_weights(spec, 4);
  const auto smp = probe::random_sample(spec, 5);
  const auto d = forward(spec, w, smp, ForwardMode::StochasticDropout, 99);
  const auto ref = oracle::forward(spec, w.values, smp, masks_for(spec, 99));
  CHECK(d.p_tumor == doctest::Approx(ref[1]).epsilon(1e-5));
  const auto det = forward(spec, w, smp);
  const auto ref_det = oracle::forward(spec, w.values, smp);
  CHECK(det.p_tumor == doctest::Approx(ref_det[1]).epsilon(1e-5));
  CHECK_THROWS_AS(forward(NetworkSpec::dual_branch(), w, smp, ForwardMode::StochasticDropout, 1),
                  PreconditionError);
}

TEST_CASE("single branch ignores the right image") {
  const auto spec = NetworkSpec::single_branch();
  const auto w = probe::random_weights(spec, 6);
  auto smp = probe::random_sample(spec, 7);
  const auto before = forward(spec, w, smp);
  for (float& v : smp.right.pixels) v = 1.0f - v;
  CHECK(forward(spec, w, smp).p_tumor == before.p_tumor);
}

TEST_CASE("branch weights are shared by both images") {
  const auto spec = NetworkSpec::dual_branch();
  auto w = probe::random_weights(spec, 8);
  auto smp = probe::random_sample(spec, 9);
  smp.right = smp.left;
  // Swapping the head's left and right input columns is a no-op on identical images.
  const auto layers = describe_layers(spec);
  const LayerInfo* head = nullptr;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::Linear && l.in_shape[0] == 64) head = &l;
  }
  REQUIRE(head != nullptr);
  auto swapped = w;
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 32; ++c) {
      std::swap(swapped.values[head->weights.offset + r * 64 + c], swapped.values[head->weights.offset + r * 64 + 32 + c]);
    }
  }
  CHECK(forward(spec, swapped, smp).p_tumor == doctest::Approx(forward(spec, w, smp).p_tumor).epsilon(1e-6));
}

TEST_CASE("non-finite activations name the layer") {
  const auto spec = NetworkSpec::dual_branch();
  auto w = probe::random_weights(spec, 10);
  const auto smp = probe::random_sample(spec, 11);
  for (const auto& l : describe_layers(spec)) {
    if (l.kind == LayerKind::Conv3x3) {
      for (std::size_t i = 0; i < l.weights.count; ++i) w.values[l.weights.offset + i] = 3e38f;
      break;
    }
  }
  try {
    forward(spec, w, smp);
    FAIL("expected a NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("conv1") != std::string::npos);
  }
}

TEST_CASE("input shape must match the spec") {
  const auto spec = NetworkSpec::dual_branch();
  const WeightVector w(parameter_count(spec));
  const auto smp = probe::random_sample(probe::small_spec(), 1);
  CHECK_THROWS_AS(forward(spec, w, smp), ShapeError);
}

TEST_CASE("backward agrees with finite differences on every layer type") {
  struct Case {
    NetworkSpec spec;
    const char* name;
  };
  const Case cases[] = {
      {probe::small_spec(), "dual"},
      {probe::small_spec(Architecture::SingleBranch), "single"},
      {probe::small_spec(Architecture::DualBranch, 0.3), "dual with fixed dropout mask"},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    for (std::uint64_t draw = 0; draw < 4; ++draw) {
      const auto w32 = probe::random_weights(c.spec, 200 + draw);
      const std::vector<double> w(w32.values.begin(), w32.values.end());
      const auto smp = probe::random_sample(c.spec, 300 + draw);
      const std::uint64_t seed = 400 + draw;
      const auto g = analytic_gradient(c.spec, w, smp, smp.label, seed);
      const auto masks = c.spec.dropout_rate > 0 ? masks_for(c.spec, seed) : std::vector<std::vector<float>>{};
      const auto check = oracle::finite_difference_check(c.spec, w, smp, smp.label, g, masks);
      CHECK(check.max_rel_error < 1e-3);
      CHECK(check.checked > w.size() * 3 / 4);
    }
  }
}

TEST_CASE("float backward matches the double path") {
  const auto spec = probe::small_spec();
  const auto w = probe::random_weights(spec, 12);
  const auto smp = probe::random_sample(spec, 13);
  const auto lg = backward(spec, w, smp, Label::Tumor);
  std::vector<double> wd(w.values.begin(), w.values.end());
  const auto g = analytic_gradient(spec, wd, smp, Label::Tumor, 0);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(lg.grad.values[i] == doctest::Approx(g[i]).epsilon(1e-4).scale(1));
}

TEST_CASE("unreachable weights get zero gradient") {
  // Single branch: nothing depends on the right image, and a zeroed head row
  // input leaves its outgoing weights without signal.
  const auto spec = probe::small_spec(Architecture::SingleBranch);
  const auto w32 = probe::random_weights(spec, 14);
  std::vector<double> w(w32.values.begin(), w32.values.end());
  auto smp = probe::random_sample(spec, 15);
  const auto layers = describe_layers(spec);
  // Kill branch hidden unit 0 by zeroing its incoming weights and bias.
  const LayerInfo* fc = nullptr;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::Linear && fc == nullptr) fc = &l;
  }
  REQUIRE(fc != nullptr);
  const int in = fc->in_shape[0];
  for (int c = 0; c < in; ++c) w[fc->weights.offset + c] = 0.0;
  w[fc->bias.offset] = 0.0;
  const auto g = analytic_gradient(spec, w, smp, Label::Normal, 0);
  const auto check = oracle::finite_difference_check(spec, w, smp, Label::Normal, g);
  CHECK(check.max_rel_error < 1e-3);
  const LayerInfo* head = fc + 1;
  while (head->kind != LayerKind::Linear) ++head;
  for (int r = 0; r < head->out_shape[0]; ++r) CHECK(g[head->weights.offset + r * head->in_shape[0]] == 0.0);
}

TEST_CASE("backward rejects a bad label") {
  const auto spec = probe::small_spec();
  const auto w = probe::random_weights(spec, 1);
  const auto smp = probe::random_sample(spec, 1);
  CHECK_THROWS_AS(backward(spec, w, smp, static_cast<Label>(7)), PreconditionError);
}

TEST_CASE("results do not depend on buffer alignment") {
  for (const auto& spec : {probe::small_spec(), NetworkSpec::dual_branch()}) {
    const auto w = probe::random_weights(spec, 1);
    const auto smp = probe::random_sample(spec, 2);
    std::vector<float> g0(w.size());
    const float l0 = backward_as<float>(spec, w.view(), smp, smp.label, ForwardMode::Deterministic, 0, g0);
    for (int off = 1; off < 8; ++off) {
      std::vector<float> wbuf(w.size() + 8), gbuf(w.size() + 8);
      std::copy(w.values.begin(), w.values.end(), wbuf.begin() + off);
      const std::span<const float> ws(wbuf.data() + off, w.size());
      const std::span<float> gs(gbuf.data() + off, w.size());
      CHECK(backward_as<float>(spec, ws, smp, smp.label, ForwardMode::Deterministic, 0, gs) == l0);
      CHECK(std::equal(g0.begin(), g0.end(), gs.begin()));
      CHECK(forward(spec, ws, smp).p_tumor == forward(spec, w, smp).p_tumor);
    }
  }
}
