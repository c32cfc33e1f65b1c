#include <doctest.h>

#include <cmath>

#include "latentlab/forward.hpp"
#include "reference_forward.hpp"
#include "toy_models.hpp"

using namespace latentlab;
using namespace latentlab::testing;

namespace {

std::vector<TokenId> ids_upto(int n) {
  std::vector<TokenId> ids;
  for (int i = 0; i < n; ++i) ids.push_back(i);
  return ids;
}

}  // namespace

TEST_CASE("forward matches the straight-line reference implementation") {
  const TransformerModel model = init_random(small_config(2, 8, 2, 12, 12, 32, 11));
  const std::vector<TokenId> ids = {0, 5, 3, 9, 2, 7};
  const ForwardTrace trace = forward(model, ids, {});
  const auto ref = reference_logits(model, ids);
  REQUIRE(trace.logits.rows() == static_cast<Eigen::Index>(ids.size()));
  double max_err = 0.0;
  for (Eigen::Index i = 0; i < trace.logits.rows(); ++i)
    for (Eigen::Index j = 0; j < trace.logits.cols(); ++j) {
      const double got = trace.logits(i, j);
      const double want = ref[static_cast<std::size_t>(i) * static_cast<std::size_t>(trace.logits.cols()) +
                              static_cast<std::size_t>(j)];
      max_err = std::max(max_err, std::abs(got - want));
    }
  CHECK(max_err < 1e-10);
}

TEST_CASE("capture then identity patch reproduces logits bit for bit") {
  const TransformerModel model = init_random(small_config(3, 8, 2, 12, 12, 48, 21));
  const std::vector<TokenId> ids = ids_upto(7);
  const Matrix baseline = forward(model, ids, {}).logits;

  for (int layer : {0, 1, 3}) {
    for (int pos : {0, 3, 6}) {
      HookPlan capture;
      capture.captures.push_back({layer, pos});
      const ForwardTrace traced = forward(model, ids, capture);
      CHECK(traced.logits == baseline);

      HookPlan patch;
      patch.patches.push_back({layer, pos, traced.captured_at(layer, pos)});
      const ForwardTrace patched = forward(model, ids, patch);
      CHECK(patched.logits == baseline);
    }
  }
}

TEST_CASE("patches change downstream logits only") {
  const TransformerModel model = init_random(small_config(2, 8, 2, 12, 12, 32, 4));
  const std::vector<TokenId> ids = ids_upto(6);
  const Matrix baseline = forward(model, ids, {}).logits;

  HookPlan plan;
  plan.patches.push_back({1, 2, Vector::Constant(8, 0.7)});
  const Matrix patched = forward(model, ids, plan).logits;
  CHECK(patched != baseline);
  // Causality: positions before the patch site are unaffected.
  for (int pos = 0; pos < 2; ++pos) CHECK(patched.row(pos) == baseline.row(pos));
}

TEST_CASE("hook plans are validated against model and sequence bounds") {
  const TransformerModel model = init_random(small_config(2, 8, 2, 12, 12, 32, 4));
  const std::vector<TokenId> ids = ids_upto(4);

  HookPlan bad_layer;
  bad_layer.captures.push_back({3, 0});  // valid residual indices are 0..2
  CHECK_THROWS_AS(forward(model, ids, bad_layer), Error);

  HookPlan bad_pos;
  bad_pos.captures.push_back({0, 4});
  CHECK_THROWS_AS(forward(model, ids, bad_pos), Error);

  HookPlan bad_dim;
  bad_dim.patches.push_back({1, 1, Vector::Zero(5)});
  CHECK_THROWS_AS(forward(model, ids, bad_dim), Error);

  HookPlan last;
  last.captures.push_back({2, 3});
  CHECK_NOTHROW(forward(model, ids, last));
}

TEST_CASE("out-of-range token ids and oversize sequences are rejected") {
  const TransformerModel model = init_random(small_config(1, 8, 2, 12, 12, 6, 4));
  CHECK_THROWS_AS(forward(model, {0, 12}, {}), Error);
  CHECK_THROWS_AS(forward(model, ids_upto(7), {}), Error);
  CHECK_THROWS_AS(forward(model, {}, {}), Error);
}

TEST_CASE("next token distribution is a softmax over the last row") {
  const TransformerModel model = init_random(small_config(1, 8, 2, 12, 12, 32, 9));
  const std::vector<TokenId> ids = {0, 4, 8};
  const ForwardTrace trace = forward(model, ids, {});
  const Vector dist = next_token_distribution(trace, 2);
  CHECK(dist.size() == 12);
  CHECK(dist.minCoeff() > 0.0);
  CHECK(std::abs(dist.sum() - 1.0) < 1e-12);
  Eigen::Index argmax_logit, argmax_prob;
  trace.logits.row(2).maxCoeff(&argmax_logit);
  dist.maxCoeff(&argmax_prob);
  CHECK(argmax_logit == argmax_prob);
}

TEST_CASE("greedy decoding breaks logit ties toward the lowest id") {
  // A model whose logits are constant gives an exact tie everywhere.
  TransformerModel model = init_random(small_config(1, 8, 2, 12, 12, 32, 2));
  model.output_proj = Matrix::Zero(8, 12);
  const auto out = decode_greedy(model, {0, 1}, 3, {});
  REQUIRE(out.size() == 3);
  for (TokenId t : out) CHECK(t == 0);
}

TEST_CASE("greedy decoding re-applies prompt patches at every step") {
  const SentinelWorld world = build_sentinel_world();
  const Tokenizer& tok = world.tokenizer;
  const auto prompt = tok.encode("neg03 :");
  std::vector<TokenId> ids = {tok.bos_id()};
  ids.insert(ids.end(), prompt.begin(), prompt.end());

  const auto base = decode_greedy(world.model, ids, 2, {});
  REQUIRE(base.size() == 2);
  CHECK(tok.token(base[0]) == "neg03");
  CHECK(tok.token(base[1]) == "blk");

  // Overwrite the stimulus residual with zeros at embedding level; the
  // pinned patch must keep suppressing the copy head on both steps.
  HookPlan plan;
  plan.patches.push_back({0, 1, Vector::Zero(world.model.config.d_model)});
  const auto patched = decode_greedy(world.model, ids, 2, plan);
  CHECK(patched != base);
}

TEST_CASE("recorded forward requires an empty hook plan") {
  const TransformerModel model = init_random(small_config(1, 8, 2, 12, 12, 32, 2));
  ForwardActivations acts;
  HookPlan plan;
  plan.captures.push_back({0, 0});
  CHECK_THROWS_AS(forward(model, {0, 1}, plan, nullptr, &acts), Error);
  CHECK_NOTHROW(forward(model, {0, 1}, {}, nullptr, &acts));
  CHECK(acts.layers.size() == 1);
  CHECK(acts.h_final.rows() == 2);
}
