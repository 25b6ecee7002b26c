#include "syncspeech/model.hpp"
#include "syncspeech/trainer.hpp"

#include "oracles.hpp"

#include <doctest.h>

using namespace syncspeech;

namespace {

VocabLayout V;

ModelConfig tiny_config(std::size_t layers = 1, std::size_t dim = 16) {
  auto c = ModelConfig::for_vocab(V);
  c.num_layers = layers;
  c.num_heads = 2;
  c.model_dim = dim;
  c.ffn_dim = 2 * dim;
  return c;
}

bool rows_equal(const Tensor& a, const Tensor& b, std::size_t ra, std::size_t rb) {
  for (std::size_t c = 0; c < a.cols(); ++c)
    if (a.at(ra, c) != b.at(rb, c)) return false;
  return true;
}

}  // namespace

TEST_CASE("config derived from the vocab layout") {
  auto c = ModelConfig::for_vocab(V);
  CHECK(c.total_vocab == 100);
  CHECK(c.speech_vocab == 64);
  CHECK(c.num_duration_classes == 33);
  CHECK(c.num_layers == 4);
  CHECK(c.model_dim == 128);
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.num_heads = 3;
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.num_duration_classes = 1;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("parameter count matches the closed form") {
  auto c = ModelConfig::for_vocab(V);
  // V*d + max_len*d + layers*(2d + 4d^2 + 3df) + d + d*V_s + d*C
  const std::size_t d = 128, f = 256;
  const std::size_t expected = 100 * d + 512 * d + 4 * (2 * d + 4 * d * d + 3 * d * f) + d + d * 64 + d * 33;
  CHECK(count_parameters(c) == expected);
  CHECK(count_parameters(c) == 747264);
  auto rope_only = c;
  rope_only.learned_positions = false;
  CHECK(count_parameters(rope_only) == 681728);
  auto p = init_params(c, 1);
  std::size_t total = 0;
  for (const auto& t : p.tensors()) total += t.numel();
  CHECK(total == expected);
  CHECK(p.embedding.shape() == Shape{100, 128});
  CHECK(p.speech_head.shape() == Shape{128, 64});
  CHECK(p.duration_head.shape() == Shape{128, 33});
}

TEST_CASE("init is deterministic and scaled") {
  auto c = tiny_config(2, 32);
  auto a = init_params(c, 5), b = init_params(c, 5), other = init_params(c, 6);
  auto na = a.named(), nb = b.named(), no = other.named();
  REQUIRE(na.size() == nb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    CHECK(na[i].first == nb[i].first);
    CHECK(std::equal(na[i].second.data().begin(), na[i].second.data().end(), nb[i].second.data().begin()));
    any_diff |= !std::equal(na[i].second.data().begin(), na[i].second.data().end(), no[i].second.data().begin());
  }
  CHECK(any_diff);
  for (double x : a.layers[0].attn_norm.data()) CHECK(x == 1.0);
  auto stddev = [](const Tensor& t) {
    double s = 0;
    for (double x : t.data()) s += x * x;
    return std::sqrt(s / static_cast<double>(t.numel()));
  };
  CHECK(stddev(a.embedding) == doctest::Approx(0.02).epsilon(0.1));
  CHECK(stddev(a.layers[0].wo) == doctest::Approx(0.02 / std::sqrt(4.0)).epsilon(0.15));
}

TEST_CASE("forward shapes, determinism and errors") {
  auto c = tiny_config();
  c.max_seq_len = 32;
  auto p = init_params(c, 3);
  std::vector<int> ids{1, 2, 3, V.dur_id(), V.mask_id(), V.mask_id(), V.dur_id()};
  auto mask = build_causal_mask(ids.size());
  auto a = forward(p, ids, mask), b = forward(p, ids, mask);
  CHECK(a.speech.shape() == Shape{7, 64});
  CHECK(a.duration.shape() == Shape{7, 33});
  for (std::size_t i = 0; i < a.speech.numel(); ++i) REQUIRE(a.speech.at(i) == b.speech.at(i));
  CHECK_THROWS(forward(p, ids, build_causal_mask(6)));
  std::vector<int> long_ids(33, 1);
  CHECK_THROWS(forward(p, long_ids, build_causal_mask(33)));
  std::vector<int> bad_ids{1, 200};
  CHECK_THROWS(forward(p, bad_ids, build_causal_mask(2)));
}

TEST_CASE("rows with identical visible context are identical") {
  auto p = init_params(tiny_config(), 4);
  std::vector<int> abc{5, 9, 2}, ab{5, 9};
  auto long_out = forward(p, abc, build_causal_mask(3));
  auto short_out = forward(p, ab, build_causal_mask(2));
  CHECK(rows_equal(long_out.speech, short_out.speech, 1, 1));
  CHECK(rows_equal(long_out.duration, short_out.duration, 0, 0));
  std::vector<int> other{5, 9, 3};
  auto changed = forward(p, other, build_causal_mask(3));
  CHECK_FALSE(rows_equal(long_out.speech, changed.speech, 2, 2));
}

TEST_CASE("masking isolation by perturbation probes") {
  auto p = init_params(tiny_config(2, 16), 8);
  Rng rng(9);
  std::uniform_int_distribution<int> any_id(0, V.total_vocab() - 1);
  std::size_t probes = 0;
  while (probes < 100) {
    auto ex = oracle::random_example(rng, V, 6, 4);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, ex.num_text())(rng);
    auto seq = build_finetune_sequence(ex, n, 1, V).sequence;
    auto mask = build_designed_mask(seq);
    auto base = forward(p, seq.ids, mask);
    const std::size_t N = seq.size();
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, N - 1)(rng);
    // positions i may not see: perturb all of them at once
    auto perturbed = seq.ids;
    bool any = false;
    for (std::size_t j = 0; j < N; ++j)
      if (!mask(i, j)) {
        perturbed[j] = any_id(rng);
        any = true;
      }
    if (!any) continue;
    auto out = forward(p, perturbed, mask);
    REQUIRE(rows_equal(base.speech, out.speech, i, i));
    REQUIRE(rows_equal(base.duration, out.duration, i, i));
    // and perturbing a visible position changes the row
    std::size_t j = std::uniform_int_distribution<std::size_t>(0, i)(rng);
    auto visible = seq.ids;
    visible[j] = (visible[j] + 1) % V.total_vocab();
    auto out2 = forward(p, visible, mask);
    CHECK_FALSE(rows_equal(base.speech, out2.speech, i, i));
    ++probes;
  }
}

TEST_CASE("full loss gradient check on a one-layer width-16 model") {
  auto p = init_params(tiny_config(1, 16), 10);
  Rng rng(11);
  std::vector<TrainingSample> samples;
  for (int k = 0; k < 2; ++k) {
    auto ex = oracle::random_example(rng, V, 4, 3);
    auto fs = build_finetune_sequence(ex, 1 + k % ex.num_text(), 1, V);
    samples.push_back({fs.sequence, fs.targets});
  }
  auto params = p.tensors();
  GradCheckOptions opts;
  opts.total_samples = 200;
  opts.seed = 3;
  auto report = grad_check(
      [&](Tape& t) {
        auto loss = batch_loss(t, p, samples, true);
        return add(t, loss.mask_loss, loss.duration_loss);
      },
      params, 1e-3, opts);
  INFO("worst " << report.worst);
  CHECK(report.checked == 200);
  CHECK(report.passed);
}

TEST_CASE("FLOP estimate") {
  auto c = ModelConfig::for_vocab(V);
  CHECK(count_flops(c, 64) == 93863936.0);
  auto z = c;
  z.num_layers = 0;
  CHECK(count_flops(z, 10) == 2.0 * 10 * 128 * (64 + 33));
  // attention term is quadratic
  auto attn = [&](std::size_t n) { return count_flops(c, n) - 2.0 * double(n) * 128 * 97; };
  CHECK(attn(128) > 2.0 * attn(64));
}

TEST_CASE("clone gives independent storage") {
  auto p = init_params(tiny_config(), 1);
  auto q = clone_params(p);
  q.embedding.mutable_data()[0] += 1.0;
  CHECK(p.embedding.at(0) != q.embedding.at(0));
}
