#include "syncspeech/trainer.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace syncspeech;

namespace {

VocabLayout V;

ModelConfig small_config(std::size_t layers = 1, std::size_t dim = 32) {
  auto c = ModelConfig::for_vocab(V);
  c.num_layers = layers;
  c.num_heads = 2;
  c.model_dim = dim;
  c.ffn_dim = 2 * dim;
  return c;
}

Checkpoint fresh(const ModelConfig& c, std::uint64_t seed) {
  Checkpoint ck;
  ck.vocab = V;
  ck.params = init_params(c, seed);
  return ck;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("syncspeech_test_" + name);
}

// Cross-entropy of one row, computed directly.
double row_ce(const Tensor& logits, std::size_t row, int target) {
  const std::size_t m = logits.cols();
  double mx = -1e300;
  for (std::size_t c = 0; c < m; ++c) mx = std::max(mx, logits.at(row, c));
  double z = 0;
  for (std::size_t c = 0; c < m; ++c) z += std::exp(logits.at(row, c) - mx);
  return -(logits.at(row, static_cast<std::size_t>(target)) - mx - std::log(z));
}

}  // namespace

TEST_CASE("supervised loss extremes") {
  Tape tape;
  std::vector<int> st{3, 7}, dt{0};
  SUBCASE("one-hot logits give near-zero loss") {
    std::vector<double> s(2 * 64, 0.0), d(33, 0.0);
    s[3] = 100;
    s[64 + 7] = 100;
    d[0] = 100;
    auto loss = supervised_loss(tape, Tensor({2, 64}, s), st, Tensor({1, 33}, d), dt);
    CHECK(loss.mask_value() < 1e-20);
    CHECK(loss.duration_value() < 1e-20);
  }
  SUBCASE("uniform logits give ln of the class counts") {
    auto loss = supervised_loss(tape, Tensor::zeros({2, 64}), st, Tensor::zeros({1, 33}), dt);
    CHECK(loss.mask_value() == doctest::Approx(std::log(64.0)));
    CHECK(loss.duration_value() == doctest::Approx(std::log(33.0)));
    CHECK(loss.speech_positions == 2);
    CHECK(loss.duration_positions == 1);
  }
}

TEST_CASE("steps reject empty batches and skip empty targets") {
  auto ck = fresh(small_config(), 1);
  auto opt = make_adam_state(ck.params);
  TrainConfig tc;
  Rng rng(1);
  std::vector<AlignedExample> empty;
  CHECK_THROWS(pretrain_step(ck.params, empty, rng, opt, tc, V));
  CHECK_THROWS(finetune_step(ck.params, empty, rng, opt, tc, V));
  // one-token sentences: pretraining masks nothing half the time
  std::vector<AlignedExample> singles(4, example_from_text({3}, V));
  std::size_t skipped = 0;
  for (int i = 0; i < 20; ++i) {
    auto r = pretrain_step(ck.params, singles, rng, opt, tc, V);
    if (r.speech_positions == 0) {
      ++skipped;
      CHECK(r.total == 0.0);
    }
  }
  CHECK(skipped > 0);
}

TEST_CASE("initial loss is near uniform") {
  auto ck = fresh(ModelConfig::for_vocab(V), 7);
  auto corpus = generate_corpus(64, 3, V);
  auto opt = make_adam_state(ck.params);
  TrainConfig tc;
  Rng rng(5);
  auto r = finetune_step(ck.params, std::span(corpus).subspan(0, 16), rng, opt, tc, V);
  const double expected = std::log(64.0) + std::log(33.0);
  CHECK(r.total == doctest::Approx(expected).epsilon(0.1));
  CHECK(r.duration_positions == 32);  // first and trailing D per sample
  tc.supervise_first_duration = false;
  auto opt2 = make_adam_state(ck.params);
  Rng rng2(5);
  CHECK(finetune_step(ck.params, std::span(corpus).subspan(0, 16), rng2, opt2, tc, V).duration_positions == 16);
}

TEST_CASE("identical seeds give identical reports") {
  auto corpus = generate_corpus(40, 2, V);
  TrainConfig tc;
  tc.steps = 5;
  tc.batch_size = 4;
  for (auto stage : {Stage::pretrain, Stage::finetune}) {
    tc.stage = stage;
    auto a = run_training(tc, corpus, fresh(small_config(), 9));
    auto b = run_training(tc, corpus, fresh(small_config(), 9));
    CHECK(a.reports == b.reports);
    auto na = a.checkpoint.params.named(), nb = b.checkpoint.params.named();
    for (std::size_t i = 0; i < na.size(); ++i)
      CHECK(std::equal(na[i].second.data().begin(), na[i].second.data().end(), nb[i].second.data().begin()));
  }
}

TEST_CASE("learning-rate schedule") {
  TrainConfig tc;
  tc.steps = 1100;
  tc.warmup_steps = 100;
  CHECK(learning_rate_at(tc, 0) == doctest::Approx(3e-6));
  CHECK(learning_rate_at(tc, 99) == doctest::Approx(3e-4));
  CHECK(learning_rate_at(tc, 100) == doctest::Approx(3e-4));
  CHECK(learning_rate_at(tc, 600) == doctest::Approx(3e-4 * (0.1 + 0.9 * 0.5)));
  CHECK(learning_rate_at(tc, 1100) == doctest::Approx(3e-5));
  for (std::size_t s = 100; s < 1100; ++s) CHECK(learning_rate_at(tc, s + 1) <= learning_rate_at(tc, s));
}

TEST_CASE("adam update against hand computation") {
  ModelParams p;
  p.config = small_config();
  p.embedding = Tensor({2}, {1.0, -2.0}, true);
  p.positions = Tensor({1}, {0.25}, true);
  p.final_norm = Tensor({1}, {0.5}, true);
  p.speech_head = Tensor({1}, {0.0}, true);
  p.duration_head = Tensor({1}, {0.0}, true);
  auto g = p.embedding.mutable_grad();
  g[0] = 0.3;
  g[1] = -0.4;
  TrainConfig tc;
  tc.clip_norm = 0.25;  // norm 0.5 -> scaled by 0.5
  AdamState st;
  const double norm = adam_update(p, st, tc, 0.1);
  CHECK(norm == doctest::Approx(0.5));
  // first step: m_hat = g', v_hat = g'^2, update = lr * sign(g') (up to eps)
  CHECK(p.embedding.at(0) == doctest::Approx(1.0 - 0.1).epsilon(1e-6));
  CHECK(p.embedding.at(1) == doctest::Approx(-2.0 + 0.1).epsilon(1e-6));
  CHECK(p.final_norm.at(0) == 0.5);
  CHECK(p.positions.at(0) == 0.25);
  CHECK(st.step == 1);
}

TEST_CASE("fine-tune gradients flow only from supervised positions") {
  auto p = init_params(small_config(1, 16), 2);
  Rng rng(4);
  std::vector<TrainingSample> samples;
  for (int k = 0; k < 3; ++k) {
    auto ex = oracle::random_example(rng, V, 5, 3);
    auto fs = build_finetune_sequence(ex, 1 + static_cast<std::size_t>(k) % ex.num_text(), 1, V);
    samples.push_back({fs.sequence, fs.targets});
  }
  auto grads_of = [&](bool full_heads) {
    p.zero_grad();
    Tape tape;
    SupervisedLoss loss;
    if (!full_heads) {
      loss = batch_loss(tape, p, samples, true);
    } else {
      // heads over every row, then select supervised rows from the logits
      std::vector<AttentionMask> masks;
      for (auto& s : samples) masks.push_back(build_designed_mask(s.sequence));
      std::vector<SequenceInput> in;
      for (std::size_t i = 0; i < samples.size(); ++i) in.push_back({samples[i].sequence.ids, &masks[i]});
      auto h = forward_hidden(tape, p, in);
      auto logits = apply_heads(tape, p, h.hidden);
      std::vector<std::size_t> sr, dr;
      std::vector<int> st, dt;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        for (auto& t : samples[i].targets.speech) sr.push_back(h.offsets[i] + t.position), st.push_back(t.value);
        for (auto& t : samples[i].targets.duration) dr.push_back(h.offsets[i] + t.position), dt.push_back(t.value);
      }
      loss = supervised_loss(tape, gather_rows(tape, logits.speech, sr), st, gather_rows(tape, logits.duration, dr), dt);
    }
    tape.backward(add(tape, loss.mask_loss, loss.duration_loss));
    std::vector<double> all;
    for (auto& t : p.tensors()) all.insert(all.end(), t.grad().begin(), t.grad().end());
    return all;
  };
  auto a = grads_of(false), b = grads_of(true);
  REQUIRE(a.size() == b.size());
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), 1e-12}));
  CHECK(worst < 1e-9);
}

TEST_CASE("single-forward pretraining loss equals truncated-sequence loss") {
  auto p = init_params(small_config(2, 16), 6);
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    auto ex = oracle::random_example(rng, V, 6, 4);
    auto ps = build_pretrain_sequence(ex, rng, V);
    if (ps.plan.masked_spans.empty()) continue;
    const auto& seq = ps.sequence;
    auto full = forward(p, seq.ids, build_designed_mask(seq));
    for (std::size_t j : ps.plan.masked_spans) {
      const auto& b = seq.span_bounds[j - 1];
      // independent truncation: keep everything up to the end of span j
      ComposedSequence cut;
      cut.ids.assign(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(b.end));
      cut.roles.assign(seq.roles.begin(), seq.roles.begin() + static_cast<std::ptrdiff_t>(b.end));
      cut.span_index.assign(seq.span_index.begin(), seq.span_index.begin() + static_cast<std::ptrdiff_t>(b.end));
      cut.span_bounds.assign(seq.span_bounds.begin(), seq.span_bounds.begin() + static_cast<std::ptrdiff_t>(j));
      auto part = forward(p, cut.ids, build_designed_mask(cut));
      double lf = 0, lp = 0;
      for (std::size_t pos = b.begin; pos < b.end; ++pos) {
        const int target = ex.speech[static_cast<std::size_t>(ex.span_begin(j)) + pos - b.begin];
        lf += row_ce(full.speech, pos, target);
        lp += row_ce(part.speech, pos, target);
      }
      lf += row_ce(full.duration, b.begin - 1, ex.duration(j));
      lp += row_ce(part.duration, b.begin - 1, ex.duration(j));
      CHECK(std::abs(lf - lp) <= 1e-9 * std::abs(lp));
    }
  }
}

TEST_CASE("steps = 0 emits the initial checkpoint unchanged and resumes exactly") {
  auto corpus = generate_corpus(10, 1, V);
  auto init = fresh(small_config(), 3);
  TrainConfig tc;
  tc.steps = 0;
  tc.checkpoint_path = temp_path("zero_steps.bin");
  auto r = run_training(tc, corpus, init);
  auto loaded = load_checkpoint(tc.checkpoint_path);
  auto a = init.params.named(), b = loaded.params.named();
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(std::equal(a[i].second.data().begin(), a[i].second.data().end(), b[i].second.data().begin()));
  CHECK(r.reports.empty());
}

TEST_CASE("training writes checkpoint and curve") {
  auto corpus = generate_corpus(30, 1, V);
  TrainConfig tc;
  tc.steps = 3;
  tc.batch_size = 2;
  tc.checkpoint_path = temp_path("ck.bin");
  tc.curve_path = temp_path("curve.csv");
  auto r = run_training(tc, corpus, fresh(small_config(), 3));
  CHECK(std::filesystem::exists(tc.checkpoint_path));
  std::ifstream in(tc.curve_path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,stage,l_mask,l_duration,total,wall_ms");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 3);
  CHECK(load_checkpoint(tc.checkpoint_path).step == 3);
  for (const auto& rep : r.reports) {
    CHECK(std::isfinite(rep.total));
    CHECK(rep.l_mask >= 0);
    CHECK(rep.l_duration >= 0);
  }
  tc.checkpoint_path = "/nonexistent_dir/for/sure/ck.bin";
  CHECK_THROWS(run_training(tc, corpus, fresh(small_config(), 3)));
}

TEST_CASE("untrained model is at chance") {
  auto p = init_params(small_config(), 12);
  auto corpus = generate_corpus(30, 4, V);
  auto m = evaluate(p, corpus, 1, V);
  CHECK(m.speech_token_accuracy < 0.1);
  CHECK(m.spans > 0);
  CHECK(m.tokens > m.spans);
}

TEST_CASE("loss decreases over 200-step windows after warmup") {
  auto corpus = generate_corpus(200, 5, V);
  TrainConfig tc;
  tc.stage = Stage::finetune;
  tc.steps = 1000;
  tc.batch_size = 8;
  tc.learning_rate = 1e-3;
  auto r = run_training(tc, corpus, fresh(small_config(1, 32), 4));
  std::vector<double> windows;
  for (std::size_t start = tc.warmup_steps; start + 200 <= tc.steps; start += 200) {
    double s = 0;
    for (std::size_t i = start; i < start + 200; ++i) s += r.reports[i].total;
    windows.push_back(s / 200.0);
  }
  INFO("window means " << windows[0] << " " << windows.back());
  for (std::size_t i = 1; i < windows.size(); ++i) CHECK(windows[i] <= windows[i - 1]);
}
