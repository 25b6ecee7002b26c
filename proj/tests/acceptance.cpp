// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include "syncspeech/checkpoint.hpp"
#include "syncspeech/latency.hpp"
#include "syncspeech/stream.hpp"
#include "syncspeech/trainer.hpp"

#include "oracles.hpp"
#include "stream_oracle.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

using namespace syncspeech;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double x, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << x;
  return s.str();
}

VocabLayout V;

// Composed sequences of all three kinds, L <= 8, spans <= 6.
ComposedSequence random_sequence(Rng& rng, int kind) {
  auto ex = oracle::random_example(rng, V, 8, 6);
  const std::size_t L = ex.num_text();
  switch (kind % 3) {
    case 0: {
      const std::size_t n = std::uniform_int_distribution<std::size_t>(1, L)(rng);
      const std::size_t q = std::uniform_int_distribution<std::size_t>(0, 2)(rng);
      return build_finetune_sequence(ex, n, q, V).sequence;
    }
    case 1: return build_pretrain_sequence(ex, rng, V).sequence;
    default: {
      auto seq = build_prompt_prefix(ex, V);
      append_text(seq, 1, V);
      append_text(seq, 2, V);
      append_placeholder(seq, V);
      pad_seq(seq, 1 + static_cast<int>(rng() % 6), V);
      return seq;
    }
  }
}

Outcome criterion_1() {
  const auto t0 = Clock::now();
  Rng rng(101);
  for (int i = 0; i < 1000; ++i) {
    auto seq = random_sequence(rng, i);
    const auto designed = build_designed_mask(seq);
    if (designed != oracle_mask(seq.roles, seq.span_index, seq.span_bounds))
      return {false, "mismatch vs oracle_mask at draw " + std::to_string(i)};
    for (std::size_t r = 0; r < seq.size(); ++r)
      for (std::size_t c = 0; c < seq.size(); ++c)
        if (designed(r, c) != oracle::allowed(seq, r, c))
          return {false, "mismatch vs pairwise rule at draw " + std::to_string(i)};
  }
  const double s = seconds_since(t0);
  return {s < 5.0, "1000 sequences exact, " + fmt(s, 3) + " s"};
}

Outcome criterion_2() {
  Rng rng(202);
  for (int i = 0; i < 1000; ++i) {
    auto ex = oracle::random_example(rng, V, 10, 6);
    const std::size_t L = ex.num_text();
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, L)(rng);
    const std::size_t q = std::uniform_int_distribution<std::size_t>(0, 3)(rng);
    auto fs = build_finetune_sequence(ex, n, q, V);
    const auto& seq = fs.sequence;
    const std::string at = " at draw " + std::to_string(i);
    if (seq.size() != oracle::finetune_length(ex, n, q)) return {false, "length formula" + at};
    if (seq.ids != oracle::finetune_ids(ex, n, q, V)) return {false, "layout" + at};
    // masked rows: exactly span n, each seeing the whole span and nothing later
    const auto mask = build_designed_mask(seq);
    const auto& span = seq.span_bounds[n - 1];
    for (std::size_t r = 0; r < seq.size(); ++r) {
      const bool in_span = r >= span.begin && r < span.end;
      if ((seq.roles[r] == PositionRole::masked_speech) != in_span) return {false, "masked positions" + at};
      if (!in_span) continue;
      for (std::size_t c = 0; c < seq.size(); ++c) {
        const bool expect = c < span.end;
        if (mask(r, c) != expect) return {false, "span-n mask row" + at};
      }
    }
    if (fs.targets.speech.size() != span.size() || fs.targets.duration.size() != 1)
      return {false, "targets" + at};
  }
  return {true, "1000 draws exact"};
}

Outcome criterion_3() {
  auto c = ModelConfig::for_vocab(V);
  c.num_layers = 2;
  c.model_dim = 32;
  c.num_heads = 2;
  c.ffn_dim = 64;
  auto p = init_params(c, 303);
  Rng rng(304);
  auto ce = [](const Tensor& logits, std::size_t row, int target) {
    const std::size_t m = logits.cols();
    double mx = -1e300, z = 0;
    for (std::size_t k = 0; k < m; ++k) mx = std::max(mx, logits.at(row, k));
    for (std::size_t k = 0; k < m; ++k) z += std::exp(logits.at(row, k) - mx);
    return -(logits.at(row, static_cast<std::size_t>(target)) - mx - std::log(z));
  };
  double worst = 0;
  int pairs = 0;
  while (pairs < 100) {
    auto ex = oracle::random_example(rng, V, 8, 5);
    auto ps = build_pretrain_sequence(ex, rng, V);
    if (ps.plan.masked_spans.empty()) continue;
    const auto& plan = ps.plan.masked_spans;
    const std::size_t j = plan[std::uniform_int_distribution<std::size_t>(0, plan.size() - 1)(rng)];
    const auto& seq = ps.sequence;
    const auto full = forward(p, seq.ids, build_designed_mask(seq));
    // truncated f_{<= a_j}, built from the example rather than by slicing:
    // text, EOT, then D + span per token up to j (span j masked, earlier
    // spans masked exactly as in the plan)
    std::vector<int> ids(ex.text.begin(), ex.text.end());
    ids.push_back(V.eot_id());
    std::set<std::size_t> masked(plan.begin(), plan.end());
    std::size_t span_begin = 0;
    for (std::size_t k = 1; k <= j; ++k) {
      ids.push_back(V.dur_id());
      if (k == j) span_begin = ids.size();
      for (int s = ex.span_begin(k); s < ex.span_end(k); ++s)
        ids.push_back(masked.count(k) ? V.mask_id() : V.speech_embedding(ex.speech[static_cast<std::size_t>(s)]));
    }
    if (!std::equal(ids.begin(), ids.end(), seq.ids.begin())) return {false, "truncation layout differs"};
    ComposedSequence cut;
    cut.ids = ids;
    cut.roles.assign(seq.roles.begin(), seq.roles.begin() + static_cast<std::ptrdiff_t>(ids.size()));
    cut.span_index.assign(seq.span_index.begin(), seq.span_index.begin() + static_cast<std::ptrdiff_t>(ids.size()));
    cut.span_bounds.assign(seq.span_bounds.begin(), seq.span_bounds.begin() + static_cast<std::ptrdiff_t>(j));
    const auto part = forward(p, cut.ids, build_designed_mask(cut));
    double lf = 0, lp = 0;
    for (std::size_t pos = span_begin; pos < ids.size(); ++pos) {
      const int target = ex.speech[static_cast<std::size_t>(ex.span_begin(j)) + pos - span_begin];
      lf += ce(full.speech, pos, target);
      lp += ce(part.speech, pos, target);
    }
    lf += ce(full.duration, span_begin - 1, ex.duration(j));
    lp += ce(part.duration, span_begin - 1, ex.duration(j));
    worst = std::max(worst, std::abs(lf - lp) / std::abs(lp));
    ++pairs;
  }
  return {worst <= 1e-9, "100 pairs, worst relative difference " + fmt(worst, 3)};
}

Outcome criterion_4() {
  const auto t0 = Clock::now();
  auto c = ModelConfig::for_vocab(V);
  c.num_layers = 1;
  c.model_dim = 16;
  c.num_heads = 2;
  c.ffn_dim = 32;
  auto p = init_params(c, 404);
  Rng rng(405);
  std::vector<TrainingSample> samples;
  for (int k = 0; k < 2; ++k) {
    auto ex = oracle::random_example(rng, V, 5, 3);
    auto fs = build_finetune_sequence(ex, 1 + static_cast<std::size_t>(k) % ex.num_text(), 1, V);
    samples.push_back({fs.sequence, fs.targets});
  }
  auto pre_ex = oracle::random_example(rng, V, 5, 3);
  auto pre = build_pretrain_sequence(pre_ex, make_pretrain_plan(pre_ex, true), V);
  samples.push_back({pre.sequence, pre.targets});
  GradCheckOptions opts;
  opts.total_samples = 200;
  opts.seed = 406;
  auto report = grad_check(
      [&](Tape& t) {
        auto loss = batch_loss(t, p, samples, true);
        return add(t, loss.mask_loss, loss.duration_loss);
      },
      p.tensors(), 1e-3, opts);
  const double s = seconds_since(t0);
  return {report.passed && report.checked == 200 && s < 120.0,
          std::to_string(report.checked) + " parameters, max relative error " + fmt(report.worst, 3) + ", " +
              fmt(s, 3) + " s"};
}

Outcome criterion_5() {
  auto c = ModelConfig::for_vocab(V);
  c.num_layers = 2;
  c.model_dim = 32;
  c.num_heads = 4;
  c.ffn_dim = 64;
  auto p = init_params(c, 505);
  Rng rng(506);
  std::uniform_int_distribution<int> any_id(0, V.total_vocab() - 1);
  int probes = 0;
  auto same_row = [](const Logits& a, const Logits& b, std::size_t i) {
    for (std::size_t k = 0; k < a.speech.cols(); ++k)
      if (a.speech.at(i, k) != b.speech.at(i, k)) return false;
    for (std::size_t k = 0; k < a.duration.cols(); ++k)
      if (a.duration.at(i, k) != b.duration.at(i, k)) return false;
    return true;
  };
  for (int draw = 0; probes < 100; ++draw) {
    auto seq = random_sequence(rng, draw);
    const auto mask = build_designed_mask(seq);
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, seq.size() - 1)(rng);
    auto ids = seq.ids;
    bool any = false;
    for (std::size_t j = 0; j < seq.size(); ++j)
      if (!mask(i, j)) ids[j] = any_id(rng), any = true;
    if (!any) continue;
    const auto base = forward(p, seq.ids, mask);
    const auto moved = forward(p, ids, mask);
    if (!same_row(base, moved, i)) return {false, "row changed at probe " + std::to_string(probes)};
    ++probes;
  }
  return {true, "100 probes exact"};
}

struct Trained {
  bool ok = false;
  Checkpoint checkpoint;
  std::vector<AlignedExample> train, held_out;
};

Outcome criterion_6(const fs::path& workdir, Trained& trained) {
  const auto t0 = Clock::now();
  trained.train = generate_corpus(2000, 1, V);
  std::set<std::vector<int>> seen;
  for (const auto& ex : trained.train) seen.insert(ex.text);
  for (const auto& ex : generate_corpus(400, 2, V)) {
    if (trained.held_out.size() == 200) break;
    if (!seen.count(ex.text)) trained.held_out.push_back(ex);
  }
  Checkpoint init;
  init.vocab = V;
  init.params = init_params(ModelConfig::for_vocab(V), 7);

  TrainConfig pre;
  pre.stage = Stage::pretrain;
  pre.steps = 3000;
  pre.curve_path = workdir / "pretrain_curve.csv";
  pre.checkpoint_path = workdir / "pretrain.ckpt";
  auto stage1 = run_training(pre, trained.train, init);
  TrainConfig fine = pre;
  fine.stage = Stage::finetune;
  fine.steps = 1000;
  fine.curve_path = workdir / "finetune_curve.csv";
  fine.checkpoint_path = workdir / "finetune.ckpt";
  auto stage2 = run_training(fine, trained.train, stage1.checkpoint);
  const double s = seconds_since(t0);
  const auto m = evaluate(stage2.checkpoint.params, trained.held_out, 1, V);
  trained.checkpoint = stage2.checkpoint;
  trained.ok = true;

  // ablation: same step budget, fine-tune only from the same initialization
  TrainConfig ablation = fine;
  ablation.steps = pre.steps + fine.steps;
  ablation.curve_path = workdir / "ablation_curve.csv";
  ablation.checkpoint_path = workdir / "ablation.ckpt";
  auto abl = run_training(ablation, trained.train, init);
  const auto ma = evaluate(abl.checkpoint.params, trained.held_out, 1, V);

  const bool pass = m.speech_token_accuracy >= 0.95 && m.duration_exact_match >= 0.95 && s < 20 * 60;
  return {pass, "speech acc " + fmt(m.speech_token_accuracy) + ", duration exact " + fmt(m.duration_exact_match) +
                    ", " + fmt(s, 4) + " s; no-pretraining ablation: speech acc " + fmt(ma.speech_token_accuracy) +
                    ", duration exact " + fmt(ma.duration_exact_match)};
}

SessionConfig greedy_session() {
  SessionConfig c;
  c.q = 1;
  c.duration_topk = 1;
  c.speech_sampling = SpeechSampling::greedy;
  return c;
}

struct StreamOut {
  std::vector<int> speech, spans;
  std::size_t forwards = 0;
};

StreamOut stream(const ModelParams& p, const std::vector<int>& text, SessionConfig config) {
  StreamSession s(p, V, config);
  for (int t : text) s.feed_token(t);
  s.feed_end();
  return {s.speech_tokens(), s.span_lengths(), s.forward_count()};
}

Outcome criterion_7(const Trained& trained) {
  if (!trained.ok) return {false, "no trained model"};
  const auto& p = trained.checkpoint.params;
  for (std::size_t i = 0; i < 100; ++i) {
    const auto& text = trained.held_out[i].text;
    auto live = stream(p, text, greedy_session());
    auto ref = oracle::offline_greedy(p, text, 1, V);
    if (live.speech != ref.speech || live.spans != ref.spans)
      return {false, "token mismatch on sentence " + std::to_string(i)};
    if (live.forwards != text.size() + 1) return {false, "decode count on sentence " + std::to_string(i)};
  }
  return {true, "100 sentences token-identical, L + 1 forward passes each"};
}

Outcome criterion_9(const Trained& trained) {
  if (!trained.ok) return {false, "no trained model"};
  const auto& p = trained.checkpoint.params;
  std::size_t exact = 0, monotone = 0;
  const std::size_t n = 50;
  std::string first_bad;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ex = trained.train[i];
    auto out = stream(p, ex.text, greedy_session());
    if (out.spans == ex.durations()) ++exact;
    else if (first_bad.empty()) first_bad = " (first mismatch: sentence " + std::to_string(i) + ")";
    long previous = -1;
    bool ok = true;
    for (double r : {0.8, 1.0, 1.1, 1.2}) {
      auto cfg = greedy_session();
      cfg.duration_modulation = r;
      const auto spans = stream(p, ex.text, cfg).spans;
      const long total = std::accumulate(spans.begin(), spans.end(), 0L);
      ok = ok && total >= previous;
      previous = total;
    }
    monotone += ok ? 1 : 0;
  }
  return {exact == n && monotone == n, std::to_string(exact) + "/" + std::to_string(n) +
                                           " sentences with ground-truth spans at r = 1" + first_bad + ", " +
                                           std::to_string(monotone) + "/" + std::to_string(n) +
                                           " monotone over r in {0.8, 1.0, 1.1, 1.2}"};
}

Outcome criterion_8() {
  LatencyParams p;
  if (analytic_fpl(ModelClass::cosyvoice2, p, LatencyMode::L) != std::chrono::milliseconds(200))
    return {false, "CosyVoice2 reference value"};
  p.q = 1;
  p.c = 2;
  if (analytic_fpl(ModelClass::syncspeech, p, LatencyMode::L) != std::chrono::milliseconds(60))
    return {false, "SyncSpeech reference value"};

  std::mt19937_64 rng(808);
  auto uni = [&](std::int64_t lo, std::int64_t hi) { return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng); };
  const ModelClass all[] = {ModelClass::cosyvoice, ModelClass::valle,  ModelClass::cosyvoice2,
                            ModelClass::maskgct,   ModelClass::f5tts, ModelClass::syncspeech};
  std::size_t ordering_draws = 0;
  double worst_rtf = 0;
  for (int i = 0; i < 1000; ++i) {
    LatencyParams d;
    d.d_llm = Nanos(uni(1'000, 100'000'000));
    d.d_tts = Nanos(uni(1'000, 50'000'000));
    d.frame = Nanos(uni(10'000'000, 80'000'000));
    d.chunk = static_cast<std::size_t>(uni(1, 30));
    d.q = static_cast<std::size_t>(uni(1, 3));
    d.b = static_cast<std::size_t>(uni(1, 64));
    std::vector<int> spans(static_cast<std::size_t>(uni(1, 40)));
    for (auto& s : spans) s = static_cast<int>(uni(1, 8));
    d.L = spans.size();
    d.T = static_cast<std::size_t>(std::accumulate(spans.begin(), spans.end(), 0));
    d.c = steps_until_chunk(spans, d.chunk);
    for (auto m : all) {
      auto r = m == ModelClass::syncspeech ? simulate_pipeline(m, d, spans) : simulate_pipeline(m, d);
      if (r.fpl_l != analytic_fpl(m, d, LatencyMode::L) || r.fpl_a != analytic_fpl(m, d, LatencyMode::A))
        return {false, std::string("simulator differs for ") + model_class_name(m) + " at draw " + std::to_string(i)};
      worst_rtf = std::max(worst_rtf, std::abs(r.rtf - analytic_rtf(m, d)) / analytic_rtf(m, d));
    }
    const double closed = static_cast<double>(d.L + 1) * static_cast<double>(d.d_tts.count()) /
                          (static_cast<double>(d.T) * static_cast<double>(d.frame.count()));
    if (std::abs(analytic_rtf(d) - closed) > 4 * std::numeric_limits<double>::epsilon() * closed)
      return {false, "RTF formula at draw " + std::to_string(i)};
    if (d.L > 5 && *d.c <= 3 && d.chunk >= 3) {
      ++ordering_draws;
      if (analytic_fpl(ModelClass::syncspeech, d, LatencyMode::L) >= analytic_fpl(ModelClass::cosyvoice2, d, LatencyMode::L))
        return {false, "ordering violated at draw " + std::to_string(i)};
    }
  }
  return {worst_rtf < 1e-12, "200 ms / 60 ms reference values, 1000 draws exact for 6 classes, ordering on " +
                                 std::to_string(ordering_draws) + " qualifying draws, RTF rel error " +
                                 fmt(worst_rtf, 3)};
}

Outcome criterion_10(const fs::path& workdir, const Trained& trained, const std::string& cli,
                     const std::string& script) {
  // checkpoint: serialize -> save -> load -> serialize
  auto ck = trained.ok ? trained.checkpoint : Checkpoint{V, init_params(ModelConfig::for_vocab(V), 1), std::nullopt, 0};
  const auto bytes = serialize_checkpoint(ck);
  save_checkpoint(workdir / "roundtrip.ckpt", ck);
  if (serialize_checkpoint(load_checkpoint(workdir / "roundtrip.ckpt")) != bytes) return {false, "checkpoint bytes"};
  std::ifstream in(workdir / "roundtrip.ckpt", std::ios::binary);
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (file != bytes) return {false, "checkpoint file bytes"};
  // corpus: save -> load -> save
  auto corpus = generate_corpus(300, 10, V);
  save_corpus(workdir / "a.txt", corpus);
  save_corpus(workdir / "b.txt", load_corpus(workdir / "a.txt", V));
  auto slurp = [](const fs::path& f) {
    std::ifstream s(f, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(s)), std::istreambuf_iterator<char>());
  };
  if (slurp(workdir / "a.txt") != slurp(workdir / "b.txt")) return {false, "corpus bytes"};
  // CLI smoke script
  const auto t0 = Clock::now();
  const auto smoke_dir = workdir / "smoke";
  const std::string cmd = "bash '" + script + "' '" + cli + "' '" + smoke_dir.string() + "' '" +
                          std::string(SYNCSPEECH_TEST_DATA_DIR) + "' > '" + (workdir / "smoke.log").string() + "' 2>&1";
  const int rc = std::system(cmd.c_str());
  const double s = seconds_since(t0);
  if (rc != 0) return {false, "smoke script failed, see " + (workdir / "smoke.log").string()};
  return {s < 25 * 60, "checkpoint and corpus bytes identical, smoke script " + fmt(s, 3) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria 1-10"};
  std::string workdir = "acceptance_work";
  std::string cli = SYNCSPEECH_CLI_PATH;
  std::string script = SYNCSPEECH_SMOKE_SCRIPT;
  app.add_option("--workdir", workdir, "scratch directory");
  app.add_option("--cli", cli, "syncspeech executable");
  app.add_option("--smoke-script", script, "CLI smoke script");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);

  bool all = true;
  auto report = [&](int id, const std::function<Outcome()>& run) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  ["
              << fmt(seconds_since(t0), 3) << " s]" << std::endl;
  };

  Trained trained;
  report(1, criterion_1);
  report(2, criterion_2);
  report(3, criterion_3);
  report(4, criterion_4);
  report(5, criterion_5);
  report(6, [&] { return criterion_6(workdir, trained); });
  report(7, [&] { return criterion_7(trained); });
  report(8, criterion_8);
  report(9, [&] { return criterion_9(trained); });
  report(10, [&] { return criterion_10(workdir, trained, cli, script); });
  return all ? 0 : 1;
}
