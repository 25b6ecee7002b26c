// syncspeech command-line front end.
//
// Every subcommand accepts --config FILE (or $SYNCSPEECH_CONFIG) holding flat
// `key = value` lines named after its long flags. Flags override the file,
// the file overrides built-in defaults, unknown keys are errors.

#include "syncspeech/checkpoint.hpp"
#include "syncspeech/corpus.hpp"
#include "syncspeech/latency.hpp"
#include "syncspeech/masks.hpp"
#include "syncspeech/model.hpp"
#include "syncspeech/sequence.hpp"
#include "syncspeech/stream.hpp"
#include "syncspeech/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

namespace ss = syncspeech;

namespace {

constexpr const char* kConfigEnv = "SYNCSPEECH_CONFIG";

struct VocabOpts {
  int text_vocab = 32;
  int speech_vocab = 64;
  int max_duration = 32;
  ss::VocabLayout layout() const {
    ss::VocabLayout v{text_vocab, speech_vocab, max_duration};
    v.validate();
    return v;
  }
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help) {
  auto* sub = app.add_subcommand(name, help);
  sub->add_option("--config")->description("flat key = value defaults file (default $" + std::string(kConfigEnv) +
                                            ")");
  return sub;
}

// CLI11 only reads config files on the top-level app, so the subcommand's
// file is expanded into `--key=value` arguments placed before the user's
// own; with take-last semantics the flags win.
std::vector<std::string> config_arguments(CLI::App* sub) {
  std::string path;
  auto* opt = sub->get_option("--config");
  if (opt->count() > 0) path = opt->as<std::string>();
  else if (const char* env = std::getenv(kConfigEnv)) path = env;
  if (path.empty()) return {};
  if (!std::ifstream(path)) throw std::runtime_error("cannot read config file " + path);
  std::vector<std::string> out;
  for (const auto& item : CLI::ConfigINI().from_file(path)) {
    if (!item.parents.empty()) throw std::runtime_error(path + ": sections are not supported (" + item.fullname() + ")");
    auto* target = item.name == "config" ? nullptr : sub->get_option_no_throw("--" + item.name);
    if (target == nullptr) throw std::runtime_error(path + ": unknown key '" + item.name + "' for " + sub->get_name());
    std::string joined;
    for (const auto& v : item.inputs) joined += (joined.empty() ? "" : " ") + v;
    out.push_back("--" + item.name + "=" + joined);
  }
  return out;
}

void add_vocab(CLI::App* sub, VocabOpts& v) {
  sub->add_option("--text-vocab", v.text_vocab, "text vocabulary size");
  sub->add_option("--speech-vocab", v.speech_vocab, "speech vocabulary size");
  sub->add_option("--max-duration", v.max_duration, "largest duration class");
}

std::vector<int> parse_ints(const std::string& s) {
  std::istringstream in(s);
  std::vector<int> out;
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw std::invalid_argument("not an integer: '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

std::string read_all(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- corpus-gen ---------------------------------------------------------------

struct CorpusGenOpts {
  std::string out;
  std::size_t n = 2000;
  std::uint64_t seed = 1;
  int min_len = 3;
  int max_len = 12;
  VocabOpts vocab;
};

int run_corpus_gen(const CorpusGenOpts& o) {
  const auto corpus = ss::generate_corpus(o.n, o.seed, o.vocab.layout(), {o.min_len, o.max_len});
  ss::save_corpus(o.out, corpus);
  std::cout << "wrote " << corpus.size() << " sentences to " << o.out << "\n";
  return 0;
}

// ---- pretrain / finetune ------------------------------------------------------

struct TrainOpts {
  std::string corpus;
  std::string out;
  std::string init;
  std::string curve;
  std::string eval_corpus;
  std::size_t steps = 3000;
  std::size_t batch = 16;
  double lr = 3e-4;
  std::size_t warmup = 100;
  double clip = 1.0;
  std::uint64_t seed = 1;
  std::size_t q = 1;
  bool causal = false;
  bool all_durations = false;
  bool no_first_duration = false;
  std::size_t eval_every = 0;
  std::size_t log_every = 100;
  // fresh model shape
  std::size_t layers = 4, heads = 4, dim = 128, ffn = 256, max_len = 512;
  std::uint64_t model_seed = 7;
  VocabOpts vocab;
};

void add_train_options(CLI::App* sub, TrainOpts& o, bool finetune) {
  sub->add_option("--corpus", o.corpus, "training corpus file")->required();
  sub->add_option("--out", o.out, "output checkpoint")->required();
  auto* init = sub->add_option("--init", o.init, "starting checkpoint");
  if (finetune) init->required();
  sub->add_option("--curve", o.curve, "training curve CSV");
  sub->add_option("--eval-corpus", o.eval_corpus, "held-out corpus for periodic evaluation");
  sub->add_option("--eval-every", o.eval_every, "evaluation interval in steps (0 = off)");
  sub->add_option("--steps", o.steps, "optimizer steps");
  sub->add_option("--batch", o.batch, "sentences per step");
  sub->add_option("--lr", o.lr, "peak learning rate");
  sub->add_option("--warmup", o.warmup, "linear warmup steps");
  sub->add_option("--clip", o.clip, "global gradient-norm clip");
  sub->add_option("--seed", o.seed, "batch / masking rng seed");
  sub->add_option("--q", o.q, "look-ahead used to build fine-tune sequences");
  sub->add_flag("--causal-mask", o.causal, "plain causal attention instead of the span mask");
  sub->add_flag("--all-durations", o.all_durations, "fine-tune: also supervise every earlier D");
  sub->add_flag("--no-first-duration", o.no_first_duration, "fine-tune: supervise only the trailing D");
  sub->add_option("--log-every", o.log_every, "print a loss line every N steps (0 = quiet)");
  if (!finetune) {
    sub->add_option("--layers", o.layers, "transformer blocks (fresh model)");
    sub->add_option("--heads", o.heads, "attention heads (fresh model)");
    sub->add_option("--dim", o.dim, "model width (fresh model)");
    sub->add_option("--ffn", o.ffn, "feed-forward width (fresh model)");
    sub->add_option("--max-len", o.max_len, "maximum sequence length (fresh model)");
    sub->add_option("--model-seed", o.model_seed, "parameter init seed (fresh model)");
  }
  add_vocab(sub, o.vocab);
}

void print_metrics(const ss::EvalMetrics& m) {
  std::cout << "speech_token_accuracy=" << m.speech_token_accuracy << "\n"
            << "duration_exact_match=" << m.duration_exact_match << "\n"
            << "span_exact_match=" << m.span_exact_match << "\n"
            << "tokens=" << m.tokens << " spans=" << m.spans << "\n";
}

int run_train(const TrainOpts& o, ss::Stage stage) {
  ss::Checkpoint init;
  if (!o.init.empty()) {
    init = ss::load_checkpoint(o.init);
  } else {
    init.vocab = o.vocab.layout();
    auto config = ss::ModelConfig::for_vocab(init.vocab);
    config.num_layers = o.layers;
    config.num_heads = o.heads;
    config.model_dim = o.dim;
    config.ffn_dim = o.ffn;
    config.max_seq_len = o.max_len;
    init.params = ss::init_params(config, o.model_seed);
  }
  const auto corpus = ss::load_corpus(o.corpus, init.vocab);
  std::vector<ss::AlignedExample> held;
  if (!o.eval_corpus.empty()) held = ss::load_corpus(o.eval_corpus, init.vocab);

  ss::TrainConfig tc;
  tc.stage = stage;
  tc.steps = o.steps;
  tc.batch_size = o.batch;
  tc.learning_rate = o.lr;
  tc.warmup_steps = o.warmup;
  tc.clip_norm = o.clip;
  tc.seed = o.seed;
  tc.q = o.q;
  tc.use_designed_mask = !o.causal;
  tc.supervise_all_durations = o.all_durations;
  tc.supervise_first_duration = !o.no_first_duration;
  tc.checkpoint_path = o.out;
  tc.curve_path = o.curve;
  tc.eval_every = held.empty() ? 0 : o.eval_every;

  ss::TrainingHooks hooks;
  hooks.eval_corpus = held;
  hooks.on_step = [&](const ss::StepReport& r) {
    if (o.log_every && (r.step % o.log_every == 0 || r.step + 1 == o.steps))
      std::cout << ss::stage_name(r.stage) << " step " << r.step << " l_mask " << r.l_mask << " l_duration "
                << r.l_duration << "\n";
  };
  hooks.on_eval = [](std::size_t step, const ss::EvalMetrics& m) {
    std::cout << "eval step " << step << " acc " << m.speech_token_accuracy << " dur " << m.duration_exact_match
              << "\n";
  };
  const auto result = ss::run_training(tc, corpus, init, hooks);
  std::cout << "saved " << o.out << " (step " << result.checkpoint.step << ")\n";
  if (!held.empty()) print_metrics(ss::evaluate(result.checkpoint.params, held, o.q, init.vocab, !o.causal));
  return 0;
}

// ---- eval ---------------------------------------------------------------------

struct EvalOpts {
  std::string ckpt;
  std::string corpus;
  std::size_t q = 1;
  bool causal = false;
};

int run_eval(const EvalOpts& o) {
  const auto ckpt = ss::load_checkpoint(o.ckpt);
  const auto corpus = ss::load_corpus(o.corpus, ckpt.vocab);
  if (corpus.empty()) throw std::invalid_argument("evaluation corpus is empty");
  print_metrics(ss::evaluate(ckpt.params, corpus, o.q, ckpt.vocab, !o.causal));
  return 0;
}

// ---- synth --------------------------------------------------------------------

struct SynthOpts {
  std::string ckpt;
  std::string text;
  std::string text_file;
  std::string prompt;
  std::string trace = "trace.csv";
  std::string audio = "audio.raw";
  std::size_t q = 1;
  std::size_t chunk = 15;
  double dllm_ms = 0.0;
  std::size_t duration_topk = 3;
  double r = 1.0;
  std::string speech_sampling = "greedy";
  std::size_t speech_topk = 5;
  std::uint64_t seed = 0;
  std::size_t samples_per_token = 4;
  bool causal = false;
};

int run_synth(const SynthOpts& o) {
  const auto ckpt = ss::load_checkpoint(o.ckpt);
  std::string text_src;
  if (!o.text.empty()) {
    text_src = o.text;
  } else if (!o.text_file.empty()) {
    std::ifstream in(o.text_file);
    if (!in) throw std::runtime_error("cannot open " + o.text_file);
    text_src = read_all(in);
  } else {
    text_src = read_all(std::cin);
  }
  const auto tokens = parse_ints(text_src);

  std::optional<ss::AlignedExample> prompt;
  if (!o.prompt.empty()) {
    const auto lines = ss::load_corpus(o.prompt, ckpt.vocab);
    if (lines.empty()) throw std::invalid_argument("prompt file has no example");
    prompt = lines.front();
  }

  ss::SessionConfig sc;
  sc.q = o.q;
  sc.chunk_size = o.chunk;
  sc.duration_topk = o.duration_topk;
  sc.duration_modulation = o.r;
  if (o.speech_sampling == "greedy") sc.speech_sampling = ss::SpeechSampling::greedy;
  else if (o.speech_sampling == "topk") sc.speech_sampling = ss::SpeechSampling::topk;
  else throw std::invalid_argument("--speech-sampling must be greedy or topk");
  sc.speech_topk = o.speech_topk;
  sc.seed = o.seed;
  sc.use_designed_mask = !o.causal;
  sc.samples_per_token = o.samples_per_token;

  std::ofstream audio(o.audio, std::ios::binary);
  if (!audio) throw std::runtime_error("cannot write " + o.audio);
  ss::StreamSession session(ckpt.params, ckpt.vocab, sc, prompt);

  // Text arrives every dllm_ms; the session works between arrivals.
  const auto start = std::chrono::steady_clock::now();
  const auto period = std::chrono::duration<double, std::milli>(o.dllm_ms);
  std::optional<double> first_packet_ms;
  std::size_t chunks = 0;
  auto sink = [&](const std::vector<ss::AudioChunk>& out) {
    for (const auto& c : out) {
      if (!first_packet_ms)
        first_packet_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      ss::write_raw_audio(audio, c);
      ++chunks;
    }
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::this_thread::sleep_until(start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                              period * static_cast<double>(i + 1)));
    sink(session.feed_token(tokens[i]));
  }
  sink(session.feed_end());

  std::ofstream trace(o.trace);
  if (!trace) throw std::runtime_error("cannot write " + o.trace);
  ss::write_trace_csv(trace, session.trace());

  std::cout << "text_tokens=" << tokens.size() << "\n"
            << "speech_tokens=" << session.speech_tokens().size() << "\n"
            << "forward_passes=" << session.forward_count() << "\n"
            << "chunks=" << chunks << "\n"
            << "spans=";
  for (std::size_t i = 0; i < session.span_lengths().size(); ++i)
    std::cout << (i ? " " : "") << session.span_lengths()[i];
  std::cout << "\n";
  if (first_packet_ms) std::cout << "first_packet_ms=" << *first_packet_ms << "\n";
  return 0;
}

// ---- simulate -----------------------------------------------------------------

struct SimulateOpts {
  std::string model = "syncspeech";
  double dllm_ms = 25.0;
  double dtts_ms = 5.0;
  double frame_ms = 40.0;
  std::size_t chunk = 15;
  std::size_t L = 20;
  std::size_t T = 100;
  std::optional<std::size_t> b;
  std::optional<std::size_t> c;
  std::size_t q = 1;
  std::string spans;
  std::string csv;
  std::string events;
  bool stall = false;
  std::string measure_ckpt;
  std::size_t measure_len = 64;
  std::size_t measure_reps = 20;
};

ss::Nanos from_ms(double ms) { return ss::Nanos(static_cast<std::int64_t>(std::llround(ms * 1e6))); }

// Median forward time over warm runs on a sequence of `len` positions.
double measure_dtts_ms(const std::string& path, std::size_t len, std::size_t reps) {
  const auto ckpt = ss::load_checkpoint(path);
  std::vector<int> ids(len);
  for (std::size_t i = 0; i < len; ++i) ids[i] = static_cast<int>(i % ckpt.vocab.text_vocab);
  const auto mask = ss::build_causal_mask(len);
  ss::forward(ckpt.params, ids, mask);  // warm-up
  std::vector<double> times;
  for (std::size_t r = 0; r < std::max<std::size_t>(reps, 1); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    ss::forward(ckpt.params, ids, mask);
    times.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
  return times[times.size() / 2];
}

int run_simulate(const SimulateOpts& o) {
  const auto model = ss::parse_model_class(o.model);
  ss::LatencyParams p;
  p.d_llm = from_ms(o.dllm_ms);
  double dtts = o.dtts_ms;
  if (!o.measure_ckpt.empty()) {
    dtts = measure_dtts_ms(o.measure_ckpt, o.measure_len, o.measure_reps);
    std::cout << "measured d_tts_ms=" << dtts << "\n";
  }
  p.d_tts = from_ms(dtts);
  p.frame = from_ms(o.frame_ms);
  p.chunk = o.chunk;
  p.L = o.L;
  p.T = o.T;
  p.b = o.b;
  p.c = o.c;
  p.q = o.q;

  std::optional<std::vector<int>> spans;
  if (!o.spans.empty()) spans = parse_ints(o.spans);
  ss::SimOptions so;
  so.stall_on_arrival = o.stall;
  const auto sim = ss::simulate_pipeline(model, p, spans, so);
  const auto& used = sim.params;

  const auto fpl_a = ss::analytic_fpl(model, used, ss::LatencyMode::A);
  const auto fpl_l = ss::analytic_fpl(model, used, ss::LatencyMode::L);
  const double rtf = ss::analytic_rtf(model, used);
  std::cout << "model=" << ss::model_class_name(model) << "\n"
            << "FPL-A analytic " << ss::to_ms(fpl_a) << " ms, simulated " << ss::to_ms(sim.fpl_a) << " ms\n"
            << "FPL-L analytic " << ss::to_ms(fpl_l) << " ms, simulated " << ss::to_ms(sim.fpl_l) << " ms\n"
            << "RTF analytic " << rtf << ", simulated " << sim.rtf << "\n";
  if (model == ss::ModelClass::syncspeech) std::cout << "c=" << sim.c << "\n";

  if (!o.csv.empty()) {
    std::ofstream out(o.csv);
    if (!out) throw std::runtime_error("cannot write " + o.csv);
    ss::write_results_header(out);
    ss::write_results_row(out, model, ss::LatencyMode::A, used, fpl_a, rtf);
    ss::write_results_row(out, model, ss::LatencyMode::L, used, fpl_l, rtf);
  }
  if (!o.events.empty()) {
    std::ofstream out(o.events);
    if (!out) throw std::runtime_error("cannot write " + o.events);
    ss::write_event_log(out, sim.events);
  }
  return 0;
}

// ---- masks-dump ---------------------------------------------------------------

struct MasksDumpOpts {
  std::string text = "0 1 2";
  std::string durations = "7 5 1";
  std::size_t n = 2;
  std::size_t q = 1;
  bool causal = false;
  bool roles = false;
  std::string out;
  VocabOpts vocab;
};

int run_masks_dump(const MasksDumpOpts& o) {
  const auto vocab = o.vocab.layout();
  const auto text = parse_ints(o.text);
  const auto durs = parse_ints(o.durations);
  if (text.size() != durs.size()) throw std::invalid_argument("--text and --durations need the same length");
  ss::AlignedExample ex;
  ex.text = text;
  int end = 0;
  for (std::size_t i = 0; i < durs.size(); ++i) {
    end += durs[i];
    ex.durations_end.push_back(end);
    for (int k = 0; k < durs[i]; ++k) ex.speech.push_back(0);
  }
  ss::validate_example(ex, vocab);
  const auto sample = ss::build_finetune_sequence(ex, o.n, o.q, vocab);
  const auto mask = o.causal ? ss::build_causal_mask(sample.sequence.size()) : ss::build_designed_mask(sample.sequence);

  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!o.out.empty()) {
    file.open(o.out);
    if (!file) throw std::runtime_error("cannot write " + o.out);
    out = &file;
  }
  if (o.roles) *out << ss::dump_sequence(sample.sequence);
  *out << ss::format_mask(mask);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming temporal masked transformer TTS toolkit"};
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);

  CorpusGenOpts cg;
  auto* corpus_gen = add_command(app, "corpus-gen", "generate a synthetic aligned corpus");
  corpus_gen->add_option("--out", cg.out, "output corpus file")->required();
  corpus_gen->add_option("--n", cg.n, "number of sentences");
  corpus_gen->add_option("--seed", cg.seed, "generator seed");
  corpus_gen->add_option("--min-len", cg.min_len, "shortest sentence");
  corpus_gen->add_option("--max-len", cg.max_len, "longest sentence");
  add_vocab(corpus_gen, cg.vocab);

  TrainOpts pt, ft;
  auto* pretrain = add_command(app, "pretrain", "masked pretraining over whole sentences");
  add_train_options(pretrain, pt, false);
  auto* finetune = add_command(app, "finetune", "fine-tune on streaming-form sequences");
  ft.steps = 1000;
  add_train_options(finetune, ft, true);

  EvalOpts ev;
  auto* eval = add_command(app, "eval", "teacher-forced accuracy on a corpus");
  eval->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
  eval->add_option("--corpus", ev.corpus, "evaluation corpus")->required();
  eval->add_option("--q", ev.q, "look-ahead");
  eval->add_flag("--causal-mask", ev.causal, "plain causal attention");

  SynthOpts sy;
  auto* synth = add_command(app, "synth", "streaming synthesis with simulated text arrival");
  synth->add_option("--ckpt", sy.ckpt, "checkpoint")->required();
  auto* text_opt = synth->add_option("--text", sy.text, "space-separated text token ids");
  synth->add_option("--text-file", sy.text_file, "file of text token ids (stdin when neither is given)")
      ->excludes(text_opt);
  synth->add_option("--prompt", sy.prompt, "corpus file whose first line is the speaker prompt");
  synth->add_option("--trace", sy.trace, "trace CSV output");
  synth->add_option("--audio", sy.audio, "raw f64 little-endian audio output");
  synth->add_option("--q", sy.q, "look-ahead");
  synth->add_option("--chunk", sy.chunk, "decoder chunk size in speech tokens");
  synth->add_option("--dllm-ms", sy.dllm_ms, "simulated upstream text-token interval");
  synth->add_option("--duration-topk", sy.duration_topk, "top-k for duration sampling (1 = greedy)");
  synth->add_option("--r", sy.r, "duration modulation factor");
  synth->add_option("--speech-sampling", sy.speech_sampling, "greedy or topk")
      ->check(CLI::IsMember({"greedy", "topk"}));
  synth->add_option("--speech-topk", sy.speech_topk, "k for topk speech sampling");
  synth->add_option("--seed", sy.seed, "sampling seed");
  synth->add_option("--samples-per-token", sy.samples_per_token, "mock decoder samples per speech token");
  synth->add_flag("--causal-mask", sy.causal, "plain causal attention");

  SimulateOpts sm;
  auto* simulate = add_command(app, "simulate", "first-packet latency and RTF, analytic and simulated");
  simulate->add_option("--model", sm.model, "cosyvoice, valle, cosyvoice2, maskgct, f5tts or syncspeech");
  simulate->add_option("--dllm-ms", sm.dllm_ms, "upstream time per text token");
  simulate->add_option("--dtts-ms", sm.dtts_ms, "time per TTS step");
  simulate->add_option("--frame-ms", sm.frame_ms, "speech token frame length");
  simulate->add_option("--chunk", sm.chunk, "decoder chunk size");
  simulate->add_option("--L", sm.L, "text tokens");
  simulate->add_option("--T", sm.T, "speech tokens");
  simulate->add_option("--b", sm.b, "NAR sampling iterations");
  simulate->add_option("--c", sm.c, "SyncSpeech steps until the first chunk");
  simulate->add_option("--q", sm.q, "look-ahead");
  simulate->add_option("--spans", sm.spans, "per-token span lengths; sets L, T and c");
  simulate->add_option("--csv", sm.csv, "results CSV output");
  simulate->add_option("--events", sm.events, "event log CSV output");
  simulate->add_flag("--stall", sm.stall, "bootstrap on the critical path, steps wait for look-ahead tokens");
  simulate->add_option("--measure-ckpt", sm.measure_ckpt, "time forward passes of this checkpoint for d_TTS");
  simulate->add_option("--measure-len", sm.measure_len, "sequence length for the d_TTS measurement");
  simulate->add_option("--measure-reps", sm.measure_reps, "timed forward passes");

  MasksDumpOpts md;
  auto* masks_dump = add_command(app, "masks-dump", "print the attention mask of a fine-tune sequence");
  masks_dump->add_option("--text", md.text, "text token ids");
  masks_dump->add_option("--durations", md.durations, "per-token durations");
  masks_dump->add_option("--n", md.n, "decoding step");
  masks_dump->add_option("--q", md.q, "look-ahead");
  masks_dump->add_flag("--causal-mask", md.causal, "plain causal mask");
  masks_dump->add_flag("--roles", md.roles, "print the position table first");
  masks_dump->add_option("--out", md.out, "output file (stdout when empty)");
  add_vocab(masks_dump, md.vocab);

  try {
    app.parse(argc, argv);
    auto* sub = app.get_subcommands().front();
    std::vector<std::string> extra;
    try {
      extra = config_arguments(sub);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
    if (!extra.empty()) {
      // argv[0], subcommand, file values, then the original arguments
      std::vector<std::string> args;
      int i = 1;
      while (i < argc && argv[i] != sub->get_name()) ++i;
      for (int k = 1; k <= i && k < argc; ++k) args.emplace_back(argv[k]);
      args.insert(args.end(), extra.begin(), extra.end());
      for (int k = i + 1; k < argc; ++k) args.emplace_back(argv[k]);
      std::reverse(args.begin(), args.end());
      app.clear();
      app.parse(args);
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*corpus_gen) return run_corpus_gen(cg);
    if (*pretrain) return run_train(pt, ss::Stage::pretrain);
    if (*finetune) return run_train(ft, ss::Stage::finetune);
    if (*eval) return run_eval(ev);
    if (*synth) return run_synth(sy);
    if (*simulate) return run_simulate(sm);
    if (*masks_dump) return run_masks_dump(md);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
