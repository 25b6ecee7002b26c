#include "syncspeech/latency.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <ostream>

namespace syncspeech {

namespace {

constexpr ModelClass kAllClasses[] = {ModelClass::cosyvoice, ModelClass::valle,  ModelClass::cosyvoice2,
                                      ModelClass::maskgct,   ModelClass::f5tts,  ModelClass::syncspeech};

bool is_nar(ModelClass m) { return m == ModelClass::maskgct || m == ModelClass::f5tts; }

std::size_t need_b(const LatencyParams& p) {
  if (!p.b) throw LatencyError("missing parameter b (NAR sampling iterations)");
  return *p.b;
}

std::size_t need_c(const LatencyParams& p) {
  if (!p.c) throw LatencyError("missing parameter c (decode steps until the first chunk)");
  return *p.c;
}

// Text tokens the TTS waits for before its first step.
std::size_t text_lead(ModelClass m, const LatencyParams& p) {
  switch (m) {
    case ModelClass::cosyvoice2: return std::min(p.L, kCosyVoice2TextLead);
    case ModelClass::syncspeech: return std::min(p.L, p.q + 1);
    default: return p.L;
  }
}

// Steps between the TTS start and the first packet, closed-form accounting.
std::size_t steps_to_first_packet(ModelClass m, const LatencyParams& p) {
  if (is_nar(m)) return need_b(p);
  if (m == ModelClass::syncspeech) return need_c(p);
  return std::min(p.chunk, p.T);
}

}  // namespace

const char* model_class_name(ModelClass model) {
  switch (model) {
    case ModelClass::cosyvoice: return "cosyvoice";
    case ModelClass::valle: return "valle";
    case ModelClass::cosyvoice2: return "cosyvoice2";
    case ModelClass::maskgct: return "maskgct";
    case ModelClass::f5tts: return "f5tts";
    case ModelClass::syncspeech: return "syncspeech";
  }
  return "?";
}

ModelClass parse_model_class(const std::string& name) {
  std::string lower;
  for (char ch : name) {
    if (ch == '-' || ch == '_') continue;
    lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  for (auto m : kAllClasses)
    if (lower == model_class_name(m)) return m;
  throw LatencyError("unknown model class '" + name + "'");
}

const char* latency_mode_name(LatencyMode mode) { return mode == LatencyMode::A ? "A" : "L"; }

void validate(const LatencyParams& p, ModelClass model) {
  if (p.d_llm <= Nanos::zero()) throw LatencyError("d_LLM must be > 0");
  if (p.d_tts <= Nanos::zero()) throw LatencyError("d_TTS must be > 0");
  if (p.frame <= Nanos::zero()) throw LatencyError("F must be > 0");
  if (p.chunk < 1) throw LatencyError("chunk must be >= 1");
  if (p.L < 1) throw LatencyError("L must be >= 1");
  if (p.T < 1) throw LatencyError("T must be >= 1");
  if (p.b && *p.b < 1) throw LatencyError("b must be >= 1");
  if (p.c && *p.c < 1) throw LatencyError("c must be >= 1");
  if (is_nar(model)) need_b(p);
  if (model == ModelClass::syncspeech && p.q < 1) throw LatencyError("k (look-ahead q) must be >= 1");
}

Nanos analytic_fpl(ModelClass model, const LatencyParams& p, LatencyMode mode) {
  validate(p, model);
  const auto tts = static_cast<Nanos::rep>(steps_to_first_packet(model, p)) * p.d_tts;
  if (mode == LatencyMode::A) return tts;
  return static_cast<Nanos::rep>(text_lead(model, p)) * p.d_llm + tts;
}

double analytic_rtf(const LatencyParams& p) {
  return static_cast<double>(p.L + 1) * static_cast<double>(p.d_tts.count()) /
         (static_cast<double>(p.T) * static_cast<double>(p.frame.count()));
}

double analytic_rtf_ar(const LatencyParams& p) {
  return static_cast<double>(p.T) * static_cast<double>(p.d_tts.count()) /
         (static_cast<double>(p.T) * static_cast<double>(p.frame.count()));
}

double analytic_rtf(ModelClass model, const LatencyParams& p) {
  if (model == ModelClass::syncspeech) return analytic_rtf(p);
  if (is_nar(model))
    return static_cast<double>(need_b(p)) * static_cast<double>(p.d_tts.count()) /
           (static_cast<double>(p.T) * static_cast<double>(p.frame.count()));
  return analytic_rtf_ar(p);
}

std::size_t steps_until_chunk(std::span<const int> spans, std::size_t chunk) {
  std::size_t total = 0;
  for (std::size_t j = 0; j < spans.size(); ++j) {
    total += static_cast<std::size_t>(spans[j]);
    if (total >= chunk) return j + 1;
  }
  return spans.size();
}

const char* sim_actor_name(SimActor actor) {
  switch (actor) {
    case SimActor::llm: return "llm";
    case SimActor::tts: return "tts";
    case SimActor::decoder: return "decoder";
  }
  return "?";
}

namespace {

struct Timeline {
  std::vector<SimEvent> events;
  std::int64_t first_packet = -1;
  std::int64_t tts_busy = 0;

  void add(std::int64_t t, SimActor a, std::string what) { events.push_back({t, a, std::move(what)}); }
};

// Time (ns) at which text token i (1-based) is available.
std::int64_t arrival(const LatencyParams& p, LatencyMode mode, std::size_t i) {
  return mode == LatencyMode::A ? 0 : static_cast<std::int64_t>(i) * p.d_llm.count();
}

Timeline run_ar(ModelClass model, const LatencyParams& p, LatencyMode mode) {
  Timeline tl;
  for (std::size_t i = 1; i <= p.L; ++i) tl.add(arrival(p, mode, i), SimActor::llm, "token " + std::to_string(i));
  std::int64_t t = arrival(p, mode, text_lead(model, p));
  const std::int64_t d = p.d_tts.count();
  // One speech token per step; the first packet needs `chunk` of them, or
  // all T when T < chunk.
  std::size_t produced = 0;
  for (std::size_t s = 1; s <= p.T; ++s) {
    t += d;
    tl.tts_busy += d;
    ++produced;
    tl.add(t, SimActor::tts, "step " + std::to_string(s));
    if (produced % p.chunk == 0 || produced == p.T) {
      tl.add(t, SimActor::decoder, "packet " + std::to_string((produced - 1) / p.chunk + 1));
      if (tl.first_packet < 0) tl.first_packet = t;
    }
  }
  return tl;
}

Timeline run_nar(ModelClass model, const LatencyParams& p, LatencyMode mode) {
  Timeline tl;
  for (std::size_t i = 1; i <= p.L; ++i) tl.add(arrival(p, mode, i), SimActor::llm, "token " + std::to_string(i));
  std::int64_t t = arrival(p, mode, text_lead(model, p));
  const std::size_t b = need_b(p);
  for (std::size_t s = 1; s <= b; ++s) {
    t += p.d_tts.count();
    tl.tts_busy += p.d_tts.count();
    tl.add(t, SimActor::tts, "iteration " + std::to_string(s));
  }
  tl.add(t, SimActor::decoder, "packet 1");
  tl.first_packet = t;
  return tl;
}

Timeline run_sync(const LatencyParams& p, LatencyMode mode, std::span<const int> spans, const SimOptions& opt) {
  Timeline tl;
  const std::int64_t d = p.d_tts.count();
  for (std::size_t i = 1; i <= p.L; ++i) tl.add(arrival(p, mode, i), SimActor::llm, "token " + std::to_string(i));
  std::int64_t t = arrival(p, mode, text_lead(ModelClass::syncspeech, p));
  // Bootstrap duration pass: always counted as TTS work, on the critical path
  // only in the stalling model.
  tl.tts_busy += d;
  if (opt.stall_on_arrival) t += d;
  tl.add(t, SimActor::tts, "bootstrap");
  std::size_t cum = 0, emitted = 0, packets = 0;
  for (std::size_t n = 1; n <= p.L; ++n) {
    if (opt.stall_on_arrival) t = std::max(t, arrival(p, mode, std::min(p.L, n + p.q)));
    t += d;
    tl.tts_busy += d;
    cum += static_cast<std::size_t>(spans[n - 1]);
    tl.add(t, SimActor::tts, "step " + std::to_string(n) + " span " + std::to_string(spans[n - 1]));
    while (cum - emitted >= p.chunk || (n == p.L && cum > emitted)) {
      emitted += std::min(p.chunk, cum - emitted);
      tl.add(t, SimActor::decoder, "packet " + std::to_string(++packets));
      if (tl.first_packet < 0) tl.first_packet = t;
    }
  }
  return tl;
}

}  // namespace

SimulationResult simulate_pipeline(ModelClass model, const LatencyParams& p, std::optional<std::vector<int>> spans,
                                   const SimOptions& options) {
  SimulationResult r;
  r.params = p;
  if (spans) {
    if (spans->empty()) throw LatencyError("empty trace");
    for (int s : *spans)
      if (s < 1) throw LatencyError("trace durations must be positive");
    r.params.L = spans->size();
    r.params.T = static_cast<std::size_t>(std::accumulate(spans->begin(), spans->end(), 0LL));
  }
  LatencyParams& q = r.params;

  std::vector<int> sync_spans;
  if (model == ModelClass::syncspeech) {
    if (spans) {
      sync_spans = *spans;
      q.c = steps_until_chunk(sync_spans, q.chunk);
    } else {
      // Without a trace: c - 1 one-token spans, then one that completes the
      // chunk, then one-token spans.
      const std::size_t c = need_c(q);
      validate(q, model);
      if (c > q.L) throw LatencyError("c exceeds L");
      if (c > q.chunk) throw LatencyError("c exceeds chunk");
      sync_spans.assign(q.L, 1);
      sync_spans[c - 1] = static_cast<int>(q.chunk - (c - 1));
    }
  }
  validate(q, model);

  auto run = [&](LatencyMode mode) {
    if (model == ModelClass::syncspeech) return run_sync(q, mode, sync_spans, options);
    if (is_nar(model)) return run_nar(model, q, mode);
    return run_ar(model, q, mode);
  };
  const Timeline la = run(LatencyMode::A);
  Timeline ll = run(LatencyMode::L);
  r.fpl_a = Nanos(la.first_packet);
  r.fpl_l = Nanos(ll.first_packet);
  r.rtf = static_cast<double>(ll.tts_busy) / (static_cast<double>(q.T) * static_cast<double>(q.frame.count()));
  if (model == ModelClass::syncspeech) r.c = *q.c;
  std::stable_sort(ll.events.begin(), ll.events.end(),
                   [](const SimEvent& a, const SimEvent& b) { return a.t_ns < b.t_ns; });
  r.events = std::move(ll.events);
  return r;
}

double to_ms(Nanos n) { return static_cast<double>(n.count()) / 1e6; }

void write_results_header(std::ostream& out) { out << "model,mode,d_llm_ms,d_tts_ms,L,T,b,c,q,fpl_ms,rtf\n"; }

void write_results_row(std::ostream& out, ModelClass model, LatencyMode mode, const LatencyParams& p, Nanos fpl,
                       double rtf) {
  out << model_class_name(model) << ',' << latency_mode_name(mode) << ',' << to_ms(p.d_llm) << ',' << to_ms(p.d_tts)
      << ',' << p.L << ',' << p.T << ',';
  if (p.b) out << *p.b;
  out << ',';
  if (p.c) out << *p.c;
  out << ',' << p.q << ',' << to_ms(fpl) << ',' << rtf << '\n';
}

void write_event_log(std::ostream& out, std::span<const SimEvent> events) {
  out << "t_ns,actor,event\n";
  for (const auto& e : events) out << e.t_ns << ',' << sim_actor_name(e.actor) << ',' << e.event << '\n';
}

}  // namespace syncspeech
