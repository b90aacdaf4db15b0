#include "ropebench/bench.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ropebench/init.hpp"

namespace ropebench {

namespace {

template <typename F>
double timed_seconds(F&& f) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  f();
  const auto t1 = clock::now();
  const double s = std::chrono::duration<double>(t1 - t0).count();
  if (!(s > 0.0)) {
    throw std::runtime_error("monotonic clock reported a nonpositive duration");
  }
  return s;
}

BenchRecord aggregate(std::string scheme, Index length,
                      std::vector<double> times) {
  BenchRecord rec;
  rec.scheme = std::move(scheme);
  rec.length_frames = length;
  rec.repeats = static_cast<Index>(times.size());
  double sum = 0.0;
  for (double t : times) sum += t;
  rec.mean_s = sum / static_cast<double>(times.size());
  if (times.size() > 1) {
    double ss = 0.0;
    for (double t : times) ss += (t - rec.mean_s) * (t - rec.mean_s);
    rec.stddev_s = std::sqrt(ss / static_cast<double>(times.size() - 1));
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  rec.median_s =
      n % 2 == 1 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
  return rec;
}

// One full measured pass: encoder forward, plus the loss head and backward
// in forward-backward mode. The scalar loss is a sum readout over a linear
// projection, which gives backward a genuine gradient path without any
// training semantics.
struct Cell {
  BenchMode mode = BenchMode::forward;
  const EncoderParams* enc = nullptr;
  const Matrix* head = nullptr;  // [d_model x kVocabSize] in backward mode
  Matrix input;
  AttentionMask mask;
  Matrix last_output;

  void run() {
    Matrix out = encoder_forward(input, *enc, mask);
    if (mode == BenchMode::forward_backward) {
      Matrix logits;
      logits.noalias() = out * (*head);
      Matrix dlogits = Matrix::Ones(logits.rows(), logits.cols());
      Matrix dhead;
      dhead.noalias() = out.transpose() * dlogits;
      Matrix dout;
      dout.noalias() = dlogits * head->transpose();
      EncoderGrads grads = encoder_backward(dout, input, *enc, mask);
      (void)dhead;
      (void)grads;
    }
    last_output = std::move(out);
  }
};

// The per-pass work a scheme adds on top of no-PE attention, timed in
// isolation (see the header comment for why full-pass differencing is not
// usable for the rotary slope). Scratch matrices live on the struct so the
// timed loop measures the kernels' arithmetic, not allocator traffic.
//
// Inputs and per-invocation outputs cycle through replicas whose combined
// footprint exceeds the last-level cache. Repeatedly re-running a kernel on
// one short buffer measures it cache-resident while long buffers stream from
// memory, and the fitted growth rate then reflects cache capacity rather
// than the kernel; cycling pins every length to the same streaming regime.
struct PeKernel {
  SchemeKind kind = SchemeKind::none;
  const EncoderParams* enc = nullptr;
  struct Buffers {
    Matrix q, k, x;     // inputs
    Matrix qr, kr;      // rotary outputs, one head wide
    Matrix shifted;     // absolute output
    Matrix logits;      // relative accumulates into attention logits
  };
  std::vector<Buffers> replicas;
  std::size_t cursor = 0;
  double sink = 0.0;                 // keeps results observably live
  Matrix p_all, qu, qv, pos_logits;  // relative scratch (compute-bound)

  static constexpr double kPoolBytes = 64.0 * 1024 * 1024;

  void prepare(Index length, Index d_model, std::uint64_t seed) {
    const Matrix q = gen_input(length, d_model, seed ^ 0x71ull);
    const Matrix k = gen_input(length, d_model, seed ^ 0x72ull);
    const Matrix x = gen_input(length, d_model, seed ^ 0x73ull);
    const Index dh = enc->rope.head_dim;
    double bytes = 0.0;
    switch (kind) {
      case SchemeKind::none:
        break;
      case SchemeKind::absolute:
        bytes = 2.0 * static_cast<double>(x.size()) * sizeof(double);
        break;
      case SchemeKind::rotary:
        bytes = (2.0 * static_cast<double>(q.size()) +
                 2.0 * static_cast<double>(length * dh)) *
                sizeof(double);
        break;
      case SchemeKind::relative:
        bytes = (static_cast<double>(q.size()) +
                 static_cast<double>(length) * static_cast<double>(length)) *
                sizeof(double);
        break;
    }
    const auto count = static_cast<std::size_t>(std::clamp(
        std::ceil(kPoolBytes / std::max(bytes, 1.0)), 1.0, 256.0));
    replicas.resize(count);
    for (Buffers& b : replicas) {
      switch (kind) {
        case SchemeKind::none:
          break;
        case SchemeKind::absolute:
          b.x = x;
          b.shifted = Matrix::Zero(length, d_model);
          break;
        case SchemeKind::rotary:
          b.q = q;
          b.k = k;
          b.qr = Matrix::Zero(length, dh);
          b.kr = Matrix::Zero(length, dh);
          break;
        case SchemeKind::relative:
          b.q = q;
          b.logits = Matrix::Zero(length, length);
          break;
      }
    }
  }

  void run() {
    Buffers& b = replicas[cursor];
    cursor = (cursor + 1) % replicas.size();
    switch (kind) {
      case SchemeKind::none:
        break;
      case SchemeKind::absolute: {
        b.shifted = b.x + sinusoidal_absolute(b.x.rows(), b.x.cols(), 0);
        sink += b.shifted(0, 0);
        break;
      }
      case SchemeKind::rotary: {
        const Index dh = enc->rope.head_dim;
        const Index heads = b.q.cols() / dh;
        for (Index h = 0; h < heads; ++h) {
          rope_apply_into(b.q.middleCols(h * dh, dh), 0, enc->rope, b.qr);
          rope_apply_into(b.k.middleCols(h * dh, dh), 0, enc->rope, b.kr);
          sink += b.qr(0, 0) + b.kr(0, 0);
        }
        break;
      }
      case SchemeKind::relative: {
        const Index T = b.q.rows();
        const RelPosParams& rp = *enc->layers.front().attn.relpos;
        const Index dh = rp.u_bias.cols();
        const Index heads = rp.u_bias.rows();
        p_all.noalias() = rp.pos_emb.middleRows(rp.max_len - T, 2 * T - 1) *
                          rp.pos_proj.transpose();
        for (Index h = 0; h < heads; ++h) {
          qu = b.q.middleCols(h * dh, dh).rowwise() + rp.u_bias.row(h);
          qv = b.q.middleCols(h * dh, dh).rowwise() + rp.v_bias.row(h);
          pos_logits.noalias() = qv * p_all.middleCols(h * dh, dh).transpose();
          b.logits += rel_shift(pos_logits);
          sink += qu(0, 0);
        }
        break;
      }
    }
  }
};

AttentionMask make_mask(Index length, Index chunk_frames) {
  if (chunk_frames > 0) return build_chunk_mask(length, chunk_frames);
  return build_full_mask(length);
}

// Spins real matrix work for roughly the given duration so frequency
// scaling and the allocator reach a steady state before the first timed
// cell; without this the first-measured scheme reads systematically slow.
void steady_state_warmup(double seconds) {
  using clock = std::chrono::steady_clock;
  const auto deadline =
      clock::now() + std::chrono::duration_cast<clock::duration>(
                         std::chrono::duration<double>(seconds));
  Matrix a = Matrix::Constant(192, 192, 1.0 / 192.0);
  Matrix b = a;
  Matrix c;
  while (clock::now() < deadline) {
    c.noalias() = a * b;
    a(0, 0) = 1.0 / 192.0 + 1e-12 * c(0, 0);  // keep the product observable
  }
}

Matrix make_head(const ConformerConfig& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x10552ca11ull);
  return fan_in_uniform(model.d_model, kVocabSize, model.d_model, rng);
}

std::vector<RatioPoint> compute_ratios(const std::vector<BenchRecord>& records) {
  std::vector<RatioPoint> ratios;
  for (const BenchRecord& rel : records) {
    if (rel.scheme != "relative") continue;
    for (const BenchRecord& rot : records) {
      if (rot.scheme != "rotary" || rot.length_frames != rel.length_frames) {
        continue;
      }
      if (rot.mean_s > 0.0) {
        ratios.push_back({rel.length_frames, rel.mean_s / rot.mean_s});
      }
    }
  }
  std::sort(ratios.begin(), ratios.end(),
            [](const RatioPoint& a, const RatioPoint& b) {
              return a.length_frames < b.length_frames;
            });
  return ratios;
}

std::string format_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

const char* to_string(BenchMode mode) {
  return mode == BenchMode::forward ? "forward" : "forward-backward";
}

std::optional<BenchMode> bench_mode_from_string(const std::string& name) {
  if (name == "forward") return BenchMode::forward;
  if (name == "forward-backward") return BenchMode::forward_backward;
  return std::nullopt;
}

void validate(const BenchConfig& config) {
  if (config.schemes.empty()) {
    throw std::invalid_argument("at least one scheme is required");
  }
  if (config.lengths.empty()) {
    throw std::invalid_argument("at least one length is required");
  }
  for (std::size_t i = 0; i < config.lengths.size(); ++i) {
    if (config.lengths[i] <= 0) {
      throw std::invalid_argument("lengths must be positive");
    }
    if (i > 0 && config.lengths[i] <= config.lengths[i - 1]) {
      throw std::invalid_argument("lengths must be strictly increasing");
    }
  }
  if (config.repeats < 1) throw std::invalid_argument("repeats must be >= 1");
  if (config.warmup < 0) throw std::invalid_argument("warmup must be >= 0");
  if (config.chunk_frames < 0) {
    throw std::invalid_argument("chunk_frames must be >= 0");
  }
}

Matrix gen_input(Index length, Index d_model, std::uint64_t seed) {
  if (length <= 0 || d_model <= 0) {
    throw std::invalid_argument("gen_input needs positive dimensions");
  }
  // Golden-ratio mix so each length draws an unrelated stream from one seed.
  std::mt19937_64 rng(seed ^
                      (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(length + 1)));
  return uniform_matrix(length, d_model, rng);
}

double time_once(const BenchConfig& config, SchemeKind scheme, Index length) {
  if (length <= 0) throw std::invalid_argument("length must be positive");
  ConformerConfig mc = config.model;
  mc.scheme = scheme;
  EncoderParams enc = init_encoder(mc, length, config.seed);
  Matrix head;
  Cell cell;
  cell.mode = config.mode;
  cell.enc = &enc;
  if (config.mode == BenchMode::forward_backward) {
    head = make_head(mc, config.seed);
    cell.head = &head;
  }
  cell.input = gen_input(length, mc.d_model, config.seed);
  cell.mask = make_mask(length, config.chunk_frames);
  for (Index w = 0; w < config.warmup; ++w) cell.run();
  return timed_seconds([&cell] { cell.run(); });
}

SweepResult run_sweep(const BenchConfig& config, std::ostream* log) {
  validate(config);
  steady_state_warmup(0.75);
  SweepResult result;
  result.checksum = kFnvOffset;
  const Index max_len = config.lengths.back();

  // One encoder per scheme for the whole sweep, and per-scheme record lists
  // so the output stays grouped by scheme. Cells execute length-major
  // (schemes interleaved at each length): the relative/rotary ratio then
  // compares measurements taken moments apart, so slow drift of the machine
  // cancels instead of skewing whichever scheme ran later.
  struct SchemeLane {
    ConformerConfig mc;
    EncoderParams enc;
    Matrix head;
    std::vector<BenchRecord> records, pe_records;
  };
  std::vector<SchemeLane> lanes;
  lanes.reserve(config.schemes.size());
  for (SchemeKind scheme : config.schemes) {
    SchemeLane lane;
    lane.mc = config.model;
    lane.mc.scheme = scheme;
    lane.enc = init_encoder(lane.mc, max_len, config.seed);
    if (config.mode == BenchMode::forward_backward) {
      lane.head = make_head(lane.mc, config.seed);
    }
    lanes.push_back(std::move(lane));
  }

  // Timed samples are batches of invocations sized so one sample lasts long
  // enough (~50 ms for passes, ~2 ms for the small positional kernels) that
  // scheduler interruptions cost every cell the same relative amount;
  // otherwise outliers land in long cells proportionally more often and bend
  // fitted growth rates. Recorded statistics stay seconds per invocation.
  const auto pick_batch = [](double est, double target, Index cap) {
    return std::clamp<Index>(
        static_cast<Index>(std::ceil(target / std::max(est, 1e-9))), 1, cap);
  };

  for (Index length : config.lengths) {
    // Full passes first, with the schemes' samples interleaved round-robin
    // so a contention burst hits every scheme's mean at this length equally.
    struct Prepared {
      SchemeLane* lane = nullptr;
      Cell cell;
      Index batch = 1;
      std::vector<double> times;
      bool ok = true;
    };
    std::vector<Prepared> prepared;
    prepared.reserve(lanes.size());
    for (SchemeLane& lane : lanes) {
      Prepared p;
      p.lane = &lane;
      try {
        p.cell.mode = config.mode;
        p.cell.enc = &lane.enc;
        p.cell.head = lane.head.size() > 0 ? &lane.head : nullptr;
        p.cell.input = gen_input(length, lane.mc.d_model, config.seed);
        p.cell.mask = make_mask(length, config.chunk_frames);
        double est = 0.0;
        for (Index w = 0; w < config.warmup; ++w) {
          est = timed_seconds([&p] { p.cell.run(); });
        }
        if (config.warmup == 0) est = timed_seconds([&p] { p.cell.run(); });
        p.batch = pick_batch(est, 50e-3, 64);
        p.times.reserve(static_cast<std::size_t>(config.repeats));
      } catch (const std::bad_alloc&) {
        p.ok = false;
      }
      prepared.push_back(std::move(p));
    }
    for (Index rep = 0; rep < config.repeats; ++rep) {
      for (Prepared& p : prepared) {
        if (!p.ok) continue;
        try {
          p.times.push_back(timed_seconds([&p] {
                              for (Index i = 0; i < p.batch; ++i) p.cell.run();
                            }) /
                            static_cast<double>(p.batch));
        } catch (const std::bad_alloc&) {
          p.ok = false;
        }
      }
    }
    for (Prepared& p : prepared) {
      const SchemeKind scheme = p.lane->mc.scheme;
      if (!p.ok) {
        if (log) {
          *log << "warning: " << to_string(scheme) << " T=" << length
               << " skipped (out of memory)\n";
        }
        continue;
      }
      p.lane->records.push_back(
          aggregate(to_string(scheme), length, std::move(p.times)));
      result.checksum = fnv1a(
          p.cell.last_output.data(),
          static_cast<std::size_t>(p.cell.last_output.size()) * sizeof(double),
          result.checksum);
      if (log) {
        const BenchRecord& r = p.lane->records.back();
        *log << r.scheme << " T=" << r.length_frames << " mean=" << r.mean_s
             << "s stddev=" << r.stddev_s << "s median=" << r.median_s
             << "s\n";
      }
    }
    prepared.clear();

    // Then the isolated positional kernels at this length. A zero-layer
    // encoder applies no positional work (and has no relative parameters),
    // so it gets no kernel records.
    for (SchemeLane& lane : lanes) {
      const SchemeKind scheme = lane.mc.scheme;
      if (scheme == SchemeKind::none || lane.enc.layers.empty()) continue;
      try {
        PeKernel kern;
        kern.kind = scheme;
        kern.enc = &lane.enc;
        kern.prepare(length, lane.mc.d_model, config.seed);
        double est = 0.0;
        for (Index w = 0; w < config.warmup; ++w) {
          est = timed_seconds([&kern] { kern.run(); });
        }
        if (config.warmup == 0) est = timed_seconds([&kern] { kern.run(); });
        const Index batch = pick_batch(est, 2e-3, 512);
        std::vector<double> times(static_cast<std::size_t>(config.repeats));
        for (double& t : times) {
          t = timed_seconds([&kern, batch] {
                for (Index i = 0; i < batch; ++i) kern.run();
              }) /
              static_cast<double>(batch);
        }
        lane.pe_records.push_back(
            aggregate(to_string(scheme), length, std::move(times)));
        if (log) {
          const BenchRecord& r = lane.pe_records.back();
          *log << r.scheme << "/pe T=" << r.length_frames
               << " mean=" << r.mean_s << "s stddev=" << r.stddev_s << "s\n";
        }
      } catch (const std::bad_alloc&) {
        if (log) {
          *log << "warning: " << to_string(scheme) << "/pe T=" << length
               << " skipped (out of memory)\n";
        }
      }
    }
  }

  for (SchemeLane& lane : lanes) {
    for (BenchRecord& r : lane.records) result.records.push_back(std::move(r));
    for (BenchRecord& r : lane.pe_records) {
      result.pe_records.push_back(std::move(r));
    }
  }
  result.ratios = compute_ratios(result.records);
  return result;
}

double fit_loglog_slope(const std::vector<BenchRecord>& records) {
  if (records.size() < 3) {
    throw std::invalid_argument("slope fit needs at least 3 records");
  }
  double mx = 0.0, my = 0.0;
  for (const BenchRecord& r : records) {
    if (r.length_frames <= 0 || !(r.mean_s > 0.0)) {
      throw std::invalid_argument("slope fit needs positive lengths and means");
    }
    mx += std::log(static_cast<double>(r.length_frames));
    my += std::log(r.mean_s);
  }
  mx /= static_cast<double>(records.size());
  my /= static_cast<double>(records.size());
  double sxx = 0.0, sxy = 0.0;
  for (const BenchRecord& r : records) {
    const double dx = std::log(static_cast<double>(r.length_frames)) - mx;
    const double dy = std::log(r.mean_s) - my;
    sxx += dx * dx;
    sxy += dx * dy;
  }
  if (!(sxx > 0.0)) {
    throw std::invalid_argument("slope fit needs at least two distinct lengths");
  }
  return sxy / sxx;
}

std::string format_csv(const SweepResult& result) {
  if (result.records.empty() && result.pe_records.empty()) {
    throw std::invalid_argument("cannot format an empty sweep result");
  }
  std::string out = "scheme,length_frames,mean_s,stddev_s,repeats\n";
  const auto row = [&out](const BenchRecord& r, bool pe) {
    out += r.scheme;
    if (pe) out += "/pe";
    out += ',';
    out += std::to_string(static_cast<long long>(r.length_frames));
    out += ',';
    out += format_double(r.mean_s);
    out += ',';
    out += format_double(r.stddev_s);
    out += ',';
    out += std::to_string(static_cast<long long>(r.repeats));
    out += '\n';
  };
  for (const BenchRecord& r : result.records) row(r, false);
  for (const BenchRecord& r : result.pe_records) row(r, true);
  return out;
}

void emit_csv(const SweepResult& result, const std::string& path) {
  const std::string text = format_csv(result);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << text;
  f.flush();
  if (!f) throw IoError("write failed: " + path);
}

SweepResult parse_csv_text(const std::string& text) {
  static const std::string kHeader = "scheme,length_frames,mean_s,stddev_s,repeats";
  SweepResult result;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kHeader) {
    throw IoError("CSV header mismatch; expected '" + kHeader + "'");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::array<std::string, 5> fields;
    std::size_t start = 0;
    for (int i = 0; i < 5; ++i) {
      const std::size_t comma = line.find(',', start);
      const bool last = i == 4;
      if (last != (comma == std::string::npos)) {
        throw IoError("CSV line " + std::to_string(lineno) +
                      ": expected 5 comma-separated fields");
      }
      fields[static_cast<std::size_t>(i)] =
          line.substr(start, last ? std::string::npos : comma - start);
      start = comma + 1;
    }
    BenchRecord rec;
    bool pe = false;
    rec.scheme = fields[0];
    const std::size_t slash = rec.scheme.rfind("/pe");
    if (slash != std::string::npos && slash + 3 == rec.scheme.size()) {
      rec.scheme.erase(slash);
      pe = true;
    }
    try {
      rec.length_frames = static_cast<Index>(std::stoll(fields[1]));
      rec.mean_s = std::stod(fields[2]);
      rec.stddev_s = std::stod(fields[3]);
      rec.repeats = static_cast<Index>(std::stoll(fields[4]));
    } catch (const std::exception&) {
      throw IoError("CSV line " + std::to_string(lineno) + ": bad numeric field");
    }
    if (rec.length_frames <= 0 || rec.mean_s < 0.0 || rec.stddev_s < 0.0 ||
        rec.repeats < 1) {
      throw IoError("CSV line " + std::to_string(lineno) +
                    ": values violate record invariants");
    }
    rec.median_s = rec.mean_s;  // medians are not serialized
    (pe ? result.pe_records : result.records).push_back(std::move(rec));
  }
  if (result.records.empty() && result.pe_records.empty()) {
    throw IoError("CSV contains no records");
  }
  result.ratios = compute_ratios(result.records);
  result.checksum = 0;
  return result;
}

SweepResult parse_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_csv_text(buf.str());
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t hash) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    hash ^= static_cast<std::uint64_t>(p[i]);
    hash *= 1099511628211ull;
  }
  return hash;
}

// ---------------------------------------------------------------------------
// SVG plot
// ---------------------------------------------------------------------------

namespace {

struct Series {
  std::string label;
  std::string color;
  bool dashed = false;
  std::vector<std::array<double, 2>> pts;  // (length, value)
};

std::string scheme_color(const std::string& scheme) {
  if (scheme == "none") return "#888888";
  if (scheme == "absolute") return "#1f77b4";
  if (scheme == "rotary") return "#d62728";
  if (scheme == "relative") return "#2ca02c";
  return "#9467bd";
}

std::string fmt2(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt_sig(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// Linear or logarithmic interval -> pixel interval (possibly inverted).
struct AxisMap {
  double lo = 0.0, hi = 1.0;
  double p0 = 0.0, p1 = 1.0;
  bool log = false;

  double at(double v) const {
    const double a = log ? std::log(v) : v;
    const double l = log ? std::log(lo) : lo;
    const double h = log ? std::log(hi) : hi;
    return p0 + (a - l) / (h - l) * (p1 - p0);
  }
};

void add_series_points(std::ostringstream& svg, const Series& s,
                       const AxisMap& xm, const AxisMap& ym) {
  svg << "<polyline fill=\"none\" stroke=\"" << s.color
      << "\" stroke-width=\"1.6\"";
  if (s.dashed) svg << " stroke-dasharray=\"5,3\"";
  svg << " points=\"";
  for (std::size_t i = 0; i < s.pts.size(); ++i) {
    if (i) svg << ' ';
    svg << fmt2(xm.at(s.pts[i][0])) << ',' << fmt2(ym.at(s.pts[i][1]));
  }
  svg << "\"/>\n";
  for (const auto& p : s.pts) {
    svg << "<circle cx=\"" << fmt2(xm.at(p[0])) << "\" cy=\""
        << fmt2(ym.at(p[1])) << "\" r=\"2.4\" fill=\"" << s.color << "\"/>\n";
  }
}

void collect(const std::vector<BenchRecord>& records, bool dashed,
             const char* suffix, std::vector<Series>& out) {
  for (const BenchRecord& r : records) {
    const std::string label = r.scheme + suffix;
    Series* s = nullptr;
    for (Series& existing : out) {
      if (existing.label == label) s = &existing;
    }
    if (!s) {
      out.push_back({label, scheme_color(r.scheme), dashed, {}});
      s = &out.back();
    }
    s->pts.push_back({static_cast<double>(r.length_frames), r.mean_s});
  }
}

}  // namespace

std::string format_plot_svg(const SweepResult& result) {
  if (result.records.empty() && result.pe_records.empty()) {
    throw std::invalid_argument("cannot plot an empty sweep result");
  }

  std::vector<Series> series;
  collect(result.records, false, "", series);
  collect(result.pe_records, true, " kernels", series);

  double len_lo = 0.0, len_hi = 0.0, t_lo = 0.0, t_hi = 0.0;
  bool first = true;
  for (const Series& s : series) {
    for (const auto& p : s.pts) {
      if (!(p[1] > 0.0)) continue;  // log axis
      if (first) {
        len_lo = len_hi = p[0];
        t_lo = t_hi = p[1];
        first = false;
      } else {
        len_lo = std::min(len_lo, p[0]);
        len_hi = std::max(len_hi, p[0]);
        t_lo = std::min(t_lo, p[1]);
        t_hi = std::max(t_hi, p[1]);
      }
    }
  }
  if (first) throw std::invalid_argument("no positive timings to plot");
  if (len_hi <= len_lo) len_hi = 2.0 * len_lo;
  if (t_hi <= t_lo) t_hi = 2.0 * t_lo;

  const double W = 980.0, H = 430.0;
  const AxisMap x1{len_lo, len_hi, 70.0, 450.0, true};
  const AxisMap y1{t_lo, t_hi, 360.0, 50.0, true};
  const AxisMap x2{len_lo, len_hi, 580.0, 940.0, true};

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
      << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' ' << H
      << "\">\n<rect width=\"" << W << "\" height=\"" << H
      << "\" fill=\"white\"/>\n"
      << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";

  const auto frame = [&svg](double x0, double x1p, double y0, double y1p) {
    svg << "<rect x=\"" << fmt2(x0) << "\" y=\"" << fmt2(y1p) << "\" width=\""
        << fmt2(x1p - x0) << "\" height=\"" << fmt2(y0 - y1p)
        << "\" fill=\"none\" stroke=\"#999\"/>\n";
  };
  frame(x1.p0, x1.p1, y1.p0, y1.p1);

  // Distinct measured lengths as x ticks on both panels.
  std::vector<double> lengths;
  for (const Series& s : series) {
    for (const auto& p : s.pts) {
      if (std::find(lengths.begin(), lengths.end(), p[0]) == lengths.end()) {
        lengths.push_back(p[0]);
      }
    }
  }
  std::sort(lengths.begin(), lengths.end());
  const auto x_ticks = [&svg, &lengths](const AxisMap& xm, double y_base) {
    for (double L : lengths) {
      const double px = xm.at(L);
      svg << "<line x1=\"" << fmt2(px) << "\" y1=\"" << fmt2(y_base)
          << "\" x2=\"" << fmt2(px) << "\" y2=\"" << fmt2(y_base + 4)
          << "\" stroke=\"#999\"/>\n"
          << "<text x=\"" << fmt2(px) << "\" y=\"" << fmt2(y_base + 16)
          << "\" text-anchor=\"middle\">" << fmt_sig(L) << "</text>\n";
    }
  };
  x_ticks(x1, y1.p0);

  // Powers of ten on the log time axis.
  for (int e = static_cast<int>(std::floor(std::log10(t_lo)));
       e <= static_cast<int>(std::ceil(std::log10(t_hi))); ++e) {
    const double v = std::pow(10.0, e);
    if (v < t_lo || v > t_hi) continue;
    const double py = y1.at(v);
    svg << "<line x1=\"" << fmt2(x1.p0 - 4) << "\" y1=\"" << fmt2(py)
        << "\" x2=\"" << fmt2(x1.p0) << "\" y2=\"" << fmt2(py)
        << "\" stroke=\"#999\"/>\n"
        << "<text x=\"" << fmt2(x1.p0 - 7) << "\" y=\"" << fmt2(py + 4)
        << "\" text-anchor=\"end\">1e" << e << "</text>\n";
  }

  for (const Series& s : series) {
    if (!s.pts.empty()) add_series_points(svg, s, x1, y1);
  }

  svg << "<text x=\"" << fmt2(0.5 * (x1.p0 + x1.p1))
      << "\" y=\"28\" text-anchor=\"middle\" font-size=\"13\">mean wall time "
         "vs length (log-log)</text>\n"
      << "<text x=\"" << fmt2(0.5 * (x1.p0 + x1.p1)) << "\" y=\""
      << fmt2(y1.p0 + 34)
      << "\" text-anchor=\"middle\">length (frames)</text>\n"
      << "<text x=\"18\" y=\"" << fmt2(0.5 * (y1.p0 + y1.p1))
      << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << fmt2(0.5 * (y1.p0 + y1.p1)) << ")\">seconds</text>\n";

  // Legend.
  double ly = y1.p1 + 8.0;
  for (const Series& s : series) {
    svg << "<line x1=\"" << fmt2(x1.p0 + 8) << "\" y1=\"" << fmt2(ly)
        << "\" x2=\"" << fmt2(x1.p0 + 30) << "\" y2=\"" << fmt2(ly)
        << "\" stroke=\"" << s.color << "\" stroke-width=\"1.6\"";
    if (s.dashed) svg << " stroke-dasharray=\"5,3\"";
    svg << "/>\n<text x=\"" << fmt2(x1.p0 + 35) << "\" y=\"" << fmt2(ly + 4)
        << "\">" << s.label << "</text>\n";
    ly += 15.0;
  }

  // Ratio panel.
  frame(x2.p0, x2.p1, y1.p0, y1.p1);
  x_ticks(x2, y1.p0);
  svg << "<text x=\"" << fmt2(0.5 * (x2.p0 + x2.p1))
      << "\" y=\"28\" text-anchor=\"middle\" font-size=\"13\">relative / "
         "rotary mean-time ratio</text>\n"
      << "<text x=\"" << fmt2(0.5 * (x2.p0 + x2.p1)) << "\" y=\""
      << fmt2(y1.p0 + 34)
      << "\" text-anchor=\"middle\">length (frames)</text>\n";
  if (result.ratios.empty()) {
    svg << "<text x=\"" << fmt2(0.5 * (x2.p0 + x2.p1)) << "\" y=\""
        << fmt2(0.5 * (y1.p0 + y1.p1))
        << "\" text-anchor=\"middle\">both relative and rotary required</text>\n";
  } else {
    double r_lo = result.ratios.front().ratio, r_hi = r_lo;
    for (const RatioPoint& r : result.ratios) {
      r_lo = std::min(r_lo, r.ratio);
      r_hi = std::max(r_hi, r.ratio);
    }
    const double pad = std::max(0.05 * (r_hi - r_lo), 0.05);
    AxisMap y2{r_lo - pad, r_hi + pad, 360.0, 50.0, false};
    for (int i = 0; i <= 4; ++i) {
      const double v = y2.lo + (y2.hi - y2.lo) * i / 4.0;
      const double py = y2.at(v);
      svg << "<line x1=\"" << fmt2(x2.p0 - 4) << "\" y1=\"" << fmt2(py)
          << "\" x2=\"" << fmt2(x2.p0) << "\" y2=\"" << fmt2(py)
          << "\" stroke=\"#999\"/>\n"
          << "<text x=\"" << fmt2(x2.p0 - 7) << "\" y=\"" << fmt2(py + 4)
          << "\" text-anchor=\"end\">" << fmt2(v) << "</text>\n";
    }
    Series rs{"relative/rotary", "#7f3fbf", false, {}};
    for (const RatioPoint& r : result.ratios) {
      rs.pts.push_back({static_cast<double>(r.length_frames), r.ratio});
    }
    add_series_points(svg, rs, x2, y2);
  }

  svg << "</g>\n</svg>\n";
  return svg.str();
}

void emit_plot(const SweepResult& result, const std::string& path) {
  const std::string text = format_plot_svg(result);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << text;
  f.flush();
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace ropebench
