// Benchmark CLI: `sweep` times encoder passes per positional scheme across
// sequence lengths, `check` runs the invariant/gradient suites, `goldens`
// regenerates the derived reference values frozen into the tests.
//
// Exit codes: 0 success, 1 usage error, 2 check-suite failure, 3 I/O error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ropebench/bench.hpp"
#include "ropebench/checks.hpp"
#include "ropebench/gradcheck.hpp"
#include "ropebench/tensor_ops.hpp"

namespace {

using namespace ropebench;

struct SweepOptions {
  std::vector<std::string> schemes{"rotary", "relative"};
  std::vector<long long> lengths{128, 256, 512, 1024, 2048, 4096};
  long long repeats = 20;
  long long warmup = 3;
  long long layers = 4;
  long long d_model = 128;
  long long heads = 4;
  std::string mode = "forward";
  unsigned long long seed = 42;
  double theta_base = 10000.0;
  long long chunk_frames = 0;
  std::string csv_path;
  std::string plot_path;
};

BenchConfig to_config(const SweepOptions& o) {
  BenchConfig cfg;
  cfg.schemes.clear();
  for (const std::string& name : o.schemes) {
    const auto kind = scheme_from_string(name);
    if (!kind) throw std::invalid_argument("unknown scheme '" + name + "'");
    cfg.schemes.push_back(*kind);
  }
  cfg.lengths.assign(o.lengths.begin(), o.lengths.end());
  cfg.repeats = o.repeats;
  cfg.warmup = o.warmup;
  cfg.model.n_layers = o.layers;
  cfg.model.d_model = o.d_model;
  cfg.model.n_heads = o.heads;
  cfg.model.theta_base = o.theta_base;
  const auto mode = bench_mode_from_string(o.mode);
  if (!mode) throw std::invalid_argument("unknown mode '" + o.mode + "'");
  cfg.mode = *mode;
  cfg.seed = o.seed;
  cfg.chunk_frames = o.chunk_frames;
  cfg.csv_path = o.csv_path;
  cfg.plot_path = o.plot_path;
  return cfg;
}

void print_records(const char* title, const std::vector<BenchRecord>& records,
                   bool pe) {
  if (records.empty()) return;
  std::printf("%s\n%-14s %10s %14s %14s %14s %8s\n", title, "scheme", "frames",
              "mean_s", "stddev_s", "median_s", "repeats");
  for (const BenchRecord& r : records) {
    std::string name = r.scheme;
    if (pe) name += "/pe";
    std::printf("%-14s %10lld %14.6g %14.6g %14.6g %8lld\n", name.c_str(),
                static_cast<long long>(r.length_frames), r.mean_s, r.stddev_s,
                r.median_s, static_cast<long long>(r.repeats));
  }
}

int run_sweep_command(const SweepOptions& opts) {
  const BenchConfig cfg = to_config(opts);
  const SweepResult result = run_sweep(cfg, &std::cerr);

  print_records("full encoder passes", result.records, false);
  std::printf("\n");
  print_records("positional kernels only", result.pe_records, true);

  if (!result.ratios.empty()) {
    std::printf("\nrelative/rotary mean-time ratio\n");
    for (const RatioPoint& r : result.ratios) {
      std::printf("  T=%-8lld %.4f\n", static_cast<long long>(r.length_frames),
                  r.ratio);
    }
  }

  std::map<std::string, std::vector<BenchRecord>> by_scheme;
  for (const BenchRecord& r : result.pe_records) by_scheme[r.scheme].push_back(r);
  bool slope_header = false;
  for (const auto& [scheme, recs] : by_scheme) {
    if (recs.size() < 3) continue;
    if (!slope_header) {
      std::printf("\nlog-log slope of positional-kernel time vs length\n");
      slope_header = true;
    }
    std::printf("  %-10s %.3f\n", (scheme + "/pe").c_str(),
                fit_loglog_slope(recs));
  }
  std::printf("\nencoder output checksum: %016llx\n",
              static_cast<unsigned long long>(result.checksum));

  if (!cfg.csv_path.empty()) {
    emit_csv(result, cfg.csv_path);
    std::fprintf(stderr, "wrote %s\n", cfg.csv_path.c_str());
  }
  if (!cfg.plot_path.empty()) {
    emit_plot(result, cfg.plot_path);
    std::fprintf(stderr, "wrote %s\n", cfg.plot_path.c_str());
  }
  return 0;
}

int run_check_command(const std::string& mutation) {
  const std::vector<CheckResult> results = run_checks(mutation);
  for (const CheckResult& r : results) {
    std::printf("%s  %s (%s)\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                r.detail.c_str());
  }
  const bool ok = all_passed(results);
  std::printf("%zu/%zu checks passed\n",
              static_cast<std::size_t>(
                  std::count_if(results.begin(), results.end(),
                                [](const CheckResult& r) { return r.pass; })),
              results.size());
  return ok ? 0 : 2;
}

void print_vector(const char* name, const std::vector<double>& v) {
  std::printf("%s =", name);
  for (double x : v) std::printf(" %.17g", x);
  std::printf("\n");
}

void print_matrix(const char* name, const Matrix& m) {
  std::printf("%s =", name);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) std::printf(" %.17g", m(i, j));
    if (i + 1 < m.rows()) std::printf(" ;");
  }
  std::printf("\n");
}

// Recomputes every derived reference value that the tests pin as literals,
// so drift between code and test constants is visible in one place.
int run_goldens_command() {
  print_vector("rope_angles(8, 10000)", rope_angles(8, 10000.0));

  const RoPECache cache = build_rope_cache(4, 4);
  print_matrix("rope_cos_rows_0_to_3(head_dim=4)", cache.cos_table);
  print_matrix("rope_sin_rows_0_to_3(head_dim=4)", cache.sin_table);

  Matrix logits(1, 3);
  logits << 1.0, 2.0, 3.0;
  print_matrix("softmax_rows([1 2 3])", softmax_rows(logits));

  // q rows scaled by sqrt(2) cancel the 1/sqrt(d) factor, so row 0 weights
  // are softmax(0, ln 3) = [1/4, 3/4] and row 1 weights are exactly [1/2, 1/2].
  Matrix q(2, 2), k(2, 2), v(2, 2);
  const double rt2 = std::sqrt(2.0);
  q << rt2, 0, 0, rt2;
  k << 0, 0, std::log(3.0), 0;
  v << 1, 2, 3, 4;
  const SdpaResult s = sdpa(q, k, v, build_full_mask(2));
  print_matrix("sdpa_weights(toy)", s.weights);
  print_matrix("sdpa_output(toy)", s.output);

  Matrix ln_in(1, 2);
  ln_in << 3.0, 1.0;
  print_matrix("layernorm([3 1], gain=1, bias=0, eps=0)",
               layernorm(ln_in, Vector::Ones(2), Vector::Zero(2), 0.0));

  // Entry = 10*row + offset, offsets running 2..-2 across columns; the gather
  // must produce entry (t, u) = 10*t + (t - u).
  Matrix offsets(3, 5);
  for (Index r = 0; r < 3; ++r) {
    for (Index c = 0; c < 5; ++c) {
      offsets(r, c) = 10.0 * static_cast<double>(r) + (2.0 - static_cast<double>(c));
    }
  }
  print_matrix("rel_shift(3x5, entry = 10*row + offset)", rel_shift(offsets));

  print_matrix("sinusoidal_absolute(T=2, d=4)", sinusoidal_absolute(2, 4));
  print_matrix("relpos_table(T=2, d=4)", relpos_table(2, 4));

  // Finite-difference self test: f(x) = a^T x has constant exact gradient a.
  Matrix a(2, 2);
  a << 0.5, -1.25, 2.0, 0.75;
  const ScalarFn f = [&a](const Matrix& in) {
    return (a.array() * in.array()).sum();
  };
  Matrix x0(2, 2);
  x0 << 0.1, 0.2, -0.3, 0.4;
  print_matrix("finite_diff(a^T x at x0)", finite_diff(f, x0));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"positional-embedding timing benchmark for a Conformer encoder"};
  app.require_subcommand(1);

  SweepOptions opts;
  CLI::App* sweep = app.add_subcommand(
      "sweep", "time encoder passes across sequence lengths and schemes");
  sweep
      ->add_option("--schemes", opts.schemes,
                   "schemes to sweep (none absolute rotary relative)")
      ->delimiter(',')
      ->check(CLI::IsMember({"none", "absolute", "rotary", "relative"}));
  sweep
      ->add_option("--lengths", opts.lengths,
                   "sequence lengths in frames, strictly increasing")
      ->delimiter(',');
  sweep->add_option("--repeats", opts.repeats, "timed passes per cell")
      ->check(CLI::PositiveNumber);
  sweep->add_option("--warmup", opts.warmup, "unmeasured passes per cell")
      ->check(CLI::NonNegativeNumber);
  sweep->add_option("--layers", opts.layers, "encoder layers")
      ->check(CLI::PositiveNumber);
  sweep->add_option("--d-model", opts.d_model, "model width")
      ->check(CLI::PositiveNumber);
  sweep->add_option("--heads", opts.heads, "attention heads")
      ->check(CLI::PositiveNumber);
  sweep->add_option("--mode", opts.mode, "forward or forward-backward")
      ->check(CLI::IsMember({"forward", "forward-backward"}));
  sweep->add_option("--seed", opts.seed, "RNG seed for inputs and parameters");
  sweep->add_option("--theta-base", opts.theta_base, "rotary frequency base")
      ->check(CLI::PositiveNumber);
  sweep->add_option("--chunk-frames", opts.chunk_frames,
                    "chunked attention mask size (0 = full context)")
      ->check(CLI::NonNegativeNumber);
  sweep->add_option("--csv", opts.csv_path, "write results CSV here");
  sweep->add_option("--plot", opts.plot_path, "write SVG plot here");

  std::string mutation;
  CLI::App* check = app.add_subcommand(
      "check", "run invariant and gradient suites (exit 2 on failure)");
  std::string mutation_help = "fault injection; one of:";
  for (const std::string& name : known_mutations()) mutation_help += " " + name;
  check->add_option("--mutate", mutation, mutation_help);

  CLI::App* goldens = app.add_subcommand(
      "goldens", "print derived reference values used by the tests");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (sweep->parsed()) return run_sweep_command(opts);
    if (check->parsed()) return run_check_command(mutation);
    if (goldens->parsed()) return run_goldens_command();
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
