#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ropebench/conformer.hpp"

// Wall-clock benchmark harness: sweep sequence lengths per positional scheme,
// time encoder passes on one thread with a monotonic clock, aggregate
// mean/stddev/median over repeats, and emit CSV plus an SVG plot of absolute
// times and the relative/rotary time ratio.
//
// Alongside the full-pass timings, each scheme's positional kernels (the work
// the scheme adds on top of a no-PE attention pass: rotations for rotary,
// offset projection + shifted position logits for relative, table add for
// absolute) are timed on their own. Full-pass differencing would bury the
// rotary kernel's O(T) cost in the O(T^2) pass-to-pass noise, so growth-rate
// claims are made on these directly measured kernels; ratio and ordering
// claims use the full-pass means.

namespace ropebench {

inline constexpr Index kVocabSize = 5000;  // loss-head width in backward mode

enum class BenchMode { forward, forward_backward };

const char* to_string(BenchMode mode);
std::optional<BenchMode> bench_mode_from_string(const std::string& name);

struct BenchConfig {
  std::vector<SchemeKind> schemes{SchemeKind::rotary, SchemeKind::relative};
  std::vector<Index> lengths{128, 256, 512, 1024, 2048, 4096};
  Index repeats = 20;
  Index warmup = 3;
  ConformerConfig model;  // scheme field is overridden per swept scheme
  BenchMode mode = BenchMode::forward;
  std::uint64_t seed = 42;
  Index chunk_frames = 0;  // 0 = full attention mask
  std::string csv_path;    // empty = do not write
  std::string plot_path;   // empty = do not write
};

// Throws std::invalid_argument unless lengths are strictly increasing,
// repeats >= 1, warmup >= 0, and at least one scheme is requested.
void validate(const BenchConfig& config);

struct BenchRecord {
  std::string scheme;  // scheme name; positional-kernel rows carry "/pe"
  Index length_frames = 0;
  double mean_s = 0.0;
  double stddev_s = 0.0;
  Index repeats = 0;
  double median_s = 0.0;  // diagnostic only; not serialized to CSV
};

struct RatioPoint {
  Index length_frames = 0;
  double ratio = 0.0;  // mean(relative) / mean(rotary)
};

struct SweepResult {
  std::vector<BenchRecord> records;     // full passes
  std::vector<BenchRecord> pe_records;  // positional kernels only
  std::vector<RatioPoint> ratios;       // where both relative and rotary ran
  std::uint64_t checksum = 0;           // FNV-1a over final encoder outputs
};

// Seeded uniform [-1, 1] input, deterministic per (length, seed) and
// different across lengths for the same seed.
Matrix gen_input(Index length, Index d_model, std::uint64_t seed);

// Builds the encoder and input for (scheme, length), runs config.warmup
// unmeasured passes, then returns the wall-clock seconds of one measured
// pass. Throws std::runtime_error if the monotonic clock yields a
// nonpositive duration.
double time_once(const BenchConfig& config, SchemeKind scheme, Index length);

// Full sweep. Progress lines go to *log when non-null. A length that fails
// to allocate is skipped with a warning on *log and the sweep continues.
SweepResult run_sweep(const BenchConfig& config, std::ostream* log = nullptr);

// Least-squares slope of log(mean_s) against log(length_frames).
// Throws std::invalid_argument on fewer than 3 records or nonpositive means.
double fit_loglog_slope(const std::vector<BenchRecord>& records);

// Thrown for unreadable/unwritable paths and malformed CSV input.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// CSV: UTF-8, LF line endings, header exactly
// `scheme,length_frames,mean_s,stddev_s,repeats`, floats with 9 significant
// digits. pe_records follow records, with "/pe" appended to the scheme name.
std::string format_csv(const SweepResult& result);
void emit_csv(const SweepResult& result, const std::string& path);
SweepResult parse_csv_text(const std::string& text);  // recomputes ratios
SweepResult parse_csv(const std::string& path);

// Two-panel SVG: absolute mean seconds vs length (log-log, kernels dashed)
// and the relative/rotary ratio vs length.
std::string format_plot_svg(const SweepResult& result);
void emit_plot(const SweepResult& result, const std::string& path);

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ull;
std::uint64_t fnv1a(const void* data, std::size_t bytes,
                    std::uint64_t hash = kFnvOffset);

}  // namespace ropebench
