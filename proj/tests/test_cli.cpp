#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

// Drives the installed binary end to end through a shell, the way a user
// would. ROPEBENCH_CLI_PATH is injected by the build.

namespace {

namespace fs = std::filesystem;

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr combined
};

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / name;
}

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path log = temp_file("cli_out_" + std::to_string(counter++) + ".log");
  const std::string cmd =
      std::string(ROPEBENCH_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  if (WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
  std::ifstream f(log);
  std::ostringstream buf;
  buf << f.rdbuf();
  r.output = buf.str();
  fs::remove(log);
  return r;
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

const std::string kTinySweep =
    "sweep --schemes rotary,relative --lengths 16,32 --repeats 2 --warmup 1 "
    "--layers 1 --d-model 32 --heads 2";

}  // namespace

TEST_CASE("running without a subcommand is a usage error") {
  const RunResult r = run_cli("");
  CHECK(r.exit_code == 1);
}

TEST_CASE("unknown flags and bad values are usage errors") {
  CHECK(run_cli("sweep --no-such-flag").exit_code == 1);
  CHECK(run_cli("sweep --schemes sinusoid").exit_code == 1);
  CHECK(run_cli("sweep --repeats 0").exit_code == 1);
  CHECK(run_cli("sweep --layers 0").exit_code == 1);
  CHECK(run_cli("sweep --mode sideways").exit_code == 1);
  CHECK(run_cli("sweep --lengths 32,16").exit_code == 1);
  CHECK(run_cli("frobnicate").exit_code == 1);
}

TEST_CASE("a small sweep reports every section and writes its files") {
  const fs::path csv = temp_file("cli_sweep.csv");
  const fs::path svg = temp_file("cli_sweep.svg");
  const RunResult r =
      run_cli(kTinySweep + " --csv " + csv.string() + " --plot " + svg.string());
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("full encoder passes") != std::string::npos);
  CHECK(r.output.find("positional kernels only") != std::string::npos);
  CHECK(r.output.find("relative/rotary mean-time ratio") != std::string::npos);
  CHECK(r.output.find("encoder output checksum:") != std::string::npos);

  REQUIRE(fs::exists(csv));
  const std::string csv_text = slurp(csv);
  CHECK(csv_text.rfind("scheme,length_frames,mean_s,stddev_s,repeats\n", 0) == 0);
  CHECK(csv_text.find("rotary,16,") != std::string::npos);
  CHECK(csv_text.find("relative/pe,32,") != std::string::npos);

  REQUIRE(fs::exists(svg));
  const std::string svg_text = slurp(svg);
  CHECK(svg_text.find("<svg") != std::string::npos);
  CHECK(svg_text.find("</svg>") != std::string::npos);

  fs::remove(csv);
  fs::remove(svg);
}

TEST_CASE("sweep honors chunked masks and backward mode") {
  const RunResult r = run_cli(
      "sweep --schemes rotary --lengths 16,32 --repeats 1 --warmup 0 "
      "--layers 1 --d-model 32 --heads 2 --mode forward-backward "
      "--chunk-frames 8");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("rotary") != std::string::npos);
}

TEST_CASE("an unwritable output path is an I/O error") {
  const RunResult r =
      run_cli(kTinySweep + " --csv /nonexistent-dir/sub/out.csv");
  CHECK(r.exit_code == 3);
}

TEST_CASE("repeat and warmup flags flow through to the CSV") {
  const fs::path csv_a = temp_file("cli_repeats.csv");
  const RunResult a = run_cli(
      "sweep --schemes rotary --lengths 16 --repeats 3 --warmup 0 "
      "--layers 1 --d-model 32 --heads 2 --csv " +
      csv_a.string());
  CHECK(a.exit_code == 0);
  CHECK(slurp(csv_a).find("rotary,16,") != std::string::npos);
  CHECK(slurp(csv_a).find(",3\n") != std::string::npos);
  fs::remove(csv_a);
}

TEST_CASE("the healthy check suite passes") {
  const RunResult r = run_cli("check");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("FAIL") == std::string::npos);
  CHECK(r.output.find("PASS") != std::string::npos);
  CHECK(r.output.find("checks passed") != std::string::npos);
}

TEST_CASE("every fault injection is caught by the check suite") {
  for (const char* mutation : {"rope-sign", "grad-scale", "mask-leak"}) {
    const RunResult r = run_cli(std::string("check --mutate ") + mutation);
    INFO("mutation ", mutation);
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("FAIL") != std::string::npos);
  }
  CHECK(run_cli("check --mutate no-such-fault").exit_code == 1);
}

TEST_CASE("goldens prints the derived reference values") {
  const RunResult r = run_cli("goldens");
  CHECK(r.exit_code == 0);
  // cos(1) from the rotation tables and the toy attention weights.
  CHECK(r.output.find("0.540302305868139") != std::string::npos);
  CHECK(r.output.find("0.25 0.75") != std::string::npos);
  CHECK(r.output.find("softmax_rows([1 2 3])") != std::string::npos);
  CHECK(r.output.find("finite_diff") != std::string::npos);
}
