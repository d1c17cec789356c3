// pkv: command-line front end for the patternkv library.
//
//   pkv compare  --synthetic <spec|default> | --input <trace> [options]
//   pkv verify   --suite <name> [--seed S]
//   pkv inspect  --input <trace> [--csv <path>] [--outlier-factor F]
//   pkv generate --synthetic <spec|default> --output <trace> [--dtype f16|f32]
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "patternkv/patternkv.hpp"

namespace pkv = patternkv;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

struct CompareOptions {
  std::string input;
  std::string synthetic;
  int bits = 2;
  std::size_t patterns = 32;
  std::size_t group_size = 128;
  std::size_t residual_window = 128;
  double alpha = 0.05;
  std::vector<std::string> schemes;
  bool no_k_pattern = false;
  bool no_v_pattern = false;
  bool no_new_pattern = false;
  bool no_v_gate = false;
  bool k_gate = false;
  std::uint64_t seed = 0;
  std::string output;
  unsigned threads = 1;
};

struct GenerateOptions {
  std::string synthetic;
  std::string output;
  std::string dtype = "f32";
  std::uint64_t seed = 0;
  bool seed_given = false;
};

struct InspectOptions {
  std::string input;
  std::string csv;
  double outlier_factor = 5.0;
};

struct VerifyOptions {
  std::vector<std::string> suites;
  std::uint64_t seed = 0;
};

// "default" selects the built-in spec, seeded by `seed`.
pkv::SyntheticStreamSpec synthetic_spec(const std::string& source, std::uint64_t seed,
                                        bool override_seed, std::string& text) {
  pkv::SyntheticStreamSpec spec;
  if (source == "default") {
    spec.seed = seed;
  } else {
    spec = pkv::load_synthetic_spec(source);
    if (override_seed) spec.seed = seed;
  }
  text = pkv::format_synthetic_spec(spec);
  return spec;
}

int run_compare(const CompareOptions& opt, bool seed_given) {
  if (opt.input.empty() == opt.synthetic.empty()) {
    throw pkv::UsageError("compare: give exactly one of --input or --synthetic");
  }
  pkv::EngineConfig config;
  config.bits = opt.bits;
  config.pattern_count = opt.patterns;
  config.group_size = opt.group_size;
  config.residual_window = opt.residual_window;
  config.alpha = opt.alpha;
  config.use_k_patterns = !opt.no_k_pattern;
  config.use_v_patterns = !opt.no_v_pattern;
  config.generate_new_patterns = !opt.no_new_pattern;
  config.use_v_gate = !opt.no_v_gate;
  config.use_k_gate = opt.k_gate;
  config.seed = opt.seed;
  config.validate();

  std::vector<std::string> names = opt.schemes;
  if (names.empty()) names = {"raw", "patternkv"};
  std::vector<pkv::Scheme> schemes;
  for (const std::string& n : names) {
    const bool seen = std::any_of(schemes.begin(), schemes.end(),
                                  [&](const pkv::Scheme& s) { return s.name == n; });
    if (seen) continue;
    schemes.push_back({n, n == "raw" ? pkv::SchemeKind::kRaw : pkv::SchemeKind::kPatternKV, config});
  }

  pkv::RunReport report;
  report.seed = opt.seed;
  pkv::KvStream stream;
  if (!opt.input.empty()) {
    stream = pkv::read_trace(opt.input).stream;
    report.input.source = "trace";
    report.input.path = opt.input;
  } else {
    const pkv::SyntheticStreamSpec spec =
        synthetic_spec(opt.synthetic, opt.seed, seed_given, report.input.synthetic_spec);
    stream = pkv::generate_synthetic_stream(spec);
    report.input.source = "synthetic";
    report.input.path = opt.synthetic;
  }
  report.input.layers = stream.layers;
  report.input.heads = stream.heads;
  report.input.head_dim = stream.head_dim;
  report.input.prefill_len = stream.prefill_len;
  report.input.decode_len = stream.decode_len;

  const auto start = std::chrono::steady_clock::now();
  report.schemes = pkv::run_scheme_comparison(stream, schemes, opt.threads);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const std::string json = pkv::to_json(report).dump(2) + "\n";
  if (opt.output.empty()) {
    std::cout << json;
  } else {
    std::ofstream out(opt.output, std::ios::binary | std::ios::trunc);
    if (!out) throw pkv::UsageError("cannot open output file: " + opt.output);
    out << json;
  }
  for (const pkv::CacheMetrics& m : report.schemes) {
    std::fprintf(stderr, "%-12s mse_k %.6g  mse_v %.6g  v_accept %.3f  bits/token K %.2f V %.2f\n",
                 m.scheme.c_str(), m.mse_k, m.mse_v, m.v_gate_acceptance_rate, m.bits_per_token_k,
                 m.bits_per_token_v);
  }
  return kExitOk;
}

int run_verify(const VerifyOptions& opt) {
  std::vector<std::string> suites = opt.suites;
  if (suites.empty()) suites = pkv::verify_suite_names();
  bool all_ok = true;
  for (const std::string& s : suites) {
    const pkv::VerifyResult r = pkv::run_verify_suite(s, opt.seed);
    std::printf("%-9s %s  (%zu checks, %zu failures)\n", r.suite.c_str(),
                r.passed() ? "PASS" : "FAIL", r.checks, r.failures.size());
    for (const std::string& f : r.failures) std::printf("  %s\n", f.c_str());
    all_ok = all_ok && r.passed();
  }
  return all_ok ? kExitOk : kExitData;
}

int run_inspect(const InspectOptions& opt) {
  const pkv::TraceFile trace = pkv::read_trace(opt.input);
  const pkv::TraceHeader& h = trace.header;
  std::printf("magic         KVTR\n");
  std::printf("version       %u\n", h.version);
  std::printf("num_layers    %u\n", h.num_layers);
  std::printf("num_kv_heads  %u\n", h.num_kv_heads);
  std::printf("head_dim      %u\n", h.head_dim);
  std::printf("dtype         %s\n", h.dtype == pkv::TraceDtype::kFloat16 ? "float16" : "float32");
  std::printf("prefill_len   %u\n", h.prefill_len);
  std::printf("decode_steps  %u\n", h.decode_steps);

  std::ofstream csv;
  if (!opt.csv.empty()) {
    csv.open(opt.csv, std::ios::trunc);
    if (!csv) throw pkv::UsageError("cannot open CSV output: " + opt.csv);
    csv << "layer,cache,channel,mean_abs,range,outlier\n";
  }
  for (std::size_t layer = 0; layer < trace.stream.layers; ++layer) {
    for (bool keys : {true, false}) {
      const pkv::ChannelStats st =
          pkv::channel_statistics(trace.stream, layer, keys, opt.outlier_factor);
      std::printf("\nlayer %zu %s  median mean|x| %.6g  outlier channels (> %.3g x median):",
                  layer, keys ? "K" : "V", st.median_mean_abs, opt.outlier_factor);
      if (st.outliers.empty()) std::printf(" none");
      for (std::size_t c : st.outliers) std::printf(" %zu", c);
      std::printf("\n  %-8s %-14s %-14s\n", "channel", "mean_abs", "range");
      for (std::size_t c = 0; c < st.mean_abs.size(); ++c) {
        const bool outlier = std::find(st.outliers.begin(), st.outliers.end(), c) != st.outliers.end();
        std::printf("  %-8zu %-14.6g %-14.6g%s\n", c, st.mean_abs[c], st.range[c],
                    outlier ? " *" : "");
        if (csv) {
          csv << layer << ',' << (keys ? 'K' : 'V') << ',' << c << ',' << st.mean_abs[c] << ','
              << st.range[c] << ',' << (outlier ? 1 : 0) << '\n';
        }
      }
    }
  }
  return kExitOk;
}

int run_generate(const GenerateOptions& opt) {
  if (opt.dtype != "f16" && opt.dtype != "f32") {
    throw pkv::UsageError("--dtype must be f16 or f32");
  }
  std::string text;
  const pkv::SyntheticStreamSpec spec = synthetic_spec(opt.synthetic, opt.seed, opt.seed_given, text);
  const pkv::KvStream stream = pkv::generate_synthetic_stream(spec);
  pkv::write_trace(opt.output, stream,
                   opt.dtype == "f16" ? pkv::TraceDtype::kFloat16 : pkv::TraceDtype::kFloat32);
  std::printf("wrote %s: %zu layers, %zu heads, head_dim %zu, prefill %zu, decode %zu\n",
              opt.output.c_str(), stream.layers, stream.heads, stream.head_dim, stream.prefill_len,
              stream.decode_len);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pattern-aligned residual KV cache quantization toolkit"};
  app.require_subcommand(1);

  CompareOptions cmp;
  auto* compare = app.add_subcommand("compare", "Replay a K/V stream through quantization schemes");
  auto* src = compare->add_option_group("source");
  src->add_option("--input", cmp.input, "KVTR trace file");
  src->add_option("--synthetic", cmp.synthetic, "Synthetic spec file, or 'default'");
  src->require_option(1);
  compare->add_option("--bits", cmp.bits, "Code width")->check(CLI::IsMember({2, 4, 8}));
  compare->add_option("--patterns", cmp.patterns, "Prefill pattern count")->check(CLI::PositiveNumber);
  compare->add_option("--group-size", cmp.group_size, "Tokens per flush / K group")
      ->check(CLI::PositiveNumber);
  compare->add_option("--residual-window", cmp.residual_window, "Full-precision tail length")
      ->check(CLI::NonNegativeNumber);
  compare->add_option("--alpha", cmp.alpha, "Gate significance level in (0, 0.5]")
      ->check(CLI::Range(0.0, 0.5));
  compare->add_option("--scheme", cmp.schemes, "Scheme to run (repeatable)")
      ->check(CLI::IsMember({"raw", "patternkv"}));
  compare->add_flag("--no-k-pattern", cmp.no_k_pattern, "Disable K patterns");
  compare->add_flag("--no-v-pattern", cmp.no_v_pattern, "Disable V patterns");
  compare->add_flag("--no-new-pattern", cmp.no_new_pattern, "Disable decode-time pattern generation");
  compare->add_flag("--no-v-gate", cmp.no_v_gate, "Disable the V flattening gate");
  compare->add_flag("--k-gate", cmp.k_gate, "Apply the flattening gate to K as well");
  auto* cmp_seed = compare->add_option("--seed", cmp.seed, "Seed");
  compare->add_option("--output", cmp.output, "Report path (default stdout)");
  compare->add_option("--threads", cmp.threads, "Worker threads")->check(CLI::PositiveNumber);

  VerifyOptions ver;
  auto* verify = app.add_subcommand("verify", "Run property suites on random instances");
  verify->add_option("--suite", ver.suites, "quant, patterns, gate, variance or covering (repeatable)");
  verify->add_option("--seed", ver.seed, "Seed");

  InspectOptions ins;
  auto* inspect = app.add_subcommand("inspect", "Print trace header and channel statistics");
  inspect->add_option("--input", ins.input, "KVTR trace file")->required();
  inspect->add_option("--csv", ins.csv, "Write channel statistics as CSV");
  inspect->add_option("--outlier-factor", ins.outlier_factor, "Outlier threshold (x median mean|x|)")
      ->check(CLI::PositiveNumber);

  GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic stream as a KVTR trace");
  generate->add_option("--synthetic", gen.synthetic, "Synthetic spec file, or 'default'")->required();
  generate->add_option("--output", gen.output, "Trace path")->required();
  generate->add_option("--dtype", gen.dtype, "f16 or f32");
  auto* gen_seed = generate->add_option("--seed", gen.seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*compare) return run_compare(cmp, cmp_seed->count() > 0);
    if (*verify) return run_verify(ver);
    if (*inspect) return run_inspect(ins);
    if (*generate) {
      gen.seed_given = gen_seed->count() > 0;
      return run_generate(gen);
    }
  } catch (const pkv::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const pkv::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
