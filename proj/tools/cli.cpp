#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "nsvd/calibration.hpp"
#include "nsvd/compress.hpp"
#include "nsvd/container.hpp"
#include "nsvd/error.hpp"
#include "nsvd/evalbench.hpp"
#include "nsvd/model_file.hpp"
#include "nsvd/random.hpp"
#include "nsvd/version.hpp"

namespace nsvd::cli {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::size_t worker_count(std::size_t jobs) {
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("NSVD_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw UsageError("NSVD_THREADS must be a positive integer");
    threads = static_cast<std::size_t>(v);
  }
  return std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(jobs, 1));
}

// Runs fn(i) for i in [0, count) on up to NSVD_THREADS workers. The first
// failure in index order is rethrown.
template <class Fn>
void parallel_for(std::size_t count, Fn fn) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = worker_count(count);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::map<std::string, DenseMatrix> matrices_of(const TensorContainer& c, const std::string& what) {
  std::map<std::string, DenseMatrix> out;
  for (const Tensor& t : c.entries()) {
    try {
      out.emplace(t.name, t.to_matrix());
    } catch (const ArgumentError& e) {
      throw FormatError(what + ": " + e.what());
    }
  }
  return out;
}

const DenseMatrix& lookup(const std::map<std::string, DenseMatrix>& m, const std::string& name,
                          const std::string& what) {
  auto it = m.find(name);
  if (it == m.end()) throw FormatError(what + " has no tensor for layer '" + name + "'");
  return it->second;
}

GramStats stream_gram(const DenseMatrix& x, const std::vector<std::size_t>& columns) {
  GramStats stats(x.rows());
  for (std::size_t c0 = 0; c0 < columns.size(); c0 += 256) {
    const std::size_t c1 = std::min(columns.size(), c0 + 256);
    stats.accumulate(x.select_columns({columns.begin() + c0, columns.begin() + c1}));
  }
  return stats;
}

std::vector<std::size_t> all_columns(std::size_t p) {
  std::vector<std::size_t> idx(p);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

Whitener build_whitener(WhitenerKind kind, const GramStats& stats, double tau) {
  switch (kind) {
    case WhitenerKind::kDiagAbsMean: return whitener_diag_absmean(stats);
    case WhitenerKind::kCholesky: return whitener_cholesky(stats);
    case WhitenerKind::kEigenSqrt: return whitener_eigen(stats, EigenVariant::kSqrt, tau);
    case WhitenerKind::kEigenGamma: return whitener_eigen(stats, EigenVariant::kGamma);
  }
  throw ArgumentError("unknown whitener kind");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw Error("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t layers = 2;
  std::size_t n = 64;
  std::size_t rows = 64;
  std::size_t samples = 512;
  double angle = 0.0;
};

void run_gen(const GenArgs& g, std::ostream& out) {
  std::filesystem::create_directories(g.out);
  TensorContainer weights, cal, eval;
  for (std::size_t l = 0; l < g.layers; ++l) {
    ShiftSpec spec;
    spec.n = g.n;
    spec.rows = g.rows;
    spec.latent_dim = std::max<std::size_t>(1, g.n / 2);
    spec.p_cal = g.samples;
    spec.p_eval = g.samples;
    spec.angle = g.angle;
    spec.seed = derive_seed(g.seed, l);
    const ShiftedData d = generate_shifted(spec);
    const std::string name = "layer" + std::to_string(l);
    weights.add(Tensor::from_matrix(name, d.a));
    cal.add(Tensor::from_matrix(name, d.x_cal));
    eval.add(Tensor::from_matrix(name, d.x_eval));
  }
  const std::filesystem::path dir(g.out);
  write_container(dir / "weights.nsvd", weights);
  write_container(dir / "activations_cal.nsvd", cal);
  write_container(dir / "activations_eval.nsvd", eval);
  out << "tool_version " << kToolVersion << " seed " << g.seed << "\n"
      << "wrote " << g.layers << " layers (" << g.rows << "x" << g.n << ", " << g.samples
      << " samples, angle " << format_double(g.angle) << ") to " << g.out << "\n";
}

struct CalibrateArgs {
  std::string activations;
  std::string out;
  std::size_t samples = 256;
  std::uint64_t seed = 0;
};

void run_calibrate(const CalibrateArgs& c, std::ostream& out) {
  if (c.samples == 0) throw UsageError("--samples must be positive");
  const auto acts = matrices_of(read_container(c.activations), "activations");
  NamedGrams grams;
  out << "tool_version " << kToolVersion << " seed " << c.seed << "\n";
  std::size_t index = 0;
  for (const auto& [name, x] : acts) {
    std::vector<std::size_t> cols = all_columns(x.cols());
    if (c.samples < x.cols()) {
      Rng rng(derive_seed(c.seed, index));
      std::shuffle(cols.begin(), cols.end(), rng);
      cols.resize(c.samples);
      std::sort(cols.begin(), cols.end());
    }
    grams.emplace(name, stream_gram(x, cols));
    out << name << ": dim " << x.rows() << ", " << cols.size() << " of " << x.cols()
        << " samples\n";
    ++index;
  }
  write_container(c.out, encode_gram_file(grams));
}

struct CompressArgs {
  std::string weights;
  std::string activations;
  std::string gram;
  std::string method;
  double ratio = 0.0;
  double split = 0.95;
  std::optional<double> tau;
  std::string out;
};

void run_compress(const CompressArgs& c, std::ostream& out) {
  const auto method = parse_method(c.method);
  if (!method) throw UsageError("unknown method '" + c.method + "'");
  const auto kind = required_whitener(*method);
  const bool has_cal = !c.gram.empty() || !c.activations.empty();
  if (!kind && has_cal) {
    throw UsageError(std::string(c.gram.empty() ? "--activations" : "--gram") +
                     " conflicts with --method svd (plain SVD uses no calibration data)");
  }
  if (kind && !has_cal) {
    throw UsageError("--method " + c.method + " needs --gram or --activations");
  }
  if (c.tau && kind != WhitenerKind::kEigenSqrt) {
    throw UsageError("--tau conflicts with --method " + c.method +
                     " (only asvd2, nsvd2 and nid2 use a pseudo-inverse threshold)");
  }
  const double tau = c.tau.value_or(kDefaultTau);

  const auto weights = matrices_of(read_container(c.weights), "weights");
  NamedGrams grams;
  std::map<std::string, DenseMatrix> acts;
  if (!c.gram.empty()) grams = decode_gram_file(read_container(c.gram));
  if (!c.activations.empty()) acts = matrices_of(read_container(c.activations), "activations");

  std::vector<std::string> names;
  for (const auto& [name, a] : weights) names.push_back(name);
  std::vector<std::optional<CompressedLayer>> results(names.size());
  parallel_for(names.size(), [&](std::size_t i) {
    const DenseMatrix& a = weights.at(names[i]);
    const RankBudget budget = rank_budget(a.rows(), a.cols(), c.ratio, c.split);
    std::optional<Whitener> w;
    if (kind) {
      std::optional<GramStats> stats;
      if (!c.gram.empty()) {
        auto it = grams.find(names[i]);
        if (it == grams.end()) throw FormatError("gram file has no entry for layer '" + names[i] + "'");
        stats = it->second;
      } else {
        const DenseMatrix& x = lookup(acts, names[i], "activations");
        stats = stream_gram(x, all_columns(x.cols()));
      }
      w = build_whitener(*kind, *stats, tau);
    }
    results[i] = compress_layer(a, *method, w ? &*w : nullptr, budget);
  });

  NamedLayers layers;
  out << "tool_version " << kToolVersion << "\n";
  for (std::size_t i = 0; i < names.size(); ++i) {
    const CompressedLayer& l = *results[i];
    out << names[i] << ": " << to_string(l.method) << " " << l.rows << "x" << l.cols << " k "
        << l.budget.k << " k1 " << l.budget.k1 << " k2 " << l.budget.k2 << " stored "
        << l.stored_entries() << "\n";
    layers.emplace(names[i], l);
  }
  write_container(c.out, encode_compressed_model(layers));
}

struct EvalArgs {
  std::string model;
  std::string weights;
  std::string activations;
  std::string gram;
  std::string format = "json";
  std::string out;
  std::uint64_t seed = 0;
};

void run_eval(const EvalArgs& e, std::ostream& out) {
  if (e.format != "json" && e.format != "csv") throw UsageError("--format must be json or csv");
  const NamedLayers layers = decode_compressed_model(read_container(e.model));
  const auto weights = matrices_of(read_container(e.weights), "weights");
  const auto acts = matrices_of(read_container(e.activations), "activations");
  NamedGrams grams;
  if (!e.gram.empty()) grams = decode_gram_file(read_container(e.gram));

  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  std::ostringstream csv;
  csv << "# tool_version " << kToolVersion << " seed " << e.seed << "\n"
      << "layer,method,ratio,split,k,k1,k2,plain_loss,activation_loss,stored_entries,fingerprint\n";
  for (const auto& [name, layer] : layers) {
    const DenseMatrix& a = lookup(weights, name, "weights");
    const DenseMatrix& x = lookup(acts, name, "activations");
    if (a.rows() != layer.rows || a.cols() != layer.cols) {
      throw FormatError("layer '" + name + "': weight shape does not match the compressed layer");
    }
    std::string fp = "unchecked";
    if (!e.gram.empty() && layer.whitener_fingerprint != 0) {
      auto it = grams.find(name);
      if (it == grams.end()) throw FormatError("gram file has no entry for layer '" + name + "'");
      fp = gram_fingerprint(it->second.gram()) == layer.whitener_fingerprint ? "match" : "mismatch";
    }
    const double plain = frobenius_norm(a - layer.reconstruct());
    const double act = activation_loss(a, layer, x);
    const auto& b = layer.budget;
    rows.push_back({{"layer", name},
                    {"method", std::string(to_string(layer.method))},
                    {"m", layer.rows},
                    {"n", layer.cols},
                    {"ratio", b.ratio},
                    {"split", b.split},
                    {"k", b.k},
                    {"k1", b.k1},
                    {"k2", b.k2},
                    {"plain_loss", plain},
                    {"activation_loss", act},
                    {"stored_entries", layer.stored_entries()},
                    {"fingerprint", fp}});
    csv << name << ',' << to_string(layer.method) << ',' << format_double(b.ratio) << ','
        << format_double(b.split) << ',' << b.k << ',' << b.k1 << ',' << b.k2 << ','
        << format_double(plain) << ',' << format_double(act) << ',' << layer.stored_entries() << ','
        << fp << '\n';
  }
  std::string text;
  if (e.format == "csv") {
    text = csv.str();
  } else {
    nlohmann::ordered_json j;
    j["tool_version"] = kToolVersion;
    j["seed"] = e.seed;
    j["layers"] = rows;
    text = j.dump(2) + "\n";
  }
  if (e.out.empty()) out << text;
  else write_text(e.out, text);
}

struct VerifyArgs {
  std::uint64_t seed = 0;
  std::size_t trials = 20;
};

bool run_verify(const VerifyArgs& v, std::ostream& out) {
  if (v.trials == 0) throw UsageError("--trials must be positive");
  double t2 = 0.0, t3 = 0.0, t4_trace = 0.0, t4_drop = 0.0, t4_tail_ratio = 0.0;
  double t4_trace_form = 0.0, t4_sq_form = 0.0, ey = 0.0;
  bool ey_beats = true, t4_tail = true, reseeded = false;
  for (std::size_t t = 0; t < v.trials; ++t) {
    IdentityParams p;
    p.seed = derive_seed(v.seed, t);
    const Theorem2Check c2 = verify_theorem2(p);
    reseeded = reseeded || c2.reseeded;
    t2 = std::max(t2, c2.max_residual());
    t3 = std::max(t3, verify_theorem3_equivalence(p).gap);
    const GammaCheck g = verify_theorem4(p);
    t4_trace = std::max(t4_trace, g.max_trace);
    t4_drop = std::max(t4_drop, g.drop_residual);
    t4_tail = t4_tail && g.tail_bound_holds();
    t4_tail_ratio = std::max(t4_tail_ratio, g.truncation_loss_sq / g.plain_tail_sq);
    t4_trace_form = std::max(t4_trace_form, g.drop_residual_trace_form);
    t4_sq_form = std::max(t4_sq_form, g.truncation_residual_trace_sq_form);
    Rng rng(p.seed);
    const EckartYoungCheck e = eckart_young_check(gaussian_matrix(10, 7, rng), 3, 100, p.seed);
    ey = std::max(ey, e.residual);
    ey_beats = ey_beats && e.beats_all;
  }
  const bool ok2 = t2 <= 1e-8;
  const bool ok3 = t3 <= 1e-6;
  const bool ok4 = t4_trace <= 1.0 + 1e-10 && t4_drop <= 1e-8 && t4_tail;
  const bool ok1 = ey <= 1e-10 && ey_beats;
  auto verdict = [](bool ok) { return ok ? "PASS" : "FAIL"; };
  out << "tool_version " << kToolVersion << " seed " << v.seed << " trials " << v.trials
      << (reseeded ? " (some trials reseeded for a full-rank X)" : "") << "\n";
  out << "eckart-young: max_identity_residual " << format_double(ey)
      << " beats_random_candidates " << (ey_beats ? "yes" : "no") << " " << verdict(ok1) << "\n";
  out << "theorem2: max_identity_residual " << format_double(t2) << " (bound 1e-8) "
      << verdict(ok2) << "\n";
  out << "theorem3: max_reconstruction_gap " << format_double(t3) << " (bound 1e-6) "
      << verdict(ok3) << "\n";
  out << "theorem4: max_trace " << format_double(t4_trace) << " (bound 1+1e-10), "
      << "max_identity_residual " << format_double(t4_drop) << " (bound 1e-8), "
      << "max loss^2 / singular_tail^2 " << format_double(t4_tail_ratio) << " (bound 1) "
      << verdict(ok4) << "\n";
  out << "theorem4 note: " << kGammaFormNote << "\n";
  out << "theorem4 deviation (unsquared-trace per-mode form): max relative "
      << format_double(t4_trace_form) << "\n";
  out << "theorem4 deviation (squared-trace tail form): max relative " << format_double(t4_sq_form)
      << "\n";
  return ok1 && ok2 && ok3 && ok4;
}

struct BenchArgs {
  std::uint64_t seed = 0;
  std::size_t trials = 200;
  std::vector<double> ratios{0.3};
  std::vector<double> splits{0.95};
  std::vector<std::string> methods;
  std::optional<double> angle;
  std::optional<double> cosine;
  std::string out;
};

void run_bench(const BenchArgs& b, std::ostream& out) {
  if (b.trials == 0) throw UsageError("--trials must be positive");
  SweepConfig cfg;
  if (b.methods.empty()) {
    cfg.methods.assign(std::begin(kAllMethods), std::end(kAllMethods));
  }
  for (const std::string& m : b.methods) {
    const auto method = parse_method(m);
    if (!method) throw UsageError("unknown method '" + m + "'");
    cfg.methods.push_back(*method);
  }
  cfg.ratios = b.ratios;
  cfg.splits = b.splits;
  cfg.trials = b.trials;
  cfg.spec.seed = b.seed;
  cfg.spec.angle = b.angle ? *b.angle : angle_for_cosine(cfg.spec, b.cosine.value_or(0.45));
  cfg.threads = worker_count(b.trials);
  const SweepResult r = sweep(cfg);
  const std::string json = sweep_summary_json(r, kToolVersion);
  if (b.out.empty()) {
    out << json;
    return;
  }
  write_text(b.out + ".csv", sweep_csv(r));
  write_text(b.out + ".json", json);
  out << "tool_version " << kToolVersion << " seed " << b.seed << "\n";
  for (const SweepSummary& s : r.summary) {
    out << to_string(s.method) << " ratio " << format_double(s.ratio) << " split "
        << format_double(s.split) << " win_rate_vs_asvd1 " << format_double(s.win_rate()) << " ("
        << s.wins << "/" << s.count << ")\n";
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Calibration-driven low-rank compression toolkit", "nsvd"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Write a synthetic weights/activations dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--layers", gen.layers)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--n", gen.n, "Input dimension")->check(CLI::Range(2, 4096));
  gen_cmd->add_option("--rows", gen.rows, "Output dimension")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--samples", gen.samples)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--angle", gen.angle, "Evaluation subspace rotation in radians");

  CalibrateArgs cal;
  auto* cal_cmd = app.add_subcommand("calibrate", "Accumulate per-layer Gram statistics");
  cal_cmd->add_option("--activations", cal.activations)->required();
  cal_cmd->add_option("--out", cal.out)->required();
  cal_cmd->add_option("--samples", cal.samples, "Random columns used per layer");
  cal_cmd->add_option("--seed", cal.seed);

  CompressArgs comp;
  auto* comp_cmd = app.add_subcommand("compress", "Compress every layer of a weights file");
  comp_cmd->add_option("--weights", comp.weights)->required();
  auto* comp_gram = comp_cmd->add_option("--gram", comp.gram);
  auto* comp_acts = comp_cmd->add_option("--activations", comp.activations);
  comp_gram->excludes(comp_acts);
  comp_cmd->add_option("--method", comp.method, "svd|asvd0|asvd1|asvd2|asvd3|nsvd1|nsvd2|nid1|nid2")
      ->required();
  comp_cmd->add_option("--ratio", comp.ratio)->required();
  comp_cmd->add_option("--split", comp.split);
  comp_cmd->add_option("--tau", comp.tau);
  comp_cmd->add_option("--out", comp.out)->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Report losses of a compressed model");
  eval_cmd->add_option("--model", ev.model, "Compressed model file")->required();
  eval_cmd->add_option("--weights", ev.weights)->required();
  eval_cmd->add_option("--activations", ev.activations)->required();
  eval_cmd->add_option("--gram", ev.gram, "Checks the stored whitener fingerprint");
  eval_cmd->add_option("--format", ev.format, "json|csv");
  eval_cmd->add_option("--out", ev.out);
  eval_cmd->add_option("--seed", ev.seed);

  VerifyArgs ver;
  auto* verify_cmd = app.add_subcommand("verify", "Run the loss-identity checks");
  verify_cmd->add_option("--seed", ver.seed);
  verify_cmd->add_option("--trials", ver.trials);

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Seeded distribution-shift method sweep");
  bench_cmd->add_option("--seed", bench.seed);
  bench_cmd->add_option("--trials", bench.trials);
  bench_cmd->add_option("--ratio", bench.ratios);
  bench_cmd->add_option("--split", bench.splits);
  bench_cmd->add_option("--methods", bench.methods);
  auto* bench_angle = bench_cmd->add_option("--angle", bench.angle);
  auto* bench_cos = bench_cmd->add_option("--cosine", bench.cosine, "Target mean cosine similarity");
  bench_angle->excludes(bench_cos);
  bench_cmd->add_option("--out", bench.out, "Prefix for <out>.csv and <out>.json");

  std::vector<std::string> argv_store{"nsvd"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen_cmd) run_gen(gen, out);
    else if (*cal_cmd) run_calibrate(cal, out);
    else if (*comp_cmd) run_compress(comp, out);
    else if (*eval_cmd) run_eval(ev, out);
    else if (*verify_cmd) return run_verify(ver, out) ? kExitOk : kExitFailure;
    else if (*bench_cmd) run_bench(bench, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace nsvd::cli
