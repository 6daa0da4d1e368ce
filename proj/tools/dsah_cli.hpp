#pragma once

// Command implementations for the `dsah` tool. Kept in a header so the
// acceptance suite can drive the exact same code paths in-process.

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dsah/dataio.hpp"
#include "dsah/encoder.hpp"
#include "dsah/formats.hpp"
#include "dsah/retrieval.hpp"
#include "dsah/trainer.hpp"

namespace dsah::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumerical = 4 };

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

inline std::string file_digest(const std::string& path) {
  return sha256_hex(detail::read_file(path));
}

// Collects artifacts and timings for manifest.json.
class Manifest {
 public:
  explicit Manifest(std::string command) {
    doc_["tool"] = "dsah";
    doc_["version"] = kVersion;
    doc_["command"] = std::move(command);
    doc_["inputs"] = json::array();
    doc_["artifacts"] = json::array();
    doc_["timings_ms"] = json::object();
  }

  void set(const std::string& key, json value) { doc_[key] = std::move(value); }

  void input(const std::string& role, const std::string& path) {
    doc_["inputs"].push_back({{"role", role}, {"path", path}, {"sha256", file_digest(path)}});
  }

  void timing(const std::string& phase, std::chrono::steady_clock::duration d) {
    doc_["timings_ms"][phase] = std::chrono::duration<double, std::milli>(d).count();
  }

  // Writes the file into `dir` and records its digest.
  void emit(const fs::path& dir, const std::string& name, std::string_view bytes) {
    detail::write_file((dir / name).string(), bytes);
    doc_["artifacts"].push_back({{"file", name}, {"sha256", sha256_hex(bytes)}});
  }

  void write(const fs::path& dir) const {
    detail::write_file((dir / "manifest.json").string(), doc_.dump(2) + "\n");
  }

 private:
  json doc_;
};

inline json config_json(const TrainConfig& c) {
  return {{"bits", c.bits},       {"batch_size", c.batch_size}, {"outer_iters", c.outer_iters},
          {"inner_iters", c.inner_iters}, {"lr", c.lr},       {"alpha1", c.alpha1},
          {"alpha2", c.alpha2},   {"beta1", c.beta1},           {"beta2", c.beta2},
          {"weight_decay", c.weight_decay}, {"hidden", c.hidden},
          {"mode", to_string(c.mode)}, {"variant", to_string(c.variant)}, {"seed", c.seed}};
}

inline std::size_t worker_threads() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DSAH_THREADS")) {
    try {
      const auto v = std::stoul(env);
      if (v > 0) n = v;
    } catch (const std::exception&) {
    }
  }
  return n;
}

// Options shared by train and ablate.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> bits;
  std::optional<std::string> mode;
  std::optional<std::string> variant;

  void attach(CLI::App& app, bool with_mode_variant) {
    app.add_option("--config", config_path, "key = value configuration file");
    app.add_option("--seed", seed, "random seed (overrides config)");
    app.add_option("--bits", bits, "code length c (overrides config)");
    if (with_mode_variant) {
      app.add_option("--mode", mode, "dsah1 (two encoders) or dsah2 (shared weights)");
      app.add_option("--variant", variant, "full, A, B, C or D");
    }
  }

  TrainConfig resolve() const {
    TrainConfig cfg;
    if (!config_path.empty()) cfg = parse_config(detail::read_file(config_path));
    if (seed) cfg.seed = *seed;
    if (bits) cfg.bits = *bits;
    if (mode) cfg.mode = parse_mode(*mode);
    if (variant) cfg.variant = parse_variant(*variant);
    cfg.validate();
    return cfg;
  }
};

struct RunOutputs {
  TrainState state;
  std::chrono::steady_clock::duration elapsed{};
};

inline RunOutputs timed_train(const Dataset& ds, const TrainConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  auto st = train(ds, cfg);
  return {std::move(st), std::chrono::steady_clock::now() - t0};
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct TrainArgs {
  ConfigFlags flags;
  std::string features, labels, out;
  bool packed = false;
};

inline int cmd_train(const TrainArgs& a, std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig cfg = a.flags.resolve();
  const Dataset ds = load_dataset(a.features, a.labels);
  const auto t_load = std::chrono::steady_clock::now() - t0;
  cfg.validate_for(ds);
  auto run = timed_train(ds, cfg);
  const auto& st = run.state;

  fs::create_directories(a.out);
  Manifest m("train");
  m.set("seed", cfg.seed);
  m.set("config", config_json(cfg));
  m.input("features", a.features);
  m.input("labels", a.labels);
  m.emit(a.out, "config.txt", config_to_text(cfg));
  m.emit(a.out, "theta1.ckpt", checkpoint_bytes(st.theta1));
  m.emit(a.out, "theta2.ckpt", checkpoint_bytes(st.theta2()));
  m.emit(a.out, "codes.txt", codes_to_text(st.H));
  if (a.packed) m.emit(a.out, "codes.bin", codes_to_packed(PackedCodes::pack(st.H)));
  m.emit(a.out, "history.csv", history_to_csv(st.history));
  m.timing("load", t_load);
  m.timing("train", run.elapsed);
  m.write(a.out);
  const auto& last = st.history.back();
  log << "trained " << to_string(cfg.mode) << "/" << to_string(cfg.variant) << " on n=" << ds.n()
      << " c=" << cfg.bits << "; final J=" << detail::format_double(last.j_total) << "\n";
  return kOk;
}

struct EncodeArgs {
  std::string checkpoint, features, out;
  bool packed = false;
};

inline int cmd_encode(const EncodeArgs& a, std::ostream& log) {
  const EncoderParams params = load_checkpoint(a.checkpoint);
  const Matrix x = parse_features(detail::read_file(a.features), a.features);
  if (x.cols() != params.input_dim()) {
    throw DimensionError("encode: features have " + std::to_string(x.cols()) +
                         " columns, checkpoint expects " + std::to_string(params.input_dim()));
  }
  const Matrix codes = encode_binary(params, x);
  if (const auto parent = fs::path(a.out).parent_path(); !parent.empty()) fs::create_directories(parent);
  detail::write_file(a.out, a.packed ? codes_to_packed(PackedCodes::pack(codes)) : codes_to_text(codes));
  log << "encoded " << codes.rows() << " samples to " << codes.cols() << " bits\n";
  return kOk;
}

struct EvalArgs {
  // direct form
  std::string db_codes, db_labels, query_codes, query_labels;
  // protocol form
  std::string run, features, labels, query_features;
  std::string mode = "asymmetric";
  std::optional<std::size_t> topk;
  std::string out;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& log) {
  Manifest m("eval");
  CodeDatabase db;
  CodeDatabase queries;
  auto load_label_rows = [](const std::string& path) {
    return parse_labels(detail::read_file(path), path);
  };
  if (!a.run.empty()) {
    if (a.labels.empty() || a.query_features.empty() || a.query_labels.empty()) {
      throw CLI::ValidationError("eval --run needs --labels, --query-features and --query-labels");
    }
    if (a.mode != "asymmetric" && a.mode != "symmetric") {
      throw CLI::ValidationError("--mode must be asymmetric or symmetric");
    }
    const fs::path run(a.run);
    const auto ckpt = (run / "theta1.ckpt").string();
    const EncoderParams params = load_checkpoint(ckpt);
    m.input("checkpoint", ckpt);
    m.set("mode", a.mode);
    PackedCodes db_codes;
    if (a.mode == "asymmetric") {
      const auto codes_path = (run / "codes.txt").string();
      db_codes = load_codes(codes_path);
      m.input("db_codes", codes_path);
    } else {
      if (a.features.empty()) throw CLI::ValidationError("symmetric mode needs --features");
      db_codes = PackedCodes::pack(encode_binary(params, parse_features(detail::read_file(a.features), a.features)));
      m.input("features", a.features);
    }
    db = CodeDatabase(std::move(db_codes), load_label_rows(a.labels));
    const Matrix qx = parse_features(detail::read_file(a.query_features), a.query_features);
    if (qx.cols() != params.input_dim()) {
      throw DimensionError("eval: query features have " + std::to_string(qx.cols()) +
                           " columns, checkpoint expects " + std::to_string(params.input_dim()));
    }
    queries = CodeDatabase(encode_binary(params, qx), load_label_rows(a.query_labels));
    m.input("labels", a.labels);
    m.input("query_features", a.query_features);
    m.input("query_labels", a.query_labels);
  } else {
    if (a.db_codes.empty() || a.db_labels.empty() || a.query_codes.empty() || a.query_labels.empty()) {
      throw CLI::ValidationError(
          "eval needs either --run or all of --db-codes --db-labels --query-codes --query-labels");
    }
    db = CodeDatabase(load_codes(a.db_codes), load_label_rows(a.db_labels));
    queries = CodeDatabase(load_codes(a.query_codes), load_label_rows(a.query_labels));
    m.input("db_codes", a.db_codes);
    m.input("db_labels", a.db_labels);
    m.input("query_codes", a.query_codes);
    m.input("query_labels", a.query_labels);
  }
  const auto t0 = std::chrono::steady_clock::now();
  const MetricsReport rep = evaluate(db, queries, a.topk);
  m.timing("evaluate", std::chrono::steady_clock::now() - t0);
  if (a.topk) m.set("topk", *a.topk);
  fs::create_directories(a.out);
  m.emit(a.out, "metrics.csv", metrics_to_csv(rep));
  m.emit(a.out, "pr_curve.csv", pr_curve_to_csv(rep));
  m.write(a.out);
  log << "map=" << detail::format_double(rep.map)
      << " precision_r2=" << detail::format_double(rep.precision_r2)
      << " recall_r2=" << detail::format_double(rep.recall_r2)
      << " f_measure_r2=" << detail::format_double(rep.f_measure_r2) << "\n";
  return kOk;
}

struct AblationCell {
  Mode mode;
  Variant variant;
  MetricsReport metrics;
  TrainState state;
  double max_abs_column_sum = 0.0;
};

// Runs every (mode, variant) cell on the same seed. Cells are independent,
// so the worker count does not affect any result.
inline std::vector<AblationCell> run_ablation(const Dataset& train_set, const Dataset& query_set,
                                              const TrainConfig& base,
                                              std::optional<std::size_t> topk,
                                              std::size_t threads) {
  std::vector<AblationCell> cells;
  for (Mode mode : {Mode::dsah1, Mode::dsah2})
    for (Variant v : {Variant::full, Variant::A, Variant::B, Variant::C, Variant::D})
      cells.push_back({mode, v, {}, {}, 0.0});

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        TrainConfig cfg = base;
        cfg.mode = cells[i].mode;
        cfg.variant = cells[i].variant;
        cells[i].state = train(train_set, cfg);
        cells[i].metrics = evaluate_asymmetric(cells[i].state, train_set, query_set, topk);
        for (double s : column_sums(cells[i].state.H))
          cells[i].max_abs_column_sum = std::max(cells[i].max_abs_column_sum, std::abs(s));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const std::size_t n = std::min(threads, cells.size());
    for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
  }
  if (first_error) std::rethrow_exception(first_error);
  return cells;
}

inline std::string ablation_to_csv(const std::vector<AblationCell>& cells) {
  std::string out =
      "mode,variant,map,precision_r2,recall_r2,f_measure_r2,r_intra,r_inter,p,q,j_total,"
      "max_abs_column_sum\n";
  for (const auto& c : cells) {
    const auto& h = c.state.history.back();
    out += std::string(to_string(c.mode)) + "," + std::string(to_string(c.variant));
    for (double v : {c.metrics.map, c.metrics.precision_r2, c.metrics.recall_r2,
                     c.metrics.f_measure_r2, h.r_intra, h.r_inter, h.p, h.q, h.j_total,
                     c.max_abs_column_sum}) {
      out += "," + detail::format_double(v);
    }
    out.push_back('\n');
  }
  return out;
}

struct AblateArgs {
  ConfigFlags flags;
  std::string features, labels, query_features, query_labels, out;
  double query_fraction = 0.2;
  std::optional<std::size_t> topk;
};

inline int cmd_ablate(const AblateArgs& a, std::ostream& log) {
  const TrainConfig base = a.flags.resolve();
  Manifest m("ablate");
  Dataset train_set = load_dataset(a.features, a.labels);
  m.input("features", a.features);
  m.input("labels", a.labels);
  Dataset query_set;
  if (!a.query_features.empty()) {
    if (a.query_labels.empty()) throw CLI::ValidationError("--query-features needs --query-labels");
    query_set = load_dataset(a.query_features, a.query_labels, train_set.k());
    m.input("query_features", a.query_features);
    m.input("query_labels", a.query_labels);
  } else {
    SeededRng rng(base.seed);
    std::tie(train_set, query_set) = split_stratified(train_set, a.query_fraction, rng);
    m.set("query_fraction", a.query_fraction);
  }
  for (Variant v : {Variant::full, Variant::D}) {
    TrainConfig probe = base;
    probe.variant = v;
    probe.validate_for(train_set);
  }
  const auto threads = worker_threads();
  const auto t0 = std::chrono::steady_clock::now();
  const auto cells = run_ablation(train_set, query_set, base, a.topk, threads);
  m.timing("ablation", std::chrono::steady_clock::now() - t0);

  fs::create_directories(a.out);
  m.set("seed", base.seed);
  m.set("config", config_json(base));
  m.emit(a.out, "ablation.csv", ablation_to_csv(cells));
  for (const auto& c : cells) {
    m.emit(a.out,
           "history_" + std::string(to_string(c.mode)) + "_" + std::string(to_string(c.variant)) + ".csv",
           history_to_csv(c.state.history));
  }
  m.write(a.out);
  log << "ablation: " << cells.size() << " cells written to " << a.out << "\n";
  return kOk;
}

struct SynthArgs {
  std::size_t classes = 4;
  std::size_t per_class = 125;
  std::size_t dim = 64;
  double spread = 0.1;
  double query_fraction = 0.2;
  std::uint64_t seed = 0;
  std::string out;
};

inline int cmd_synth(const SynthArgs& a, std::ostream& log) {
  SeededRng rng(a.seed);
  const Dataset all = make_synthetic_clusters(a.classes, a.per_class, a.dim, a.spread, rng);
  const auto [train_set, query_set] = split_stratified(all, a.query_fraction, rng);
  fs::create_directories(a.out);
  Manifest m("synth");
  m.set("seed", a.seed);
  m.set("parameters", {{"classes", a.classes}, {"per_class", a.per_class}, {"dim", a.dim},
                       {"spread", a.spread}, {"query_fraction", a.query_fraction}});
  m.emit(a.out, "train_features.csv", features_to_csv(train_set.features));
  m.emit(a.out, "train_labels.csv", labels_to_csv(train_set.labels));
  m.emit(a.out, "query_features.csv", features_to_csv(query_set.features));
  m.emit(a.out, "query_labels.csv", labels_to_csv(query_set.labels));
  m.write(a.out);
  log << "synthetic: " << train_set.n() << " train / " << query_set.n() << " query samples\n";
  return kOk;
}

// ---------------------------------------------------------------------------

inline int run(std::vector<std::string> argv, std::ostream& log = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"learned binary hashing with dual semantic labels", "dsah"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train encoders and database codes");
  train_args.flags.attach(*train_cmd, true);
  train_cmd->add_option("--features", train_args.features)->required();
  train_cmd->add_option("--labels", train_args.labels)->required();
  train_cmd->add_option("--out", train_args.out, "output directory")->required();
  train_cmd->add_flag("--packed", train_args.packed, "also write bit-packed codes.bin");

  EncodeArgs encode_args;
  auto* encode_cmd = app.add_subcommand("encode", "encode samples with a trained encoder");
  encode_cmd->add_option("--checkpoint", encode_args.checkpoint)->required();
  encode_cmd->add_option("--features", encode_args.features)->required();
  encode_cmd->add_option("--out", encode_args.out, "output codes file")->required();
  encode_cmd->add_flag("--packed", encode_args.packed, "write bit-packed codes");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "retrieval metrics");
  eval_cmd->add_option("--db-codes", eval_args.db_codes);
  eval_cmd->add_option("--db-labels", eval_args.db_labels);
  eval_cmd->add_option("--query-codes", eval_args.query_codes);
  eval_cmd->add_option("--run", eval_args.run, "training output directory");
  eval_cmd->add_option("--features", eval_args.features, "training features (symmetric mode)");
  eval_cmd->add_option("--labels", eval_args.labels, "training labels");
  eval_cmd->add_option("--query-features", eval_args.query_features);
  eval_cmd->add_option("--query-labels", eval_args.query_labels);
  eval_cmd->add_option("--mode", eval_args.mode, "asymmetric or symmetric")
      ->check(CLI::IsMember({"asymmetric", "symmetric"}));
  eval_cmd->add_option("--topk", eval_args.topk, "truncate MAP to the top-K results");
  eval_cmd->add_option("--out", eval_args.out, "output directory")->required();

  AblateArgs ablate_args;
  auto* ablate_cmd = app.add_subcommand("ablate", "variants full/A-D for both modes");
  ablate_args.flags.attach(*ablate_cmd, false);
  ablate_cmd->add_option("--features", ablate_args.features)->required();
  ablate_cmd->add_option("--labels", ablate_args.labels)->required();
  ablate_cmd->add_option("--query-features", ablate_args.query_features);
  ablate_cmd->add_option("--query-labels", ablate_args.query_labels);
  ablate_cmd->add_option("--query-fraction", ablate_args.query_fraction,
                         "held-out fraction when no query files are given");
  ablate_cmd->add_option("--topk", ablate_args.topk);
  ablate_cmd->add_option("--out", ablate_args.out, "output directory")->required();

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic Gaussian-cluster benchmark");
  synth_cmd->add_option("--classes", synth_args.classes)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--per-class", synth_args.per_class)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--dim", synth_args.dim)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--spread", synth_args.spread)->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--query-fraction", synth_args.query_fraction)->check(CLI::Range(0.0, 0.99));
  synth_cmd->add_option("--seed", synth_args.seed);
  synth_cmd->add_option("--out", synth_args.out, "output directory")->required();

  try {
    std::reverse(argv.begin(), argv.end());
    app.parse(std::move(argv));
  } catch (const CLI::CallForHelp& e) {
    log << app.help();
    return kOk;
  } catch (const CLI::CallForVersion& e) {
    log << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "dsah: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_args, log);
    if (*encode_cmd) return cmd_encode(encode_args, log);
    if (*eval_cmd) return cmd_eval(eval_args, log);
    if (*ablate_cmd) return cmd_ablate(ablate_args, log);
    if (*synth_cmd) return cmd_synth(synth_args, log);
  } catch (const CLI::ValidationError& e) {
    err << "dsah: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    err << "dsah: numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const DataError& e) {
    err << "dsah: data error: " << e.what() << "\n";
    return kData;
  } catch (const DimensionError& e) {
    err << "dsah: data error: " << e.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    err << "dsah: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "dsah: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace dsah::cli
