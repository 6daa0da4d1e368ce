#include <gtest/gtest.h>

#include <sstream>

#include "dsah_cli.hpp"
#include "test_support.hpp"

using namespace dsah;
using dsah::testing::TempDir;

namespace {

struct Invocation {
  int code;
  std::string out;
  std::string err;
};

Invocation dsah_run(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

std::string read(const std::string& path) { return detail::read_file(path); }

constexpr const char* kSmallConfig =
    "# tiny run\n"
    "bits = 8\n"
    "batch_size = 16\n"
    "outer_iters = 3\n"
    "inner_iters = 2\n"
    "lr = 1e-5\n"
    "hidden = 16\n";

// synth + config in `dir`; returns the config path.
std::string prepare(const TempDir& dir) {
  const auto r = dsah_run({"synth", "--classes", "4", "--per-class", "20", "--dim", "8", "--seed", "5",
                           "--out", dir.sub("data")});
  EXPECT_EQ(r.code, cli::kOk) << r.err;
  return dir.file("run.cfg", kSmallConfig);
}

std::vector<std::string> train_args(const TempDir& dir, const std::string& cfg, const std::string& out) {
  return {"train", "--config", cfg, "--features", dir.sub("data/train_features.csv"),
          "--labels", dir.sub("data/train_labels.csv"), "--out", dir.sub(out), "--seed", "9"};
}

}  // namespace

TEST(CodesFormat, TextAndPackedRoundTrip) {
  const Matrix codes{{1, -1, 1, 1, -1, -1, 1, -1, 1, 1}, {-1, -1, -1, -1, -1, -1, -1, -1, -1, 1}};
  const auto text = codes_to_text(codes);
  EXPECT_EQ(text.substr(0, text.find('\n')), "1 -1 1 1 -1 -1 1 -1 1 1");
  EXPECT_EQ(parse_codes(text).unpack(), codes);
  const auto packed = codes_to_packed(PackedCodes::pack(codes));
  EXPECT_EQ(packed.size(), 16u + 2 * 2);
  EXPECT_EQ(parse_codes(packed).unpack(), codes);
  EXPECT_EQ(parse_codes("+1 -1\n").unpack(), (Matrix{{1, -1}}));
}

TEST(CodesFormat, Rejections) {
  EXPECT_THROW(parse_codes("1 0\n"), DataError);
  EXPECT_THROW(parse_codes("1 -1\n1\n"), DataError);
  auto packed = codes_to_packed(PackedCodes::pack(Matrix{{1, 1, 1}}));
  EXPECT_THROW(parse_codes(packed.substr(0, packed.size() - 1)), DataError);
  packed.back() = static_cast<char>(0xFF);
  EXPECT_THROW(parse_codes(packed), DataError);
  EXPECT_THROW(parse_codes("DSAHCODE\x01"), DataError);
}

TEST(ConfigFormat, ParseOverridesAndRoundTrip) {
  const auto cfg = parse_config("bits = 24  # comment\nhidden = 64,32\nmode = dsah2\nvariant = B\nlr=0.5\n");
  EXPECT_EQ(cfg.bits, 24u);
  EXPECT_EQ(cfg.hidden, (std::vector<std::size_t>{64, 32}));
  EXPECT_EQ(cfg.mode, Mode::dsah2);
  EXPECT_EQ(cfg.variant, Variant::B);
  EXPECT_EQ(cfg.lr, 0.5);
  EXPECT_EQ(cfg.batch_size, TrainConfig{}.batch_size);
  EXPECT_TRUE(parse_config("hidden =\n").hidden.empty());

  const auto again = parse_config(config_to_text(cfg));
  EXPECT_EQ(config_to_text(again), config_to_text(cfg));

  EXPECT_THROW(parse_config("bogus = 1\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("bits\n"), std::invalid_argument);
  EXPECT_THROW(parse_config("bits = many\n"), std::exception);
  EXPECT_THROW(parse_config("mode = dsah9\n"), std::invalid_argument);
}

TEST(CsvOutputs, Headers) {
  MetricsReport rep;
  rep.map = 0.5;
  rep.pr_curve = {{0.25, 1.0}};
  EXPECT_EQ(metrics_to_csv(rep), "metric,value\nmap,0.5\nprecision_r2,0\nrecall_r2,0\nf_measure_r2,0\n");
  EXPECT_EQ(pr_curve_to_csv(rep), "recall,precision\n0.25,1\n");
  LossBreakdown h;
  h.j_total = -1.5;
  EXPECT_EQ(history_to_csv({h}), "iter,r_intra,r_inter,p,q,j_total\n1,0,0,0,0,-1.5\n");
}

TEST(Sha256, KnownVector) {
  EXPECT_EQ(cli::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(dsah_run({}).code, cli::kUsage);
  EXPECT_EQ(dsah_run({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(dsah_run({"train", "--features", "x.csv"}).code, cli::kUsage);
  const auto v = dsah_run({"--version"});
  EXPECT_EQ(v.code, cli::kOk);
  EXPECT_EQ(v.out, std::string(cli::kVersion) + "\n");
}

TEST(Cli, MissingLabelsFailsWithoutOutput) {
  TempDir dir;
  const auto cfg = prepare(dir);
  auto args = train_args(dir, cfg, "run");
  args[6] = dir.sub("data/absent_labels.csv");
  const auto r = dsah_run(args);
  EXPECT_EQ(r.code, cli::kData);
  EXPECT_NE(r.err.find("absent_labels.csv"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(dir.sub("run")));
}

TEST(Cli, BadConfigIsUsageError) {
  TempDir dir;
  prepare(dir);
  const auto bad = dir.file("bad.cfg", "bits = 8\nlr = -1\n");
  const auto r = dsah_run(train_args(dir, bad, "run"));
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_FALSE(std::filesystem::exists(dir.sub("run")));
}

TEST(Cli, TrainEncodeEvalPipeline) {
  TempDir dir;
  const auto cfg = prepare(dir);
  ASSERT_EQ(dsah_run(train_args(dir, cfg, "run")).code, cli::kOk);
  for (const char* f : {"config.txt", "theta1.ckpt", "theta2.ckpt", "codes.txt", "history.csv", "manifest.json"})
    EXPECT_TRUE(std::filesystem::exists(dir.sub(std::string("run/") + f))) << f;

  const auto manifest = nlohmann::json::parse(read(dir.sub("run/manifest.json")));
  EXPECT_EQ(manifest["seed"], 9);
  EXPECT_EQ(manifest["config"]["bits"], 8);
  for (const auto& a : manifest["artifacts"])
    EXPECT_EQ(a["sha256"], cli::file_digest(dir.sub("run/" + a["file"].get<std::string>())));
  for (const auto& in : manifest["inputs"])
    EXPECT_EQ(in["sha256"], cli::file_digest(in["path"].get<std::string>()));

  const auto history = read(dir.sub("run/history.csv"));
  EXPECT_EQ(std::count(history.begin(), history.end(), '\n'), 4);

  const auto enc = dsah_run({"encode", "--checkpoint", dir.sub("run/theta1.ckpt"), "--features",
                             dir.sub("data/query_features.csv"), "--out", dir.sub("q/codes.txt")});
  ASSERT_EQ(enc.code, cli::kOk) << enc.err;
  const auto qcodes = load_codes(dir.sub("q/codes.txt"));
  EXPECT_EQ(qcodes.rows(), 16u);
  EXPECT_EQ(qcodes.bits(), 8u);
  ASSERT_EQ(dsah_run({"encode", "--checkpoint", dir.sub("run/theta1.ckpt"), "--features",
                      dir.sub("data/query_features.csv"), "--out", dir.sub("q/codes.bin"), "--packed"})
                .code,
            cli::kOk);
  EXPECT_EQ(load_codes(dir.sub("q/codes.bin")), qcodes);

  const auto direct = dsah_run({"eval", "--db-codes", dir.sub("run/codes.txt"), "--db-labels",
                                dir.sub("data/train_labels.csv"), "--query-codes", dir.sub("q/codes.txt"),
                                "--query-labels", dir.sub("data/query_labels.csv"), "--out", dir.sub("e1")});
  ASSERT_EQ(direct.code, cli::kOk) << direct.err;
  const auto protocol = dsah_run({"eval", "--run", dir.sub("run"), "--labels", dir.sub("data/train_labels.csv"),
                                  "--query-features", dir.sub("data/query_features.csv"), "--query-labels",
                                  dir.sub("data/query_labels.csv"), "--out", dir.sub("e2")});
  ASSERT_EQ(protocol.code, cli::kOk) << protocol.err;
  EXPECT_EQ(read(dir.sub("e1/metrics.csv")), read(dir.sub("e2/metrics.csv")));
  EXPECT_TRUE(std::filesystem::exists(dir.sub("e2/pr_curve.csv")));

  const auto sym = dsah_run({"eval", "--run", dir.sub("run"), "--mode", "symmetric", "--features",
                             dir.sub("data/train_features.csv"), "--labels", dir.sub("data/train_labels.csv"),
                             "--query-features", dir.sub("data/query_features.csv"), "--query-labels",
                             dir.sub("data/query_labels.csv"), "--out", dir.sub("e3")});
  EXPECT_EQ(sym.code, cli::kOk) << sym.err;
  EXPECT_EQ(dsah_run({"eval", "--run", dir.sub("run"), "--out", dir.sub("e4")}).code, cli::kUsage);
}

TEST(Cli, EncodeRejectsWrongWidth) {
  TempDir dir;
  const auto cfg = prepare(dir);
  ASSERT_EQ(dsah_run(train_args(dir, cfg, "run")).code, cli::kOk);
  const auto wide = dir.file("wide.csv", "1,2,3\n");
  const auto r = dsah_run({"encode", "--checkpoint", dir.sub("run/theta1.ckpt"), "--features", wide, "--out",
                           dir.sub("x.txt")});
  EXPECT_EQ(r.code, cli::kData);
}

TEST(Cli, SameSeedRerunsAreByteIdentical) {
  TempDir dir;
  const auto cfg = prepare(dir);
  ASSERT_EQ(dsah_run(train_args(dir, cfg, "a")).code, cli::kOk);
  ASSERT_EQ(dsah_run(train_args(dir, cfg, "b")).code, cli::kOk);
  for (const char* f : {"codes.txt", "theta1.ckpt", "theta2.ckpt", "history.csv", "config.txt"})
    EXPECT_EQ(read(dir.sub(std::string("a/") + f)), read(dir.sub(std::string("b/") + f))) << f;

  auto other = train_args(dir, cfg, "c");
  other.back() = "10";
  ASSERT_EQ(dsah_run(other).code, cli::kOk);
  EXPECT_NE(read(dir.sub("a/codes.txt")), read(dir.sub("c/codes.txt")));
}

TEST(Cli, AblateWritesAllCells) {
  TempDir dir;
  const auto cfg = prepare(dir);
  const auto r = dsah_run({"ablate", "--config", cfg, "--features", dir.sub("data/train_features.csv"),
                           "--labels", dir.sub("data/train_labels.csv"), "--query-features",
                           dir.sub("data/query_features.csv"), "--query-labels",
                           dir.sub("data/query_labels.csv"), "--out", dir.sub("abl")});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  const auto csv = read(dir.sub("abl/ablation.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 11);
  EXPECT_EQ(csv.rfind("mode,variant,map,", 0), 0u);
  EXPECT_TRUE(std::filesystem::exists(dir.sub("abl/history_dsah2_D.csv")));
}
