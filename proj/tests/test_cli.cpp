#include "helpers.hpp"

#include "nbids/cli.hpp"
#include "nbids/data.hpp"
#include "nbids/run_config.hpp"
#include "nbids/text.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <fstream>
#include <sstream>

using namespace nbids;
using testing_util::TempDir;

namespace {

int run(std::vector<std::string> args) {
  testing::internal::CaptureStdout();
  const int code = run_cli(args);
  testing::internal::GetCapturedStdout();
  return code;
}

/// Exit code plus whatever the command wrote to standard error.
std::pair<int, std::string> run_err(std::vector<std::string> args) {
  testing::internal::CaptureStderr();
  const int code = run(std::move(args));
  return {code, testing::internal::GetCapturedStderr()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

/// A model small enough for quick end-to-end runs on 115 features.
std::filesystem::path write_small_config(const TempDir& dir, std::size_t n_classes = 10) {
  const auto path = dir / ("small" + std::to_string(n_classes) + ".cfg");
  std::ofstream(path) << "# quick smoke model\n"
                      << "conv_filters = 6,6,6\nconv_kernels = 5,3,3\nlstm_hidden = 4\nattention_dk = 6\n"
                      << "dense_units = 8,6\nn_classes = " << n_classes << "\nepochs = 3\nbatch_size = 16\n";
  return path;
}

struct Pipeline {
  TempDir dir;
  std::filesystem::path cfg;

  explicit Pipeline(const std::string& name) : dir(name) {
    testing_util::write_fake_device(dir / "data", "Danmini_Doorbell", 8, true, 4);
    testing_util::write_fake_device(dir / "data", "Ecobee_Thermostat", 8, true, 4);
    cfg = write_small_config(dir);
  }

  int prepare() {
    return run({"prepare", "--data-dir", (dir / "data").string(), "--per-class", "12", "--seed", "5", "--out",
                (dir / "prep").string()});
  }
  int train(const std::string& out = "run") {
    return run({"train", "--dataset", (dir / "prep" / kDatasetFile).string(), "--config", cfg.string(), "--out",
                (dir / out).string()});
  }
  int eval(const std::string& run_dir = "run", const std::string& out = "eval") {
    return run({"eval", "--dataset", (dir / "prep" / kDatasetFile).string(), "--checkpoint",
                (dir / run_dir / kCheckpointFile).string(), "--out", (dir / out).string()});
  }
};

} // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_err({}).first, kExitUsage);
  EXPECT_EQ(run_err({"frobnicate"}).first, kExitUsage);
  EXPECT_EQ(run_err({"train", "--out", "x"}).first, kExitUsage);
  EXPECT_EQ(run_err({"synth", "--out", "x", "--set", "no_equals_sign"}).first, kExitUsage);
  EXPECT_EQ(run_err({"synth", "--out", "x", "--set", "unknown_key=1"}).first, kExitUsage);
}

TEST(Cli, MissingDataDirectoryNamesPath) {
  TempDir dir("cli_missing");
  const auto missing = (dir / "nowhere").string();
  const auto [code, err] = run_err({"prepare", "--data-dir", missing, "--out", (dir / "o").string()});
  EXPECT_EQ(code, kExitUsage);
  EXPECT_NE(err.find(missing), std::string::npos) << err;
}

TEST(Cli, PrepareTrainEvalFlow) {
  Pipeline p("cli_flow");
  ASSERT_EQ(p.prepare(), kExitOk);
  const auto split = load_dataset(p.dir / "prep" / kDatasetFile);
  EXPECT_EQ(split.train_y.size() + split.test_y.size(), 120u);
  EXPECT_EQ(split.test_y.size(), 20u);
  EXPECT_TRUE(std::filesystem::exists(p.dir / "prep" / kRunConfigFile));

  ASSERT_EQ(p.train(), kExitOk);
  EXPECT_TRUE(std::filesystem::exists(p.dir / "run" / kCheckpointFile));
  const auto curves = lines(slurp(p.dir / "run" / kCurvesFile));
  EXPECT_GE(curves.size(), 2u);
  EXPECT_LE(curves.size(), 4u); // header + at most 3 epochs
  const auto resolved = read_key_value_file(p.dir / "run" / kRunConfigFile);
  EXPECT_EQ(resolved.at("epochs"), "3");
  EXPECT_EQ(resolved.at("lstm_hidden"), "4");

  ASSERT_EQ(p.eval(), kExitOk);
  const auto csv = lines(slurp(p.dir / "eval" / "report.csv"));
  EXPECT_EQ(csv.size(), 14u); // header + 10 classes + accuracy, macro and weighted rows
  const auto j = nlohmann::json::parse(slurp(p.dir / "eval" / "report.json"));
  for (const auto& row : j["classes"])
    for (const char* key : {"precision", "recall", "f1", "accuracy"}) {
      const double v = row[key].get<double>();
      EXPECT_TRUE(v >= 0.0 && v <= 1.0);
    }
  EXPECT_TRUE(std::filesystem::exists(p.dir / "eval" / "report.txt"));
  EXPECT_TRUE(std::filesystem::exists(p.dir / "eval" / kRocFile));
}

TEST(Cli, TrainingTwiceGivesIdenticalCheckpoints) {
  Pipeline p("cli_repeat");
  ASSERT_EQ(p.prepare(), kExitOk);
  ASSERT_EQ(p.train("a"), kExitOk);
  ASSERT_EQ(p.train("b"), kExitOk);
  EXPECT_EQ(slurp(p.dir / "a" / kCheckpointFile), slurp(p.dir / "b" / kCheckpointFile));
  EXPECT_EQ(slurp(p.dir / "a" / kCurvesFile), slurp(p.dir / "b" / kCurvesFile));
}

TEST(Cli, FlagsOverrideConfigFile) {
  Pipeline p("cli_precedence");
  ASSERT_EQ(p.prepare(), kExitOk);
  ASSERT_EQ(run({"train", "--dataset", (p.dir / "prep" / kDatasetFile).string(), "--config", p.cfg.string(),
                 "--epochs", "1", "--out", (p.dir / "run").string()}),
            kExitOk);
  EXPECT_EQ(lines(slurp(p.dir / "run" / kCurvesFile)).size(), 2u);
  EXPECT_EQ(read_key_value_file(p.dir / "run" / kRunConfigFile).at("epochs"), "1");
}

TEST(Cli, ConfigAndVocabularyMismatches) {
  Pipeline p("cli_mismatch");
  ASSERT_EQ(p.prepare(), kExitOk);
  const auto three = write_small_config(p.dir, 3);
  const auto [code, err] = run_err({"train", "--dataset", (p.dir / "prep" / kDatasetFile).string(), "--config",
                                    three.string(), "--out", (p.dir / "bad").string()});
  EXPECT_EQ(code, kExitUsage);
  EXPECT_NE(err.find("n_classes"), std::string::npos) << err;

  ASSERT_EQ(run({"synth", "--per-class", "10", "--config", p.cfg.string(), "--out", (p.dir / "blobs").string()}),
            kExitOk);
  ASSERT_EQ(p.train(), kExitOk);
  const auto [ecode, eerr] = run_err({"eval", "--dataset", (p.dir / "blobs" / kDatasetFile).string(), "--checkpoint",
                                      (p.dir / "run" / kCheckpointFile).string(), "--out", (p.dir / "e").string()});
  EXPECT_EQ(ecode, kExitUsage);
  EXPECT_NE(eerr.find("class_0"), std::string::npos) << eerr;
  EXPECT_NE(eerr.find("mirai_udpplain"), std::string::npos) << eerr;
}

TEST(Cli, CorruptArtifactsExitThree) {
  Pipeline p("cli_corrupt");
  ASSERT_EQ(p.prepare(), kExitOk);
  std::ofstream(p.dir / "junk.nbck") << "definitely not a checkpoint";
  EXPECT_EQ(run_err({"eval", "--dataset", (p.dir / "prep" / kDatasetFile).string(), "--checkpoint",
                     (p.dir / "junk.nbck").string(), "--out", (p.dir / "e").string()})
                .first,
            kExitData);
}

TEST(Cli, InferWritesProbabilitiesAndHandlesEdgeCases) {
  Pipeline p("cli_infer");
  ASSERT_EQ(p.prepare(), kExitOk);
  ASSERT_EQ(p.train(), kExitOk);
  const auto ckpt = (p.dir / "run" / kCheckpointFile).string();

  Rng rng(6, "cli.infer");
  testing_util::write_traffic_csv(p.dir / "in.csv", 5, 3, rng);
  ASSERT_EQ(run({"infer", "--checkpoint", ckpt, "--input-csv", (p.dir / "in.csv").string(), "--output-csv",
                 (p.dir / "out.csv").string()}),
            kExitOk);
  const auto out = lines(slurp(p.dir / "out.csv"));
  ASSERT_EQ(out.size(), 6u);
  EXPECT_EQ(out[0].rfind("row_id,predicted_class,p_0,", 0), 0u);
  const auto names = LabelVocab::nbaiot();
  for (std::size_t r = 1; r < out.size(); ++r) {
    const auto cells = text::split(out[r], ',');
    ASSERT_EQ(cells.size(), 13u);
    EXPECT_TRUE(names.id(std::string(cells[1])).has_value());
    double sum = 0;
    for (std::size_t c = 2; c < 12; ++c) sum += *text::parse_double(cells[c]);
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }

  std::ofstream(p.dir / "empty.csv") << testing_util::csv_header(115) << "\n";
  ASSERT_EQ(run({"infer", "--checkpoint", ckpt, "--input-csv", (p.dir / "empty.csv").string(), "--output-csv",
                 (p.dir / "empty_out.csv").string()}),
            kExitOk);
  EXPECT_EQ(lines(slurp(p.dir / "empty_out.csv")).size(), 1u);

  testing_util::write_traffic_csv(p.dir / "narrow.csv", 2, 0, rng, 114);
  EXPECT_EQ(run_err({"infer", "--checkpoint", ckpt, "--input-csv", (p.dir / "narrow.csv").string(), "--output-csv",
                     (p.dir / "n_out.csv").string()})
                .first,
            kExitData);
}

TEST(Cli, InferRecoversClassesOfTrainingRows) {
  TempDir dir("cli_self");
  const auto cfg = write_small_config(dir, 3);
  ASSERT_EQ(run({"synth", "--per-class", "40", "--seed", "8", "--separation", "8", "--config", cfg.string(), "--out",
                 (dir / "blobs").string()}),
            kExitOk);
  ASSERT_EQ(run({"train", "--dataset", (dir / "blobs" / kDatasetFile).string(), "--config", cfg.string(), "--set",
                 "epochs=40", "--set", "early_stop_patience=40", "--set", "learning_rate=0.01", "--set", "seed=8",
                 "--out", (dir / "run").string()}),
            kExitOk);
  // The same rows the synth command drew, before scaling.
  const auto raw = make_gaussian_blobs(3, 40, 115, 8.0, 8);
  {
    std::ofstream out(dir / "rows.csv");
    out << testing_util::csv_header(115) << "\n";
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const auto row = raw.features.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << text::format_double(row[j]);
      out << "\n";
    }
  }
  ASSERT_EQ(run({"infer", "--checkpoint", (dir / "run" / kCheckpointFile).string(), "--input-csv",
                 (dir / "rows.csv").string(), "--output-csv", (dir / "pred.csv").string()}),
            kExitOk);
  const auto out = lines(slurp(dir / "pred.csv"));
  ASSERT_EQ(out.size(), raw.size() + 1);
  for (std::size_t i = 0; i < raw.size(); ++i)
    EXPECT_EQ(std::string(text::split(out[i + 1], ',')[1]), "class_" + std::to_string(raw.labels[i])) << "row " << i;
}
