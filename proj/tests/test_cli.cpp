// Exercises the shared library through its C header and the tflab executable
// through the shell. Nothing here links against the C++ core.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tflab/tflab.h"

namespace fs = std::filesystem;

namespace {

const std::string kCli = TFLAB_CLI_PATH;

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("tflab_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string first_line(const fs::path& p) {
  std::ifstream f(p);
  std::string line;
  std::getline(f, line);
  return line;
}

// Runs the CLI inside `dir` and returns its exit status.
int cli(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" + kCli + "' " + args + " > log.txt 2>&1";
  const int raw = std::system(cmd.c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

struct Config {
  tflab_config* p = nullptr;
  Config() { REQUIRE(tflab_config_create(&p) == TFLAB_OK); }
  ~Config() { tflab_config_destroy(p); }
  void set(const char* k, const char* v) { REQUIRE(tflab_config_set(p, k, v) == TFLAB_OK); }
  std::string get(const char* k) const {
    const char* v = nullptr;
    REQUIRE(tflab_config_get(p, k, &v) == TFLAB_OK);
    return v;
  }
  std::string source(const char* k) const {
    const char* v = nullptr;
    REQUIRE(tflab_config_source(p, k, &v) == TFLAB_OK);
    return v;
  }
};

}  // namespace

TEST_CASE("key and command tables") {
  CHECK(std::string(tflab_version()).find("tflab") == 0);
  const size_t n = tflab_key_count();
  REQUIRE(n > 40);
  std::set<std::string> names;
  for (size_t i = 0; i < n; ++i) {
    REQUIRE(tflab_key_name(i) != nullptr);
    CHECK(names.insert(tflab_key_name(i)).second);
    CHECK(tflab_key_help(i) != nullptr);
    CHECK(tflab_key_default(i) != nullptr);
  }
  CHECK(tflab_key_name(n) == nullptr);
  CHECK(names.count("seed") == 1);
  std::vector<std::string> commands;
  for (size_t i = 0; i < tflab_command_count(); ++i) commands.push_back(tflab_command_name(i));
  CHECK(commands == std::vector<std::string>{"synth", "profile", "train-embed", "pretrain", "forecast",
                                             "impute", "backtest", "gradcheck"});
  CHECK(tflab_command_name(commands.size()) == nullptr);
}

TEST_CASE("status codes map onto exit codes") {
  CHECK(tflab_exit_code(TFLAB_OK) == 0);
  CHECK(tflab_exit_code(TFLAB_ERR_USAGE) == 2);
  for (tflab_status s : {TFLAB_ERR_DIMENSION, TFLAB_ERR_IO, TFLAB_ERR_DATA, TFLAB_ERR_FORMAT,
                         TFLAB_ERR_CHECK_FAILED, TFLAB_ERR_INTERNAL})
    CHECK(tflab_exit_code(s) == 1);
  CHECK(std::string(tflab_status_name(TFLAB_ERR_IO)) == "path error");
}

TEST_CASE("config handles resolve through the layers") {
  Config c;
  c.set("lr", "0.01");
  REQUIRE(tflab_config_set_file_text(c.p, "lr = 0.5\nlayers = 3\n") == TFLAB_OK);
  REQUIRE(tflab_config_set_env_seed(c.p, "9") == TFLAB_OK);
  const char* v = nullptr;
  CHECK(tflab_config_get(c.p, "lr", &v) == TFLAB_ERR_STATE);
  REQUIRE(tflab_config_resolve(c.p) == TFLAB_OK);
  CHECK(c.get("lr") == "0.01");
  CHECK(c.source("lr") == "flag");
  CHECK(c.get("layers") == "3");
  CHECK(c.source("layers") == "file");
  CHECK(c.get("seed") == "9");
  CHECK(c.source("seed") == "env");
  CHECK(c.source("heads") == "preset");
  CHECK(c.source("tau") == "default");
  const char* text = nullptr;
  REQUIRE(tflab_config_to_text(c.p, &text) == TFLAB_OK);
  CHECK(std::string(text).find("lr = 0.01\n") != std::string::npos);

  CHECK(tflab_config_set(c.p, "nope", "1") == TFLAB_ERR_USAGE);
  CHECK(std::string(tflab_last_error()).find("nope") != std::string::npos);
  CHECK(tflab_config_set(c.p, "steps", "many") == TFLAB_ERR_USAGE);
  CHECK(tflab_config_set(c.p, nullptr, "1") == TFLAB_ERR_NULL_ARGUMENT);
  CHECK(tflab_config_set_file_text(c.p, "bogus = 1\n") == TFLAB_ERR_USAGE);
  CHECK(tflab_run("fly", c.p, nullptr) == TFLAB_ERR_USAGE);
}

TEST_CASE("series, statistics and metrics through the C API") {
  Config c;
  c.set("kind", "random_walk");
  c.set("len", "300");
  c.set("count", "2");
  c.set("seed", "5");
  REQUIRE(tflab_config_set_env_seed(c.p, nullptr) == TFLAB_OK);
  REQUIRE(tflab_config_resolve(c.p) == TFLAB_OK);
  tflab_series_set* s = nullptr;
  REQUIRE(tflab_series_synth(c.p, &s) == TFLAB_OK);
  size_t count = 0, len = 0;
  const double* values = nullptr;
  REQUIRE(tflab_series_count(s, &count) == TFLAB_OK);
  CHECK(count == 2);
  REQUIRE(tflab_series_values(s, 1, &values, &len) == TFLAB_OK);
  CHECK(len == 300);
  CHECK(tflab_series_values(s, 2, &values, &len) == TFLAB_ERR_DIMENSION);

  const auto dir = fresh_dir("series");
  const std::string path = (dir / "s.csv").string();
  REQUIRE(tflab_series_save(s, path.c_str()) == TFLAB_OK);
  tflab_series_set* back = nullptr;
  REQUIRE(tflab_series_load(path.c_str(), &back) == TFLAB_OK);
  const double *a = nullptr, *b = nullptr;
  size_t la = 0, lb = 0;
  REQUIRE(tflab_series_values(s, 0, &a, &la) == TFLAB_OK);
  REQUIRE(tflab_series_values(back, 0, &b, &lb) == TFLAB_OK);
  REQUIRE(la == lb);
  CHECK(std::vector<double>(a, a + la) == std::vector<double>(b, b + lb));
  const char *ida = nullptr, *idb = nullptr;
  REQUIRE(tflab_series_id(s, 0, &ida) == TFLAB_OK);
  REQUIRE(tflab_series_id(back, 0, &idb) == TFLAB_OK);
  CHECK(std::string(ida) == idb);

  double adf = 0.0;
  REQUIRE(tflab_adf(a, la, -1, &adf) == TFLAB_OK);
  CHECK(std::isfinite(adf));
  double h = 0.0;
  CHECK(tflab_hurst(a, la, &h) == TFLAB_OK);
  double fc = 0.0;
  int degenerate = -1;
  CHECK(tflab_forecastability(a, la, &fc, &degenerate) == TFLAB_OK);
  CHECK(degenerate == 0);
  tflab_series_destroy(back);
  tflab_series_destroy(s);

  tflab_series_set* missing = nullptr;
  CHECK(tflab_series_load((dir / "none.csv").string().c_str(), &missing) == TFLAB_ERR_IO);
  const std::vector<double> flat(50, 3.0);
  CHECK(tflab_adf(flat.data(), flat.size(), -1, &adf) == TFLAB_ERR_DOMAIN);

  const double truth[] = {1, 2, 3, 4}, pred[] = {2, 4, 3, 2};
  double m = 0.0;
  REQUIRE(tflab_mse(truth, pred, 4, &m) == TFLAB_OK);
  CHECK(m == doctest::Approx(9.0 / 4.0));
  REQUIRE(tflab_mae(truth, pred, 4, &m) == TFLAB_OK);
  CHECK(m == doctest::Approx(5.0 / 4.0));
  const double r[] = {0.01, 0.03};
  REQUIRE(tflab_sharpe(r, 2, 0.0, 252.0, &m) == TFLAB_OK);
  // mean 0.02, sample std 0.02 / sqrt(2)
  CHECK(m == doctest::Approx(0.02 * 252.0 / (0.02 / std::sqrt(2.0) * std::sqrt(252.0))));
  const double prices[] = {100, 120, 90, 130};
  REQUIRE(tflab_max_drawdown(prices, 4, &m) == TFLAB_OK);
  CHECK(m == doctest::Approx(-0.25));
}

TEST_CASE("portfolio weights through the C API") {
  const double cov[] = {1.0, 0.0, 0.0, 4.0};
  double w[2] = {0, 0};
  REQUIRE(tflab_min_variance_weights(cov, 2, w) == TFLAB_OK);
  CHECK(std::abs(w[0] - 0.8) < 1e-8);
  CHECK(std::abs(w[1] - 0.2) < 1e-8);
  const double mu[] = {0.1, 0.1};
  REQUIRE(tflab_markowitz_weights(mu, cov, 2, 1.0, w) == TFLAB_OK);
  CHECK(w[0] + w[1] == doctest::Approx(1.0));
  CHECK(tflab_markowitz_weights(mu, cov, 2, 0.0, w) != TFLAB_OK);
}

TEST_CASE("model handles forecast, save and load") {
  Config c;
  c.set("seed", "3");
  c.set("channels", "2");
  c.set("dropout", "0");
  REQUIRE(tflab_config_resolve(c.p) == TFLAB_OK);
  tflab_model* m = nullptr;
  REQUIRE(tflab_model_create(c.p, &m) == TFLAB_OK);
  size_t channels = 0, patch = 0, params = 0;
  REQUIRE(tflab_model_channels(m, &channels) == TFLAB_OK);
  REQUIRE(tflab_model_patch_len(m, &patch) == TFLAB_OK);
  REQUIRE(tflab_model_param_count(m, &params) == TFLAB_OK);
  CHECK(channels == 2);
  CHECK(patch == 4);
  CHECK(params > 0);

  std::vector<double> ctx(2 * 16);
  for (size_t i = 0; i < ctx.size(); ++i) ctx[i] = std::sin(0.3 * static_cast<double>(i));
  std::vector<double> out(2 * 8, 0.0), again(2 * 8, 1.0);
  REQUIRE(tflab_model_forecast(m, ctx.data(), 2, 16, 8, out.data()) == TFLAB_OK);
  for (double v : out) CHECK(std::isfinite(v));
  CHECK(tflab_model_forecast(m, ctx.data(), 2, 15, 8, out.data()) != TFLAB_OK);
  CHECK(tflab_model_forecast(m, ctx.data(), 3, 16, 8, out.data()) != TFLAB_OK);

  const auto dir = fresh_dir("model");
  const std::string path = (dir / "m.ckpt").string();
  REQUIRE(tflab_model_save(m, path.c_str()) == TFLAB_OK);
  tflab_model* loaded = nullptr;
  REQUIRE(tflab_model_load(path.c_str(), &loaded) == TFLAB_OK);
  REQUIRE(tflab_model_forecast(loaded, ctx.data(), 2, 16, 8, again.data()) == TFLAB_OK);
  CHECK(again == out);
  tflab_model_destroy(loaded);
  tflab_model_destroy(m);
  CHECK(tflab_model_load((dir / "absent.ckpt").string().c_str(), &loaded) == TFLAB_ERR_IO);
}

TEST_CASE("cli synth is deterministic and writes a manifest") {
  const auto dir = fresh_dir("synth");
  REQUIRE(cli(dir, "synth --kind ar1 --phi 0.5 --len 4096 --seed 7 --out a") == 0);
  REQUIRE(cli(dir, "synth --kind ar1 --phi 0.5 --len 4096 --seed 7 --out b") == 0);
  const std::string a = slurp(dir / "a/series.csv");
  CHECK(a.size() > 4096);
  CHECK(a == slurp(dir / "b/series.csv"));
  REQUIRE(cli(dir, "synth --kind ar1 --phi 0.5 --len 4096 --seed 8 --out c") == 0);
  CHECK(a != slurp(dir / "c/series.csv"));

  const std::string manifest = slurp(dir / "a/manifest.txt");
  CHECK(manifest.find("command = synth\n") != std::string::npos);
  CHECK(manifest.find("seed = 7\n") != std::string::npos);
  CHECK(manifest.find("phi = 0.5\n") != std::string::npos);
  CHECK(manifest.find("[outputs]\nseries.csv\n") != std::string::npos);
}

TEST_CASE("cli runs every subcommand end to end") {
  const auto dir = fresh_dir("flow");
  REQUIRE(cli(dir, "synth --kind ar1 --phi 0.8 --len 1200 --count 2 --seed 4 --out data") == 0);
  REQUIRE(cli(dir, "synth --kind gbm --mu 0.0005 --sigma 0.01 --len 300 --count 3 --seed 4 --out prices") == 0);

  REQUIRE(cli(dir, "profile --data data/series.csv --freq D --out prof") == 0);
  CHECK(first_line(dir / "prof/profile.csv") == "dataset,freq,n_series,total_obs,adf,forecastability,hurst");
  CHECK(slurp(dir / "prof/profile.csv").find("series,D,2,2400,") != std::string::npos);

  REQUIRE(cli(dir, "train-embed --data data/series.csv --embed-steps 10 --out emb") == 0);
  CHECK(fs::is_regular_file(dir / "emb/embed.ckpt"));
  CHECK(first_line(dir / "emb/embed_history.csv") == "step,info_nce,mse,total");

  REQUIRE(cli(dir, "pretrain --data data/series.csv --checkpoint emb/embed.ckpt --steps 20 --tasks 8:8,16:8 "
                   "--out pre") == 0);
  CHECK(first_line(dir / "pre/pretrain_history.csv") == "step,task,loss");
  CHECK(fs::is_regular_file(dir / "pre/model.ckpt.cfg"));
  const std::string manifest = slurp(dir / "pre/manifest.txt");
  CHECK(manifest.find("command = pretrain\n") != std::string::npos);
  CHECK(manifest.find("  data/series.csv\n") != std::string::npos);
  CHECK(manifest.find("  emb/embed.ckpt\n") != std::string::npos);

  REQUIRE(cli(dir, "forecast --data data/series.csv --checkpoint pre/model.ckpt --tasks 8:8 --out fc") == 0);
  CHECK(first_line(dir / "fc/forecast.csv") == "task,horizon,mse,mae");
  CHECK(slurp(dir / "fc/forecast.csv").find("\n8->8,8,") != std::string::npos);

  REQUIRE(cli(dir, "impute --data data/series.csv --checkpoint pre/model.ckpt --impute-steps 5 "
                   "--mask-ratios 0.125,0.25 --out imp") == 0);
  CHECK(first_line(dir / "imp/impute.csv") == "ratio,mse,mae");
  CHECK(slurp(dir / "imp/impute.csv").find("\n0.25,") != std::string::npos);

  REQUIRE(cli(dir, "backtest --data prices/series.csv --lookback 60 --forward 5 "
                   "--strategies equal,vol,min_variance,markowitz,model --checkpoint pre/model.ckpt "
                   "--tasks 16:8 --out bt") == 0);
  const std::string bt = slurp(dir / "bt/backtest.csv");
  CHECK(bt.rfind("strategy,lookback,forward,r_d,s_a,mdd\n", 0) == 0);
  for (const char* s : {"\nequal,60,5,", "\nvol,60,5,", "\nmin_variance,60,5,", "\nmarkowitz,60,5,", "\nmodel,60,5,"})
    CHECK(bt.find(s) != std::string::npos);

  REQUIRE(cli(dir, "gradcheck --out gc") == 0);
  const std::string gc = slurp(dir / "gc/gradcheck.txt");
  CHECK(gc.find("channels = 2\n") != std::string::npos);
  CHECK(gc.find("passed = true\n") != std::string::npos);
}

TEST_CASE("cli exit codes") {
  const auto dir = fresh_dir("codes");
  CHECK(cli(dir, "synth --no-such-flag 1") == 2);
  CHECK(cli(dir, "") == 2);
  CHECK(cli(dir, "synth --len lots") == 2);
  CHECK(cli(dir, "profile --out x") == 2);
  CHECK(cli(dir, "profile --data missing.csv --out x") == 1);
  CHECK(slurp(dir / "log.txt").find("path error") != std::string::npos);
  CHECK(cli(dir, "forecast --data missing.csv --checkpoint none.ckpt --out x") == 1);
  CHECK(cli(dir, "--help") == 0);
  CHECK(cli(dir, "--version") == 0);
}
