// Command-line front end. Talks to the library only through tflab.h.

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tflab/tflab.h"

namespace {

const std::map<std::string, std::string> kCommandHelp = {
    {"synth", "generate a synthetic long-format CSV (out/series.csv)"},
    {"profile", "length-weighted ADF, forecastability and Hurst (out/profile.csv)"},
    {"train-embed", "phase-1 invertible embedding training (out/embed.ckpt)"},
    {"pretrain", "phase-2 teacher-forced pretraining (out/model.ckpt)"},
    {"forecast", "autoregressive forecast evaluation (out/forecast.csv)"},
    {"impute", "masked-point imputation evaluation (out/impute.csv)"},
    {"backtest", "walk-forward portfolio backtest (out/backtest.csv)"},
    {"gradcheck", "finite-difference gradient check of the model"},
};

struct KeyOption {
  std::string key;
  std::string value;
  CLI::Option* option = nullptr;
};

int fail_with(tflab_status s) {
  std::fprintf(stderr, "error (%s): %s\n", tflab_status_name(s), tflab_last_error());
  return tflab_exit_code(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tflab: patch-token encoder/decoder for time series"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(tflab_version()));

  std::map<std::string, std::vector<KeyOption>> options;
  std::map<std::string, CLI::App*> subs;
  for (size_t c = 0; c < tflab_command_count(); ++c) {
    const std::string name = tflab_command_name(c);
    const auto help = kCommandHelp.find(name);
    CLI::App* sub = app.add_subcommand(name, help != kCommandHelp.end() ? help->second : name);
    subs[name] = sub;
    auto& list = options[name];
    list.reserve(tflab_key_count());
    for (size_t k = 0; k < tflab_key_count(); ++k) list.push_back({tflab_key_name(k), {}, nullptr});
    for (size_t k = 0; k < tflab_key_count(); ++k) {
      KeyOption& o = list[k];
      std::string flags = "--" + o.key;
      std::string dashed = o.key;
      for (char& ch : dashed)
        if (ch == '_') ch = '-';
      if (dashed != o.key) flags += ",--" + dashed;
      std::string help_text = tflab_key_help(k);
      const std::string def = tflab_key_default(k);
      if (!def.empty()) help_text += " [default " + def + "]";
      o.option = sub->add_option(flags, o.value, help_text);
      if (tflab_key_type_of(k) == TFLAB_KEY_FLAG) {
        o.option->expected(0, 1)->default_str("true");
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  std::string command;
  for (const auto& [name, sub] : subs)
    if (sub->parsed()) command = name;

  tflab_config* cfg = nullptr;
  tflab_status s = tflab_config_create(&cfg);
  if (s != TFLAB_OK) return fail_with(s);
  for (const auto& o : options[command]) {
    if (o.option->count() == 0) continue;
    const std::string value = o.value.empty() ? "true" : o.value;
    if ((s = tflab_config_set(cfg, o.key.c_str(), value.c_str())) != TFLAB_OK) {
      tflab_config_destroy(cfg);
      return fail_with(s);
    }
  }
  const char* summary = nullptr;
  s = tflab_run(command.c_str(), cfg, &summary);
  if (summary) std::fputs(summary, stdout);
  std::fflush(stdout);
  const int code = s == TFLAB_OK ? 0 : (s == TFLAB_ERR_CHECK_FAILED ? 1 : fail_with(s));
  tflab_config_destroy(cfg);
  return code;
}
