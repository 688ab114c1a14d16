#include <iostream>

#include <CLI11.hpp>

#include "splitamc/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"splitamc: split-learning modulation classification simulator"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"gen-data", "generate a constellation-image dataset"},
      {"train", "train one method on a dataset"},
      {"latency", "latency ratio sweep"},
      {"compare", "grid over methods, data SNR, channel SNR and fading"},
  };

  splitamc::CommandOptions opts;
  std::string config, out, data;
  for (const auto& s : subs) {
    auto* cmd = app.add_subcommand(s.name, s.help);
    cmd->add_option("--config", config, "JSON config file");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--set", opts.overrides, "override, e.g. train.rounds=50")->take_all();
    if (std::string(s.name) == "train") cmd->add_option("--data", data, "dataset directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : splitamc::kExitUsage;
  }

  opts.config = config;
  opts.out = out;
  opts.data = data;
  return splitamc::run_command(app.get_subcommands().front()->get_name(), opts, std::cerr);
}
