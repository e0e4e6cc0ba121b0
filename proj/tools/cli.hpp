#ifndef PESTDET_TOOLS_CLI_HPP
#define PESTDET_TOOLS_CLI_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pestdet::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kIo = 2,
  kFormat = 3,
  kModel = 4,
  kDepleted = 5,
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Settings shared by all subcommands. Unset fields fall back to each
/// subcommand's default.
struct RunConfig {
  std::optional<std::string> model, arch, image, dataset, out, report, csv, history, energy_config, profile,
      passes, light, scene, nms;
  std::optional<double> threshold, lux, lr, soc, prune, test_fraction;
  std::optional<int> epochs, days, batch, threads, augment, moths, insects, tiles;
  std::optional<std::int64_t> seed, trap_id, timestamp;
};

/// Keys accepted in configuration files; each is also a `--key` flag.
const std::vector<std::string>& config_keys();

/// Parses `value` for `key` into `config`. Throws ConfigError.
void set_value(RunConfig& config, const std::string& key, const std::string& value);

/// `key = value` lines; `#` starts a comment. Errors name the line.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Fields set in `flags` replace those in `base`.
RunConfig merge(RunConfig base, const RunConfig& flags);

/// Runs one command line (without the program name) and returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pestdet::cli

#endif  // PESTDET_TOOLS_CLI_HPP
