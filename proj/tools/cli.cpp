#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pestdet/builders.hpp"
#include "pestdet/energy.hpp"
#include "pestdet/graph_opt.hpp"
#include "pestdet/telemetry.hpp"
#include "pestdet/trainer.hpp"
#include "pestdet/vision.hpp"
#include "pestdet/weights_io.hpp"

namespace pestdet::cli {

// --- configuration ---------------------------------------------------------

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T x{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, x);
  if (ec != std::errc() || ptr != end || value.empty()) {
    throw ConfigError("invalid value for '" + key + "': '" + value + "'");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(x)) throw ConfigError("invalid value for '" + key + "': '" + value + "'");
  }
  return x;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

template <typename T>
Setter number_setter(std::optional<T> RunConfig::*field) {
  return [field](RunConfig& c, const std::string& key, const std::string& v) { c.*field = parse_number<T>(key, v); };
}

Setter text_setter(std::optional<std::string> RunConfig::*field) {
  return [field](RunConfig& c, const std::string& key, const std::string& v) {
    if (v.empty()) throw ConfigError("empty value for '" + key + "'");
    c.*field = v;
  };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"model", text_setter(&RunConfig::model)},
      {"arch", text_setter(&RunConfig::arch)},
      {"image", text_setter(&RunConfig::image)},
      {"dataset", text_setter(&RunConfig::dataset)},
      {"out", text_setter(&RunConfig::out)},
      {"report", text_setter(&RunConfig::report)},
      {"csv", text_setter(&RunConfig::csv)},
      {"history", text_setter(&RunConfig::history)},
      {"energy-config", text_setter(&RunConfig::energy_config)},
      {"profile", text_setter(&RunConfig::profile)},
      {"passes", text_setter(&RunConfig::passes)},
      {"light", text_setter(&RunConfig::light)},
      {"scene", text_setter(&RunConfig::scene)},
      {"nms", text_setter(&RunConfig::nms)},
      {"threshold", number_setter(&RunConfig::threshold)},
      {"lux", number_setter(&RunConfig::lux)},
      {"lr", number_setter(&RunConfig::lr)},
      {"soc", number_setter(&RunConfig::soc)},
      {"prune", number_setter(&RunConfig::prune)},
      {"test-fraction", number_setter(&RunConfig::test_fraction)},
      {"epochs", number_setter(&RunConfig::epochs)},
      {"days", number_setter(&RunConfig::days)},
      {"batch", number_setter(&RunConfig::batch)},
      {"threads", number_setter(&RunConfig::threads)},
      {"augment", number_setter(&RunConfig::augment)},
      {"moths", number_setter(&RunConfig::moths)},
      {"insects", number_setter(&RunConfig::insects)},
      {"tiles", number_setter(&RunConfig::tiles)},
      {"seed", number_setter(&RunConfig::seed)},
      {"trap-id", number_setter(&RunConfig::trap_id)},
      {"timestamp", number_setter(&RunConfig::timestamp)},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, setter] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

void set_value(RunConfig& config, const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("unknown key '" + key + "'");
  it->second(config, key, value);
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string raw;
  for (int line = 1; std::getline(in, raw); ++line) {
    const std::string s = trim(raw.substr(0, raw.find('#')));
    if (s.empty()) continue;
    try {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("expected key = value");
      set_value(config, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line) + ": " + e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config " + path.string());
  std::ostringstream text;
  text << f.rdbuf();
  try {
    return parse_config(text.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

RunConfig merge(RunConfig base, const RunConfig& flags) {
  auto take = [](auto& dst, const auto& src) {
    if (src) dst = src;
  };
  take(base.model, flags.model);
  take(base.arch, flags.arch);
  take(base.image, flags.image);
  take(base.dataset, flags.dataset);
  take(base.out, flags.out);
  take(base.report, flags.report);
  take(base.csv, flags.csv);
  take(base.history, flags.history);
  take(base.energy_config, flags.energy_config);
  take(base.profile, flags.profile);
  take(base.passes, flags.passes);
  take(base.light, flags.light);
  take(base.scene, flags.scene);
  take(base.nms, flags.nms);
  take(base.threshold, flags.threshold);
  take(base.lux, flags.lux);
  take(base.lr, flags.lr);
  take(base.soc, flags.soc);
  take(base.prune, flags.prune);
  take(base.test_fraction, flags.test_fraction);
  take(base.epochs, flags.epochs);
  take(base.days, flags.days);
  take(base.batch, flags.batch);
  take(base.threads, flags.threads);
  take(base.augment, flags.augment);
  take(base.moths, flags.moths);
  take(base.insects, flags.insects);
  take(base.tiles, flags.tiles);
  take(base.seed, flags.seed);
  take(base.trap_id, flags.trap_id);
  take(base.timestamp, flags.timestamp);
  return base;
}

// --- shared helpers --------------------------------------------------------

namespace {

class Depleted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
T require(const std::optional<T>& v, const char* key) {
  if (!v) throw ConfigError(std::string("missing required --") + key);
  return *v;
}

void check_input(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path);
}

void check_output(const std::optional<std::string>& path) {
  if (!path) return;
  const auto parent = std::filesystem::path(*path).parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent)) {
    throw IoError("output directory does not exist: " + parent.string());
  }
}

// A model file `m.pdnw` may have a sidecar `m.pdnw.json` recording the
// architecture and the structural passes applied to it, so the graph can be
// rebuilt before the weights are installed.
struct ModelInfo {
  std::string arch = "lenet5";
  std::string passes;
};

std::filesystem::path sidecar_path(const std::string& model) { return model + ".json"; }

ModelInfo read_sidecar(const std::string& model) {
  ModelInfo info;
  const auto path = sidecar_path(model);
  if (!std::filesystem::exists(path)) return info;
  std::ifstream f(path);
  try {
    const auto j = nlohmann::json::parse(f);
    info.arch = j.value("arch", info.arch);
    info.passes = j.value("passes", info.passes);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return info;
}

void write_sidecar(const std::string& model, const ModelInfo& info) {
  std::ofstream f(sidecar_path(model));
  if (!f) throw IoError("cannot write " + sidecar_path(model).string());
  f << nlohmann::json{{"arch", info.arch}, {"passes", info.passes}}.dump(2) << '\n';
}

std::string join_passes(const std::string& a, const std::string& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  return a + "," + b;
}

ModelGraph load_model(const RunConfig& c, ModelInfo& info) {
  const std::string path = require(c.model, "model");
  check_input(path);
  info = read_sidecar(path);
  if (c.arch) info.arch = *c.arch;
  ModelGraph graph = build_architecture(info.arch);
  if (!info.passes.empty()) {
    // Only the graph shape matters here; pruning leaves it unchanged.
    std::vector<PassStep> structural;
    for (const PassStep& s : parse_pipeline(info.passes)) {
      if (s.name != "prune" && s.name != "prune-global") structural.push_back(s);
    }
    graph = run_pipeline(std::move(graph), structural).model;
  }
  return load_weights(path, std::move(graph));
}

EnergyConfig energy_config(const RunConfig& c) {
  if (!c.energy_config) return default_energy_config();
  check_input(*c.energy_config);
  return load_energy_config(*c.energy_config);
}

std::vector<MothCount> read_history(const std::string& path) {
  check_input(path);
  std::ifstream f(path);
  std::vector<MothCount> h;
  std::string line;
  for (int n = 1; std::getline(f, line); ++n) {
    line = trim(line);
    if (line.empty() || (n == 1 && line.rfind("timestamp", 0) == 0)) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw ConfigError("expected timestamp_minutes,moths");
      h.push_back({parse_number<std::int64_t>("timestamp_minutes", trim(line.substr(0, comma))),
                   parse_number<std::int64_t>("moths", trim(line.substr(comma + 1)))});
    } catch (const ConfigError& e) {
      throw FormatError(path + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return h;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// --- subcommands -----------------------------------------------------------

int cmd_detect(const RunConfig& c, bool cycle, std::ostream& out) {
  const auto t_start = std::chrono::steady_clock::now();
  const std::string image_path = require(c.image, "image");
  check_input(image_path);
  check_output(c.out);
  check_output(c.csv);
  check_output(c.report);
  const EnergyConfig energy = energy_config(c);
  const CycleProfile& profile = find_profile(energy, c.profile.value_or("rpi3-lenet"));
  std::vector<MothCount> history;
  if (c.history) history = read_history(*c.history);

  ModelInfo info;
  const ModelGraph model = load_model(c, info);

  // Task 1: acquire the picture.
  const auto t1 = std::chrono::steady_clock::now();
  const Image img = read_pnm(image_path);
  const double capture_s = seconds_since(t1);

  // Tasks 2 and 3: preprocessing, classification.
  DetectOptions options;
  options.threshold = c.threshold.value_or(0.5);
  options.threads = c.threads.value_or(1);
  const std::string nms_mode = c.nms.value_or("iou");
  if (nms_mode == "grid") options.nms_mode = NmsMode::grid_neighbor;
  else if (nms_mode != "iou") throw ConfigError("--nms must be 'iou' or 'grid'");
  const DetectResult result = detect(img, model, options);
  const int moths = count_label(result.detections, TileClass::codling_moth);
  const int others = count_label(result.detections, TileClass::general_insect);

  // Task 4: the report that would go over the radio.
  const auto t4 = std::chrono::steady_clock::now();
  TrapReport report;
  report.trap_id = c.trap_id.value_or(0);
  report.timestamp_minutes = c.timestamp.value_or(0);
  report.moth_count = saturate_count(moths);
  report.insect_count = saturate_count(others);
  report.battery_soc_pct = std::llround(c.soc.value_or(1.0) * 100.0);
  if (!history.empty() && history.back().timestamp_minutes > report.timestamp_minutes) {
    throw ConfigError("--timestamp is earlier than the last history entry");
  }
  history.push_back({report.timestamp_minutes, moths});
  report.alert = alert_rule(history);
  const Payload payload = encode(report);
  if (c.report) write_payload(payload, *c.report);
  const double radio_s = seconds_since(t4);

  if (c.out) write_pnm(result.annotated, *c.out);
  if (c.csv) write_detections_csv(result.detections, *c.csv);

  out << moths << " codling moth, " << others << " other\n";
  out << "report " << to_hex(payload) << (report.alert ? " alert" : "") << '\n';
  if (cycle) {
    const double setup_s = std::chrono::duration<double>(t1 - t_start).count();
    out << "stage     wall_ms    profile_J  (" << profile.name << ")\n";
    const std::pair<const char*, std::pair<double, double>> rows[] = {
        {"boot", {setup_s, profile.boot}},
        {"task1", {capture_s, profile.capture}},
        {"task2", {result.preprocess_seconds, profile.preprocess}},
        {"task3", {result.classify_seconds, profile.inference}},
        {"task4", {radio_s, profile.radio}},
        {"shutdown", {0.0, profile.shutdown}},
    };
    for (const auto& [name, v] : rows) {
      out << std::left << std::setw(9) << name << std::right << std::setw(8) << fixed(v.first * 1000.0, 1)
          << std::setw(13) << fixed(v.second, 3) << '\n';
    }
    out << "estimated cycle energy " << fixed(cycle_energy(profile), 3) << " J\n";
  }
  return kOk;
}

DatasetSplit training_data(const RunConfig& c) {
  const auto seed = static_cast<std::uint64_t>(c.seed.value_or(1));
  if (c.dataset) {
    check_input(*c.dataset);
    return split_dataset(load_tile_directory(*c.dataset), c.test_fraction.value_or(0.2), seed);
  }
  const int train = c.tiles.value_or(2000);
  return synthetic_benchmark(train, train / 4, 2024);
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  const std::string out_path = require(c.out, "out");
  check_output(c.out);
  check_output(c.csv);
  DatasetSplit data = training_data(c);
  if (c.augment.value_or(1) > 1) {
    data.train = augment(data.train, *c.augment, static_cast<std::uint64_t>(c.seed.value_or(1)));
  }
  const std::string arch = c.arch.value_or("lenet5");
  ModelGraph model = build_architecture(arch, kTileSize, 2, 0.35, static_cast<std::uint64_t>(c.seed.value_or(1)));

  TrainOptions options;
  options.epochs = c.epochs.value_or(100);
  options.learning_rate = c.lr.value_or(0.01);
  options.batch = c.batch.value_or(32);
  options.seed = static_cast<std::uint64_t>(c.seed.value_or(1));
  if (c.prune) options.prune = PruneSchedule{*c.prune, 10, options.epochs};
  options.on_epoch = [&out](const EpochRecord& r) {
    out << "epoch " << r.epoch << " loss " << fixed(r.loss, 4) << " train " << fixed(r.train_acc, 4) << " val "
        << fixed(r.val_acc, 4) << " sparsity " << fixed(r.sparsity, 3) << '\n';
  };
  out << "training " << arch << " on " << data.train.size() << " tiles, validating on " << data.test.size() << '\n';
  const TrainResult result = train_sgd(std::move(model), data, options);

  save_weights(result.model, out_path);
  write_sidecar(out_path, {arch, ""});
  if (c.csv) write_history_csv(result.history, *c.csv);
  const Metrics m = evaluate_metrics(result.model, data.test);
  out << (result.stopped_early ? "stopped early" : "finished") << " after " << result.history.size()
      << " epochs; test accuracy " << fixed(m.accuracy, 2) << "%\n";
  return kOk;
}

int cmd_optimize(const RunConfig& c, std::ostream& out) {
  const std::string out_path = require(c.out, "out");
  check_output(c.out);
  ModelInfo info;
  const ModelGraph model = load_model(c, info);
  const std::string passes = c.passes.value_or("fold-bn,strip-train,fuse-const");
  const PipelineResult result = run_pipeline(model, parse_pipeline(passes));
  for (const PassReport& r : result.reports) out << r.to_line() << '\n';
  out << "layers " << model.layers.size() << " -> " << result.model.layers.size() << ", sparsity "
      << fixed(weight_sparsity(result.model), 4) << '\n';
  save_weights(result.model, out_path);
  write_sidecar(out_path, {info.arch, join_passes(info.passes, passes)});
  return kOk;
}

int cmd_metrics(const RunConfig& c, std::ostream& out) {
  ModelInfo info;
  const ModelGraph model = load_model(c, info);
  std::vector<LabeledTile> tiles;
  if (c.dataset) {
    check_input(*c.dataset);
    tiles = load_tile_directory(*c.dataset);
  } else {
    tiles = synthetic_benchmark(0, c.tiles.value_or(500), static_cast<std::uint64_t>(c.seed.value_or(2024))).test;
  }
  const Metrics m = evaluate_metrics(model, tiles, c.threshold.value_or(0.5));
  out << "tiles " << tiles.size() << " tp " << m.tp << " fp " << m.fp << " fn " << m.fn << " tn " << m.tn << '\n';
  out << "accuracy " << fixed(m.accuracy, 2) << " precision " << fixed(m.precision, 2)
      << (m.precision_defined ? "" : " (undefined)") << " recall " << fixed(m.recall, 2) << " f-score "
      << fixed(m.f_score, 2) << '\n';
  return kOk;
}

int cmd_simulate(const RunConfig& c, std::ostream& out) {
  check_output(c.csv);
  const EnergyConfig energy = energy_config(c);
  const CycleProfile& profile = find_profile(energy, c.profile.value_or("rpi3-lenet"));
  Battery battery = energy.battery;
  if (c.soc) battery.set_state_of_charge(*c.soc);
  const double lux = c.lux.value_or(7000.0);
  const std::string light = c.light.value_or("day");
  Illuminance schedule;
  if (light == "day") schedule = daylight_hours(lux);
  else if (light == "constant") schedule = constant_light(lux);
  else throw ConfigError("--light must be 'day' or 'constant'");

  SimulationOptions options;
  options.days = c.days.value_or(3);
  const SimulationResult r = simulate_soc(battery, profile, energy.panel, schedule, options);
  if (c.csv) write_soc_csv(r.samples, *c.csv);

  const Lifetime life = lifetime_cycles(Battery(battery.capacity_mah(), battery.nominal_volts()), profile);
  out << "profile " << profile.name << ": " << fixed(cycle_energy(profile), 3) << " J per cycle, "
      << life.cycles << " cycles (" << fixed(life.days, 1) << " days) on a full battery\n";
  out << "soc " << fixed(r.samples.front().soc, 4) << " -> " << fixed(r.samples.back().soc, 4) << " over "
      << options.days << " days, " << r.cycles << " cycles, harvested " << fixed(r.harvested_j, 1) << " J\n";
  if (r.depleted_at) {
    out << "battery depleted at t=" << fixed(*r.depleted_at, 0) << " s\n";
    throw Depleted("battery depleted");
  }
  return kOk;
}

int cmd_report_decode(const RunConfig& c, const std::string& hex, std::ostream& out) {
  std::vector<std::uint8_t> bytes;
  if (!hex.empty()) {
    bytes = from_hex(hex);
  } else {
    const std::string path = require(c.report, "report");
    check_input(path);
    bytes = read_payload(path);
  }
  const TrapReport r = decode(bytes);
  out << "trap_id " << r.trap_id << "\ntimestamp_minutes " << r.timestamp_minutes << "\nmoth_count "
      << r.moth_count << "\ninsect_count " << r.insect_count << "\nbattery_soc_pct " << r.battery_soc_pct
      << "\nalert " << (r.alert ? "true" : "false") << '\n';
  return kOk;
}

int cmd_gen_dataset(const RunConfig& c, std::ostream& out) {
  const std::filesystem::path root = require(c.out, "out");
  const auto seed = static_cast<std::uint64_t>(c.seed.value_or(1));
  const int moths = c.moths.value_or(100), insects = c.insects.value_or(100);
  if (moths < 0 || insects < 0) throw ConfigError("--moths and --insects must be nonnegative");
  std::filesystem::create_directories(root);
  if (c.scene) {
    int w = 0, h = 0;
    char x = 0;
    std::istringstream dims(*c.scene);
    if (!(dims >> w >> x >> h) || x != 'x' || w <= 0 || h <= 0) throw ConfigError("--scene expects WxH");
    const TrapScene scene = synthesize_scene(w, h, moths, insects, seed);
    write_pnm(scene.image, root / "scene.pgm");
    std::ofstream csv(root / "planted.csv");
    csv << "x,y,class\n";
    for (const PlantedObject& p : scene.planted) csv << fixed(p.x, 1) << ',' << fixed(p.y, 1) << ',' << to_string(p.label) << '\n';
    out << "wrote " << (root / "scene.pgm").string() << " with " << scene.planted.size() << " objects\n";
    return kOk;
  }
  save_tile_directory(synthetic_tiles(moths, insects, seed), root);
  out << "wrote " << moths << " codling_moth and " << insects << " general_insect tiles to " << root.string() << '\n';
  return kOk;
}

}  // namespace

// --- entry point -----------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pest detection for smart insect traps"};
  app.name("pestdet");
  app.require_subcommand(1);
  app.footer(
      "Exit codes: 0 ok, 1 usage or configuration, 2 I/O, 3 file format, 4 model, 5 battery depleted "
      "during simulate.\nEvery --key flag may also be given as `key = value` in a --config file; flags win.");

  std::map<std::string, std::string> raw;
  std::map<std::string, CLI::Option*> given;
  std::string config_path, hex;
  bool cycle = false;

  auto sub = [&](const char* name, const char* help, std::initializer_list<const char*> keys) {
    CLI::App* s = app.add_subcommand(name, help);
    s->add_option("--config", config_path, "key = value settings file");
    for (const char* k : keys) given[std::string(name) + ":" + k] = s->add_option(std::string("--") + k, raw[k]);
    return s;
  };
  CLI::App* detect_cmd = sub("detect", "Run one application cycle on an image",
                             {"image", "model", "arch", "out", "csv", "report", "threshold", "threads", "trap-id",
                              "timestamp", "soc", "history", "profile", "energy-config", "nms"});
  detect_cmd->add_flag("--cycle", cycle, "print per-stage wall time and the profile's energy");
  sub("train", "Train a classifier on tiles",
      {"arch", "dataset", "tiles", "test-fraction", "epochs", "lr", "batch", "seed", "augment", "prune", "out", "csv"});
  sub("optimize", "Run graph optimization passes on a model", {"model", "arch", "passes", "out"});
  sub("metrics", "Evaluate a model on labeled tiles", {"model", "arch", "dataset", "tiles", "seed", "threshold"});
  sub("simulate", "Simulate battery charge over days",
      {"profile", "lux", "light", "days", "soc", "csv", "energy-config"});
  CLI::App* decode_cmd = sub("report-decode", "Decode an 11-byte trap report", {"report"});
  decode_cmd->add_option("hex", hex, "payload as hex");
  sub("gen-dataset", "Write synthetic tiles or a trap scene", {"out", "moths", "insects", "seed", "scene"});

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    if (args.empty()) {
      out << app.help();
      return kUsage;
    }
    app.exit(e, out, err);
    return kUsage;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  try {
    RunConfig flags;
    for (const auto& [key, opt] : given) {
      if (key.rfind(name + ":", 0) == 0 && opt->count() > 0) {
        set_value(flags, key.substr(name.size() + 1), raw[key.substr(name.size() + 1)]);
      }
    }
    RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
    config = merge(std::move(config), flags);

    if (name == "detect") return cmd_detect(config, cycle, out);
    if (name == "train") return cmd_train(config, out);
    if (name == "optimize") return cmd_optimize(config, out);
    if (name == "metrics") return cmd_metrics(config, out);
    if (name == "simulate") return cmd_simulate(config, out);
    if (name == "report-decode") return cmd_report_decode(config, hex, out);
    return cmd_gen_dataset(config, out);
  } catch (const Depleted&) {
    return kDepleted;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kFormat;
  } catch (const ModelError& e) {
    err << "model error: " << e.what() << '\n';
    return kModel;
  } catch (const TrainingError& e) {
    err << "model error: " << e.what() << '\n';
    return kModel;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
}

}  // namespace pestdet::cli
