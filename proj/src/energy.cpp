#include "pestdet/energy.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "pestdet/errors.hpp"

namespace pestdet {

double cycle_energy(const CycleProfile& profile) {
  const auto t = profile.tasks();
  return std::accumulate(t.begin(), t.end(), 0.0);
}

int largest_task(const CycleProfile& profile) {
  const auto t = profile.tasks();
  return static_cast<int>(std::max_element(t.begin(), t.end()) - t.begin());
}

const std::vector<CycleProfile>& builtin_profiles() {
  static const std::vector<CycleProfile> profiles = {
      {"rpi3-mobilenetv2", 40.7, 2.171, 6.125, 119.1, 2.147, 15.85},
      {"rpi3-lenet", 40.7, 1.674, 5.453, 57.4, 2.147, 15.85},
      {"rpi3-vgg16", 40.7, 1.733, 6.491, 114.3, 2.147, 15.85},
      {"rpi3-mobilenetv2-ncs", 40.7, 2.427, 6.923, 70.34, 2.273, 21.97},
      {"rpi3-lenet-ncs", 40.7, 2.177, 7.054, 59.04, 2.273, 21.97},
      {"rpi3-vgg16-ncs", 40.7, 2.359, 7.041, 73.53, 2.273, 21.97},
      {"rpi4-mobilenetv2", 56.0, 1.327, 5.099, 111.0, 1.822, 24.84},
      {"rpi4-lenet", 56.0, 2.179, 5.139, 49.39, 1.822, 24.84},
      {"rpi4-vgg16", 56.0, 1.907, 5.221, 75.22, 1.822, 24.84},
      {"rpi4-mobilenetv2-ncs", 56.0, 3.385, 6.257, 90.2, 1.822, 24.84},
      {"rpi4-lenet-ncs", 56.0, 1.934, 6.37, 68.28, 1.822, 24.84},
      {"rpi4-vgg16-ncs", 56.0, 2.609, 6.423, 66.33, 1.822, 24.84},
  };
  return profiles;
}

// --- battery ---------------------------------------------------------------

Battery::Battery(double capacity_mah, double nominal_volts, double state_of_charge)
    : capacity_mah_(capacity_mah), nominal_volts_(nominal_volts) {
  if (!(capacity_mah >= 0.0) || !(nominal_volts > 0.0)) {
    throw std::invalid_argument("battery needs a nonnegative capacity and a positive voltage");
  }
  set_state_of_charge(state_of_charge);
}

void Battery::set_state_of_charge(double soc) {
  if (std::isnan(soc)) throw std::invalid_argument("state of charge is NaN");
  soc_ = std::clamp(soc, 0.0, 1.0);
}

double Battery::full_energy() const { return capacity_mah_ / 1000.0 * 3600.0 * nominal_volts_; }

Lifetime lifetime_cycles(const Battery& battery, const CycleProfile& profile) {
  const double per_cycle = cycle_energy(profile);
  if (!(per_cycle > 0.0)) {
    throw std::invalid_argument("profile '" + profile.name + "' consumes no energy per cycle");
  }
  Lifetime life;
  life.cycles = static_cast<long long>(std::floor(battery.energy() / per_cycle));
  life.days = static_cast<double>(life.cycles) / kCyclesPerDay;
  return life;
}

// --- harvesting ------------------------------------------------------------

SolarPanel::SolarPanel(std::vector<Point> points, double width_mm, double height_mm)
    : points_(std::move(points)), width_mm_(width_mm), height_mm_(height_mm) {
  std::sort(points_.begin(), points_.end(), [](const Point& a, const Point& b) { return a.lux < b.lux; });
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const Point& p = points_[i];
    if (!(p.lux >= 0.0) || !(p.watts >= 0.0) || !std::isfinite(p.lux) || !std::isfinite(p.watts)) {
      throw std::invalid_argument("panel points need finite, nonnegative illuminance and power");
    }
    if (i > 0 && p.lux == points_[i - 1].lux) {
      throw std::invalid_argument("panel has two points at " + std::to_string(p.lux) + " lx");
    }
    if (i > 0 && p.watts < points_[i - 1].watts) {
      throw std::invalid_argument("panel power decreases between " + std::to_string(points_[i - 1].lux) +
                                  " and " + std::to_string(p.lux) + " lx");
    }
  }
}

double maximum_power_point(const SolarPanel::IvCurve& curve) {
  double best = 0.0;
  for (const auto& [v, i] : curve) best = std::max(best, v * i);
  return best;
}

SolarPanel SolarPanel::from_iv_curves(const std::vector<std::pair<double, IvCurve>>& curves, double width_mm,
                                      double height_mm) {
  std::vector<Point> points;
  for (const auto& [lux, curve] : curves) points.push_back({lux, maximum_power_point(curve)});
  return SolarPanel(std::move(points), width_mm, height_mm);
}

double SolarPanel::harvest_power(double lux) const {
  if (!(lux >= 0.0)) throw std::invalid_argument("illuminance must be nonnegative");
  if (points_.empty()) return 0.0;
  if (lux <= points_.front().lux) return points_.front().watts;
  if (lux >= points_.back().lux) return points_.back().watts;
  const auto hi = std::upper_bound(points_.begin(), points_.end(), lux,
                                   [](double l, const Point& p) { return l < p.lux; });
  const auto lo = hi - 1;
  const double t = (lux - lo->lux) / (hi->lux - lo->lux);
  return lo->watts + t * (hi->watts - lo->watts);
}

std::optional<double> recharge_time(double energy_needed, const SolarPanel& panel, double lux) {
  if (!(energy_needed >= 0.0)) throw std::invalid_argument("energy needed must be nonnegative");
  if (energy_needed == 0.0) return 0.0;
  const double watts = panel.harvest_power(lux);
  if (watts <= 0.0) return std::nullopt;
  return energy_needed / watts;
}

double full_recharge_energy(const Battery& battery) { return 0.8 * battery.full_energy(); }

// --- simulation ------------------------------------------------------------

Illuminance constant_light(double lux) {
  return [lux](double) { return lux; };
}

Illuminance daylight_hours(double lux, double on_hour, double off_hour) {
  return [=](double t) {
    const double hour = std::fmod(t / 3600.0, 24.0);
    return hour >= on_hour && hour < off_hour ? lux : 0.0;
  };
}

double soc_volts(double soc) { return 3.0 + 1.2 * std::clamp(soc, 0.0, 1.0); }

SimulationResult simulate_soc(const Battery& battery, const CycleProfile& profile, const SolarPanel& panel,
                              const Illuminance& light, const SimulationOptions& options) {
  if (options.days < 1) throw std::invalid_argument("simulation needs at least one day");
  if (!(options.step_seconds > 0.0)) throw std::invalid_argument("simulation step must be positive");
  const double full = battery.full_energy();
  if (!(full > 0.0)) throw std::invalid_argument("battery has no capacity");

  std::vector<double> cycle_times;
  for (int d = 0; d < options.days; ++d) {
    for (double h : options.cycle_hours) {
      if (!(h >= 0.0 && h < 24.0)) throw std::invalid_argument("cycle hours must lie in [0, 24)");
      cycle_times.push_back(d * 86400.0 + h * 3600.0);
    }
  }
  std::sort(cycle_times.begin(), cycle_times.end());

  const double per_cycle = cycle_energy(profile);
  const double end = options.days * 86400.0;
  const auto steps = static_cast<long long>(std::ceil(end / options.step_seconds - 1e-9));

  SimulationResult result;
  double soc = battery.state_of_charge();
  result.samples.push_back({0.0, soc, soc_volts(soc), ""});
  std::size_t next_cycle = 0;
  // A cycle scheduled exactly at t = 0 runs at the end of the first step.
  for (long long k = 0; k < steps; ++k) {
    const double t0 = static_cast<double>(k) * options.step_seconds;
    const double t1 = std::min(end, t0 + options.step_seconds);
    const double harvested = panel.harvest_power(light(t0)) * (t1 - t0);
    result.harvested_j += harvested;
    soc += harvested / full;
    if (soc > 1.0) {
      soc = 1.0;
      result.clamped = true;
    }

    std::string event;
    while (next_cycle < cycle_times.size() && cycle_times[next_cycle] <= t1) {
      soc -= per_cycle / full;
      result.consumed_j += per_cycle;
      ++result.cycles;
      ++next_cycle;
      event = "cycle";
    }
    if (soc <= 0.0) {
      if (soc < 0.0) result.clamped = true;
      soc = 0.0;
      if (!result.depleted_at) {
        result.depleted_at = t1;
        event += event.empty() ? "depleted" : ";depleted";
      }
    }
    result.samples.push_back({t1, soc, soc_volts(soc), std::move(event)});
  }
  return result;
}

std::string soc_csv(const std::vector<SocSample>& samples) {
  std::string out = "t_seconds,soc,volts,event\n";
  char line[96];
  for (const SocSample& s : samples) {
    std::snprintf(line, sizeof line, "%.0f,%.6f,%.4f,", s.t_seconds, s.soc, s.volts);
    out += line;
    out += s.event;
    out += '\n';
  }
  return out;
}

void write_soc_csv(const std::vector<SocSample>& samples, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << soc_csv(samples);
  if (!f) throw IoError("failed writing " + path.string());
}

// --- consistency -----------------------------------------------------------

ConsistencyReport consistency_check(const SolarPanel& panel, const Battery& battery, const CycleProfile& profile,
                                    const std::vector<RechargeObservation>& observations) {
  ConsistencyReport report;
  for (const RechargeObservation& o : observations) {
    if (!(o.full_seconds > 0.0) || !(o.cycle_seconds > 0.0)) {
      throw std::invalid_argument("recharge observations need positive times");
    }
    ConsistencyRow row;
    row.lux = o.lux;
    row.full_watts = full_recharge_energy(battery) / o.full_seconds;
    row.cycle_watts = cycle_energy(profile) / o.cycle_seconds;
    const double mean = 0.5 * (row.full_watts + row.cycle_watts);
    row.relative_gap = mean > 0.0 ? std::abs(row.full_watts - row.cycle_watts) / mean : 0.0;
    row.panel_watts = panel.harvest_power(o.lux);
    row.ok = row.relative_gap <= kConsistencyTolerance;
    report.ok = report.ok && row.ok;
    report.rows.push_back(row);
  }
  return report;
}

// --- configuration ---------------------------------------------------------

EnergyConfig default_energy_config() {
  EnergyConfig c;
  c.battery = Battery(1820.0, 3.7, 0.8);
  c.panel = SolarPanel({{0.0, 0.0}, {2000.0, 0.0895}, {10000.0, 0.412}, {25000.0, 0.727}}, 140.0, 100.0);
  c.profiles = builtin_profiles();
  c.observations = {
      {2000.0, 60.0 * 3600.0, 23.0 * 60.0},
      {10000.0, 13.0 * 3600.0, 5.0 * 60.0},
      {25000.0, 7.0 * 3600.0, 3.0 * 60.0},
  };
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

class LineError {
 public:
  explicit LineError(int line) : line_(line) {}
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("energy config line " + std::to_string(line_) + ": " + what);
  }

 private:
  int line_;
};

std::vector<double> numbers(const std::string& value, std::size_t expected, const LineError& at) {
  std::vector<double> out;
  std::istringstream words(value);
  std::string w;
  while (words >> w) {
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), x);
    if (ec != std::errc() || ptr != w.data() + w.size() || !std::isfinite(x)) {
      at.fail("'" + w + "' is not a number");
    }
    out.push_back(x);
  }
  if (out.size() != expected) {
    at.fail("expected " + std::to_string(expected) + " number" + (expected == 1 ? "" : "s") + ", got " +
            std::to_string(out.size()));
  }
  return out;
}

}  // namespace

EnergyConfig parse_energy_config(const std::string& text) {
  EnergyConfig c = default_energy_config();
  double capacity = c.battery.capacity_mah(), volts = c.battery.nominal_volts(),
         soc = c.battery.state_of_charge();
  double width = c.panel.width_mm(), height = c.panel.height_mm();
  std::optional<std::vector<SolarPanel::Point>> points;
  std::optional<std::vector<CycleProfile>> profiles;
  std::optional<std::vector<RechargeObservation>> observations;
  std::map<std::string, int> seen;

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const LineError at(line_no);
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) at.fail("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    const bool repeatable = key == "panel.point" || key == "recharge.observed";
    if (!repeatable && seen.count(key)) {
      at.fail("'" + key + "' already set on line " + std::to_string(seen[key]));
    }
    seen.emplace(key, line_no);

    if (key == "battery.capacity_mah") {
      capacity = numbers(value, 1, at)[0];
    } else if (key == "battery.nominal_volts") {
      volts = numbers(value, 1, at)[0];
    } else if (key == "battery.soc") {
      soc = numbers(value, 1, at)[0];
    } else if (key == "panel.width_mm") {
      width = numbers(value, 1, at)[0];
    } else if (key == "panel.height_mm") {
      height = numbers(value, 1, at)[0];
    } else if (key == "panel.point") {
      const auto v = numbers(value, 2, at);
      if (!points) points.emplace();
      points->push_back({v[0], v[1]});
    } else if (key == "recharge.observed") {
      const auto v = numbers(value, 3, at);
      if (!observations) observations.emplace();
      observations->push_back({v[0], v[1] * 3600.0, v[2] * 60.0});
    } else if (key.rfind("profile.", 0) == 0 && key.size() > 8) {
      const auto v = numbers(value, 6, at);
      for (double e : v) {
        if (e < 0.0) at.fail("task energies must be nonnegative");
      }
      if (!profiles) profiles.emplace();
      profiles->push_back({key.substr(8), v[0], v[1], v[2], v[3], v[4], v[5]});
    } else {
      at.fail("unknown key '" + key + "'");
    }
  }

  try {
    c.battery = Battery(capacity, volts, soc);
    if (points) c.panel = SolarPanel(std::move(*points), width, height);
    else c.panel = SolarPanel(c.panel.points(), width, height);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("energy config: ") + e.what());
  }
  if (profiles) c.profiles = std::move(*profiles);
  if (observations) c.observations = std::move(*observations);
  return c;
}

EnergyConfig load_energy_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream text;
  text << f.rdbuf();
  return parse_energy_config(text.str());
}

const CycleProfile& find_profile(const EnergyConfig& config, const std::string& name) {
  for (const CycleProfile& p : config.profiles) {
    if (p.name == name) return p;
  }
  std::string known;
  for (const CycleProfile& p : config.profiles) known += (known.empty() ? "" : ", ") + p.name;
  throw std::invalid_argument("unknown profile '" + name + "' (known: " + known + ")");
}

}  // namespace pestdet
