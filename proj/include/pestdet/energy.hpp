#ifndef PESTDET_ENERGY_HPP
#define PESTDET_ENERGY_HPP

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pestdet {

// --- cycle energy ----------------------------------------------------------

/// Per-task energy of one application cycle, joules.
struct CycleProfile {
  std::string name;
  double boot = 0.0;
  double capture = 0.0;     // Task 1
  double preprocess = 0.0;  // Task 2
  double inference = 0.0;   // Task 3
  double radio = 0.0;       // Task 4
  double shutdown = 0.0;

  std::array<double, 6> tasks() const { return {boot, capture, preprocess, inference, radio, shutdown}; }
};

inline constexpr std::array<const char*, 6> kTaskNames = {"boot", "task1", "task2", "task3", "task4", "shutdown"};

double cycle_energy(const CycleProfile& profile);

/// Index into tasks() of the most expensive task.
int largest_task(const CycleProfile& profile);

/// The twelve measured hardware/model configurations, Pi3 columns first.
const std::vector<CycleProfile>& builtin_profiles();

// --- battery ---------------------------------------------------------------

class Battery {
 public:
  Battery() = default;
  Battery(double capacity_mah, double nominal_volts, double state_of_charge = 1.0);

  double capacity_mah() const { return capacity_mah_; }
  double nominal_volts() const { return nominal_volts_; }
  double state_of_charge() const { return soc_; }
  void set_state_of_charge(double soc);  // clamped to [0, 1]

  double full_energy() const;  // joules at SoC 1
  double energy() const { return full_energy() * soc_; }

 private:
  double capacity_mah_ = 1820.0;
  double nominal_volts_ = 3.7;
  double soc_ = 1.0;
};

struct Lifetime {
  long long cycles = 0;
  double days = 0.0;  // two cycles per day
};

inline constexpr int kCyclesPerDay = 2;

/// Whole cycles the battery's current charge supplies. Throws
/// std::invalid_argument for a profile that consumes no energy.
Lifetime lifetime_cycles(const Battery& battery, const CycleProfile& profile);

// --- harvesting ------------------------------------------------------------

/// Harvested power at the charger output as a function of illuminance.
class SolarPanel {
 public:
  struct Point {
    double lux = 0.0;
    double watts = 0.0;
  };
  using IvCurve = std::vector<std::pair<double, double>>;  // (volts, amps)

  SolarPanel() = default;

  /// Points are sorted by illuminance. Throws std::invalid_argument on negative
  /// or duplicate illuminances, negative power, or power that decreases with
  /// illuminance.
  explicit SolarPanel(std::vector<Point> points, double width_mm = 140.0, double height_mm = 100.0);

  /// One characterized point per curve, at its maximum power point.
  static SolarPanel from_iv_curves(const std::vector<std::pair<double, IvCurve>>& curves,
                                   double width_mm = 140.0, double height_mm = 100.0);

  /// Linear interpolation between points, held constant outside them. An
  /// empty panel harvests nothing. Throws std::invalid_argument for lux < 0.
  double harvest_power(double lux) const;

  const std::vector<Point>& points() const { return points_; }
  double width_mm() const { return width_mm_; }
  double height_mm() const { return height_mm_; }

 private:
  std::vector<Point> points_;
  double width_mm_ = 140.0;
  double height_mm_ = 100.0;
};

/// Maximum of V * I over the curve's samples; 0 for an empty curve.
double maximum_power_point(const SolarPanel::IvCurve& curve);

/// Seconds to harvest `energy_needed` joules at `lux`, or nullopt when the
/// panel harvests nothing there. The device draws no power while charging.
std::optional<double> recharge_time(double energy_needed, const SolarPanel& panel, double lux);

/// Energy to bring the battery from 20% to 100% charge.
double full_recharge_energy(const Battery& battery);

// --- simulation ------------------------------------------------------------

/// Illuminance in lux at a time in seconds from the start of the run.
using Illuminance = std::function<double(double)>;

Illuminance constant_light(double lux);

/// `lux` between the two hours of every day, darkness otherwise.
Illuminance daylight_hours(double lux, double on_hour = 6.0, double off_hour = 18.0);

struct SimulationOptions {
  int days = 3;
  std::vector<double> cycle_hours = {8.0, 20.0};
  double step_seconds = 60.0;
};

struct SocSample {
  double t_seconds = 0.0;
  double soc = 0.0;
  double volts = 0.0;
  std::string event;  // "", "cycle", "depleted" or "cycle;depleted"
};

struct SimulationResult {
  std::vector<SocSample> samples;  // initial state, then one per step
  std::optional<double> depleted_at;
  bool clamped = false;        // charge was lost to the full or empty limit
  double harvested_j = 0.0;    // energy offered by the panel
  double consumed_j = 0.0;     // cycle energy drawn
  int cycles = 0;
};

/// Open-circuit voltage plotted for a state of charge: 3.0 V empty to 4.2 V full.
double soc_volts(double soc);

/// Steps the battery's state of charge forward: each step adds the energy
/// harvested at the illuminance of the step's start (SoC capped at 1); a cycle
/// whose time falls within the step is drawn at its end. The SoC floors at 0
/// and the first time it gets there is reported; the run goes on.
SimulationResult simulate_soc(const Battery& battery, const CycleProfile& profile, const SolarPanel& panel,
                              const Illuminance& light, const SimulationOptions& options = {});

/// Header `t_seconds,soc,volts,event`.
std::string soc_csv(const std::vector<SocSample>& samples);
void write_soc_csv(const std::vector<SocSample>& samples, const std::filesystem::path& path);

// --- consistency -----------------------------------------------------------

/// Measured charging times at one illuminance.
struct RechargeObservation {
  double lux = 0.0;
  double full_seconds = 0.0;   // 20% -> 100%
  double cycle_seconds = 0.0;  // one application cycle
};

struct ConsistencyRow {
  double lux = 0.0;
  double full_watts = 0.0;   // implied by the full-charge time
  double cycle_watts = 0.0;  // implied by the single-cycle time
  double relative_gap = 0.0; // |difference| / mean of the two
  double panel_watts = 0.0;  // the panel model at this illuminance
  bool ok = false;
};

struct ConsistencyReport {
  std::vector<ConsistencyRow> rows;
  bool ok = true;
};

inline constexpr double kConsistencyTolerance = 0.15;

ConsistencyReport consistency_check(const SolarPanel& panel, const Battery& battery, const CycleProfile& profile,
                                    const std::vector<RechargeObservation>& observations);

// --- configuration ---------------------------------------------------------

struct EnergyConfig {
  Battery battery;
  SolarPanel panel;
  std::vector<CycleProfile> profiles;
  std::vector<RechargeObservation> observations;
};

/// Built-in values; identical to data/energy_defaults.conf.
EnergyConfig default_energy_config();

/// Parses the key=value format of data/energy_defaults.conf. Keys not given
/// keep their defaults, except that any `panel.point`, `profile.*` or
/// `recharge.observed` line replaces the whole default list it belongs to.
/// Throws FormatError naming the line on unknown keys or bad values.
EnergyConfig parse_energy_config(const std::string& text);
EnergyConfig load_energy_config(const std::filesystem::path& path);

/// Throws std::invalid_argument listing the known names.
const CycleProfile& find_profile(const EnergyConfig& config, const std::string& name);

}  // namespace pestdet

#endif  // PESTDET_ENERGY_HPP
