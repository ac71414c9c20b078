#pragma once

#include <string>
#include <vector>

#include "hsbi/model.hpp"

namespace hsbi {

enum class TaskId {
    GaussianLinear,
    GaussianLinearUniform,
    GaussianMixture,
    SIR,
    SLCP,
    TwoMoons,
    SEIR,
};

// Registry addressable by name ("gaussian_linear", "sir", ...). Throws
// ConfigError listing the registry for unknown names.
const HierarchicalModelSpec& get_task(const std::string& name);
const HierarchicalModelSpec& get_task(TaskId id);
std::vector<std::string> task_names();
TaskId task_id_from_name(const std::string& name);

// Sorted i.i.d. Uniform(0, horizon) observation times.
std::vector<double> sample_schedule(const HierarchicalModelSpec& model, int n_points,
                                    double horizon, std::uint64_t seed);

// Default schedule for a model (empty for fixed-dimension tasks).
std::vector<double> default_schedule(const HierarchicalModelSpec& model, std::uint64_t seed);

namespace task_constants {
// SIR (fixed-dimension count series)
inline constexpr double kSirPopulation = 1e6;
inline constexpr double kSirInitialInfected = 1.0;
inline constexpr long kSirBinomialTrials = 1000;
inline constexpr int kSirObsPoints = 10;
inline constexpr double kSirHorizonDays = 160.0;
// SLCP
inline constexpr int kSlcpDrawsPerSite = 4;
// SEIR (functional observations)
inline constexpr double kSeirPopulation = 1e5;
inline constexpr double kSeirInitialExposed = 10.0;
inline constexpr double kSeirIncubationRate = 1.0 / 5.0;   // alpha
inline constexpr double kSeirRecoveryRate = 1.0 / 7.0;     // gamma
inline constexpr double kSeirSeasonalPhase = 0.0;          // phi
inline constexpr double kSeirHorizonDays = 730.0;
inline constexpr int kSeirPointsPerSite = 12;
}  // namespace task_constants

}  // namespace hsbi
