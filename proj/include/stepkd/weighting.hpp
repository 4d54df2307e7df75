#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stepkd/distill.hpp"

namespace stepkd {

// Per-stage values in init, exp, agg order.
using Triple = std::array<double, 3>;

inline constexpr std::size_t stage_index(Stage s) { return static_cast<std::size_t>(s); }

struct StageLosses {
    double init = 0.0;
    double exp = 0.0;
    double agg = 0.0;

    Triple values() const { return {init, exp, agg}; }
    static StageLosses from(const Triple& t) { return {t[0], t[1], t[2]}; }
    bool operator==(const StageLosses&) const = default;
};

struct LossSample {
    std::string record_id;
    Stage stage = Stage::init;
    double loss = 0.0;
};

struct GroupedLosses {
    StageLosses losses;
    std::array<std::size_t, 3> counts{};
    // One message per stage that had no records (its loss is reported as 0).
    std::vector<std::string> warnings;
};

// Mean loss per stage. Throws ValidationError naming the record when a loss
// is negative or not finite.
GroupedLosses group_losses(std::span<const LossSample> samples);

// Trainable per-stage difficulty, stored as eta_j = ln(sigma_j) so that every
// reachable state has sigma_j > 0.
class SigmaState {
public:
    SigmaState() = default;  // sigma = (1, 1, 1)

    static SigmaState from_sigma(const Triple& sigma);  // throws ConfigError unless all > 0 and finite
    static SigmaState from_log_sigma(const Triple& eta);

    double sigma(std::size_t j) const;
    Triple sigmas() const;
    const Triple& log_sigmas() const { return eta_; }

    bool operator==(const SigmaState&) const = default;

private:
    Triple eta_{0.0, 0.0, 0.0};
};

// sum_j L_j / (2 sigma_j^2) + ln sigma_j
double total_loss(const StageLosses& losses, const SigmaState& sigma);

// d/d sigma_j = -L_j / sigma_j^3 + 1 / sigma_j
Triple grad_sigma(const StageLosses& losses, const SigmaState& sigma);
// d/d eta_j = -L_j / sigma_j^2 + 1
Triple grad_log_sigma(const StageLosses& losses, const SigmaState& sigma);

// One gradient-descent step in log space. learning_rate must be >= 0.
SigmaState step_update(const SigmaState& sigma, const StageLosses& losses, double learning_rate);

enum class WeightScheme { uniform, weight_first, weight_last, adaptive };

WeightScheme weight_scheme_from_string(std::string_view s);
std::string_view to_string(WeightScheme s);
// Fixed lambda triples; throws ConfigError for `adaptive`.
Triple fixed_lambdas(WeightScheme scheme);

// sum_j lambda_j L_j; lambda must be non-negative.
double fixed_loss(const StageLosses& losses, const Triple& lambda);

// sigma_j / sum_k sigma_k
Triple normalized_sigma(const SigmaState& sigma);
// lambda_j = 1 / (2 sigma_j^2)
Triple effective_lambda(const SigmaState& sigma);

struct SimulationResult {
    std::vector<SigmaState> history;  // history[0] is the initial state
    std::size_t iterations = 0;
    bool converged = false;
};

inline constexpr double kConvergenceTolerance = 1e-3;
inline constexpr std::size_t kMaxSimulationSteps = 10'000;

// Repeated step_update under constant losses. With `tolerance` set, stops as
// soon as max_j |sigma_j - sqrt(L_j)| < tolerance.
SimulationResult simulate(const StageLosses& losses, SigmaState start, double learning_rate,
                          std::size_t max_steps, std::optional<double> tolerance = kConvergenceTolerance);

struct ScheduleEntry {
    std::size_t step = 0;
    Triple sigma{};
    Triple sigma_normalized{};
    Triple lambda{};

    bool operator==(const ScheduleEntry&) const = default;
};

ScheduleEntry schedule_entry(std::size_t step, const SigmaState& sigma);

// One line per state: {"step", "sigma", "sigma_normalized", "lambda"}.
void export_schedule(const std::filesystem::path& path, std::span<const SigmaState> history,
                     std::size_t first_step = 0);
void write_schedule(const std::filesystem::path& path, std::span<const ScheduleEntry> entries);
std::vector<ScheduleEntry> read_schedule(const std::filesystem::path& path);

struct GradCheckResult {
    std::size_t trials = 0;
    std::size_t failures = 0;
    double max_error = 0.0;  // max over components of |analytic - numeric| / max(1, |analytic|, |numeric|)
};

// Compares grad_sigma against central differences of total_loss at random
// L in [0, 10], sigma in [0.1, 5].
GradCheckResult grad_check(std::size_t trials, std::uint64_t seed, double step = 1e-6, double tolerance = 1e-6);

// Cross-language parity vectors: random (L, sigma) points with the loss and
// both gradients, one JSON object per line.
void write_parity_fixture(const std::filesystem::path& path, std::size_t points, std::uint64_t seed);

}  // namespace stepkd
