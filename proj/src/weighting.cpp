#include "stepkd/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "stepkd/errors.hpp"
#include "stepkd/jsonl.hpp"

namespace stepkd {

using jsonl::json;

GroupedLosses group_losses(std::span<const LossSample> samples) {
    GroupedLosses out;
    Triple sums{0.0, 0.0, 0.0};
    for (const auto& s : samples) {
        if (!std::isfinite(s.loss) || s.loss < 0.0)
            throw ValidationError("record '" + s.record_id + "' has invalid loss " + std::to_string(s.loss));
        const std::size_t j = stage_index(s.stage);
        sums[j] += s.loss;
        ++out.counts[j];
    }
    Triple means{0.0, 0.0, 0.0};
    for (std::size_t j = 0; j < 3; ++j) {
        if (out.counts[j] == 0) {
            out.warnings.push_back("no " + std::string(to_string(static_cast<Stage>(j))) +
                                   " records; stage loss set to 0");
            continue;
        }
        means[j] = sums[j] / static_cast<double>(out.counts[j]);
    }
    out.losses = StageLosses::from(means);
    return out;
}

SigmaState SigmaState::from_sigma(const Triple& sigma) {
    Triple eta{};
    for (std::size_t j = 0; j < 3; ++j) {
        if (!(sigma[j] > 0.0) || !std::isfinite(sigma[j]))
            throw ConfigError("sigma values must be finite and > 0");
        eta[j] = std::log(sigma[j]);
    }
    return from_log_sigma(eta);
}

SigmaState SigmaState::from_log_sigma(const Triple& eta) {
    for (double e : eta)
        if (!std::isfinite(e)) throw ConfigError("log-sigma values must be finite");
    SigmaState s;
    s.eta_ = eta;
    return s;
}

double SigmaState::sigma(std::size_t j) const { return std::exp(eta_[j]); }

Triple SigmaState::sigmas() const { return {sigma(0), sigma(1), sigma(2)}; }

double total_loss(const StageLosses& losses, const SigmaState& sigma) {
    const Triple l = losses.values();
    double total = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
        const double s = sigma.sigma(j);
        total += l[j] / (2.0 * s * s) + sigma.log_sigmas()[j];
    }
    return total;
}

Triple grad_sigma(const StageLosses& losses, const SigmaState& sigma) {
    const Triple l = losses.values();
    Triple g{};
    for (std::size_t j = 0; j < 3; ++j) {
        const double s = sigma.sigma(j);
        g[j] = -l[j] / (s * s * s) + 1.0 / s;
    }
    return g;
}

Triple grad_log_sigma(const StageLosses& losses, const SigmaState& sigma) {
    const Triple l = losses.values();
    Triple g{};
    for (std::size_t j = 0; j < 3; ++j) {
        // sigma^-2 computed directly from eta to avoid squaring a rounded exp.
        g[j] = -l[j] * std::exp(-2.0 * sigma.log_sigmas()[j]) + 1.0;
    }
    return g;
}

SigmaState step_update(const SigmaState& sigma, const StageLosses& losses, double learning_rate) {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("learning rate must be finite and >= 0");
    const Triple g = grad_log_sigma(losses, sigma);
    Triple eta = sigma.log_sigmas();
    for (std::size_t j = 0; j < 3; ++j) eta[j] -= learning_rate * g[j];
    return SigmaState::from_log_sigma(eta);
}

WeightScheme weight_scheme_from_string(std::string_view s) {
    if (s == "uniform") return WeightScheme::uniform;
    if (s == "weight_first") return WeightScheme::weight_first;
    if (s == "weight_last") return WeightScheme::weight_last;
    if (s == "adaptive") return WeightScheme::adaptive;
    throw ConfigError("unknown weighting scheme '" + std::string(s) + "'");
}

std::string_view to_string(WeightScheme s) {
    switch (s) {
        case WeightScheme::uniform: return "uniform";
        case WeightScheme::weight_first: return "weight_first";
        case WeightScheme::weight_last: return "weight_last";
        case WeightScheme::adaptive: return "adaptive";
    }
    return "adaptive";
}

Triple fixed_lambdas(WeightScheme scheme) {
    switch (scheme) {
        case WeightScheme::uniform: return {1.0, 1.0, 1.0};
        case WeightScheme::weight_first: return {1.5, 1.0, 0.5};
        case WeightScheme::weight_last: return {0.5, 1.0, 1.5};
        case WeightScheme::adaptive: break;
    }
    throw ConfigError("the adaptive scheme has no fixed lambdas");
}

double fixed_loss(const StageLosses& losses, const Triple& lambda) {
    const Triple l = losses.values();
    double total = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
        if (!(lambda[j] >= 0.0)) throw ConfigError("lambda values must be >= 0");
        total += lambda[j] * l[j];
    }
    return total;
}

Triple normalized_sigma(const SigmaState& sigma) {
    const Triple s = sigma.sigmas();
    const double sum = s[0] + s[1] + s[2];
    return {s[0] / sum, s[1] / sum, s[2] / sum};
}

Triple effective_lambda(const SigmaState& sigma) {
    Triple out{};
    for (std::size_t j = 0; j < 3; ++j) out[j] = 0.5 * std::exp(-2.0 * sigma.log_sigmas()[j]);
    return out;
}

SimulationResult simulate(const StageLosses& losses, SigmaState start, double learning_rate,
                          std::size_t max_steps, std::optional<double> tolerance) {
    const Triple target{std::sqrt(losses.init), std::sqrt(losses.exp), std::sqrt(losses.agg)};
    auto close_enough = [&](const SigmaState& s) {
        if (!tolerance) return false;
        double worst = 0.0;
        for (std::size_t j = 0; j < 3; ++j) worst = std::max(worst, std::abs(s.sigma(j) - target[j]));
        return worst < *tolerance;
    };
    SimulationResult result;
    result.history.push_back(start);
    result.converged = close_enough(start);
    while (!result.converged && result.iterations < max_steps) {
        result.history.push_back(step_update(result.history.back(), losses, learning_rate));
        ++result.iterations;
        result.converged = close_enough(result.history.back());
    }
    return result;
}

ScheduleEntry schedule_entry(std::size_t step, const SigmaState& sigma) {
    return {step, sigma.sigmas(), normalized_sigma(sigma), effective_lambda(sigma)};
}

void export_schedule(const std::filesystem::path& path, std::span<const SigmaState> history,
                     std::size_t first_step) {
    if (history.empty()) throw ValidationError("schedule export needs at least one sigma state");
    std::vector<ScheduleEntry> entries;
    entries.reserve(history.size());
    for (std::size_t i = 0; i < history.size(); ++i) entries.push_back(schedule_entry(first_step + i, history[i]));
    write_schedule(path, entries);
}

void write_schedule(const std::filesystem::path& path, std::span<const ScheduleEntry> entries) {
    auto out = jsonl::open_for_write(path);
    for (const auto& e : entries)
        out << jsonl::to_line(json{{"step", e.step},
                                   {"sigma", e.sigma},
                                   {"sigma_normalized", e.sigma_normalized},
                                   {"lambda", e.lambda}});
    if (!out) throw IoError("failed writing schedule '" + path.string() + "'");
}

std::vector<ScheduleEntry> read_schedule(const std::filesystem::path& path) {
    std::vector<ScheduleEntry> out;
    jsonl::for_each_object(path, [&](const json& obj, std::size_t line) {
        auto triple = [&](const char* field) {
            const json& v = jsonl::require(obj, field, line);
            if (!v.is_array() || v.size() != 3) throw SchemaError(line, field, "expected 3 numbers");
            Triple t{};
            for (std::size_t j = 0; j < 3; ++j) {
                if (!v[j].is_number()) throw SchemaError(line, field, "expected 3 numbers");
                t[j] = v[j].get<double>();
            }
            return t;
        };
        const auto step = jsonl::require_int(obj, "step", line);
        if (step < 0) throw SchemaError(line, "step", "must be >= 0");
        out.push_back({static_cast<std::size_t>(step), triple("sigma"), triple("sigma_normalized"), triple("lambda")});
    });
    return out;
}

namespace {

struct RandomPoint {
    StageLosses losses;
    SigmaState sigma;
};

RandomPoint random_point(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> loss(0.0, 10.0);
    std::uniform_real_distribution<double> sig(0.1, 5.0);
    RandomPoint p;
    p.losses = {loss(rng), loss(rng), loss(rng)};
    p.sigma = SigmaState::from_sigma({sig(rng), sig(rng), sig(rng)});
    return p;
}

}  // namespace

GradCheckResult grad_check(std::size_t trials, std::uint64_t seed, double step, double tolerance) {
    std::mt19937_64 rng(seed);
    GradCheckResult result;
    for (std::size_t t = 0; t < trials; ++t) {
        const RandomPoint p = random_point(rng);
        const Triple analytic = grad_sigma(p.losses, p.sigma);
        const Triple s = p.sigma.sigmas();
        bool failed = false;
        for (std::size_t j = 0; j < 3; ++j) {
            Triple up = s;
            Triple down = s;
            up[j] += step;
            down[j] -= step;
            const double numeric = (total_loss(p.losses, SigmaState::from_sigma(up)) -
                                    total_loss(p.losses, SigmaState::from_sigma(down))) /
                                   (2.0 * step);
            const double scale = std::max({1.0, std::abs(analytic[j]), std::abs(numeric)});
            const double err = std::abs(analytic[j] - numeric) / scale;
            result.max_error = std::max(result.max_error, err);
            failed = failed || err > tolerance;
        }
        ++result.trials;
        if (failed) ++result.failures;
    }
    return result;
}

void write_parity_fixture(const std::filesystem::path& path, std::size_t points, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto out = jsonl::open_for_write(path);
    for (std::size_t i = 0; i < points; ++i) {
        const RandomPoint p = random_point(rng);
        out << jsonl::to_line(json{{"losses", p.losses.values()},
                                   {"sigma", p.sigma.sigmas()},
                                   {"total", total_loss(p.losses, p.sigma)},
                                   {"grad_sigma", grad_sigma(p.losses, p.sigma)},
                                   {"grad_log_sigma", grad_log_sigma(p.losses, p.sigma)}});
    }
    if (!out) throw IoError("failed writing fixture '" + path.string() + "'");
}

}  // namespace stepkd
