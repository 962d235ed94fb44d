#include <algorithm>
#include <cmath>

#include "topro/errors.hpp"
#include "topro/scoring.hpp"

namespace topro {

GradientCheckReport finite_difference_gradient_check(
    std::span<double> parameters, const std::function<double()>& loss,
    std::span<const double> analytic, double epsilon, double tolerance) {
  if (analytic.size() != parameters.size()) {
    throw UsageError("analytic gradient has " +
                     std::to_string(analytic.size()) + " entries for " +
                     std::to_string(parameters.size()) + " parameters");
  }
  if (!(epsilon > 0.0)) throw UsageError("epsilon must be positive");

  GradientCheckReport report;
  report.coordinates = parameters.size();
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    const double original = parameters[i];
    parameters[i] = original + epsilon;
    const double plus = loss();
    parameters[i] = original - epsilon;
    const double minus = loss();
    parameters[i] = original;

    const double numeric = (plus - minus) / (2.0 * epsilon);
    const double scale = std::max(
        {std::abs(numeric), std::abs(analytic[i]), kGradientCheckFloor});
    const double rel = std::abs(numeric - analytic[i]) / scale;
    if (i == 0 || rel > report.worst_relative_error) {
      report.worst_coordinate = i;
      report.worst_relative_error = rel;
      report.analytic_at_worst = analytic[i];
      report.numeric_at_worst = numeric;
    }
  }
  if (report.worst_relative_error > tolerance) {
    throw GradientMismatch(report.worst_coordinate, report.analytic_at_worst,
                           report.numeric_at_worst,
                           report.worst_relative_error);
  }
  return report;
}

GradientCheckReport finite_difference_gradient_check(
    TinyScorer& scorer, std::span<const PromptInstance> prompts,
    std::span<const std::string> gold_words,
    std::span<const std::string> candidates, double epsilon,
    double tolerance) {
  std::vector<double> analytic(scorer.parameter_count(), 0.0);
  scorer.loss_and_gradient(prompts, gold_words, candidates, analytic);
  auto loss = [&] {
    return scorer.loss_and_gradient(prompts, gold_words, candidates, {}).loss;
  };
  return finite_difference_gradient_check(scorer.parameters(), loss, analytic,
                                          epsilon, tolerance);
}

}  // namespace topro
