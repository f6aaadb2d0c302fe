#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

namespace mcnn {

// counts[true][predicted] over (parasitized, uninfected).
struct ConfusionMatrix {
  std::array<std::array<std::size_t, 2>, 2> counts{};

  std::size_t total() const;
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred);

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct ClassificationReport {
  std::array<ClassScores, 2> classes{};
  double accuracy = 0.0;
  // One message per score whose denominator was zero (reported as 0).
  std::vector<std::string> warnings;
};

ClassificationReport classification_report(const ConfusionMatrix& cm);

// Round half to even at `decimals` places.
double round_half_even(double value, int decimals = 2);

// {accuracy, classes:{name:{precision,recall,f1,support}}, confusion, warnings}
// with full-precision scores.
std::string report_to_json(const ClassificationReport& report, const ConfusionMatrix& cm);

// Two-decimal table in the usual precision / recall / f1-score layout.
std::string report_to_text(const ClassificationReport& report);

}  // namespace mcnn
