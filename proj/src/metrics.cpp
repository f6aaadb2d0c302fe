#include "mcnn/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "mcnn/data.hpp"
#include "mcnn/errors.hpp"

namespace mcnn {

std::size_t ConfusionMatrix::total() const {
  return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
}

ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.size() != y_pred.size()) {
    throw InvalidArgument("confusion_matrix: " + std::to_string(y_true.size()) + " true labels vs " +
                          std::to_string(y_pred.size()) + " predictions");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_true[i] > 1 || y_pred[i] < 0 || y_pred[i] > 1) {
      throw InvalidArgument("confusion_matrix: label out of range at position " + std::to_string(i));
    }
    ++cm.counts[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])];
  }
  return cm;
}

ClassificationReport classification_report(const ConfusionMatrix& cm) {
  const std::size_t total = cm.total();
  if (total == 0) throw InvalidArgument("classification_report of an empty confusion matrix");
  ClassificationReport report;
  for (std::size_t c = 0; c < 2; ++c) {
    ClassScores& s = report.classes[c];
    const std::size_t tp = cm.counts[c][c];
    const std::size_t predicted = cm.counts[0][c] + cm.counts[1][c];
    const std::size_t actual = cm.counts[c][0] + cm.counts[c][1];
    s.support = actual;
    const std::string name = label_name(static_cast<int>(c));
    if (predicted > 0) {
      s.precision = static_cast<double>(tp) / static_cast<double>(predicted);
    } else {
      report.warnings.push_back(name + ": precision undefined (no predictions), reported as 0");
    }
    if (actual > 0) {
      s.recall = static_cast<double>(tp) / static_cast<double>(actual);
    } else {
      report.warnings.push_back(name + ": recall undefined (no true samples), reported as 0");
    }
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  }
  report.accuracy = static_cast<double>(cm.counts[0][0] + cm.counts[1][1]) / static_cast<double>(total);
  return report;
}

double round_half_even(double value, int decimals) {
  const double factor = std::pow(10.0, decimals);
  const double scaled = value * factor;
  const double floor = std::floor(scaled);
  const double diff = scaled - floor;
  double rounded;
  if (diff > 0.5) rounded = floor + 1.0;
  else if (diff < 0.5) rounded = floor;
  else rounded = std::fmod(floor, 2.0) == 0.0 ? floor : floor + 1.0;
  return rounded / factor;
}

std::string report_to_json(const ClassificationReport& report, const ConfusionMatrix& cm) {
  nlohmann::ordered_json doc;
  doc["accuracy"] = report.accuracy;
  nlohmann::ordered_json classes;
  for (std::size_t c = 0; c < 2; ++c) {
    const ClassScores& s = report.classes[c];
    classes[label_name(static_cast<int>(c))] = {
        {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
  }
  doc["classes"] = classes;
  doc["confusion"] = {{cm.counts[0][0], cm.counts[0][1]}, {cm.counts[1][0], cm.counts[1][1]}};
  doc["warnings"] = report.warnings;
  return doc.dump(2) + "\n";
}

std::string report_to_text(const ClassificationReport& report) {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof(line), "%-14s%10s%10s%10s%10s\n", "", "precision", "recall", "f1-score", "support");
  out << line;
  for (std::size_t c = 0; c < 2; ++c) {
    const ClassScores& s = report.classes[c];
    std::snprintf(line, sizeof(line), "%-14s%10.2f%10.2f%10.2f%10zu\n", label_name(static_cast<int>(c)),
                  round_half_even(s.precision), round_half_even(s.recall), round_half_even(s.f1), s.support);
    out << line;
  }
  std::snprintf(line, sizeof(line), "%-14s%30.2f%10zu\n", "accuracy", round_half_even(report.accuracy),
                report.classes[0].support + report.classes[1].support);
  out << line;
  for (const std::string& w : report.warnings) out << "warning: " << w << '\n';
  return out.str();
}

}  // namespace mcnn
