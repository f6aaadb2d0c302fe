#include <gtest/gtest.h>

#include <json.hpp>

#include "mcnn/errors.hpp"
#include "mcnn/metrics.hpp"
#include "mcnn/random.hpp"

using namespace mcnn;

namespace {

// Expands a confusion matrix back into label sequences.
void expand(const std::array<std::array<std::size_t, 2>, 2>& counts, std::vector<int>& y_true, std::vector<int>& y_pred) {
  for (int t = 0; t < 2; ++t)
    for (int p = 0; p < 2; ++p)
      for (std::size_t k = 0; k < counts[t][p]; ++k) {
        y_true.push_back(t);
        y_pred.push_back(p);
      }
}

}  // namespace

TEST(ConfusionMatrix, SmallCases) {
  const ConfusionMatrix a = confusion_matrix(std::vector<int>{0, 1}, std::vector<int>{0, 1});
  EXPECT_EQ(a.counts[0][0], 1u);
  EXPECT_EQ(a.counts[1][1], 1u);
  EXPECT_EQ(a.counts[0][1] + a.counts[1][0], 0u);
  const ConfusionMatrix b = confusion_matrix(std::vector<int>{0, 0, 1}, std::vector<int>{1, 1, 0});
  EXPECT_EQ(b.counts[0][1], 2u);
  EXPECT_EQ(b.counts[1][0], 1u);
  EXPECT_EQ(b.total(), 3u);
  EXPECT_THROW(confusion_matrix(std::vector<int>{0}, std::vector<int>{0, 1}), InvalidArgument);
  EXPECT_THROW(confusion_matrix(std::vector<int>{0, 2}, std::vector<int>{0, 1}), InvalidArgument);
}

TEST(ConfusionMatrix, CountingOracle) {
  Rng rng(17);
  std::vector<int> t(1000), p(1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    t[i] = static_cast<int>(rng.below(2));
    p[i] = static_cast<int>(rng.below(2));
  }
  const ConfusionMatrix cm = confusion_matrix(t, p);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      std::size_t n = 0;
      for (std::size_t i = 0; i < 1000; ++i) n += (t[i] == a && p[i] == b);
      EXPECT_EQ(cm.counts[a][b], n);
    }
  EXPECT_EQ(cm.total(), 1000u);
}

TEST(ClassificationReport, PublishedTable) {
  std::vector<int> y_true, y_pred;
  expand({{{1174, 67}, {43, 1197}}}, y_true, y_pred);
  const ConfusionMatrix cm = confusion_matrix(y_true, y_pred);
  const ClassificationReport r = classification_report(cm);

  // Raw ratios.
  EXPECT_NEAR(r.accuracy, 2371.0 / 2481.0, 1e-12);
  EXPECT_NEAR(r.classes[0].precision, 1174.0 / 1217.0, 1e-12);
  EXPECT_NEAR(r.classes[0].recall, 1174.0 / 1241.0, 1e-12);
  EXPECT_NEAR(r.classes[1].precision, 1197.0 / 1264.0, 1e-12);
  EXPECT_NEAR(r.classes[1].recall, 1197.0 / 1240.0, 1e-12);
  const double p0 = 1174.0 / 1217.0, r0 = 1174.0 / 1241.0;
  EXPECT_NEAR(r.classes[0].f1, 2 * p0 * r0 / (p0 + r0), 1e-12);
  EXPECT_EQ(r.classes[0].support, 1241u);
  EXPECT_EQ(r.classes[1].support, 1240u);

  // Two-decimal published values.
  EXPECT_DOUBLE_EQ(round_half_even(r.accuracy), 0.96);
  EXPECT_DOUBLE_EQ(round_half_even(r.classes[0].precision), 0.96);
  EXPECT_DOUBLE_EQ(round_half_even(r.classes[0].recall), 0.95);
  EXPECT_DOUBLE_EQ(round_half_even(r.classes[0].f1), 0.96);
  EXPECT_DOUBLE_EQ(round_half_even(r.classes[1].precision), 0.95);
  EXPECT_DOUBLE_EQ(round_half_even(r.classes[1].recall), 0.97);
  EXPECT_DOUBLE_EQ(round_half_even(r.classes[1].f1), 0.96);
  EXPECT_TRUE(r.warnings.empty());

  const std::string text = report_to_text(r);
  EXPECT_NE(text.find("0.96"), std::string::npos);
  EXPECT_NE(text.find("accuracy"), std::string::npos);
}

TEST(ClassificationReport, PerfectAndDegenerate) {
  ConfusionMatrix perfect;
  perfect.counts = {{{5, 0}, {0, 7}}};
  const ClassificationReport p = classification_report(perfect);
  EXPECT_EQ(p.accuracy, 1.0);
  for (const ClassScores& s : p.classes) {
    EXPECT_EQ(s.precision, 1.0);
    EXPECT_EQ(s.recall, 1.0);
    EXPECT_EQ(s.f1, 1.0);
  }

  ConfusionMatrix absent;
  absent.counts = {{{4, 2}, {0, 0}}};
  const ClassificationReport a = classification_report(absent);
  EXPECT_EQ(a.classes[1].recall, 0.0);
  EXPECT_EQ(a.classes[1].f1, 0.0);
  EXPECT_NEAR(a.accuracy, 4.0 / 6.0, 1e-15);
  EXPECT_FALSE(a.warnings.empty());
  EXPECT_NE(report_to_text(a).find("warning:"), std::string::npos);

  EXPECT_THROW(classification_report(ConfusionMatrix{}), InvalidArgument);
}

TEST(ClassificationReport, Properties) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(200);
    std::vector<int> y(n), q(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<int>(rng.below(2));
      q[i] = static_cast<int>(rng.below(2));
    }
    EXPECT_EQ(classification_report(confusion_matrix(y, y)).accuracy, 1.0);
    const ClassificationReport r = classification_report(confusion_matrix(y, q));
    // Accuracy is the support-weighted mean recall.
    const double weighted = (r.classes[0].recall * r.classes[0].support + r.classes[1].recall * r.classes[1].support) /
                            static_cast<double>(n);
    EXPECT_NEAR(r.accuracy, weighted, 1e-12);
    for (const ClassScores& s : r.classes) {
      for (double v : {s.precision, s.recall, s.f1}) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(RoundHalfEven, Ties) {
  EXPECT_EQ(round_half_even(0.5, 0), 0.0);
  EXPECT_EQ(round_half_even(1.5, 0), 2.0);
  EXPECT_EQ(round_half_even(2.5, 0), 2.0);
  EXPECT_EQ(round_half_even(0.125, 2), 0.12);
  EXPECT_EQ(round_half_even(0.375, 2), 0.38);
  EXPECT_DOUBLE_EQ(round_half_even(0.9557), 0.96);
  EXPECT_DOUBLE_EQ(round_half_even(0.9460), 0.95);
}

TEST(ReportJson, Keys) {
  ConfusionMatrix cm;
  cm.counts = {{{1174, 67}, {43, 1197}}};
  const auto doc = nlohmann::json::parse(report_to_json(classification_report(cm), cm));
  EXPECT_NEAR(doc["accuracy"].get<double>(), 2371.0 / 2481.0, 1e-15);
  for (const char* name : {"parasitized", "uninfected"}) {
    ASSERT_TRUE(doc["classes"].contains(name)) << name;
    for (const char* key : {"precision", "recall", "f1", "support"}) EXPECT_TRUE(doc["classes"][name].contains(key));
  }
  EXPECT_EQ(doc["confusion"][0][1].get<int>(), 67);
  EXPECT_EQ(doc["confusion"][1][0].get<int>(), 43);
  EXPECT_TRUE(doc["warnings"].empty());
}
