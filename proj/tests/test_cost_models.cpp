#include <gtest/gtest.h>

#include <limits>
#include <vector>

#include "edgesplit/cost_models.hpp"

using namespace edgesplit;

namespace {

PartitionSummary worked_summary() {
  PartitionSummary s;
  s.download_bytes = 1'000'000;
  s.local_flops = 5'000'000'000;
  s.upload_bytes = 250'000;
  s.edge_flops = 10'000'000'000;
  return s;
}

}  // namespace

TEST(Delay, WorkedExample) {
  const auto d = delay_components(worked_summary(), 1, 8e6, 4e6, 10e9, 20e9, true, 15.0);
  EXPECT_NEAR(d.download_s, 1.0, 1e-12);
  EXPECT_NEAR(d.local_s, 0.5, 1e-12);
  EXPECT_NEAR(d.upload_s, 0.5, 1e-12);
  EXPECT_NEAR(d.edge_s, 0.5, 1e-12);
  EXPECT_NEAR(d.total_s, 2.5, 1e-12);
  EXPECT_FALSE(d.failed);
}

TEST(Delay, UnitAudit) {
  // bytes -> bits before dividing by bit rates
  const double bits_down = 1'000'000.0 * 8.0;
  const double bits_up = 250'000.0 * 8.0;
  const double expected = bits_down / 8e6 + 5e9 / 10e9 + bits_up / 4e6 + 10e9 / 20e9;
  EXPECT_NEAR(delay_components(worked_summary(), 1, 8e6, 4e6, 10e9, 20e9, true, 15.0).total_s, expected, 1e-12);
}

TEST(Delay, Miss) {
  const auto d = delay_components(worked_summary(), 1, 8e6, 4e6, 10e9, 20e9, false, 15.0);
  EXPECT_TRUE(d.failed);
  EXPECT_EQ(d.total_s, 15.0);
}

TEST(Delay, FullDeviceInfiniteLinks) {
  PartitionSummary s;
  s.local_flops = 4'000'000'000;
  const double inf = std::numeric_limits<double>::infinity();
  const auto d = delay_components(s, 2, inf, inf, 8e9, 1e9, true, 15.0);
  EXPECT_DOUBLE_EQ(d.total_s, 1.0);
  EXPECT_DOUBLE_EQ(d.total_s, d.local_s);
}

TEST(Delay, ZeroRateWithVolumeIsInfeasible) {
  EXPECT_THROW(delay_components(worked_summary(), 1, 0.0, 4e6, 10e9, 20e9, true, 15.0), InfeasibleLinkError);
}

TEST(Energy, WorkedExample) {
  PartitionSummary s;
  s.local_flops = 5'000'000'000;
  EXPECT_NEAR(energy(s, 2, 1e-10, 0.1, 0.5), 1.05, 1e-12);
  EXPECT_EQ(energy(PartitionSummary{}, 2, 1e-10, 0.1, 0.0), 0.0);
  EXPECT_NEAR(energy(s, 2, 1e-10, 0.0, 0.5), 1.0, 1e-12);
}

TEST(Privacy, WorkedExample) {
  CostWeights w;
  EXPECT_NEAR(privacy_cost(0.5, 0.5, 2, 0.6, w), 0.75, 1e-12);
  EXPECT_EQ(privacy_cost(0.0, 0.5, 2, 0.6, w), 0.0);
  EXPECT_NEAR(privacy_cost(1.0, 0.0, 1, 1.0, w), 0.31, 1e-12);
}

TEST(SlotCost, Examples) {
  CostWeights w;
  const std::vector<double> e{3, 3}, p{2, 2};
  EXPECT_DOUBLE_EQ(slot_cost(e, p, w), 25.0);
  const std::vector<double> z{0, 0};
  EXPECT_EQ(slot_cost(z, z, w), 0.0);
  const std::vector<double> e1{1.5}, p1{0.4};
  EXPECT_DOUBLE_EQ(slot_cost(e1, p1, w), 5.0 * 0.4 + 5.0 * 1.5);
  EXPECT_THROW(slot_cost(std::vector<double>{}, std::vector<double>{}, w), DomainError);
}

TEST(SlotCost, LinearInWeights) {
  CostWeights w, w2;
  w2.mu1 = 2 * w.mu1;
  w2.mu2 = 2 * w.mu2;
  const std::vector<double> e{0.3, 1.7, 2.2}, p{4.1, 0.2, 0.9};
  EXPECT_EQ(slot_cost(e, p, w2), 2.0 * slot_cost(e, p, w));
}

TEST(CostWeights, Validation) {
  CostWeights w;
  EXPECT_NO_THROW(w.validate());
  w.tau_fail = 2.0;
  EXPECT_THROW(w.validate(), ConfigError);
}
