#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "d2r/data.hpp"
#include "d2r/train.hpp"

using namespace d2r;

TEST(TwoMoons, NoiselessPointsLieOnTheArcs) {
  const Dataset d = make_two_moons(200, 0.0, 3);
  const Frame f = two_moons_frame(0.0);
  ASSERT_EQ(d.size(), 200u);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double px = f.lo[0] + d.x.at(i, 0) * (f.hi[0] - f.lo[0]);
    const double py = f.lo[1] + d.x.at(i, 1) * (f.hi[1] - f.lo[1]);
    const double cx = d.y[i] == 0 ? 0.0 : 1.0;
    const double cy = d.y[i] == 0 ? 0.0 : 0.5;
    EXPECT_NEAR(std::hypot(px - cx, py - cy), 1.0, 1e-12);
    // Upper arc for class 0, lower arc for class 1.
    EXPECT_TRUE(d.y[i] == 0 ? py >= -1e-12 : py <= 0.5 + 1e-12);
  }
}

TEST(TwoMoons, BalancedInUnitBoxAndDeterministic) {
  const Dataset a = make_two_moons(400, 0.1, 7);
  EXPECT_NO_THROW(a.validate());
  EXPECT_EQ(std::count(a.y.begin(), a.y.end(), 0), 200);
  EXPECT_EQ(a, make_two_moons(400, 0.1, 7));
  EXPECT_NE(a.x, make_two_moons(400, 0.1, 8).x);
}

TEST(TwoMoons, RejectsBadArguments) {
  EXPECT_THROW(make_two_moons(1, 0.1, 0), Error);
  EXPECT_THROW(make_two_moons(11, 0.1, 0), Error);
  EXPECT_THROW(make_two_moons(10, -0.1, 0), Error);
}

TEST(Blobs, ZeroSigmaPutsEveryPointOnItsCenter) {
  const std::vector<std::vector<double>> centers{{0, 0}, {4, 2}, {2, 8}};
  const Dataset d = make_blobs(30, centers, 0.0, 1);
  const Frame f = blob_frame(centers, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& c = centers[static_cast<std::size_t>(d.y[i])];
    EXPECT_EQ(d.y[i], static_cast<int>(i % 3));
    EXPECT_NEAR(d.x.at(i, 0), f.to_unit(0, c[0]), 1e-15);
    EXPECT_NEAR(d.x.at(i, 1), f.to_unit(1, c[1]), 1e-15);
  }
}

TEST(Blobs, RejectsBadCenters) {
  EXPECT_THROW(make_blobs(10, {{0, 0}}, 0.1, 0), Error);
  EXPECT_THROW(make_blobs(10, {{0, 0}, {0, 0}}, 0.1, 0), Error);
}

TEST(Blobs, DistantCentersAreSeparableByALinearModel) {
  const Dataset d = make_blobs(200, {{0, 0}, {10, 10}}, 0.5, 2);
  Trainee t(init_model({{2, 2}, Activation::relu, 3}, Role::target));
  for (int step = 0; step < 100; ++step) {
    Tape tape;
    const BoundModel m = bind(tape, t.model, true);
    const Gradients g = tape.backward(cross_entropy(forward(m, tape.constant(d.x)), d.y));
    t.apply(detail::gradients_of(g, m), 0.5, 0.9);
  }
  EXPECT_EQ(count_correct(t.model, d.x, d.y), d.size());
}

TEST(Split, DisjointCoveringAndSeeded) {
  const Dataset d = make_two_moons(100, 0.1, 1);
  const DataSplit s = split_dataset(d, 0.2, 5);
  EXPECT_EQ(s.test.size(), 20u);
  EXPECT_EQ(s.train.size(), 80u);
  std::multiset<std::pair<double, double>> all, parts;
  for (std::size_t i = 0; i < d.size(); ++i) all.insert({d.x.at(i, 0), d.x.at(i, 1)});
  for (const Dataset* p : {&s.train, &s.test}) {
    for (std::size_t i = 0; i < p->size(); ++i) parts.insert({p->x.at(i, 0), p->x.at(i, 1)});
  }
  EXPECT_EQ(all, parts);
  EXPECT_EQ(split_dataset(d, 0.2, 5).test, s.test);
  EXPECT_THROW(split_dataset(d, 1.0, 5), Error);
}

TEST(BatchIterator, EpochPermutationsCoverAllSamples) {
  BatchIterator it(10, 4, 9);
  const auto b0 = it.next_epoch();
  ASSERT_EQ(b0.size(), 3u);
  EXPECT_EQ(b0.back().size(), 2u);
  std::set<std::size_t> seen;
  for (const auto& b : b0) seen.insert(b.begin(), b.end());
  EXPECT_EQ(seen.size(), 10u);
  EXPECT_EQ(it.epoch(), 1u);
  EXPECT_EQ(BatchIterator(10, 4, 9).batches(0), b0);
  EXPECT_NE(it.permutation(1), it.permutation(0));
  EXPECT_THROW(BatchIterator(10, 0, 1), Error);
}
