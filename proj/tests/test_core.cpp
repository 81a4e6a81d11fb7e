#include "doctest.h"

#include <algorithm>
#include <random>

#include "deepact/core.hpp"
#include "table_chains.hpp"

using namespace deepact;
using A = ActivityType;

TEST_CASE("validate_chain flags each violation kind") {
  CHECK(validate_chain(ActivityChain({{A::Home, 1, 28}, {A::Work, 29, 61}, {A::Home, 62, 96}})).empty());

  auto overlap = validate_chain(ActivityChain({{A::Home, 1, 28}, {A::Work, 20, 61}}));
  REQUIRE(overlap.size() == 1);
  CHECK(overlap[0] == Violation{ViolationKind::Overlap, 1});

  auto reversed = validate_chain(ActivityChain({{A::Work, 40, 35}}));
  REQUIRE(reversed.size() == 1);
  CHECK(reversed[0] == Violation{ViolationKind::Reversed, 0});

  auto special = validate_chain(ActivityChain({{A::Home, 1, 10}, {A::Eos, 11, 12}}));
  REQUIRE(special.size() == 1);
  CHECK(special[0].kind == ViolationKind::SpecialCode);
  CHECK_FALSE(describe(special[0]).empty());
}

TEST_CASE("validate_chain is empty exactly for ordered chains") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<Activity> acts;
    const int n = 1 + static_cast<int>(rng() % 6);
    for (int i = 0; i < n; ++i) {
      const int s = 1 + static_cast<int>(rng() % 96);
      const int e = 1 + static_cast<int>(rng() % 96);
      acts.push_back({A::Home, s, e});
    }
    bool ordered = true;
    for (int i = 0; i < n; ++i) {
      ordered = ordered && acts[i].start <= acts[i].end;
      if (i > 0) ordered = ordered && acts[i - 1].end <= acts[i].start;
    }
    CHECK(is_valid(ActivityChain(acts)) == ordered);
  }
}

TEST_CASE("duration_slots is inclusive") {
  CHECK(duration_slots({A::Home, 1, 28}) == 28);
  CHECK(duration_slots({A::Work, 40, 40}) == 1);
  CHECK(duration_slots({A::Work, 40, 35}) == -4);
}

TEST_CASE("mode_features on the balancing examples") {
  const auto rows = testing::example_balance_chains();
  CHECK(mode_features(rows[0]) == ModeFeatures{A::Work, 3, 5});
  CHECK(mode_features(rows[2]) == ModeFeatures{A::Work, 5, 3});
  CHECK(mode_features(ActivityChain({{A::Home, 1, 96}})) == ModeFeatures{A::Home, 8, 1});
}

TEST_CASE("mode_features ties and exclusion rule") {
  // Two interior types with equal count and duration: lowest code wins.
  const auto tie = testing::chain_from_durations({A::Home, A::Exercise, A::Recreational, A::Home}, {10, 8, 8, 10});
  CHECK(mode_features(tie).mode_type == A::Recreational);
  // Frequency beats duration.
  const auto freq =
      testing::chain_from_durations({A::Home, A::BuyGoods, A::Work, A::BuyGoods, A::Home}, {10, 2, 40, 2, 10});
  CHECK(mode_features(freq).mode_type == A::BuyGoods);
  // Not both endpoints Home: full chain.
  const auto open = testing::chain_from_durations({A::Home, A::Work, A::Work}, {40, 10, 10});
  CHECK(mode_features(open).mode_type == A::Work);
}

TEST_CASE("mode_features depends on the interior only as a multiset") {
  std::vector<Activity> a = {{A::Home, 1, 20}, {A::Work, 21, 50}, {A::BuyMeals, 51, 55}, {A::Exercise, 56, 60}, {A::Home, 61, 96}};
  std::vector<Activity> b = {{A::Home, 1, 20}, {A::Exercise, 21, 25}, {A::Work, 26, 55}, {A::BuyMeals, 56, 60}, {A::Home, 61, 96}};
  const auto fa = mode_features(ActivityChain(a));
  const auto fb = mode_features(ActivityChain(b));
  CHECK(fa.mode_type == fb.mode_type);
  CHECK(fa.mode_duration_bin == fb.mode_duration_bin);
}

TEST_CASE("duration bins are 12 slots wide") {
  CHECK(duration_bin(1) == 1);
  CHECK(duration_bin(12) == 1);
  CHECK(duration_bin(13) == 2);
  CHECK(duration_bin(96) == 8);
}

TEST_CASE("activity codes round-trip") {
  for (int c = 1; c <= kNumActivityTypes; ++c) {
    auto t = activity_from_code(c);
    REQUIRE(t);
    CHECK(code(*t) == c);
    CHECK(is_real(*t));
    CHECK(activity_from_name(activity_name(*t)) == t);
  }
  CHECK_FALSE(activity_from_code(99));
  CHECK(is_mandatory(A::Work));
  CHECK(is_mandatory(A::School));
  CHECK_FALSE(is_mandatory(A::Exercise));
}

TEST_CASE("time slots and chains check their ranges") {
  CHECK_THROWS_AS(TimeSlot(0), std::out_of_range);
  CHECK_THROWS_AS(TimeSlot(97), std::out_of_range);
  CHECK(TimeSlot(96).value() == 96);
  CHECK_THROWS(ActivityChain(std::vector<Activity>{}));
  CHECK_THROWS(ActivityChain(std::vector<Activity>(3, Activity{}), 2));
}

TEST_CASE("households share household attributes") {
  Household h;
  h.members.push_back({{1, 2}, {3}});
  h.members.push_back({{0, 1}, {3}});
  CHECK_NOTHROW(check_household(h));
  h.members.push_back({{0, 1}, {4}});
  CHECK_THROWS(check_household(h));
  Household big;
  big.members.assign(6, AgentProfile{{0}, {0}});
  CHECK_THROWS(check_household(big));
}
