#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace deepact {

// Activity taxonomy. Real categories are 1..15; the three specials live
// outside that range and never appear in a validated chain.
enum class ActivityType : int {
  Pad = 0,
  Home = 1,
  Work = 2,
  School = 3,
  CareGiving = 4,
  BuyGoods = 5,
  BuyServices = 6,
  BuyMeals = 7,
  GeneralErrands = 8,
  Recreational = 9,
  Exercise = 10,
  VisitFriends = 11,
  HealthCare = 12,
  Religious = 13,
  SomethingElse = 14,
  DropOffPickUp = 15,
  Eos = 16,
  Sos = 17,
};

inline constexpr int kNumActivityTypes = 15;
inline constexpr int kSlotsPerDay = 96;
inline constexpr int kMinutesPerSlot = 15;
inline constexpr int kMaxHouseholdSize = 5;
inline constexpr int kDefaultMaxChainLength = 16;

constexpr int code(ActivityType t) { return static_cast<int>(t); }
constexpr bool is_real(ActivityType t) { return code(t) >= 1 && code(t) <= kNumActivityTypes; }
constexpr bool is_mandatory(ActivityType t) {
  return t == ActivityType::Work || t == ActivityType::School;
}

/// Code in 1..=15 (or a special code) to type. Returns nullopt for codes
/// outside the taxonomy.
std::optional<ActivityType> activity_from_code(int c);
std::string_view activity_name(ActivityType t);
std::optional<ActivityType> activity_from_name(std::string_view name);

/// A 15-minute slot of the day, 1..=96.
class TimeSlot {
 public:
  TimeSlot() = default;
  explicit TimeSlot(int slot);
  int value() const { return slot_; }
  auto operator<=>(const TimeSlot&) const = default;

 private:
  int slot_ = 1;
};

// Generated activities may be temporally invalid, so Activity holds raw slot
// numbers and validity is checked by validate_chain.
struct Activity {
  ActivityType kind = ActivityType::Home;
  int start = 1;
  int end = 1;
  bool operator==(const Activity&) const = default;
};

/// Inclusive slot count end - start + 1; non-positive for reversed activities.
constexpr int duration_slots(const Activity& a) { return a.end - a.start + 1; }

class ActivityChain {
 public:
  ActivityChain() = default;
  explicit ActivityChain(std::vector<Activity> activities,
                         int max_len = kDefaultMaxChainLength);

  const std::vector<Activity>& activities() const { return activities_; }
  std::size_t size() const { return activities_.size(); }
  bool empty() const { return activities_.empty(); }
  const Activity& operator[](std::size_t i) const { return activities_[i]; }
  auto begin() const { return activities_.begin(); }
  auto end() const { return activities_.end(); }
  bool operator==(const ActivityChain&) const = default;

 private:
  std::vector<Activity> activities_;
};

enum class ViolationKind { Reversed, Overlap, SpecialCode };

struct Violation {
  ViolationKind kind;
  std::size_t index;
  bool operator==(const Violation&) const = default;
};

std::string describe(const Violation& v);

/// Every temporal or vocabulary violation in the chain; empty iff valid.
std::vector<Violation> validate_chain(const ActivityChain& chain);
inline bool is_valid(const ActivityChain& chain) { return validate_chain(chain).empty(); }

inline constexpr int kDurationBins = 8;
inline constexpr int kSlotsPerDurationBin = 12;

/// Duration bin in 1..=8 (12 slots per bin); non-positive durations land in
/// bin 1, anything past a day in bin 8.
int duration_bin(int duration);

struct ModeFeatures {
  ActivityType mode_type;
  int mode_duration_bin;
  int length;
  bool operator==(const ModeFeatures&) const = default;
};

/// Balancing representation of a chain. Leading and trailing Home are
/// dropped when both are present and something remains in between.
ModeFeatures mode_features(const ActivityChain& chain);

/// One person's categorical socio-demographics. Codes are indices into each
/// attribute's category list; the last category is conventionally the dummy
/// used for non-response.
struct AgentProfile {
  std::vector<int> personal;
  std::vector<int> household;
  bool operator==(const AgentProfile&) const = default;

  std::size_t attribute_count() const { return personal.size() + household.size(); }
  int attribute(std::size_t k) const {
    return k < personal.size() ? personal[k] : household[k - personal.size()];
  }
};

struct Household {
  std::vector<AgentProfile> members;
  std::size_t target_index = 0;
  bool operator==(const Household&) const = default;
};

/// Throws std::invalid_argument when the member count is outside 1..=5 or
/// shared attributes differ between members.
void check_household(const Household& h);

using ZoneId = std::int64_t;

struct Trajectory {
  std::string agent_id;
  ActivityChain chain;
  std::vector<ZoneId> zones;
  bool operator==(const Trajectory&) const = default;
};

}  // namespace deepact
