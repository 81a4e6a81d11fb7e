#include "deepact/core.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace deepact {

namespace {

constexpr std::array<std::string_view, 18> kNames = {
    "PAD",           "Home",           "Work",         "School",
    "Care giving",   "Buy goods",      "Buy services", "Buy meals",
    "General errands", "Recreational", "Exercise",     "Visit friends",
    "Health care",   "Religious",      "Something else", "Drop off/Pick up",
    "EOS",           "SOS",
};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::optional<ActivityType> activity_from_code(int c) {
  if (c < 0 || c > code(ActivityType::Sos)) return std::nullopt;
  return static_cast<ActivityType>(c);
}

std::string_view activity_name(ActivityType t) { return kNames.at(static_cast<std::size_t>(code(t))); }

std::optional<ActivityType> activity_from_name(std::string_view name) {
  const std::string key = lower(name);
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (lower(kNames[i]) == key) return static_cast<ActivityType>(i);
  }
  return std::nullopt;
}

TimeSlot::TimeSlot(int slot) : slot_(slot) {
  if (slot < 1 || slot > kSlotsPerDay) {
    throw std::out_of_range("time slot " + std::to_string(slot) + " outside 1..96");
  }
}

ActivityChain::ActivityChain(std::vector<Activity> activities, int max_len)
    : activities_(std::move(activities)) {
  if (activities_.empty()) throw std::invalid_argument("activity chain must not be empty");
  if (static_cast<int>(activities_.size()) > max_len) {
    throw std::invalid_argument("activity chain length " + std::to_string(activities_.size()) +
                                " exceeds max_len " + std::to_string(max_len));
  }
}

std::string describe(const Violation& v) {
  switch (v.kind) {
    case ViolationKind::Reversed:
      return "reversed at index " + std::to_string(v.index);
    case ViolationKind::Overlap:
      return "overlap at index " + std::to_string(v.index);
    case ViolationKind::SpecialCode:
      return "special code at index " + std::to_string(v.index);
  }
  return "unknown";
}

std::vector<Violation> validate_chain(const ActivityChain& chain) {
  std::vector<Violation> out;
  for (std::size_t n = 0; n < chain.size(); ++n) {
    const Activity& a = chain[n];
    if (!is_real(a.kind)) out.push_back({ViolationKind::SpecialCode, n});
    if (a.end < a.start) out.push_back({ViolationKind::Reversed, n});
    if (n > 0 && chain[n - 1].end > a.start) out.push_back({ViolationKind::Overlap, n});
  }
  return out;
}

int duration_bin(int duration) {
  const int bin = (duration + kSlotsPerDurationBin - 1) / kSlotsPerDurationBin;
  return std::clamp(bin, 1, kDurationBins);
}

ModeFeatures mode_features(const ActivityChain& chain) {
  if (chain.empty()) throw std::invalid_argument("mode_features on empty chain");
  std::size_t first = 0;
  std::size_t last = chain.size();
  if (chain.size() > 2 && chain[0].kind == ActivityType::Home &&
      chain[chain.size() - 1].kind == ActivityType::Home) {
    first = 1;
    last = chain.size() - 1;
  }

  // type -> (count, total duration)
  std::map<int, std::pair<int, int>> by_type;
  std::map<int, int> by_bin;
  for (std::size_t n = first; n < last; ++n) {
    const int d = duration_slots(chain[n]);
    auto& slot = by_type[code(chain[n].kind)];
    slot.first += 1;
    slot.second += d;
    by_bin[duration_bin(d)] += std::max(d, 0);
  }

  int best_type = 0;
  std::pair<int, int> best{-1, 0};
  for (const auto& [type, stats] : by_type) {
    // std::map iterates in ascending code, so strict comparison keeps the lowest code on ties.
    if (stats.first > best.first || (stats.first == best.first && stats.second > best.second)) {
      best = stats;
      best_type = type;
    }
  }
  // Mode bin = the bin holding the most interior time.
  int best_bin = 0;
  int best_time = -1;
  for (const auto& [bin, time] : by_bin) {
    if (time > best_time) {
      best_time = time;
      best_bin = bin;
    }
  }
  return {static_cast<ActivityType>(best_type), best_bin, static_cast<int>(chain.size())};
}

void check_household(const Household& h) {
  if (h.members.empty() || h.members.size() > kMaxHouseholdSize) {
    throw std::invalid_argument("household must have 1..5 members, got " +
                                std::to_string(h.members.size()));
  }
  if (h.target_index >= h.members.size()) throw std::invalid_argument("target_index out of range");
  for (const auto& m : h.members) {
    if (m.household != h.members.front().household) {
      throw std::invalid_argument("household-shared attributes differ between members");
    }
  }
}

}  // namespace deepact
