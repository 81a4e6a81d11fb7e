#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepact/core.hpp"

namespace deepact {

struct AttributeSpec {
  std::string name;
  std::string column;  // CSV column; defaults to name
  int cardinality = 2;  // includes the dummy category
  int dummy = 1;        // code used for missing / non-response
  bool shared = false;  // household-level attribute
};

struct ColumnBindings {
  std::string household_id = "household_id";
  std::string person_id = "person_id";
  std::string weekday = "weekday";
  std::string activity = "activity";
  std::string start = "start_min";
  std::string end = "end_min";
};

/// Describes how a household travel survey CSV maps onto encoded samples.
/// Attribute order is personal attributes first, then shared ones, in the
/// order they are declared.
struct DatasetSchema {
  std::vector<AttributeSpec> attributes;
  ColumnBindings columns;
  std::map<std::string, int> activity_labels;  // extra label -> code aliases
  int max_len = kDefaultMaxChainLength;

  std::size_t personal_count() const;
  std::size_t shared_count() const;
  std::vector<int> cardinalities() const;  // personal first, then shared
  std::vector<const AttributeSpec*> ordered() const;
  ActivityType activity_for(const std::string& label) const;

  /// Throws std::invalid_argument on cardinality < 2, bad dummy code, or
  /// duplicate column bindings.
  void validate() const;
};

/// The 26-attribute household-survey layout (13 personal, 13 shared).
DatasetSchema default_schema();
DatasetSchema load_schema(const std::filesystem::path& path);
void save_schema(const DatasetSchema& schema, const std::filesystem::path& path);

struct EncodedSample {
  std::string household_id;
  Household household;
  ActivityChain chain;
  bool weekday = true;

  const AgentProfile& target() const { return household.members.at(household.target_index); }
  bool operator==(const EncodedSample&) const = default;
};

/// Member slots in encoder order: target first, then the others, padded
/// with all-dummy profiles up to five. mask[k] is true for padding.
struct PaddedHousehold {
  std::array<AgentProfile, kMaxHouseholdSize> members;
  std::array<bool, kMaxHouseholdSize> pad{};
};
PaddedHousehold pad_household(const Household& h, const std::vector<int>& dummies,
                              std::size_t personal_count);

class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Minutes since midnight (0..1439) to a 15-minute slot.
TimeSlot encode_time(int minutes_since_midnight);

/// Activity rows with blank activity fields describe household members
/// without a diary; they contribute a profile but no sample. End times are
/// exclusive: an activity ending at 07:00 occupies slots up to 06:45-07:00.
std::vector<EncodedSample> load_csv(const std::filesystem::path& path, const DatasetSchema& schema);
void save_csv(const std::vector<EncodedSample>& samples, const DatasetSchema& schema,
              const std::filesystem::path& path);

struct Splits {
  std::vector<EncodedSample> train;
  std::vector<EncodedSample> val;
  std::vector<EncodedSample> test;
};

/// Household-grouped shuffle split. Sizes are allocated per household so
/// members of one household always land together.
Splits split(const std::vector<EncodedSample>& samples, std::array<double, 3> ratios,
             std::uint64_t seed);

// Canonical sample file: one JSON object per line.
void save_samples(const std::vector<EncodedSample>& samples, const std::filesystem::path& path);
std::vector<EncodedSample> load_samples(const std::filesystem::path& path);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Segment : int { Worker = 0, Student = 1, Retiree = 2 };
inline constexpr int kSegments = 3;

/// Discrete distribution over 1..=96 slots (index 0 is slot 1).
using SlotDistribution = std::vector<double>;

struct SegmentGrammar {
  // Row = current type (index code-1), column = next type. Home->Home is
  // allowed but usually zero.
  std::vector<std::vector<double>> transition;
  // Preferred start of the first out-of-home activity, per type.
  std::vector<SlotDistribution> first_start;
  std::vector<SlotDistribution> duration;
  double eos = 0.5;  // probability of ending the day at each non-initial Home
};

/// Ground-truth activity generator used in place of restricted survey data.
struct SyntheticGrammar {
  std::string name = "reference";
  // Per segment, weekday and weekend variants: index = 2*segment + weekend.
  std::vector<SegmentGrammar> segments;
  std::vector<double> gap;             // P(gap = 1 + k) between consecutive activities
  int late_slot = 88;                  // activities ending at or after this go home
  std::vector<std::vector<double>> attribute_marginals;  // schema order
  std::vector<double> household_size;  // P(size = 1 + k)
  double weekday_probability = 5.0 / 7.0;

  const SegmentGrammar& for_segment(Segment s, bool weekday) const {
    return segments.at(static_cast<std::size_t>(2 * static_cast<int>(s) + (weekday ? 0 : 1)));
  }
  /// Throws ConfigError when rows do not sum to 1 within 1e-9 or a
  /// distribution has the wrong support.
  void validate(const DatasetSchema& schema) const;
};

/// Segment from the "school_grade" and "employment_status" attributes;
/// schemas without them put everyone in Retiree.
Segment segment_of(const AgentProfile& p, const DatasetSchema& schema);

enum class GrammarVariant { Reference, Shifted };
SyntheticGrammar default_grammar(const DatasetSchema& schema,
                                 GrammarVariant variant = GrammarVariant::Reference);
void save_grammar(const SyntheticGrammar& g, const std::filesystem::path& path);
SyntheticGrammar load_grammar(const std::filesystem::path& path, const DatasetSchema& schema);

/// Draw one chain for a segment. Always temporally valid.
ActivityChain sample_chain(const SyntheticGrammar& g, Segment s, bool weekday, int max_len,
                           std::mt19937_64& rng);

std::vector<EncodedSample> synth_population(const SyntheticGrammar& grammar,
                                            const DatasetSchema& schema, std::size_t n,
                                            std::uint64_t seed);

}  // namespace deepact
