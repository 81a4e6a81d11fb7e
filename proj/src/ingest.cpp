#include "deepact/ingest.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "deepact/random.hpp"
#include "json.hpp"

namespace deepact {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Schema

std::size_t DatasetSchema::personal_count() const {
  return static_cast<std::size_t>(
      std::count_if(attributes.begin(), attributes.end(), [](const auto& a) { return !a.shared; }));
}

std::size_t DatasetSchema::shared_count() const { return attributes.size() - personal_count(); }

std::vector<const AttributeSpec*> DatasetSchema::ordered() const {
  std::vector<const AttributeSpec*> out;
  for (const auto& a : attributes)
    if (!a.shared) out.push_back(&a);
  for (const auto& a : attributes)
    if (a.shared) out.push_back(&a);
  return out;
}

std::vector<int> DatasetSchema::cardinalities() const {
  std::vector<int> out;
  for (const auto* a : ordered()) out.push_back(a->cardinality);
  return out;
}

ActivityType DatasetSchema::activity_for(const std::string& label) const {
  if (auto it = activity_labels.find(label); it != activity_labels.end()) {
    if (auto t = activity_from_code(it->second); t && is_real(*t)) return *t;
  }
  if (auto t = activity_from_name(label); t && is_real(*t)) return *t;
  try {
    std::size_t used = 0;
    const int c = std::stoi(label, &used);
    if (used == label.size()) {
      if (auto t = activity_from_code(c); t && is_real(*t)) return *t;
    }
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("unknown activity label '" + label + "'");
}

void DatasetSchema::validate() const {
  if (attributes.empty()) throw std::invalid_argument("schema declares no attributes");
  std::set<std::string> columns_seen{this->columns.household_id, this->columns.person_id,
                                     this->columns.weekday,      this->columns.activity,
                                     this->columns.start,        this->columns.end};
  if (columns_seen.size() != 6) throw std::invalid_argument("schema: duplicate column binding");
  for (const auto& a : attributes) {
    if (a.cardinality < 2)
      throw std::invalid_argument("attribute '" + a.name + "' has cardinality < 2");
    if (a.dummy < 0 || a.dummy >= a.cardinality)
      throw std::invalid_argument("attribute '" + a.name + "' dummy code out of range");
    if (!columns_seen.insert(a.column).second)
      throw std::invalid_argument("schema: duplicate column binding '" + a.column + "'");
  }
  if (max_len < 1) throw std::invalid_argument("schema: max_len must be >= 1");
}

DatasetSchema default_schema() {
  struct Row {
    const char* name;
    int cardinality;
    bool shared;
  };
  static constexpr Row kRows[] = {
      {"drivers_license", 3, false},      {"education", 6, false},
      {"gender", 3, false},               {"race", 7, false},
      {"household_role", 5, false},       {"school_grade", 6, false},
      {"employment_location", 4, false},  {"number_of_jobs", 4, false},
      {"employment_status", 5, false},    {"workdays", 8, false},
      {"job_category", 6, false},         {"age", 8, false},
      {"transit_usage", 5, false},        {"household_drivers", 6, true},
      {"household_employed", 6, true},    {"housing_status", 4, true},
      {"population_density", 6, true},    {"household_income", 11, true},
      {"household_size", 6, true},        {"household_vehicles", 6, true},
      {"home_ownership", 3, true},        {"household_students", 5, true},
      {"life_cycle", 11, true},           {"residence_type", 3, true},
      {"housing_density", 6, true},       {"renter_ratio", 6, true},
  };
  DatasetSchema s;
  for (const auto& r : kRows) {
    s.attributes.push_back({r.name, r.name, r.cardinality, r.cardinality - 1, r.shared});
  }
  return s;
}

DatasetSchema load_schema(const std::filesystem::path& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::Exception& e) {
    throw std::invalid_argument("cannot read schema " + path.string() + ": " + e.what());
  }
  DatasetSchema s;
  if (const auto cols = root["columns"]) {
    auto bind = [&](const char* key, std::string& field) {
      if (cols[key]) field = cols[key].as<std::string>();
    };
    bind("household_id", s.columns.household_id);
    bind("person_id", s.columns.person_id);
    bind("weekday", s.columns.weekday);
    bind("activity", s.columns.activity);
    bind("start", s.columns.start);
    bind("end", s.columns.end);
  }
  for (const auto& node : root["attributes"]) {
    AttributeSpec a;
    a.name = node["name"].as<std::string>();
    a.column = node["column"] ? node["column"].as<std::string>() : a.name;
    a.cardinality = node["cardinality"].as<int>();
    a.dummy = node["dummy"] ? node["dummy"].as<int>() : a.cardinality - 1;
    a.shared = node["shared"] ? node["shared"].as<bool>() : false;
    s.attributes.push_back(std::move(a));
  }
  if (const auto labels = root["activity_labels"]) {
    for (const auto& kv : labels) s.activity_labels[kv.first.as<std::string>()] = kv.second.as<int>();
  }
  if (root["max_len"]) s.max_len = root["max_len"].as<int>();
  s.validate();
  return s;
}

void save_schema(const DatasetSchema& schema, const std::filesystem::path& path) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "columns" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "household_id" << YAML::Value << schema.columns.household_id;
  out << YAML::Key << "person_id" << YAML::Value << schema.columns.person_id;
  out << YAML::Key << "weekday" << YAML::Value << schema.columns.weekday;
  out << YAML::Key << "activity" << YAML::Value << schema.columns.activity;
  out << YAML::Key << "start" << YAML::Value << schema.columns.start;
  out << YAML::Key << "end" << YAML::Value << schema.columns.end;
  out << YAML::EndMap;
  out << YAML::Key << "max_len" << YAML::Value << schema.max_len;
  out << YAML::Key << "attributes" << YAML::Value << YAML::BeginSeq;
  for (const auto& a : schema.attributes) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << a.name;
    out << YAML::Key << "column" << YAML::Value << a.column;
    out << YAML::Key << "cardinality" << YAML::Value << a.cardinality;
    out << YAML::Key << "dummy" << YAML::Value << a.dummy;
    out << YAML::Key << "shared" << YAML::Value << a.shared;
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  if (!schema.activity_labels.empty()) {
    out << YAML::Key << "activity_labels" << YAML::Value << YAML::BeginMap;
    for (const auto& [k, v] : schema.activity_labels) out << YAML::Key << k << YAML::Value << v;
    out << YAML::EndMap;
  }
  out << YAML::EndMap;
  std::ofstream f(path);
  f << out.c_str() << '\n';
}

PaddedHousehold pad_household(const Household& h, const std::vector<int>& dummies,
                              std::size_t personal_count) {
  PaddedHousehold out;
  AgentProfile dummy;
  dummy.personal.assign(dummies.begin(), dummies.begin() + static_cast<long>(personal_count));
  dummy.household.assign(dummies.begin() + static_cast<long>(personal_count), dummies.end());
  std::size_t slot = 0;
  out.members[slot++] = h.members.at(h.target_index);
  for (std::size_t k = 0; k < h.members.size() && slot < kMaxHouseholdSize; ++k) {
    if (k != h.target_index) out.members[slot++] = h.members[k];
  }
  for (; slot < kMaxHouseholdSize; ++slot) {
    out.members[slot] = dummy;
    out.pad[slot] = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

TimeSlot encode_time(int minutes) {
  if (minutes < 0 || minutes > 1439) {
    throw RangeError("minutes since midnight " + std::to_string(minutes) + " outside 0..1439");
  }
  return TimeSlot(minutes / kMinutesPerSlot + 1);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

int parse_int(const std::string& s, std::size_t line, const std::string& what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ParseError("malformed " + what + " '" + s + "'", line);
}

// Minutes since midnight, either an integer or HH:MM.
int parse_minutes(const std::string& s, std::size_t line, const std::string& what) {
  if (const auto colon = s.find(':'); colon != std::string::npos) {
    const int h = parse_int(s.substr(0, colon), line, what);
    const int m = parse_int(s.substr(colon + 1), line, what);
    return h * 60 + m;
  }
  return parse_int(s, line, what);
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

struct PersonRows {
  std::string id;
  AgentProfile profile;
  bool weekday = true;
  std::vector<Activity> activities;
};

}  // namespace

std::vector<EncodedSample> load_csv(const std::filesystem::path& path, const DatasetSchema& schema) {
  schema.validate();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) return {};
  const auto header = split_csv_line(line);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[trim(header[i])] = i;
  auto column = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw ParseError("missing column '" + name + "'", 1);
    return it->second;
  };
  const auto& cb = schema.columns;
  const std::size_t c_hh = column(cb.household_id), c_person = column(cb.person_id),
                    c_weekday = column(cb.weekday), c_act = column(cb.activity),
                    c_start = column(cb.start), c_end = column(cb.end);
  const auto attrs = schema.ordered();
  std::vector<std::size_t> c_attr;
  for (const auto* a : attrs) c_attr.push_back(column(a->column));
  const std::size_t n_personal = schema.personal_count();

  std::vector<std::string> household_order;
  std::unordered_map<std::string, std::vector<PersonRows>> households;

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(cells.size()),
                       lineno);
    }
    const std::string hh = trim(cells[c_hh]);
    const std::string person = trim(cells[c_person]);
    if (hh.empty() || person.empty()) throw ParseError("blank household or person id", lineno);

    auto [it, inserted] = households.try_emplace(hh);
    if (inserted) household_order.push_back(hh);
    auto& people = it->second;
    auto pit = std::find_if(people.begin(), people.end(), [&](const auto& p) { return p.id == person; });
    if (pit == people.end()) {
      PersonRows p;
      p.id = person;
      for (std::size_t k = 0; k < attrs.size(); ++k) {
        const std::string cell = trim(cells[c_attr[k]]);
        int v = attrs[k]->dummy;
        if (!cell.empty()) {
          v = parse_int(cell, lineno, "attribute " + attrs[k]->name);
          if (v < 0) v = attrs[k]->dummy;
          if (v >= attrs[k]->cardinality) {
            throw ParseError("attribute " + attrs[k]->name + " code " + cell + " >= cardinality",
                             lineno);
          }
        }
        (k < n_personal ? p.profile.personal : p.profile.household).push_back(v);
      }
      const std::string wd = trim(cells[c_weekday]);
      p.weekday = wd.empty() || parse_int(wd, lineno, "weekday flag") != 0;
      people.push_back(std::move(p));
      pit = people.end() - 1;
    }

    const std::string label = trim(cells[c_act]);
    if (label.empty()) continue;  // member without diary
    ActivityType type;
    try {
      type = schema.activity_for(label);
    } catch (const std::invalid_argument& e) {
      throw ParseError(e.what(), lineno);
    }
    const int start_min = parse_minutes(trim(cells[c_start]), lineno, "start time");
    const int end_min = parse_minutes(trim(cells[c_end]), lineno, "end time");
    if (start_min < 0 || start_min > 1439 || end_min < 1 || end_min > 1440) {
      throw ParseError("time outside the day", lineno);
    }
    const int start = encode_time(start_min).value();
    const int end = encode_time(end_min - 1).value();
    pit->activities.push_back({type, start, end});
  }

  std::vector<EncodedSample> out;
  for (const auto& hh : household_order) {
    const auto& people = households[hh];
    for (std::size_t t = 0; t < people.size(); ++t) {
      if (people[t].activities.empty()) continue;
      EncodedSample s;
      s.household_id = hh;
      s.weekday = people[t].weekday;
      // Target first, then other diarists, then members without diaries.
      s.household.members.push_back(people[t].profile);
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < people.size(); ++k) {
          if (k == t || people[k].activities.empty() != (pass == 1)) continue;
          if (s.household.members.size() < kMaxHouseholdSize) {
            s.household.members.push_back(people[k].profile);
          }
        }
      }
      for (auto& m : s.household.members) m.household = people[t].profile.household;
      s.household.target_index = 0;
      auto acts = people[t].activities;
      if (static_cast<int>(acts.size()) > schema.max_len) acts.resize(static_cast<std::size_t>(schema.max_len));
      s.chain = ActivityChain(std::move(acts), schema.max_len);
      out.push_back(std::move(s));
    }
  }
  return out;
}

void save_csv(const std::vector<EncodedSample>& samples, const DatasetSchema& schema,
              const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const auto& cb = schema.columns;
  const auto attrs = schema.ordered();
  out << csv_escape(cb.household_id) << ',' << csv_escape(cb.person_id) << ','
      << csv_escape(cb.weekday) << ',' << csv_escape(cb.activity) << ',' << csv_escape(cb.start)
      << ',' << csv_escape(cb.end);
  for (const auto* a : attrs) out << ',' << csv_escape(a->column);
  out << '\n';

  // One synthetic household per sample keeps the target/member layout
  // unambiguous on reload.
  for (const auto& s : samples) {
    const auto& members = s.household.members;
    std::vector<std::size_t> order{s.household.target_index};
    for (std::size_t k = 0; k < members.size(); ++k)
      if (k != s.household.target_index) order.push_back(k);
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      const auto& m = members[order[rank]];
      auto prefix = [&](std::ostream& o) {
        o << csv_escape(s.household_id) << ',' << "p" << rank << ',' << (s.weekday ? 1 : 0);
      };
      auto attr_cells = [&](std::ostream& o) {
        for (std::size_t k = 0; k < m.attribute_count(); ++k) o << ',' << m.attribute(k);
      };
      if (rank == 0) {
        for (const auto& a : s.chain) {
          prefix(out);
          out << ',' << code(a.kind) << ',' << (a.start - 1) * kMinutesPerSlot << ','
              << a.end * kMinutesPerSlot;
          attr_cells(out);
          out << '\n';
        }
      } else {
        prefix(out);
        out << ",,,";
        attr_cells(out);
        out << '\n';
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Splitting

Splits split(const std::vector<EncodedSample>& samples, std::array<double, 3> ratios,
             std::uint64_t seed) {
  const double total_ratio = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total_ratio - 1.0) > 1e-9 || *std::min_element(ratios.begin(), ratios.end()) < 0.0) {
    throw std::invalid_argument("split ratios must be non-negative and sum to 1");
  }
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto [it, inserted] = groups.try_emplace(samples[i].household_id);
    if (inserted) order.push_back(samples[i].household_id);
    it->second.push_back(i);
  }
  auto rng = derive_rng(seed, 0x5b17);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[uniform_index(i, rng)]);
  }

  const double n = static_cast<double>(samples.size());
  std::array<long, 3> target{std::lround(std::floor(ratios[0] * n + 0.5)),
                             std::lround(std::floor(ratios[1] * n + 0.5)), 0};
  target[2] = static_cast<long>(samples.size()) - target[0] - target[1];
  std::array<long, 3> filled{0, 0, 0};
  Splits out;
  std::array<std::vector<EncodedSample>*, 3> dest{&out.train, &out.val, &out.test};
  for (const auto& id : order) {
    const auto& members = groups[id];
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k) {
      if (target[k] - filled[k] > target[best] - filled[best]) best = k;
    }
    filled[best] += static_cast<long>(members.size());
    for (auto i : members) dest[best]->push_back(samples[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sample files

namespace {

json sample_to_json(const EncodedSample& s) {
  json members = json::array();
  for (const auto& m : s.household.members) {
    members.push_back({{"personal", m.personal}, {"household", m.household}});
  }
  json chain = json::array();
  for (const auto& a : s.chain) chain.push_back({code(a.kind), a.start, a.end});
  return {{"household_id", s.household_id},
          {"target_index", s.household.target_index},
          {"members", members},
          {"chain", chain},
          {"weekday", s.weekday ? 1 : 0}};
}

EncodedSample sample_from_json(const json& j) {
  EncodedSample s;
  s.household_id = j.at("household_id").get<std::string>();
  s.household.target_index = j.at("target_index").get<std::size_t>();
  for (const auto& m : j.at("members")) {
    s.household.members.push_back(
        {m.at("personal").get<std::vector<int>>(), m.at("household").get<std::vector<int>>()});
  }
  std::vector<Activity> acts;
  for (const auto& a : j.at("chain")) {
    auto type = activity_from_code(a.at(0).get<int>());
    if (!type) throw std::invalid_argument("bad activity code in sample file");
    acts.push_back({*type, a.at(1).get<int>(), a.at(2).get<int>()});
  }
  const int len = static_cast<int>(acts.size());
  s.chain = ActivityChain(std::move(acts), std::max(len, 1));
  s.weekday = j.at("weekday").get<int>() != 0;
  check_household(s.household);
  return s;
}

}  // namespace

void save_samples(const std::vector<EncodedSample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
}

std::vector<EncodedSample> load_samples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<EncodedSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(sample_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic grammar

namespace {

constexpr std::size_t idx(ActivityType t) { return static_cast<std::size_t>(code(t) - 1); }

SlotDistribution discretized_normal(double mean, double sd, int lo, int hi) {
  SlotDistribution d(kSlotsPerDay, 0.0);
  double total = 0.0;
  for (int s = lo; s <= hi; ++s) {
    const double z = (s - mean) / sd;
    d[static_cast<std::size_t>(s - 1)] = std::exp(-0.5 * z * z);
    total += d[static_cast<std::size_t>(s - 1)];
  }
  for (auto& v : d) v /= total;
  return d;
}

std::vector<double> normalized(std::vector<double> v) {
  const double t = std::accumulate(v.begin(), v.end(), 0.0);
  for (auto& x : v) x /= t;
  return v;
}

SegmentGrammar make_segment(Segment seg, bool weekday, bool shifted) {
  using T = ActivityType;
  const std::size_t n = kNumActivityTypes;
  SegmentGrammar g;
  g.transition.assign(n, std::vector<double>(n, 0.0));

  // Out-of-home mix from Home.
  std::vector<double> leisure(n, 0.0);
  leisure[idx(T::CareGiving)] = 0.05;
  leisure[idx(T::BuyGoods)] = 0.20;
  leisure[idx(T::BuyServices)] = 0.06;
  leisure[idx(T::BuyMeals)] = 0.12;
  leisure[idx(T::GeneralErrands)] = 0.08;
  leisure[idx(T::Recreational)] = shifted ? 0.18 : 0.12;
  leisure[idx(T::Exercise)] = shifted ? 0.16 : 0.10;
  leisure[idx(T::VisitFriends)] = 0.10;
  leisure[idx(T::HealthCare)] = 0.05;
  leisure[idx(T::Religious)] = weekday ? 0.03 : 0.08;
  leisure[idx(T::SomethingElse)] = 0.04;
  leisure[idx(T::DropOffPickUp)] = shifted ? 0.10 : 0.05;
  leisure = normalized(leisure);

  const T mandatory = seg == Segment::Worker ? T::Work : seg == Segment::Student ? T::School : T::Home;
  double p_mandatory = 0.0;
  if (seg == Segment::Worker) p_mandatory = weekday ? (shifted ? 0.6 : 0.72) : 0.15;
  if (seg == Segment::Student) p_mandatory = weekday ? 0.78 : 0.05;

  auto& home = g.transition[idx(T::Home)];
  for (std::size_t j = 0; j < n; ++j) home[j] = (1.0 - p_mandatory) * leisure[j];
  if (mandatory != T::Home) home[idx(mandatory)] += p_mandatory;

  auto row = [&](T from, std::initializer_list<std::pair<T, double>> to) {
    auto& r = g.transition[idx(from)];
    for (const auto& [t, p] : to) {
      // Mandatory destinations exist only for segments that have one.
      const T dest = (t == T::Work && mandatory != T::Work) ? T::Home : t;
      r[idx(dest)] += p;
    }
    r = normalized(r);
  };
  row(T::Work, {{T::Home, shifted ? 0.5 : 0.6}, {T::BuyMeals, 0.2}, {T::BuyGoods, 0.1},
                {T::GeneralErrands, shifted ? 0.2 : 0.1}});
  row(T::School, {{T::Home, 0.7}, {T::Recreational, 0.15}, {T::Exercise, 0.15}});
  row(T::CareGiving, {{T::Home, 0.7}, {T::BuyGoods, 0.3}});
  row(T::BuyGoods, {{T::Home, 0.6}, {T::BuyMeals, 0.2}, {T::BuyServices, 0.2}});
  row(T::BuyServices, {{T::Home, 0.7}, {T::BuyGoods, 0.3}});
  row(T::BuyMeals, {{T::Home, 0.5}, {T::Work, 0.3}, {T::Recreational, 0.2}});
  row(T::GeneralErrands, {{T::Home, 0.6}, {T::BuyGoods, 0.4}});
  row(T::Recreational, {{T::Home, 0.7}, {T::BuyMeals, 0.3}});
  row(T::Exercise, {{T::Home, 0.8}, {T::BuyGoods, 0.2}});
  row(T::VisitFriends, {{T::Home, 0.8}, {T::BuyMeals, 0.2}});
  row(T::HealthCare, {{T::Home, 0.7}, {T::BuyGoods, 0.3}});
  row(T::Religious, {{T::Home, 0.6}, {T::VisitFriends, 0.4}});
  row(T::SomethingElse, {{T::Home, 1.0}});
  row(T::DropOffPickUp, {{T::Home, 0.5}, {T::Work, 0.3}, {T::BuyGoods, 0.2}});

  const double late = weekday ? 0.0 : 6.0;
  g.first_start.resize(n);
  for (std::size_t j = 0; j < n; ++j) g.first_start[j] = discretized_normal(40 + late, 6, 24, 70);
  g.first_start[idx(T::Work)] = discretized_normal((shifted ? 28 : 32) + late, 3, 22, 60);
  g.first_start[idx(T::School)] = discretized_normal(30 + late, 2, 24, 40);
  g.first_start[idx(T::DropOffPickUp)] = discretized_normal(30 + late, 2, 24, 40);

  struct Dur {
    T type;
    double mean, sd;
    int lo, hi;
  };
  const Dur durations[] = {
      {T::Home, 8, 4, 3, 24},
      {T::Work, shifted ? 38.0 : 34.0, 5, 16, 48},
      {T::School, 26, 3, 16, 36},
      {T::CareGiving, 6, 2, 3, 16},
      {T::BuyGoods, 4, 1.5, 3, 10},
      {T::BuyServices, 4, 1.5, 3, 10},
      {T::BuyMeals, 4, 1, 3, 8},
      {T::GeneralErrands, 4, 1.5, 3, 10},
      {T::Recreational, shifted ? 14.0 : 10.0, 4, 3, 28},
      {T::Exercise, 5, 1.5, 3, 12},
      {T::VisitFriends, 10, 4, 3, 28},
      {T::HealthCare, 5, 2, 3, 12},
      {T::Religious, 7, 2, 3, 16},
      {T::SomethingElse, 6, 3, 3, 20},
      {T::DropOffPickUp, 3, 0.8, 3, 6},
  };
  g.duration.resize(n);
  for (const auto& d : durations) g.duration[idx(d.type)] = discretized_normal(d.mean, d.sd, d.lo, d.hi);

  g.eos = seg == Segment::Retiree ? 0.5 : (weekday ? 0.6 : 0.5);
  if (shifted) g.eos -= 0.15;
  return g;
}

std::vector<double> default_marginal(const AttributeSpec& a) {
  // Declining weights over real categories, 5% non-response.
  std::vector<double> m(static_cast<std::size_t>(a.cardinality), 0.0);
  double w = 1.0;
  double total = 0.0;
  for (int c = 0; c < a.cardinality; ++c) {
    if (c == a.dummy) continue;
    m[static_cast<std::size_t>(c)] = w;
    total += w;
    w *= 0.8;
  }
  for (auto& v : m) v *= 0.95 / total;
  m[static_cast<std::size_t>(a.dummy)] = 0.05;
  return m;
}

void check_distribution(const std::vector<double>& d, std::size_t size, const std::string& what) {
  if (d.size() != size) throw ConfigError(what + ": expected " + std::to_string(size) + " entries");
  double t = 0.0;
  for (double v : d) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(what + ": negative or non-finite mass");
    t += v;
  }
  if (std::abs(t - 1.0) > 1e-9) throw ConfigError(what + ": masses sum to " + std::to_string(t));
}

}  // namespace

Segment segment_of(const AgentProfile& p, const DatasetSchema& schema) {
  const auto attrs = schema.ordered();
  int grade = -1, employment = -1;
  for (std::size_t k = 0; k < attrs.size() && k < p.attribute_count(); ++k) {
    if (attrs[k]->name == "school_grade") grade = p.attribute(k);
    if (attrs[k]->name == "employment_status") employment = p.attribute(k);
  }
  if (grade >= 1 && grade <= 4) return Segment::Student;
  if (employment == 0 || employment == 1) return Segment::Worker;
  return Segment::Retiree;
}

SyntheticGrammar default_grammar(const DatasetSchema& schema, GrammarVariant variant) {
  const bool shifted = variant == GrammarVariant::Shifted;
  SyntheticGrammar g;
  g.name = shifted ? "shifted" : "reference";
  for (int s = 0; s < kSegments; ++s) {
    for (int weekend = 0; weekend < 2; ++weekend) {
      g.segments.push_back(make_segment(static_cast<Segment>(s), weekend == 0, shifted));
    }
  }
  g.gap = {0.0, 0.5, 0.3, 0.2};
  g.household_size = {0.28, 0.34, 0.16, 0.14, 0.08};
  for (const auto* a : schema.ordered()) {
    auto m = default_marginal(*a);
    if (a->name == "school_grade" && a->cardinality == 6) m = {0.78, 0.05, 0.05, 0.04, 0.03, 0.05};
    if (a->name == "employment_status" && a->cardinality == 5) m = {0.36, 0.12, 0.15, 0.32, 0.05};
    g.attribute_marginals.push_back(std::move(m));
  }
  g.validate(schema);
  return g;
}

void SyntheticGrammar::validate(const DatasetSchema& schema) const {
  if (segments.size() != 2 * kSegments) throw ConfigError("grammar needs 6 segment tables");
  const std::size_t n = kNumActivityTypes;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& seg = segments[s];
    const std::string where = "segment " + std::to_string(s);
    if (seg.transition.size() != n) throw ConfigError(where + ": transition must be 15x15");
    for (std::size_t i = 0; i < n; ++i) {
      check_distribution(seg.transition[i], n, where + " transition row " + std::to_string(i + 1));
    }
    if (seg.first_start.size() != n || seg.duration.size() != n) {
      throw ConfigError(where + ": start/duration tables need 15 entries");
    }
    for (std::size_t i = 0; i < n; ++i) {
      check_distribution(seg.first_start[i], kSlotsPerDay, where + " start " + std::to_string(i + 1));
      check_distribution(seg.duration[i], kSlotsPerDay, where + " duration " + std::to_string(i + 1));
    }
    if (!(seg.eos > 0.0 && seg.eos <= 1.0)) throw ConfigError(where + ": eos must be in (0,1]");
  }
  if (gap.empty()) throw ConfigError("gap distribution empty");
  check_distribution(gap, gap.size(), "gap");
  check_distribution(household_size, household_size.size(), "household_size");
  if (household_size.size() > kMaxHouseholdSize) throw ConfigError("household_size supports > 5");
  const auto cards = schema.cardinalities();
  if (attribute_marginals.size() != cards.size()) {
    throw ConfigError("grammar has " + std::to_string(attribute_marginals.size()) +
                      " attribute marginals, schema has " + std::to_string(cards.size()));
  }
  for (std::size_t k = 0; k < cards.size(); ++k) {
    check_distribution(attribute_marginals[k], static_cast<std::size_t>(cards[k]),
                       "attribute marginal " + std::to_string(k));
  }
  if (late_slot < 2 || late_slot > kSlotsPerDay) throw ConfigError("late_slot outside 2..96");
}

ActivityChain sample_chain(const SyntheticGrammar& g, Segment s, bool weekday, int max_len,
                           std::mt19937_64& rng) {
  const auto& seg = g.for_segment(s, weekday);
  auto draw_gap = [&] { return static_cast<int>(sample_index(g.gap, rng)) + 1; };
  auto draw_slot = [&](const SlotDistribution& d) { return static_cast<int>(sample_index(d, rng)) + 1; };

  std::vector<Activity> acts;
  acts.push_back({ActivityType::Home, 1, kSlotsPerDay});
  if (max_len == 1) return ActivityChain(std::move(acts), max_len);

  // First departure: the first out-of-home activity's preferred start
  // fixes when the day's first Home ends.
  {
    const auto next = static_cast<std::size_t>(sample_index(seg.transition[0], rng));
    const int gap = draw_gap();
    const int start = draw_slot(seg.first_start[next]);
    acts[0].end = std::max(1, start - gap);
    const int begin = acts[0].end + gap;
    const int end = std::min(kSlotsPerDay, begin + draw_slot(seg.duration[next]) - 1);
    acts.push_back({static_cast<ActivityType>(next + 1), begin, end});
  }

  while (true) {
    Activity& cur = acts.back();
    const bool at_home = cur.kind == ActivityType::Home;
    const bool full = static_cast<int>(acts.size()) >= max_len;
    const bool one_left = static_cast<int>(acts.size()) == max_len - 1;
    if (cur.end >= g.late_slot || full || (one_left && !at_home)) {
      if (at_home) {
        cur.end = kSlotsPerDay;
      } else if (!full && cur.end < kSlotsPerDay) {
        const int begin = std::min(kSlotsPerDay, cur.end + draw_gap());
        acts.push_back({ActivityType::Home, begin, kSlotsPerDay});
      }
      break;
    }
    if (at_home && uniform01(rng) < seg.eos) {
      cur.end = kSlotsPerDay;
      break;
    }
    const std::size_t row = static_cast<std::size_t>(code(cur.kind) - 1);
    const auto next = static_cast<std::size_t>(sample_index(seg.transition[row], rng));
    const int begin = cur.end + draw_gap();
    const int end = std::min(kSlotsPerDay, begin + draw_slot(seg.duration[next]) - 1);
    acts.push_back({static_cast<ActivityType>(next + 1), begin, end});
  }
  return ActivityChain(std::move(acts), max_len);
}

std::vector<EncodedSample> synth_population(const SyntheticGrammar& grammar,
                                            const DatasetSchema& schema, std::size_t n,
                                            std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("synth_population: n must be >= 1");
  grammar.validate(schema);
  const std::size_t n_personal = schema.personal_count();
  const auto attrs = schema.ordered();
  std::size_t size_attr = attrs.size();
  for (std::size_t k = n_personal; k < attrs.size(); ++k) {
    if (attrs[k]->name == "household_size") size_attr = k;
  }

  std::vector<EncodedSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = derive_rng(seed, i);
    EncodedSample s;
    char id[32];
    std::snprintf(id, sizeof id, "h%07zu", i);
    s.household_id = id;
    const std::size_t members = sample_index(grammar.household_size, rng) + 1;
    std::vector<int> shared;
    for (std::size_t k = n_personal; k < attrs.size(); ++k) {
      int v = static_cast<int>(sample_index(grammar.attribute_marginals[k], rng));
      if (k == size_attr) v = std::min(static_cast<int>(members) - 1, attrs[k]->cardinality - 2);
      shared.push_back(v);
    }
    for (std::size_t m = 0; m < members; ++m) {
      AgentProfile p;
      for (std::size_t k = 0; k < n_personal; ++k) {
        p.personal.push_back(static_cast<int>(sample_index(grammar.attribute_marginals[k], rng)));
      }
      p.household = shared;
      s.household.members.push_back(std::move(p));
    }
    s.household.target_index = 0;
    s.weekday = uniform01(rng) < grammar.weekday_probability;
    s.chain = sample_chain(grammar, segment_of(s.target(), schema), s.weekday, schema.max_len, rng);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grammar files

void save_grammar(const SyntheticGrammar& g, const std::filesystem::path& path) {
  json segs = json::array();
  for (const auto& s : g.segments) {
    segs.push_back({{"transition", s.transition},
                    {"first_start", s.first_start},
                    {"duration", s.duration},
                    {"eos", s.eos}});
  }
  json j = {{"name", g.name},
            {"segments", segs},
            {"gap", g.gap},
            {"late_slot", g.late_slot},
            {"attribute_marginals", g.attribute_marginals},
            {"household_size", g.household_size},
            {"weekday_probability", g.weekday_probability}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump() << '\n';
}

SyntheticGrammar load_grammar(const std::filesystem::path& path, const DatasetSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  SyntheticGrammar g;
  try {
    const json j = json::parse(in);
    g.name = j.value("name", "grammar");
    for (const auto& s : j.at("segments")) {
      SegmentGrammar sg;
      sg.transition = s.at("transition").get<std::vector<std::vector<double>>>();
      sg.first_start = s.at("first_start").get<std::vector<SlotDistribution>>();
      sg.duration = s.at("duration").get<std::vector<SlotDistribution>>();
      sg.eos = s.at("eos").get<double>();
      g.segments.push_back(std::move(sg));
    }
    g.gap = j.at("gap").get<std::vector<double>>();
    g.late_slot = j.at("late_slot").get<int>();
    g.attribute_marginals = j.at("attribute_marginals").get<std::vector<std::vector<double>>>();
    g.household_size = j.at("household_size").get<std::vector<double>>();
    g.weekday_probability = j.value("weekday_probability", 5.0 / 7.0);
  } catch (const json::exception& e) {
    throw ConfigError("grammar file " + path.string() + ": " + e.what());
  }
  g.validate(schema);
  return g;
}

}  // namespace deepact
