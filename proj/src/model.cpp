#include "deepact/model/transformer.hpp"

#include <fstream>

#include "json.hpp"

namespace deepact {

ModelInput make_input(const Household& household, bool weekday, const ModelConfig& config,
                      std::vector<Activity> chain) {
  std::vector<int> dummies;
  for (int k = 0; k < config.attribute_count(); ++k) dummies.push_back(config.dummy_code(k));
  const PaddedHousehold padded =
      pad_household(household, dummies, static_cast<std::size_t>(config.personal_count));
  ModelInput in;
  for (std::size_t m = 0; m < kMaxHouseholdSize; ++m) {
    const AgentProfile& prof = padded.members[m];
    auto& codes = in.codes[m];
    codes.reserve(prof.attribute_count());
    for (std::size_t k = 0; k < prof.attribute_count(); ++k) codes.push_back(prof.attribute(k));
    in.member_pad[m] = padded.pad[m];
  }
  in.weekday = weekday ? 1 : 0;
  in.chain = std::move(chain);
  return in;
}

ModelInput make_input(const EncodedSample& sample, const ModelConfig& config) {
  return make_input(sample.household, sample.weekday, config, sample.chain.activities());
}

std::vector<EncoderToken> encoder_layout(const ModelInput& in, const ModelConfig& config, int prefix_len) {
  std::vector<EncoderToken> out;
  const int K = config.attribute_count();
  out.reserve(static_cast<std::size_t>(config.profile_positions() + prefix_len));
  int pos = 0;
  for (int m = 0; m < kMaxHouseholdSize; ++m) {
    const bool pad = in.member_pad[static_cast<std::size_t>(m)];
    for (int k = 0; k < K; ++k) out.push_back({pos++, TokenKind::Attribute, m, k, pad});
    out.push_back({pos++, TokenKind::Separator, m, m, false});
  }
  for (int a = 0; a < prefix_len; ++a) out.push_back({pos++, TokenKind::Activity, -1, a, false});
  return out;
}

std::string segment_label(const EncoderToken& t) {
  switch (t.kind) {
    case TokenKind::Attribute:
      return t.member == 0 ? "target" : "member " + std::to_string(t.member + 1);
    case TokenKind::Separator:
      return "SEP " + std::to_string(t.index + 1);
    case TokenKind::Activity:
      return "activity " + std::to_string(t.index + 1);
  }
  return {};
}

StepTargets step_targets(const std::vector<Activity>& chain) {
  StepTargets t;
  const std::size_t T = chain.size() + 1;
  t.type.resize(T);
  t.start.assign(T, 0);
  t.end.assign(T, 0);
  t.type_pad.assign(T, false);
  t.time_pad.assign(T, false);
  for (std::size_t i = 0; i < chain.size(); ++i) {
    t.type[i] = detail::type_index(chain[i]);
    t.start[i] = chain[i].start - 1;
    t.end[i] = chain[i].end - 1;
  }
  t.type[chain.size()] = kTypeEos;
  t.time_pad[chain.size()] = true;
  return t;
}

std::vector<AttentionEntry> flatten(const AttentionExport& a, double min_weight) {
  std::vector<AttentionEntry> out;
  for (std::size_t h = 0; h < a.heads.size(); ++h) {
    const auto& m = a.heads[h];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (m(i, j) < min_weight || (min_weight <= 0.0 && m(i, j) == 0.0)) continue;
        const auto& q = a.tokens[static_cast<std::size_t>(i)];
        const auto& k = a.tokens[static_cast<std::size_t>(j)];
        out.push_back({static_cast<int>(h), q.position, k.position, segment_label(q), segment_label(k), m(i, j)});
      }
    }
  }
  return out;
}

void save_attention_json(const AttentionExport& a, const std::filesystem::path& path) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : flatten(a)) {
    rows.push_back({{"layer", 1},
                    {"head", e.head},
                    {"query", e.query},
                    {"key", e.key},
                    {"query_segment", e.query_label},
                    {"key_segment", e.key_label},
                    {"weight", e.weight}});
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << rows.dump() << '\n';
}

}  // namespace deepact
