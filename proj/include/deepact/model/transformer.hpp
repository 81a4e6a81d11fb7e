#pragma once

#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "deepact/ingest.hpp"
#include "deepact/model/layers.hpp"
#include "deepact/model/losses.hpp"
#include "deepact/model/params.hpp"

namespace deepact {

/// Model-ready view of one sample: five member slots of attribute codes
/// (target first, padding last) plus the activity chain used both as the
/// encoder prefix and the teacher-forced decoder input.
struct ModelInput {
  std::array<std::vector<int>, kMaxHouseholdSize> codes;
  std::array<bool, kMaxHouseholdSize> member_pad{};
  int weekday = 1;  // 1 weekday, 0 weekend
  std::vector<Activity> chain;
};

ModelInput make_input(const Household& household, bool weekday, const ModelConfig& config,
                      std::vector<Activity> chain = {});
ModelInput make_input(const EncodedSample& sample, const ModelConfig& config);

enum class TokenKind { Attribute, Separator, Activity };

/// One encoder position. `member` is the household slot (0 = target) for
/// attribute and separator tokens; `index` is the attribute, separator or
/// activity index.
struct EncoderToken {
  int position = 0;
  TokenKind kind = TokenKind::Attribute;
  int member = 0;
  int index = 0;
  bool pad = false;
};

/// Layout [m0 attrs] SEP [m1 attrs] SEP ... [m4 attrs] SEP [prefix]. Only
/// attribute tokens of padded members are masked.
std::vector<EncoderToken> encoder_layout(const ModelInput& in, const ModelConfig& config, int prefix_len);

/// Readable segment label: "target", "member 2".."member 5", "SEP 1".."SEP 5",
/// "activity 1"...
std::string segment_label(const EncoderToken& t);

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& group)
      : std::runtime_error("non-finite gradient in parameter group " + group), group_(group) {}
  const std::string& group() const { return group_; }

 private:
  std::string group_;
};

namespace detail {

inline int type_index(const Activity& a) { return code(a.kind) - 1; }

inline void check_input(const ModelInput& in, const ModelConfig& c) {
  for (const auto& codes : in.codes) {
    if (static_cast<int>(codes.size()) != c.attribute_count())
      throw std::logic_error("attribute count does not match the model");
    for (int k = 0; k < c.attribute_count(); ++k) {
      if (codes[static_cast<std::size_t>(k)] < 0 ||
          codes[static_cast<std::size_t>(k)] >= c.attribute_cardinalities[static_cast<std::size_t>(k)])
        throw std::logic_error("attribute code outside the embedding table");
    }
  }
  if (static_cast<int>(in.chain.size()) > c.max_len) throw std::logic_error("chain longer than max_len");
  for (const auto& a : in.chain) {
    if (!is_real(a.kind) || a.start < 1 || a.start > kSlotsPerDay || a.end < 1 || a.end > kSlotsPerDay)
      throw std::logic_error("chain holds a special code or out-of-range slot");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Encoder input

template <typename Scalar>
struct EncoderInput {
  Mat<Scalar> x;  // positions x d_model, positional encoding included
  std::vector<bool> pad;
  std::vector<EncoderToken> tokens;
};

/// Lookup of the attribute-style rows (attribute tables and the weekday
/// table) that pass through the input projection.
struct AttributeLookup {
  int table;  // attribute index, or attribute_count() for weekday
  int code;
  int row;    // destination row in the token matrix
};

template <typename Scalar>
Mat<Scalar> embed_tokens(const ModelParams<Scalar>& p, const ModelInput& in,
                         const std::vector<EncoderToken>& tokens, std::vector<AttributeLookup>* lookups_out,
                         Mat<Scalar>* emb_out) {
  const auto& c = p.config;
  const int d = c.d_model;
  const int K = c.attribute_count();
  std::vector<AttributeLookup> lookups;
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    const auto& t = tokens[r];
    if (t.kind == TokenKind::Attribute) {
      lookups.push_back({t.index, in.codes[static_cast<std::size_t>(t.member)][static_cast<std::size_t>(t.index)],
                         static_cast<int>(r)});
    } else if (t.kind == TokenKind::Separator && t.index == 0) {
      lookups.push_back({K, in.weekday, static_cast<int>(r)});
    }
  }
  Mat<Scalar> emb(static_cast<Eigen::Index>(lookups.size()), c.attribute_dim());
  for (std::size_t i = 0; i < lookups.size(); ++i) {
    const auto& l = lookups[i];
    emb.row(static_cast<Eigen::Index>(i)) =
        l.table == K ? p.weekday_table.row(l.code)
                     : p.attribute_tables[static_cast<std::size_t>(l.table)].row(l.code);
  }
  const Mat<Scalar> projected = (emb * p.input_proj).rowwise() + p.input_bias.row(0);
  Mat<Scalar> x = Mat<Scalar>::Zero(static_cast<Eigen::Index>(tokens.size()), d);
  for (std::size_t i = 0; i < lookups.size(); ++i) x.row(lookups[i].row) += projected.row(static_cast<Eigen::Index>(i));
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    const auto& t = tokens[r];
    const auto row = static_cast<Eigen::Index>(r);
    if (t.kind == TokenKind::Separator) {
      x.row(row) += p.separators.row(t.index);
    } else if (t.kind == TokenKind::Activity) {
      const Activity& a = in.chain[static_cast<std::size_t>(t.index)];
      x.row(row) += p.type_table.row(detail::type_index(a)) + p.start_table.row(a.start - 1) +
                    p.end_table.row(a.end - 1);
    }
  }
  const Mat<Scalar> pe = positional_table<Scalar>(tokens.empty() ? 0 : tokens.back().position + 1, d);
  for (std::size_t r = 0; r < tokens.size(); ++r) x.row(static_cast<Eigen::Index>(r)) += pe.row(tokens[r].position);
  if (lookups_out) *lookups_out = std::move(lookups);
  if (emb_out) *emb_out = std::move(emb);
  return x;
}

/// Full encoder input over the fixed layout with a `prefix_len`-activity
/// prefix taken from in.chain.
template <typename Scalar>
EncoderInput<Scalar> build_encoder_input(const ModelInput& in, const ModelParams<Scalar>& p, int prefix_len) {
  detail::check_input(in, p.config);
  if (prefix_len < 0 || prefix_len > static_cast<int>(in.chain.size()))
    throw std::logic_error("prefix longer than the chain");
  EncoderInput<Scalar> out;
  out.tokens = encoder_layout(in, p.config, prefix_len);
  out.x = embed_tokens<Scalar>(p, in, out.tokens, nullptr, nullptr);
  for (const auto& t : out.tokens) out.pad.push_back(t.pad);
  return out;
}

/// Encoder visibility: profile tokens see profile tokens; activity a sees
/// the profile and activities up to a. Padded keys are never visible.
inline AttentionMask encoder_mask(const std::vector<EncoderToken>& tokens) {
  const auto n = static_cast<Eigen::Index>(tokens.size());
  AttentionMask m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& q = tokens[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& k = tokens[static_cast<std::size_t>(j)];
      bool ok = !k.pad;
      if (k.kind == TokenKind::Activity) ok = ok && q.kind == TokenKind::Activity && k.index <= q.index;
      m(i, j) = ok;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename Scalar>
struct EncoderLayerCache {
  NormCache<Scalar> n1, n2;
  AttentionCache<Scalar> att;
  FeedForwardCache<Scalar> ff;
  Mat<Scalar> drop1, drop2;
};

template <typename Scalar>
struct DecoderLayerCache {
  NormCache<Scalar> n1, n2, n3;
  AttentionCache<Scalar> self, cross;
  FeedForwardCache<Scalar> ff;
  Mat<Scalar> drop1, drop2, drop3;
};

template <typename Scalar>
struct ForwardCache {
  std::vector<EncoderToken> tokens;  // unpadded encoder tokens in layout order
  std::vector<AttributeLookup> lookups;
  Mat<Scalar> attr_emb;
  AttentionMask enc_mask, dec_mask, cross_mask;
  Mat<Scalar> enc_drop0, dec_drop0;
  std::vector<EncoderLayerCache<Scalar>> enc;
  NormCache<Scalar> enc_norm;
  Mat<Scalar> memory;
  std::vector<DecoderLayerCache<Scalar>> dec;
  NormCache<Scalar> dec_norm;
  Mat<Scalar> dec_out;
  std::vector<int> dec_type, dec_start, dec_end;
};

/// Runs the model with teacher forcing on in.chain: the encoder sees the
/// whole chain as prefix (causally), the decoder sees SOS + chain and
/// predicts chain + EOS, so there are chain.size() + 1 decoder steps. Step
/// t only depends on activities before t. Dropout is active when `rng`
/// is given.
template <typename Scalar>
HeadLogits<Scalar> forward(const ModelParams<Scalar>& p, const ModelInput& in, ForwardCache<Scalar>* cache,
                           std::mt19937_64* rng = nullptr) {
  const auto& c = p.config;
  detail::check_input(in, c);
  const int d = c.d_model;
  const double rate = c.dropout;
  ForwardCache<Scalar> local;
  ForwardCache<Scalar>& fc = cache ? *cache : local;
  const bool keep = cache != nullptr;

  const int L = static_cast<int>(in.chain.size());
  std::vector<EncoderToken> tokens;
  for (const auto& t : encoder_layout(in, c, L)) {
    if (!t.pad) tokens.push_back(t);
  }
  Mat<Scalar> x = embed_tokens(p, in, tokens, &fc.lookups, &fc.attr_emb);
  fc.enc_mask = encoder_mask(tokens);
  fc.enc_drop0 = dropout_mask<Scalar>(x.rows(), d, rate, rng);
  apply_mask(x, fc.enc_drop0);
  fc.enc.assign(p.encoder.size(), {});
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const auto& lp = p.encoder[l];
    auto& lc = fc.enc[l];
    const Mat<Scalar> a = layer_norm(x, lp.norm1, &lc.n1);
    Mat<Scalar> att = attention(a, a, fc.enc_mask, lp.self, c.heads, &lc.att);
    lc.drop1 = dropout_mask<Scalar>(att.rows(), d, rate, rng);
    apply_mask(att, lc.drop1);
    x += att;
    const Mat<Scalar> b = layer_norm(x, lp.norm2, &lc.n2);
    Mat<Scalar> f = feed_forward(b, lp.ff, &lc.ff);
    lc.drop2 = dropout_mask<Scalar>(f.rows(), d, rate, rng);
    apply_mask(f, lc.drop2);
    x += f;
  }
  fc.memory = layer_norm(x, p.encoder_norm, &fc.enc_norm);

  // Decoder stream: SOS then the chain.
  const int T = L + 1;
  fc.dec_type.assign(static_cast<std::size_t>(T), kTypeSos);
  fc.dec_start.assign(static_cast<std::size_t>(T), kTimeNone);
  fc.dec_end.assign(static_cast<std::size_t>(T), kTimeNone);
  for (int t = 1; t < T; ++t) {
    const Activity& a = in.chain[static_cast<std::size_t>(t - 1)];
    fc.dec_type[static_cast<std::size_t>(t)] = detail::type_index(a);
    fc.dec_start[static_cast<std::size_t>(t)] = a.start - 1;
    fc.dec_end[static_cast<std::size_t>(t)] = a.end - 1;
  }
  const Mat<Scalar> pe = positional_table<Scalar>(T, d);
  Mat<Scalar> y(T, d);
  for (int t = 0; t < T; ++t) {
    const auto i = static_cast<std::size_t>(t);
    y.row(t) = p.type_table.row(fc.dec_type[i]) + p.start_table.row(fc.dec_start[i]) +
               p.end_table.row(fc.dec_end[i]) + pe.row(t);
  }
  fc.dec_drop0 = dropout_mask<Scalar>(T, d, rate, rng);
  apply_mask(y, fc.dec_drop0);

  const auto n = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index profile = n - L;
  fc.dec_mask.resize(T, T);
  fc.cross_mask.resize(T, n);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index j = 0; j < T; ++j) fc.dec_mask(t, j) = j <= t;
    for (Eigen::Index j = 0; j < n; ++j) fc.cross_mask(t, j) = j < profile || j - profile < t;
  }
  fc.dec.assign(p.decoder.size(), {});
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const auto& lp = p.decoder[l];
    auto& lc = fc.dec[l];
    const Mat<Scalar> a = layer_norm(y, lp.norm1, &lc.n1);
    Mat<Scalar> s = attention(a, a, fc.dec_mask, lp.self, c.heads, &lc.self);
    lc.drop1 = dropout_mask<Scalar>(T, d, rate, rng);
    apply_mask(s, lc.drop1);
    y += s;
    const Mat<Scalar> b = layer_norm(y, lp.norm2, &lc.n2);
    Mat<Scalar> cr = attention(b, fc.memory, fc.cross_mask, lp.cross, c.heads, &lc.cross);
    lc.drop2 = dropout_mask<Scalar>(T, d, rate, rng);
    apply_mask(cr, lc.drop2);
    y += cr;
    const Mat<Scalar> e = layer_norm(y, lp.norm3, &lc.n3);
    Mat<Scalar> f = feed_forward(e, lp.ff, &lc.ff);
    lc.drop3 = dropout_mask<Scalar>(T, d, rate, rng);
    apply_mask(f, lc.drop3);
    y += f;
  }
  fc.dec_out = layer_norm(y, p.decoder_norm, &fc.dec_norm);

  HeadLogits<Scalar> z;
  z.type = (fc.dec_out * p.type_head).rowwise() + p.type_bias.row(0);
  z.start = (fc.dec_out * p.start_head).rowwise() + p.start_bias.row(0);
  z.end = (fc.dec_out * p.end_head).rowwise() + p.end_bias.row(0);
  if (keep) fc.tokens = std::move(tokens);
  return z;
}

/// Accumulates parameter gradients given d(loss)/d(logits).
template <typename Scalar>
void backward(const ModelParams<Scalar>& p, const ForwardCache<Scalar>& fc, const HeadLogits<Scalar>& dz,
              ModelParams<Scalar>& g) {
  const auto& c = p.config;
  g.type_head.noalias() += fc.dec_out.transpose() * dz.type;
  g.type_bias.row(0) += dz.type.colwise().sum();
  g.start_head.noalias() += fc.dec_out.transpose() * dz.start;
  g.start_bias.row(0) += dz.start.colwise().sum();
  g.end_head.noalias() += fc.dec_out.transpose() * dz.end;
  g.end_bias.row(0) += dz.end.colwise().sum();
  Mat<Scalar> dout = dz.type * p.type_head.transpose();
  dout.noalias() += dz.start * p.start_head.transpose();
  dout.noalias() += dz.end * p.end_head.transpose();

  Mat<Scalar> dy = layer_norm_backward(dout, p.decoder_norm, fc.dec_norm, g.decoder_norm);
  Mat<Scalar> dmemory = Mat<Scalar>::Zero(fc.memory.rows(), fc.memory.cols());
  for (std::size_t l = p.decoder.size(); l-- > 0;) {
    const auto& lp = p.decoder[l];
    const auto& lc = fc.dec[l];
    auto& lg = g.decoder[l];
    Mat<Scalar> df = dy;
    apply_mask(df, lc.drop3);
    dy += layer_norm_backward(feed_forward_backward(df, lp.ff, lc.ff, lg.ff), lp.norm3, lc.n3, lg.norm3);
    Mat<Scalar> dc = dy;
    apply_mask(dc, lc.drop2);
    dy += layer_norm_backward(attention_backward(dc, lp.cross, c.heads, lc.cross, lg.cross, dmemory), lp.norm2,
                              lc.n2, lg.norm2);
    Mat<Scalar> ds = dy;
    apply_mask(ds, lc.drop1);
    Mat<Scalar> dkv = Mat<Scalar>::Zero(dy.rows(), dy.cols());
    Mat<Scalar> da = attention_backward(ds, lp.self, c.heads, lc.self, lg.self, dkv);
    da += dkv;
    dy += layer_norm_backward(da, lp.norm1, lc.n1, lg.norm1);
  }
  apply_mask(dy, fc.dec_drop0);
  for (Eigen::Index t = 0; t < dy.rows(); ++t) {
    const auto i = static_cast<std::size_t>(t);
    g.type_table.row(fc.dec_type[i]) += dy.row(t);
    g.start_table.row(fc.dec_start[i]) += dy.row(t);
    g.end_table.row(fc.dec_end[i]) += dy.row(t);
  }

  Mat<Scalar> dx = layer_norm_backward(dmemory, p.encoder_norm, fc.enc_norm, g.encoder_norm);
  for (std::size_t l = p.encoder.size(); l-- > 0;) {
    const auto& lp = p.encoder[l];
    const auto& lc = fc.enc[l];
    auto& lg = g.encoder[l];
    Mat<Scalar> df = dx;
    apply_mask(df, lc.drop2);
    dx += layer_norm_backward(feed_forward_backward(df, lp.ff, lc.ff, lg.ff), lp.norm2, lc.n2, lg.norm2);
    Mat<Scalar> ds = dx;
    apply_mask(ds, lc.drop1);
    Mat<Scalar> dkv = Mat<Scalar>::Zero(dx.rows(), dx.cols());
    Mat<Scalar> da = attention_backward(ds, lp.self, c.heads, lc.att, lg.self, dkv);
    da += dkv;
    dx += layer_norm_backward(da, lp.norm1, lc.n1, lg.norm1);
  }
  apply_mask(dx, fc.enc_drop0);

  // Attribute rows went through the projection.
  const int K = c.attribute_count();
  Mat<Scalar> drows(static_cast<Eigen::Index>(fc.lookups.size()), c.d_model);
  for (std::size_t i = 0; i < fc.lookups.size(); ++i) drows.row(static_cast<Eigen::Index>(i)) = dx.row(fc.lookups[i].row);
  g.input_proj.noalias() += fc.attr_emb.transpose() * drows;
  g.input_bias.row(0) += drows.colwise().sum();
  const Mat<Scalar> demb = drows * p.input_proj.transpose();
  for (std::size_t i = 0; i < fc.lookups.size(); ++i) {
    const auto& lk = fc.lookups[i];
    auto& table = lk.table == K ? g.weekday_table : g.attribute_tables[static_cast<std::size_t>(lk.table)];
    table.row(lk.code) += demb.row(static_cast<Eigen::Index>(i));
  }
  for (std::size_t r = 0; r < fc.tokens.size(); ++r) {
    const auto& t = fc.tokens[r];
    const auto row = static_cast<Eigen::Index>(r);
    if (t.kind == TokenKind::Separator) {
      g.separators.row(t.index) += dx.row(row);
    } else if (t.kind == TokenKind::Activity) {
      // Activity tokens mirror decoder inputs shifted by one step.
      const auto i = static_cast<std::size_t>(t.index + 1);
      g.type_table.row(fc.dec_type[i]) += dx.row(row);
      g.start_table.row(fc.dec_start[i]) += dx.row(row);
      g.end_table.row(fc.dec_end[i]) += dx.row(row);
    }
  }
}

/// Decoder-step targets for a teacher-forced chain: the chain's activities
/// then EOS (whose time heads are masked).
StepTargets step_targets(const std::vector<Activity>& chain);

inline LossNormalizers normalizers_for(std::span<const ModelInput> batch) {
  LossNormalizers n;
  for (const auto& in : batch) {
    n.type_rows += static_cast<double>(in.chain.size() + 1);
    n.time_rows += static_cast<double>(in.chain.size());
  }
  n.time_rows = std::max(n.time_rows, 1.0);
  return n;
}

/// Loss (and optionally gradient) of one sample under pooled normalizers.
template <typename Scalar>
Scalar sample_loss(const ModelParams<Scalar>& p, const ModelInput& in, const LossWeights& w,
                   const SoftLabelConfig& soft, const LossNormalizers& norm, ModelParams<Scalar>* grad,
                   std::mt19937_64* rng = nullptr, LossTerms* terms = nullptr) {
  ForwardCache<Scalar> fc;
  const HeadLogits<Scalar> z = forward(p, in, grad ? &fc : nullptr, rng);
  const StepTargets t = step_targets(in.chain);
  if (!grad) return total_loss<Scalar>(z, t, w, soft, norm, terms, nullptr);
  HeadLogits<Scalar> dz;
  const Scalar loss = total_loss<Scalar>(z, t, w, soft, norm, terms, &dz);
  backward(p, fc, dz, *grad);
  return loss;
}

/// Throws NonFiniteGradient naming the first offending group.
template <typename Scalar>
void check_finite(const ModelParams<Scalar>& g) {
  for_each_tensor(g, [](const std::string&, const std::string& group, const Mat<Scalar>& m) {
    if (!m.allFinite()) throw NonFiniteGradient(group);
  });
}

template <typename Scalar>
void add_into(ModelParams<Scalar>& acc, const ModelParams<Scalar>& g) {
  std::vector<const Mat<Scalar>*> src;
  for_each_tensor(g, [&](const auto&, const auto&, const Mat<Scalar>& m) { src.push_back(&m); });
  std::size_t i = 0;
  for_each_tensor(acc, [&](const auto&, const auto&, Mat<Scalar>& m) { m += *src[i++]; });
}

/// Pooled batch loss. The batch is cut into `chunks` contiguous pieces whose
/// gradients are summed in order, so results do not depend on `workers`.
/// Dropout streams are keyed by (dropout_seed, sample position).
template <typename Scalar>
Scalar batch_loss(const ModelParams<Scalar>& p, std::span<const ModelInput> batch, const LossWeights& w,
                  const SoftLabelConfig& soft, ModelParams<Scalar>* grad, const std::uint64_t* dropout_seed,
                  int chunks = 1, int workers = 1, LossTerms* terms = nullptr) {
  const LossNormalizers norm = normalizers_for(batch);
  const std::size_t n = batch.size();
  chunks = std::max(1, std::min<int>(chunks, static_cast<int>(std::max<std::size_t>(n, 1))));
  struct Part {
    double loss = 0.0;
    LossTerms terms;
    ModelParams<Scalar> grad;
  };
  std::vector<Part> parts(static_cast<std::size_t>(chunks));
  auto run = [&](int k) {
    auto& part = parts[static_cast<std::size_t>(k)];
    if (grad) part.grad = zeros_like(p);
    const std::size_t lo = n * static_cast<std::size_t>(k) / static_cast<std::size_t>(chunks);
    const std::size_t hi = n * static_cast<std::size_t>(k + 1) / static_cast<std::size_t>(chunks);
    for (std::size_t i = lo; i < hi; ++i) {
      std::mt19937_64 rng;
      if (dropout_seed) rng = derive_rng(*dropout_seed, i);
      part.loss += static_cast<double>(sample_loss<Scalar>(p, batch[i], w, soft, norm, grad ? &part.grad : nullptr,
                                                           dropout_seed ? &rng : nullptr, &part.terms));
    }
  };
  if (workers <= 1 || chunks == 1) {
    for (int k = 0; k < chunks; ++k) run(k);
  } else {
    for (int start = 0; start < chunks; start += workers) {
      std::vector<std::thread> pool;
      for (int k = start; k < std::min(chunks, start + workers); ++k) pool.emplace_back(run, k);
      for (auto& th : pool) th.join();
    }
  }
  double total = 0.0;
  for (auto& part : parts) {
    total += part.loss;
    if (terms) *terms += part.terms;
    if (grad) add_into(*grad, part.grad);
  }
  if (grad) check_finite(*grad);
  return static_cast<Scalar>(total);
}

// ---------------------------------------------------------------------------
// Attention export

struct AttentionEntry {
  int head;
  int query;
  int key;
  std::string query_label;
  std::string key_label;
  double weight;
};

struct AttentionExport {
  std::vector<EncoderToken> tokens;
  std::vector<Mat<double>> heads;  // positions x positions, row-stochastic
};

/// First encoder layer self-attention over the full layout (padded
/// positions included as queries; padded keys get zero weight).
template <typename Scalar>
AttentionExport export_attention(const ModelParams<Scalar>& p, const ModelInput& in) {
  if (p.encoder.empty()) throw std::logic_error("model has no encoder layer");
  const int L = static_cast<int>(in.chain.size());
  EncoderInput<Scalar> e = build_encoder_input(in, p, L);
  const AttentionMask mask = encoder_mask(e.tokens);
  const Mat<Scalar> a = layer_norm<Scalar>(e.x, p.encoder[0].norm1, nullptr);
  std::vector<Mat<Scalar>> probs;
  attention<Scalar>(a, a, mask, p.encoder[0].self, p.config.heads, nullptr, &probs);
  AttentionExport out;
  out.tokens = std::move(e.tokens);
  for (const auto& h : probs) out.heads.push_back(h.template cast<double>());
  return out;
}

std::vector<AttentionEntry> flatten(const AttentionExport& a, double min_weight = 0.0);
void save_attention_json(const AttentionExport& a, const std::filesystem::path& path);

}  // namespace deepact
