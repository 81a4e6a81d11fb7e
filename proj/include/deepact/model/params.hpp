#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "deepact/model/config.hpp"
#include "deepact/random.hpp"

namespace deepact {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
struct NormParams {
  Mat<Scalar> gain, bias;  // 1 x d
};

template <typename Scalar>
struct AttentionParams {
  Mat<Scalar> wq, wk, wv, wo;  // d x d
  Mat<Scalar> bq, bk, bv, bo;  // 1 x d
};

template <typename Scalar>
struct FeedForwardParams {
  Mat<Scalar> w1, b1;  // d x ff, 1 x ff
  Mat<Scalar> w2, b2;  // ff x d, 1 x d
};

template <typename Scalar>
struct EncoderLayerParams {
  NormParams<Scalar> norm1;
  AttentionParams<Scalar> self;
  NormParams<Scalar> norm2;
  FeedForwardParams<Scalar> ff;
};

template <typename Scalar>
struct DecoderLayerParams {
  NormParams<Scalar> norm1;
  AttentionParams<Scalar> self;
  NormParams<Scalar> norm2;
  AttentionParams<Scalar> cross;
  NormParams<Scalar> norm3;
  FeedForwardParams<Scalar> ff;
};

/// All trainable tensors of the activity model. The same type doubles as
/// the gradient container.
template <typename Scalar>
struct ModelParams {
  ModelConfig config;

  std::vector<Mat<Scalar>> attribute_tables;  // cardinality x attr_dim each
  Mat<Scalar> weekday_table;                  // 2 x attr_dim
  Mat<Scalar> input_proj, input_bias;         // attr_dim x d, 1 x d
  Mat<Scalar> separators;                     // 5 x d
  Mat<Scalar> type_table;                     // kTypeVocab x d
  Mat<Scalar> start_table, end_table;         // kTimeVocab x d

  std::vector<EncoderLayerParams<Scalar>> encoder;
  NormParams<Scalar> encoder_norm;
  std::vector<DecoderLayerParams<Scalar>> decoder;
  NormParams<Scalar> decoder_norm;

  Mat<Scalar> type_head, type_bias;    // d x 16
  Mat<Scalar> start_head, start_bias;  // d x 96
  Mat<Scalar> end_head, end_bias;      // d x 96
};

template <typename Scalar>
struct TensorRef {
  std::string name;
  std::string group;
  Mat<Scalar>* value;
};

namespace detail {

template <typename Scalar, typename Fn>
void visit_norm(NormParams<Scalar>& n, const std::string& name, const std::string& group, Fn& fn) {
  fn(name + ".gain", group, n.gain);
  fn(name + ".bias", group, n.bias);
}

template <typename Scalar, typename Fn>
void visit_attention(AttentionParams<Scalar>& a, const std::string& name, const std::string& group,
                     Fn& fn) {
  fn(name + ".wq", group, a.wq);
  fn(name + ".bq", group, a.bq);
  fn(name + ".wk", group, a.wk);
  fn(name + ".bk", group, a.bk);
  fn(name + ".wv", group, a.wv);
  fn(name + ".bv", group, a.bv);
  fn(name + ".wo", group, a.wo);
  fn(name + ".bo", group, a.bo);
}

template <typename Scalar, typename Fn>
void visit_ff(FeedForwardParams<Scalar>& f, const std::string& name, const std::string& group, Fn& fn) {
  fn(name + ".w1", group, f.w1);
  fn(name + ".b1", group, f.b1);
  fn(name + ".w2", group, f.w2);
  fn(name + ".b2", group, f.b2);
}

}  // namespace detail

/// Visits every tensor in a fixed order as fn(name, group, Mat&). Groups
/// are the units of freezing: attributes, input_proj, separators,
/// activity_embed, encoder.<i>, encoder.norm, decoder.<i>, decoder.norm,
/// heads.type, heads.start, heads.end.
template <typename Scalar, typename Fn>
void for_each_tensor(ModelParams<Scalar>& p, Fn&& fn) {
  for (std::size_t k = 0; k < p.attribute_tables.size(); ++k) {
    fn("attributes." + std::to_string(k), std::string("attributes"), p.attribute_tables[k]);
  }
  fn("attributes.weekday", "attributes", p.weekday_table);
  fn("input_proj.weight", "input_proj", p.input_proj);
  fn("input_proj.bias", "input_proj", p.input_bias);
  fn("separators", "separators", p.separators);
  fn("activity_embed.type", "activity_embed", p.type_table);
  fn("activity_embed.start", "activity_embed", p.start_table);
  fn("activity_embed.end", "activity_embed", p.end_table);
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const std::string g = "encoder." + std::to_string(l);
    detail::visit_norm(p.encoder[l].norm1, g + ".norm1", g, fn);
    detail::visit_attention(p.encoder[l].self, g + ".self", g, fn);
    detail::visit_norm(p.encoder[l].norm2, g + ".norm2", g, fn);
    detail::visit_ff(p.encoder[l].ff, g + ".ff", g, fn);
  }
  detail::visit_norm(p.encoder_norm, "encoder.norm", "encoder.norm", fn);
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const std::string g = "decoder." + std::to_string(l);
    detail::visit_norm(p.decoder[l].norm1, g + ".norm1", g, fn);
    detail::visit_attention(p.decoder[l].self, g + ".self", g, fn);
    detail::visit_norm(p.decoder[l].norm2, g + ".norm2", g, fn);
    detail::visit_attention(p.decoder[l].cross, g + ".cross", g, fn);
    detail::visit_norm(p.decoder[l].norm3, g + ".norm3", g, fn);
    detail::visit_ff(p.decoder[l].ff, g + ".ff", g, fn);
  }
  detail::visit_norm(p.decoder_norm, "decoder.norm", "decoder.norm", fn);
  fn("heads.type.weight", "heads.type", p.type_head);
  fn("heads.type.bias", "heads.type", p.type_bias);
  fn("heads.start.weight", "heads.start", p.start_head);
  fn("heads.start.bias", "heads.start", p.start_bias);
  fn("heads.end.weight", "heads.end", p.end_head);
  fn("heads.end.bias", "heads.end", p.end_bias);
}

template <typename Scalar, typename Fn>
void for_each_tensor(const ModelParams<Scalar>& p, Fn&& fn) {
  for_each_tensor(const_cast<ModelParams<Scalar>&>(p),
                  [&](const std::string& name, const std::string& group, Mat<Scalar>& m) {
                    fn(name, group, static_cast<const Mat<Scalar>&>(m));
                  });
}

template <typename Scalar>
std::vector<TensorRef<Scalar>> tensors(ModelParams<Scalar>& p) {
  std::vector<TensorRef<Scalar>> out;
  for_each_tensor(p, [&](const std::string& n, const std::string& g, Mat<Scalar>& m) {
    out.push_back({n, g, &m});
  });
  return out;
}

/// True when `group` equals `pattern` or sits below it ("encoder" matches
/// "encoder.0" and "encoder.norm").
inline bool group_matches(const std::string& group, const std::string& pattern) {
  if (pattern == "*" || group == pattern) return true;
  return group.size() > pattern.size() && group.compare(0, pattern.size(), pattern) == 0 &&
         group[pattern.size()] == '.';
}

template <typename Scalar>
std::size_t parameter_count(const ModelParams<Scalar>& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&](const auto&, const auto&, const Mat<Scalar>& m) {
    n += static_cast<std::size_t>(m.size());
  });
  return n;
}

/// Zero tensors with the shapes of `p`.
template <typename Scalar>
ModelParams<Scalar> zeros_like(const ModelParams<Scalar>& p) {
  ModelParams<Scalar> z = p;
  for_each_tensor(z, [](const auto&, const auto&, Mat<Scalar>& m) { m.setZero(); });
  return z;
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out;
  out.config = p.config;
  // Build the structure first so the visitor orders line up.
  out.attribute_tables.resize(p.attribute_tables.size());
  out.encoder.resize(p.encoder.size());
  out.decoder.resize(p.decoder.size());
  std::vector<const Mat<From>*> src;
  for_each_tensor(p, [&](const auto&, const auto&, const Mat<From>& m) { src.push_back(&m); });
  std::size_t i = 0;
  for_each_tensor(out, [&](const auto&, const auto&, Mat<To>& m) { m = src[i++]->template cast<To>(); });
  return out;
}

namespace detail {

template <typename Scalar>
Mat<Scalar> xavier(int rows, int cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  Mat<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<Scalar>((2.0 * uniform01(rng) - 1.0) * limit);
  }
  return m;
}

template <typename Scalar>
Mat<Scalar> gaussian(int rows, int cols, double sd, std::mt19937_64& rng) {
  Mat<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(sd * standard_normal(rng));
  return m;
}

template <typename Scalar>
NormParams<Scalar> unit_norm(int d) {
  return {Mat<Scalar>::Ones(1, d), Mat<Scalar>::Zero(1, d)};
}

template <typename Scalar>
AttentionParams<Scalar> init_attention(int d, std::mt19937_64& rng) {
  AttentionParams<Scalar> a;
  a.wq = xavier<Scalar>(d, d, rng);
  a.wk = xavier<Scalar>(d, d, rng);
  a.wv = xavier<Scalar>(d, d, rng);
  a.wo = xavier<Scalar>(d, d, rng);
  a.bq = a.bk = a.bv = a.bo = Mat<Scalar>::Zero(1, d);
  return a;
}

template <typename Scalar>
FeedForwardParams<Scalar> init_ff(int d, int ff, std::mt19937_64& rng) {
  return {xavier<Scalar>(d, ff, rng), Mat<Scalar>::Zero(1, ff), xavier<Scalar>(ff, d, rng),
          Mat<Scalar>::Zero(1, d)};
}

}  // namespace detail

/// Attribute embedding tables plus the projection into d_model. Also used
/// to graft a new input adapter onto a pretrained model.
template <typename Scalar>
void init_input_layers(ModelParams<Scalar>& p, std::mt19937_64& rng) {
  const auto& c = p.config;
  const int da = c.attribute_dim();
  p.attribute_tables.clear();
  for (int card : c.attribute_cardinalities) {
    p.attribute_tables.push_back(detail::gaussian<Scalar>(card, da, 1.0, rng));
  }
  p.weekday_table = detail::gaussian<Scalar>(2, da, 1.0, rng);
  p.input_proj = detail::xavier<Scalar>(da, c.d_model, rng);
  p.input_bias = Mat<Scalar>::Zero(1, c.d_model);
}

template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config) {
  config.validate();
  ModelParams<Scalar> p;
  p.config = config;
  auto rng = derive_rng(config.init_seed, 0x1417);
  const int d = config.d_model;
  init_input_layers(p, rng);
  p.separators = detail::gaussian<Scalar>(kMaxHouseholdSize, d, 1.0, rng);
  p.type_table = detail::gaussian<Scalar>(kTypeVocab, d, 1.0, rng);
  p.start_table = detail::gaussian<Scalar>(kTimeVocab, d, 1.0, rng);
  p.end_table = detail::gaussian<Scalar>(kTimeVocab, d, 1.0, rng);
  for (int l = 0; l < config.encoder_layers; ++l) {
    EncoderLayerParams<Scalar> e;
    e.norm1 = detail::unit_norm<Scalar>(d);
    e.self = detail::init_attention<Scalar>(d, rng);
    e.norm2 = detail::unit_norm<Scalar>(d);
    e.ff = detail::init_ff<Scalar>(d, config.ff_width, rng);
    p.encoder.push_back(std::move(e));
  }
  p.encoder_norm = detail::unit_norm<Scalar>(d);
  for (int l = 0; l < config.decoder_layers; ++l) {
    DecoderLayerParams<Scalar> e;
    e.norm1 = detail::unit_norm<Scalar>(d);
    e.self = detail::init_attention<Scalar>(d, rng);
    e.norm2 = detail::unit_norm<Scalar>(d);
    e.cross = detail::init_attention<Scalar>(d, rng);
    e.norm3 = detail::unit_norm<Scalar>(d);
    e.ff = detail::init_ff<Scalar>(d, config.ff_width, rng);
    p.decoder.push_back(std::move(e));
  }
  p.decoder_norm = detail::unit_norm<Scalar>(d);
  p.type_head = detail::xavier<Scalar>(d, kTypeClasses, rng);
  p.type_bias = Mat<Scalar>::Zero(1, kTypeClasses);
  p.start_head = detail::xavier<Scalar>(d, kSlotsPerDay, rng);
  p.start_bias = Mat<Scalar>::Zero(1, kSlotsPerDay);
  p.end_head = detail::xavier<Scalar>(d, kSlotsPerDay, rng);
  p.end_bias = Mat<Scalar>::Zero(1, kSlotsPerDay);
  return p;
}

}  // namespace deepact
