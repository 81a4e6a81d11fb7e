#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "deepact/model/checkpoint.hpp"
#include "deepact/model/generate.hpp"
#include "deepact/model/gradcheck.hpp"
#include "deepact/model/train.hpp"
#include "model_fixtures.hpp"

using namespace deepact;
using deepact::testing::random_inputs;
using deepact::testing::small_config;
namespace fs = std::filesystem;

namespace {

ModelConfig schema_config(const DatasetSchema& s) {
  ModelConfig c;
  c.attribute_cardinalities = s.cardinalities();
  c.personal_count = static_cast<int>(s.personal_count());
  return c;
}

Mat<double> random_logits(int rows, int cols, std::mt19937_64& rng, double scale = 3.0) {
  Mat<double> z(rows, cols);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = scale * (2.0 * uniform01(rng) - 1.0);
  return z;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "deepact_test_model";
  fs::create_directories(dir);
  return dir / name;
}

bool same_params(const ModelParams<double>& a, const ModelParams<double>& b) {
  std::vector<const Mat<double>*> x;
  for_each_tensor(a, [&](const auto&, const auto&, const Mat<double>& m) { x.push_back(&m); });
  std::size_t i = 0;
  bool same = true;
  for_each_tensor(b, [&](const auto&, const auto&, const Mat<double>& m) {
    same = same && x[i]->rows() == m.rows() && x[i]->cols() == m.cols() && *x[i] == m;
    ++i;
  });
  return same && i == x.size();
}

}  // namespace

// ---------------------------------------------------------------------------
// Encoder input

TEST_CASE("encoder layout: one member, empty prefix") {
  const auto cfg = schema_config(default_schema());
  const auto p = init_params<double>(cfg);
  std::mt19937_64 rng(1);
  const auto in = make_input(testing::random_household(cfg, 1, rng), true, cfg);
  const auto e = build_encoder_input(in, p, 0);
  CHECK(e.tokens.size() == 5 * 27);
  CHECK(e.x.rows() == 135);
  CHECK(e.x.cols() == cfg.d_model);
  const auto unmasked = std::count(e.pad.begin(), e.pad.end(), false);
  CHECK(unmasked == 26 + 5);
  int separators = 0;
  for (const auto& t : e.tokens) {
    if (t.kind == TokenKind::Separator) {
      ++separators;
      CHECK_FALSE(t.pad);
    }
    if (t.kind == TokenKind::Attribute) CHECK(t.pad == (t.member != 0));
  }
  CHECK(separators == 5);
}

TEST_CASE("encoder layout: five members, three-activity prefix") {
  const auto cfg = schema_config(default_schema());
  const auto p = init_params<double>(cfg);
  std::mt19937_64 rng(2);
  const auto in = make_input(testing::random_household(cfg, 5, rng), false, cfg, testing::random_chain(3, rng));
  const auto e = build_encoder_input(in, p, 3);
  CHECK(e.tokens.size() == 138);
  CHECK(std::count(e.pad.begin(), e.pad.end(), true) == 0);
  CHECK(e.tokens.back().kind == TokenKind::Activity);
  CHECK(segment_label(e.tokens[0]) == "target");
  CHECK(segment_label(e.tokens[27]) == "member 2");
  CHECK(segment_label(e.tokens[26]) == "SEP 1");
  CHECK(segment_label(e.tokens[137]) == "activity 3");
}

TEST_CASE("attention export: rows are stochastic and padded keys get zero") {
  auto cfg = small_config();
  const auto p = init_params<double>(cfg);
  std::mt19937_64 rng(3);
  const auto in = make_input(testing::random_household(cfg, 2, rng), true, cfg, testing::random_chain(4, rng));
  const auto a = export_attention(p, in);
  REQUIRE(a.heads.size() == 2);
  for (const auto& h : a.heads) {
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
      CHECK(std::abs(h.row(i).sum() - 1.0) < 1e-5);
      for (Eigen::Index j = 0; j < h.cols(); ++j) {
        if (a.tokens[static_cast<std::size_t>(j)].pad) CHECK(h(i, j) == 0.0);
      }
    }
  }
  const auto path = scratch("attention.json");
  save_attention_json(a, path);
  const auto rows = nlohmann::json::parse(std::ifstream(path));
  CHECK(rows.size() == flatten(a).size());
  CHECK(rows[0].contains("query_segment"));
}

// ---------------------------------------------------------------------------
// Forward

TEST_CASE("forward output shapes") {
  const auto cfg = small_config();
  const auto p = init_params<double>(cfg);
  for (const auto& in : random_inputs(cfg, 5, 4)) {
    const auto z = forward<double>(p, in, nullptr);
    const auto T = static_cast<Eigen::Index>(in.chain.size() + 1);
    CHECK(z.type.rows() == T);
    CHECK(z.type.cols() == kTypeClasses);
    CHECK(z.start.rows() == T);
    CHECK(z.start.cols() == 96);
    CHECK(z.end.cols() == 96);
  }
}

TEST_CASE("decoder is causal") {
  const auto cfg = small_config();
  const auto p = init_params<double>(cfg);
  auto in = random_inputs(cfg, 1, 5)[0];
  in.chain = {{ActivityType::Home, 1, 20}, {ActivityType::Work, 22, 50}, {ActivityType::Home, 52, 96},
              {ActivityType::Exercise, 60, 70}};
  const auto base = forward<double>(p, in, nullptr);
  for (std::size_t k = 0; k < in.chain.size(); ++k) {
    auto changed = in;
    changed.chain[k] = {ActivityType::Religious, 5, 9};
    const auto z = forward<double>(p, changed, nullptr);
    // Activity k is the decoder input at step k + 1.
    for (Eigen::Index t = 0; t <= static_cast<Eigen::Index>(k); ++t) {
      CHECK((z.type.row(t) == base.type.row(t)));
      CHECK((z.start.row(t) == base.start.row(t)));
      CHECK((z.end.row(t) == base.end.row(t)));
    }
    CHECK_FALSE((z.type.row(static_cast<Eigen::Index>(k) + 1) == base.type.row(static_cast<Eigen::Index>(k) + 1)));
  }
}

TEST_CASE("member order matters") {
  const auto cfg = small_config();
  const auto p = init_params<double>(cfg);
  std::mt19937_64 rng(6);
  auto h = testing::random_household(cfg, 3, rng);
  const auto chain = testing::random_chain(2, rng);
  const auto a = forward<double>(p, make_input(h, true, cfg, chain), nullptr);
  std::swap(h.members[1], h.members[2]);
  const auto b = forward<double>(p, make_input(h, true, cfg, chain), nullptr);
  CHECK_FALSE(a.type == b.type);
}

// ---------------------------------------------------------------------------
// Losses

TEST_CASE("loss_ce values") {
  Mat<double> z = Mat<double>::Zero(1, 4);
  std::vector<int> y{2};
  CHECK(loss_ce<double>(z, y) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(std::abs(loss_ce<double>(z, y) - 1.3863) < 1e-4);
  z(0, 2) = 1e6;
  CHECK(loss_ce<double>(z, y) < 1e-12);
  Mat<double> u = Mat<double>::Zero(3, 16);
  CHECK(loss_ce<double>(u, std::vector<int>{0, 5, 15}) == doctest::Approx(std::log(16.0)));
  // Pad rows are ignored.
  Mat<double> mixed = Mat<double>::Zero(2, 4);
  mixed(1, 0) = 50.0;
  CHECK(loss_ce<double>(mixed, std::vector<int>{1, 1}, std::vector<bool>{false, true}) ==
        doctest::Approx(std::log(4.0)));
}

TEST_CASE("loss_soft values and clipping") {
  SoftLabelConfig cfg;
  cfg.side_steps = 1;
  cfg.epsilon = 0.0;
  Mat<double> z = Mat<double>::Zero(1, 4);
  // Slot 2 is class index 1.
  CHECK(std::abs(loss_soft<double>(z, std::vector<int>{1}, cfg) - 1.6636) < 1e-4);
  CHECK(loss_soft<double>(z, std::vector<int>{1}, cfg) == doctest::Approx(-1.2 * std::log(0.25)).epsilon(1e-12));

  const auto row = soft_label_row(0, 96, SoftLabelConfig{});
  CHECK(row[0] == 1.0);
  CHECK(row[1] == 0.1);
  CHECK(row[2] == 0.1);
  CHECK(row[3] == 0.0);
  CHECK(std::accumulate(row.begin(), row.end(), 0.0) == doctest::Approx(1.2));
}

TEST_CASE("soft labels with no side steps equal cross entropy") {
  std::mt19937_64 rng(8);
  SoftLabelConfig cfg;
  cfg.side_steps = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto z = random_logits(7, 96, rng, 4.0);
    std::vector<int> y;
    for (int i = 0; i < 7; ++i) y.push_back(static_cast<int>(rng() % 96));
    CHECK(std::abs(loss_soft<double>(z, y, cfg) - loss_ce<double>(z, y)) <= 1e-12);
  }
}

TEST_CASE("expected_slot") {
  Mat<double> z = Mat<double>::Zero(2, 96);
  z(1, 30) = 1e6;
  const auto e = expected_slot(z);
  CHECK(e(0) == doctest::Approx(48.5));
  CHECK(std::abs(e(1) - 31.0) < 1e-3);
  Mat<double> sym(1, 96);
  for (int j = 0; j < 96; ++j) sym(0, j) = -std::abs(j + 1 - 48.5);
  CHECK(expected_slot(sym)(0) == doctest::Approx(48.5).epsilon(1e-12));
}

TEST_CASE("order and sequence hinges") {
  Col<double> start(3), end(3);
  start << 1, 30, 60;
  end << 28, 55, 90;
  CHECK(loss_order<double>(end, start) == 0.0);
  CHECK(loss_seq<double>(start, end) == 0.0);

  Col<double> s2(2), e2(2);
  e2 << 30.0, 50.0;
  s2 << 10.0, 28.0;
  CHECK(loss_order<double>(e2, s2) * 2 == doctest::Approx(2.0));
  Col<double> s3(1), e3(1);
  s3 << 40.0;
  e3 << 35.0;
  CHECK(loss_seq<double>(s3, e3) == doctest::Approx(5.0));
}

TEST_CASE("total_loss is linear in the weights") {
  const auto cfg = small_config();
  const auto p = init_params<double>(cfg);
  const auto in = random_inputs(cfg, 1, 9)[0];
  const auto z = forward<double>(p, in, nullptr);
  const auto t = step_targets(in.chain);
  const SoftLabelConfig soft;
  LossNormalizers norm{static_cast<double>(in.chain.size() + 1), static_cast<double>(in.chain.size())};
  LossTerms terms;
  LossWeights w;
  const double base = total_loss<double>(z, t, w, soft, norm, &terms);
  double manual = 0.0;
  for (int k = 0; k < 5; ++k) manual += w.w[k] * terms.terms[k];
  CHECK(std::abs(base - manual) < 1e-10);

  LossWeights ce_only{{1, 0, 0, 0, 0}};
  CHECK(total_loss<double>(z, t, ce_only, soft, norm) == doctest::Approx(loss_ce<double>(z.type, t.type)));

  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    LossWeights a, b, ab;
    for (int k = 0; k < 5; ++k) {
      a.w[k] = uniform01(rng);
      b.w[k] = uniform01(rng);
      ab.w[k] = a.w[k] + b.w[k];
    }
    const double la = total_loss<double>(z, t, a, soft, norm);
    const double lb = total_loss<double>(z, t, b, soft, norm);
    CHECK(std::abs(total_loss<double>(z, t, ab, soft, norm) - (la + lb)) < 1e-10);
  }
  LossWeights zero{{0, 0, 0, 0, 0}};
  CHECK_THROWS(zero.validate());
}

TEST_CASE("doubling weights doubles loss and gradient") {
  const auto cfg = small_config();
  const auto p = init_params<double>(cfg);
  const auto batch = random_inputs(cfg, 3, 11);
  const SoftLabelConfig soft;
  LossWeights w, w2;
  for (int k = 0; k < 5; ++k) w2.w[k] = 2 * w.w[k];
  auto g1 = zeros_like(p), g2 = zeros_like(p);
  const double l1 = batch_loss<double>(p, batch, w, soft, &g1, nullptr);
  const double l2 = batch_loss<double>(p, batch, w2, soft, &g2, nullptr);
  CHECK(l2 == doctest::Approx(2 * l1).epsilon(1e-12));
  std::vector<const Mat<double>*> a;
  for_each_tensor(g1, [&](const auto&, const auto&, const Mat<double>& m) { a.push_back(&m); });
  std::size_t i = 0;
  double worst = 0.0;
  for_each_tensor(g2, [&](const auto&, const auto&, const Mat<double>& m) {
    worst = std::max(worst, (m - 2.0 * *a[i++]).cwiseAbs().maxCoeff());
  });
  CHECK(worst < 1e-12);
}

TEST_CASE("dead loss branches give exactly zero head gradients") {
  const auto cfg = small_config();
  const auto p = init_params<double>(cfg);
  const auto batch = random_inputs(cfg, 4, 12);
  auto g = zeros_like(p);
  batch_loss<double>(p, batch, LossWeights{{1, 0, 0, 0, 0}}, SoftLabelConfig{}, &g, nullptr);
  CHECK(g.start_head.isZero(0.0));
  CHECK(g.start_bias.isZero(0.0));
  CHECK(g.end_head.isZero(0.0));
  CHECK(g.end_bias.isZero(0.0));
  CHECK_FALSE(g.type_head.isZero(0.0));
}

// ---------------------------------------------------------------------------
// Gradients

TEST_CASE("gradient check on the tiny config") {
  const auto cfg = tiny_config({3, 4, 5, 3}, 2, 3);
  const auto p = init_params<double>(cfg);
  const auto batch = random_inputs(cfg, 4, 13);
  GradCheckOptions opt;
  opt.coordinates = 600;
  const auto rep = grad_check(p, batch, LossWeights{}, SoftLabelConfig{}, opt);
  CHECK(rep.coordinates >= 500);
  std::set<std::string> groups;
  for_each_tensor(p, [&](const auto&, const std::string& g, const auto&) { groups.insert(g); });
  CHECK(rep.groups_covered == groups);
  INFO("worst tensor: " << rep.worst_tensor);
  CHECK(rep.max_rel_error < 1e-3);
}

TEST_CASE("gradient check on embedding and head groups") {
  const auto cfg = tiny_config({3, 4, 5, 3}, 2, 4);
  const auto p = init_params<double>(cfg);
  const auto batch = random_inputs(cfg, 3, 14);
  GradCheckOptions opt;
  opt.coordinates = 300;
  opt.groups = {"heads"};
  const auto rep = grad_check(p, batch, LossWeights{}, SoftLabelConfig{}, opt);
  INFO("worst tensor: " << rep.worst_tensor);
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("tiny eps reports cancellation error without failing") {
  const auto cfg = tiny_config({3, 4}, 1, 5);
  const auto p = init_params<double>(cfg);
  const auto batch = random_inputs(cfg, 2, 15);
  GradCheckOptions opt;
  opt.coordinates = 50;
  opt.eps = 1e-12;
  const auto rep = grad_check(p, batch, LossWeights{}, SoftLabelConfig{}, opt);
  opt.eps = 1e-4;
  const auto good = grad_check(p, batch, LossWeights{}, SoftLabelConfig{}, opt);
  CHECK(rep.max_rel_error > good.max_rel_error);
}

TEST_CASE("batch gradients do not depend on the worker count") {
  auto cfg = small_config();
  cfg.dropout = 0.1;
  const auto p = init_params<float>(cfg);
  const auto batch = random_inputs(cfg, 10, 16);
  const std::uint64_t seed = 99;
  auto g1 = zeros_like(p), g2 = zeros_like(p);
  const float l1 = batch_loss<float>(p, batch, LossWeights{}, SoftLabelConfig{}, &g1, &seed, 4, 1);
  const float l2 = batch_loss<float>(p, batch, LossWeights{}, SoftLabelConfig{}, &g2, &seed, 4, 3);
  CHECK(l1 == l2);
  CHECK(g1.input_proj == g2.input_proj);
  CHECK(g1.decoder[0].ff.w1 == g2.decoder[0].ff.w1);
}

TEST_CASE("non-finite gradients name their group") {
  const auto cfg = small_config();
  auto p = init_params<double>(cfg);
  p.decoder[0].ff.w1(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const auto batch = random_inputs(cfg, 1, 17);
  auto g = zeros_like(p);
  try {
    batch_loss<double>(p, batch, LossWeights{}, SoftLabelConfig{}, &g, nullptr);
    FAIL("expected NonFiniteGradient");
  } catch (const NonFiniteGradient& e) {
    CHECK_FALSE(e.group().empty());
  }
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::vector<ModelInput> toy_inputs(const ModelConfig& cfg, std::size_t n, std::uint64_t seed) {
  const auto schema = default_schema();
  const auto samples = synth_population(default_grammar(schema), schema, n, seed);
  std::vector<ModelInput> out;
  for (const auto& s : samples) {
    auto in = make_input(s, cfg);
    if (static_cast<int>(in.chain.size()) > cfg.max_len) in.chain.resize(static_cast<std::size_t>(cfg.max_len));
    out.push_back(std::move(in));
  }
  return out;
}

ModelConfig toy_config() {
  auto c = schema_config(default_schema());
  c.d_model = 16;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.heads = 2;
  c.ff_width = 32;
  c.dropout = 0.0;
  c.max_len = 16;
  c.init_seed = 21;
  return c;
}

}  // namespace

TEST_CASE("training lowers the loss on a toy set") {
  const auto cfg = toy_config();
  const auto tr = toy_inputs(cfg, 200, 1);
  const auto va = toy_inputs(cfg, 40, 2);
  TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 32;
  tc.patience = 30;
  tc.learning_rate = 0.005;
  const auto init = init_params<float>(cfg);
  const double before = evaluate_loss(init, tr, LossWeights{}, SoftLabelConfig{});
  const auto res = train(init, tr, va, tc, LossWeights{}, SoftLabelConfig{});
  const double after = evaluate_loss(res.params, tr, LossWeights{}, SoftLabelConfig{});
  CHECK(after < before);
  CHECK(res.log.back().train_loss < res.log.front().train_loss);
  CHECK(res.log.size() == 30);
}

TEST_CASE("frozen learning rate stops after patience") {
  const auto cfg = toy_config();
  const auto tr = toy_inputs(cfg, 20, 3);
  const auto va = toy_inputs(cfg, 10, 4);
  TrainConfig tc;
  tc.learning_rate = 0.0;
  tc.patience = 3;
  tc.epochs = 50;
  tc.batch_size = 8;
  const auto res = train(init_params<float>(cfg), tr, va, tc, LossWeights{}, SoftLabelConfig{});
  CHECK(res.log.size() == 4);
  CHECK(res.log.back().stopped);
  CHECK(res.best_epoch == 1);
}

TEST_CASE("training is deterministic per seed") {
  auto cfg = toy_config();
  cfg.dropout = 0.1;
  const auto tr = toy_inputs(cfg, 30, 5);
  const auto va = toy_inputs(cfg, 10, 6);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 8;
  tc.seed = 17;
  const auto a = train(init_params<float>(cfg), tr, va, tc, LossWeights{}, SoftLabelConfig{});
  const auto b = train(init_params<float>(cfg), tr, va, tc, LossWeights{}, SoftLabelConfig{});
  const auto pa = scratch("det_a.json"), pb = scratch("det_b.json");
  save_params(a.params, pa);
  save_params(b.params, pb);
  std::ifstream fa(pa), fb(pb);
  std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);
}

TEST_CASE("divergence reports the epoch") {
  const auto cfg = toy_config();
  const auto tr = toy_inputs(cfg, 10, 7);
  const auto va = toy_inputs(cfg, 5, 8);
  auto p = init_params<float>(cfg);
  p.type_head(0, 0) = std::numeric_limits<float>::infinity();
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 5;
  try {
    train(p, tr, va, tc, LossWeights{}, SoftLabelConfig{});
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    CHECK(e.epoch() == 1);
  }
}

// ---------------------------------------------------------------------------
// Fine-tuning

TEST_CASE("fully frozen fine-tune leaves weights bit-identical") {
  const auto cfg = toy_config();
  const auto schema = default_schema();
  const auto samples = synth_population(default_grammar(schema), schema, 30, 9);
  const std::vector<EncodedSample> tr(samples.begin(), samples.begin() + 20), va(samples.begin() + 20, samples.end());
  const auto pre = init_params<double>(cfg);
  FineTunePlan plan;
  plan.frozen_groups = {"*"};
  plan.freeze_epochs = 5;
  TrainConfig tc;
  tc.epochs = 5;
  tc.patience = 10;
  tc.batch_size = 10;
  const auto res = fine_tune(pre, schema, tr, va, plan, tc, LossWeights{}, SoftLabelConfig{});
  CHECK(res.log.size() == 5);
  CHECK(same_params(res.params, pre));
}

TEST_CASE("fine-tune adapters follow the schema") {
  const auto cfg = toy_config();
  const auto pre = init_params<double>(cfg);
  auto regional = default_schema();
  CHECK(schema_compatible(cfg, regional));
  regional.attributes.pop_back();
  regional.attributes[0].cardinality = 9;
  regional.attributes[0].dummy = 8;
  FineTunePlan plan;
  plan.freeze_epochs = 1;
  CHECK_THROWS_AS(prepare_fine_tune(pre, regional, plan, 1), SchemaMismatch);
  plan.add_adapter = true;
  const auto adapted = prepare_fine_tune(pre, regional, plan, 1);
  CHECK(adapted.attribute_tables.size() == 25);
  CHECK(adapted.attribute_tables[0].rows() == 9);
  CHECK(adapted.encoder[0].self.wq == pre.encoder[0].self.wq);

  // Train through the adapter on data from the new schema.
  auto g = default_grammar(default_schema());
  g.attribute_marginals.pop_back();
  g.attribute_marginals[0] = std::vector<double>(9, 1.0 / 9.0);
  const auto samples = synth_population(g, regional, 24, 3);
  const std::vector<EncodedSample> tr(samples.begin(), samples.begin() + 16), va(samples.begin() + 16, samples.end());
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  const auto res = fine_tune(pre, regional, tr, va, plan, tc, LossWeights{}, SoftLabelConfig{});
  CHECK(res.params.config.attribute_count() == 25);
  CHECK(std::isfinite(res.log.back().val_loss));
}

TEST_CASE("unfreeze schedule") {
  FineTunePlan plan;
  plan.frozen_groups = {"encoder", "decoder"};
  plan.freeze_epochs = 4;
  plan.unfreeze_schedule = {{3, "decoder"}};
  CHECK(plan.frozen("encoder.0", 1));
  CHECK(plan.frozen("decoder.norm", 2));
  CHECK_FALSE(plan.frozen("decoder.1", 3));
  CHECK(plan.frozen("encoder.norm", 4));
  CHECK_FALSE(plan.frozen("encoder.0", 5));
  CHECK_FALSE(plan.frozen("heads.type", 1));
}

// ---------------------------------------------------------------------------
// Generation and checkpoints

TEST_CASE("generation contracts") {
  const auto cfg = small_config(16);
  const auto p = init_params<float>(cfg);
  std::mt19937_64 rng(18);
  const auto h = testing::random_household(cfg, 3, rng);
  SamplingConfig greedy{0.0, 1, 0};
  const auto g1 = generate(p, h, 1, true, greedy);
  greedy.seed = 2;
  CHECK(generate(p, h, 1, true, greedy) == g1);

  SamplingConfig one{1.0, 5, 1};
  CHECK(generate(p, h, 0, true, one).size() == 1);

  SamplingConfig warm{1.0, 42, 0};
  CHECK(generate(p, h, 0, false, warm) == generate(p, h, 0, false, warm));

  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto c = generate(p, h, s % 3, s % 2 == 0, SamplingConfig{1.0, s, 0});
    CHECK(c.size() >= 1);
    CHECK(static_cast<int>(c.size()) <= cfg.max_len);
    for (const auto& a : c) {
      CHECK(is_real(a.kind));
      CHECK(a.start >= 1);
      CHECK(a.start <= 96);
      CHECK(a.end >= 1);
      CHECK(a.end <= 96);
    }
  }
}

TEST_CASE("checkpoint round-trip and corruption") {
  auto cfg = small_config();
  const auto p = init_params<float>(cfg);
  const auto path = scratch("ckpt.json");
  save_params(p, path);
  const auto back = load_params_as<float>(path);
  CHECK(same_params(cast_params<double>(back), cast_params<double>(p)));
  CHECK(back.config.attribute_cardinalities == cfg.attribute_cardinalities);

  std::ifstream f(path);
  std::string text((std::istreambuf_iterator<char>(f)), {});
  const auto pos = text.find("\"data\":[") + 8;
  text[pos] = text[pos] == '1' ? '2' : '1';
  const auto bad = scratch("ckpt_bad.json");
  std::ofstream(bad) << text;
  CHECK_THROWS_AS(load_params(bad), ChecksumError);
  std::ofstream(scratch("ckpt_trunc.json")) << text.substr(0, text.size() / 2);
  CHECK_THROWS_AS(load_params(scratch("ckpt_trunc.json")), ChecksumError);
}
