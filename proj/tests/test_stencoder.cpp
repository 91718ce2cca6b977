#include <doctest.h>

#include <cmath>
#include <numeric>

#include "cdstraj/errors.hpp"
#include "cdstraj/gradcheck.hpp"
#include "cdstraj/rng.hpp"
#include "cdstraj/stencoder.hpp"

using namespace cdstraj;

namespace {

ModelConfig small_config() {
  ModelConfig c = ModelConfig::tiny();
  c.d = 8;
  c.n_heads = 2;
  c.d_c = 4;
  c.n_max = 3;
  c.gamma = 4;
  return c;
}

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = scale * rng.normal();
  return t;
}

ParamStore zeroed(ParamStore p) {
  for (const auto& name : p.names()) p.value(name).fill(0.0);
  return p;
}

// Swaps neighbor slots a and b (histories, futures, mask).
Scene swap_slots(Scene s, std::size_t a, std::size_t b) {
  for (Tensor* t : {&s.neighbor_histories, &s.neighbor_futures}) {
    const std::size_t steps = t->dim(1);
    for (std::size_t k = 0; k < steps; ++k)
      for (std::size_t c = 0; c < 2; ++c) std::swap(t->at(a, k, c), t->at(b, k, c));
  }
  const bool m = s.neighbor_mask[a];
  s.neighbor_mask[a] = s.neighbor_mask[b];
  s.neighbor_mask[b] = m;
  return s;
}

Tensor swap_rows(Tensor t, std::size_t a, std::size_t b) {
  for (std::size_t c = 0; c < t.cols(); ++c) std::swap(t.at(a, c), t.at(b, c));
  return t;
}

}  // namespace

TEST_CASE("zero history with zero weights encodes to zero") {
  const ModelConfig cfg = small_config();
  const ParamStore zero = zeroed(init_params(cfg, 0));
  Tape tape(false);
  const Tensor h = temporal_encode(tape, zero, cfg, Tensor({kHistorySteps, 2})).value();
  CHECK(h.shape() == Shape{1, cfg.d});
  for (double v : h.storage()) CHECK(v == 0.0);
}

TEST_CASE("temporal encoder is sensitive to the first step and checks length") {
  const ModelConfig cfg = small_config();
  const ParamStore params = init_params(cfg, 1);
  Rng rng(2);
  Tensor a = random_tensor({kHistorySteps, 2}, rng, 5.0);
  Tensor b = a;
  b.at(0, 0) += 1.0;
  Tape tape(false);
  CHECK(temporal_encode(tape, params, cfg, a).value() != temporal_encode(tape, params, cfg, b).value());
  CHECK_THROWS_AS(temporal_encode(tape, params, cfg, Tensor({15, 2})), ContractError);
}

TEST_CASE("batched temporal encoding matches one-at-a-time") {
  const ModelConfig cfg = small_config();
  const ParamStore params = init_params(cfg, 3);
  Rng rng(4);
  const Tensor batch = random_tensor({3, kHistorySteps, 2}, rng, 10.0);
  Tape tape(false);
  const Tensor all = temporal_encode_batch(tape, params, cfg, batch).value();
  for (std::size_t r = 0; r < 3; ++r) {
    Tensor one({kHistorySteps, 2});
    for (std::size_t k = 0; k < kHistorySteps; ++k)
      for (std::size_t c = 0; c < 2; ++c) one.at(k, c) = batch.at(r, k, c);
    const Tensor h = temporal_encode(tape, params, cfg, one).value();
    for (std::size_t j = 0; j < cfg.d; ++j) CHECK(h[j] == doctest::Approx(all.at(r, j)).epsilon(1e-14));
  }
}

TEST_CASE("neighbor encodings are zero for empty slots and permute with the slots") {
  const ModelConfig cfg = small_config();
  const ParamStore params = init_params(cfg, 5);
  Rng rng(6);
  Tape tape(false);
  const Var temporal = tape.constant(random_tensor({3, cfg.d}, rng));
  const Var latent = tape.constant(random_tensor({3, cfg.d_c}, rng));
  const Tensor none = encode_neighbors(tape, params, cfg, temporal, latent, {false, false, false}).value();
  for (double v : none.storage()) CHECK(v == 0.0);

  const Tensor h = encode_neighbors(tape, params, cfg, temporal, latent, {true, false, true}).value();
  const Tensor hp = encode_neighbors(tape, params, cfg, tape.constant(swap_rows(temporal.value(), 0, 2)),
                                     tape.constant(swap_rows(latent.value(), 0, 2)), {true, false, true})
                        .value();
  CHECK(swap_rows(h, 0, 2) == hp);
  CHECK_THROWS_AS(encode_neighbors(tape, params, cfg, temporal, tape.constant(Tensor({2, cfg.d_c})), {true, true, true}),
                  DimensionError);
}

TEST_CASE("attention over a single neighbor puts all weight on it") {
  const ModelConfig cfg = small_config();
  const ParamStore params = init_params(cfg, 7);
  Rng rng(8);
  Tape tape(false);
  const auto r = spatial_attention(tape, params, cfg, tape.constant(random_tensor({1, cfg.d}, rng)),
                                   tape.constant(random_tensor({3, cfg.d}, rng)), {false, true, false});
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    CHECK(r.attention.at(h, 0, 1) == 1.0);
    CHECK(r.attention.at(h, 0, 0) == 0.0);
    CHECK(r.attention.at(h, 0, 2) == 0.0);
  }
}

TEST_CASE("identical neighbor rows share attention equally") {
  const ModelConfig cfg = small_config();
  const ParamStore params = init_params(cfg, 9);
  Rng rng(10);
  Tensor nb = random_tensor({3, cfg.d}, rng);
  for (std::size_t j = 0; j < cfg.d; ++j) nb.at(2, j) = nb.at(0, j);
  Tape tape(false);
  const auto r = spatial_attention(tape, params, cfg, tape.constant(random_tensor({1, cfg.d}, rng)), tape.constant(nb),
                                   {true, false, true});
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    CHECK(std::abs(r.attention.at(h, 0, 0) - 0.5) < 1e-12);
    CHECK(std::abs(r.attention.at(h, 0, 2) - 0.5) < 1e-12);
  }
}

TEST_CASE("no neighbors gives a zero spatial summary") {
  const ModelConfig cfg = small_config();
  const ParamStore params = init_params(cfg, 11);
  Tape tape(false);
  const auto r = spatial_attention(tape, params, cfg, tape.constant(Tensor({1, cfg.d}, 1.0)),
                                   tape.constant(Tensor({3, cfg.d})), {false, false, false});
  for (double v : r.spatial.value().storage()) CHECK(v == 0.0);
  for (double v : r.attention.storage()) CHECK(v == 0.0);
}

TEST_CASE("attention rows sum to one and are permutation invariant on random scenes") {
  const ModelConfig cfg = small_config();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const ParamStore params = init_params(cfg, seed);
    std::vector<bool> mask(cfg.n_max);
    for (std::size_t i = 0; i < cfg.n_max; ++i) mask[i] = rng.uniform() < 0.6;
    Tensor nb = random_tensor({cfg.n_max, cfg.d}, rng);
    Tape tape(false);
    const Var target = tape.constant(random_tensor({1, cfg.d}, rng));
    const auto r = spatial_attention(tape, params, cfg, target, tape.constant(nb), mask);
    const bool any = std::find(mask.begin(), mask.end(), true) != mask.end();
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      double s = 0.0;
      for (std::size_t j = 0; j < cfg.n_max; ++j) {
        s += r.attention.at(h, 0, j);
        if (!mask[j]) CHECK(r.attention.at(h, 0, j) == 0.0);
      }
      if (any) CHECK(std::abs(s - 1.0) < 1e-9);
    }
    std::vector<bool> pmask = mask;
    std::swap(pmask[0], pmask[2]);
    const auto rp = spatial_attention(tape, params, cfg, target, tape.constant(swap_rows(nb, 0, 2)), pmask);
    for (std::size_t j = 0; j < cfg.d; ++j) CHECK(std::abs(rp.spatial.value()[j] - r.spatial.value()[j]) < 1e-12);
  }
}

TEST_CASE("gated fusion stays inside the unit interval") {
  const ModelConfig cfg = small_config();
  const ParamStore params = init_params(cfg, 12);
  const ParamStore zero = zeroed(params);
  Rng rng(13);
  for (int i = 0; i < 20; ++i) {
    Tape tape(false);
    const Tensor s = gated_fusion(tape, params, tape.constant(random_tensor({1, cfg.d}, rng, 10.0))).value();
    for (double v : s.storage()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
  Tape tape(false);
  for (double v : gated_fusion(tape, zero, tape.constant(Tensor({1, cfg.d}, 3.0))).value().storage()) CHECK(v == 0.25);
}

TEST_CASE("encode_scene is pure and handles scenes without neighbors") {
  const ModelConfig cfg = small_config();
  const ParamStore params = init_params(cfg, 14);
  SyntheticOptions opts{cfg.n_max, 0.05};
  Scene scene = gen_synthetic(SyntheticKind::BrakingInteraction, 1, 3, opts)[0];
  Rng rng(15);
  const Tensor latent = random_tensor({cfg.n_max, cfg.d_c}, rng);
  Tape tape(false);
  const EncodedScene a = encode_scene(tape, params, cfg, scene, tape.constant(latent));
  const EncodedScene b = encode_scene(tape, params, cfg, scene, tape.constant(latent));
  CHECK(a.context.value() == b.context.value());
  CHECK(a.attention == b.attention);

  Scene alone = scene;
  alone.neighbor_mask.assign(cfg.n_max, false);
  alone.neighbor_histories.fill(0.0);
  alone.neighbor_futures.fill(0.0);
  const EncodedScene e = encode_scene(tape, params, cfg, alone, tape.constant(Tensor({cfg.n_max, cfg.d_c})));
  CHECK(e.context.value().all_finite());
  for (double v : e.spatial.value().storage()) CHECK(v == 0.0);
}

TEST_CASE("scene encoding is invariant to neighbor slot order") {
  const ModelConfig cfg = small_config();
  const ParamStore params = init_params(cfg, 16);
  const Scene scene = gen_synthetic(SyntheticKind::LaneChange, 1, 4, {cfg.n_max, 0.05})[0];
  Rng rng(17);
  const Tensor latent = random_tensor({cfg.n_max, cfg.d_c}, rng);
  Tape tape(false);
  const Tensor ctx = encode_scene(tape, params, cfg, scene, tape.constant(latent)).context.value();
  const Tensor ctx_p =
      encode_scene(tape, params, cfg, swap_slots(scene, 0, 1), tape.constant(swap_rows(latent, 0, 1))).context.value();
  for (std::size_t j = 0; j < cfg.d; ++j) CHECK(std::abs(ctx[j] - ctx_p[j]) < 1e-12);
}

TEST_CASE("encoder gradients match finite differences") {
  const ModelConfig cfg = small_config();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    ParamStore params = init_params(cfg, seed);
    const Scene scene = gen_synthetic(SyntheticKind::BrakingInteraction, 1, seed, {cfg.n_max, 0.05})[0];
    Rng rng(seed);
    const Tensor latent = random_tensor({cfg.n_max, cfg.d_c}, rng);
    const Tensor probe = random_tensor({1, cfg.d}, rng);
    const auto r = finite_diff_gradcheck(
        [&](Tape& t, const ParamStore& p) {
          const EncodedScene e = encode_scene(t, p, cfg, scene, t.constant(latent));
          return sum(mul(e.context, t.constant(probe)));
        },
        params);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("encoder ablation stubs") {
  ModelConfig cfg = small_config();
  const Scene scene = gen_synthetic(SyntheticKind::BrakingInteraction, 1, 2, {cfg.n_max, 0.05})[0];
  Rng rng(3);
  const Tensor latent = random_tensor({cfg.n_max, cfg.d_c}, rng);
  const ParamStore params = init_params(cfg, 0);

  cfg.ablation = Ablation::Spatial;
  {
    Tape tape(false);
    for (double v : encode_scene(tape, params, cfg, scene, tape.constant(latent)).spatial.value().storage()) CHECK(v == 0.0);
  }
  cfg.ablation = Ablation::Fusion;
  {
    Tape tape(false);
    const EncodedScene e = encode_scene(tape, params, cfg, scene, tape.constant(latent));
    CHECK(e.fused.value() == e.spatial.value());
  }
  cfg.ablation = Ablation::Temporal;
  {
    Tape tape(false);
    const Tensor h = temporal_encode(tape, params, cfg, scene.target_history).value();
    // Mean of the per-step embeddings.
    Tensor want({1, cfg.d});
    for (std::size_t t = 0; t < kHistorySteps; ++t)
      for (std::size_t j = 0; j < cfg.d; ++j) {
        double pre = 0.0;
        for (std::size_t c = 0; c < 2; ++c)
          pre += scene.target_history.at(t, c) / cfg.position_scale * params.value("temporal.W_emb").at(c, j);
        want[j] += (pre > 0 ? pre : cfg.leaky_slope * pre) / static_cast<double>(kHistorySteps);
      }
    for (std::size_t j = 0; j < cfg.d; ++j) CHECK(h[j] == doctest::Approx(want[j]).epsilon(1e-12));
  }
}
