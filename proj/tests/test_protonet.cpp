#include <doctest.h>

#include <filesystem>
#include <cstring>
#include <numeric>
#include <set>

#include "support.hpp"
#include "tinytrain/adapt.hpp"
#include "tinytrain/dataset.hpp"
#include "tinytrain/errors.hpp"
#include "tinytrain/protonet.hpp"
#include "tinytrain/rng.hpp"
#include "tinytrain/sweep.hpp"

using namespace tinytrain;

namespace {

Dataset tiny_dataset(std::size_t classes, std::vector<std::size_t> per_class, std::size_t size = 8) {
  std::vector<std::uint32_t> labels;
  std::vector<float> samples;
  std::mt19937_64 rng(classes);
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class[c]; ++i) {
      labels.push_back(static_cast<std::uint32_t>(c));
      for (std::size_t j = 0; j < 3 * size * size; ++j) samples.push_back(g(rng) + static_cast<float>(c % 3));
    }
  return Dataset({3, size, size}, classes, std::move(labels), std::move(samples));
}

struct Fixture {
  ToyDomains domains;
  Model model;
  EpisodeData episode;
};

Fixture small_setup(std::uint64_t seed = 1) {
  ToyDataOptions t;
  t.source_classes = 10;
  t.target_classes = 8;
  t.per_class = 12;
  Fixture f{generate_toy_domains(t, seed), {}, {}};
  MicroCnnOptions micro;
  micro.blocks = 1;
  const auto spec = build_backbone(BackboneFamily::micro_cnn, WidthMultiplier(0.5), t.dims, micro);
  auto rng = make_stream(seed, "init");
  f.model = Model{spec, ParamStore::initialize(spec, DType::f32, rng)};
  SamplerOptions s;
  s.max_way = 5;
  s.max_support = 15;
  auto srng = make_stream(seed, "sampler");
  f.episode = materialize(f.domains.target, sample_episode(f.domains.target, s, srng));
  return f;
}

}  // namespace

TEST_SUITE("fsl-protonet") {

TEST_CASE("prototype is the class mean") {
  const Tensor feats({3, 2}, {1, 0, 3, 4, 5, 5});
  const std::size_t labels[] = {0, 0, 1};
  const auto p = compute_prototypes(feats, labels, 2);
  CHECK(p.centroids[0] == 2.0);
  CHECK(p.centroids[1] == 2.0);
  CHECK(p.centroids[2] == 5.0);  // single example: prototype is the example
  CHECK(p.centroids[3] == 5.0);
  CHECK(p.counts == std::vector<std::size_t>{2, 1});
}

TEST_CASE("prototypes match an independent mean to 1e-12") {
  std::mt19937_64 rng(1);
  const Tensor feats = tt_test::random_tensor({15, 6}, rng);
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 15; ++i) labels.push_back(i % 3);
  const auto p = compute_prototypes(feats, labels, 3);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 6; ++j) {
      double s = 0.0;
      for (std::size_t i = k; i < 15; i += 3) s += feats[i * 6 + j];
      CHECK(std::abs(p.centroids[k * 6 + j] - s / 5.0) <= 1e-12);
    }
}

TEST_CASE("empty class is a precondition error") {
  const Tensor feats({2, 2}, {1, 0, 0, 1});
  const std::size_t labels[] = {0, 0};
  CHECK_THROWS_AS(compute_prototypes(feats, labels, 2), ContractError);
}

TEST_CASE("classify: one class gives probability one") {
  const Tensor feats({2, 2}, {1, 2, -3, 1});
  const std::size_t labels[] = {0};
  const auto p = compute_prototypes(Tensor({1, 2}, {0.5, 0.5}), labels, 1);
  const auto probs = classify(feats, p, 0.1);
  CHECK(probs[0] == 1.0);
  CHECK(probs[1] == 1.0);
}

TEST_CASE("classify: hand-evaluated two-class case") {
  const std::size_t labels[] = {0, 1};
  const auto p = compute_prototypes(Tensor({2, 2}, {1, 0, 0, 1}), labels, 2);
  const auto probs = classify(Tensor({1, 2}, {1, 0}), p, 1.0);
  CHECK(probs[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(probs[0] == doctest::Approx(0.7311).epsilon(1e-4));
}

TEST_CASE("classify: rows sum to one and scaling changes nothing") {
  std::mt19937_64 rng(2);
  const Tensor feats = tt_test::random_tensor({7, 5}, rng);
  const Tensor sup = tt_test::random_tensor({4, 5}, rng);
  const std::size_t labels[] = {0, 1, 2, 3};
  const auto p = compute_prototypes(sup, labels, 4);
  const auto probs = classify(feats, p, 0.1);
  Tensor feats2 = feats, sup2 = sup;
  for (auto& v : feats2.data()) v *= 3.5;
  for (auto& v : sup2.data()) v *= 0.25;
  const auto probs2 = classify(feats2, compute_prototypes(sup2, labels, 4), 0.1);
  for (std::size_t i = 0; i < 7; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      s += probs[i * 4 + k];
      CHECK(probs2[i * 4 + k] == doctest::Approx(probs[i * 4 + k]).epsilon(1e-12));
    }
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
  CHECK(argmax_rows(probs) == argmax_rows(probs2));
}

TEST_CASE("zero-norm vectors are rejected") {
  const std::size_t labels[] = {0};
  const auto p = compute_prototypes(Tensor({1, 2}, {1, 0}), labels, 1);
  CHECK_THROWS_AS(classify(Tensor({1, 2}, {0, 0}), p, 0.1), NumericError);
}

TEST_CASE("protonet loss gradient agrees with finite differences") {
  std::mt19937_64 rng(3);
  Tensor feats = tt_test::random_tensor({9, 4}, rng);
  const std::vector<std::size_t> labels = {0, 1, 2, 0, 1, 2, 0, 1, 2};
  const auto base = protonet_loss(feats, labels, 4, 3, 0.5);
  for (std::size_t i = 0; i < feats.numel(); ++i) {
    const double s = feats[i];
    feats[i] = s + 1e-6;
    const double lp = protonet_loss(feats, labels, 4, 3, 0.5).loss;
    feats[i] = s - 1e-6;
    const double lm = protonet_loss(feats, labels, 4, 3, 0.5).loss;
    feats[i] = s;
    CHECK(base.grad[i] == doctest::Approx((lp - lm) / 2e-6).epsilon(1e-6));
  }
}

TEST_CASE("sampler: exactly five classes gives five-way episodes") {
  const auto ds = tiny_dataset(5, std::vector<std::size_t>(5, 6));
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) CHECK(sample_episode(ds, {}, rng).way == 5);
}

TEST_CASE("sampler: caps hold on many episodes") {
  std::vector<std::size_t> sizes;
  for (std::size_t c = 0; c < 30; ++c) sizes.push_back(2 + (c * 7) % 40);
  const auto ds = tiny_dataset(30, sizes, 4);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    const auto ep = sample_episode(ds, {}, rng);
    REQUIRE(ep.way >= 5);
    REQUIRE(ep.way <= 30);
    CHECK(ep.support_indices.size() <= 500);
    std::vector<std::size_t> q(ep.way, 0), s(ep.way, 0);
    for (auto l : ep.query_labels) ++q[l];
    for (auto l : ep.support_labels) ++s[l];
    std::set<std::size_t> used(ep.support_indices.begin(), ep.support_indices.end());
    used.insert(ep.query_indices.begin(), ep.query_indices.end());
    CHECK(used.size() == ep.support_indices.size() + ep.query_indices.size());
    for (std::size_t k = 0; k < ep.way; ++k) {
      CHECK(s[k] >= 1);
      CHECK(q[k] == ep.query_per_class);
      CHECK(q[k] <= 10);
    }
  }
}

TEST_CASE("sampler: a one-example class contributes exactly one support example") {
  const auto ds = tiny_dataset(5, {1, 10, 10, 10, 10});
  std::mt19937_64 rng(6);
  const auto ep = sample_episode(ds, {}, rng);
  std::size_t k0 = SIZE_MAX;
  for (std::size_t k = 0; k < ep.way; ++k)
    if (ep.classes[k] == 0) k0 = k;
  REQUIRE(k0 != SIZE_MAX);
  CHECK(ep.shots[k0] == 1);
  CHECK(ep.query_per_class == 0);
}

TEST_CASE("sampler: too few classes is a sampling error") {
  const auto ds = tiny_dataset(4, std::vector<std::size_t>(4, 5));
  std::mt19937_64 rng(7);
  CHECK_THROWS_AS(sample_episode(ds, {}, rng), SamplingError);
}

TEST_CASE("pseudo-query: identity augmentation returns the support") {
  std::mt19937_64 rng(8);
  const Tensor s = tt_test::random_tensor({3, 3, 8, 8}, rng);
  const Tensor q = make_pseudo_query(s, {0.0, 0}, rng);
  CHECK(q.bit_equal(s));
}

TEST_CASE("pseudo-query: flip-only mirrors along the width") {
  std::mt19937_64 rng(9);
  const Tensor s = tt_test::random_tensor({2, 3, 4, 5}, rng);
  const Tensor before = s;
  const Tensor q = make_pseudo_query(s, {1.0, 0}, rng);
  CHECK(s.bit_equal(before));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 5; ++x)
          CHECK(q[((n * 3 + c) * 4 + y) * 5 + x] == s[((n * 3 + c) * 4 + y) * 5 + (4 - x)]);
}

TEST_CASE("pseudo-query: fixed seed is reproducible") {
  std::mt19937_64 rng(10);
  const Tensor s = tt_test::random_tensor({4, 3, 8, 8}, rng);
  auto a = make_stream(3, "augment"), b = make_stream(3, "augment");
  CHECK(make_pseudo_query(s, {}, a).bit_equal(make_pseudo_query(s, {}, b)));
}

TEST_CASE("named streams are independent and reproducible") {
  CHECK(derive_seed(1, "sampler") == derive_seed(1, "sampler"));
  CHECK(derive_seed(1, "sampler") != derive_seed(1, "augment"));
  CHECK(derive_seed(1, "sampler", 0) != derive_seed(1, "sampler", 1));
  CHECK(derive_seed(1, "sampler") != derive_seed(2, "sampler"));
}

TEST_CASE("dataset file round-trip and header checks") {
  const auto ds = tiny_dataset(5, {3, 4, 5, 6, 7});
  const auto bytes = encode_dataset(ds);
  const auto back = decode_dataset(bytes);
  CHECK(back.labels() == ds.labels());
  CHECK(back.samples() == ds.samples());
  CHECK(back.dims() == ds.dims());
  std::uint32_t count;
  std::memcpy(&count, bytes.data() + 8, 4);
  CHECK(count == ds.size());
  CHECK(bytes.size() == 4 + 4 * 4 + 3 * 4 + count * 4 + count * ds.sample_numel() * 4);
  auto cut = bytes;
  cut.pop_back();
  CHECK_THROWS_AS(decode_dataset(cut), DatasetError);
  CHECK_THROWS_AS(Dataset({1, 1, 1}, 2, {0, 2}, {0.f, 0.f}), DatasetError);
}

TEST_CASE("toy domains: same seed gives identical bytes, shift moves the mean") {
  ToyDataOptions o;
  o.source_classes = 6;
  o.target_classes = 6;
  o.per_class = 10;
  const auto a = generate_toy_domains(o, 11), b = generate_toy_domains(o, 11);
  CHECK(encode_dataset(a.source) == encode_dataset(b.source));
  CHECK(encode_dataset(a.target) == encode_dataset(b.target));
  const auto ss = pixel_stats(a.source), ts = pixel_stats(a.target);
  CHECK(std::abs((ts.mean - ss.mean) - o.shift) < 0.05);
  CHECK(ts.variance < ss.variance);
}

TEST_CASE("learning-rate schedule: warm-up then cosine") {
  LrSchedule s;
  CHECK(s.lr_at(0) == 1e-6);
  CHECK(s.lr_at(5 * 2000) == doctest::Approx(5e-5).epsilon(1e-12));
  CHECK(s.lr_at(s.total_steps()) == doctest::Approx(1e-6).epsilon(1e-12));
  double prev = 1.0;
  for (std::size_t step = 5 * 2000; step <= s.total_steps(); step += 997) {
    CHECK(s.lr_at(step) <= prev);
    prev = s.lr_at(step);
  }
}

TEST_CASE("meta-training with zero epochs leaves weights unchanged") {
  auto f = small_setup();
  MetaTrainOptions o;
  o.schedule.epochs = 0;
  const auto r = meta_train(f.model, f.domains.source, o, 1);
  CHECK(r.params.bit_equal(f.model.params));
  CHECK(r.steps == 0);
}

TEST_CASE("meta-training reduces the episodic loss") {
  auto f = small_setup();
  MetaTrainOptions o;
  o.schedule = {4, 20, 1, 1e-3, 0.05, 1e-3};
  o.sampler.max_way = 5;
  o.sampler.max_support = 20;
  const auto r = meta_train(f.model, f.domains.source, o, 2);
  REQUIRE(r.loss_curve.size() == 80);
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < 20; ++i) first += r.loss_curve[i], last += r.loss_curve[60 + i];
  CHECK(last < first);
  CHECK_FALSE(r.diverged);
}

TEST_CASE("meta-training divergence keeps the last finite weights") {
  auto f = small_setup();
  MetaTrainOptions o;
  o.schedule = {2, 10, 0, 1e300, 1e300, 1e300};
  o.sampler.max_way = 5;
  o.sampler.max_support = 20;
  const auto r = meta_train(f.model, f.domains.source, o, 3);
  CHECK(r.diverged);
  for (const auto& [i, lp] : r.params.entries())
    for (double v : lp.weight.data()) REQUIRE(std::isfinite(v));
}

TEST_CASE("adapt: plan source none equals the frozen backbone") {
  auto f = small_setup();
  AdaptOptions o;
  o.source = PlanSource::none;
  const auto r = adapt_episode(f.model, f.episode, o, 5);
  CHECK(r.accuracy == evaluate_episode(f.model, f.episode, o.temperature));
  CHECK(r.params.bit_equal(f.model.params));
  CHECK(r.plan.empty());
}

TEST_CASE("adapt: k = 0 equals plan source none") {
  auto f = small_setup();
  AdaptOptions o;
  o.iterations = 0;
  const auto r = adapt_episode(f.model, f.episode, o, 5);
  o.source = PlanSource::none;
  const auto none = adapt_episode(f.model, f.episode, o, 5);
  CHECK(r.accuracy == none.accuracy);
  CHECK(r.params.bit_equal(none.params));
}

TEST_CASE("adapt: parameters outside the plan stay bit-identical") {
  auto f = small_setup();
  AdaptOptions o;
  o.iterations = 5;
  o.channel_ratio = 0.25;
  o.optimizer.lr = 0.05;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    o.source = PlanSource::imported;
    o.imported = tt_test::random_plan(f.model.spec, rng);
    const auto r = adapt_episode(f.model, f.episode, o, seed);
    for (auto i : f.model.spec.parametric_layers()) {
      const auto& before = f.model.params.at(i);
      const auto& after = r.params.at(i);
      const PlanEntry* e = r.plan.find(i);
      const std::size_t C = f.model.spec.layer(i).kind.out_channels;
      const std::size_t row = before.weight.numel() / C;
      for (std::size_t c = 0; c < C; ++c) {
        const bool chosen = e && std::binary_search(e->channels.begin(), e->channels.end(), c);
        if (chosen) continue;
        CHECK(std::memcmp(before.weight.ptr() + c * row, after.weight.ptr() + c * row, row * sizeof(double)) == 0);
        CHECK(std::memcmp(before.bias.ptr() + c, after.bias.ptr() + c, sizeof(double)) == 0);
      }
      if (e && !e->bias) CHECK(before.bias.bit_equal(after.bias));
    }
  }
}

TEST_CASE("adapt: full and unbounded ratio-1 tinytrain follow the same trajectory") {
  auto f = small_setup();
  AdaptOptions o;
  o.iterations = 4;
  o.channel_ratio = 1.0;
  std::vector<std::uint64_t> a, b;
  o.source = PlanSource::full;
  adapt_episode(f.model, f.episode, o, 9, [&](std::size_t, const ParamStore& p) { a.push_back(p.digest()); });
  o.source = PlanSource::tinytrain;
  adapt_episode(f.model, f.episode, o, 9, [&](std::size_t, const ParamStore& p) { b.push_back(p.digest()); });
  CHECK(a.size() == 4);
  CHECK(a == b);
}

TEST_CASE("adapt: infeasible fixed plan runs as none and is flagged") {
  auto f = small_setup();
  AdaptOptions o;
  o.source = PlanSource::full;
  o.budget = Budget{std::uint64_t{16}, {}};
  const auto r = adapt_episode(f.model, f.episode, o, 1);
  CHECK(r.plan_flagged);
  CHECK(r.plan.empty());
  CHECK(r.accuracy == evaluate_episode(f.model, f.episode, o.temperature));
}

TEST_CASE("adapt: tinytrain plan respects the budget") {
  auto f = small_setup();
  AdaptOptions o;
  o.iterations = 2;
  o.budget = Budget{std::uint64_t{6000}, MacLimit::fraction(0.2)};
  const auto r = adapt_episode(f.model, f.episode, o, 2);
  CHECK(fits(r.cost, o.budget));
  CHECK(fits(plan_cost(f.model.spec, r.plan), o.budget));
}

TEST_CASE("sweep: zero learning rate gives zero gain everywhere") {
  auto f = small_setup();
  AdaptOptions o;
  o.iterations = 2;
  o.optimizer.lr = 0.0;
  const auto t = single_layer_sweep(f.model, {{f.episode, 1}}, {1.0, 0.5}, o);
  CHECK(t.rows.size() == f.model.spec.parametric_layers().size() * 2);
  for (const auto& r : t.rows) CHECK(r.gain == 0.0);
  const auto csv = sweep_csv(t);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(t.rows.size() + 1));
}

TEST_CASE("sweep: last layer at ratio 1 is the last-layer plan") {
  auto f = small_setup();
  const auto last = f.model.spec.parametric_layers().back();
  AdaptOptions o;
  const auto fisher = episode_fisher(f.model, f.episode, o, 3);
  const auto one = single_layer_plan(f.model.spec, fisher, last, 1.0, true);
  const auto ll = last_layer_plan(f.model.spec);
  REQUIRE(one.entries.size() == 1);
  CHECK(one.entries[0].layer == ll.entries[0].layer);
  CHECK(one.entries[0].channels == ll.entries[0].channels);
  CHECK(one.entries[0].bias == ll.entries[0].bias);
}

TEST_CASE("sweep: table equals brute-force single-layer runs") {
  auto f = small_setup();
  AdaptOptions o;
  o.iterations = 3;
  o.optimizer.lr = 0.02;
  const std::vector<double> ratios = {1.0, 0.25};
  const auto t = single_layer_sweep(f.model, {{f.episode, 4}}, ratios, o);
  const double base = evaluate_episode(f.model, f.episode, o.temperature);
  const auto fisher = episode_fisher(f.model, f.episode, o, 4);
  std::size_t row = 0;
  for (auto layer : f.model.spec.parametric_layers())
    for (double ratio : ratios) {
      UpdatePlan plan;
      const auto& d = fisher.find(layer)->deltas;
      const std::size_t k = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(d.size()) - 1e-9));
      std::vector<std::size_t> idx(d.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return d[a] > d[b]; });
      idx.resize(std::max<std::size_t>(k, 1));
      std::sort(idx.begin(), idx.end());
      plan.entries.push_back({layer, idx, true});
      AdaptOptions one = o;
      one.source = PlanSource::imported;
      one.imported = plan;
      const double acc = adapt_episode(f.model, f.episode, one, 4).accuracy;
      CHECK(t.rows[row].layer == layer);
      CHECK(t.rows[row].gain == acc - base);
      ++row;
    }
}

}  // TEST_SUITE
