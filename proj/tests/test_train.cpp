#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "lupi/train.hpp"

using namespace lupi;

namespace {

ModelArch tiny_arch() {
  ModelArch a;
  a.input_dim = 16;
  a.num_classes = 3;
  a.trunk_widths = {8, 6};
  a.site_widths = {5, 5};
  a.var_hidden = 4;
  return a;
}

GenConfig tiny_gen() {
  GenConfig cfg;
  cfg.num_classes = 3;
  cfg.grid_side = 4;
  cfg.proto_support = 3;
  cfg.distractors = 1;
  cfg.fragment_cells = 2;
  cfg.jitter = 0;
  cfg.noise_std = 0.05;
  return cfg;
}

}  // namespace

TEST_CASE("LrPolicy: scripted validation sequence drives decay and stop") {
  LrPolicy p(1.0, 2, 10.0);
  CHECK(p.observe(0.3).improved);
  CHECK(p.lr() == 1.0);
  CHECK_FALSE(p.observe(0.3).improved);  // plateau epoch 1
  CHECK(p.lr() == 1.0);
  CHECK_FALSE(p.observe(0.2).improved);  // plateau epoch 2 -> first decay
  CHECK(p.lr() == doctest::Approx(0.1));
  CHECK(p.observe(0.5).improved);  // recovery resets the fruitless counter
  CHECK_FALSE(p.observe(0.4).stop);
  CHECK_FALSE(p.observe(0.4).stop);  // second decay
  CHECK(p.lr() == doctest::Approx(0.01));
  CHECK_FALSE(p.observe(0.4).stop);
  auto d = p.observe(0.4);  // third decay
  CHECK(p.lr() == doctest::Approx(0.001));
  CHECK_FALSE(d.stop);
  p.observe(0.4);
  CHECK(p.observe(0.4).stop);  // two fruitless decays exhausted
}

TEST_CASE("Optimizer: weight decay touches flagged weights, never biases") {
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::kSgdMomentum;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.5;
  Var w = param(Tensor({2}, {1.0, -2.0}), "W");
  Var b = param(Tensor({2}, {1.0, -2.0}), "b");
  Optimizer opt(cfg, {{"l.W", w, true}, {"l.b", b, false}});
  // grads are zero: the only update source is decay
  opt.step(0.1);
  CHECK(w->value[0] == doctest::Approx(1.0 - 0.1 * 0.5 * 1.0).epsilon(1e-12));
  CHECK(w->value[1] == doctest::Approx(-2.0 - 0.1 * 0.5 * -2.0).epsilon(1e-12));
  CHECK(b->value[0] == 1.0);
  CHECK(b->value[1] == -2.0);
}

TEST_CASE("Optimizer: first Adam step moves by ~lr in the gradient sign") {
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::kAdam;
  cfg.weight_decay = 0.0;
  Var w = param(Tensor({2}, {0.0, 0.0}), "W");
  w->grad = Tensor({2}, {3.0, -0.2});
  Optimizer opt(cfg, {{"l.W", w, false}});
  opt.step(0.01);
  CHECK(w->value[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(w->value[1] == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("Optimizer: SGD momentum accumulates velocity") {
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::kSgdMomentum;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  Var w = param(Tensor({1}, {0.0}), "W");
  w->grad = Tensor({1}, {1.0});
  Optimizer opt(cfg, {{"l.W", w, false}});
  opt.step(0.1);  // v=1, w=-0.1
  opt.step(0.1);  // v=1.9, w=-0.29
  CHECK(w->value[0] == doctest::Approx(-0.29).epsilon(1e-12));
}

TEST_CASE("nested_prefix: smaller draws are prefixes of larger ones") {
  auto big = nested_prefix(100, 60, 5);
  auto small = nested_prefix(100, 25, 5);
  REQUIRE(big.size() == 60);
  REQUIRE(small.size() == 25);
  for (std::size_t i = 0; i < small.size(); ++i) CHECK(small[i] == big[i]);

  std::set<std::size_t> uniq(big.begin(), big.end());
  CHECK(uniq.size() == big.size());
  for (std::size_t v : big) CHECK(v < 100);

  auto other = nested_prefix(100, 60, 6);
  CHECK(other != big);
  CHECK_THROWS_AS(nested_prefix(10, 11, 5), std::invalid_argument);
}

TEST_CASE("with_xstar_fraction: boundaries, counts and the masked view") {
  TripletDataset ds = generate(tiny_gen(), 40, 1.0, 3);

  TripletDataset none = with_xstar_fraction(ds, 0.0, 1);
  for (std::size_t i = 0; i < none.size(); ++i) {
    CHECK(none.has_star[i] == 0);
    for (std::size_t j = 0; j < none.dim(); ++j) CHECK(none.xstar.at(i, j) == 0.0);
  }

  TripletDataset all = with_xstar_fraction(none, 1.0, 1);
  std::size_t present = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    present += all.has_star[i];
    for (std::size_t j = 0; j < all.dim(); ++j)
      CHECK(all.xstar.at(i, j) == all.x.at(i, j) * all.masks.at(i, j));
  }
  CHECK(present == 40);

  TripletDataset part = with_xstar_fraction(ds, 0.31, 9);
  std::size_t count = 0;
  for (auto h : part.has_star) count += h;
  CHECK(count == 12);  // floor(0.31 * 40)

  CHECK_THROWS_AS(with_xstar_fraction(ds, -0.01, 1), std::invalid_argument);
  CHECK_THROWS_AS(with_xstar_fraction(ds, 1.01, 1), std::invalid_argument);
}

TEST_CASE("evaluate: zero output layer gives uniform logits") {
  ModelArch arch = tiny_arch();
  Model m = build_lupi(arch, {4.0, 1}, 2);
  for (auto& p : m.params())
    if (p.name.rfind("out", 0) == 0) p.value->value.fill(0.0);
  TripletDataset ds = generate(tiny_gen(), 60, 1.0, 8);
  EvalResult r = evaluate(m, ds);
  // argmax ties resolve to class 0
  std::size_t zeros = 0;
  for (int y : ds.y) zeros += y == 0;
  CHECK(r.top1 == doctest::Approx(double(zeros) / 60.0).epsilon(1e-12));
  CHECK(r.ce == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("evaluate: matches a direct argmax loop") {
  Model m = build_lupi(tiny_arch(), {4.0, 1}, 4);
  TripletDataset ds = generate(tiny_gen(), 37, 0.5, 6);
  EvalResult r = evaluate(m, ds);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Tensor row({1, ds.dim()});
    for (std::size_t j = 0; j < ds.dim(); ++j) row[j] = ds.x.at(i, j);
    Tensor logits = m.forward_eval(row);
    std::size_t best = 0;
    for (std::size_t j = 1; j < 3; ++j)
      if (logits[j] > logits[best]) best = j;
    if (static_cast<int>(best) == ds.y[i]) ++correct;
  }
  CHECK(r.top1 == doctest::Approx(double(correct) / 37.0).epsilon(1e-12));
}

TEST_CASE("train: lr = 0 leaves the model untouched") {
  Model m = build_lupi(tiny_arch(), {4.0, 1}, 5);
  std::vector<Tensor> before;
  for (auto& p : m.params()) before.push_back(p.value->value);

  TripletDataset ds = generate(tiny_gen(), 60, 1.0, 4);
  auto parts = split(ds, {0.6, 0.2, 0.2}, 1);
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.max_epochs = 3;
  cfg.batch_size = 16;
  RunRecord rec = train(m, parts[0], parts[1], parts[2], cfg);

  std::size_t k = 0;
  for (auto& p : m.params()) {
    for (std::size_t i = 0; i < p.value->value.size(); ++i)
      CHECK(p.value->value[i] == before[k][i]);
    ++k;
  }
  // with frozen weights the validation row is constant across epochs
  double first_val = -1.0;
  for (const auto& row : rec.rows) {
    if (row.split != "val") continue;
    if (first_val < 0.0) first_val = row.top1;
    CHECK(row.top1 == first_val);
  }
  CHECK(rec.status == "ok");
}

TEST_CASE("train: memorizes a single repeated sample") {
  ModelArch arch = tiny_arch();
  Model m = build_lupi(arch, {4.0, 1}, 6);
  TripletDataset ds = generate(tiny_gen(), 12, 1.0, 5);
  // a one-record train split, validated and tested on itself
  TripletDataset one = ds.subset({0});
  TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.beta = 0.0;
  cfg.max_epochs = 100;
  cfg.patience = 15;
  cfg.batch_size = 1;
  RunRecord rec = train(m, one, one, one, cfg);
  CHECK(rec.final_test.top1 == 1.0);
  CHECK(rec.status == "ok");
}

TEST_CASE("train: same seed reproduces the run bit-exactly") {
  auto run = [] {
    Model m = build_lupi(tiny_arch(), {4.0, 1}, 7);
    TripletDataset ds = generate(tiny_gen(), 90, 0.7, 9);
    auto parts = split(ds, {0.6, 0.2, 0.2}, 2);
    TrainConfig cfg;
    cfg.max_epochs = 4;
    cfg.batch_size = 16;
    cfg.seed = 123;
    return train(m, parts[0], parts[1], parts[2], cfg);
  };
  RunRecord a = run(), b = run();
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].epoch == b.rows[i].epoch);
    CHECK(a.rows[i].split == b.rows[i].split);
    CHECK(a.rows[i].ce == b.rows[i].ce);
    CHECK(a.rows[i].penalty == b.rows[i].penalty);
    CHECK(a.rows[i].total_loss == b.rows[i].total_loss);
    CHECK(a.rows[i].top1 == b.rows[i].top1);
  }
  CHECK(a.final_test.top1 == b.final_test.top1);
  CHECK(a.best_epoch == b.best_epoch);
}

TEST_CASE("train: emits train and val rows every epoch") {
  Model m = build_lupi(tiny_arch(), {4.0, 1}, 8);
  TripletDataset ds = generate(tiny_gen(), 60, 1.0, 10);
  auto parts = split(ds, {0.6, 0.2, 0.2}, 3);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.batch_size = 8;
  RunRecord rec = train(m, parts[0], parts[1], parts[2], cfg);
  REQUIRE(rec.rows.size() == 6);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(rec.rows[2 * e].epoch == e);
    CHECK(rec.rows[2 * e].split == "train");
    CHECK(rec.rows[2 * e + 1].split == "val");
    // penalty is part of the reported training loss
    CHECK(rec.rows[2 * e].total_loss ==
          doctest::Approx(rec.rows[2 * e].ce + rec.rows[2 * e].penalty).epsilon(1e-9));
  }
}

TEST_CASE("model_loss: multitask adds the embedding regression term") {
  ModelArch arch = tiny_arch();
  Model mt = build_baseline({ModelKind::kMultitask, 0.5, 0.1}, arch, 3);
  Model nx = build_baseline({ModelKind::kNoXstar, 0.5, 0.1}, arch, 3);
  TripletDataset ds = generate(tiny_gen(), 10, 1.0, 2);
  std::vector<std::size_t> idx = {0, 1, 2, 3};
  RngState r1(1), r2(1);
  double ce_mt = 0.0, ce_nx = 0.0;
  Var lm = model_loss(mt, ds, idx, 0.0, &r1, nullptr, 1, &ce_mt);
  Var ln = model_loss(nx, ds, idx, 0.0, &r2, nullptr, 1, &ce_nx);
  // identical x paths (same seed): cross-entropies agree, multitask loss adds
  // a non-negative regression term
  CHECK(ce_mt == doctest::Approx(ce_nx).epsilon(1e-12));
  CHECK(lm->value[0] >= ln->value[0]);
  CHECK(lm->value[0] > ce_mt);  // aux head is randomly initialized: term > 0

  CHECK_THROWS_AS(model_loss(mt, ds, {}, 0.0, &r1), std::invalid_argument);
}

TEST_CASE("sweep_n: deterministic cells, serial equals parallel") {
  SweepSetup setup;
  setup.gen = tiny_gen();
  setup.arch = tiny_arch();
  setup.dropout = {4.0, 1};
  setup.pool_n = 120;
  setup.data_seed = 11;
  TrainConfig base;
  base.max_epochs = 2;
  base.batch_size = 16;

  auto serial = sweep_n({16, 32}, {1, 2}, {"lupi", "noxstar"}, base, setup, 1);
  REQUIRE(serial.size() == 8);
  for (const auto& c : serial) {
    CHECK(c.status == "ok");
    CHECK(c.top1 >= 0.0);
    CHECK(c.top1 <= 1.0);
  }
  auto parallel = sweep_n({16, 32}, {1, 2}, {"lupi", "noxstar"}, base, setup, 2);
  REQUIRE(parallel.size() == 8);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].model == parallel[i].model);
    CHECK(serial[i].n == parallel[i].n);
    CHECK(serial[i].seed == parallel[i].seed);
    CHECK(serial[i].top1 == parallel[i].top1);
  }
  CHECK_THROWS_AS(sweep_n({32, 16}, {1}, {"lupi"}, base, setup, 1),
                  std::invalid_argument);
}

TEST_CASE("sweep_xstar_fraction: runs every fraction including the boundaries") {
  SweepSetup setup;
  setup.gen = tiny_gen();
  setup.arch = tiny_arch();
  setup.dropout = {4.0, 1};
  setup.pool_n = 120;
  setup.data_seed = 11;
  TrainConfig base;
  base.max_epochs = 2;
  base.batch_size = 16;

  auto cells = sweep_xstar_fraction({0.0, 0.5, 1.0}, {1}, 32, base, setup, 1);
  REQUIRE(cells.size() == 3);
  CHECK(cells[0].fraction == 0.0);
  CHECK(cells[2].fraction == 1.0);
  for (const auto& c : cells) {
    CHECK(c.model == "lupi");
    CHECK(c.n == 32);
    CHECK(c.status == "ok");
  }
  CHECK_THROWS_AS(sweep_xstar_fraction({1.5}, {1}, 32, base, setup, 1),
                  std::invalid_argument);
}

TEST_CASE("variance_diagnostics: row layout and grand means") {
  ModelArch arch = tiny_arch();
  Model m = build_lupi(arch, {4.0, 1}, 9);
  TripletDataset ds = generate(tiny_gen(), 50, 1.0, 12);
  auto rows = variance_diagnostics(m, ds);
  std::size_t units = 10;  // two sites of width 5
  REQUIRE(rows.size() == 2 * units + 2);
  std::set<long> seen;
  for (std::size_t u = 0; u < units; ++u) {
    CHECK(rows[2 * u].group == "correct");
    CHECK(rows[2 * u + 1].group == "misclassified");
    CHECK(rows[2 * u].unit_index == rows[2 * u + 1].unit_index);
    seen.insert(rows[2 * u].unit_index);
    CHECK(rows[2 * u].mean_sigma > 0.0);
  }
  CHECK(seen.size() == units);  // every unit reported once
  CHECK(rows[2 * units].unit_index == -1);
  CHECK(rows[2 * units + 1].unit_index == -1);
  CHECK(rows[2 * units].count + rows[2 * units + 1].count == 50);

  // grand mean equals the average of the per-unit group means
  double acc = 0.0;
  for (std::size_t u = 0; u < units; ++u) acc += rows[2 * u].mean_sigma;
  CHECK(rows[2 * units].mean_sigma == doctest::Approx(acc / units).epsilon(1e-12));

  TripletDataset none = with_xstar_fraction(ds, 0.0, 1);
  CHECK_THROWS_AS(variance_diagnostics(m, none), std::invalid_argument);
}

TEST_CASE("csv emitters: pinned headers and row counts") {
  SweepCell cell{"lupi", 100, 0.5, 3, 0.75, 0.9, "ok"};
  std::string sw = sweep_csv({cell});
  CHECK(sw.rfind("model,n,fraction,seed,top1,status\n", 0) == 0);
  CHECK(sw.find("lupi,100,0.5,3,0.75,ok") != std::string::npos);

  std::string gap = sweep_gap_csv({cell});
  CHECK(gap.rfind("model,n,fraction,seed,train_top1,test_top1,status\n", 0) == 0);
  CHECK(gap.find("lupi,100,0.5,3,0.90000000000000002,0.75,ok") != std::string::npos);

  RunRecord rec;
  rec.rows.push_back({0, "train", 1.5, 0.25, 1.75, 0.5});
  std::string mt = metrics_csv(rec);
  CHECK(mt.rfind("epoch,split,ce,penalty,total_loss,top1\n", 0) == 0);
  CHECK(mt.find("0,train,1.5,0.25,1.75,0.5") != std::string::npos);

  std::string dg = diagnostics_csv({{2, "correct", 1.25, 7}});
  CHECK(dg.rfind("unit_index,group,mean_sigma,count\n", 0) == 0);
  CHECK(dg.find("2,correct,1.25,7") != std::string::npos);
}
