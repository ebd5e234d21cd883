#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "ubalab/class_graph.hpp"
#include "ubalab/classifier.hpp"
#include "ubalab/dataset.hpp"
#include "ubalab/io.hpp"
#include "ubalab/metrics.hpp"
#include "ubalab/rng.hpp"
#include "ubalab/trigger_gcn.hpp"

using namespace uba;

namespace {

BinaryCodeSet ring_codes() {
  // 4 classes, ring topology at threshold 3: d(0,1)=d(0,2)=d(1,3)=d(2,3)=2,
  // d(0,3)=d(1,2)=4.
  BinaryCodeSet cs;
  cs.class_count = 4;
  cs.code_length = 4;
  cs.codes = {0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1};
  return cs;
}

ClassGraph manual_graph(int nodes, int code_len, const Mat& features, const Mat& ahat) {
  ClassGraph g;
  g.node_count = nodes;
  g.code_length = code_len;
  g.threshold = 1;
  g.weight_min = 0.1;
  g.features = features;
  g.weights = Mat(nodes, nodes);
  g.normalized_adjacency = ahat;
  return g;
}

Mat relu_mat(Mat m) {
  for (auto& v : m.a) v = std::max(0.0, v);
  return m;
}

Mat tensor_to_mat(const Tensor& t, int rows, int cols) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m.at(i, j) = t.data[static_cast<size_t>(i) * cols + j];
  return m;
}

Mat add_bias_mat(Mat m, const Tensor& b) {
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) m.at(i, j) += b.data[j];
  return m;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("ubalab_gcn_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("gcn generator init shapes and bounds") {
  GcnConfig cfg;
  cfg.hidden1 = 8;
  cfg.hidden2 = 6;
  GcnGenerator g = GcnGenerator::init(5, cfg, 2, 4, 4, 99);
  CHECK(g.w1.shape == Shape{5, 8});
  CHECK(g.b1.shape == Shape{8});
  CHECK(g.w2.shape == Shape{8, 6});
  CHECK(g.b2.shape == Shape{6});
  CHECK(g.w_out.shape == Shape{6, 32});
  CHECK(g.b_out.shape == Shape{32});
  for (float v : g.b1.data) CHECK(v == 0.0f);
  const double bound = std::sqrt(6.0 / (5 + 8));
  for (float v : g.w1.data) CHECK(std::abs(v) <= bound);
  // same seed -> identical params; different seed -> different
  GcnGenerator g2 = GcnGenerator::init(5, cfg, 2, 4, 4, 99);
  CHECK(g2.w_out.data == g.w_out.data);
  GcnGenerator g3 = GcnGenerator::init(5, cfg, 2, 4, 4, 100);
  CHECK(g3.w_out.data != g.w_out.data);

  CHECK_THROWS_AS(GcnGenerator::init(0, cfg, 2, 4, 4, 1), std::invalid_argument);
  GcnConfig bad = cfg;
  bad.alpha = 0;
  CHECK_THROWS_AS(GcnGenerator::init(5, bad, 2, 4, 4, 1), std::invalid_argument);
}

TEST_CASE("gcn forward matches a hand-rolled double computation") {
  BinaryCodeSet cs = ring_codes();
  ClassGraph graph = build_class_graph(cs, 3.0, 0.1);
  GcnConfig cfg;
  cfg.hidden1 = 7;
  cfg.hidden2 = 5;
  cfg.alpha = 0.2;
  GcnGenerator gen = GcnGenerator::init(4, cfg, 1, 3, 3, 21);

  Tensor trig = generate_triggers(gen, graph);
  REQUIRE(trig.shape == Shape{4, 1, 3, 3});

  // same math, straight Mat ops
  Mat ax = matmul(graph.normalized_adjacency, graph.features);
  Mat h1 = relu_mat(add_bias_mat(matmul(ax, tensor_to_mat(gen.w1, 4, 7)), gen.b1));
  Mat h2 = relu_mat(add_bias_mat(matmul(matmul(graph.normalized_adjacency, h1),
                                        tensor_to_mat(gen.w2, 7, 5)),
                                 gen.b2));
  Mat pre = add_bias_mat(matmul(h2, tensor_to_mat(gen.w_out, 5, 9)), gen.b_out);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 9; ++j) {
      const double want = 0.2 * std::tanh(pre.at(i, j));
      CHECK(trig.data[static_cast<size_t>(i) * 9 + j] ==
            doctest::Approx(want).epsilon(1e-6));
    }
}

TEST_CASE("trigger amplitude is bounded by alpha") {
  BinaryCodeSet cs = ring_codes();
  ClassGraph graph = build_class_graph(cs, 3.0, 0.1);
  GcnConfig cfg;
  cfg.alpha = 0.2;
  cfg.hidden1 = 16;
  cfg.hidden2 = 16;
  GcnGenerator gen = GcnGenerator::init(4, cfg, 3, 8, 8, 5);
  // blow up the output weights; tanh still pins |T| below alpha
  for (auto& v : gen.w_out.data) v *= 1000.0f;
  Tensor trig = generate_triggers(gen, graph);
  for (float v : trig.data) CHECK(std::abs(v) <= 0.2f + 1e-7f);
}

TEST_CASE("graph propagation couples classes; an edgeless graph does not") {
  Mat feats(2, 3);
  feats.at(0, 0) = 1;
  feats.at(1, 2) = 1;
  Mat feats_changed = feats;
  feats_changed.at(0, 1) = 1;  // perturb node 0 only

  Mat coupled(2, 2);
  coupled.at(0, 0) = coupled.at(1, 1) = 0.6;
  coupled.at(0, 1) = coupled.at(1, 0) = 0.4;
  Mat iso = Mat::identity(2);

  GcnConfig cfg;
  cfg.hidden1 = 6;
  cfg.hidden2 = 6;
  GcnGenerator gen = GcnGenerator::init(3, cfg, 1, 2, 2, 77);

  auto row1 = [&](const Mat& f, const Mat& a) {
    Tensor t = generate_triggers(gen, manual_graph(2, 3, f, a));
    return std::vector<float>(t.data.begin() + 4, t.data.end());
  };

  // with an edge, node 1's trigger feels node 0's code
  CHECK(row1(feats, coupled) != row1(feats_changed, coupled));
  // with identity propagation it cannot
  CHECK(row1(feats, iso) == row1(feats_changed, iso));
}

TEST_CASE("stealth loss closed forms") {
  // identical batch: PSNR caps at 100, hinge clears at threshold 30
  Tensor clean = Tensor::full({2, 8}, 0.25f);
  CHECK(stealth_loss_value(clean, clean, 30.0) == 0.0);
  // ... but a threshold above the cap exposes the 100 dB ceiling exactly
  CHECK(stealth_loss_value(clean, clean, 120.0) == doctest::Approx(20.0).epsilon(1e-12));

  // known distortion: +0.125 on every pixel -> mse 0.015625 -> psnr ~18.06
  Tensor shifted = Tensor::full({2, 8}, 0.375f);
  const double want_psnr = -10.0 * std::log10(0.015625);
  CHECK(stealth_loss_value(shifted, clean, 30.0) ==
        doctest::Approx(30.0 - want_psnr).epsilon(1e-12));

  // mixed batch: one clean row (hinge 0), one shifted row
  Tensor mixed = clean;
  for (int j = 0; j < 8; ++j) mixed.data[8 + j] = 0.375f;
  CHECK(stealth_loss_value(mixed, clean, 30.0) ==
        doctest::Approx(0.5 * (30.0 - want_psnr)).epsilon(1e-12));

  Tensor bad = Tensor::full({2, 7}, 0.0f);
  CHECK_THROWS_AS(stealth_loss_value(bad, clean, 30.0), ShapeError);
}

TEST_CASE("total loss mixes and validates beta") {
  CHECK(total_loss_value(2.0, 10.0, 0.01) == doctest::Approx(0.99 * 2 + 0.1).epsilon(1e-12));
  CHECK(total_loss_value(5.0, 1.0, 0.0) == 5.0);
  CHECK(total_loss_value(5.0, 1.0, 1.0) == 1.0);
  CHECK_THROWS_AS(total_loss_value(1, 1, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(total_loss_value(1, 1, 1.1), std::invalid_argument);
}

TEST_CASE("tape loss graph agrees with the value-level losses") {
  DataGenSpec spec;
  spec.classes = 4;
  spec.channels = 1;
  spec.height = 6;
  spec.width = 6;
  spec.train_per_class = 8;
  spec.test_per_class = 3;
  spec.sample_per_class = 3;
  spec.seed = 11;
  SyntheticData data = generate_synthetic_dataset(spec);
  ArchConfig arch;
  arch.kind = ArchKind::kMlp;
  arch.hidden = 24;
  arch.feature_dim = 12;
  TrainConfig tc;
  tc.epochs = 6;
  Classifier surrogate = train_classifier(data.train, arch, tc, 3);

  const int bsz = 3, dim = 36, target = 2;
  Tensor batch = Tensor::zeros({bsz, dim});
  for (int i = 0; i < bsz; ++i) {
    auto img = data.test.image(i);
    std::copy(img.begin(), img.end(), batch.data.begin() + i * dim);
  }
  // exactly representable trigger so the f32 and double clamp paths agree
  Tensor tmat = Tensor::full({4, dim}, 0.0f);
  for (int j = 0; j < dim; ++j) tmat.data[target * dim + j] = 0.0625f;

  Tape tape;
  Tape::NodeId x = tape.leaf(batch);
  Tape::NodeId xp = tape.clamp01(tape.add_bias(x, tape.row(tape.leaf(tmat), target)));
  Tape::NodeId neg_psnr = tape.scale(tape.log(tape.clamp_min(tape.rowwise_mse(xp, x), 1e-10)),
                                     10.0 / std::log(10.0));
  Tape::NodeId l_stealth = tape.reduce_mean(tape.relu(tape.add_scalar(neg_psnr, 30.0)));
  Classifier::Bound sb = surrogate.bind(tape, false);
  Tape::NodeId phi = surrogate.features_node(tape, sb, tape.reshape(xp, {bsz, 1, 6, 6}));
  std::vector<int> labels(bsz, target);
  Tape::NodeId l_attack = tape.softmax_cross_entropy(surrogate.logits_node(tape, sb, phi), labels);

  // value path: stamp the same trigger with apply_trigger
  Tensor poisoned4 = Tensor::zeros({bsz, 1, 6, 6});
  Tensor trig_img = Tensor::full({1, 6, 6}, 0.0625f);
  for (int i = 0; i < bsz; ++i) {
    Tensor out = apply_trigger(data.test.image_tensor(i), trig_img);
    std::copy(out.data.begin(), out.data.end(), poisoned4.data.begin() + i * dim);
  }
  Tensor poisoned2 = poisoned4;
  poisoned2.shape = {bsz, dim};
  Tensor clean2 = batch;

  CHECK(tape.scalar(l_stealth) ==
        doctest::Approx(stealth_loss_value(poisoned2, clean2, 30.0)).epsilon(1e-6));
  CHECK(tape.scalar(l_attack) ==
        doctest::Approx(attack_loss_value(surrogate, poisoned4, target)).epsilon(1e-7));
}

TEST_CASE("inactive stealth hinge passes zero gradient to the generator") {
  BinaryCodeSet cs = ring_codes();
  ClassGraph graph = build_class_graph(cs, 3.0, 0.1);
  GcnConfig cfg;
  cfg.hidden1 = 8;
  cfg.hidden2 = 8;
  cfg.alpha = 0.001;  // triggers this faint keep PSNR far above the threshold
  GcnGenerator gen = GcnGenerator::init(4, cfg, 1, 4, 4, 13);

  Tensor batch = Tensor::zeros({3, 16});
  Rng rng(4);
  for (auto& v : batch.data) v = static_cast<float>(rng.uniform(0.2, 0.8));

  Tape tape;
  GcnBound gb = bind_gcn(tape, gen, true);
  Tape::NodeId tmat = gcn_triggers_node(tape, gen, gb, graph);
  Tape::NodeId x = tape.leaf(batch);
  Tape::NodeId xp = tape.clamp01(tape.add_bias(x, tape.row(tmat, 1)));
  Tape::NodeId neg_psnr = tape.scale(tape.log(tape.clamp_min(tape.rowwise_mse(xp, x), 1e-10)),
                                     10.0 / std::log(10.0));
  Tape::NodeId loss = tape.reduce_mean(tape.relu(tape.add_scalar(neg_psnr, 30.0)));
  REQUIRE(tape.scalar(loss) == 0.0);
  tape.backward(loss);
  std::vector<Tensor*> params = gen.param_ptrs();
  for (size_t i = 0; i < params.size(); ++i) {
    tape.write_grad(gb.ids[i], *params[i]);
    for (float g : params[i]->grad) CHECK(g == 0.0f);
  }
}

TEST_CASE("trigger training drives the attack loss down on a frozen surrogate") {
  DataGenSpec spec;
  spec.classes = 4;
  spec.channels = 2;
  spec.height = 8;
  spec.width = 8;
  spec.train_per_class = 15;
  spec.test_per_class = 6;
  spec.sample_per_class = 4;
  spec.seed = 31;
  SyntheticData data = generate_synthetic_dataset(spec);

  ArchConfig arch;
  arch.kind = ArchKind::kMlp;
  arch.hidden = 32;
  arch.feature_dim = 16;
  TrainConfig tc;
  tc.epochs = 25;
  Classifier surrogate = train_classifier(data.train, arch, tc, 17);
  REQUIRE(accuracy(surrogate, data.test) > 0.9);
  std::vector<Tensor> frozen = surrogate.params();

  ClassGraph graph = build_class_graph(ring_codes(), 3.0, 0.1);
  TriggerTrainConfig cfg;
  cfg.gcn.hidden1 = 16;
  cfg.gcn.hidden2 = 16;
  cfg.beta = 0.9;  // attack-heavy so the flip signal dominates on this tiny task
  cfg.psnr_threshold = 24;
  cfg.lr = 0.1;
  cfg.epochs = 120;
  cfg.batch_size = 16;
  cfg.targets_per_step = 4;
  cfg.seed = 404;
  TriggerTrainResult res = train_trigger_generator(data.train, graph, surrogate, cfg);

  REQUIRE(res.curve.size() == 120);
  CHECK(res.triggers.shape == Shape{4, 2, 8, 8});
  for (float v : res.triggers.data) CHECK(std::abs(v) <= cfg.gcn.alpha + 1e-7);

  // the surrogate must come through untouched
  for (size_t i = 0; i < frozen.size(); ++i)
    CHECK(surrogate.params()[i].data == frozen[i].data);

  // attack loss falls hard
  CHECK(res.curve.back().attack < 0.3 * res.curve.front().attack);

  // and the triggers actually flip the frozen surrogate on held-out images
  int hits = 0, total = 0;
  for (int y = 0; y < 4; ++y) {
    Tensor trig = Tensor::zeros({2, 8, 8});
    std::copy(res.triggers.data.begin() + y * 128, res.triggers.data.begin() + (y + 1) * 128,
              trig.data.begin());
    for (int i = 0; i < data.test.size(); ++i) {
      Tensor poisoned = apply_trigger(data.test.image_tensor(i), trig);
      poisoned.shape = {1, 2, 8, 8};
      if (surrogate.predict(poisoned)[0] == y) ++hits;
      ++total;
    }
  }
  CHECK(static_cast<double>(hits) / total > 0.4);  // chance is 0.25
}

TEST_CASE("trigger training is deterministic in its seed") {
  DataGenSpec spec;
  spec.classes = 4;
  spec.channels = 1;
  spec.height = 6;
  spec.width = 6;
  spec.train_per_class = 8;
  spec.test_per_class = 3;
  spec.sample_per_class = 3;
  spec.seed = 5;
  SyntheticData data = generate_synthetic_dataset(spec);
  ArchConfig arch;
  arch.kind = ArchKind::kMlp;
  arch.hidden = 16;
  arch.feature_dim = 8;
  TrainConfig tc;
  tc.epochs = 4;
  Classifier surrogate = train_classifier(data.train, arch, tc, 2);
  ClassGraph graph = build_class_graph(ring_codes(), 3.0, 0.1);

  TriggerTrainConfig cfg;
  cfg.gcn.hidden1 = 8;
  cfg.gcn.hidden2 = 8;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.seed = 88;
  TriggerTrainResult a = train_trigger_generator(data.train, graph, surrogate, cfg);
  TriggerTrainResult b = train_trigger_generator(data.train, graph, surrogate, cfg);
  CHECK(a.triggers.data == b.triggers.data);
  for (size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].stealth == b.curve[i].stealth);
    CHECK(a.curve[i].attack == b.curve[i].attack);
  }
  cfg.seed = 89;
  TriggerTrainResult c = train_trigger_generator(data.train, graph, surrogate, cfg);
  CHECK(a.triggers.data != c.triggers.data);

  // regeneration from the final generator reproduces the stored triggers
  Tensor again = generate_triggers(a.generator, graph);
  CHECK(again.data == a.triggers.data);
}

TEST_CASE("generator checkpoints round-trip") {
  TempDir dir;
  GcnConfig cfg;
  cfg.hidden1 = 8;
  cfg.hidden2 = 8;
  GcnGenerator gen = GcnGenerator::init(4, cfg, 1, 4, 4, 50);
  for (auto& v : gen.b_out.data) v = 0.01f;  // make biases non-trivial
  gen.save(dir.file("gen.ubds"));
  GcnGenerator back = GcnGenerator::load(dir.file("gen.ubds"));
  CHECK(back.code_length == 4);
  CHECK(back.cfg.hidden1 == 8);
  CHECK(back.cfg.alpha == doctest::Approx(0.2));
  CHECK(back.w1.data == gen.w1.data);
  CHECK(back.b_out.data == gen.b_out.data);

  ClassGraph graph = build_class_graph(ring_codes(), 3.0, 0.1);
  CHECK(generate_triggers(back, graph).data == generate_triggers(gen, graph).data);

  // a tensor checkpoint that is not a generator must be rejected
  save_tensor(dir.file("not_gen.ubds"), Tensor::zeros({3}));
  CHECK_THROWS(GcnGenerator::load(dir.file("not_gen.ubds")));
}

TEST_CASE("loss curve csv export") {
  TempDir dir;
  std::vector<TriggerEpochStat> curve = {{0, 1.5, 2.25, 1.5075}, {1, 0.5, 2.0, 0.515}};
  export_loss_curve_csv(dir.file("curve.csv"), curve);
  std::string text = read_text_file(dir.file("curve.csv"));
  CHECK(text == "epoch,stealth,attack,total\n0,1.5,2.25,1.5075\n1,0.5,2,0.515\n");
}

TEST_CASE("trigger psnr stats") {
  Dataset probe;
  probe.images = Tensor::full({2, 1, 4, 4}, 0.5f);
  probe.labels = {0, 0};
  probe.class_count = 1;

  Tensor zero_trig = Tensor::zeros({1, 1, 4, 4});
  TriggerPsnrStats s0 = trigger_psnr_stats(zero_trig, probe);
  CHECK(s0.mean == 100.0);
  CHECK(s0.min == 100.0);

  Tensor trig = Tensor::full({1, 1, 4, 4}, 0.125f);  // mse 0.015625 exactly
  TriggerPsnrStats s1 = trigger_psnr_stats(trig, probe);
  const double want = -10.0 * std::log10(0.015625);
  CHECK(s1.mean == doctest::Approx(want).epsilon(1e-9));
  CHECK(s1.min == doctest::Approx(want).epsilon(1e-9));

  Tensor wrong = Tensor::zeros({2, 1, 4, 4});
  CHECK_THROWS_AS(trigger_psnr_stats(wrong, probe), ShapeError);
}

TEST_CASE("trigger training rejects bad configs and mismatched inputs") {
  DataGenSpec spec;
  spec.classes = 4;
  spec.channels = 1;
  spec.height = 6;
  spec.width = 6;
  spec.train_per_class = 4;
  spec.test_per_class = 2;
  spec.sample_per_class = 2;
  spec.seed = 1;
  SyntheticData data = generate_synthetic_dataset(spec);
  ArchConfig arch;
  arch.kind = ArchKind::kLinear;
  TrainConfig tc;
  tc.epochs = 1;
  Classifier surrogate = train_classifier(data.train, arch, tc, 1);
  ClassGraph graph = build_class_graph(ring_codes(), 3.0, 0.1);

  TriggerTrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(train_trigger_generator(data.train, graph, surrogate, cfg),
                  std::invalid_argument);
  cfg.epochs = 1;
  cfg.beta = 1.5;
  CHECK_THROWS_AS(train_trigger_generator(data.train, graph, surrogate, cfg),
                  std::invalid_argument);
  cfg.beta = 0.01;
  cfg.psnr_threshold = 0;
  CHECK_THROWS_AS(train_trigger_generator(data.train, graph, surrogate, cfg),
                  std::invalid_argument);

  // class-count mismatch between graph and data
  BinaryCodeSet five;
  five.class_count = 5;
  five.code_length = 4;
  five.codes.assign(20, 0);
  for (int i = 0; i < 5; ++i) five.codes[i * 4 + (i % 4)] = 1;
  ClassGraph graph5 = build_class_graph(five, 3.0, 0.1);
  TriggerTrainConfig ok;
  ok.epochs = 1;
  CHECK_THROWS_AS(train_trigger_generator(data.train, graph5, surrogate, ok),
                  std::invalid_argument);
}
