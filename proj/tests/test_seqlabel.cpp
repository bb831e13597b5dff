#include <doctest.h>

#include <cmath>
#include <fstream>

#include "argsearch/metrics.hpp"
#include "argsearch/seqlabel.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"
#include "support/tempdir.hpp"

using namespace argsearch;

namespace {

constexpr BioTag B = BioTag::B;
constexpr BioTag I = BioTag::I;
constexpr BioTag O = BioTag::O;

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

std::vector<BioTag> random_tags(Rng& rng, std::size_t n) {
  std::vector<BioTag> t;
  for (std::size_t i = 0; i < n; ++i) t.push_back(static_cast<BioTag>(rng.below(3)));
  return t;
}

// Swaps the forward and backward halves of a BiLSTM parameter vector.
Eigen::VectorXd swap_directions(const TaggerParams& p) {
  const Eigen::Index h = p.hidden;
  const Eigen::Index dir = 4 * h * p.input_dim + 4 * h * h + 4 * h;
  Eigen::VectorXd out = p.theta;
  out.segment(0, dir) = p.theta.segment(dir, dir);
  out.segment(dir, dir) = p.theta.segment(0, dir);
  // Wo is 3 x 2h column-major: the first 3h entries read the forward state.
  out.segment(2 * dir, 3 * h) = p.theta.segment(2 * dir + 3 * h, 3 * h);
  out.segment(2 * dir + 3 * h, 3 * h) = p.theta.segment(2 * dir, 3 * h);
  return out;
}

std::vector<LabeledSequence> cue_sequences(const Corpus& c) {
  std::vector<std::string> ids;
  std::vector<std::string> texts;
  for (const auto& d : c.documents) {
    for (std::size_t i = 0; i < d.sentences.size(); ++i) {
      ids.push_back(sentence_id(d, i));
      texts.push_back(d.sentences[i].text);
    }
  }
  const auto emb = make_embedding_set(EmbeddingKind::kHashTest, ids, hash_embed(texts, 32, 0));
  return prepare_sequences(c, emb, true);
}

LabeledSequence constant_sequence(const std::string& id, std::vector<BioTag> tags) {
  return {id, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tags.size()), 2), std::move(tags)};
}

}  // namespace

TEST_CASE("focal loss examples") {
  FocalLossConfig cfg{2.0, 0.25};
  CHECK(focal_term(0.0, true, cfg).loss == doctest::Approx(0.25 * 0.25 * std::log(2.0)));
  CHECK(focal_term(40.0, true, cfg).loss < 1e-12);
  CHECK(focal_term(-40.0, false, cfg).loss < 1e-12);

  const FocalLossConfig bce{0.0, 0.5};
  const Eigen::Vector3d logits(0.3, -1.2, 2.0);
  const Eigen::Vector3d target(0, 1, 0);
  double expected = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double p = 1.0 / (1.0 + std::exp(-logits(c)));
    expected -= target(c) > 0.5 ? std::log(p) : std::log(1.0 - p);
  }
  CHECK(focal_loss(logits, target, bce).loss == doctest::Approx(0.5 * expected));
}

TEST_CASE("focal loss gradient") {
  Rng rng(5);
  const FocalLossConfig cfg;
  for (int inst = 0; inst < 20; ++inst) {
    const Eigen::Vector3d logits = 3.0 * random_matrix(rng, 3, 1);
    Eigen::Vector3d target = Eigen::Vector3d::Zero();
    target(static_cast<Eigen::Index>(rng.below(3))) = 1.0;
    const auto f = [&](const Eigen::VectorXd& x) { return focal_loss(x, target, cfg).loss; };
    const Eigen::VectorXd numeric = oracle::numeric_gradient(f, logits, 1e-5);
    CHECK(oracle::relative_error(focal_loss(logits, target, cfg).grad, numeric) <= 1e-4);
  }
}

TEST_CASE("FNN and BiLSTM gradients through time") {
  Rng rng(8);
  const FocalLossConfig focal;
  for (ModelKind kind : {ModelKind::kFnn, ModelKind::kBiLstm}) {
    for (int inst = 0; inst < 20; ++inst) {
      TaggerParams p = init_params(kind, 6, 4, 100 + static_cast<std::uint64_t>(inst));
      // Nonzero biases so every parameter block is exercised.
      p.theta += 0.1 * random_matrix(rng, p.theta.size(), 1);
      const auto t = static_cast<Eigen::Index>(1 + rng.below(5));
      const Eigen::MatrixXd x = random_matrix(rng, t, 6);
      const auto tags = random_tags(rng, static_cast<std::size_t>(t));
      Eigen::VectorXd grad;
      sequence_loss(p, x, tags, focal, &grad);
      const auto f = [&](const Eigen::VectorXd& theta) {
        TaggerParams q = p;
        q.theta = theta;
        return sequence_loss(q, x, tags, focal, nullptr);
      };
      const Eigen::VectorXd numeric = oracle::numeric_gradient(f, p.theta, 1e-5);
      CAPTURE(to_string(kind));
      CAPTURE(inst);
      CHECK(oracle::relative_error(grad, numeric) <= 1e-4);
    }
  }
}

TEST_CASE("parameter shapes and init") {
  CHECK(TaggerParams::parameter_count(ModelKind::kFnn, 6, 4) == 4 * 6 + 4 + 3 * 4 + 3);
  CHECK(TaggerParams::parameter_count(ModelKind::kBiLstm, 6, 4) == 2 * (16 * 6 + 16 * 4 + 16) + 3 * 8 + 3);
  const TaggerParams p = init_params(ModelKind::kBiLstm, 6, 4, 1);
  CHECK(p.theta.size() == TaggerParams::parameter_count(ModelKind::kBiLstm, 6, 4));
  CHECK(p.theta.allFinite());
  // Forget-gate bias block of the forward cell.
  const Eigen::Index b = 16 * 6 + 16 * 4;
  CHECK(p.theta.segment(b + 4, 4).isConstant(1.0));
  CHECK(p.theta.segment(b, 4).isZero());
  CHECK(p.theta.segment(0, 16 * 6).cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(6.0));
  CHECK(init_params(ModelKind::kBiLstm, 6, 4, 1).theta == p.theta);
  CHECK_THROWS_AS(init_params(ModelKind::kFnn, 0, 4, 1), ConfigError);
}

TEST_CASE("BiLSTM forward properties") {
  TaggerParams zero = init_params(ModelKind::kBiLstm, 5, 3, 2);
  zero.theta.setZero();
  Rng rng(3);
  CHECK(forward(zero, random_matrix(rng, 4, 5)).isZero());

  const TaggerParams p = init_params(ModelKind::kBiLstm, 5, 3, 2);
  const Eigen::MatrixXd x = random_matrix(rng, 6, 5);
  const Eigen::MatrixXd y = forward(p, x);
  CHECK(y.rows() == 6);
  CHECK(y.cols() == 3);

  TaggerParams swapped = p;
  swapped.theta = swap_directions(p);
  const Eigen::MatrixXd yr = forward(swapped, x.colwise().reverse());
  CHECK((yr.colwise().reverse() - y).cwiseAbs().maxCoeff() <= 1e-10);

  // A sequence is tagged the same whatever else it is batched with.
  CHECK(forward(p, x.topRows(2)) != y.topRows(2));
  CHECK(forward(p, x) == y);

  CHECK_THROWS_AS(forward(p, Eigen::MatrixXd(0, 5)), DataError);
  CHECK_THROWS_AS(forward(p, Eigen::MatrixXd::Zero(2, 4)), DataError);
}

TEST_CASE("checkpoint round trip") {
  TempDir dir;
  for (ModelKind kind : {ModelKind::kFnn, ModelKind::kBiLstm}) {
    const TaggerParams p = init_params(kind, 7, 5, 4);
    const auto path = dir.path() / "m.ckpt";
    save_checkpoint(p, path);
    std::ifstream in(path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "SEQ1");
    const TaggerParams q = load_checkpoint(path);
    CHECK(q.kind == kind);
    CHECK(q.input_dim == 7);
    CHECK(q.hidden == 5);
    CHECK(q.theta == p.theta);
  }
  std::ofstream(dir.path() / "bad.ckpt", std::ios::binary) << "SEQ0 not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "bad.ckpt"), DataError);
}

TEST_CASE("Adagrad") {
  Adagrad opt{0.1, 1e-8, {}};
  Eigen::VectorXd theta(1);
  theta << 2.0;
  Eigen::VectorXd g(1);
  g << -3.0;
  opt.step(theta, g);
  CHECK(theta(0) == doctest::Approx(2.1));

  Rng rng(6);
  Adagrad multi{0.01, 1e-8, {}};
  Eigen::VectorXd t = Eigen::VectorXd::Zero(4);
  Eigen::VectorXd prev = Eigen::VectorXd::Zero(4);
  for (int i = 0; i < 20; ++i) {
    multi.step(t, random_matrix(rng, 4, 1));
    CHECK((multi.accumulator.array() >= prev.array()).all());
    prev = multi.accumulator;
  }
}

TEST_CASE("decoding") {
  TaggerParams p = init_params(ModelKind::kFnn, 2, 2, 1);
  p.theta.setZero();
  const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(3, 2);
  CHECK(predict_tags(p, x) == std::vector<BioTag>{B, B, B});
  // Bias the I output: b2 is the last 3 entries.
  p.theta(p.theta.size() - 2) = 1.0;
  CHECK(predict_tags(p, x) == std::vector<BioTag>{I, I, I});

  CHECK(repair_tags(std::vector<BioTag>{I, I, O}) == std::vector<BioTag>{B, I, O});
  CHECK(repair_tags(std::vector<BioTag>{B, O, I, I}) == std::vector<BioTag>{B, O, B, I});
  CHECK(repair_tags(std::vector<BioTag>{B, I, B, I}) == std::vector<BioTag>{B, I, B, I});
}

TEST_CASE("segment_arguments") {
  using S = std::vector<ArgumentSpan>;
  CHECK(segment_arguments(std::vector<BioTag>{B, I, I, O, B, I}) == S{{0, 2}, {4, 5}});
  CHECK(segment_arguments(std::vector<BioTag>{O, O, O}).empty());
  CHECK(segment_arguments(std::vector<BioTag>{B, B, B}) == S{{0, 0}, {1, 1}, {2, 2}});
  CHECK(segment_arguments(std::vector<BioTag>{O, I, I}) == S{{1, 2}});

  Rng rng(12);
  for (int inst = 0; inst < 100; ++inst) {
    const auto tags = random_tags(rng, 1 + rng.below(12));
    const auto spans = segment_arguments(tags);
    std::size_t next = 0;
    for (const auto& s : spans) {
      CHECK(s.begin >= next);
      CHECK(s.end >= s.begin);
      CHECK(tags[s.begin] != O);
      for (std::size_t i = s.begin + 1; i <= s.end; ++i) CHECK(tags[i] == I);
      next = s.end + 1;
    }
  }
}

TEST_CASE("majority baseline") {
  std::vector<LabeledSequence> mostly_i{constant_sequence("a", {B, I, I, O}), constant_sequence("b", {I, I})};
  CHECK(majority_baseline(mostly_i) == I);
  std::vector<LabeledSequence> all_o{constant_sequence("a", {O, O})};
  CHECK(majority_baseline(all_o) == O);
  std::vector<LabeledSequence> tie{constant_sequence("a", {I, O, O, I})};
  CHECK(majority_baseline(tie) == I);
  CHECK_THROWS_AS(majority_baseline(std::vector<LabeledSequence>{}), DataError);
}

TEST_CASE("prepare_sequences") {
  const Corpus c = synth::cue_corpus(4, 2, false, 1);
  const auto seqs = cue_sequences(c);
  REQUIRE(seqs.size() == 4);
  CHECK(seqs[0].features.rows() == static_cast<Eigen::Index>(c.documents[0].sentences.size()));
  CHECK(seqs[0].tags.size() == c.documents[0].sentences.size());

  const auto empty = make_embedding_set(EmbeddingKind::kHashTest, {"x#0"}, Eigen::MatrixXd::Zero(1, 4));
  CHECK_THROWS_AS(prepare_sequences(c, empty, true), DataError);
}

TEST_CASE("training is deterministic and keeps the best validation snapshot") {
  const Corpus c = synth::cue_corpus(24, 4, false, 2);
  const auto seqs = cue_sequences(c);
  const std::vector<LabeledSequence> tr(seqs.begin(), seqs.begin() + 18);
  const std::vector<LabeledSequence> va(seqs.begin() + 18, seqs.end());
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.epochs = 6;
  cfg.lr = 0.05;
  cfg.seed = 3;
  const TrainResult a = train(tr, va, cfg);
  const TrainResult b = train(tr, va, cfg);
  REQUIRE(a.trace.size() == 6);
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].train_loss == b.trace[i].train_loss);
    CHECK(a.trace[i].val_loss == b.trace[i].val_loss);
  }
  CHECK(a.params.theta == b.params.theta);
  CHECK(a.best_val_loss <= a.trace.back().val_loss);
  CHECK(a.best_val_loss == doctest::Approx(pooled_loss(a.params, va, cfg.focal)).epsilon(1e-12));
  CHECK(a.trace[static_cast<std::size_t>(a.best_epoch - 1)].val_loss == a.best_val_loss);

  const std::string csv = loss_trace_csv(a.trace);
  CHECK(csv.rfind("epoch,train_loss,val_loss\n", 0) == 0);

  cfg.epochs = 0;
  CHECK_THROWS_AS(train(tr, va, cfg), ConfigError);
  cfg.epochs = 1;
  CHECK_THROWS_AS(train(tr, std::vector<LabeledSequence>{}, cfg), DataError);
}

TEST_CASE("BiLSTM learns cue-word segmentation") {
  const Corpus c = synth::cue_corpus(60, 6, false, 4);
  const auto seqs = cue_sequences(c);
  const std::vector<LabeledSequence> tr(seqs.begin(), seqs.begin() + 40);
  const std::vector<LabeledSequence> va(seqs.begin() + 40, seqs.begin() + 48);
  TrainConfig cfg;
  cfg.hidden = 16;
  cfg.epochs = 15;
  cfg.lr = 0.05;
  const TrainResult r = train(tr, va, cfg);
  std::vector<std::vector<BioTag>> truth;
  std::vector<std::vector<BioTag>> pred;
  for (auto it = seqs.begin() + 48; it != seqs.end(); ++it) {
    truth.push_back(it->tags);
    pred.push_back(predict_tags(r.params, it->features));
  }
  CHECK(tagging_eval(truth, pred).f1_macro_bi >= 0.9);
}
