#include "argsearch/seqlabel.hpp"

#include <cmath>
#include <numeric>

#include "argsearch/io.hpp"

namespace argsearch {

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

FocalTerm focal_term(double logit, bool target, const FocalLossConfig& config) {
  // In terms of s = +-logit, p_t = sigmoid(s).
  const double s = target ? logit : -logit;
  const double pt = sigmoid(s);
  const double one_minus = sigmoid(-s);
  const double log_pt = -softplus(-s);
  const double weight = target ? config.alpha : 1.0 - config.alpha;
  const double modulator = std::pow(one_minus, config.gamma);
  FocalTerm out;
  out.loss = weight * modulator * (-log_pt);
  const double d_ds = weight * (config.gamma * modulator * pt * log_pt - modulator * one_minus);
  out.grad = target ? d_ds : -d_ds;
  return out;
}

FocalLoss focal_loss(const Eigen::Vector3d& logits, const Eigen::Vector3d& target,
                     const FocalLossConfig& config) {
  FocalLoss out;
  for (int c = 0; c < 3; ++c) {
    const FocalTerm t = focal_term(logits(c), target(c) > 0.5, config);
    out.loss += t.loss;
    out.grad(c) = t.grad;
  }
  return out;
}

std::string to_string(ModelKind kind) { return kind == ModelKind::kBiLstm ? "bilstm" : "fnn"; }

ModelKind model_kind_from_string(std::string_view s) {
  if (s == "bilstm") return ModelKind::kBiLstm;
  if (s == "fnn") return ModelKind::kFnn;
  throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

namespace {

using Map = Eigen::Map<Eigen::MatrixXd>;
using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

struct Offsets {
  Eigen::Index w = 0, u = 0, b = 0;
};

// Offsets into theta for the BiLSTM layout.
struct LstmLayout {
  Eigen::Index d, h;
  Offsets dir[2];
  Eigen::Index wo, bo, total;

  LstmLayout(Eigen::Index d_, Eigen::Index h_) : d(d_), h(h_) {
    Eigen::Index at = 0;
    for (auto& o : dir) {
      o.w = at;
      at += 4 * h * d;
      o.u = at;
      at += 4 * h * h;
      o.b = at;
      at += 4 * h;
    }
    wo = at;
    at += 3 * 2 * h;
    bo = at;
    at += 3;
    total = at;
  }
};

struct FnnLayout {
  Eigen::Index d, h;
  Eigen::Index w1, b1, w2, b2, total;

  FnnLayout(Eigen::Index d_, Eigen::Index h_) : d(d_), h(h_) {
    w1 = 0;
    b1 = w1 + h * d;
    w2 = b1 + h;
    b2 = w2 + 3 * h;
    total = b2 + 3;
  }
};

// Activations of one LSTM direction over a column-ordered sequence
// (columns are already in processing order).
struct LstmTrace {
  Eigen::MatrixXd gates;   // 4h x T, post-activation
  Eigen::MatrixXd cells;   // h x T
  Eigen::MatrixXd hidden;  // h x T
};

LstmTrace lstm_run(const double* theta, const Offsets& o, Eigen::Index d, Eigen::Index h,
                   const Eigen::MatrixXd& xs /* d x T */) {
  const ConstMap w(theta + o.w, 4 * h, d);
  const ConstMap u(theta + o.u, 4 * h, h);
  const ConstVecMap b(theta + o.b, 4 * h);
  const Eigen::Index steps = xs.cols();
  LstmTrace tr;
  tr.gates = (w * xs).colwise() + b;
  tr.cells.resize(h, steps);
  tr.hidden.resize(h, steps);
  Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(h);
  Eigen::VectorXd c_prev = Eigen::VectorXd::Zero(h);
  for (Eigen::Index t = 0; t < steps; ++t) {
    auto z = tr.gates.col(t);
    z.noalias() += u * h_prev;
    for (Eigen::Index k = 0; k < 3 * h; ++k) z(k) = sigmoid(z(k));
    for (Eigen::Index k = 3 * h; k < 4 * h; ++k) z(k) = std::tanh(z(k));
    const auto i = z.segment(0, h).array();
    const auto f = z.segment(h, h).array();
    const auto og = z.segment(2 * h, h).array();
    const auto g = z.segment(3 * h, h).array();
    tr.cells.col(t) = f * c_prev.array() + i * g;
    tr.hidden.col(t) = og * tr.cells.col(t).array().tanh();
    h_prev = tr.hidden.col(t);
    c_prev = tr.cells.col(t);
  }
  return tr;
}

// Backpropagation through time for one direction; accumulates into grad.
void lstm_backward(const double* theta, const Offsets& o, Eigen::Index d, Eigen::Index h,
                   const Eigen::MatrixXd& xs, const LstmTrace& tr, const Eigen::MatrixXd& d_hidden,
                   double* grad) {
  const ConstMap u(theta + o.u, 4 * h, h);
  const Eigen::Index steps = xs.cols();
  Eigen::MatrixXd dz(4 * h, steps);
  Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(h);
  Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(h);
  Eigen::ArrayXd dc(h);
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    const auto z = tr.gates.col(t);
    const auto i = z.segment(0, h).array();
    const auto f = z.segment(h, h).array();
    const auto og = z.segment(2 * h, h).array();
    const auto g = z.segment(3 * h, h).array();
    const Eigen::ArrayXd tc = tr.cells.col(t).array().tanh();
    const Eigen::ArrayXd dh = d_hidden.col(t).array() + dh_next.array();
    dc = dh * og * (1.0 - tc.square()) + dc_next.array();
    const Eigen::ArrayXd c_prev =
        t > 0 ? Eigen::ArrayXd(tr.cells.col(t - 1).array()) : Eigen::ArrayXd::Zero(h);
    dz.col(t).segment(0, h) = (dc * g * i * (1.0 - i)).matrix();
    dz.col(t).segment(h, h) = (dc * c_prev * f * (1.0 - f)).matrix();
    dz.col(t).segment(2 * h, h) = (dh * tc * og * (1.0 - og)).matrix();
    dz.col(t).segment(3 * h, h) = (dc * i * (1.0 - g.square())).matrix();
    dh_next.noalias() = u.transpose() * dz.col(t);
    dc_next = (dc * f).matrix();
  }
  Map(grad + o.w, 4 * h, d).noalias() += dz * xs.transpose();
  if (steps > 1) {
    Map(grad + o.u, 4 * h, h).noalias() +=
        dz.rightCols(steps - 1) * tr.hidden.leftCols(steps - 1).transpose();
  }
  VecMap(grad + o.b, 4 * h) += dz.rowwise().sum();
}

struct BiLstmPass {
  Eigen::MatrixXd xs_fwd, xs_bwd;  // d x T in processing order
  LstmTrace fwd, bwd;
  Eigen::MatrixXd states;  // 2h x T, position order
  Eigen::MatrixXd logits;  // 3 x T
};

BiLstmPass bilstm_pass(const TaggerParams& p, const Eigen::MatrixXd& sequence) {
  const LstmLayout lay(p.input_dim, p.hidden);
  const Eigen::Index h = p.hidden;
  const Eigen::Index steps = sequence.rows();
  BiLstmPass pass;
  pass.xs_fwd = sequence.transpose();
  pass.xs_bwd = pass.xs_fwd.rowwise().reverse();
  pass.fwd = lstm_run(p.theta.data(), lay.dir[0], lay.d, h, pass.xs_fwd);
  pass.bwd = lstm_run(p.theta.data(), lay.dir[1], lay.d, h, pass.xs_bwd);
  pass.states.resize(2 * h, steps);
  pass.states.topRows(h) = pass.fwd.hidden;
  pass.states.bottomRows(h) = pass.bwd.hidden.rowwise().reverse();
  const ConstMap wo(p.theta.data() + lay.wo, 3, 2 * h);
  const ConstVecMap bo(p.theta.data() + lay.bo, 3);
  pass.logits = (wo * pass.states).colwise() + bo;
  return pass;
}

struct FnnPass {
  Eigen::MatrixXd xs;      // d x T
  Eigen::MatrixXd hidden;  // h x T, post-ReLU
  Eigen::MatrixXd logits;  // 3 x T
};

FnnPass fnn_pass(const TaggerParams& p, const Eigen::MatrixXd& sequence) {
  const FnnLayout lay(p.input_dim, p.hidden);
  FnnPass pass;
  pass.xs = sequence.transpose();
  const ConstMap w1(p.theta.data() + lay.w1, p.hidden, p.input_dim);
  const ConstVecMap b1(p.theta.data() + lay.b1, p.hidden);
  const ConstMap w2(p.theta.data() + lay.w2, 3, p.hidden);
  const ConstVecMap b2(p.theta.data() + lay.b2, 3);
  pass.hidden = ((w1 * pass.xs).colwise() + b1).cwiseMax(0.0);
  pass.logits = (w2 * pass.hidden).colwise() + b2;
  return pass;
}

void check_input(const TaggerParams& p, const Eigen::MatrixXd& sequence) {
  if (sequence.rows() == 0) throw DataError("cannot tag an empty sequence");
  if (sequence.cols() != p.input_dim) {
    throw DataError("sequence feature dim " + std::to_string(sequence.cols()) +
                    " does not match model input dim " + std::to_string(p.input_dim));
  }
}

}  // namespace

Eigen::Index TaggerParams::parameter_count(ModelKind kind, Eigen::Index input_dim,
                                           Eigen::Index hidden) {
  return kind == ModelKind::kBiLstm ? LstmLayout(input_dim, hidden).total
                                    : FnnLayout(input_dim, hidden).total;
}

TaggerParams init_params(ModelKind kind, Eigen::Index input_dim, Eigen::Index hidden,
                         std::uint64_t seed) {
  if (input_dim < 1 || hidden < 1) throw ConfigError("model dimensions must be positive");
  TaggerParams p;
  p.kind = kind;
  p.input_dim = input_dim;
  p.hidden = hidden;
  p.theta = Eigen::VectorXd::Zero(TaggerParams::parameter_count(kind, input_dim, hidden));
  Rng rng(seed);
  const auto fill = [&](Eigen::Index offset, Eigen::Index count, Eigen::Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index k = 0; k < count; ++k) p.theta(offset + k) = rng.uniform(-bound, bound);
  };
  if (kind == ModelKind::kBiLstm) {
    const LstmLayout lay(input_dim, hidden);
    for (const auto& o : lay.dir) {
      fill(o.w, 4 * hidden * input_dim, input_dim);
      fill(o.u, 4 * hidden * hidden, hidden);
      p.theta.segment(o.b + hidden, hidden).setOnes();
    }
    fill(lay.wo, 3 * 2 * hidden, 2 * hidden);
  } else {
    const FnnLayout lay(input_dim, hidden);
    fill(lay.w1, hidden * input_dim, input_dim);
    fill(lay.w2, 3 * hidden, hidden);
  }
  return p;
}

Eigen::MatrixXd forward(const TaggerParams& params, const Eigen::MatrixXd& sequence) {
  check_input(params, sequence);
  if (params.kind == ModelKind::kBiLstm) return bilstm_pass(params, sequence).logits.transpose();
  return fnn_pass(params, sequence).logits.transpose();
}

double sequence_loss(const TaggerParams& params, const Eigen::MatrixXd& sequence,
                     std::span<const BioTag> targets, const FocalLossConfig& focal,
                     Eigen::VectorXd* grad) {
  check_input(params, sequence);
  const Eigen::Index steps = sequence.rows();
  if (static_cast<std::size_t>(steps) != targets.size()) {
    throw DataError("target count does not match sequence length");
  }

  BiLstmPass lstm;
  FnnPass fnn;
  const Eigen::MatrixXd* logits = nullptr;
  if (params.kind == ModelKind::kBiLstm) {
    lstm = bilstm_pass(params, sequence);
    logits = &lstm.logits;
  } else {
    fnn = fnn_pass(params, sequence);
    logits = &fnn.logits;
  }

  double loss = 0.0;
  Eigen::MatrixXd d_logits(3, steps);
  const double scale = 1.0 / static_cast<double>(steps);
  for (Eigen::Index t = 0; t < steps; ++t) {
    Eigen::Vector3d target = Eigen::Vector3d::Zero();
    target(static_cast<int>(targets[static_cast<std::size_t>(t)])) = 1.0;
    const FocalLoss fl = focal_loss(logits->col(t), target, focal);
    loss += fl.loss * scale;
    d_logits.col(t) = fl.grad * scale;
  }
  if (grad == nullptr) return loss;

  grad->setZero(params.theta.size());
  const double* theta = params.theta.data();
  double* g = grad->data();
  const Eigen::Index h = params.hidden;
  if (params.kind == ModelKind::kBiLstm) {
    const LstmLayout lay(params.input_dim, h);
    Map(g + lay.wo, 3, 2 * h).noalias() = d_logits * lstm.states.transpose();
    VecMap(g + lay.bo, 3) = d_logits.rowwise().sum();
    const Eigen::MatrixXd d_states = ConstMap(theta + lay.wo, 3, 2 * h).transpose() * d_logits;
    lstm_backward(theta, lay.dir[0], lay.d, h, lstm.xs_fwd, lstm.fwd, d_states.topRows(h), g);
    lstm_backward(theta, lay.dir[1], lay.d, h, lstm.xs_bwd, lstm.bwd,
                  d_states.bottomRows(h).rowwise().reverse(), g);
  } else {
    const FnnLayout lay(params.input_dim, h);
    Map(g + lay.w2, 3, h).noalias() = d_logits * fnn.hidden.transpose();
    VecMap(g + lay.b2, 3) = d_logits.rowwise().sum();
    Eigen::MatrixXd d_hidden = ConstMap(theta + lay.w2, 3, h).transpose() * d_logits;
    d_hidden = (fnn.hidden.array() > 0.0).select(d_hidden, 0.0);
    Map(g + lay.w1, h, params.input_dim).noalias() = d_hidden * fnn.xs.transpose();
    VecMap(g + lay.b1, h) = d_hidden.rowwise().sum();
  }
  return loss;
}

void save_checkpoint(const TaggerParams& params, const std::filesystem::path& path) {
  io::BinaryWriter out(path);
  out.magic("SEQ1");
  out.u8(static_cast<std::uint8_t>(params.kind));
  out.u64(static_cast<std::uint64_t>(params.input_dim));
  out.u64(static_cast<std::uint64_t>(params.hidden));
  out.u64(static_cast<std::uint64_t>(params.theta.size()));
  for (Eigen::Index i = 0; i < params.theta.size(); ++i) out.f64(params.theta(i));
  out.close();
}

TaggerParams load_checkpoint(const std::filesystem::path& path) {
  io::BinaryReader in(path);
  in.expect_magic("SEQ1");
  const std::uint8_t kind = in.u8();
  if (kind > 1) throw DataError("unknown model kind byte in " + path.string());
  TaggerParams p;
  p.kind = static_cast<ModelKind>(kind);
  p.input_dim = static_cast<Eigen::Index>(in.u64());
  p.hidden = static_cast<Eigen::Index>(in.u64());
  const auto count = static_cast<Eigen::Index>(in.u64());
  if (count != TaggerParams::parameter_count(p.kind, p.input_dim, p.hidden)) {
    throw DataError("parameter count does not match the shape header in " + path.string());
  }
  p.theta.resize(count);
  for (Eigen::Index i = 0; i < count; ++i) p.theta(i) = in.f64();
  if (!in.at_end()) throw DataError("trailing bytes in " + path.string());
  if (!p.theta.allFinite()) throw NumericError("non-finite parameters in " + path.string());
  return p;
}

std::vector<LabeledSequence> prepare_sequences(const Corpus& corpus, const EmbeddingSet& embeddings,
                                               bool require_tags) {
  std::vector<LabeledSequence> out;
  out.reserve(corpus.documents.size());
  for (const auto& doc : corpus.documents) {
    LabeledSequence seq;
    seq.doc_id = doc.doc_id;
    seq.features.resize(static_cast<Eigen::Index>(doc.sentences.size()), embeddings.dim);
    for (std::size_t i = 0; i < doc.sentences.size(); ++i) {
      seq.features.row(static_cast<Eigen::Index>(i)) = embeddings.row(sentence_id(doc, i));
    }
    if (doc.tagged()) {
      for (const auto& s : doc.sentences) seq.tags.push_back(*s.bio);
    } else if (require_tags) {
      throw DataError("document '" + doc.doc_id + "' has no BIO tags");
    }
    out.push_back(std::move(seq));
  }
  return out;
}

void Adagrad::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
  if (accumulator.size() != theta.size()) accumulator = Eigen::VectorXd::Zero(theta.size());
  accumulator.array() += grad.array().square();
  theta.array() -= lr * grad.array() / (accumulator.array().sqrt() + epsilon);
}

double pooled_loss(const TaggerParams& params, std::span<const LabeledSequence> data,
                   const FocalLossConfig& focal) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& seq : data) {
    total += sequence_loss(params, seq.features, seq.tags, focal, nullptr) *
             static_cast<double>(seq.tags.size());
    count += seq.tags.size();
  }
  return count > 0 ? total / static_cast<double>(count) : 0.0;
}

TrainResult train(std::span<const LabeledSequence> train_set, std::span<const LabeledSequence> val_set,
                  const TrainConfig& config, const std::function<void(const EpochLoss&)>& on_epoch) {
  if (config.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(config.lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (train_set.empty()) throw DataError("training set is empty");
  if (val_set.empty()) throw DataError("validation set is empty");
  for (const auto& seq : train_set) {
    if (seq.tags.size() != static_cast<std::size_t>(seq.features.rows())) {
      throw DataError("training document '" + seq.doc_id + "' lacks tags");
    }
  }

  const Eigen::Index dim = train_set.front().features.cols();
  TaggerParams params =
      init_params(config.kind, dim, config.hidden, derive_seed(config.seed, "seqlabel.init"));
  Adagrad opt{config.lr, config.epsilon, {}};
  Rng shuffler(derive_seed(config.seed, "seqlabel.shuffle"));

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Eigen::VectorXd grad;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffler.shuffle(order);
    double train_total = 0.0;
    std::size_t train_count = 0;
    for (std::size_t idx : order) {
      const auto& seq = train_set[idx];
      const double loss = sequence_loss(params, seq.features, seq.tags, config.focal, &grad);
      if (!std::isfinite(loss) || !grad.allFinite()) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", document '" +
                           seq.doc_id + "'");
      }
      if (config.clip_norm > 0.0) {
        const double norm = grad.norm();
        if (norm > config.clip_norm) grad *= config.clip_norm / norm;
      }
      opt.step(params.theta, grad);
      train_total += loss * static_cast<double>(seq.tags.size());
      train_count += seq.tags.size();
    }
    EpochLoss record{epoch, train_total / static_cast<double>(train_count),
                     pooled_loss(params, val_set, config.focal)};
    if (!std::isfinite(record.val_loss)) {
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    result.trace.push_back(record);
    if (record.val_loss < result.best_val_loss) {
      result.best_val_loss = record.val_loss;
      result.best_epoch = epoch;
      result.params = params;
    }
    if (on_epoch) on_epoch(record);
  }
  return result;
}

std::string loss_trace_csv(std::span<const EpochLoss> trace) {
  std::string out = "epoch,train_loss,val_loss\n";
  for (const auto& e : trace) {
    out += std::to_string(e.epoch) + "," + io::format_double(e.train_loss) + "," +
           io::format_double(e.val_loss) + "\n";
  }
  return out;
}

std::vector<BioTag> predict_tags(const TaggerParams& params, const Eigen::MatrixXd& sequence) {
  const Eigen::MatrixXd logits = forward(params, sequence);
  std::vector<BioTag> tags;
  tags.reserve(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    int best = 0;
    double best_score = sigmoid(logits(t, 0));
    for (int c = 1; c < kNumTags; ++c) {
      const double score = sigmoid(logits(t, c));
      if (score > best_score) {
        best = c;
        best_score = score;
      }
    }
    tags.push_back(static_cast<BioTag>(best));
  }
  return tags;
}

std::vector<BioTag> repair_tags(std::span<const BioTag> tags) {
  std::vector<BioTag> out(tags.begin(), tags.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] == BioTag::I && (i == 0 || out[i - 1] == BioTag::O)) out[i] = BioTag::B;
  }
  return out;
}

std::vector<ArgumentSpan> segment_arguments(std::span<const BioTag> tags) {
  std::vector<ArgumentSpan> spans;
  bool open = false;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    switch (tags[i]) {
      case BioTag::B:
        spans.push_back({i, i});
        open = true;
        break;
      case BioTag::I:
        if (open) {
          spans.back().end = i;
        } else {
          spans.push_back({i, i});
          open = true;
        }
        break;
      case BioTag::O:
        open = false;
        break;
    }
  }
  return spans;
}

BioTag majority_baseline(std::span<const LabeledSequence> train_set) {
  if (train_set.empty()) throw DataError("majority baseline needs training data");
  std::array<long long, kNumTags> counts{};
  for (const auto& seq : train_set) {
    for (BioTag t : seq.tags) ++counts[static_cast<std::size_t>(t)];
  }
  int best = 0;
  for (int c = 1; c < kNumTags; ++c) {
    if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)]) best = c;
  }
  return static_cast<BioTag>(best);
}

}  // namespace argsearch
