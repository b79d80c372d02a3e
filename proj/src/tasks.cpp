#include "zol2l/tasks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>

#include "zol2l/lstm_io.hpp"
#include "zol2l/rng.hpp"

#ifndef ZOL2L_ASSET_DIR
#define ZOL2L_ASSET_DIR "assets"
#endif

namespace zol2l {

using nlohmann::json;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------- quadratic

QuadraticTask::QuadraticTask(Vector center, Vector curvature)
    : center_(std::move(center)), curvature_(std::move(curvature)) {
  require(center_.size() == curvature_.size(), ErrorKind::kShapeMismatch,
          "QuadraticTask: center and curvature differ in size");
  require((curvature_.array() > 0.0).all(), ErrorKind::kInvalidArgument,
          "QuadraticTask: curvature must be positive");
}

double QuadraticTask::value(const Vector& theta, std::uint64_t) const {
  const Vector r = theta - center_;
  return 0.5 * r.dot(curvature_.cwiseProduct(r));
}

Vector QuadraticTask::gradient(const Vector& theta, std::uint64_t) const {
  return curvature_.cwiseProduct(theta - center_);
}

std::unique_ptr<QuadraticTask> quadratic_task(Index d, std::uint64_t seed) {
  require(d >= 1, ErrorKind::kInvalidArgument, "quadratic_task: d must be >= 1");
  Rng rng(seed);
  Vector center = rng.normal_vector(d);
  Vector curvature(d);
  for (Index i = 0; i < d; ++i) curvature[i] = rng.uniform(0.5, 2.0);
  return std::make_unique<QuadraticTask>(std::move(center), std::move(curvature));
}

// ---------------------------------------------------- binary classification

BinaryClassificationTask::BinaryClassificationTask(Vector truth, Matrix samples, Vector labels,
                                                   Index batch)
    : truth_(std::move(truth)), samples_(std::move(samples)), labels_(std::move(labels)),
      batch_(batch <= 0 ? samples_.rows() : std::min(batch, samples_.rows())) {
  require(samples_.cols() == truth_.size() && labels_.size() == samples_.rows(),
          ErrorKind::kShapeMismatch, "BinaryClassificationTask: inconsistent shapes");
}

std::vector<Index> BinaryClassificationTask::minibatch(std::uint64_t batch_seed) const {
  const Index n = samples_.rows();
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  if (batch_seed == kFullBatch || batch_ >= n) return idx;
  // Partial Fisher-Yates: the first `batch_` slots form the sample.
  Rng rng(batch_seed);
  for (Index i = 0; i < batch_; ++i) {
    const Index j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(batch_));
  return idx;
}

double BinaryClassificationTask::value(const Vector& theta, std::uint64_t batch_seed) const {
  const auto rows = minibatch(batch_seed);
  double total = 0.0;
  for (Index r : rows) {
    const double s = 1.0 / (1.0 + std::exp(-samples_.row(r).dot(theta)));
    const double e = labels_[r] - s;
    total += e * e;
  }
  return total / static_cast<double>(rows.size());
}

Vector BinaryClassificationTask::gradient(const Vector& theta, std::uint64_t batch_seed) const {
  const auto rows = minibatch(batch_seed);
  Vector g = Vector::Zero(theta.size());
  for (Index r : rows) {
    const double s = 1.0 / (1.0 + std::exp(-samples_.row(r).dot(theta)));
    g += (2.0 * (s - labels_[r]) * s * (1.0 - s)) * samples_.row(r).transpose();
  }
  return g / static_cast<double>(rows.size());
}

Vector BinaryClassificationTask::initial_point(std::uint64_t trial_seed) const {
  Rng rng(trial_seed);
  return 0.1 * rng.normal_vector(dimension());
}

std::unique_ptr<BinaryClassificationTask> generate_binary_task(Index d, Index n, std::uint64_t seed,
                                                               Index batch) {
  require(d >= 1 && n >= 1, ErrorKind::kInvalidArgument, "generate_binary_task: need d, n >= 1");
  Rng rng(seed);
  Vector truth = rng.normal_vector(d);
  Matrix samples(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) samples(i, j) = rng.normal();
  Vector labels = (samples * truth).unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
  return std::make_unique<BinaryClassificationTask>(std::move(truth), std::move(samples),
                                                    std::move(labels), batch);
}

// ------------------------------------------------------------ toy classifier

namespace {

// clang-format off
constexpr std::array<const char*, 10> kGlyphs = {
  "..####.."
  ".#....#."
  ".#....#."
  ".#....#."
  ".#....#."
  ".#....#."
  "..####.."
  "........",

  "...##..."
  "..###..."
  "...##..."
  "...##..."
  "...##..."
  "...##..."
  "..####.."
  "........",

  "..####.."
  ".#....#."
  "......#."
  ".....#.."
  "...##..."
  "..#....."
  ".######."
  "........",

  ".#####.."
  "......#."
  "......#."
  "..####.."
  "......#."
  "......#."
  ".#####.."
  "........",

  ".....#.."
  "....##.."
  "...#.#.."
  "..#..#.."
  ".######."
  ".....#.."
  ".....#.."
  "........",

  ".######."
  ".#......"
  ".#####.."
  "......#."
  "......#."
  ".#....#."
  "..####.."
  "........",

  "...###.."
  "..#....."
  ".#......"
  ".#####.."
  ".#....#."
  ".#....#."
  "..####.."
  "........",

  ".######."
  "......#."
  ".....#.."
  "....#..."
  "...#...."
  "...#...."
  "...#...."
  "........",

  "..####.."
  ".#....#."
  ".#....#."
  "..####.."
  ".#....#."
  ".#....#."
  "..####.."
  "........",

  "..####.."
  ".#....#."
  ".#....#."
  "..#####."
  "......#."
  ".....#.."
  "..###..."
  "........",
};
// clang-format on

std::pair<Vector, Index> generate_digit(std::uint64_t seed) {
  Rng rng(seed);
  const Index label = static_cast<Index>(rng.below(kClasses));
  const int dr = static_cast<int>(rng.below(3)) - 1;
  const int dc = static_cast<int>(rng.below(3)) - 1;
  const double stroke = rng.uniform(0.7, 0.9);
  const double background = rng.uniform(0.1, 0.25);
  Vector x(kImagePixels);
  const char* glyph = kGlyphs[static_cast<std::size_t>(label)];
  for (Index r = 0; r < kImageSide; ++r) {
    for (Index c = 0; c < kImageSide; ++c) {
      const Index sr = r - dr, sc = c - dc;
      const bool on = sr >= 0 && sr < kImageSide && sc >= 0 && sc < kImageSide &&
                      glyph[sr * kImageSide + sc] == '#';
      const double v = (on ? stroke : background) + 0.08 * rng.normal();
      x[r * kImageSide + c] = std::clamp(v, 0.02, 0.98);
    }
  }
  return {std::move(x), label};
}

Vector log_softmax(const Vector& z) {
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return z.array() - lse;
}

}  // namespace

DigitSet generate_digits(Index n, std::uint64_t seed) {
  DigitSet set;
  set.images.resize(n, kImagePixels);
  set.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto [x, label] = generate_digit(derive_seed(seed, static_cast<std::uint64_t>(i)));
    set.images.row(i) = x.transpose();
    set.labels[static_cast<std::size_t>(i)] = label;
  }
  return set;
}

Vector ToyClassifier::scores(const Vector& x) const {
  require(x.size() == kImagePixels, ErrorKind::kShapeMismatch, "ToyClassifier: input must have 64 pixels");
  const Vector hidden = (w1 * x + b1).array().tanh();
  return log_softmax(w2 * hidden + b2);
}

Index ToyClassifier::predict(const Vector& x) const {
  Index best = 0;
  scores(x).maxCoeff(&best);
  return best;
}

double classifier_accuracy(const ToyClassifier& model, const DigitSet& set) {
  Index correct = 0;
  for (Index i = 0; i < set.images.rows(); ++i)
    if (model.predict(set.images.row(i).transpose()) == set.labels[static_cast<std::size_t>(i)]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(set.images.rows());
}

DigitSet heldout_digits(const ToyClassifier& model) {
  return generate_digits(kDigitHeldoutCount, derive_seed(model.dataset_seed, 1));
}

ClassifierTraining train_toy_classifier(std::uint64_t seed) {
  constexpr int kEpochs = 1500;
  constexpr double kLearningRate = 0.5;
  const DigitSet train = generate_digits(kDigitTrainCount, derive_seed(seed, 0));
  const DigitSet heldout = generate_digits(kDigitHeldoutCount, derive_seed(seed, 1));

  Rng rng(derive_seed(seed, 2));
  ToyClassifier m;
  m.dataset_seed = seed;
  m.w1 = rng.normal_matrix(kClassifierHidden, kImagePixels) / std::sqrt(double(kImagePixels));
  m.b1 = Vector::Zero(kClassifierHidden);
  m.w2 = rng.normal_matrix(kClasses, kClassifierHidden) / std::sqrt(double(kClassifierHidden));
  m.b2 = Vector::Zero(kClasses);

  const Index n = train.images.rows();
  Matrix onehot = Matrix::Zero(kClasses, n);
  for (Index i = 0; i < n; ++i) onehot(train.labels[static_cast<std::size_t>(i)], i) = 1.0;
  const Matrix x = train.images.transpose();  // 64 x n

  for (int epoch = 0; epoch < kEpochs; ++epoch) {
    Matrix pre = m.w1 * x;
    pre.colwise() += m.b1;
    const Matrix hidden = pre.array().tanh();
    Matrix logits = m.w2 * hidden;
    logits.colwise() += m.b2;
    Matrix probs(kClasses, n);
    for (Index i = 0; i < n; ++i) probs.col(i) = log_softmax(logits.col(i)).array().exp();
    const Matrix d_logits = (probs - onehot) / static_cast<double>(n);
    const Matrix d_hidden = (m.w2.transpose() * d_logits).cwiseProduct(
        (1.0 - hidden.array().square()).matrix());
    m.w2 -= kLearningRate * d_logits * hidden.transpose();
    m.b2 -= kLearningRate * d_logits.rowwise().sum();
    m.w1 -= kLearningRate * d_hidden * x.transpose();
    m.b1 -= kLearningRate * d_hidden.rowwise().sum();
  }
  return {m, classifier_accuracy(m, train), classifier_accuracy(m, heldout)};
}

json classifier_to_json(const ToyClassifier& m) {
  return {{"schema", kMlpSchema},
          {"input_dim", kImagePixels},
          {"hidden_dim", kClassifierHidden},
          {"output_dim", kClasses},
          {"activation", "tanh"},
          {"output", "log_softmax"},
          {"dataset",
           {{"generator", "glyph8x8"},
            {"seed", m.dataset_seed},
            {"train", kDigitTrainCount},
            {"heldout", kDigitHeldoutCount}}},
          {"tensors",
           {{"w1", tensor_to_json(m.w1)},
            {"b1", tensor_to_json(m.b1)},
            {"w2", tensor_to_json(m.w2)},
            {"b2", tensor_to_json(m.b2)}}}};
}

ToyClassifier classifier_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("schema") || doc["schema"] != kMlpSchema)
    throw Error(ErrorKind::kMalformedDocument, "classifier document: schema is not zo-l2l-mlp/1");
  if (!doc.contains("tensors") || !doc["tensors"].is_object())
    throw Error(ErrorKind::kMalformedDocument, "classifier document: missing tensors");
  const auto& t = doc["tensors"];
  auto get = [&](const char* name) -> const json& {
    if (!t.contains(name))
      throw Error(ErrorKind::kMalformedDocument, std::string("classifier document: missing ") + name);
    return t[name];
  };
  ToyClassifier m;
  m.w1 = tensor_from_json(get("w1"), kClassifierHidden, kImagePixels, false, "w1");
  m.b1 = tensor_from_json(get("b1"), kClassifierHidden, 1, true, "b1");
  m.w2 = tensor_from_json(get("w2"), kClasses, kClassifierHidden, false, "w2");
  m.b2 = tensor_from_json(get("b2"), kClasses, 1, true, "b2");
  if (doc.contains("dataset") && doc["dataset"].contains("seed"))
    m.dataset_seed = doc["dataset"]["seed"].get<std::uint64_t>();
  return m;
}

ToyClassifier load_classifier(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kUnavailable, "cannot open classifier asset " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  json doc;
  try {
    doc = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kMalformedDocument, std::string("classifier asset: ") + e.what());
  }
  return classifier_from_json(doc);
}

std::string bundled_classifier_path() { return std::string(ZOL2L_ASSET_DIR) + "/toy_mlp.json"; }

const ToyClassifier& bundled_classifier() {
  static const ToyClassifier model = load_classifier(bundled_classifier_path());
  return model;
}

// ------------------------------------------------------------------- attack

Matrix upsample_bilinear(const Matrix& low, Index rows, Index cols) {
  const Index h = low.rows(), w = low.cols();
  require(h >= 1 && w >= 1 && h <= rows && w <= cols, ErrorKind::kInvalidArgument,
          "upsample_bilinear: need 1 <= h <= H and 1 <= w <= W");
  Matrix out(rows, cols);
  auto locate = [](Index i, Index from, Index to, Index& lo, Index& hi, double& frac) {
    const double pos = to > 1 ? static_cast<double>(i * (from - 1)) / static_cast<double>(to - 1) : 0.0;
    lo = std::min(static_cast<Index>(std::floor(pos)), from - 1);
    hi = std::min(lo + 1, from - 1);
    frac = pos - static_cast<double>(lo);
  };
  for (Index r = 0; r < rows; ++r) {
    Index r0, r1;
    double fr;
    locate(r, h, rows, r0, r1, fr);
    for (Index c = 0; c < cols; ++c) {
      Index c0, c1;
      double fc;
      locate(c, w, cols, c0, c1, fc);
      out(r, c) = (1.0 - fr) * ((1.0 - fc) * low(r0, c0) + fc * low(r0, c1)) +
                  fr * ((1.0 - fc) * low(r1, c0) + fc * low(r1, c1));
    }
  }
  return out;
}

AttackTask::AttackTask(const ToyClassifier& target, Vector x0, Index label, double c,
                       Index grid_rows, Index grid_cols)
    : target_(&target), x0_(std::move(x0)), label_(label), c_(c), grid_rows_(grid_rows),
      grid_cols_(grid_cols) {
  require(x0_.size() == kImagePixels, ErrorKind::kShapeMismatch, "AttackTask: image must have 64 pixels");
  require(grid_rows_ >= 1 && grid_cols_ >= 1 && grid_rows_ <= kImageSide && grid_cols_ <= kImageSide,
          ErrorKind::kInvalidArgument, "AttackTask: perturbation grid must fit in 8x8");
  require(target.predict(x0_) == label_, ErrorKind::kInvalidArgument,
          "AttackTask: original image must be correctly classified");
  w0_ = (2.0 * x0_.array() - 1.0).cwiseMax(-0.9998).cwiseMin(0.9998).atanh();
}

Vector AttackTask::to_w(const Vector& v) const {
  require(v.size() == dimension(), ErrorKind::kShapeMismatch, "AttackTask: dimension mismatch");
  if (grid_rows_ == kImageSide && grid_cols_ == kImageSide) return w0_ + v;
  const RowMajorMatrix low = Eigen::Map<const RowMajorMatrix>(v.data(), grid_rows_, grid_cols_);
  const RowMajorMatrix full = upsample_bilinear(low, kImageSide, kImageSide);
  return w0_ + Eigen::Map<const Vector>(full.data(), kImagePixels);
}

Vector AttackTask::to_image(const Vector& w) { return (w.array().tanh() + 1.0) / 2.0; }

double AttackTask::attack_loss(const Vector& w) const {
  const Vector x = to_image(w);
  const Vector s = target_->scores(x);
  double other = -std::numeric_limits<double>::infinity();
  for (Index j = 0; j < kClasses; ++j)
    if (j != label_) other = std::max(other, s[j]);
  return std::max(s[label_] - other, 0.0) + c_ * (x - x0_).lpNorm<1>();
}

bool AttackTask::attack_success(const Vector& w) const {
  return target_->predict(to_image(w)) != label_;
}

double AttackTask::value(const Vector& v, std::uint64_t) const { return attack_loss(to_w(v)); }

std::optional<bool> AttackTask::success(const Vector& v) const { return attack_success(to_w(v)); }

std::optional<bool> attack_success_of(const Optimizee& f, const Vector& theta) {
  if (const auto* a = dynamic_cast<const AttackTask*>(&f)) return a->success(theta);
  return std::nullopt;
}

// ---------------------------------------------------------------- families

namespace {

std::uint64_t split_seed(std::uint64_t seed, Split split) {
  return derive_seed(seed, 0x5eed0000ULL + static_cast<std::uint64_t>(split));
}

}  // namespace

std::unique_ptr<Optimizee> QuadraticFamily::make(Split split, std::uint64_t index) const {
  return quadratic_task(d_, derive_seed(split_seed(seed_, split), index));
}

std::unique_ptr<Optimizee> BinaryFamily::make(Split split, std::uint64_t index) const {
  return generate_binary_task(d_, n_, derive_seed(split_seed(seed_, split), index), batch_);
}

AttackFamily::AttackFamily(const ToyClassifier& target, std::uint64_t seed, double c,
                           Index grid_rows, Index grid_cols)
    : target_(&target), seed_(seed), c_(c), grid_rows_(grid_rows), grid_cols_(grid_cols) {}

std::pair<Vector, Index> AttackFamily::instance(Split split, std::uint64_t index) const {
  const std::uint64_t base = split_seed(seed_, split);
  std::uint64_t accepted = 0;
  for (std::uint64_t j = 0;; ++j) {
    auto [x, label] = generate_digit(derive_seed(base, j));
    if (target_->predict(x) != label) continue;
    if (accepted++ == index) return {std::move(x), label};
  }
}

std::unique_ptr<Optimizee> AttackFamily::make(Split split, std::uint64_t index) const {
  auto [x, label] = instance(split, index);
  return std::make_unique<AttackTask>(*target_, std::move(x), label, c_, grid_rows_, grid_cols_);
}

}  // namespace zol2l
