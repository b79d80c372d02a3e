#ifndef ZOL2L_TASKS_HPP
#define ZOL2L_TASKS_HPP

// Optimizee families: seeded quadratics, stochastic binary classification
// with a sigmoid least-squares loss, and black-box attacks on a small 8x8
// digit classifier.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zol2l/common.hpp"
#include "zol2l/optimizee.hpp"

namespace zol2l {

// ---------------------------------------------------------------- quadratic

/// f(theta) = 1/2 (theta - center)^T diag(curvature) (theta - center).
class QuadraticTask final : public Optimizee {
 public:
  QuadraticTask(Vector center, Vector curvature);

  Index dimension() const override { return center_.size(); }
  double value(const Vector& theta, std::uint64_t batch_seed) const override;
  bool has_gradient() const override { return true; }
  Vector gradient(const Vector& theta, std::uint64_t batch_seed) const override;

  const Vector& center() const { return center_; }
  const Vector& curvature() const { return curvature_; }

 private:
  Vector center_;
  Vector curvature_;
};

/// Center ~ N(0, I), curvature ~ U[0.5, 2]; starts at the origin.
std::unique_ptr<QuadraticTask> quadratic_task(Index d, std::uint64_t seed);

// ---------------------------------------------------- binary classification

/// f(theta) = mean_i (y_i - sigmoid(theta^T x_i))^2 over a minibatch of
/// `batch` rows drawn without replacement by the batch seed.
class BinaryClassificationTask final : public Optimizee {
 public:
  BinaryClassificationTask(Vector truth, Matrix samples, Vector labels, Index batch);

  Index dimension() const override { return truth_.size(); }
  double value(const Vector& theta, std::uint64_t batch_seed) const override;
  bool has_gradient() const override { return true; }
  Vector gradient(const Vector& theta, std::uint64_t batch_seed) const override;
  /// theta_0 ~ 0.1 N(0, I) from the trial seed.
  Vector initial_point(std::uint64_t trial_seed) const override;
  bool stochastic() const override { return batch_ < samples_.rows(); }

  /// Row indices of the minibatch selected by `batch_seed`.
  std::vector<Index> minibatch(std::uint64_t batch_seed) const;

  const Vector& truth() const { return truth_; }
  const Matrix& samples() const { return samples_; }
  const Vector& labels() const { return labels_; }
  Index batch() const { return batch_; }

 private:
  Vector truth_;
  Matrix samples_;  // n x d
  Vector labels_;
  Index batch_;
};

/// theta* ~ N(0, I_d), rows x_i ~ N(0, I_d), y_i = [theta*^T x_i > 0].
std::unique_ptr<BinaryClassificationTask> generate_binary_task(Index d, Index n, std::uint64_t seed,
                                                               Index batch = 0);

// ------------------------------------------------------------ toy classifier

inline constexpr Index kImageSide = 8;
inline constexpr Index kImagePixels = kImageSide * kImageSide;
inline constexpr Index kClasses = 10;
inline constexpr Index kClassifierHidden = 32;
inline constexpr const char* kMlpSchema = "zo-l2l-mlp/1";

/// 64 -> 32 (tanh) -> 10 (log-softmax) perceptron.
struct ToyClassifier {
  Matrix w1;  // 32 x 64
  Vector b1;
  Matrix w2;  // 10 x 32
  Vector b2;
  std::uint64_t dataset_seed = 0;

  /// Log-probabilities of the 10 classes.
  Vector scores(const Vector& x) const;
  Index predict(const Vector& x) const;
};

struct DigitSet {
  Matrix images;                // n x 64, row-major 8x8 pixels in [0, 1]
  std::vector<Index> labels;
};

/// Noisy, shifted 8x8 renderings of ten fixed digit glyphs. Per sample:
/// class uniform, shift in {-1, 0, 1}^2, stroke level U[0.7, 0.9],
/// background U[0.1, 0.25], pixel noise N(0, 0.08^2), clamp to [0.02, 0.98].
DigitSet generate_digits(Index n, std::uint64_t seed);

struct ClassifierTraining {
  ToyClassifier model;
  double train_accuracy = 0.0;
  double heldout_accuracy = 0.0;
};

inline constexpr Index kDigitTrainCount = 1000;
inline constexpr Index kDigitHeldoutCount = 500;

/// Full-batch gradient descent on cross-entropy. Training digits use
/// derive_seed(seed, 0), held-out digits derive_seed(seed, 1).
ClassifierTraining train_toy_classifier(std::uint64_t seed);
double classifier_accuracy(const ToyClassifier& model, const DigitSet& set);
DigitSet heldout_digits(const ToyClassifier& model);

nlohmann::json classifier_to_json(const ToyClassifier& model);
ToyClassifier classifier_from_json(const nlohmann::json& doc);
ToyClassifier load_classifier(const std::string& path);
/// The committed asset (assets/toy_mlp.json).
const ToyClassifier& bundled_classifier();
std::string bundled_classifier_path();

// ------------------------------------------------------------------- attack

inline constexpr double kAttackDistortionWeight = 0.1;

/// Corner-aligned bilinear interpolation of an h x w grid onto H x W.
Matrix upsample_bilinear(const Matrix& low, Index rows, Index cols);

/// Untargeted black-box attack. The optimization variable is a
/// `grid_rows x grid_cols` perturbation v of the tanh pre-image:
///   w = w0 + upsample(v),  x = (tanh(w) + 1) / 2,
///   f = max(F_t0(x) - max_{j != t0} F_j(x), 0) + c |x - x0|_1,
/// with w0 = arctanh(2 x0 - 1) (argument clipped to |.| <= 0.9998). At full
/// resolution no interpolation is applied and v is a plain shift of w.
class AttackTask final : public Optimizee {
 public:
  AttackTask(const ToyClassifier& target, Vector x0, Index label, double c = kAttackDistortionWeight,
             Index grid_rows = kImageSide, Index grid_cols = kImageSide);

  Index dimension() const override { return grid_rows_ * grid_cols_; }
  double value(const Vector& v, std::uint64_t batch_seed) const override;

  Vector to_w(const Vector& v) const;
  static Vector to_image(const Vector& w);
  double attack_loss(const Vector& w) const;
  bool attack_success(const Vector& w) const;
  std::optional<bool> success(const Vector& v) const;

  const Vector& original() const { return x0_; }
  const Vector& w0() const { return w0_; }
  Index label() const { return label_; }
  double distortion_weight() const { return c_; }

 private:
  const ToyClassifier* target_;
  Vector x0_;
  Vector w0_;
  Index label_;
  double c_;
  Index grid_rows_, grid_cols_;
};

// ---------------------------------------------------------------- families

enum class Split { kTrain = 0, kValidation = 1, kTest = 2 };

/// Seeded source of optimizee instances with disjoint train / validation /
/// test streams.
class TaskFamily {
 public:
  virtual ~TaskFamily() = default;
  virtual std::unique_ptr<Optimizee> make(Split split, std::uint64_t index) const = 0;
  virtual Index dimension() const = 0;
  virtual std::string name() const = 0;
  virtual bool has_gradient() const = 0;
  virtual bool is_attack() const { return false; }
};

class QuadraticFamily final : public TaskFamily {
 public:
  QuadraticFamily(Index d, std::uint64_t seed) : d_(d), seed_(seed) {}
  std::unique_ptr<Optimizee> make(Split split, std::uint64_t index) const override;
  Index dimension() const override { return d_; }
  std::string name() const override { return "quadratic"; }
  bool has_gradient() const override { return true; }

 private:
  Index d_;
  std::uint64_t seed_;
};

class BinaryFamily final : public TaskFamily {
 public:
  BinaryFamily(Index d, Index n, Index batch, std::uint64_t seed)
      : d_(d), n_(n), batch_(batch), seed_(seed) {}
  std::unique_ptr<Optimizee> make(Split split, std::uint64_t index) const override;
  Index dimension() const override { return d_; }
  std::string name() const override { return "binary"; }
  bool has_gradient() const override { return true; }

 private:
  Index d_, n_, batch_;
  std::uint64_t seed_;
};

/// Attack instances: correctly classified digits drawn from split-specific
/// generator streams.
class AttackFamily final : public TaskFamily {
 public:
  AttackFamily(const ToyClassifier& target, std::uint64_t seed, double c = kAttackDistortionWeight,
               Index grid_rows = kImageSide, Index grid_cols = kImageSide);
  std::unique_ptr<Optimizee> make(Split split, std::uint64_t index) const override;
  Index dimension() const override { return grid_rows_ * grid_cols_; }
  std::string name() const override { return "attack"; }
  bool has_gradient() const override { return false; }
  bool is_attack() const override { return true; }

  /// The (image, label) behind an instance.
  std::pair<Vector, Index> instance(Split split, std::uint64_t index) const;

 private:
  const ToyClassifier* target_;
  std::uint64_t seed_;
  double c_;
  Index grid_rows_, grid_cols_;
};

/// Downcast helper for success tracking.
std::optional<bool> attack_success_of(const Optimizee& f, const Vector& theta);

}  // namespace zol2l

#endif  // ZOL2L_TASKS_HPP
